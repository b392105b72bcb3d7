//! Self-describing `key=value` run records.

use std::fmt::Display;

use crate::error::{Error, Result};

/// Ordered `key=value` pairs; setting an existing key replaces it in place.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentLog {
    entries: Vec<(String, String)>,
}

impl ExperimentLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut log = ExperimentLog::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad log line {line:?}")))?;
            log.set(k.trim(), v.trim());
        }
        Ok(log)
    }
}
