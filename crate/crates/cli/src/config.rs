//! `--config` files and the per-run argument record.
//!
//! A config file holds `key=value` lines whose keys are long flag names of
//! the chosen subcommand. Flags given on the command line win. Keys starting
//! with `meta.` and the `command` key are informational, so an experiment
//! log can be fed back as a config to repeat a run.

use std::fmt;
use std::fs;

use clap::{ArgMatches, Command};
use irx_core::explog::ExperimentLog;

/// Bad invocation; reported with exit status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        }
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

fn given(args: &[String], long: &str) -> bool {
    let flag = format!("--{long}");
    let prefix = format!("--{long}=");
    args.iter().any(|a| *a == flag || a.starts_with(&prefix))
}

/// Appends the config file's settings to `args` for every flag not already
/// present.
pub fn merge(cmd: &Command, mut args: Vec<String>) -> Result<Vec<String>, Usage> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| Usage(format!("cannot read config {path}: {e}")))?;
    let entries = ExperimentLog::parse(&text).map_err(|e| Usage(format!("config {path}: {e}")))?;
    let Some(sub) = args
        .iter()
        .skip(1)
        .find_map(|a| cmd.get_subcommands().find(|s| s.get_name() == a))
    else {
        return Ok(args);
    };
    let mut extra = Vec::new();
    for (key, value) in entries.entries() {
        if key == "command" {
            if value != sub.get_name() {
                return Err(Usage(format!(
                    "config {path} is for `{value}`, not `{}`",
                    sub.get_name()
                )));
            }
            continue;
        }
        if key.starts_with("meta.") || key == "config" {
            continue;
        }
        let arg = sub
            .get_arguments()
            .chain(cmd.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()) || (a.is_positional() && a.get_id() == key.as_str()));
        let Some(arg) = arg else {
            return Err(Usage(format!("config {path}: unknown setting {key:?} for `{}`", sub.get_name())));
        };
        if arg.is_positional() {
            log::debug!("config {path}: positional {key} must be given on the command line");
            continue;
        }
        if given(&args, key) {
            continue;
        }
        if arg.get_action().takes_values() {
            extra.push(format!("--{key}"));
            extra.push(value.clone());
        } else if value == "true" {
            extra.push(format!("--{key}"));
        } else if value != "false" {
            return Err(Usage(format!("config {path}: {key} must be true or false")));
        }
    }
    args.extend(extra);
    Ok(args)
}

/// Every argument of the subcommand as it was finally resolved, keyed by
/// long flag name.
pub fn resolved_args(sub: &Command, m: &ArgMatches) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for a in sub.get_arguments() {
        let id = a.get_id().as_str();
        if matches!(id, "help" | "version" | "config" | "threads") {
            continue;
        }
        let key = a.get_long().unwrap_or(id).to_string();
        if !a.get_action().takes_values() {
            if let Ok(Some(&v)) = m.try_get_one::<bool>(id) {
                out.push((key, v.to_string()));
            }
        } else if let Ok(Some(raw)) = m.try_get_raw(id) {
            let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
            out.push((key, vals.join(",")));
        }
    }
    out
}
