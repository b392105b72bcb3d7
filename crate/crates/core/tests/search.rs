use irx_core::hpo::{
    self, run_study, suggest, Gp, Lattice, SearchSpace, SyntheticObjective, TrialStatus, GP_NOISE,
};
use irx_core::ops::PoolMode;
use irx_core::zoo::Window;
use irx_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Integer grid `0..n x 0..n` with L1 distance.
struct Grid(usize);

impl Lattice for Grid {
    type Point = (usize, usize);

    fn sample(&self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        (rng.random_range(0..self.0), rng.random_range(0..self.0))
    }

    fn encode(&self, p: &(usize, usize)) -> Vec<f64> {
        let s = (self.0 - 1) as f64;
        vec![p.0 as f64 / s, p.1 as f64 / s]
    }

    fn distance(&self, a: &(usize, usize), b: &(usize, usize)) -> usize {
        a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
    }

    fn render(&self, p: &(usize, usize)) -> String {
        format!("{},{}", p.0, p.1)
    }

    fn parse(&self, s: &str) -> Result<(usize, usize)> {
        let bad = || Error::Format(s.to_string());
        let (a, b) = s.split_once(',').ok_or_else(bad)?;
        Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
    }
}

fn quadratic(p: &(usize, usize)) -> f64 {
    let dx = p.0 as f64 - 14.0;
    let dy = p.1 as f64 - 5.0;
    1.0 - 0.002 * (dx * dx + dy * dy)
}

fn small_space() -> SearchSpace {
    SearchSpace {
        bands: 3,
        classes: 2,
        patch: 7,
        conv_layers: (1, 2),
        filters: vec![100, 200],
        kernels: vec![3, 5],
        pool_kernels: vec![2],
        pool_modes: vec![PoolMode::Max, PoolMode::Avg],
        learning_rates: vec![0.01, 0.001],
        dense_layers: (1, 2),
        dense_units: vec![50, 100, 150],
        conv_window: Window::SAME,
        pool_window: Window::VALID,
    }
}

fn enumerate(space: &SearchSpace) -> Vec<hpo::HpoConfig> {
    let mut layers = Vec::new();
    for &f in &space.filters {
        for &k in &space.kernels {
            for &pk in &space.pool_kernels {
                for &m in &space.pool_modes {
                    layers.push((f, k, pk, m));
                }
            }
        }
    }
    let mut stacks: Vec<Vec<_>> = vec![vec![]];
    let mut convs = Vec::new();
    for depth in 1..=space.conv_layers.1 {
        stacks = stacks
            .iter()
            .flat_map(|s| layers.iter().map(move |l| [s.clone(), vec![*l]].concat()))
            .collect();
        if depth >= space.conv_layers.0 {
            convs.extend(stacks.clone());
        }
    }
    let mut heads: Vec<Vec<usize>> = vec![vec![]];
    let mut denses = Vec::new();
    for depth in 1..=space.dense_layers.1 {
        heads = heads
            .iter()
            .flat_map(|h| space.dense_units.iter().map(move |u| [h.clone(), vec![*u]].concat()))
            .collect();
        if depth >= space.dense_layers.0 {
            denses.extend(heads.clone());
        }
    }
    let mut all = Vec::new();
    for c in &convs {
        for d in &denses {
            for &lr in &space.learning_rates {
                all.push(hpo::HpoConfig {
                    stages: c.clone(),
                    dense: d.clone(),
                    learning_rate: lr,
                });
            }
        }
    }
    all
}

#[test]
fn cardinality_matches_enumeration() {
    let space = small_space();
    let all = enumerate(&space);
    assert_eq!(space.cardinality(), all.len() as u128);
    let mut rendered: Vec<String> = all.iter().map(|c| space.render(c)).collect();
    rendered.sort();
    rendered.dedup();
    assert_eq!(rendered.len(), all.len());
    assert!(all.iter().all(|c| space.contains(c)));
    // 8 x 8^2 conv stacks, 3 + 9 heads, 2 rates
    assert_eq!(all.len(), (8 + 64) * 12 * 2);
}

#[test]
fn infeasible_draws_are_never_emitted() {
    // Three valid 3x3 pools shrink 5 -> 3 -> 1 -> nothing.
    let mut space = SearchSpace::standard(4, 3, 5);
    space.pool_kernels = vec![3];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut saw_infeasible = false;
    for _ in 0..500 {
        saw_infeasible |= !space.feasible(&space.sample_unchecked(&mut rng));
        let c = space.sample(&mut rng);
        assert!(c.stages.len() <= 2, "{}", space.render(&c));
    }
    assert!(saw_infeasible);
}

#[test]
fn empty_and_flat_histories_fall_back_to_sampling() {
    let grid = Grid(21);
    let mut a = ChaCha8Rng::seed_from_u64(4);
    let mut b = ChaCha8Rng::seed_from_u64(4);
    assert_eq!(suggest(&grid, &[], &mut a).unwrap(), grid.sample(&mut b));
    let flat = vec![((1, 1), 0.5), ((3, 7), 0.5)];
    let mut a = ChaCha8Rng::seed_from_u64(5);
    let mut b = ChaCha8Rng::seed_from_u64(5);
    assert_eq!(suggest(&grid, &flat, &mut a).unwrap(), grid.sample(&mut b));
}

#[test]
fn incumbent_has_no_expected_improvement_without_noise() {
    let grid = Grid(11);
    let pts = [(0, 0), (3, 4), (7, 2), (10, 10), (5, 5)];
    let x: Vec<Vec<f64>> = pts.iter().map(|p| grid.encode(p)).collect();
    let y: Vec<f64> = pts.iter().map(quadratic).collect();
    let best = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let incumbent = pts[y.iter().position(|&v| v == best).unwrap()];
    let gp = Gp::fit(&x, &y, 0.3, 0.0).unwrap();
    assert!(gp.expected_improvement(&grid.encode(&incumbent), best) < 1e-9);
    let gp = Gp::fit_best(&x, &y, GP_NOISE).unwrap();
    assert!(gp.expected_improvement(&grid.encode(&incumbent), best) < 1e-4);
}

#[test]
fn suggestions_concentrate_on_the_best_region() {
    let grid = Grid(21);
    let optimum = (14, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut history: Vec<((usize, usize), f64)> = (0..12)
        .map(|_| {
            let p = grid.sample(&mut rng);
            (p, quadratic(&p))
        })
        .collect();
    let near_best = (13, 6);
    history.push((near_best, quadratic(&near_best)));
    let mut near = 0;
    for _ in 0..20 {
        let p = suggest(&grid, &history, &mut rng).unwrap();
        if grid.distance(&p, &optimum) <= 1 {
            near += 1;
        }
        history.push((p, quadratic(&p)));
    }
    assert!(near >= 12, "only {near} of 20 suggestions near the optimum");
}

fn search_best(space: &SearchSpace, seed: u64, bayesian: bool) -> f64 {
    if bayesian {
        let rec = run_study(space, |c, _| Ok(SyntheticObjective::score(c)), 50, seed, None).unwrap();
        rec.best().unwrap().objective.unwrap()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..50)
            .map(|_| SyntheticObjective::score(&space.sample(&mut rng)))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[test]
fn bayesian_search_beats_random_search() {
    let space = SearchSpace::standard(10, 4, 7);
    let target = SyntheticObjective::PEAK * 0.98;
    let mut wins = 0;
    let mut hits = 0;
    for seed in 0..20 {
        let bo = search_best(&space, seed, true);
        let rs = search_best(&space, seed, false);
        wins += usize::from(bo >= rs);
        hits += usize::from(bo >= target);
    }
    assert!(wins >= 14, "Bayesian search won {wins} of 20 pairs");
    assert!(hits >= 16, "Bayesian search reached 98% of the peak in {hits} of 20 studies");
}

#[test]
fn studies_are_deterministic_and_resumable() {
    let space = SearchSpace::standard(10, 4, 7);
    let objective = |c: &hpo::HpoConfig, _: u64| Ok(SyntheticObjective::score(c));
    let full = run_study(&space, objective, 12, 9, None).unwrap();
    assert_eq!(full, run_study(&space, objective, 12, 9, None).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("study.tsv");
    let first = run_study(&space, objective, 7, 9, Some(&path)).unwrap();
    assert_eq!(first.trials[..], full.trials[..7]);
    let text_after_seven = std::fs::read_to_string(&path).unwrap();
    let resumed = run_study(&space, objective, 12, 9, Some(&path)).unwrap();
    assert_eq!(resumed, full);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with(&text_after_seven));
    assert_eq!(hpo::parse_record(&space, &text).unwrap(), full);
    assert_eq!(
        hpo::parse_record(&space, &text).unwrap().best().map(|t| t.id),
        full.best().map(|t| t.id)
    );
    assert!(run_study(&space, objective, 12, 10, Some(&path)).is_err());
}

#[test]
fn failed_trials_are_recorded_and_skipped() {
    let space = SearchSpace::standard(10, 4, 7);
    let rec = run_study(
        &space,
        |c, _| {
            if c.stages.len() == 4 {
                Err(Error::Numeric("diverged".into()))
            } else {
                Ok(SyntheticObjective::score(c))
            }
        },
        15,
        1,
        None,
    )
    .unwrap();
    assert_eq!(rec.trials.len(), 15);
    for t in &rec.trials {
        assert_eq!(t.status == TrialStatus::Failed, t.config.stages.len() == 4);
    }
}

