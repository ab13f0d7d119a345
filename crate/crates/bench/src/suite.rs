//! Seeded episode sweeps and their CSV tables.

use std::io::Write;

use hipbi::env::EnvKind;
use hipbi::seed::split_seed;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ModeKind, RunConfig};
use crate::episode::{run_episode, Controller, ControllerKind, EpisodeError, EpisodeRecord};

/// One `(env, controller, mode, lookahead, speed)` combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub env: EnvKind,
    pub controller: ControllerKind,
    pub mode: ModeKind,
    /// Planner horizon; ignored (and reported as 0) for the reactive baseline.
    pub lookahead: usize,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub n_episodes: usize,
    pub suc_pct: f64,
    pub safe_pct: f64,
    pub l2d_mean: f64,
    pub l2d_std: f64,
    pub ts_mean: f64,
    pub ts_std: f64,
}

/// Mean and population standard deviation.
fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn aggregate(records: &[EpisodeRecord]) -> Metrics {
    let n = records.len();
    let pct = |f: fn(&EpisodeRecord) -> bool| 100.0 * records.iter().filter(|r| f(r)).count() as f64 / n as f64;
    let (l2d_mean, l2d_std) = mean_std(records.iter().map(|r| r.l2d));
    let (ts_mean, ts_std) = mean_std(records.iter().map(|r| r.ts as f64));
    Metrics { n_episodes: n, suc_pct: pct(|r| r.suc), safe_pct: pct(|r| r.safe), l2d_mean, l2d_std, ts_mean, ts_std }
}

/// A CSV row; floats are pre-formatted so the file is stable across platforms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SuiteRow {
    pub env: String,
    pub controller: String,
    pub mode: String,
    pub lookahead: usize,
    pub speed: String,
    pub n_episodes: usize,
    pub suc_pct: String,
    pub safe_pct: String,
    pub l2d_mean: String,
    pub l2d_std: String,
    pub ts_mean: String,
    pub ts_std: String,
    pub seed_base: u64,
}

impl SuiteRow {
    pub fn new(cell: &Cell, m: &Metrics, seed_base: u64) -> Self {
        Self {
            env: cell.env.name().into(),
            controller: cell.controller.name().into(),
            mode: cell.mode.name().into(),
            lookahead: cell.lookahead,
            speed: format!("{:.1}", cell.speed),
            n_episodes: m.n_episodes,
            suc_pct: format!("{:.1}", m.suc_pct),
            safe_pct: format!("{:.1}", m.safe_pct),
            l2d_mean: format!("{:.3}", m.l2d_mean),
            l2d_std: format!("{:.3}", m.l2d_std),
            ts_mean: format!("{:.2}", m.ts_mean),
            ts_std: format!("{:.2}", m.ts_std),
            seed_base,
        }
    }
}

pub fn controller_for(cfg: &RunConfig, kind: ControllerKind, lookahead: usize) -> Controller {
    Controller {
        kind,
        planner: cfg.planner_with(lookahead.max(1)),
        prior_concentration: cfg.controller.prior_concentration,
        fixed_beta: cfg.controller.fixed_beta.clone(),
    }
}

/// Planner seed of episode `i`; scenario seeds are simply `seed_base + i`.
pub fn planner_seed(seed_base: u64, episode: usize) -> u64 {
    split_seed(seed_base, episode as u64, u64::MAX)
}

/// Runs `n_episodes` episodes of one cell, in seed order.
pub fn run_cell(
    cfg: &RunConfig,
    cell: &Cell,
    n_episodes: usize,
    seed_base: u64,
    keep_trace: bool,
) -> Result<Vec<EpisodeRecord>, EpisodeError> {
    let mut cfg = cfg.clone();
    cfg.scenario.env = cell.env;
    cfg.scenario.box_speed = cell.speed;
    let env = cfg.env();
    let controller = controller_for(&cfg, cell.controller, cell.lookahead);
    let mode = cfg.execution_mode(cell.mode);
    (0..n_episodes)
        .into_par_iter()
        .map(|i| {
            let spec = cfg.scenario_spec(seed_base + i as u64);
            run_episode(&env, &spec, |s| cfg.experts_for(s), &controller, mode, planner_seed(seed_base, i), keep_trace)
        })
        .collect()
}

/// Cells of the suite grid: controllers x modes x horizons at the configured speed.
/// The reactive baseline has no horizon and appears once per mode.
pub fn suite_cells(cfg: &RunConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &controller in &cfg.sweep.controllers {
        for &mode in &cfg.sweep.modes {
            let horizons = if controller == ControllerKind::ReactiveFixed { vec![0] } else { cfg.sweep.horizons.clone() };
            for lookahead in horizons {
                cells.push(Cell { env: cfg.scenario.env, controller, mode, lookahead, speed: cfg.scenario.box_speed });
            }
        }
    }
    cells
}

pub fn run_cells(cfg: &RunConfig, cells: &[Cell], n_episodes: usize, seed_base: u64) -> Result<Vec<SuiteRow>, EpisodeError> {
    cells
        .iter()
        .map(|cell| {
            let records = run_cell(cfg, cell, n_episodes, seed_base, false)?;
            Ok(SuiteRow::new(cell, &aggregate(&records), seed_base))
        })
        .collect()
}

pub fn run_suite(cfg: &RunConfig, n_episodes: usize, seed_base: u64) -> Result<Vec<SuiteRow>, EpisodeError> {
    run_cells(cfg, &suite_cells(cfg), n_episodes, seed_base)
}

/// Toy-box sweep over box speeds for every configured controller, in `mode`.
pub fn speed_cells(cfg: &RunConfig, speeds: &[f64], mode: ModeKind) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &controller in &cfg.sweep.controllers {
        let lookahead = if controller == ControllerKind::ReactiveFixed { 0 } else { cfg.sweep.ablation_horizon };
        for &speed in speeds {
            cells.push(Cell { env: EnvKind::ToyBox, controller, mode, lookahead, speed });
        }
    }
    cells
}

pub fn run_speed_ablation(
    cfg: &RunConfig,
    speeds: &[f64],
    n_episodes: usize,
    seed_base: u64,
) -> Result<Vec<SuiteRow>, EpisodeError> {
    run_cells(cfg, &speed_cells(cfg, speeds, cfg.mode.kind), n_episodes, seed_base)
}

pub fn write_csv<W: Write>(rows: &[SuiteRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
