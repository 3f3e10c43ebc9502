//! Rank versus sampling-ratio sweeps over synthetic Gaussian-factor tensors.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpd::SolverConfig;
use crate::error::{Error, Result};
use crate::factors::cpd_reconstruct;
use crate::reconstruct::{mix, recover};
use crate::sampling::{check_generic, make_regular_plan, Mechanism, RegularParams, SamplingPlan};
use crate::synth::{gaussian_factors, Distribution};
use crate::tensor::nre;

/// CSV header of [`SweepRecord`] rows.
pub const CSV_HEADER: &str = "mechanism,F,r,NRE,converged,seconds,seed";

/// One cell of a sweep: median NRE over the trials at rank `rank` and the
/// sampling ratio `ratio` of the plan actually used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub mechanism: Mechanism,
    pub rank: usize,
    pub ratio: f64,
    pub nre: f64,
    /// Every trial converged.
    pub converged: bool,
    pub seconds: f64,
    /// Seed of the cell's first trial.
    pub seed: u64,
}

impl SweepRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:e},{},{},{}",
            self.mechanism.name(),
            self.rank,
            self.ratio,
            self.nre,
            self.converged,
            self.seconds,
            self.seed
        )
    }
}

/// Writes the header and one row per record.
pub fn to_csv(records: &[SweepRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub dims: [usize; 3],
    pub ranks: Vec<usize>,
    pub ratios: Vec<f64>,
    pub mechanism: Mechanism,
    pub trials: usize,
    pub seed: u64,
    /// Run cells whose plan fails the generic check instead of recording the sentinel.
    pub force: bool,
    /// Record wall-clock seconds; when false the column is 0 and output is reproducible byte for byte.
    pub timing: bool,
    pub solver: SolverConfig,
}

impl SweepConfig {
    pub fn new(dims: [usize; 3], ranks: Vec<usize>, ratios: Vec<f64>, mechanism: Mechanism) -> Self {
        Self { dims, ranks, ratios, mechanism, trials: 3, seed: 0, force: false, timing: false, solver: SolverConfig::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.ranks.is_empty() || self.ratios.is_empty() {
            return Err(Error::InvalidArgument("rank and ratio lists must be nonempty".into()));
        }
        if self.ranks.contains(&0) {
            return Err(Error::InvalidArgument("ranks must be at least 1".into()));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(Error::InvalidArgument(format!("sampling ratio {r} outside (0, 1]")));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("at least one trial per cell".into()));
        }
        if self.dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("dims {:?} must be positive", self.dims)));
        }
        self.solver.validate()
    }
}

fn strides(mech: Mechanism, s: usize) -> [usize; 3] {
    match mech {
        Mechanism::Slab => [s, 1, s],
        Mechanism::Fiber => [s, s, 1],
        Mechanism::Entry => [s, s, s],
    }
}

/// Densest regular plan with sampling ratio at most `ratio`: the smallest common
/// stride over the subsampled modes that gets there. `None` when no stride does.
pub fn densest_plan(mech: Mechanism, dims: [usize; 3], ratio: f64) -> Option<SamplingPlan> {
    let largest = dims.into_iter().max().unwrap_or(1);
    (1..=largest).find_map(|s| {
        let plan = make_regular_plan(mech, dims, &RegularParams::with_strides(strides(mech, s))).ok()?;
        (plan.sampling_ratio() <= ratio).then_some(plan)
    })
}

/// Seed of one trial, derived from the master seed, the rank, the requested ratio and the trial index.
pub fn trial_seed(master: u64, rank: usize, ratio: f64, trial: usize) -> u64 {
    mix(mix(master, rank as u64, ratio.to_bits()), trial as u64, 0x5377_6565_70)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn run_trial(cfg: &SweepConfig, plan: &SamplingPlan, rank: usize, seed: u64) -> (f64, bool) {
    let attempt = || -> Result<(f64, bool)> {
        let truth = cpd_reconstruct(&gaussian_factors(cfg.dims, rank, Distribution::Complex, seed)?);
        let ys = plan.apply(&truth)?;
        let solver = SolverConfig { seed, ..cfg.solver.clone() };
        let report = recover(plan, &ys, rank, &solver, cfg.force)?;
        Ok((nre(&report.estimate, &truth)?, report.converged))
    };
    attempt().unwrap_or_else(|e| {
        log::warn!("trial with seed {seed} failed: {e}");
        (1.0, false)
    })
}

fn run_cell(cfg: &SweepConfig, rank: usize, ratio: f64) -> SweepRecord {
    let t0 = Instant::now();
    let seed = trial_seed(cfg.seed, rank, ratio, 0);
    let plan = densest_plan(cfg.mechanism, cfg.dims, ratio);
    let feasible = plan.as_ref().filter(|p| cfg.force || check_generic(p, rank).recoverable);
    let (nre, converged) = match feasible {
        Some(plan) => {
            let runs: Vec<(f64, bool)> = (0..cfg.trials)
                .map(|t| run_trial(cfg, plan, rank, trial_seed(cfg.seed, rank, ratio, t)))
                .collect();
            (median(runs.iter().map(|r| r.0).collect()), runs.iter().all(|r| r.1))
        }
        None => (1.0, false),
    };
    SweepRecord {
        mechanism: cfg.mechanism,
        rank,
        ratio: plan.as_ref().map_or(ratio, |p| p.sampling_ratio()),
        nre,
        converged,
        seconds: if cfg.timing { t0.elapsed().as_secs_f64() } else { 0.0 },
        seed,
    }
}

/// Runs every `(rank, ratio)` cell, ranks outermost, cells in parallel.
///
/// Cells with no regular plan at the requested ratio, or whose plan fails the
/// generic check (unless forced), are recorded with NRE 1 and `converged = false`;
/// their `r` is the requested ratio when no plan exists.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRecord>> {
    cfg.validate()?;
    let cells: Vec<(usize, f64)> =
        cfg.ranks.iter().flat_map(|&f| cfg.ratios.iter().map(move |&r| (f, r))).collect();
    Ok(cells.par_iter().map(|&(f, r)| run_cell(cfg, f, r)).collect())
}
