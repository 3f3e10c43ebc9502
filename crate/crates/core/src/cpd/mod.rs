//! CPD of complete tensors and the coupled masked CPD over several sampled sub-tensors.
//!
//! Both problems share one solver: alternating least squares where every factor
//! row is solved from the sum of the normal equations of all terms that observe
//! it, followed by Levenberg-Marquardt damped Gauss-Newton with a matrix-free
//! preconditioned conjugate-gradient inner solve.

mod algebraic;
mod kernels;
mod solver;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::FactorTriple;
use crate::selection::SelectionSet;
use crate::tensor::Tensor3;

pub use algebraic::{algebraic_init, algebraic_init_any_mode};
pub use solver::{coupled_gradient, coupled_objective};

/// How a solve obtains its starting factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    #[default]
    Random,
    Algebraic,
    Provided,
}

/// Solver knobs. Serializes as a flat JSON object; missing fields take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// ALS sweep budget.
    pub max_iters: usize,
    /// Gauss-Newton iteration budget (rejected steps count).
    pub gn_iters: usize,
    /// Stop when the relative objective change drops below this.
    pub tol: f64,
    /// Initial Levenberg parameter, relative to the mean diagonal of `J^H J`.
    pub damping: f64,
    pub seed: u64,
    pub init: InitKind,
    /// A pipeline run counts as converged when the relative residual on the
    /// observed entries is at most this.
    pub residual_tol: f64,
    /// Random restarts tried when a sub-tensor CPD does not fit.
    pub restarts: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            gn_iters: 50,
            tol: 1e-10,
            damping: 1e-3,
            seed: 0,
            init: InitKind::Random,
            residual_tol: 1e-6,
            restarts: 3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        if !(self.damping >= 0.0) || !self.damping.is_finite() {
            return Err(Error::InvalidArgument("damping must be a finite nonnegative number".into()));
        }
        if !(self.residual_tol > 0.0) {
            return Err(Error::InvalidArgument("residual_tol must be positive".into()));
        }
        Ok(())
    }
}

/// One observed sub-tensor `Y_d` together with its row, column and fiber selections.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledTerm {
    pub y: Tensor3,
    pub sel_rows: SelectionSet,
    pub sel_cols: SelectionSet,
    pub sel_fibers: SelectionSet,
}

impl CoupledTerm {
    pub fn new(y: Tensor3, sel_rows: SelectionSet, sel_cols: SelectionSet, sel_fibers: SelectionSet) -> Result<Self> {
        let expect = [sel_rows.len(), sel_cols.len(), sel_fibers.len()];
        if y.dims() != expect {
            return Err(Error::Shape(format!("term dims {:?} do not match selections {:?}", y.dims(), expect)));
        }
        Ok(Self { y, sel_rows, sel_cols, sel_fibers })
    }

    /// A term observing the whole tensor.
    pub fn full(y: Tensor3) -> Self {
        let [i, j, k] = y.dims();
        Self { y, sel_rows: SelectionSet::full(i), sel_cols: SelectionSet::full(j), sel_fibers: SelectionSet::full(k) }
    }

    pub fn selection(&self, mode: usize) -> &SelectionSet {
        match mode {
            0 => &self.sel_rows,
            1 => &self.sel_cols,
            _ => &self.sel_fibers,
        }
    }

    pub(crate) fn local_factors(&self, f: &FactorTriple) -> FactorTriple {
        fn pick(s: &SelectionSet) -> Option<&SelectionSet> {
            if s.is_full() { None } else { Some(s) }
        }
        f.select_rows(pick(&self.sel_rows), pick(&self.sel_cols), pick(&self.sel_fibers))
    }
}

/// Result of a CPD or coupled CPD solve.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub factors: FactorTriple,
    /// Objective after initialization, then after every ALS sweep and every accepted GN step.
    pub history: Vec<f64>,
    pub als_iterations: usize,
    pub gn_iterations: usize,
    /// Number of normal-equation solves that needed the trace regularization.
    pub regularized_solves: usize,
}

impl SolveOutcome {
    pub fn objective(&self) -> f64 {
        self.history.last().copied().unwrap_or(0.0)
    }
}

/// CPD of a complete tensor.
///
/// `warm` is used when `cfg.init` is `Provided` (required then) and ignored otherwise.
pub fn cpd(t: &Tensor3, rank: usize, cfg: &SolverConfig, warm: Option<&FactorTriple>) -> Result<SolveOutcome> {
    cfg.validate()?;
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    let init = match cfg.init {
        InitKind::Provided => {
            let w = warm.ok_or_else(|| Error::InvalidArgument("init = provided requires warm factors".into()))?;
            check_init(w, t.dims(), rank)?;
            w.clone()
        }
        InitKind::Algebraic => algebraic_init(t, rank)?,
        InitKind::Random => solver::random_init(t.dims(), rank, cfg.seed, t.norm_sqr()),
    };
    let terms = [CoupledTerm::full(t.clone())];
    solver::solve(&terms, t.dims(), init, cfg, [false; 3])
}

/// CPD of a complete tensor with some factors held fixed at their warm values.
pub fn cpd_fixed(
    t: &Tensor3,
    warm: &FactorTriple,
    cfg: &SolverConfig,
    fixed: [bool; 3],
) -> Result<SolveOutcome> {
    cfg.validate()?;
    check_init(warm, t.dims(), warm.rank())?;
    let terms = [CoupledTerm::full(t.clone())];
    solver::solve(&terms, t.dims(), warm.clone(), cfg, fixed)
}

/// One ALS sweep (A, then B, then C) on a complete tensor.
pub fn als_step(t: &Tensor3, f: &FactorTriple) -> Result<FactorTriple> {
    check_init(f, t.dims(), f.rank())?;
    let terms = [CoupledTerm::full(t.clone())];
    let problem = solver::Problem::new(&terms, t.dims())?;
    let mut out = f.clone();
    for mode in 0..3 {
        problem.als_update(&mut out, mode);
    }
    Ok(out)
}

/// Coupled CPD minimizing `sum_d ||Y_d - [[P1 A, P2 B, P3 C]]||^2`.
pub fn coupled_cpd(
    terms: &[CoupledTerm],
    dims: [usize; 3],
    rank: usize,
    init: &FactorTriple,
    cfg: &SolverConfig,
) -> Result<SolveOutcome> {
    cfg.validate()?;
    check_init(init, dims, rank)?;
    solver::solve(terms, dims, init.clone(), cfg, [false; 3])
}

fn check_init(f: &FactorTriple, dims: [usize; 3], rank: usize) -> Result<()> {
    if f.dims() != dims || f.rank() != rank {
        return Err(Error::Shape(format!(
            "initial factors {:?} rank {} do not match dims {:?} rank {}",
            f.dims(),
            f.rank(),
            dims,
            rank
        )));
    }
    Ok(())
}
