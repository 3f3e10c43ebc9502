//! End-to-end recovery pipelines: sub-tensor CPDs, alignment or a structured linear
//! solve to assemble the global factors, then coupled refinement on all observations.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::alignment::{align_all, stitch, SubFactors};
use crate::cpd::{algebraic_init_any_mode, coupled_cpd, cpd, CoupledTerm, InitKind, SolveOutcome, SolverConfig};
use crate::error::{Error, Result};
use crate::factors::{cpd_reconstruct, gather_rows, khatri_rao, FactorTriple};
use crate::linalg::{condition_number, lstsq, CMat};
use crate::sampling::{
    alignment_graph, check_generic, validate_plan, EntryPattern, FiberPattern, GenericVerdict, Mechanism, RuleReport,
    SamplingPlan, SlabPlan,
};
use crate::tensor::{unfold, Mode, Tensor3};

/// Largest condition number accepted for the slab Khatri-Rao system.
pub const SLAB_CONDITION_LIMIT: f64 = 1e10;

/// Outcome of a recovery run. The estimate is not serialized; write it separately.
#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    pub mechanism: Mechanism,
    pub rank: usize,
    #[serde(skip)]
    pub factors: FactorTriple,
    #[serde(skip)]
    pub estimate: Tensor3,
    /// Objective histories of the step-1 sub-tensor CPDs.
    pub step1_histories: Vec<Vec<f64>>,
    /// Coupled objective history of step 3.
    pub step3_history: Vec<f64>,
    pub rules: RuleReport,
    pub generic: GenericVerdict,
    pub forced: bool,
    /// Wall-clock seconds of steps 1, 2 and 3.
    pub seconds: [f64; 3],
    /// `||observed - estimate||_F / ||observed||_F` over all observed sub-tensors.
    pub observed_residual: f64,
    /// Whether `observed_residual <= cfg.residual_tol`.
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl RecoveryReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Recovers the tensor observed through `plan`, dispatching on the mechanism.
pub fn recover(plan: &SamplingPlan, ys: &[Tensor3], rank: usize, cfg: &SolverConfig, force: bool) -> Result<RecoveryReport> {
    cfg.validate()?;
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    let fps = plan.footprints();
    if ys.len() != fps.len() {
        return Err(Error::Shape(format!("{} observed sub-tensors for a plan with {} terms", ys.len(), fps.len())));
    }
    for (d, (y, fp)) in ys.iter().zip(&fps).enumerate() {
        let expect = [fp[0].len(), fp[1].len(), fp[2].len()];
        if y.dims() != expect {
            return Err(Error::Shape(format!("sub-tensor {d} has dims {:?}, plan expects {expect:?}", y.dims())));
        }
    }
    let rules = validate_plan(plan);
    if !rules.is_valid() {
        return Err(Error::RulesViolated(rules.summary()));
    }
    let generic = check_generic(plan, rank);
    if !generic.recoverable {
        let msg = format!(
            "{} = {} < {} = 4*ceil_pow2({rank}); largest provable rank is {}",
            generic.binding, generic.min_value, generic.threshold, generic.max_rank
        );
        if !force {
            return Err(Error::NotIdentifiable(msg));
        }
        log::warn!("forced recovery despite failed identifiability check: {msg}");
    }
    let mut ctx = Context { plan, ys, rank, cfg, rules, generic, force, warnings: Vec::new(), seconds: [0.0; 3] };
    let (init, step1_histories) = match plan.mechanism() {
        Mechanism::Slab => ctx.slab_init()?,
        Mechanism::Fiber | Mechanism::Entry => ctx.pattern_init()?,
    };
    ctx.finish(init, step1_histories)
}

/// Slab recovery from `y1 = X(S_r, :, :)` and `y2 = X(:, :, S_f)`.
pub fn recover_slab(
    y1: &Tensor3,
    y2: &Tensor3,
    plan: &SlabPlan,
    rank: usize,
    cfg: &SolverConfig,
    force: bool,
) -> Result<RecoveryReport> {
    let dims = [plan.horizontal.ambient(), y1.dims()[1], plan.frontal.ambient()];
    let full = SamplingPlan::slab(dims, plan.horizontal.clone(), plan.frontal.clone())?;
    recover(&full, &[y1.clone(), y2.clone()], rank, cfg, force)
}

/// Fiber recovery; the fiber count `K` is taken from the observed sub-tensors.
pub fn recover_fiber(
    ys: &[Tensor3],
    patterns: &[FiberPattern],
    rank: usize,
    cfg: &SolverConfig,
    force: bool,
) -> Result<RecoveryReport> {
    let first = patterns.first().ok_or_else(|| Error::InvalidArgument("no fiber patterns".into()))?;
    let k = ys.first().ok_or_else(|| Error::InvalidArgument("no observed sub-tensors".into()))?.dims()[2];
    let plan = SamplingPlan::fiber([first.rows.ambient(), first.cols.ambient(), k], patterns.to_vec())?;
    recover(&plan, ys, rank, cfg, force)
}

/// Entry recovery.
pub fn recover_entry(
    ys: &[Tensor3],
    patterns: &[EntryPattern],
    rank: usize,
    cfg: &SolverConfig,
    force: bool,
) -> Result<RecoveryReport> {
    let first = patterns.first().ok_or_else(|| Error::InvalidArgument("no entry patterns".into()))?;
    let dims = [first.rows.ambient(), first.cols.ambient(), first.fibers.ambient()];
    let plan = SamplingPlan::entry(dims, patterns.to_vec())?;
    recover(&plan, ys, rank, cfg, force)
}

/// CPD of one sub-tensor: algebraic start first, then seeded random restarts,
/// keeping the best objective. Returns the outcome and its relative residual.
pub fn robust_cpd(y: &Tensor3, rank: usize, cfg: &SolverConfig, stream: u64) -> Result<(SolveOutcome, f64)> {
    let norm2 = y.norm_sqr();
    let rel = |o: &SolveOutcome| if norm2 > 0.0 { (o.objective() / norm2).sqrt() } else { 0.0 };
    let mut best: Option<(SolveOutcome, f64)> = None;
    let consider = |o: SolveOutcome, best: &mut Option<(SolveOutcome, f64)>| {
        let r = rel(&o);
        if best.as_ref().is_none_or(|b| r < b.1) {
            *best = Some((o, r));
        }
    };
    match algebraic_init_any_mode(y, rank) {
        Ok(init) => {
            let warm = SolverConfig { init: InitKind::Provided, ..cfg.clone() };
            match cpd(y, rank, &warm, Some(&init)) {
                Ok(o) => consider(o, &mut best),
                Err(e) => log::warn!("CPD from algebraic start failed: {e}"),
            }
        }
        Err(e) => log::info!("algebraic initialization skipped: {e}"),
    }
    for attempt in 0..=cfg.restarts {
        if best.as_ref().is_some_and(|b| b.1 <= cfg.residual_tol) {
            break;
        }
        let seed = mix(cfg.seed, stream, attempt as u64);
        let random = SolverConfig { init: InitKind::Random, seed, ..cfg.clone() };
        match cpd(y, rank, &random, None) {
            Ok(o) => consider(o, &mut best),
            Err(e) => log::warn!("random restart {attempt} failed: {e}"),
        }
    }
    best.ok_or_else(|| Error::Diverged { iteration: 0, objective: f64::NAN })
}

/// Deterministic seed derivation (splitmix64 finalizer over the inputs).
pub(crate) fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ c.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Context<'a> {
    plan: &'a SamplingPlan,
    ys: &'a [Tensor3],
    rank: usize,
    cfg: &'a SolverConfig,
    rules: RuleReport,
    generic: GenericVerdict,
    force: bool,
    warnings: Vec<String>,
    seconds: [f64; 3],
}

impl Context<'_> {
    fn note_fit(&mut self, what: String, rel: f64) {
        if rel > self.cfg.residual_tol {
            let w = format!("{what}: sub-tensor CPD relative residual {rel:.2e} above tolerance");
            log::warn!("{w}");
            self.warnings.push(w);
        }
    }

    fn slab_init(&mut self) -> Result<(FactorTriple, Vec<Vec<f64>>)> {
        let crate::sampling::PlanKind::Slab(slab) = self.plan.kind() else { unreachable!() };
        let [ni, nj, nk] = self.plan.dims();
        let rank = self.rank;
        let unique = self.generic.unique_term.unwrap_or({
            // Forced without a passing alternative: decompose the smaller sub-tensor.
            if slab.horizontal.len() * nk <= ni * slab.frontal.len() {
                0
            } else {
                1
            }
        });
        let t0 = Instant::now();
        let (outcome, rel) = robust_cpd(&self.ys[unique], rank, self.cfg, unique as u64)?;
        self.note_fit(format!("slab sub-tensor {unique}"), rel);
        self.seconds[0] = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let sub = &outcome.factors;
        let factors = if unique == 0 {
            // y2 = [[A, B, P3 C]]: unfold(y2, 1) = (P3 C (.) B) A^T.
            let pc = gather_rows(&sub.c, Some(&slab.frontal));
            let kr = khatri_rao(&pc, &sub.b)?;
            self.check_condition(&kr)?;
            let a = lstsq(&kr, &unfold(&self.ys[1], Mode::One)).transpose();
            FactorTriple::new(a, sub.b.clone(), sub.c.clone())?
        } else {
            // y1 = [[P1 A, B, C]]: unfold(y1, 3) = (B (.) P1 A) C^T.
            let pa = gather_rows(&sub.a, Some(&slab.horizontal));
            let kr = khatri_rao(&sub.b, &pa)?;
            self.check_condition(&kr)?;
            let c = lstsq(&kr, &unfold(&self.ys[0], Mode::Three)).transpose();
            FactorTriple::new(sub.a.clone(), sub.b.clone(), c)?
        };
        debug_assert_eq!(factors.dims(), [ni, nj, nk]);
        self.seconds[1] = t1.elapsed().as_secs_f64();
        Ok((factors, vec![outcome.history]))
    }

    fn check_condition(&mut self, kr: &CMat) -> Result<()> {
        let condition = condition_number(kr);
        if !(condition <= SLAB_CONDITION_LIMIT) {
            if !self.force {
                return Err(Error::RankDeficient { condition });
            }
            self.warnings.push(format!("Khatri-Rao system condition {condition:.2e} (forced)"));
        }
        Ok(())
    }

    fn pattern_init(&mut self) -> Result<(FactorTriple, Vec<Vec<f64>>)> {
        let t0 = Instant::now();
        let rank = self.rank;
        let cfg = self.cfg;
        let results: Vec<Result<(SolveOutcome, f64)>> = self
            .ys
            .par_iter()
            .enumerate()
            .map(|(d, y)| robust_cpd(y, rank, cfg, d as u64))
            .collect();
        let mut subs = Vec::with_capacity(results.len());
        let mut histories = Vec::with_capacity(results.len());
        for (d, (res, fp)) in results.into_iter().zip(self.plan.footprints()).enumerate() {
            let (outcome, rel) = res?;
            self.note_fit(format!("pattern {d}"), rel);
            histories.push(outcome.history.clone());
            subs.push(SubFactors::new(d, outcome.factors, fp)?);
        }
        self.seconds[0] = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let aligned = align_all(&subs, &alignment_graph(self.plan))?;
        let factors = stitch(&aligned, self.plan.dims(), rank)?;
        self.seconds[1] = t1.elapsed().as_secs_f64();
        Ok((factors, histories))
    }

    fn finish(mut self, init: FactorTriple, step1_histories: Vec<Vec<f64>>) -> Result<RecoveryReport> {
        let t2 = Instant::now();
        let terms: Vec<CoupledTerm> = self.plan.terms(self.ys)?;
        let outcome = coupled_cpd(&terms, self.plan.dims(), self.rank, &init, self.cfg)?;
        self.seconds[2] = t2.elapsed().as_secs_f64();
        let observed: f64 = self.ys.iter().map(|y| y.norm_sqr()).sum();
        let observed_residual = if observed > 0.0 { (outcome.objective() / observed).sqrt() } else { 0.0 };
        let converged = observed_residual <= self.cfg.residual_tol;
        if !converged {
            self.warnings.push(format!("observed relative residual {observed_residual:.2e} above tolerance"));
        }
        let estimate = cpd_reconstruct(&outcome.factors);
        Ok(RecoveryReport {
            mechanism: self.plan.mechanism(),
            rank: self.rank,
            factors: outcome.factors,
            estimate,
            step1_histories,
            step3_history: outcome.history,
            rules: self.rules,
            generic: self.generic,
            forced: self.force,
            seconds: self.seconds,
            observed_residual,
            converged,
            warnings: self.warnings,
        })
    }
}
