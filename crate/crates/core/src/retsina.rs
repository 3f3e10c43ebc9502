//! Accelerated fMRI completion: equispaced k_y undersampling that shifts from
//! frame to frame (optionally cycling over slice groups), a frame-sum
//! initialization, per-class refinement and a coupled solve over all samples.
//!
//! Layout is `(k-space point, frame, channel)` with the fully sampled frame at
//! index 0, k-space row `kx + mx*ky` and channel `coil + mc*slice`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpd::{algebraic_init_any_mode, coupled_cpd, cpd, cpd_fixed, CoupledTerm, InitKind, SolveOutcome, SolverConfig};
use crate::error::{Error, Result};
use crate::factors::{ceil_pow2, cpd_reconstruct, gather_rows, khatri_rao, FactorTriple};
use crate::fmri::ScanGeometry;
use crate::linalg::lstsq;
use crate::reconstruct::robust_cpd;
use crate::selection::SelectionSet;
use crate::tensor::{unfold, Mode, Tensor3};

/// Acceleration schedule. `r` is the k_y stride and `s` the number of slice
/// groups visited in turn, so each frame observes `1/(r*s)` of the samples.
/// Single-slice acceleration by `n` is `r = n, s = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccelPlan {
    pub r: usize,
    pub s: usize,
    pub geometry: ScanGeometry,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AccelPlanJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s: Option<usize>,
    geometry: ScanGeometry,
}

impl AccelPlan {
    pub fn single(n: usize, geometry: ScanGeometry) -> Result<Self> {
        Self::multi(n, 1, geometry)
    }

    pub fn multi(r: usize, s: usize, geometry: ScanGeometry) -> Result<Self> {
        let plan = Self { r, s, geometry };
        plan.validate()?;
        Ok(plan)
    }

    /// Acceleration factor `r*s`.
    pub fn n(&self) -> usize {
        self.r * self.s
    }

    pub fn is_multi_slice(&self) -> bool {
        self.s > 1 || self.geometry.ms > 1
    }

    fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if self.r == 0 || self.s == 0 {
            return Err(Error::InvalidArgument("acceleration factors must be at least 1".into()));
        }
        if [g.mx, g.my, g.mc, g.ms].contains(&0) {
            return Err(Error::InvalidArgument(format!("geometry {g:?} has a zero size")));
        }
        if self.r > g.my {
            return Err(Error::InvalidArgument(format!("k_y stride {} exceeds m_y = {}", self.r, g.my)));
        }
        if self.s > g.ms {
            return Err(Error::InvalidArgument(format!("{} slice groups but only {} slices", self.s, g.ms)));
        }
        Ok(())
    }

    /// Sampling class of frame `j`: `None` for the fully sampled frame 0,
    /// else `(k_y residue, slice group)`.
    pub fn class_of(&self, frame: usize) -> Option<(usize, usize)> {
        (frame > 0).then(|| ((frame - 1) % self.r, ((frame - 1) / self.r) % self.s))
    }

    /// k-space rows whose k_y lies in residue class `residue` mod `r`.
    pub fn class_rows(&self, residue: usize) -> Vec<usize> {
        let g = &self.geometry;
        let mut rows: Vec<usize> =
            (residue..g.my).step_by(self.r).flat_map(|ky| (0..g.mx).map(move |kx| g.row(kx, ky))).collect();
        rows.sort_unstable();
        rows
    }

    /// Channels of the slices in group `group` (slices with `slice mod s == group`).
    pub fn group_channels(&self, group: usize) -> Vec<usize> {
        let g = &self.geometry;
        (group..g.ms).step_by(self.s).flat_map(|sl| (0..g.mc).map(move |c| g.channel(c, sl))).collect()
    }

    /// Frames of class `(residue, group)` together with frame 0.
    pub fn class_frames(&self, residue: usize, group: usize, frames: usize) -> Vec<usize> {
        std::iter::once(0).chain((1..frames).filter(|&j| self.class_of(j) == Some((residue, group)))).collect()
    }

    fn check_dims(&self, dims: [usize; 3]) -> Result<()> {
        let g = &self.geometry;
        if dims[0] != g.kspace_len() || dims[2] != g.channels() {
            return Err(Error::Shape(format!(
                "tensor dims {dims:?} do not match geometry (mx*my = {}, mc*ms = {})",
                g.kspace_len(),
                g.channels()
            )));
        }
        if g.frames != 0 && g.frames != dims[1] {
            return Err(Error::Shape(format!("geometry declares {} frames, tensor has {}", g.frames, dims[1])));
        }
        Ok(())
    }

    /// Sub-tensor footprints `(rows, frames, channels)`, one per sampling class.
    pub fn footprints(&self, frames: usize) -> Result<Vec<[SelectionSet; 3]>> {
        let g = &self.geometry;
        let mut out = Vec::with_capacity(self.n());
        for group in 0..self.s {
            for residue in 0..self.r {
                out.push([
                    SelectionSet::new(self.class_rows(residue), g.kspace_len())?,
                    SelectionSet::new(self.class_frames(residue, group, frames), frames)?,
                    SelectionSet::new(self.group_channels(group), g.channels())?,
                ]);
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        let repr = if self.s == 1 {
            AccelPlanJson { n: Some(self.r), r: None, s: None, geometry: self.geometry }
        } else {
            AccelPlanJson { n: None, r: Some(self.r), s: Some(self.s), geometry: self.geometry }
        };
        Ok(serde_json::to_string_pretty(&repr)?)
    }

    /// Parses `{"n": .., "geometry": {..}}` or `{"r": .., "s": .., "geometry": {..}}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let j: AccelPlanJson = serde_json::from_str(text)?;
        match (j.n, j.r, j.s) {
            (Some(n), None, None) => Self::single(n, j.geometry),
            (None, Some(r), s) => Self::multi(r, s.unwrap_or(1), j.geometry),
            _ => Err(Error::Format("an acceleration plan has either \"n\" or \"r\" (with optional \"s\")".into())),
        }
    }
}

/// Observation mask in column-major tensor order.
///
/// Frame 0 is fully observed. Frame `j >= 1` observes the k_y rows with
/// `k_y mod r == (j-1) mod r` on the channels of slice group `((j-1)/r) mod s`.
pub fn accel_mask(plan: &AccelPlan, dims: [usize; 3]) -> Result<Vec<bool>> {
    plan.check_dims(dims)?;
    let [ni, nj, nk] = dims;
    let g = &plan.geometry;
    let mut mask = vec![false; ni * nj * nk];
    for k in 0..nk {
        let slice = k / g.mc;
        for j in 0..nj {
            for i in 0..ni {
                let ky = i / g.mx;
                mask[i + ni * (j + nj * k)] = match plan.class_of(j) {
                    None => true,
                    Some((residue, group)) => ky % plan.r == residue && slice % plan.s == group,
                };
            }
        }
    }
    Ok(mask)
}

/// Zeroes every entry outside the acceleration mask.
pub fn undersample(x: &Tensor3, plan: &AccelPlan) -> Result<Tensor3> {
    let mask = accel_mask(plan, x.dims())?;
    let mut out = x.clone();
    for (v, m) in out.data_mut().iter_mut().zip(mask) {
        if !m {
            *v = Default::default();
        }
    }
    Ok(out)
}

/// Which bound `max_acceleration` evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccelMode {
    /// Largest single-slice factor `n`.
    Single,
    /// Largest `r` with the number of slice groups `s` fixed.
    MultiFixedS(usize),
    /// Largest `s` with the k_y stride `r` fixed.
    MultiFixedR(usize),
}

/// Integer bound on the acceleration for which generic recovery is guaranteed.
///
/// Single slice: `floor(min{sqrt(IJ/4c), JK/4c, IK/4c})` with `c = ceil_pow2(F)`.
/// Multi-slice: the largest free factor for which [`multi_slice_feasible`] holds (0 if none).
pub fn max_acceleration(dims: [usize; 3], rank: usize, mode: AccelMode) -> usize {
    let [i, j, k] = dims.map(|d| d as f64);
    let c = 4.0 * ceil_pow2(rank.max(1) as u64) as f64;
    match mode {
        AccelMode::Single => {
            let bound = (i * j / c).sqrt().min(j * k / c).min(i * k / c);
            bound.floor() as usize
        }
        AccelMode::MultiFixedS(s) => (1..=dims[1].max(1)).take_while(|&r| multi_slice_feasible(dims, rank, r, s)).last().unwrap_or(0),
        AccelMode::MultiFixedR(r) => (1..=dims[2].max(1)).take_while(|&s| multi_slice_feasible(dims, rank, r, s)).last().unwrap_or(0),
    }
}

/// Whether `r*s <= min{IK, JK/s, IJ/r} / (4 ceil_pow2(F))`.
pub fn multi_slice_feasible(dims: [usize; 3], rank: usize, r: usize, s: usize) -> bool {
    if r == 0 || s == 0 {
        return false;
    }
    let [i, j, k] = dims.map(|d| d as f64);
    let c = 4.0 * ceil_pow2(rank.max(1) as u64) as f64;
    let bound = (i * k).min(j * k / s as f64).min(i * j / r as f64) / c;
    (r * s) as f64 <= bound
}

/// Per-step iteration budgets and solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetsinaConfig {
    pub solver: SolverConfig,
    /// ALS sweep and Gauss-Newton budget of the frame-sum CPD.
    pub init_iters: usize,
    /// Budget of each per-class refinement CPD.
    pub refine_iters: usize,
    /// Budget of the coupled solve.
    pub final_iters: usize,
}

impl Default for RetsinaConfig {
    fn default() -> Self {
        Self { solver: SolverConfig::default(), init_iters: 200, refine_iters: 2, final_iters: 100 }
    }
}

impl RetsinaConfig {
    fn budget(&self, iters: usize) -> SolverConfig {
        SolverConfig { max_iters: iters.max(1), gn_iters: iters, ..self.solver.clone() }
    }
}

/// Outcome of a RETSINA run.
#[derive(Debug, Clone, Serialize)]
pub struct RetsinaReport {
    pub r: usize,
    pub s: usize,
    pub rank: usize,
    #[serde(skip)]
    pub factors: FactorTriple,
    /// Model values on missing entries, observations elsewhere.
    #[serde(skip)]
    pub estimate: Tensor3,
    pub init_history: Vec<f64>,
    pub refine_histories: Vec<Vec<f64>>,
    pub final_history: Vec<f64>,
    /// Wall-clock seconds of initialization, refinement and the coupled solve.
    pub seconds: [f64; 3],
    pub sampling_ratio: f64,
    /// Relative residual of the model on the observed entries.
    pub observed_residual: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl RetsinaReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Single-slice completion with per-class refinement.
pub fn retsina(x_obs: &Tensor3, plan: &AccelPlan, rank: usize, cfg: &RetsinaConfig) -> Result<RetsinaReport> {
    run(x_obs, plan, rank, cfg, true)
}

/// Multi-slice completion: same initialization, no refinement.
pub fn ms_retsina(x_obs: &Tensor3, plan: &AccelPlan, rank: usize, cfg: &RetsinaConfig) -> Result<RetsinaReport> {
    run(x_obs, plan, rank, cfg, false)
}

/// Sums `n` consecutive frames after frame 0. Trailing frames that do not fill a
/// block are added to the last block.
pub fn frame_sum(x_obs: &Tensor3, n: usize) -> Result<Tensor3> {
    let [ni, nj, nk] = x_obs.dims();
    let blocks = (nj - 1) / n;
    if blocks == 0 {
        return Err(Error::Shape(format!("{nj} frames give no complete block of {n} frames after frame 0")));
    }
    let mut out = Tensor3::zeros([ni, blocks, nk]);
    for k in 0..nk {
        for j in 1..nj {
            let b = ((j - 1) / n).min(blocks - 1);
            for i in 0..ni {
                let v = out.get(i, b, k) + x_obs.get(i, j, k);
                out.set(i, b, k, v);
            }
        }
    }
    Ok(out)
}

/// The frame-sum tensor is only approximately low rank, so restarts would all run
/// to budget: one solve from the algebraic start, or a seeded random start.
fn approximate_cpd(t: &Tensor3, rank: usize, cfg: &SolverConfig) -> Result<SolveOutcome> {
    match algebraic_init_any_mode(t, rank) {
        Ok(init) => cpd(t, rank, &SolverConfig { init: InitKind::Provided, ..cfg.clone() }, Some(&init)),
        Err(e) => {
            log::info!("algebraic initialization skipped: {e}");
            cpd(t, rank, &SolverConfig { init: InitKind::Random, ..cfg.clone() }, None)
        }
    }
}

fn run(x_obs: &Tensor3, plan: &AccelPlan, rank: usize, cfg: &RetsinaConfig, refine: bool) -> Result<RetsinaReport> {
    cfg.solver.validate()?;
    plan.validate()?;
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    let dims = x_obs.dims();
    let mask = accel_mask(plan, dims)?;
    let observed_count = mask.iter().filter(|&&m| m).count();
    let sampling_ratio = observed_count as f64 / mask.len() as f64;
    let mut warnings = Vec::new();
    let mut seconds = [0.0; 3];

    if plan.n() == 1 {
        let t0 = Instant::now();
        let (outcome, rel) = robust_cpd(x_obs, rank, &cfg.budget(cfg.init_iters), 0)?;
        seconds[0] = t0.elapsed().as_secs_f64();
        return Ok(RetsinaReport {
            r: plan.r,
            s: plan.s,
            rank,
            factors: outcome.factors,
            estimate: x_obs.clone(),
            init_history: outcome.history,
            refine_histories: Vec::new(),
            final_history: Vec::new(),
            seconds,
            sampling_ratio,
            observed_residual: rel,
            converged: true,
            warnings,
        });
    }

    let footprints = plan.footprints(dims[1])?;
    let ys: Vec<Tensor3> =
        footprints.iter().map(|fp| x_obs.select(Some(&fp[0]), Some(&fp[1]), Some(&fp[2]))).collect::<Result<_>>()?;

    // Initialization: A and C from the frame-sum tensor, B class by class.
    let t0 = Instant::now();
    let summed = frame_sum(x_obs, plan.n())?;
    let [_, jn, _] = summed.dims();
    let generic = 4 * ceil_pow2(rank as u64) as usize;
    if dims[0] * jn < generic || jn * dims[2] < generic || dims[0] * dims[2] < generic {
        let w = format!("frame-sum tensor {:?} is below the generic uniqueness bound for rank {rank}", summed.dims());
        log::warn!("{w}");
        warnings.push(w);
    }
    let init_outcome = approximate_cpd(&summed, rank, &cfg.budget(cfg.init_iters))?;
    let (a, c) = (init_outcome.factors.a.clone(), init_outcome.factors.c.clone());
    let mut b = crate::linalg::CMat::zeros(dims[1], rank);
    let mut b_counts = vec![0usize; dims[1]];
    for (fp, y) in footprints.iter().zip(&ys) {
        let kr = khatri_rao(&gather_rows(&c, Some(&fp[2])), &gather_rows(&a, Some(&fp[0])))?;
        let bt = lstsq(&kr, &unfold(y, Mode::Two));
        for (l, &j) in fp[1].indices().iter().enumerate() {
            b_counts[j] += 1;
            for f in 0..rank {
                b[(j, f)] += bt[(f, l)];
            }
        }
    }
    for (j, &n) in b_counts.iter().enumerate() {
        for f in 0..rank {
            b[(j, f)] /= num_complex::Complex64::new(n as f64, 0.0);
        }
    }
    let mut factors = FactorTriple::new(a, b, c)?;
    seconds[0] = t0.elapsed().as_secs_f64();

    // Refinement: class 0 freely, the others with C fixed and scales pinned by frame 0.
    let t1 = Instant::now();
    let mut refine_histories = Vec::new();
    if refine {
        let refine_cfg = SolverConfig { init: InitKind::Provided, ..cfg.budget(cfg.refine_iters) };
        let local = |d: usize, f: &FactorTriple| f.select_rows(Some(&footprints[d][0]), Some(&footprints[d][1]), Some(&footprints[d][2]));
        let first = cpd(&ys[0], rank, &refine_cfg, Some(&local(0, &factors)))?;
        factors.c = first.factors.c.clone();
        let rest: Vec<Result<SolveOutcome>> = (1..ys.len())
            .into_par_iter()
            .map(|d| cpd_fixed(&ys[d], &local(d, &factors), &refine_cfg, [false, false, true]))
            .collect();
        let reference_b0: Vec<_> = (0..rank).map(|f| first.factors.b[(0, f)]).collect();
        let mut outcomes = vec![first];
        outcomes.extend(rest.into_iter().collect::<Result<Vec<_>>>()?);
        let mut b_sum = crate::linalg::CMat::zeros(dims[1], rank);
        let mut b_counts = vec![0usize; dims[1]];
        for (d, o) in outcomes.iter().enumerate() {
            let fp = &footprints[d];
            let mut sub = o.factors.clone();
            for f in 0..rank {
                let b0 = sub.b[(0, f)];
                if b0.norm() > 1e-12 * sub.b.column(f).norm() {
                    let s = reference_b0[f] / b0;
                    for v in sub.b.column_mut(f).iter_mut() {
                        *v *= s;
                    }
                    for v in sub.a.column_mut(f).iter_mut() {
                        *v /= s;
                    }
                } else {
                    warnings.push(format!("class {d}: frame-0 entry of temporal column {f} vanishes; scale left as solved"));
                }
            }
            for (l, &i) in fp[0].indices().iter().enumerate() {
                for f in 0..rank {
                    factors.a[(i, f)] = sub.a[(l, f)];
                }
            }
            for (l, &j) in fp[1].indices().iter().enumerate() {
                b_counts[j] += 1;
                for f in 0..rank {
                    b_sum[(j, f)] += sub.b[(l, f)];
                }
            }
            refine_histories.push(o.history.clone());
        }
        for (j, &n) in b_counts.iter().enumerate() {
            for f in 0..rank {
                factors.b[(j, f)] = b_sum[(j, f)] / num_complex::Complex64::new(n as f64, 0.0);
            }
        }
    }
    seconds[1] = t1.elapsed().as_secs_f64();

    // Coupled solve over every sampling class.
    let t2 = Instant::now();
    let terms: Vec<CoupledTerm> = footprints
        .iter()
        .zip(ys)
        .map(|(fp, y)| CoupledTerm::new(y, fp[0].clone(), fp[1].clone(), fp[2].clone()))
        .collect::<Result<_>>()?;
    let final_cfg = SolverConfig { init: InitKind::Provided, ..cfg.budget(cfg.final_iters) };
    let outcome = coupled_cpd(&terms, dims, rank, &factors, &final_cfg)?;
    seconds[2] = t2.elapsed().as_secs_f64();

    let observed_norm2: f64 = terms.iter().map(|t| t.y.norm_sqr()).sum();
    let observed_residual = if observed_norm2 > 0.0 { (outcome.objective() / observed_norm2).sqrt() } else { 0.0 };
    let converged = observed_residual <= cfg.solver.residual_tol;
    if !converged {
        let w = format!("observed relative residual {observed_residual:.2e} above tolerance");
        log::warn!("{w}");
        warnings.push(w);
    }
    let mut estimate = cpd_reconstruct(&outcome.factors);
    for ((e, &m), &x) in estimate.data_mut().iter_mut().zip(&mask).zip(x_obs.data()) {
        if m {
            *e = x;
        }
    }
    Ok(RetsinaReport {
        r: plan.r,
        s: plan.s,
        rank,
        factors: outcome.factors,
        estimate,
        init_history: init_outcome.history,
        refine_histories,
        final_history: outcome.history,
        seconds,
        sampling_ratio,
        observed_residual,
        converged,
        warnings,
    })
}
