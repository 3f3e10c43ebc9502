//! Regular slab, fiber and entry sampling plans: construction, validation,
//! application, sampling ratios and identifiability checks.

mod checks;
mod json;
mod regular;
mod rules;

use serde::Serialize;

use crate::cpd::CoupledTerm;
use crate::error::{Error, Result};
use crate::selection::SelectionSet;
use crate::tensor::{Mode, Tensor3};

pub use checks::{check_deterministic, check_generic, has_repeated_entries, DeterministicVerdict, GenericVerdict};
pub use regular::{make_regular_plan, RegularParams};
pub use rules::{alignment_graph, validate_entry_rules, validate_fiber_rules, validate_plan, Rule, RuleReport, RuleViolation};

/// Sampling mechanism tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Slab,
    Fiber,
    Entry,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Slab => "slab",
            Mechanism::Fiber => "fiber",
            Mechanism::Entry => "entry",
        }
    }
}

impl std::str::FromStr for Mechanism {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slab" => Ok(Mechanism::Slab),
            "fiber" => Ok(Mechanism::Fiber),
            "entry" => Ok(Mechanism::Entry),
            other => Err(Error::InvalidArgument(format!("unknown mechanism {other:?}"))),
        }
    }
}

/// Horizontal slabs `X(S_r, :, :)` and frontal slabs `X(:, :, S_f)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlabPlan {
    pub horizontal: SelectionSet,
    pub frontal: SelectionSet,
}

/// All fibers `X(i, j, :)` with `i` in `rows` and `j` in `cols`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiberPattern {
    pub rows: SelectionSet,
    pub cols: SelectionSet,
}

/// All entries `X(i, j, k)` on the grid `rows x cols x fibers`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryPattern {
    pub rows: SelectionSet,
    pub cols: SelectionSet,
    pub fibers: SelectionSet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanKind {
    Slab(SlabPlan),
    Fiber(Vec<FiberPattern>),
    Entry(Vec<EntryPattern>),
}

/// A sampling plan together with the ambient dims it refers to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingPlan {
    dims: [usize; 3],
    kind: PlanKind,
}

/// The `rows x cols x fibers` grid observed by one sub-tensor.
pub type Footprint = [SelectionSet; 3];

impl SamplingPlan {
    pub fn new(dims: [usize; 3], kind: PlanKind) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("dims {dims:?} must be positive")));
        }
        let plan = Self { dims, kind };
        match &plan.kind {
            PlanKind::Fiber(p) if p.is_empty() => return Err(Error::InvalidArgument("fiber plan has no patterns".into())),
            PlanKind::Entry(p) if p.is_empty() => return Err(Error::InvalidArgument("entry plan has no patterns".into())),
            _ => {}
        }
        for fp in plan.footprints() {
            for m in 0..3 {
                if fp[m].ambient() != dims[m] {
                    return Err(Error::Shape(format!(
                        "{} selection over {} but dims are {dims:?}",
                        Mode::ALL[m].name(),
                        fp[m].ambient()
                    )));
                }
            }
        }
        Ok(plan)
    }

    pub fn slab(dims: [usize; 3], horizontal: SelectionSet, frontal: SelectionSet) -> Result<Self> {
        Self::new(dims, PlanKind::Slab(SlabPlan { horizontal, frontal }))
    }

    pub fn fiber(dims: [usize; 3], patterns: Vec<FiberPattern>) -> Result<Self> {
        Self::new(dims, PlanKind::Fiber(patterns))
    }

    pub fn entry(dims: [usize; 3], patterns: Vec<EntryPattern>) -> Result<Self> {
        Self::new(dims, PlanKind::Entry(patterns))
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn kind(&self) -> &PlanKind {
        &self.kind
    }

    pub fn mechanism(&self) -> Mechanism {
        match self.kind {
            PlanKind::Slab(_) => Mechanism::Slab,
            PlanKind::Fiber(_) => Mechanism::Fiber,
            PlanKind::Entry(_) => Mechanism::Entry,
        }
    }

    /// Number of observed sub-tensors (2 for slab plans).
    pub fn num_terms(&self) -> usize {
        match &self.kind {
            PlanKind::Slab(_) => 2,
            PlanKind::Fiber(p) => p.len(),
            PlanKind::Entry(p) => p.len(),
        }
    }

    /// Observed grid of every sub-tensor, in `apply` order.
    pub fn footprints(&self) -> Vec<Footprint> {
        let [i, j, k] = self.dims;
        match &self.kind {
            PlanKind::Slab(s) => vec![
                [s.horizontal.clone(), SelectionSet::full(j), SelectionSet::full(k)],
                [SelectionSet::full(i), SelectionSet::full(j), s.frontal.clone()],
            ],
            PlanKind::Fiber(p) => p.iter().map(|f| [f.rows.clone(), f.cols.clone(), SelectionSet::full(k)]).collect(),
            PlanKind::Entry(p) => p.iter().map(|e| [e.rows.clone(), e.cols.clone(), e.fibers.clone()]).collect(),
        }
    }

    /// Number of distinct observed coordinates.
    pub fn observed_count(&self) -> u64 {
        let [ni, nj, nk] = self.dims;
        let words = nj.div_ceil(64);
        let fps = self.footprints();
        let col_masks: Vec<Vec<u64>> = fps
            .iter()
            .map(|fp| {
                let mut m = vec![0u64; words];
                for &j in fp[1].indices() {
                    m[j / 64] |= 1 << (j % 64);
                }
                m
            })
            .collect();
        let mut by_fiber: Vec<Vec<usize>> = vec![Vec::new(); nk];
        for (d, fp) in fps.iter().enumerate() {
            for &k in fp[2].indices() {
                by_fiber[k].push(d);
            }
        }
        let mut bits = vec![0u64; ni * words];
        let mut total = 0u64;
        for patterns in by_fiber {
            if patterns.is_empty() {
                continue;
            }
            bits.fill(0);
            for d in patterns {
                for &i in fps[d][0].indices() {
                    for (w, m) in bits[i * words..(i + 1) * words].iter_mut().zip(&col_masks[d]) {
                        *w |= m;
                    }
                }
            }
            total += bits.iter().map(|w| u64::from(w.count_ones())).sum::<u64>();
        }
        total
    }

    /// Fraction of the `I J K` entries that the plan observes (overlaps counted once).
    pub fn sampling_ratio(&self) -> f64 {
        let total = (self.dims[0] * self.dims[1] * self.dims[2]) as f64;
        self.observed_count() as f64 / total
    }

    /// Extracts the observed sub-tensors.
    pub fn apply(&self, t: &Tensor3) -> Result<Vec<Tensor3>> {
        if t.dims() != self.dims {
            return Err(Error::Shape(format!("tensor dims {:?} but plan dims {:?}", t.dims(), self.dims)));
        }
        self.footprints().iter().map(|fp| t.select(Some(&fp[0]), Some(&fp[1]), Some(&fp[2]))).collect()
    }

    /// Pairs observed sub-tensors with their selections for the coupled solver.
    pub fn terms(&self, ys: &[Tensor3]) -> Result<Vec<CoupledTerm>> {
        let fps = self.footprints();
        if ys.len() != fps.len() {
            return Err(Error::Shape(format!("{} sub-tensors for a plan with {} terms", ys.len(), fps.len())));
        }
        ys.iter()
            .zip(fps)
            .map(|(y, [r, c, f])| CoupledTerm::new(y.clone(), r, c, f))
            .collect()
    }

    /// Boolean mask over all coordinates (column-major), true where observed.
    pub fn mask(&self) -> Vec<bool> {
        let [ni, nj, _] = self.dims;
        let mut mask = vec![false; self.dims.iter().product()];
        for fp in self.footprints() {
            for &k in fp[2].indices() {
                for &j in fp[1].indices() {
                    let base = ni * (j + nj * k);
                    for &i in fp[0].indices() {
                        mask[base + i] = true;
                    }
                }
            }
        }
        mask
    }
}

/// Convenience: sampling ratio of `plan` (its own dims are used).
pub fn sampling_ratio(plan: &SamplingPlan) -> f64 {
    plan.sampling_ratio()
}

/// Convenience: sub-tensors observed by `plan`.
pub fn apply(plan: &SamplingPlan, t: &Tensor3) -> Result<Vec<Tensor3>> {
    plan.apply(t)
}
