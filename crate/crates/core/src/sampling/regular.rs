use serde::{Deserialize, Serialize};

use super::{validate_plan, EntryPattern, FiberPattern, Mechanism, SamplingPlan};
use crate::error::{Error, Result};
use crate::selection::SelectionSet;
use crate::tensor::Mode;

/// Strides and offsets of an equispaced plan, per mode `(rows, cols, fibers)`.
///
/// Slab plans use the row and fiber entries; fiber plans use rows and columns;
/// entry plans use all three. `anchor` is the column that every fiber pattern
/// samples in full (and the first of the two anchor columns of an entry plan).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegularParams {
    pub strides: [usize; 3],
    pub offsets: [usize; 3],
    pub anchor: usize,
}

impl Default for RegularParams {
    fn default() -> Self {
        Self { strides: [1, 1, 1], offsets: [0, 0, 0], anchor: 0 }
    }
}

impl RegularParams {
    pub fn with_strides(strides: [usize; 3]) -> Self {
        Self { strides, ..Default::default() }
    }
}

fn residue(class: usize, stride: usize, ambient: usize) -> Result<SelectionSet> {
    SelectionSet::strided(class % stride, stride, ambient)
}

fn with_extra(s: SelectionSet, extra: &[usize]) -> Result<SelectionSet> {
    let mut idx = s.indices().to_vec();
    idx.extend_from_slice(extra);
    SelectionSet::from_unsorted(idx, s.ambient())
}

/// Builds an equispaced plan.
///
/// Pattern `d` takes the indices congruent to `offset + d` modulo each stride,
/// for `d` below the largest relevant stride. Fiber plans add the anchor column
/// to every pattern, so `X(:, anchor, :)` is sampled in full and every pattern
/// overlaps every other. Entry plans add one anchor pattern that samples all
/// rows and fibers of two columns. Parameters that cannot satisfy the rules
/// are rejected with the violated rule named.
pub fn make_regular_plan(kind: Mechanism, dims: [usize; 3], params: &RegularParams) -> Result<SamplingPlan> {
    let used: &[usize] = match kind {
        Mechanism::Slab => &[0, 2],
        Mechanism::Fiber => &[0, 1],
        Mechanism::Entry => &[0, 1, 2],
    };
    for &m in used {
        let s = params.strides[m];
        if s == 0 {
            return Err(Error::InvalidArgument(format!("{} stride must be at least 1", Mode::ALL[m].name())));
        }
        if s > dims[m] {
            return Err(Error::RulesViolated(format!(
                "rule (a) minimum pattern size: {} stride {s} exceeds dimension {}",
                Mode::ALL[m].name(),
                dims[m]
            )));
        }
        if params.offsets[m] >= dims[m] {
            return Err(Error::InvalidArgument(format!(
                "{} offset {} out of range for dimension {}",
                Mode::ALL[m].name(),
                params.offsets[m],
                dims[m]
            )));
        }
    }
    let [sr, sc, sf] = params.strides;
    let [or, oc, of] = params.offsets;
    let plan = match kind {
        Mechanism::Slab => SamplingPlan::slab(
            dims,
            SelectionSet::strided(or, sr, dims[0])?,
            SelectionSet::strided(of, sf, dims[2])?,
        )?,
        Mechanism::Fiber => {
            if params.anchor >= dims[1] {
                return Err(Error::InvalidArgument(format!("anchor column {} out of range", params.anchor)));
            }
            let count = sr.max(sc);
            let patterns = (0..count)
                .map(|d| {
                    let rows = residue(or + d, sr, dims[0])?;
                    let cols = residue(oc + d, sc, dims[1])?;
                    let cols = if count > 1 { with_extra(cols, &[params.anchor])? } else { cols };
                    Ok(FiberPattern { rows, cols })
                })
                .collect::<Result<Vec<_>>>()?;
            SamplingPlan::fiber(dims, patterns)?
        }
        Mechanism::Entry => {
            let count = sr.max(sc).max(sf);
            let mut patterns = (0..count)
                .map(|d| {
                    Ok(EntryPattern {
                        rows: residue(or + d, sr, dims[0])?,
                        cols: residue(oc + d, sc, dims[1])?,
                        fibers: residue(of + d, sf, dims[2])?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if count > 1 {
                if dims[1] < 2 {
                    return Err(Error::RulesViolated("rule (a) minimum pattern size: anchor needs two columns".into()));
                }
                let j0 = params.anchor.min(dims[1] - 1);
                let j1 = if j0 + 1 < dims[1] { j0 + 1 } else { j0 - 1 };
                patterns.push(EntryPattern {
                    rows: SelectionSet::full(dims[0]),
                    cols: SelectionSet::from_unsorted(vec![j0, j1], dims[1])?,
                    fibers: SelectionSet::full(dims[2]),
                });
            }
            SamplingPlan::entry(dims, patterns)?
        }
    };
    let report = validate_plan(&plan);
    if !report.is_valid() {
        return Err(Error::RulesViolated(report.summary()));
    }
    Ok(plan)
}
