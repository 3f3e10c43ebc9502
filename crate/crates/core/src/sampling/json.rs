//! JSON form of a plan:
//! `{"kind": "slab"|"fiber"|"entry", "dims": [I, J, K], "patterns": [{"rows", "cols", "fibers"}], "one_based": bool}`.
//!
//! An omitted selection means every index of that mode. A slab plan is written
//! as two patterns, `{"rows": S_r}` then `{"fibers": S_f}`. Indices are 1-based
//! when `one_based` is true and 0-based otherwise.

use serde::{Deserialize, Serialize};

use super::{EntryPattern, FiberPattern, Mechanism, PlanKind, SamplingPlan};
use crate::error::{Error, Result};
use crate::selection::SelectionSet;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlanJson {
    kind: Mechanism,
    dims: [usize; 3],
    patterns: Vec<PatternJson>,
    #[serde(default)]
    one_based: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatternJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rows: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cols: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fibers: Option<Vec<usize>>,
}

fn to_set(v: &Option<Vec<usize>>, ambient: usize, one_based: bool) -> Result<SelectionSet> {
    match v {
        None => Ok(SelectionSet::full(ambient)),
        Some(idx) if one_based => SelectionSet::from_one_based(idx, ambient),
        Some(idx) => SelectionSet::from_unsorted(idx.clone(), ambient),
    }
}

fn from_set(s: &SelectionSet, one_based: bool) -> Vec<usize> {
    if one_based {
        s.one_based()
    } else {
        s.indices().to_vec()
    }
}

fn must_be_full(v: &Option<Vec<usize>>, ambient: usize, what: &str) -> Result<()> {
    match v {
        Some(idx) if idx.len() != ambient => Err(Error::Format(format!("{what} must be omitted or list every index"))),
        _ => Ok(()),
    }
}

impl SamplingPlan {
    fn to_json_repr(&self, one_based: bool) -> PlanJson {
        let conv = |s: &SelectionSet| Some(from_set(s, one_based));
        let patterns = match self.kind() {
            PlanKind::Slab(s) => vec![
                PatternJson { rows: conv(&s.horizontal), ..Default::default() },
                PatternJson { fibers: conv(&s.frontal), ..Default::default() },
            ],
            PlanKind::Fiber(p) => {
                p.iter().map(|f| PatternJson { rows: conv(&f.rows), cols: conv(&f.cols), fibers: None }).collect()
            }
            PlanKind::Entry(p) => p
                .iter()
                .map(|e| PatternJson { rows: conv(&e.rows), cols: conv(&e.cols), fibers: conv(&e.fibers) })
                .collect(),
        };
        PlanJson { kind: self.mechanism(), dims: self.dims(), patterns, one_based }
    }

    fn from_json_repr(r: PlanJson) -> Result<Self> {
        let [ni, nj, nk] = r.dims;
        if r.dims.iter().any(|&d| d == 0) {
            return Err(Error::Format(format!("dims {:?} must be positive", r.dims)));
        }
        let ob = r.one_based;
        match r.kind {
            Mechanism::Slab => {
                if r.patterns.len() != 2 {
                    return Err(Error::Format("a slab plan has exactly two patterns: {rows} then {fibers}".into()));
                }
                let (h, f) = (&r.patterns[0], &r.patterns[1]);
                must_be_full(&h.cols, nj, "slab columns")?;
                must_be_full(&h.fibers, nk, "fibers of the horizontal-slab pattern")?;
                must_be_full(&f.rows, ni, "rows of the frontal-slab pattern")?;
                must_be_full(&f.cols, nj, "slab columns")?;
                SamplingPlan::slab(r.dims, to_set(&h.rows, ni, ob)?, to_set(&f.fibers, nk, ob)?)
            }
            Mechanism::Fiber => {
                let patterns = r
                    .patterns
                    .iter()
                    .map(|p| {
                        must_be_full(&p.fibers, nk, "fibers of a fiber pattern")?;
                        Ok(FiberPattern { rows: to_set(&p.rows, ni, ob)?, cols: to_set(&p.cols, nj, ob)? })
                    })
                    .collect::<Result<Vec<_>>>()?;
                SamplingPlan::fiber(r.dims, patterns)
            }
            Mechanism::Entry => {
                let patterns = r
                    .patterns
                    .iter()
                    .map(|p| {
                        Ok(EntryPattern {
                            rows: to_set(&p.rows, ni, ob)?,
                            cols: to_set(&p.cols, nj, ob)?,
                            fibers: to_set(&p.fibers, nk, ob)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                SamplingPlan::entry(r.dims, patterns)
            }
        }
    }

    /// JSON text of the plan with 0-based or 1-based indices.
    pub fn to_json(&self, one_based: bool) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_json_repr(one_based))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let repr: PlanJson = serde_json::from_str(text)?;
        Self::from_json_repr(repr)
    }
}

impl Serialize for SamplingPlan {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json_repr(false).serialize(s)
    }
}

impl<'de> Deserialize<'de> for SamplingPlan {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = PlanJson::deserialize(d)?;
        SamplingPlan::from_json_repr(repr).map_err(serde::de::Error::custom)
    }
}
