//! Resolution of the permutation and scaling ambiguities between sub-tensor
//! CPDs through their shared rows, and assembly of the global factors.

mod hungarian;

use std::collections::VecDeque;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::factors::FactorTriple;
use crate::linalg::CMat;
use crate::selection::SelectionSet;
use crate::tensor::Mode;

pub use hungarian::{assignment_cost, hungarian};

const DEGENERATE: f64 = 1e-12;

/// CPD factors of one observed sub-tensor with the selections that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SubFactors {
    pub pattern: usize,
    pub factors: FactorTriple,
    pub selections: [SelectionSet; 3],
}

impl SubFactors {
    pub fn new(pattern: usize, factors: FactorTriple, selections: [SelectionSet; 3]) -> Result<Self> {
        let dims = factors.dims();
        for m in 0..3 {
            if dims[m] != selections[m].len() {
                return Err(Error::Shape(format!(
                    "pattern {pattern}: factor {} has {} rows but its selection has {}",
                    Mode::ALL[m].name(),
                    dims[m],
                    selections[m].len()
                )));
            }
        }
        Ok(Self { pattern, factors, selections })
    }

    /// Rows of factor `mode` at the given global indices (all must be selected).
    fn rows_at(&self, mode: usize, global: &[usize]) -> Option<CMat> {
        let sel = &self.selections[mode];
        let pos: Option<Vec<usize>> = global.iter().map(|&g| sel.position(g)).collect();
        let pos = pos?;
        let m = self.factors.factor(mode);
        Some(CMat::from_fn(pos.len(), m.ncols(), |r, f| m[(pos[r], f)]))
    }

    /// Column permutation then per-mode column scaling.
    pub fn aligned(&self, a: &Assignment) -> SubFactors {
        SubFactors {
            pattern: self.pattern,
            factors: self.factors.permute_columns(&a.permutation).scale_columns(&a.scales),
            selections: self.selections.clone(),
        }
    }
}

/// Column permutation and per-mode column scales that map one sub-CPD onto a reference.
///
/// Column `f` of the aligned factors is column `permutation[f]` of the original,
/// multiplied by `scales[mode][f]`; the three scales of a column multiply to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub permutation: Vec<usize>,
    pub scales: [Vec<Complex64>; 3],
}

impl Assignment {
    pub fn identity(rank: usize) -> Self {
        let ones = vec![Complex64::new(1.0, 0.0); rank];
        Self { permutation: (0..rank).collect(), scales: [ones.clone(), ones.clone(), ones] }
    }
}

fn alignment_error(reference: &SubFactors, other: &SubFactors, reason: impl Into<String>) -> Error {
    Error::Alignment { reference: reference.pattern, other: other.pattern, reason: reason.into() }
}

/// Matches the columns of `other` to those of `reference` using their rows at
/// `shared` in factor `mode`.
///
/// Each column is divided by its entry in an anchor row, which removes the scaling
/// ambiguity; the anchor is the shared row whose smallest relative column entry is
/// largest. The assignment minimizes summed squared distances between normalized
/// columns. `result[f]` is the column of `other` that corresponds to column `f` of
/// `reference`.
pub fn match_permutation(
    reference: &SubFactors,
    other: &SubFactors,
    mode: usize,
    shared: &[usize],
) -> Result<Vec<usize>> {
    if shared.len() < 2 {
        return Err(alignment_error(
            reference,
            other,
            format!("{} shared {} index(es), need at least 2 to match columns", shared.len(), Mode::ALL[mode].name()),
        ));
    }
    let r = reference
        .rows_at(mode, shared)
        .ok_or_else(|| alignment_error(reference, other, "shared index not selected by the reference"))?;
    let o = other
        .rows_at(mode, shared)
        .ok_or_else(|| alignment_error(reference, other, "shared index not selected by the other pattern"))?;
    let rank = r.ncols();
    if o.ncols() != rank {
        return Err(alignment_error(reference, other, "rank mismatch"));
    }
    let anchor = choose_anchor(&r, &o)
        .ok_or_else(|| alignment_error(reference, other, "every candidate anchor row is degenerate"))?;
    let normalize = |m: &CMat| CMat::from_fn(m.nrows(), rank, |i, f| m[(i, f)] / m[(anchor, f)]);
    let (rn, on) = (normalize(&r), normalize(&o));
    let cost = DMatrix::from_fn(rank, rank, |f, g| (rn.column(f) - on.column(g)).norm_squared());
    hungarian(&cost)
}

fn choose_anchor(r: &CMat, o: &CMat) -> Option<usize> {
    let col_norms = |m: &CMat| (0..m.ncols()).map(|f| m.column(f).norm()).collect::<Vec<_>>();
    let (nr, no) = (col_norms(r), col_norms(o));
    let score = |row: usize| {
        (0..r.ncols())
            .map(|f| {
                let a = if nr[f] > 0.0 { r[(row, f)].norm() / nr[f] } else { 0.0 };
                let b = if no[f] > 0.0 { o[(row, f)].norm() / no[f] } else { 0.0 };
                a.min(b)
            })
            .fold(f64::INFINITY, f64::min)
    };
    let (best, s) = (0..r.nrows()).map(|row| (row, score(row))).fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    (s > DEGENERATE).then_some(best)
}

/// Estimates the per-mode column scales of `other` relative to `reference`, once
/// `permutation` has been applied to `other`.
///
/// For every mode with shared rows, a least-squares ratio per column is fitted on
/// the rows where the reference entry is not negligible. The two modes with the most
/// usable equations are used and the third scale follows from the unit-product
/// constraint. The returned scales map `other` onto the reference frame.
pub fn resolve_scaling(reference: &SubFactors, other: &SubFactors, permutation: &[usize]) -> Result<Assignment> {
    let rank = reference.factors.rank();
    if permutation.len() != rank || other.factors.rank() != rank {
        return Err(alignment_error(reference, other, "permutation length does not match the rank"));
    }
    let permuted = other.factors.permute_columns(permutation);
    // lambda[m][f] with other = reference * lambda on shared rows.
    let mut fitted: Vec<(usize, usize, Vec<Complex64>)> = Vec::new();
    for m in 0..3 {
        let shared = reference.selections[m].intersection(&other.selections[m]);
        if shared.is_empty() {
            continue;
        }
        let r = reference.rows_at(m, &shared).expect("shared rows are selected");
        let o_sub = SubFactors { factors: permuted.clone(), ..other.clone() };
        let o = o_sub.rows_at(m, &shared).expect("shared rows are selected");
        let mut lambdas = Vec::with_capacity(rank);
        let mut usable = usize::MAX;
        for f in 0..rank {
            let scale = r.column(f).norm();
            let (mut num, mut den, mut count) = (Complex64::new(0.0, 0.0), 0.0, 0usize);
            for i in 0..r.nrows() {
                if r[(i, f)].norm() > DEGENERATE * scale && scale > 0.0 {
                    num += r[(i, f)].conj() * o[(i, f)];
                    den += r[(i, f)].norm_sqr();
                    count += 1;
                }
            }
            usable = usable.min(count);
            lambdas.push(if count > 0 { num / den } else { Complex64::new(0.0, 0.0) });
        }
        if usable > 0 && lambdas.iter().all(|l| l.norm() > 0.0 && l.is_finite()) {
            fitted.push((usable, m, lambdas));
        }
    }
    fitted.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    if fitted.len() < 2 {
        return Err(alignment_error(
            reference,
            other,
            "scales need usable shared rows in at least two modes",
        ));
    }
    let mut lambda: [Option<Vec<Complex64>>; 3] = Default::default();
    for (_, m, l) in fitted.into_iter().take(2) {
        lambda[m] = Some(l);
    }
    let missing = (0..3).find(|&m| lambda[m].is_none()).expect("exactly one mode left");
    let third: Vec<Complex64> = (0..rank)
        .map(|f| {
            let prod: Complex64 = (0..3).filter(|&m| m != missing).map(|m| lambda[m].as_ref().unwrap()[f]).product();
            Complex64::new(1.0, 0.0) / prod
        })
        .collect();
    lambda[missing] = Some(third);
    let scales = lambda.map(|l| l.unwrap().iter().map(|x| Complex64::new(1.0, 0.0) / x).collect::<Vec<_>>());
    Ok(Assignment { permutation: permutation.to_vec(), scales })
}

/// Aligns every sub-CPD onto pattern 0, breadth first over `graph`
/// (adjacency lists of alignable pattern pairs).
pub fn align_all(subs: &[SubFactors], graph: &[Vec<usize>]) -> Result<Vec<SubFactors>> {
    let n = subs.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut aligned: Vec<Option<SubFactors>> = vec![None; n];
    aligned[0] = Some(subs[0].clone());
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &v in &graph[u] {
            if aligned[v].is_some() {
                continue;
            }
            let reference = aligned[u].as_ref().expect("queued patterns are aligned");
            let assignment = align_pair(reference, &subs[v])?;
            aligned[v] = Some(subs[v].aligned(&assignment));
            queue.push_back(v);
        }
    }
    aligned
        .into_iter()
        .enumerate()
        .map(|(d, a)| {
            a.ok_or_else(|| Error::Alignment {
                reference: 0,
                other: d,
                reason: "pattern is not connected to the reference through alignable overlaps".into(),
            })
        })
        .collect()
}

/// Permutation from the mode with the largest overlap (at least two indices),
/// then scaling from all overlapping modes.
pub fn align_pair(reference: &SubFactors, other: &SubFactors) -> Result<Assignment> {
    let overlaps: Vec<Vec<usize>> = (0..3).map(|m| reference.selections[m].intersection(&other.selections[m])).collect();
    let mode = (0..3)
        .filter(|&m| overlaps[m].len() >= 2)
        .max_by(|&a, &b| overlaps[a].len().cmp(&overlaps[b].len()).then(b.cmp(&a)))
        .ok_or_else(|| alignment_error(reference, other, "no mode shares two or more indices"))?;
    let perm = match_permutation(reference, other, mode, &overlaps[mode])?;
    resolve_scaling(reference, other, &perm)
}

/// Writes each aligned sub-factor's rows into the global factors, averaging rows
/// observed by several patterns.
pub fn stitch(aligned: &[SubFactors], dims: [usize; 3], rank: usize) -> Result<FactorTriple> {
    let mut sums = [CMat::zeros(dims[0], rank), CMat::zeros(dims[1], rank), CMat::zeros(dims[2], rank)];
    let mut counts = [vec![0usize; dims[0]], vec![0usize; dims[1]], vec![0usize; dims[2]]];
    for s in aligned {
        if s.factors.rank() != rank {
            return Err(Error::Shape(format!("pattern {} has rank {}, expected {rank}", s.pattern, s.factors.rank())));
        }
        for m in 0..3 {
            if s.selections[m].ambient() != dims[m] {
                return Err(Error::Shape(format!("pattern {} selection does not match dims {dims:?}", s.pattern)));
            }
            let local = s.factors.factor(m);
            for (l, &g) in s.selections[m].indices().iter().enumerate() {
                counts[m][g] += 1;
                for f in 0..rank {
                    sums[m][(g, f)] += local[(l, f)];
                }
            }
        }
    }
    for m in 0..3 {
        for (g, &c) in counts[m].iter().enumerate() {
            if c == 0 {
                return Err(Error::Coverage { mode: Mode::ALL[m].name(), index: g });
            }
            let inv = Complex64::new(1.0 / c as f64, 0.0);
            for f in 0..rank {
                sums[m][(g, f)] *= inv;
            }
        }
    }
    let [a, b, c] = sums;
    FactorTriple::new(a, b, c)
}
