//! CPD factor triples, Khatri-Rao products, CPD synthesis and Kruskal rank.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, CMat, RANK_TOL, ZERO};
use crate::selection::SelectionSet;
use crate::tensor::Tensor3;

/// Largest column count accepted by [`kruskal_rank`].
pub const KRUSKAL_CAP: usize = 12;

/// CPD factors `A (I x F)`, `B (J x F)`, `C (K x F)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTriple {
    pub a: CMat,
    pub b: CMat,
    pub c: CMat,
}

impl FactorTriple {
    pub fn new(a: CMat, b: CMat, c: CMat) -> Result<Self> {
        let f = a.ncols();
        if f == 0 || b.ncols() != f || c.ncols() != f {
            return Err(Error::Shape(format!(
                "factor column counts {}, {}, {} must agree and be positive",
                a.ncols(),
                b.ncols(),
                c.ncols()
            )));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c)] {
            if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::NonFinite(format!("factor {name}")));
            }
        }
        Ok(Self { a, b, c })
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.a.nrows(), self.b.nrows(), self.c.nrows()]
    }

    pub fn factor(&self, mode: usize) -> &CMat {
        match mode {
            0 => &self.a,
            1 => &self.b,
            _ => &self.c,
        }
    }

    pub fn factor_mut(&mut self, mode: usize) -> &mut CMat {
        match mode {
            0 => &mut self.a,
            1 => &mut self.b,
            _ => &mut self.c,
        }
    }

    /// I.i.d. standard Gaussian entries; `complex` draws independent real and imaginary parts.
    pub fn random<R: Rng + ?Sized>(dims: [usize; 3], rank: usize, complex: bool, rng: &mut R) -> Self {
        let mut draw = |n: usize| {
            CMat::from_fn(n, rank, |_, _| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = if complex { rng.sample(StandardNormal) } else { 0.0 };
                Complex64::new(re, im)
            })
        };
        let a = draw(dims[0]);
        let b = draw(dims[1]);
        let c = draw(dims[2]);
        Self { a, b, c }
    }

    /// Keeps only the selected rows of each factor (`None` keeps all rows).
    pub fn select_rows(
        &self,
        rows: Option<&SelectionSet>,
        cols: Option<&SelectionSet>,
        fibers: Option<&SelectionSet>,
    ) -> FactorTriple {
        FactorTriple {
            a: gather_rows(&self.a, rows),
            b: gather_rows(&self.b, cols),
            c: gather_rows(&self.c, fibers),
        }
    }

    /// Applies a column permutation: column `f` of the result is column `perm[f]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> FactorTriple {
        let p = |m: &CMat| CMat::from_fn(m.nrows(), m.ncols(), |r, f| m[(r, perm[f])]);
        FactorTriple { a: p(&self.a), b: p(&self.b), c: p(&self.c) }
    }

    /// Scales column `f` of each factor by the matching entry of `scales[mode]`.
    pub fn scale_columns(&self, scales: &[Vec<Complex64>; 3]) -> FactorTriple {
        let s = |m: &CMat, v: &[Complex64]| CMat::from_fn(m.nrows(), m.ncols(), |r, f| m[(r, f)] * v[f]);
        FactorTriple { a: s(&self.a, &scales[0]), b: s(&self.b, &scales[1]), c: s(&self.c, &scales[2]) }
    }

    /// Flattened parameter vector `[vec A; vec B; vec C]`.
    pub fn to_vec(&self) -> Vec<Complex64> {
        self.a.iter().chain(self.b.iter()).chain(self.c.iter()).copied().collect()
    }

    pub fn from_vec(dims: [usize; 3], rank: usize, v: &[Complex64]) -> FactorTriple {
        let (na, nb) = (dims[0] * rank, dims[1] * rank);
        FactorTriple {
            a: CMat::from_column_slice(dims[0], rank, &v[..na]),
            b: CMat::from_column_slice(dims[1], rank, &v[na..na + nb]),
            c: CMat::from_column_slice(dims[2], rank, &v[na + nb..]),
        }
    }
}

pub(crate) fn gather_rows(m: &CMat, sel: Option<&SelectionSet>) -> CMat {
    match sel {
        None => m.clone(),
        Some(s) => CMat::from_fn(s.len(), m.ncols(), |r, f| m[(s.indices()[r], f)]),
    }
}

/// Column-wise Kronecker product: column `f` is `kron(p[:, f], q[:, f])`, `q` index fastest.
pub fn khatri_rao(p: &CMat, q: &CMat) -> Result<CMat> {
    if p.ncols() != q.ncols() {
        return Err(Error::Shape(format!("Khatri-Rao column counts {} vs {}", p.ncols(), q.ncols())));
    }
    let nq = q.nrows();
    Ok(CMat::from_fn(p.nrows() * nq, p.ncols(), |r, f| p[(r / nq, f)] * q[(r % nq, f)]))
}

/// Synthesizes `[[A, B, C]]` slab by slab: `X(:, :, k) = A diag(C(k, :)) B^T`.
pub fn cpd_reconstruct(f: &FactorTriple) -> Tensor3 {
    let [ni, nj, nk] = f.dims();
    let bt = f.b.transpose();
    let mut data = Vec::with_capacity(ni * nj * nk);
    let mut scaled = f.a.clone();
    for k in 0..nk {
        for r in 0..f.rank() {
            let ck = f.c[(k, r)];
            for i in 0..ni {
                scaled[(i, r)] = f.a[(i, r)] * ck;
            }
        }
        let slab = &scaled * &bt;
        data.extend_from_slice(slab.as_slice());
    }
    Tensor3::new([ni, nj, nk], data).unwrap_or_else(|_| Tensor3::zeros([ni, nj, nk]))
}

/// Largest `k` such that every `k` columns of `m` are linearly independent.
///
/// Exhaustive over column subsets; ranks use the singular-value threshold
/// `1e-9 * sigma_max` of each subset. Zero columns give 0.
pub fn kruskal_rank(m: &CMat) -> Result<usize> {
    let f = m.ncols();
    if f > KRUSKAL_CAP {
        return Err(Error::KruskalCap { columns: f, cap: KRUSKAL_CAP });
    }
    let limit = f.min(m.nrows());
    let mut best = 0;
    for k in 1..=limit {
        if all_subsets_independent(m, k) {
            best = k;
        } else {
            break;
        }
    }
    Ok(best)
}

fn all_subsets_independent(m: &CMat, k: usize) -> bool {
    let f = m.ncols();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let sub = CMat::from_fn(m.nrows(), k, |r, c| m[(r, idx[c])]);
        if numerical_rank(&sub, RANK_TOL) < k || sub.iter().all(|z| *z == ZERO) {
            return false;
        }
        // next combination in lexicographic order
        let mut pos = k;
        loop {
            if pos == 0 {
                return true;
            }
            pos -= 1;
            if idx[pos] < f - k + pos {
                idx[pos] += 1;
                for q in pos + 1..k {
                    idx[q] = idx[q - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Smallest power of two that is at least `x` (so exact powers of two map to themselves).
pub fn ceil_pow2(x: u64) -> u64 {
    x.max(1).next_power_of_two()
}
