//! Generalized-eigendecomposition initialization from two frontal-slab pencils.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::factors::FactorTriple;
use crate::linalg::{condition_number, leading_left_singular_vectors, pinv, rank_one, CMat};
use crate::tensor::{unfold, Mode, Tensor3};

const PENCIL_SEED: u64 = 0x5eed_0f_9e_4d;

/// Algebraic CPD for `F <= min(I, J)` and `K >= 2`.
///
/// Two random combinations of the frontal slabs are compressed onto the
/// dominant column spaces of `A` and `B`; the eigenvectors of the compressed
/// pencil give `A`, and `B`, `C` follow from rank-one fits of the columns of
/// the least-squares solution for `C (.) B`.
pub fn algebraic_init(t: &Tensor3, rank: usize) -> Result<FactorTriple> {
    let [ni, nj, nk] = t.dims();
    if rank == 0 {
        return Err(Error::AlgebraicInit("rank must be at least 1".into()));
    }
    if rank > ni.min(nj) {
        return Err(Error::AlgebraicInit(format!("rank {rank} exceeds min(I, J) = {}", ni.min(nj))));
    }
    if nk < 2 {
        return Err(Error::AlgebraicInit("needs at least two frontal slabs".into()));
    }
    if t.norm_sqr() == 0.0 {
        return Err(Error::AlgebraicInit("zero tensor".into()));
    }

    let x1 = unfold(t, Mode::One).transpose();
    let x2 = unfold(t, Mode::Two).transpose();
    let u = dominant_subspace(&x1, rank);
    let w = dominant_subspace(&x2, rank).map(|z| z.conj());

    let mut rng = ChaCha8Rng::seed_from_u64(PENCIL_SEED);
    let mut weights = || -> Vec<Complex64> {
        (0..nk).map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect()
    };
    let (w1, w2) = (weights(), weights());
    let mut s1 = CMat::zeros(ni, nj);
    let mut s2 = CMat::zeros(ni, nj);
    for k in 0..nk {
        let slab = t.frontal(k);
        s1 += slab * w1[k];
        s2 += slab * w2[k];
    }
    let m1 = u.adjoint() * s1 * &w;
    let m2 = u.adjoint() * s2 * &w;
    let cond = condition_number(&m2);
    if !(cond < 1e12) {
        return Err(Error::AlgebraicInit(format!("slab pencil is singular (condition {cond:.2e})")));
    }
    let m2_inv = m2
        .try_inverse()
        .ok_or_else(|| Error::AlgebraicInit("slab pencil is singular".into()))?;
    let vecs = crate::linalg::eigenvectors(&(m1 * m2_inv))
        .ok_or_else(|| Error::AlgebraicInit("eigenvalue iteration did not converge".into()))?;
    let a = &u * vecs;

    // X^(1) = (C (.) B) A^T, so (C (.) B) = X^(1) (A^T)^+.
    let kr = unfold(t, Mode::One) * pinv(&a.transpose());
    let mut b = CMat::zeros(nj, rank);
    let mut c = CMat::zeros(nk, rank);
    for f in 0..rank {
        let col = CMat::from_column_slice(nj, nk, kr.column(f).as_slice());
        let (bf, cf) = rank_one(&col);
        for j in 0..nj {
            b[(j, f)] = bf[j];
        }
        for k in 0..nk {
            c[(k, f)] = cf[k];
        }
    }
    FactorTriple::new(a, b, c).map_err(|e| Error::AlgebraicInit(e.to_string()))
}

/// [`algebraic_init`] after reordering modes so that the two largest dimensions
/// play the roles of `I` and `J`.
pub fn algebraic_init_any_mode(t: &Tensor3, rank: usize) -> Result<FactorTriple> {
    let dims = t.dims();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&x, &y| dims[y].cmp(&dims[x]).then(x.cmp(&y)));
    let permuted = permute_modes(t, order);
    let f = algebraic_init(&permuted, rank)?;
    let mut out: [CMat; 3] = [CMat::zeros(0, 0), CMat::zeros(0, 0), CMat::zeros(0, 0)];
    for (pos, &orig) in order.iter().enumerate() {
        out[orig] = f.factor(pos).clone();
    }
    let [a, b, c] = out;
    FactorTriple::new(a, b, c)
}

/// Tensor whose mode `m` is mode `order[m]` of `t`.
pub(crate) fn permute_modes(t: &Tensor3, order: [usize; 3]) -> Tensor3 {
    let d = t.dims();
    let dims = [d[order[0]], d[order[1]], d[order[2]]];
    Tensor3::from_fn(dims, |x, y, z| {
        let mut idx = [0usize; 3];
        idx[order[0]] = x;
        idx[order[1]] = y;
        idx[order[2]] = z;
        t.get(idx[0], idx[1], idx[2])
    })
}

/// Leading `k` left singular vectors, computed from the smaller Gram side when `m` is wide.
fn dominant_subspace(m: &CMat, k: usize) -> CMat {
    if m.ncols() > 4 * m.nrows() {
        leading_left_singular_vectors(&(m * m.adjoint()), k)
    } else {
        leading_left_singular_vectors(m, k)
    }
}
