//! Small dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, Schur};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;

pub(crate) const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub(crate) const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Relative singular-value threshold used for numerical rank decisions.
pub const RANK_TOL: f64 = 1e-9;

/// Singular values in nonincreasing order.
pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Number of singular values above `rel_tol` times the largest one.
pub fn numerical_rank(m: &CMat, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    match sv.first() {
        Some(&top) if top > 0.0 => sv.iter().filter(|&&s| s > rel_tol * top).count(),
        _ => 0,
    }
}

/// Ratio of largest to smallest singular value (infinite when rank deficient).
pub fn condition_number(m: &CMat) -> f64 {
    let sv = singular_values(m);
    match (sv.first(), sv.get(m.ncols().min(m.nrows()).saturating_sub(1))) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Elementwise product of two equally shaped matrices.
pub fn hadamard(a: &CMat, b: &CMat) -> CMat {
    a.zip_map(b, |x, y| x * y)
}

/// Solves `g x = rhs` for a Hermitian positive semidefinite `g`.
///
/// Falls back to `g + eps I` with `eps = 1e-12 trace(g)` when `g` is singular
/// or badly conditioned, solved through the truncated pseudo-inverse so the
/// result is the minimum-norm solution. The second return value reports that fallback.
pub fn solve_hermitian(g: &CMat, rhs: &CMat) -> (CMat, bool) {
    let n = g.nrows();
    let trace: f64 = (0..n).map(|i| g[(i, i)].re).sum();
    if !(trace > 0.0) {
        return (CMat::zeros(n, rhs.ncols()), true);
    }
    if let Some(chol) = Cholesky::new(g.clone()) {
        let l = chol.l_dirty();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            let d = l[(i, i)].re;
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if lo > 0.0 && (lo * lo) / (hi * hi) > 1e-13 {
            return (chol.solve(rhs), false);
        }
    }
    let eps = 1e-12 * trace;
    let mut reg = g.clone();
    for i in 0..n {
        reg[(i, i)] += Complex64::new(eps, 0.0);
    }
    (pinv(&reg) * rhs, true)
}

/// Moore-Penrose pseudo-inverse with the crate-wide relative threshold.
pub fn pinv(m: &CMat) -> CMat {
    let svd = m.clone().svd(true, true);
    let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = (RANK_TOL * top).max(f64::MIN_POSITIVE);
    svd.pseudo_inverse(tol).unwrap_or_else(|_| CMat::zeros(m.ncols(), m.nrows()))
}

/// Minimum-norm least-squares solution of `a x = b`.
pub fn lstsq(a: &CMat, b: &CMat) -> CMat {
    pinv(a) * b
}

/// First `k` left singular vectors of `m` (columns ordered by singular value).
pub fn leading_left_singular_vectors(m: &CMat, k: usize) -> CMat {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut out = CMat::zeros(m.nrows(), k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        out.set_column(dst, &u.column(src));
    }
    out
}

/// Best rank-one approximation `sigma u v^H` of `m`, returned as `(u * sigma, conj(v))`
/// so that `m ~ x y^T`.
pub fn rank_one(m: &CMat) -> (Vec<Complex64>, Vec<Complex64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let (idx, sigma) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, -1.0), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
    let x = u.column(idx).iter().map(|z| z * sigma).collect();
    // v_t holds v^H, so row idx of v_t is conj(v)^T.
    let y = v_t.row(idx).iter().copied().collect();
    (x, y)
}

/// Right eigenvectors of a general complex square matrix via a Schur form.
///
/// Returns `None` if the Schur iteration fails to converge.
pub fn eigenvectors(m: &CMat) -> Option<CMat> {
    let n = m.nrows();
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000)?;
    let (q, t) = schur.unpack();
    let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut vecs = CMat::zeros(n, n);
    for i in 0..n {
        let lambda = t[(i, i)];
        let mut v = vec![ZERO; n];
        v[i] = ONE;
        for j in (0..i).rev() {
            let mut acc = ZERO;
            for l in (j + 1)..=i {
                acc += t[(j, l)] * v[l];
            }
            let mut denom = t[(j, j)] - lambda;
            if denom.norm() < f64::EPSILON * scale {
                denom = Complex64::new(f64::EPSILON * scale, 0.0);
            }
            v[j] = -acc / denom;
        }
        let x = &q * nalgebra::DVector::from_vec(v);
        let norm = x.norm();
        vecs.set_column(i, &(x / Complex64::new(norm, 0.0)));
    }
    Some(vecs)
}
