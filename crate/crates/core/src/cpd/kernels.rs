//! Per-term dense kernels: MTTKRP, model synthesis and the Jacobian action.

use num_complex::Complex64;

use crate::factors::{cpd_reconstruct, FactorTriple};
use crate::linalg::{hadamard, CMat};
use crate::tensor::Tensor3;

/// `out(n, f) = sum over the other two indices of y * conj(other factors)`,
/// i.e. the conjugate-transposed Jacobian applied to `y` for one factor.
pub(crate) fn mttkrp(y: &Tensor3, f: &FactorTriple, mode: usize) -> CMat {
    let [ni, nj, nk] = y.dims();
    let rank = f.rank();
    let a_conj = f.a.map(|z| z.conj());
    let b_conj = f.b.map(|z| z.conj());
    let c_conj = f.c.map(|z| z.conj());
    match mode {
        0 => {
            let mut out = CMat::zeros(ni, rank);
            for k in 0..nk {
                let t = y.frontal(k) * &b_conj;
                for r in 0..rank {
                    let ck = c_conj[(k, r)];
                    for i in 0..ni {
                        out[(i, r)] += t[(i, r)] * ck;
                    }
                }
            }
            out
        }
        1 => {
            let mut out = CMat::zeros(nj, rank);
            for k in 0..nk {
                let t = y.frontal(k).transpose() * &a_conj;
                for r in 0..rank {
                    let ck = c_conj[(k, r)];
                    for j in 0..nj {
                        out[(j, r)] += t[(j, r)] * ck;
                    }
                }
            }
            out
        }
        _ => {
            let mut out = CMat::zeros(nk, rank);
            for k in 0..nk {
                let t = y.frontal(k) * &b_conj;
                for r in 0..rank {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for i in 0..ni {
                        acc += a_conj[(i, r)] * t[(i, r)];
                    }
                    out[(k, r)] = acc;
                }
            }
            out
        }
    }
}

/// Gram matrix `M^H M` of the Khatri-Rao product of the two factors other than `mode`.
pub(crate) fn normal_gram(f: &FactorTriple, mode: usize) -> CMat {
    let g = |m: &CMat| m.adjoint() * m;
    match mode {
        0 => hadamard(&g(&f.b), &g(&f.c)),
        1 => hadamard(&g(&f.a), &g(&f.c)),
        _ => hadamard(&g(&f.a), &g(&f.b)),
    }
}

/// Squared Frobenius misfit `||y - [[f]]||^2`.
pub(crate) fn misfit(y: &Tensor3, f: &FactorTriple) -> f64 {
    let model = cpd_reconstruct(f);
    y.data().iter().zip(model.data()).map(|(a, b)| (a - b).norm_sqr()).sum()
}

/// Residual tensor `y - [[f]]`.
pub(crate) fn residual(y: &Tensor3, f: &FactorTriple) -> Tensor3 {
    let model = cpd_reconstruct(f);
    let data = y.data().iter().zip(model.data()).map(|(a, b)| a - b).collect();
    Tensor3::new(y.dims(), data).unwrap_or_else(|_| Tensor3::zeros(y.dims()))
}

/// Directional derivative of the model `[[A, B, C]]` along `d`.
pub(crate) fn jacobian_apply(f: &FactorTriple, d: &FactorTriple) -> Tensor3 {
    let [ni, nj, nk] = f.dims();
    let rank = f.rank();
    let bt = f.b.transpose();
    let dbt = d.b.transpose();
    let mut data = Vec::with_capacity(ni * nj * nk);
    let mut left = CMat::zeros(ni, rank);
    let mut scaled = CMat::zeros(ni, rank);
    for k in 0..nk {
        for r in 0..rank {
            let (ck, dck) = (f.c[(k, r)], d.c[(k, r)]);
            for i in 0..ni {
                left[(i, r)] = d.a[(i, r)] * ck + f.a[(i, r)] * dck;
                scaled[(i, r)] = f.a[(i, r)] * ck;
            }
        }
        let slab = &left * &bt + &scaled * &dbt;
        data.extend_from_slice(slab.as_slice());
    }
    Tensor3::new([ni, nj, nk], data).unwrap_or_else(|_| Tensor3::zeros([ni, nj, nk]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mttkrp_matches_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = FactorTriple::random([3, 4, 5], 2, true, &mut rng);
        let y = cpd_reconstruct(&FactorTriple::random([3, 4, 5], 3, true, &mut rng));
        for mode in 0..3 {
            let fast = mttkrp(&y, &f, mode);
            let dims = y.dims();
            let slow = CMat::from_fn(dims[mode], 2, |n, r| {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..dims[0] {
                    for j in 0..dims[1] {
                        for k in 0..dims[2] {
                            let idx = [i, j, k];
                            if idx[mode] != n {
                                continue;
                            }
                            let mut w = Complex64::new(1.0, 0.0);
                            for (m, fac) in [&f.a, &f.b, &f.c].iter().enumerate() {
                                if m != mode {
                                    w *= fac[(idx[m], r)].conj();
                                }
                            }
                            acc += y.get(i, j, k) * w;
                        }
                    }
                }
                acc
            });
            assert!((fast - slow).norm() < 1e-10);
        }
    }

    #[test]
    fn jacobian_matches_difference_quotient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = FactorTriple::random([3, 3, 4], 2, true, &mut rng);
        let d = FactorTriple::random([3, 3, 4], 2, true, &mut rng);
        let h = 1e-6;
        let plus = FactorTriple::from_vec(
            f.dims(),
            2,
            &f.to_vec().iter().zip(d.to_vec()).map(|(x, y)| x + y * h).collect::<Vec<_>>(),
        );
        let minus = FactorTriple::from_vec(
            f.dims(),
            2,
            &f.to_vec().iter().zip(d.to_vec()).map(|(x, y)| x - y * h).collect::<Vec<_>>(),
        );
        let fd = cpd_reconstruct(&plus).sub(&cpd_reconstruct(&minus)).unwrap().scaled(Complex64::new(0.5 / h, 0.0));
        let jd = jacobian_apply(&f, &d);
        assert!(fd.sub(&jd).unwrap().frobenius_norm() < 1e-7 * jd.frobenius_norm());
    }
}
