use std::collections::BTreeMap;

use nalgebra::Cholesky;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::kernels::{jacobian_apply, misfit, mttkrp, normal_gram, residual};
use super::{CoupledTerm, SolveOutcome, SolverConfig};
use crate::error::{Error, Result};
use crate::factors::{cpd_reconstruct, FactorTriple};
use crate::linalg::{solve_hermitian, CMat};
use crate::tensor::Mode;

const CG_MAX_ITERS: usize = 60;
const CG_REL_TOL: f64 = 1e-9;
const MAX_REJECTIONS: usize = 10;

/// Rows of one mode that are observed by exactly the same set of terms.
/// They share one normal matrix.
struct Group {
    terms: Vec<usize>,
    rows: Vec<usize>,
    /// `locals[r][t]` is the position of `rows[r]` inside term `terms[t]`.
    locals: Vec<Vec<usize>>,
}

pub(crate) struct Problem<'a> {
    terms: &'a [CoupledTerm],
    dims: [usize; 3],
    groups: [Vec<Group>; 3],
    y_norm2: f64,
}

impl<'a> Problem<'a> {
    pub(crate) fn new(terms: &'a [CoupledTerm], dims: [usize; 3]) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument("coupled problem needs at least one term".into()));
        }
        for (d, t) in terms.iter().enumerate() {
            for m in 0..3 {
                if t.selection(m).ambient() != dims[m] {
                    return Err(Error::Shape(format!(
                        "term {d}: {} selection over {} but the tensor has {}",
                        Mode::ALL[m].name(),
                        t.selection(m).ambient(),
                        dims[m]
                    )));
                }
            }
            let expect = [t.sel_rows.len(), t.sel_cols.len(), t.sel_fibers.len()];
            if t.y.dims() != expect {
                return Err(Error::Shape(format!("term {d}: dims {:?} vs selections {:?}", t.y.dims(), expect)));
            }
        }
        let mut groups: [Vec<Group>; 3] = Default::default();
        for (m, slot) in groups.iter_mut().enumerate() {
            let mut by_sig: BTreeMap<Vec<usize>, (Vec<usize>, Vec<Vec<usize>>)> = BTreeMap::new();
            for g in 0..dims[m] {
                let mut sig = Vec::new();
                let mut loc = Vec::new();
                for (d, t) in terms.iter().enumerate() {
                    if let Some(p) = t.selection(m).position(g) {
                        sig.push(d);
                        loc.push(p);
                    }
                }
                if sig.is_empty() {
                    return Err(Error::Coverage { mode: Mode::ALL[m].name(), index: g });
                }
                let e = by_sig.entry(sig).or_default();
                e.0.push(g);
                e.1.push(loc);
            }
            *slot = by_sig.into_iter().map(|(terms, (rows, locals))| Group { terms, rows, locals }).collect();
        }
        let y_norm2 = terms.iter().map(|t| t.y.norm_sqr()).sum();
        Ok(Self { terms, dims, groups, y_norm2 })
    }

    fn locals(&self, f: &FactorTriple) -> Vec<FactorTriple> {
        self.terms.par_iter().map(|t| t.local_factors(f)).collect()
    }

    pub(crate) fn objective(&self, f: &FactorTriple) -> f64 {
        let parts: Vec<f64> = self.terms.par_iter().map(|t| misfit(&t.y, &t.local_factors(f))).collect();
        parts.iter().sum()
    }

    /// Solves every row of factor `mode` from its coupled normal equations.
    /// Returns the number of regularized solves.
    pub(crate) fn als_update(&self, f: &mut FactorTriple, mode: usize) -> usize {
        let rank = f.rank();
        let locals = self.locals(f);
        let pieces: Vec<(CMat, CMat)> = self
            .terms
            .par_iter()
            .zip(locals.par_iter())
            .map(|(t, lf)| (normal_gram(lf, mode), mttkrp(&t.y, lf, mode)))
            .collect();
        let solved: Vec<(CMat, bool)> = self.groups[mode]
            .par_iter()
            .map(|g| {
                let mut gram = CMat::zeros(rank, rank);
                for &t in &g.terms {
                    gram += &pieces[t].0;
                }
                let mut h = CMat::zeros(rank, g.rows.len());
                for (c, loc) in g.locals.iter().enumerate() {
                    for (ti, &t) in g.terms.iter().enumerate() {
                        for r in 0..rank {
                            h[(r, c)] += pieces[t].1[(loc[ti], r)];
                        }
                    }
                }
                solve_hermitian(&gram, &h)
            })
            .collect();
        let mut regularized = 0;
        let target = f.factor_mut(mode);
        for (g, (x, reg)) in self.groups[mode].iter().zip(solved) {
            if reg {
                regularized += 1;
            }
            for (c, &row) in g.rows.iter().enumerate() {
                for r in 0..rank {
                    target[(row, r)] = x[(r, c)];
                }
            }
        }
        if regularized > 0 {
            log::debug!("{regularized} near-singular normal matrices in {} update regularized", Mode::ALL[mode].name());
        }
        regularized
    }

    /// `J^H w` for per-term tensors `w`, scattered into global factor rows.
    fn jh_apply(&self, w: &[crate::tensor::Tensor3], locals: &[FactorTriple], fixed: [bool; 3]) -> FactorTriple {
        let rank = locals[0].rank();
        let parts: Vec<[Option<CMat>; 3]> = w
            .par_iter()
            .zip(locals.par_iter())
            .map(|(w, lf)| {
                let mut out: [Option<CMat>; 3] = Default::default();
                for (m, slot) in out.iter_mut().enumerate() {
                    if !fixed[m] {
                        *slot = Some(mttkrp(w, lf, m));
                    }
                }
                out
            })
            .collect();
        let mut g = FactorTriple {
            a: CMat::zeros(self.dims[0], rank),
            b: CMat::zeros(self.dims[1], rank),
            c: CMat::zeros(self.dims[2], rank),
        };
        for (t, part) in self.terms.iter().zip(parts) {
            for (m, p) in part.into_iter().enumerate() {
                if let Some(p) = p {
                    let sel = t.selection(m).indices();
                    let dst = g.factor_mut(m);
                    for r in 0..rank {
                        for (l, &row) in sel.iter().enumerate() {
                            dst[(row, r)] += p[(l, r)];
                        }
                    }
                }
            }
        }
        g
    }

    fn jtj_apply(&self, v: &FactorTriple, locals: &[FactorTriple], fixed: [bool; 3]) -> FactorTriple {
        let mut v = v.clone();
        zero_fixed(&mut v, fixed);
        let jv: Vec<crate::tensor::Tensor3> = self
            .terms
            .par_iter()
            .zip(locals.par_iter())
            .map(|(t, lf)| jacobian_apply(lf, &t.local_factors(&v)))
            .collect();
        self.jh_apply(&jv, locals, fixed)
    }

    /// Block-diagonal preconditioner `(G_row + lambda I)^-1` and the mean diagonal of `J^H J`.
    fn block_grams(&self, locals: &[FactorTriple], fixed: [bool; 3]) -> ([Vec<CMat>; 3], f64) {
        let rank = locals[0].rank();
        let mut out: [Vec<CMat>; 3] = Default::default();
        let (mut diag_sum, mut diag_count) = (0.0, 0usize);
        for m in 0..3 {
            if fixed[m] {
                continue;
            }
            let grams: Vec<CMat> = locals.par_iter().map(|lf| normal_gram(lf, m)).collect();
            for g in &self.groups[m] {
                let mut gram = CMat::zeros(rank, rank);
                for &t in &g.terms {
                    gram += &grams[t];
                }
                for r in 0..rank {
                    diag_sum += gram[(r, r)].re * g.rows.len() as f64;
                }
                diag_count += rank * g.rows.len();
                out[m].push(gram);
            }
        }
        (out, if diag_count > 0 { diag_sum / diag_count as f64 } else { 0.0 })
    }

    fn precondition(&self, inv: &[Vec<CMat>; 3], v: &FactorTriple, fixed: [bool; 3]) -> FactorTriple {
        let mut out = v.clone();
        let rank = v.rank();
        for m in 0..3 {
            if fixed[m] {
                continue;
            }
            let src = v.factor(m);
            let dst = out.factor_mut(m);
            for (g, pinv) in self.groups[m].iter().zip(&inv[m]) {
                for &row in &g.rows {
                    for r in 0..rank {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for s in 0..rank {
                            acc += pinv[(r, s)] * src[(row, s)];
                        }
                        dst[(row, r)] = acc;
                    }
                }
            }
        }
        zero_fixed(&mut out, fixed);
        out
    }

    /// Solves `(J^H J + lambda I) x = g` by preconditioned conjugate gradients.
    fn damped_step(
        &self,
        g: &FactorTriple,
        locals: &[FactorTriple],
        grams: &[Vec<CMat>; 3],
        lambda: f64,
        fixed: [bool; 3],
    ) -> FactorTriple {
        let dims = g.dims();
        let rank = g.rank();
        let lam = Complex64::new(lambda, 0.0);
        let mut inv: [Vec<CMat>; 3] = Default::default();
        for m in 0..3 {
            inv[m] = grams[m]
                .iter()
                .map(|gram| {
                    let mut reg = gram.clone();
                    let shift = lambda.max(1e-14 * trace(gram).max(f64::MIN_POSITIVE));
                    for r in 0..rank {
                        reg[(r, r)] += Complex64::new(shift, 0.0);
                    }
                    match Cholesky::new(reg.clone()) {
                        Some(c) => c.inverse(),
                        None => crate::linalg::pinv(&reg),
                    }
                })
                .collect();
        }
        let apply = |v: &FactorTriple| -> Vec<Complex64> {
            let jtj = self.jtj_apply(v, locals, fixed).to_vec();
            jtj.iter().zip(v.to_vec()).map(|(a, b)| a + lam * b).collect()
        };
        let b = g.to_vec();
        let b_norm = norm(&b);
        let mut x = vec![Complex64::new(0.0, 0.0); b.len()];
        if b_norm == 0.0 {
            return FactorTriple::from_vec(dims, rank, &x);
        }
        let mut r = b.clone();
        let mut z = self.precondition(&inv, &FactorTriple::from_vec(dims, rank, &r), fixed).to_vec();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for _ in 0..CG_MAX_ITERS {
            let ap = apply(&FactorTriple::from_vec(dims, rank, &p));
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..x.len() {
                x[i] += p[i] * alpha;
                r[i] -= ap[i] * alpha;
            }
            if norm(&r) <= CG_REL_TOL * b_norm {
                break;
            }
            z = self.precondition(&inv, &FactorTriple::from_vec(dims, rank, &r), fixed).to_vec();
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..p.len() {
                p[i] = z[i] + p[i] * beta;
            }
        }
        let mut step = FactorTriple::from_vec(dims, rank, &x);
        zero_fixed(&mut step, fixed);
        step
    }
}

fn trace(m: &CMat) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)].re).sum()
}

fn dot(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.conj() * y).re).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn zero_fixed(f: &mut FactorTriple, fixed: [bool; 3]) {
    for m in 0..3 {
        if fixed[m] {
            f.factor_mut(m).fill(Complex64::new(0.0, 0.0));
        }
    }
}

fn add(f: &FactorTriple, d: &FactorTriple) -> FactorTriple {
    FactorTriple { a: &f.a + &d.a, b: &f.b + &d.b, c: &f.c + &d.c }
}

/// Gaussian factors scaled so the synthesized tensor has squared norm close to `target_norm2`.
pub(crate) fn random_init(dims: [usize; 3], rank: usize, seed: u64, target_norm2: f64) -> FactorTriple {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = FactorTriple::random(dims, rank, true, &mut rng);
    let model = cpd_reconstruct(&f).norm_sqr();
    if target_norm2 > 0.0 && model > 0.0 {
        let s = Complex64::new((target_norm2 / model).powf(1.0 / 6.0), 0.0);
        FactorTriple { a: f.a * s, b: f.b * s, c: f.c * s }
    } else {
        f
    }
}

/// Coupled objective `sum_d ||Y_d - [[P1 A, P2 B, P3 C]]||^2`.
pub fn coupled_objective(terms: &[CoupledTerm], f: &FactorTriple) -> Result<f64> {
    Ok(Problem::new(terms, f.dims())?.objective(f))
}

/// Gradient `df/dRe + i df/dIm` of the coupled objective, i.e. `-2 J^H r`.
pub fn coupled_gradient(terms: &[CoupledTerm], f: &FactorTriple) -> Result<FactorTriple> {
    let problem = Problem::new(terms, f.dims())?;
    let locals = problem.locals(f);
    let res: Vec<_> = terms.iter().zip(&locals).map(|(t, lf)| residual(&t.y, lf)).collect();
    let g = problem.jh_apply(&res, &locals, [false; 3]);
    let s = Complex64::new(-2.0, 0.0);
    Ok(FactorTriple { a: g.a * s, b: g.b * s, c: g.c * s })
}

pub(crate) fn solve(
    terms: &[CoupledTerm],
    dims: [usize; 3],
    init: FactorTriple,
    cfg: &SolverConfig,
    fixed: [bool; 3],
) -> Result<SolveOutcome> {
    let problem = Problem::new(terms, dims)?;
    let mut f = init;
    let mut obj = problem.objective(&f);
    if !obj.is_finite() {
        return Err(Error::Diverged { iteration: 0, objective: obj });
    }
    let mut history = vec![obj];
    let floor = 1e-28 * problem.y_norm2;
    let negligible = |o: f64| o <= floor;
    let mut regularized_solves = 0;
    let mut als_iterations = 0;
    if fixed.iter().all(|&x| x) {
        return Ok(SolveOutcome { factors: f, history, als_iterations, gn_iterations: 0, regularized_solves });
    }

    for it in 1..=cfg.max_iters {
        if negligible(obj) {
            break;
        }
        for m in 0..3 {
            if !fixed[m] {
                regularized_solves += problem.als_update(&mut f, m);
            }
        }
        let new = problem.objective(&f);
        if !new.is_finite() {
            return Err(Error::Diverged { iteration: it, objective: new });
        }
        history.push(new);
        als_iterations = it;
        let done = (obj - new).abs() <= cfg.tol * obj;
        obj = new;
        if done {
            break;
        }
    }
    log::debug!("ALS stopped after {als_iterations} sweeps, objective {obj:.3e}");
    if regularized_solves > 0 {
        log::warn!("{regularized_solves} near-singular normal matrices regularized during ALS");
    }

    let mut gn_iterations = 0;
    let mut lambda: Option<f64> = None;
    let mut rejections = 0;
    for it in 1..=cfg.gn_iters {
        if negligible(obj) {
            break;
        }
        gn_iterations = it;
        let locals = problem.locals(&f);
        let res: Vec<_> = terms.par_iter().zip(locals.par_iter()).map(|(t, lf)| residual(&t.y, lf)).collect();
        let g = problem.jh_apply(&res, &locals, fixed);
        let (grams, mean_diag) = problem.block_grams(&locals, fixed);
        let lam = *lambda.get_or_insert(cfg.damping * mean_diag);
        let step = problem.damped_step(&g, &locals, &grams, lam, fixed);
        let trial = add(&f, &step);
        let new = problem.objective(&trial);
        if new.is_finite() && new < obj {
            let rel = (obj - new) / obj;
            f = trial;
            obj = new;
            history.push(new);
            lambda = Some(lam / 3.0);
            rejections = 0;
            if rel <= cfg.tol {
                break;
            }
        } else {
            rejections += 1;
            lambda = Some(if lam > 0.0 { lam * 5.0 } else { 1e-12 * mean_diag.max(f64::MIN_POSITIVE) });
            if rejections >= MAX_REJECTIONS {
                break;
            }
        }
    }
    log::debug!("Gauss-Newton stopped after {gn_iterations} iterations, objective {obj:.3e}");
    Ok(SolveOutcome { factors: f, history, als_iterations, gn_iterations, regularized_solves })
}
