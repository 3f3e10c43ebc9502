use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use retsina::cpd::{algebraic_init, als_step, coupled_gradient, coupled_objective, cpd, coupled_cpd, CoupledTerm, InitKind, SolverConfig};
use retsina::{cpd_reconstruct, nre, Error, FactorTriple, SelectionSet, Tensor3};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn perturbed(f: &FactorTriple, eps: f64, rng: &mut ChaCha8Rng) -> FactorTriple {
    let noise = FactorTriple::random(f.dims(), f.rank(), true, rng);
    FactorTriple { a: &f.a + noise.a * c(eps, 0.0), b: &f.b + noise.b * c(eps, 0.0), c: &f.c + noise.c * c(eps, 0.0) }
}

fn monotone(history: &[f64]) -> bool {
    history.windows(2).all(|w| w[1] <= w[0] + 1e-10)
}

#[test]
fn warm_start_near_truth_converges() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let truth = FactorTriple::random([8, 8, 8], 2, true, &mut rng);
    let t = cpd_reconstruct(&truth);
    let warm = perturbed(&truth, 0.05, &mut rng);
    let cfg = SolverConfig { init: InitKind::Provided, ..Default::default() };
    let out = cpd(&t, 2, &cfg, Some(&warm)).unwrap();
    assert!(nre(&cpd_reconstruct(&out.factors), &t).unwrap() < 1e-8);
    assert!(monotone(&out.history));
}

#[test]
fn rank_one_all_ones() {
    let t = Tensor3::from_fn([4, 3, 5], |_, _, _| c(1.0, 0.0));
    let out = cpd(&t, 1, &SolverConfig::default(), None).unwrap();
    let err = cpd_reconstruct(&out.factors).sub(&t).unwrap().frobenius_norm();
    assert!(err < 1e-12, "{err}");
}

#[test]
fn zero_tensor_gives_zero_objective() {
    let t = Tensor3::zeros([3, 3, 3]);
    let out = cpd(&t, 2, &SolverConfig::default(), None).unwrap();
    assert_eq!(out.objective(), 0.0);
    assert_eq!(cpd_reconstruct(&out.factors).frobenius_norm(), 0.0);
}

#[test]
fn provided_init_requires_warm() {
    let t = Tensor3::zeros([3, 3, 3]);
    let cfg = SolverConfig { init: InitKind::Provided, ..Default::default() };
    assert!(matches!(cpd(&t, 2, &cfg, None), Err(Error::InvalidArgument(_))));
}

#[test]
fn als_fixed_point_at_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = FactorTriple::random([5, 6, 4], 2, true, &mut rng);
    let t = cpd_reconstruct(&truth);
    let next = als_step(&t, &truth).unwrap();
    let diff = cpd_reconstruct(&next).sub(&t).unwrap().frobenius_norm();
    assert!(diff < 1e-12 * t.frobenius_norm(), "{diff}");
}

#[test]
fn als_step_decreases_objective_on_rank_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t = cpd_reconstruct(&FactorTriple::random([4, 5, 6], 1, true, &mut rng));
    let init = FactorTriple::random([4, 5, 6], 1, true, &mut rng);
    let obj = |f: &FactorTriple| cpd_reconstruct(f).sub(&t).unwrap().norm_sqr();
    let next = als_step(&t, &init).unwrap();
    assert!(obj(&next) < obj(&init));
}

#[test]
fn als_underdetermined_mode_returns_min_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // F = 5 > I J = 4 makes the C update underdetermined.
    let t = cpd_reconstruct(&FactorTriple::random([2, 2, 3], 2, true, &mut rng));
    let init = FactorTriple::random([2, 2, 3], 5, true, &mut rng);
    let next = als_step(&t, &init).unwrap();
    assert!(next.c.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
}

#[test]
fn algebraic_init_recovers_exact_tensor() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let t = cpd_reconstruct(&FactorTriple::random([8, 8, 4], 3, true, &mut rng));
    let f = algebraic_init(&t, 3).unwrap();
    assert!(nre(&cpd_reconstruct(&f), &t).unwrap() < 1e-6);
}

#[test]
fn algebraic_init_preconditions() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t = cpd_reconstruct(&FactorTriple::random([4, 4, 3], 2, true, &mut rng));
    assert!(matches!(algebraic_init(&t, 5), Err(Error::AlgebraicInit(_))));
    let flat = cpd_reconstruct(&FactorTriple::random([4, 4, 1], 2, true, &mut rng));
    assert!(matches!(algebraic_init(&flat, 2), Err(Error::AlgebraicInit(_))));
}

#[test]
fn random_init_recovers_exact_tensor_and_stays_monotone() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let t = cpd_reconstruct(&FactorTriple::random([7, 6, 5], 3, true, &mut rng));
        let cfg = SolverConfig { seed, ..Default::default() };
        let out = cpd(&t, 3, &cfg, None).unwrap();
        assert!(monotone(&out.history[..=out.als_iterations]));
        assert!(nre(&cpd_reconstruct(&out.factors), &t).unwrap() < 1e-6, "seed {seed}");
    }
}

#[test]
fn permuted_scaled_factors_reconstruct_same_tensor() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let f = FactorTriple::random([6, 6, 6], 3, true, &mut rng);
    let scales: [Vec<Complex64>; 3] = [
        vec![c(2.0, 1.0), c(-0.5, 0.0), c(0.0, 3.0)],
        vec![c(1.0, 0.0), c(0.2, 0.2), c(1.5, -1.0)],
        vec![c(0.3, 0.0), c(1.0, 1.0), c(-2.0, 0.5)],
    ];
    let g = f.permute_columns(&[2, 0, 1]).scale_columns(&scales);
    let t1 = cpd_reconstruct(&f);
    let t2 = cpd_reconstruct(&g);
    let cfg = SolverConfig { init: InitKind::Algebraic, ..Default::default() };
    let r1 = cpd_reconstruct(&cpd(&t1, 3, &cfg, None).unwrap().factors);
    let r2 = cpd_reconstruct(&cpd(&t2, 3, &cfg, None).unwrap().factors);
    assert!(nre(&r1, &t1).unwrap() < 1e-8);
    assert!(nre(&r2, &t2).unwrap() < 1e-8);
}

fn slab_terms(t: &Tensor3, rows: &[usize], fibers: &[usize]) -> Vec<CoupledTerm> {
    let [i, j, k] = t.dims();
    let sr = SelectionSet::new(rows.to_vec(), i).unwrap();
    let sf = SelectionSet::new(fibers.to_vec(), k).unwrap();
    vec![
        CoupledTerm::new(t.select(Some(&sr), None, None).unwrap(), sr, SelectionSet::full(j), SelectionSet::full(k)).unwrap(),
        CoupledTerm::new(t.select(None, None, Some(&sf)).unwrap(), SelectionSet::full(i), SelectionSet::full(j), sf).unwrap(),
    ]
}

#[test]
fn coupled_truth_is_a_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let truth = FactorTriple::random([6, 5, 6], 2, true, &mut rng);
    let t = cpd_reconstruct(&truth);
    let terms = slab_terms(&t, &[0, 3], &[1, 4]);
    let out = coupled_cpd(&terms, t.dims(), 2, &truth, &SolverConfig::default()).unwrap();
    assert!(out.objective() < 1e-20 * t.norm_sqr());
    assert_eq!(out.factors, truth);
}

#[test]
fn coupled_solver_refines_perturbed_slab_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let truth = FactorTriple::random([16, 16, 16], 3, true, &mut rng);
    let t = cpd_reconstruct(&truth);
    let terms = slab_terms(&t, &[2, 9], &[5, 11]);
    let init = perturbed(&truth, 0.05, &mut rng);
    let out = coupled_cpd(&terms, t.dims(), 3, &init, &SolverConfig::default()).unwrap();
    assert!(monotone(&out.history));
    assert!(nre(&cpd_reconstruct(&out.factors), &t).unwrap() < 1e-8);
}

#[test]
fn uncovered_row_is_a_coverage_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let truth = FactorTriple::random([6, 4, 4], 2, true, &mut rng);
    let t = cpd_reconstruct(&truth);
    let rows = SelectionSet::new(vec![0, 1, 2, 3, 4], 6).unwrap();
    let term = CoupledTerm::new(
        t.select(Some(&rows), None, None).unwrap(),
        rows,
        SelectionSet::full(4),
        SelectionSet::full(4),
    )
    .unwrap();
    let err = coupled_cpd(&[term], t.dims(), 2, &truth, &SolverConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Coverage { index: 5, .. }), "{err}");
}

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let t = cpd_reconstruct(&FactorTriple::random([4, 4, 4], 2, true, &mut rng));
        let terms = slab_terms(&t, &[0, 2], &[1, 3]);
        let f = FactorTriple::random([4, 4, 4], 2, true, &mut rng);
        let g = coupled_gradient(&terms, &f).unwrap().to_vec();
        let x = f.to_vec();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let gnorm = g.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let mut fd = vec![c(0.0, 0.0); x.len()];
        for p in 0..x.len() {
            for (part, dir) in [(0, c(h, 0.0)), (1, c(0.0, h))] {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[p] += dir;
                xm[p] -= dir;
                let fp = coupled_objective(&terms, &FactorTriple::from_vec(f.dims(), 2, &xp)).unwrap();
                let fm = coupled_objective(&terms, &FactorTriple::from_vec(f.dims(), 2, &xm)).unwrap();
                let d = (fp - fm) / (2.0 * h);
                if part == 0 {
                    fd[p].re = d;
                } else {
                    fd[p].im = d;
                }
            }
        }
        for p in 0..x.len() {
            worst = worst.max((fd[p] - g[p]).norm());
        }
        assert!(worst / gnorm < 1e-5, "relative gradient error {}", worst / gnorm);
    }
}

#[test]
fn solver_config_json_round_trip() {
    let cfg = SolverConfig { max_iters: 7, seed: 42, init: InitKind::Algebraic, ..Default::default() };
    let json = serde_json::to_string(&cfg).unwrap();
    for key in ["max_iters", "tol", "damping", "seed", "init"] {
        assert!(json.contains(key));
    }
    let back: SolverConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, cfg);
    let partial: SolverConfig = serde_json::from_str(r#"{"init":"random","seed":3}"#).unwrap();
    assert_eq!(partial.seed, 3);
    assert_eq!(partial.max_iters, 500);
}

#[test]
fn invalid_config_rejected() {
    let t = Tensor3::zeros([2, 2, 2]);
    let cfg = SolverConfig { tol: 0.0, ..Default::default() };
    assert!(cpd(&t, 1, &cfg, None).is_err());
    let cfg = SolverConfig { damping: -1.0, ..Default::default() };
    assert!(cpd(&t, 1, &cfg, None).is_err());
}
