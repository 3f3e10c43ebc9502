use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retsina::reconstruct::{recover, recover_entry, recover_fiber, recover_slab};
use retsina::sampling::{
    check_generic, make_regular_plan, EntryPattern, FiberPattern, Mechanism, PlanKind, RegularParams, SamplingPlan,
    SlabPlan,
};
use retsina::{cpd_reconstruct, nre, Error, FactorTriple, SelectionSet, SolverConfig, Tensor3};

fn set(idx: &[usize], n: usize) -> SelectionSet {
    SelectionSet::new(idx.to_vec(), n).unwrap()
}

fn truth(dims: [usize; 3], rank: usize, seed: u64) -> Tensor3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cpd_reconstruct(&FactorTriple::random(dims, rank, true, &mut rng))
}

fn fig4_patterns() -> Vec<FiberPattern> {
    vec![
        FiberPattern { rows: set(&[0, 3, 6, 9], 12), cols: set(&[0, 3, 6], 8) },
        FiberPattern { rows: set(&[1, 4, 7, 10], 12), cols: set(&[1, 4, 6, 7], 8) },
        FiberPattern { rows: set(&[2, 5, 8, 11], 12), cols: set(&[2, 5, 7], 8) },
    ]
}

fn fig5_patterns() -> Vec<EntryPattern> {
    vec![
        EntryPattern { rows: set(&[0, 2, 4, 6], 8), cols: set(&[0, 2, 4, 6], 8), fibers: set(&[0, 3], 6) },
        EntryPattern { rows: set(&[1, 3, 5, 7], 8), cols: set(&[1, 3, 5, 7], 8), fibers: set(&[1, 4], 6) },
        EntryPattern { rows: set(&[2, 3, 4, 5], 8), cols: set(&[2, 3, 4, 5], 8), fibers: set(&[2, 5], 6) },
    ]
}

#[test]
fn slab_recovery_16_cubed_rank_3() {
    let x = truth([16, 16, 16], 3, 11);
    let plan = SlabPlan { horizontal: set(&[0, 8], 16), frontal: set(&[0, 8], 16) };
    let full = SamplingPlan::slab([16, 16, 16], plan.horizontal.clone(), plan.frontal.clone()).unwrap();
    let ys = full.apply(&x).unwrap();
    let report = recover_slab(&ys[0], &ys[1], &plan, 3, &SolverConfig::default(), false).unwrap();
    assert!(report.converged);
    assert!(nre(&report.estimate, &x).unwrap() < 1e-8);
    assert_eq!(report.estimate, cpd_reconstruct(&report.factors));
    assert!(report.to_json().unwrap().contains("\"step3_history\""));
}

#[test]
fn slab_rank_one_minimal_plan() {
    let x = truth([6, 5, 7], 1, 12);
    let plan = SlabPlan { horizontal: set(&[1, 3], 6), frontal: set(&[2, 5], 7) };
    let full = SamplingPlan::slab([6, 5, 7], plan.horizontal.clone(), plan.frontal.clone()).unwrap();
    let ys = full.apply(&x).unwrap();
    let report = recover_slab(&ys[0], &ys[1], &plan, 1, &SolverConfig::default(), false).unwrap();
    assert!(nre(&report.estimate, &x).unwrap() < 1e-10);
}

#[test]
fn slab_refuses_unless_forced() {
    let x = truth([8, 8, 8], 3, 13);
    let plan = SlabPlan { horizontal: set(&[0, 4], 8), frontal: set(&[0, 4], 8) };
    let full = SamplingPlan::slab([8, 8, 8], plan.horizontal.clone(), plan.frontal.clone()).unwrap();
    assert!(!check_generic(&full, 5).recoverable);
    let ys = full.apply(&x).unwrap();
    let err = recover_slab(&ys[0], &ys[1], &plan, 5, &SolverConfig::default(), false).unwrap_err();
    assert!(matches!(err, Error::NotIdentifiable(_)));
    let forced = recover_slab(&ys[0], &ys[1], &plan, 5, &SolverConfig::default(), true).unwrap();
    assert!(forced.forced);
    assert!(!forced.generic.recoverable);
}

#[test]
fn fiber_fig4_plan_rank_2() {
    let x = truth([12, 8, 8], 2, 21);
    let plan = SamplingPlan::fiber([12, 8, 8], fig4_patterns()).unwrap();
    let ys = plan.apply(&x).unwrap();
    let report = recover_fiber(&ys, &fig4_patterns(), 2, &SolverConfig::default(), false).unwrap();
    assert!(report.converged);
    assert_eq!(report.step1_histories.len(), 3);
    assert!(nre(&report.estimate, &x).unwrap() < 1e-6);
}

#[test]
fn fiber_single_full_pattern_is_plain_cpd() {
    let x = truth([6, 6, 5], 2, 22);
    let p = vec![FiberPattern { rows: SelectionSet::full(6), cols: SelectionSet::full(6) }];
    let report = recover_fiber(&[x.clone()], &p, 2, &SolverConfig::default(), false).unwrap();
    assert!(nre(&report.estimate, &x).unwrap() < 1e-8);
}

#[test]
fn fiber_disconnected_patterns_refused() {
    let x = truth([8, 8, 8], 2, 23);
    let p = vec![
        FiberPattern { rows: set(&[0, 1, 2, 3], 8), cols: set(&[0, 1, 2, 3], 8) },
        FiberPattern { rows: set(&[4, 5, 6, 7], 8), cols: set(&[4, 5, 6, 7], 8) },
    ];
    let plan = SamplingPlan::fiber([8, 8, 8], p.clone()).unwrap();
    let ys = plan.apply(&x).unwrap();
    let err = recover_fiber(&ys, &p, 2, &SolverConfig::default(), true).unwrap_err();
    let Error::RulesViolated(msg) = err else { panic!("expected rules violation, got {err:?}") };
    assert!(msg.contains("rule (c)"), "{msg}");
}

#[test]
fn entry_fig5_plan_rank_2() {
    let x = truth([8, 8, 6], 2, 31);
    let plan = SamplingPlan::entry([8, 8, 6], fig5_patterns()).unwrap();
    let ys = plan.apply(&x).unwrap();
    let report = recover_entry(&ys, &fig5_patterns(), 2, &SolverConfig::default(), false).unwrap();
    assert!(report.converged);
    assert!(nre(&report.estimate, &x).unwrap() < 1e-6);
}

#[test]
fn entry_single_full_pattern() {
    let x = truth([5, 6, 7], 3, 32);
    let p = vec![EntryPattern { rows: SelectionSet::full(5), cols: SelectionSet::full(6), fibers: SelectionSet::full(7) }];
    let report = recover_entry(&[x.clone()], &p, 3, &SolverConfig::default(), false).unwrap();
    assert!(nre(&report.estimate, &x).unwrap() < 1e-8);
}

#[test]
fn entry_rank_above_threshold_names_binding_constraint() {
    let x = truth([8, 8, 6], 2, 33);
    let plan = SamplingPlan::entry([8, 8, 6], fig5_patterns()).unwrap();
    let ys = plan.apply(&x).unwrap();
    let err = recover_entry(&ys, &fig5_patterns(), 5, &SolverConfig::default(), false).unwrap_err();
    let Error::NotIdentifiable(msg) = err else { panic!("expected refusal, got {err:?}") };
    assert!(msg.contains("4*ceil_pow2(5)"), "{msg}");
}

#[test]
fn mismatched_sub_tensor_shapes_rejected() {
    let plan = SamplingPlan::fiber([12, 8, 8], fig4_patterns()).unwrap();
    let ys = vec![Tensor3::zeros([4, 3, 8]); 3];
    assert!(matches!(recover(&plan, &ys, 2, &SolverConfig::default(), false), Err(Error::Shape(_))));
}

/// Random regular plan at the given mechanism that passes the generic check, if one is found.
fn random_plan(mech: Mechanism, rng: &mut ChaCha8Rng) -> Option<(SamplingPlan, usize)> {
    for _ in 0..50 {
        let dims = [rng.random_range(8..=16), rng.random_range(8..=16), rng.random_range(8..=16)];
        let rank = rng.random_range(1..=4);
        let strides = match mech {
            Mechanism::Slab => [rng.random_range(2..=6), 1, rng.random_range(2..=6)],
            Mechanism::Fiber => [rng.random_range(1..=3), rng.random_range(1..=3), 1],
            Mechanism::Entry => [rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=2)],
        };
        let params = RegularParams { offsets: [rng.random_range(0..2), 0, rng.random_range(0..2)], ..RegularParams::with_strides(strides) };
        let Ok(plan) = make_regular_plan(mech, dims, &params) else { continue };
        if check_generic(&plan, rank).recoverable {
            return Some((plan, rank));
        }
    }
    None
}

fn exact_recovery_rate(mech: Mechanism, seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut ok, mut flagged_failures) = (0, 0);
    for trial in 0..30 {
        let (plan, rank) = random_plan(mech, &mut rng).expect("a recoverable plan");
        let x = truth(plan.dims(), rank, seed * 1000 + trial);
        let ys = plan.apply(&x).unwrap();
        let cfg = SolverConfig { seed: trial, ..SolverConfig::default() };
        let report = recover(&plan, &ys, rank, &cfg, false).unwrap();
        let err = nre(&report.estimate, &x).unwrap();
        if err < 1e-6 {
            ok += 1;
        } else if !report.converged {
            flagged_failures += 1;
        }
    }
    (ok, flagged_failures)
}

#[test]
fn exact_recovery_property_slab() {
    let (ok, flagged) = exact_recovery_rate(Mechanism::Slab, 1);
    assert!(ok >= 28, "slab: {ok}/30");
    assert_eq!(ok + flagged, 30);
}

#[test]
fn exact_recovery_property_fiber() {
    let (ok, flagged) = exact_recovery_rate(Mechanism::Fiber, 2);
    assert!(ok >= 28, "fiber: {ok}/30");
    assert_eq!(ok + flagged, 30);
}

#[test]
fn exact_recovery_property_entry() {
    let (ok, flagged) = exact_recovery_rate(Mechanism::Entry, 3);
    assert!(ok >= 28, "entry: {ok}/30");
    assert_eq!(ok + flagged, 30);
}

#[test]
fn estimate_agrees_with_every_observation() {
    let x = truth([12, 8, 8], 2, 41);
    let plan = SamplingPlan::fiber([12, 8, 8], fig4_patterns()).unwrap();
    let ys = plan.apply(&x).unwrap();
    let report = recover(&plan, &ys, 2, &SolverConfig::default(), false).unwrap();
    let observed_norm: f64 = ys.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    let mask = plan.mask();
    let [ni, nj, _] = x.dims();
    for (idx, seen) in mask.iter().enumerate() {
        if *seen {
            let (i, j, k) = (idx % ni, (idx / ni) % nj, idx / (ni * nj));
            assert!((report.estimate.get(i, j, k) - x.get(i, j, k)).norm() <= 1e-6 * observed_norm);
        }
    }
    if let PlanKind::Fiber(p) = plan.kind() {
        assert_eq!(p.len(), 3);
    }
}
