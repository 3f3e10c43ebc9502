use serde::Serialize;

use super::{PlanKind, SamplingPlan};
use crate::error::{Error, Result};
use crate::factors::{ceil_pow2, gather_rows, khatri_rao, kruskal_rank, FactorTriple, KRUSKAL_CAP};
use crate::linalg::{numerical_rank, CMat, RANK_TOL};

/// Result of the generic (almost-sure) identifiability check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GenericVerdict {
    pub recoverable: bool,
    /// `4 * ceil_pow2(F)`.
    pub threshold: u64,
    /// Smallest product in the governing condition set.
    pub min_value: u64,
    /// Name of the product attaining `min_value`.
    pub binding: String,
    /// Largest rank for which the governing condition set still holds.
    pub max_rank: u64,
    /// For slab plans, the sub-tensor (0 = horizontal, 1 = frontal) whose CPD is unique.
    pub unique_term: Option<usize>,
}

/// Largest `F` with `4 * ceil_pow2(F) <= value`.
fn max_rank_for(value: u64) -> u64 {
    let q = value / 4;
    if q == 0 {
        0
    } else {
        1u64 << (63 - q.leading_zeros())
    }
}

fn minimum(items: Vec<(String, u64)>) -> (String, u64) {
    items.into_iter().fold((String::new(), u64::MAX), |acc, it| if it.1 < acc.1 { it } else { acc })
}

/// Generic identifiability of `plan` at rank `rank`.
///
/// Slab plans pass when either alternative condition set holds
/// (`min{I1 J, J K, I1 K, 4 J K2}` or `min{I J, J K2, I K2, 4 I1 J}` at least `4 ceil_pow2(F)`);
/// fiber plans need `min_d{I_d J_d, J_d K, I_d K}` and entry plans
/// `min_d{I_d J_d, J_d K_d, I_d K_d}` above the same threshold.
pub fn check_generic(plan: &SamplingPlan, rank: usize) -> GenericVerdict {
    let threshold = 4 * ceil_pow2(rank.max(1) as u64);
    let [i, j, k] = plan.dims().map(|d| d as u64);
    let verdict = |(binding, min_value): (String, u64), unique_term| GenericVerdict {
        recoverable: min_value >= threshold,
        threshold,
        min_value,
        binding,
        max_rank: max_rank_for(min_value),
        unique_term,
    };
    match plan.kind() {
        PlanKind::Slab(s) => {
            let i1 = s.horizontal.len() as u64;
            let k2 = s.frontal.len() as u64;
            let first = minimum(vec![
                ("I1*J".into(), i1 * j),
                ("J*K".into(), j * k),
                ("I1*K".into(), i1 * k),
                ("4*J*K2".into(), 4 * j * k2),
            ]);
            let second = minimum(vec![
                ("I*J".into(), i * j),
                ("J*K2".into(), j * k2),
                ("I*K2".into(), i * k2),
                ("4*I1*J".into(), 4 * i1 * j),
            ]);
            let (p1, p2) = (first.1 >= threshold, second.1 >= threshold);
            match (p1, p2) {
                (true, true) => {
                    if i1 * j * k <= i * j * k2 {
                        verdict(first, Some(0))
                    } else {
                        verdict(second, Some(1))
                    }
                }
                (true, false) => verdict(first, Some(0)),
                (false, true) => verdict(second, Some(1)),
                (false, false) => {
                    if first.1 >= second.1 {
                        verdict(first, None)
                    } else {
                        verdict(second, None)
                    }
                }
            }
        }
        PlanKind::Fiber(p) => {
            let items = p
                .iter()
                .enumerate()
                .flat_map(|(d, f)| {
                    let (id, jd) = (f.rows.len() as u64, f.cols.len() as u64);
                    [
                        (format!("I_d*J_d of pattern {d}"), id * jd),
                        (format!("J_d*K of pattern {d}"), jd * k),
                        (format!("I_d*K of pattern {d}"), id * k),
                    ]
                })
                .collect();
            verdict(minimum(items), None)
        }
        PlanKind::Entry(p) => {
            let items = p
                .iter()
                .enumerate()
                .flat_map(|(d, e)| {
                    let (id, jd, kd) = (e.rows.len() as u64, e.cols.len() as u64, e.fibers.len() as u64);
                    [
                        (format!("I_d*J_d of pattern {d}"), id * jd),
                        (format!("J_d*K_d of pattern {d}"), jd * kd),
                        (format!("I_d*K_d of pattern {d}"), id * kd),
                    ]
                })
                .collect();
            verdict(minimum(items), None)
        }
    }
}

/// Result of the deterministic Kruskal-rank check on candidate factors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeterministicVerdict {
    pub recoverable: bool,
    /// `2F + 2`.
    pub needed: usize,
    /// Best (slab) or smallest (fiber/entry) Kruskal-rank sum found.
    pub kruskal_sum: usize,
    pub failed: Option<String>,
}

/// True when two entries of `m` agree to within `1e-9` times the largest magnitude in `m`.
pub fn has_repeated_entries(m: &CMat) -> bool {
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tol = 1e-9 * scale;
    let mut vals: Vec<_> = m.iter().copied().collect();
    vals.sort_by(|a, b| a.re.total_cmp(&b.re));
    for (p, a) in vals.iter().enumerate() {
        for b in &vals[p + 1..] {
            if b.re - a.re > tol {
                break;
            }
            if (a - b).norm() <= tol {
                return true;
            }
        }
    }
    false
}

fn full_column_rank(m: &CMat) -> bool {
    numerical_rank(m, RANK_TOL) == m.ncols()
}

/// Deterministic recoverability of the tensor `[[factors]]` under `plan`.
pub fn check_deterministic(plan: &SamplingPlan, factors: &FactorTriple) -> Result<DeterministicVerdict> {
    let f = factors.rank();
    if f > KRUSKAL_CAP {
        return Err(Error::KruskalCap { columns: f, cap: KRUSKAL_CAP });
    }
    if factors.dims() != plan.dims() {
        return Err(Error::Shape(format!("factor dims {:?} vs plan dims {:?}", factors.dims(), plan.dims())));
    }
    let needed = 2 * f + 2;
    match plan.kind() {
        PlanKind::Slab(s) => {
            let pa = gather_rows(&factors.a, Some(&s.horizontal));
            let pc = gather_rows(&factors.c, Some(&s.frontal));
            let (ka, kb, kc) = (kruskal_rank(&factors.a)?, kruskal_rank(&factors.b)?, kruskal_rank(&factors.c)?);
            let (kpa, kpc) = (kruskal_rank(&pa)?, kruskal_rank(&pc)?);
            let sum1 = kpa + kb + kc;
            let sum2 = ka + kb + kpc;
            let fcr1 = full_column_rank(&khatri_rao(&factors.b, &pc)?);
            let fcr2 = full_column_rank(&khatri_rao(&factors.b, &pa)?);
            let ok1 = sum1 >= needed && fcr1;
            let ok2 = sum2 >= needed && fcr2;
            let failed = if ok1 || ok2 {
                None
            } else {
                let why = |sum: usize, fcr: bool, kr: &str| {
                    if sum < needed {
                        format!("Kruskal sum {sum} < {needed}")
                    } else if !fcr {
                        format!("{kr} lacks full column rank")
                    } else {
                        String::new()
                    }
                };
                Some(format!(
                    "horizontal alternative: {}; frontal alternative: {}",
                    why(sum1, fcr1, "B (.) P3 C"),
                    why(sum2, fcr2, "B (.) P1 A")
                ))
            };
            Ok(DeterministicVerdict { recoverable: ok1 || ok2, needed, kruskal_sum: sum1.max(sum2), failed })
        }
        PlanKind::Fiber(_) | PlanKind::Entry(_) => {
            for (name, m) in [("A", &factors.a), ("B", &factors.b), ("C", &factors.c)] {
                if has_repeated_entries(m) {
                    return Ok(DeterministicVerdict {
                        recoverable: false,
                        needed,
                        kruskal_sum: 0,
                        failed: Some(format!("factor {name} has repeated entries")),
                    });
                }
            }
            let mut worst = usize::MAX;
            let mut failed = None;
            for (d, fp) in plan.footprints().iter().enumerate() {
                let sum = kruskal_rank(&gather_rows(&factors.a, Some(&fp[0])))?
                    + kruskal_rank(&gather_rows(&factors.b, Some(&fp[1])))?
                    + kruskal_rank(&gather_rows(&factors.c, Some(&fp[2])))?;
                if sum < worst {
                    worst = sum;
                    if sum < needed {
                        failed = Some(format!("pattern {d}: Kruskal sum {sum} < {needed}"));
                    }
                }
            }
            Ok(DeterministicVerdict { recoverable: worst >= needed, needed, kruskal_sum: worst, failed })
        }
    }
}
