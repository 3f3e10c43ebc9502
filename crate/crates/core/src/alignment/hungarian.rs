use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Minimum-cost perfect assignment of a square cost matrix.
///
/// `result[r]` is the column assigned to row `r`. Among all optimal
/// assignments the lexicographically smallest one is returned.
pub fn hungarian(cost: &DMatrix<f64>) -> Result<Vec<usize>> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(Error::Shape(format!("cost matrix must be square, got {}x{}", n, cost.ncols())));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cost matrix".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let (u, v) = potentials(cost);
    let scale = cost.iter().fold(0.0f64, |m, c| m.max(c.abs())) + 1.0;
    let tol = 1e-9 * scale;
    let tight: Vec<Vec<bool>> =
        (0..n).map(|r| (0..n).map(|c| cost[(r, c)] - u[r] - v[c] <= tol).collect()).collect();
    lexicographic_matching(&tight).ok_or_else(|| Error::InvalidArgument("assignment solver failed".into()))
}

/// Optimal dual potentials with `cost[r][c] >= u[r] + v[c]`, equality on an optimal assignment.
fn potentials(cost: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = cost.nrows();
    let inf = f64::INFINITY;
    // 1-based arrays; row 0 / column 0 are sentinels.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (u[1..].to_vec(), v[1..].to_vec())
}

/// Lexicographically smallest perfect matching using only `tight` edges.
fn lexicographic_matching(tight: &[Vec<bool>]) -> Option<Vec<usize>> {
    let n = tight.len();
    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    let mut col_used = vec![false; n];
    for r in 0..n {
        let mut chosen = None;
        for c in 0..n {
            if col_used[c] || !tight[r][c] {
                continue;
            }
            col_used[c] = true;
            if has_perfect_matching(tight, r + 1, &col_used) {
                chosen = Some(c);
                break;
            }
            col_used[c] = false;
        }
        fixed.push(chosen?);
    }
    Some(fixed)
}

/// Whether rows `first..n` can be matched into the unused columns (Kuhn's algorithm).
fn has_perfect_matching(tight: &[Vec<bool>], first: usize, col_used: &[bool]) -> bool {
    let n = tight.len();
    let mut match_col: Vec<Option<usize>> = vec![None; n];
    fn augment(
        r: usize,
        tight: &[Vec<bool>],
        col_used: &[bool],
        seen: &mut [bool],
        match_col: &mut [Option<usize>],
    ) -> bool {
        for c in 0..tight.len() {
            if col_used[c] || seen[c] || !tight[r][c] {
                continue;
            }
            seen[c] = true;
            if match_col[c].is_none_or(|other| augment(other, tight, col_used, seen, match_col)) {
                match_col[c] = Some(r);
                return true;
            }
        }
        false
    }
    for r in first..n {
        let mut seen = vec![false; n];
        if !augment(r, tight, col_used, &mut seen, &mut match_col) {
            return false;
        }
    }
    true
}

/// Total cost of an assignment.
pub fn assignment_cost(cost: &DMatrix<f64>, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(r, &c)| cost[(r, c)]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_prefer_lexicographically_smallest() {
        let cost = DMatrix::from_element(3, 3, 1.0);
        assert_eq!(hungarian(&cost).unwrap(), vec![0, 1, 2]);
        let cost = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(hungarian(&cost).unwrap(), vec![0, 1]);
    }

    #[test]
    fn rejects_non_square_and_nan() {
        assert!(hungarian(&DMatrix::zeros(2, 3)).is_err());
        assert!(hungarian(&DMatrix::from_element(2, 2, f64::NAN)).is_err());
    }
}
