//! Phase-1 simplex for small dense feasibility problems.

/// Row of a feasibility problem.
#[derive(Debug, Clone)]
pub enum Constraint {
    /// `a · x = b`
    Eq(Vec<f64>, f64),
    /// `a · x <= b` with `b >= 0`
    Le(Vec<f64>, f64),
}

/// Decides whether `{x >= 0 : constraints}` is non-empty.
///
/// Returns a feasible point when one exists. Bland's rule keeps the pivot
/// sequence finite.
pub fn find_feasible(n_vars: usize, constraints: &[Constraint], tol: f64) -> Option<Vec<f64>> {
    let m = constraints.len();
    let n_slack = constraints.iter().filter(|c| matches!(c, Constraint::Le(..))).count();
    let n_art = m - n_slack;
    let width = n_vars + n_slack + n_art;
    // Tableau rows: constraint rows then the phase-1 objective row.
    let mut t = vec![vec![0.0; width + 1]; m + 1];
    let mut basis = vec![0usize; m];
    let mut slack = n_vars;
    let mut art = n_vars + n_slack;
    for (r, c) in constraints.iter().enumerate() {
        match c {
            Constraint::Le(a, b) => {
                debug_assert!(*b >= 0.0);
                t[r][..n_vars].copy_from_slice(&a[..n_vars]);
                t[r][slack] = 1.0;
                t[r][width] = *b;
                basis[r] = slack;
                slack += 1;
            }
            Constraint::Eq(a, b) => {
                let sign = if *b < 0.0 { -1.0 } else { 1.0 };
                for k in 0..n_vars {
                    t[r][k] = sign * a[k];
                }
                t[r][art] = 1.0;
                t[r][width] = sign * b;
                basis[r] = art;
                art += 1;
            }
        }
    }
    // Objective: minimize the sum of artificials, expressed in non-basic terms.
    for r in 0..m {
        if basis[r] >= n_vars + n_slack {
            for k in 0..=width {
                if k < n_vars + n_slack || k == width {
                    t[m][k] -= t[r][k];
                }
            }
        }
    }
    let scale = t[..m].iter().map(|row| row[width].abs()).fold(1.0, f64::max);
    let eps = 1e-12;
    for _ in 0..10_000 {
        // Entering column: lowest index with negative reduced cost.
        let Some(enter) = (0..width).find(|&k| t[m][k] < -eps) else {
            break;
        };
        // Ratio test, ties broken by lowest basis index.
        let mut leave: Option<(f64, usize)> = None;
        for r in 0..m {
            if t[r][enter] > eps {
                let ratio = t[r][width] / t[r][enter];
                match leave {
                    Some((best, br)) if ratio > best + 1e-15 || (ratio >= best - 1e-15 && basis[r] >= basis[br]) => {}
                    _ => leave = Some((ratio, r)),
                }
            }
        }
        let Some((_, pr)) = leave else {
            break;
        };
        let pivot = t[pr][enter];
        for k in 0..=width {
            t[pr][k] /= pivot;
        }
        for r in 0..=m {
            if r != pr {
                let f = t[r][enter];
                if f != 0.0 {
                    for k in 0..=width {
                        t[r][k] -= f * t[pr][k];
                    }
                }
            }
        }
        basis[pr] = enter;
    }
    let infeasibility = -t[m][width];
    if infeasibility > tol * scale {
        return None;
    }
    let mut x = vec![0.0; n_vars];
    for r in 0..m {
        if basis[r] < n_vars {
            x[basis[r]] = t[r][width].max(0.0);
        }
    }
    Some(x)
}
