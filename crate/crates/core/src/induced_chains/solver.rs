//! Stationary solvers for finite generators produced by truncating an
//! induced chain.

use nalgebra::DMatrix;

use crate::linalg::{generator_stationary, Csr};

/// Dense LU is used up to this many states.
pub const DENSE_LIMIT: usize = 1500;

/// Largest level block handled by block elimination.
pub const LEVEL_BLOCK_LIMIT: usize = 400;

const GS_MAX_SWEEPS: usize = 20_000;
const GS_CHECK_EVERY: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dense,
    LevelReduction,
    GaussSeidel,
}

/// A truncated chain: generator plus, for one-dimensional chains, the
/// level of each state (states sorted by level).
pub struct FiniteChain {
    pub q: Csr,
    pub levels: Option<Vec<usize>>,
}

/// Solves πQ = 0, π1 = 1. `tol` is the target max |πQ| for iterative paths.
pub fn solve(chain: &FiniteChain, warm: Option<&[f64]>, tol: f64) -> (Vec<f64>, Method) {
    let n = chain.q.nrows();
    if n <= DENSE_LIMIT {
        if let Ok(pi) = generator_stationary(&chain.q.to_dense()) {
            let pi: Vec<f64> = pi.iter().map(|v| v.max(0.0)).collect();
            return (normalized(pi), Method::Dense);
        }
    }
    if let Some(levels) = &chain.levels {
        if let Some(pi) = level_reduction(&chain.q, levels) {
            return (pi, Method::LevelReduction);
        }
    }
    (gauss_seidel(&chain.q, warm, tol), Method::GaussSeidel)
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        for x in &mut v {
            *x /= s;
        }
    }
    v
}

fn block(q: &Csr, rows: (usize, usize), cols: (usize, usize)) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(rows.1 - rows.0, cols.1 - cols.0);
    for i in rows.0..rows.1 {
        let (c, v) = q.row(i);
        for (&j, &x) in c.iter().zip(v) {
            if j >= cols.0 && j < cols.1 {
                b[(i - rows.0, j - cols.0)] = x;
            }
        }
    }
    b
}

/// Block Gaussian elimination from the top level down to level 0 (the
/// censored chain on the lower levels), then back substitution.
fn level_reduction(q: &Csr, levels: &[usize]) -> Option<Vec<f64>> {
    let top = *levels.last()?;
    let mut ranges = vec![(0usize, 0usize); top + 1];
    let mut start = 0;
    for l in 0..=top {
        let mut end = start;
        while end < levels.len() && levels[end] == l {
            end += 1;
        }
        ranges[l] = (start, end);
        start = end;
    }
    if ranges.iter().any(|r| r.1 - r.0 > LEVEL_BLOCK_LIMIT || r.1 == r.0) {
        return None;
    }
    // w[l] = A(l, l+1) (−U_{l+1})⁻¹
    let mut w: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); top];
    let mut u = block(q, ranges[top], ranges[top]);
    for l in (0..top).rev() {
        let inv = (-&u).try_inverse()?;
        if inv.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let up = block(q, ranges[l], ranges[l + 1]);
        let down = block(q, ranges[l + 1], ranges[l]);
        let wl = up * inv;
        u = block(q, ranges[l], ranges[l]) + &wl * down;
        w[l] = wl;
    }
    let pi0 = generator_stationary(&u).ok()?;
    let mut pi = Vec::with_capacity(levels.len());
    let mut cur = pi0.transpose();
    pi.extend(cur.iter().copied());
    for wl in &w {
        cur = &cur * wl;
        pi.extend(cur.iter().copied());
    }
    if pi.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(normalized(pi.into_iter().map(|v| v.max(0.0)).collect()))
}

/// Max |(πQ)_j| over all states.
pub fn balance_residual(q: &Csr, pi: &[f64]) -> Vec<f64> {
    q.left_mul(pi)
}

/// Symmetric Gauss–Seidel on the balance equations, normalizing after each
/// sweep.
fn gauss_seidel(q: &Csr, warm: Option<&[f64]>, tol: f64) -> Vec<f64> {
    let n = q.nrows();
    let qt = q.transpose();
    let diag = q.diagonal();
    let mut pi = match warm {
        Some(w) if w.len() == n && w.iter().sum::<f64>() > 0.0 => normalized(w.to_vec()),
        _ => vec![1.0 / n as f64; n],
    };
    let update = |pi: &mut Vec<f64>, j: usize| {
        let d = -diag[j];
        if d <= 0.0 {
            return;
        }
        let (cols, vals) = qt.row(j);
        let mut inflow = 0.0;
        for (&i, &v) in cols.iter().zip(vals) {
            if i != j {
                inflow += pi[i] * v;
            }
        }
        pi[j] = inflow / d;
    };
    for sweep in 0..GS_MAX_SWEEPS {
        for j in 0..n {
            update(&mut pi, j);
        }
        for j in (0..n).rev() {
            update(&mut pi, j);
        }
        pi = normalized(pi);
        if sweep % GS_CHECK_EVERY == GS_CHECK_EVERY - 1 {
            let r = q.left_mul(&pi);
            if r.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= tol {
                break;
            }
        }
    }
    pi
}

#[cfg(test)]
mod tests {
    use super::*;

    // Birth-death chain with rates a up, b down on 0..n.
    fn birth_death(n: usize, a: f64, b: f64, block: usize) -> FiniteChain {
        let mut trips = Vec::new();
        for l in 0..=n {
            for k in 0..block {
                let s = l * block + k;
                let mut out = 0.0;
                if l < n {
                    trips.push((s, s + block, a));
                    out += a;
                }
                if l > 0 {
                    trips.push((s, s - block, b));
                    out += b;
                }
                let t = l * block + (k + 1) % block;
                if block > 1 {
                    trips.push((s, t, 1.0));
                    out += 1.0;
                }
                trips.push((s, s, -out));
            }
        }
        let m = (n + 1) * block;
        FiniteChain {
            q: Csr::from_triplets(m, m, trips),
            levels: Some((0..m).map(|s| s / block).collect()),
        }
    }

    fn geometric(n: usize, r: f64) -> Vec<f64> {
        let w: Vec<f64> = (0..=n).map(|l| r.powi(l as i32)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }

    #[test]
    fn all_methods_agree_on_birth_death() {
        let c = birth_death(60, 1.0, 2.0, 2);
        let want = geometric(60, 0.5);
        let (d, m) = solve(&c, None, 1e-14);
        assert_eq!(m, Method::Dense);
        let lr = level_reduction(&c.q, c.levels.as_ref().unwrap()).unwrap();
        let gs = gauss_seidel(&c.q, None, 1e-15);
        for l in 0..=60 {
            let agg = |p: &[f64]| p[2 * l] + p[2 * l + 1];
            assert!((agg(&d) - want[l]).abs() < 1e-12);
            assert!((agg(&lr) - want[l]).abs() < 1e-12);
            assert!((agg(&gs) - want[l]).abs() < 1e-10);
        }
    }

    #[test]
    fn large_chain_uses_levels() {
        let c = birth_death(1000, 1.0, 3.0, 2);
        let (pi, m) = solve(&c, None, 1e-14);
        assert_eq!(m, Method::LevelReduction);
        let r = balance_residual(&c.q, &pi);
        assert!(r.iter().all(|v| v.abs() < 1e-13));
    }
}
