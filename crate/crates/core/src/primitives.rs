//! Markovian arrival processes and phase-type distributions.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::linalg::{self, STRUCT_TOL};
use crate::{Error, Result};

/// A validated MAP (C, D). `C` holds phase changes without an arrival,
/// `D` those with exactly one arrival.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSpec {
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

/// A validated phase-type distribution (β, H) with exit vector h = −H·1.
#[derive(Debug, Clone, PartialEq)]
pub struct PhSpec {
    beta: RowDVector<f64>,
    h: DMatrix<f64>,
    exit: DVector<f64>,
}

fn row_scale(m: &DMatrix<f64>, i: usize) -> f64 {
    m.row(i).iter().fold(1.0f64, |acc, v| acc.max(v.abs()))
}

/// Validates a MAP. Never repairs the input.
pub fn validate_map(c: DMatrix<f64>, d: DMatrix<f64>) -> Result<MapSpec> {
    let n = c.nrows();
    if n == 0 || c.ncols() != n || d.nrows() != n || d.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "C is {}x{}, D is {}x{}",
            c.nrows(),
            c.ncols(),
            d.nrows(),
            d.ncols()
        )));
    }
    for i in 0..n {
        for j in 0..n {
            let (cv, dv) = (c[(i, j)], d[(i, j)]);
            if !cv.is_finite() || !dv.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite entry at ({i}, {j})")));
            }
            if i != j && cv < 0.0 {
                return Err(Error::NegativeRate { what: "C".into(), row: i, col: j, value: cv });
            }
            if i == j && cv > 0.0 {
                return Err(Error::NegativeRate { what: "-diag(C)".into(), row: i, col: j, value: -cv });
            }
            if dv < 0.0 {
                return Err(Error::NegativeRate { what: "D".into(), row: i, col: j, value: dv });
            }
        }
    }
    let g = &c + &d;
    let mut worst = (0usize, 0.0f64);
    for i in 0..n {
        let r = g.row(i).sum();
        if r.abs() > worst.1.abs() {
            worst = (i, r);
        }
    }
    let scale = row_scale(&c, worst.0).max(row_scale(&d, worst.0));
    if worst.1.abs() > STRUCT_TOL * scale {
        return Err(Error::RowSumNonzero { row: worst.0, residual: worst.1 });
    }
    if let Some(i) = linalg::first_unconnected(&g) {
        return Err(Error::ReducibleGenerator { unreachable: i });
    }
    Ok(MapSpec { c, d })
}

impl MapSpec {
    /// Poisson process of the given rate (one phase).
    pub fn poisson(rate: f64) -> Result<MapSpec> {
        validate_map(DMatrix::from_element(1, 1, -rate), DMatrix::from_element(1, 1, rate))
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn phases(&self) -> usize {
        self.c.nrows()
    }

    /// Multiplies every rate by `s > 0`.
    pub fn scaled(&self, s: f64) -> MapSpec {
        MapSpec { c: &self.c * s, d: &self.d * s }
    }
}

/// Stationary phase distribution π* of C + D.
pub fn map_stationary_phase(map: &MapSpec) -> Result<DVector<f64>> {
    let g = map.c() + map.d();
    let pi = linalg::generator_stationary(&g)?;
    let res = (pi.transpose() * &g).amax();
    let scale = g.amax().max(1.0);
    if res > linalg::SOLVE_TOL * scale {
        return Err(Error::SingularSolve(format!("MAP phase residual {res:e}")));
    }
    Ok(pi)
}

/// Mean arrival rate λ = π* D 1.
pub fn map_arrival_rate(map: &MapSpec) -> Result<f64> {
    if map.d().iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let pi = map_stationary_phase(map)?;
    Ok((pi.transpose() * map.d()).sum())
}

/// Validates a PH representation. Never repairs the input.
pub fn validate_ph(beta: RowDVector<f64>, h: DMatrix<f64>) -> Result<PhSpec> {
    let n = beta.len();
    if n == 0 || h.nrows() != n || h.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "beta has {} entries, H is {}x{}",
            n,
            h.nrows(),
            h.ncols()
        )));
    }
    for (i, &b) in beta.iter().enumerate() {
        if !b.is_finite() || b < 0.0 {
            return Err(Error::NegativeProbability { index: i, value: b });
        }
    }
    let sum = beta.sum();
    if (sum - 1.0).abs() > STRUCT_TOL {
        return Err(Error::BetaSumNotOne { sum });
    }
    for i in 0..n {
        for j in 0..n {
            let v = h[(i, j)];
            if !v.is_finite() {
                return Err(Error::InvalidSubgenerator(format!("non-finite entry at ({i}, {j})")));
            }
            if i != j && v < 0.0 {
                return Err(Error::InvalidSubgenerator(format!("negative off-diagonal {v} at ({i}, {j})")));
            }
        }
    }
    let mut exit = DVector::zeros(n);
    for i in 0..n {
        let r = h.row(i).sum();
        if r > STRUCT_TOL * row_scale(&h, i) {
            return Err(Error::InvalidSubgenerator(format!("row {i} sums to {r:e} > 0")));
        }
        exit[i] = (-r).max(0.0);
    }
    // Every phase must be able to reach a phase with a positive exit rate.
    let n_ext = n + 1;
    let mut g = DMatrix::zeros(n_ext, n_ext);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                g[(i, j)] = h[(i, j)];
            }
        }
        g[(i, n)] = exit[i];
    }
    let can_exit = linalg::reachable_dense(&g.transpose(), n);
    if can_exit.iter().take(n).any(|&r| !r) {
        return Err(Error::SingularH);
    }
    if h.clone().lu().try_inverse().is_none() {
        return Err(Error::SingularH);
    }
    Ok(PhSpec { beta, h, exit })
}

impl PhSpec {
    pub fn exponential(rate: f64) -> Result<PhSpec> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidSubgenerator(format!("rate {rate} must be positive")));
        }
        validate_ph(RowDVector::from_element(1, 1.0), DMatrix::from_element(1, 1, -rate))
    }

    /// Erlang distribution with `phases` stages of rate `rate` each.
    pub fn erlang(phases: usize, rate: f64) -> Result<PhSpec> {
        if phases == 0 {
            return Err(Error::DimensionMismatch("Erlang needs at least one phase".into()));
        }
        let mut h = DMatrix::zeros(phases, phases);
        for i in 0..phases {
            h[(i, i)] = -rate;
            if i + 1 < phases {
                h[(i, i + 1)] = rate;
            }
        }
        let mut beta = RowDVector::zeros(phases);
        beta[0] = 1.0;
        validate_ph(beta, h)
    }

    pub fn beta(&self) -> &RowDVector<f64> {
        &self.beta
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// Exit rate vector h = −H·1.
    pub fn exit(&self) -> &DVector<f64> {
        &self.exit
    }

    pub fn phases(&self) -> usize {
        self.beta.len()
    }

    /// Completion rate μ = 1 / mean.
    pub fn rate(&self) -> f64 {
        1.0 / ph_mean(self).expect("validated PH has a mean")
    }

    pub fn scaled(&self, s: f64) -> PhSpec {
        PhSpec { beta: self.beta.clone(), h: &self.h * s, exit: &self.exit * s }
    }
}

/// Mean β(−H)⁻¹1.
pub fn ph_mean(ph: &PhSpec) -> Result<f64> {
    let n = ph.phases();
    let neg = -ph.h();
    let x = neg.lu().solve(&DVector::from_element(n, 1.0)).ok_or(Error::SingularH)?;
    let m = (ph.beta() * x)[0];
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::SingularH);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn poisson_map() {
        let map = validate_map(m(1, 1, &[-2.0]), m(1, 1, &[2.0])).unwrap();
        assert_eq!(map_stationary_phase(&map).unwrap()[0], 1.0);
        assert!((map_arrival_rate(&map).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn row_sum_rejected() {
        let err = validate_map(m(1, 1, &[-2.0]), m(1, 1, &[1.0])).unwrap_err();
        assert!(matches!(err, Error::RowSumNonzero { row: 0, residual } if (residual + 1.0).abs() < 1e-15));
    }

    #[test]
    fn mmpp_two_phase() {
        let map = validate_map(m(2, 2, &[-3.0, 1.0, 2.0, -4.0]), m(2, 2, &[2.0, 0.0, 0.0, 2.0])).unwrap();
        // Balance of the phase chain [[-1,1],[2,-2]]: π = (2/3, 1/3).
        let pi = map_stationary_phase(&map).unwrap();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((pi[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((map_arrival_rate(&map).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_switch() {
        let a = 1.7;
        let map = validate_map(m(2, 2, &[-a - 1.0, a, a, -a - 3.0]), m(2, 2, &[1.0, 0.0, 0.0, 3.0])).unwrap();
        let pi = map_stationary_phase(&map).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-12);
        assert!((map_arrival_rate(&map).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_d_gives_zero_rate() {
        let map = validate_map(m(2, 2, &[-1.0, 1.0, 1.0, -1.0]), DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(map_arrival_rate(&map).unwrap(), 0.0);
    }

    #[test]
    fn map_errors() {
        assert!(matches!(validate_map(m(1, 1, &[-1.0]), DMatrix::zeros(2, 2)), Err(Error::DimensionMismatch(_))));
        assert!(matches!(
            validate_map(m(2, 2, &[-1.0, -1.0, 0.0, 0.0]), m(2, 2, &[2.0, 0.0, 0.0, 0.0])),
            Err(Error::NegativeRate { .. })
        ));
        assert!(matches!(
            validate_map(m(2, 2, &[-1.0, 0.0, 0.0, -1.0]), m(2, 2, &[1.0, 0.0, 0.0, 1.0])),
            Err(Error::ReducibleGenerator { unreachable: 1 })
        ));
    }

    #[test]
    fn ph_examples() {
        let e = PhSpec::exponential(3.0).unwrap();
        assert!((ph_mean(&e).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let er = validate_ph(RowDVector::from_row_slice(&[1.0, 0.0]), m(2, 2, &[-4.0, 4.0, 0.0, -4.0])).unwrap();
        assert!((ph_mean(&er).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(er.exit().as_slice(), &[0.0, 4.0]);
        let hyper = validate_ph(RowDVector::from_row_slice(&[0.4, 0.6]), m(2, 2, &[-1.0, 0.0, 0.0, -5.0])).unwrap();
        assert!((ph_mean(&hyper).unwrap() - 0.52).abs() < 1e-14);
    }

    #[test]
    fn ph_errors() {
        let h = m(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            validate_ph(RowDVector::from_row_slice(&[0.5, 0.6]), h.clone()),
            Err(Error::BetaSumNotOne { .. })
        ));
        assert!(matches!(
            validate_ph(RowDVector::from_row_slice(&[1.2, -0.2]), h.clone()),
            Err(Error::NegativeProbability { index: 1, .. })
        ));
        assert!(matches!(
            validate_ph(RowDVector::from_row_slice(&[1.0, 0.0]), m(2, 2, &[-1.0, 2.0, 0.0, -1.0])),
            Err(Error::InvalidSubgenerator(_))
        ));
        // Phase 1 loops back to phase 0 without ever exiting.
        assert!(matches!(
            validate_ph(RowDVector::from_row_slice(&[1.0, 0.0]), m(2, 2, &[-1.0, 1.0, 1.0, -1.0])),
            Err(Error::SingularH)
        ));
    }
}
