//! Ratio test r₁r₂ ⋚ 1, Lyapunov certificates and spiral paths.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::generator::{check_semi_irreducible, Generator, SemiIrreducibility, DEFAULT_PROBE};
use crate::induced_chains::{
    check_sign_conditions, drift_table_with, DriftMode, DriftTable, Provenance, SignCheck, SolveOptions,
};
use crate::primitives::ph_mean;
use crate::service_disciplines::NetworkModel;
use crate::{Error, Result, Subset};

/// Half-width of the band around r₁r₂ = 1 classified as inconclusive.
pub const DECISION_MARGIN: f64 = 1e-9;

/// Relative slack on the ratio comparisons for closed-form tables.
pub const RATIO_SLACK_CLOSED: f64 = 1e-9;
/// Relative slack on the ratio comparisons when any entry is numeric.
pub const RATIO_SLACK_NUMERIC: f64 = 1e-6;

/// ρᵢ and the nominal condition ρ₁+ρ₄ < 1, ρ₂+ρ₃ < 1.
pub fn nominal_condition(model: &NetworkModel) -> ([f64; 4], bool) {
    let h: Vec<f64> = model.ph().iter().map(|ph| ph_mean(ph).unwrap_or(f64::INFINITY)).collect();
    let (l1, l3, p) = (model.lambda1(), model.lambda3(), model.p());
    let l2 = p * l1 + l3;
    let rho = [l1 * h[0], l1 * h[1], l2 * h[2], l2 * h[3]];
    let ok = rho[0] + rho[3] < 1.0 && rho[1] + rho[2] < 1.0;
    (rho, ok)
}

fn require_signs(table: &DriftTable) -> Result<Vec<SignCheck>> {
    let checks = check_sign_conditions(table);
    let failed: Vec<String> = checks.iter().filter(|c| !c.pass).map(|c| c.to_string()).collect();
    if failed.is_empty() {
        Ok(checks)
    } else {
        Err(Error::SignConditionViolated(failed.join("; ")))
    }
}

/// r_{ij}^A = |Δqᵢᴬ / Δqⱼᴬ|.
pub fn ratio(table: &DriftTable, a: Subset, i: usize, j: usize) -> f64 {
    (table.dq(a, i) / table.dq(a, j)).abs()
}

/// (r₁, r₂). Also checks the equivalent ratio forms
/// r₁ = r₂₁^{123} r₃₂^{23} + r₃₁^{123} and r₂ = r₄₃^{134} r₁₄^{14} + r₁₃^{134}.
pub fn compute_r1_r2(table: &DriftTable) -> Result<(f64, f64)> {
    require_signs(table)?;
    let q = |a, i| table.dq(a, i);
    let (s123, s134, s14, s23) = (Subset::S123, Subset::S134, Subset::S14, Subset::S23);
    let r1 = (q(s123, 2) * q(s23, 3) - q(s123, 3) * q(s23, 2)) / (q(s123, 1) * q(s23, 2));
    let r2 = (q(s134, 4) * q(s14, 1) - q(s134, 1) * q(s14, 4)) / (q(s134, 3) * q(s14, 4));
    let r1b = ratio(table, s123, 2, 1) * ratio(table, s23, 3, 2) + ratio(table, s123, 3, 1);
    let r2b = ratio(table, s134, 4, 3) * ratio(table, s14, 1, 4) + ratio(table, s134, 1, 3);
    for (x, y) in [(r1, r1b), (r2, r2b)] {
        if !((x - y).abs() <= 1e-10 * x.abs().max(1.0)) || !x.is_finite() {
            return Err(Error::SignConditionViolated(format!("ratio forms disagree: {x} vs {y}")));
        }
    }
    Ok((r1, r2))
}

/// Which of the two comparison patterns holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RatioVariant {
    /// |Δq₁ᴺ/Δq₄ᴺ| ≤ r₁₄^{14} and |Δq₃ᴺ/Δq₂ᴺ| < r₃₂^{23}.
    LeLt,
    /// |Δq₁ᴺ/Δq₄ᴺ| < r₁₄^{14} and |Δq₃ᴺ/Δq₂ᴺ| ≤ r₃₂^{23}.
    LtLe,
    Neither,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RatioConditions {
    pub variant: RatioVariant,
    pub r14_n: f64,
    pub r14_14: f64,
    pub r32_n: f64,
    pub r32_23: f64,
    /// r₁₄^{14} − r₁₄ᴺ and r₃₂^{23} − r₃₂ᴺ.
    pub margins: [f64; 2],
    pub slack: f64,
}

fn table_slack(table: &DriftTable) -> f64 {
    if table.rows.iter().any(|r| r.provenance.contains(&Provenance::Numeric)) {
        RATIO_SLACK_NUMERIC
    } else {
        RATIO_SLACK_CLOSED
    }
}

pub fn check_ratio_conditions(table: &DriftTable) -> Result<RatioConditions> {
    require_signs(table)?;
    let slack = table_slack(table);
    let r14_n = ratio(table, Subset::N, 1, 4);
    let r14_14 = ratio(table, Subset::S14, 1, 4);
    let r32_n = ratio(table, Subset::N, 3, 2);
    let r32_23 = ratio(table, Subset::S23, 3, 2);
    let le = |a: f64, b: f64| a <= b + slack * a.abs().max(b.abs());
    let lt = |a: f64, b: f64| a < b - slack * a.abs().max(b.abs());
    let variant = if le(r14_n, r14_14) && lt(r32_n, r32_23) {
        RatioVariant::LeLt
    } else if lt(r14_n, r14_14) && le(r32_n, r32_23) {
        RatioVariant::LtLe
    } else {
        RatioVariant::Neither
    };
    Ok(RatioConditions { variant, r14_n, r14_14, r32_n, r32_23, margins: [r14_14 - r14_n, r32_23 - r32_n], slack })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    PositiveRecurrent,
    Transient,
    Inconclusive,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::PositiveRecurrent => "PositiveRecurrent",
            Classification::Transient => "Transient",
            Classification::Inconclusive => "Inconclusive",
        }
    }
}

/// Positive-definite U with negative inner products against every drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LyapunovCertificate {
    pub u: [[f64; 4]; 4],
    pub epsilon: f64,
    pub delta: f64,
    /// ε/c.
    pub epsilon_ratio: f64,
    pub diagonal: [f64; 4],
    pub leading_minors: [f64; 4],
    /// (A, j, ⟨Δqᴬ, u_j⟩) in rate units.
    pub inner_products: Vec<(Subset, usize, f64)>,
    pub grid_index: u32,
}

impl LyapunovCertificate {
    pub fn matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.u[i][j])
    }
}

/// Leading minors |U_k(ε)| for U with diagonal `d` and off-diagonals
/// √(dᵢdⱼ(1−e)), by the eigenvalues of the equicorrelation matrix.
pub fn equicorrelation_minors(d: [f64; 4], e: f64) -> [f64; 4] {
    let s = (1.0 - e).sqrt();
    let one_minus_s = e / (1.0 + s);
    let mut prod = 1.0;
    std::array::from_fn(|k| {
        prod *= d[k];
        prod * one_minus_s.powi(k as i32) * (1.0 + k as f64 * s)
    })
}

/// The same minors in the expanded closed forms (c = d₁d₂d₃d₄, ε = e·c).
pub fn expanded_minors(d: [f64; 4], e: f64) -> [f64; 4] {
    let c = d.iter().product::<f64>();
    let eps = e * c;
    let q = 1.0 - e;
    [
        d[0],
        d[0] * d[1] * e,
        (3.0 * eps + 2.0 * c * (q.powf(1.5) - 1.0)) / d[3],
        (3.0 * eps * eps + 2.0 * c * c * (-3.0 * q * q + 4.0 * q.powf(1.5) - 1.0)) / c,
    ]
}

/// U(ε) with diagonal `d` and ε/c = e.
pub fn u_matrix(d: [f64; 4], e: f64) -> [[f64; 4]; 4] {
    let s = (1.0 - e).sqrt();
    std::array::from_fn(|i| std::array::from_fn(|j| if i == j { d[i] } else { s * (d[i] * d[j]).sqrt() }))
}

const CERT_GRID: u32 = 48;

/// Searches ε = c·2⁻ᵏ, δ = √ε (k = 1, 2, …) for a certificate.
pub fn lyapunov_certificate(table: &DriftTable) -> Result<LyapunovCertificate> {
    let (r1, r2) = compute_r1_r2(table)?;
    if r1 * r2 >= 1.0 {
        return Err(Error::CertificateNotFound { epsilon: f64::NAN, delta: f64::NAN });
    }
    let r32 = ratio(table, Subset::S23, 3, 2);
    let r14 = ratio(table, Subset::S14, 1, 4);
    let u11 = 1.0;
    let u22 = (r32 * (r2 / r1).sqrt()).powi(2) * u11;
    let drift = |a: Subset| -> [f64; 4] {
        let row = table.row(a).expect("sign conditions imply a full table");
        std::array::from_fn(|i| if a.contains(i + 1) { row.drifts[i] } else { 0.0 })
    };
    let (mut last_eps, mut last_delta) = (f64::NAN, f64::NAN);
    for k in 1..=CERT_GRID {
        let e = 0.5f64.powi(k as i32);
        let diag_at = |delta: f64| [u11, u22, (u22 - delta) / (r32 * r32), r14 * r14 * (u11 + delta)];
        let mut delta = 0.0;
        for _ in 0..100 {
            let d = diag_at(delta);
            let next = (d.iter().product::<f64>().max(0.0) * e).sqrt();
            if (next - delta).abs() <= 1e-15 * next.max(1e-300) {
                delta = next;
                break;
            }
            delta = next;
        }
        let d = diag_at(delta);
        let c: f64 = d.iter().product();
        last_eps = e * c;
        last_delta = delta;
        if u22 <= delta || d.iter().any(|&v| v <= 0.0) {
            continue;
        }
        let minors = equicorrelation_minors(d, e);
        if minors.iter().any(|&m| m <= 0.0) {
            continue;
        }
        let u = u_matrix(d, e);
        let mut inner = Vec::new();
        let mut ok = true;
        for a in Subset::POSITIVE {
            let q = drift(a);
            for j in a.queues() {
                let v: f64 = (0..4).map(|i| q[i] * u[i][j - 1]).sum();
                ok &= v < 0.0;
                inner.push((a, j, v));
            }
        }
        if ok {
            return Ok(LyapunovCertificate {
                u,
                epsilon: e * c,
                delta,
                epsilon_ratio: e,
                diagonal: d,
                leading_minors: minors,
                inner_products: inner,
                grid_index: k,
            });
        }
    }
    Err(Error::CertificateNotFound { epsilon: last_eps, delta: last_delta })
}

/// Points of the second-vector-field path, starting on the x₁ axis at
/// (s,0,0,0) (five points) or on the x₃ axis at (0,0,s,0) (three points).
pub fn spiral_path(table: &DriftTable, start: [f64; 4]) -> Result<Vec<[f64; 4]>> {
    require_signs(table)?;
    let q = |a, i| table.dq(a, i);
    let on_axis = |k: usize| start[k] > 0.0 && (0..4).all(|i| i == k || start[i] == 0.0);
    let from_x3 = |x3: f64| -> [[f64; 4]; 3] {
        let t3 = x3 / q(Subset::S134, 3).abs();
        let p4 = [q(Subset::S134, 1) * t3, 0.0, 0.0, q(Subset::S134, 4) * t3];
        let t4 = p4[3] / q(Subset::S14, 4).abs();
        let p5 = [p4[0] + q(Subset::S14, 1) * t4, 0.0, 0.0, 0.0];
        [[0.0, 0.0, x3, 0.0], p4, p5]
    };
    if on_axis(0) {
        let s = start[0];
        let t1 = s / q(Subset::S123, 1).abs();
        let p2 = [0.0, q(Subset::S123, 2) * t1, q(Subset::S123, 3) * t1, 0.0];
        let t2 = p2[1] / q(Subset::S23, 2).abs();
        let x3 = p2[2] + q(Subset::S23, 3) * t2;
        let rest = from_x3(x3);
        Ok(vec![start, p2, rest[0], rest[1], rest[2]])
    } else if on_axis(2) {
        Ok(from_x3(start[2]).to_vec())
    } else {
        Err(Error::InvalidArgument("spiral start must lie on the x1 or x3 axis".into()))
    }
}

/// Inputs to [`classify`].
#[derive(Debug, Clone)]
pub struct ClassifyOptions {
    pub mode: DriftMode,
    pub certificate: bool,
    pub spiral: bool,
    pub solve: SolveOptions,
    /// Box radius for the semi-irreducibility probe.
    pub probe_radius: usize,
    /// Skip the probe and take semi-irreducibility as given.
    pub assume_semi_irreducible: bool,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            mode: DriftMode::Both,
            certificate: false,
            spiral: false,
            solve: SolveOptions::default(),
            probe_radius: 2,
            assume_semi_irreducible: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StabilityReport {
    pub rho: [f64; 4],
    pub nominal_holds: bool,
    pub semi_irreducibility: Option<SemiIrreducibility>,
    pub sign_conditions_hold: bool,
    pub sign_conditions: Vec<SignCheck>,
    pub ratio_condition_variant: RatioVariant,
    pub ratio_conditions: Option<RatioConditions>,
    pub r1: Option<f64>,
    pub r2: Option<f64>,
    pub r1r2: Option<f64>,
    pub classification: Classification,
    pub reasons: Vec<String>,
    /// Set when the closed form was rejected because a parameter assumption fails.
    pub assumption_violated: Option<String>,
    pub drift_table: DriftTable,
    pub certificate: Option<LyapunovCertificate>,
    pub certificate_error: Option<String>,
    pub spiral_path: Option<Vec<[f64; 4]>>,
}

/// Full pipeline: probe, drift table, sign and ratio conditions, r₁r₂.
pub fn classify(model: &NetworkModel, opts: &ClassifyOptions) -> Result<StabilityReport> {
    let (rho, nominal) = nominal_condition(model);
    let mut reasons = Vec::new();
    let semi = if opts.assume_semi_irreducible {
        None
    } else {
        let g = Generator::new(model);
        let v = check_semi_irreducible(&g, DEFAULT_PROBE, opts.probe_radius)?;
        if v == SemiIrreducibility::Unknown {
            reasons.push(format!("semi-irreducibility not confirmed within radius {}", opts.probe_radius));
        }
        Some(v)
    };
    let table = drift_table_with(model, opts.mode, &opts.solve)?;
    let assumption_violated = table
        .notes
        .iter()
        .find_map(|n| n.strip_prefix("closed form not used: ").filter(|m| m.starts_with("assumption")))
        .map(str::to_string);
    for d in &table.cross_check {
        reasons.push(format!(
            "numeric cross-check differs for dq{}^{}: closed {:.6e}, numeric {:.6e}",
            d.queue, d.subset, d.closed_form, d.numeric
        ));
    }
    if !table.all_converged() {
        reasons.extend(table.notes.iter().filter(|n| n.contains("did not converge")).cloned());
    }
    let signs = check_sign_conditions(&table);
    let signs_ok = signs.iter().all(|c| c.pass);
    let mut report = StabilityReport {
        rho,
        nominal_holds: nominal,
        semi_irreducibility: semi,
        sign_conditions_hold: signs_ok,
        sign_conditions: signs.clone(),
        ratio_condition_variant: RatioVariant::Neither,
        ratio_conditions: None,
        r1: None,
        r2: None,
        r1r2: None,
        classification: Classification::Inconclusive,
        reasons: Vec::new(),
        assumption_violated,
        drift_table: table.clone(),
        certificate: None,
        certificate_error: None,
        spiral_path: None,
    };
    if let Some(a) = &report.assumption_violated {
        reasons.push(a.clone());
    }
    if !signs_ok {
        for c in signs.iter().filter(|c| !c.pass) {
            reasons.push(format!("sign condition fails: {c}"));
        }
        if model.lambda1() == 0.0 {
            reasons.push("ratio conditions degenerate".into());
        }
        report.reasons = reasons;
        return Ok(report);
    }
    let (r1, r2) = compute_r1_r2(&table)?;
    let rc = check_ratio_conditions(&table)?;
    report.r1 = Some(r1);
    report.r2 = Some(r2);
    report.r1r2 = Some(r1 * r2);
    report.ratio_condition_variant = rc.variant;
    report.ratio_conditions = Some(rc.clone());
    if opts.spiral {
        report.spiral_path = Some(spiral_path(&table, [1.0, 0.0, 0.0, 0.0])?);
    }
    let numeric_trouble = !table.all_converged() || (!table.cross_check.is_empty() && opts.mode == DriftMode::Numeric);
    let prod = r1 * r2;
    if rc.variant == RatioVariant::Neither {
        reasons.push(format!(
            "ratio conditions fail: r14 {:.6e} vs {:.6e}, r32 {:.6e} vs {:.6e}",
            rc.r14_n, rc.r14_14, rc.r32_n, rc.r32_23
        ));
    } else if semi == Some(SemiIrreducibility::Unknown) || numeric_trouble {
        // reasons already recorded
    } else if prod < 1.0 - DECISION_MARGIN {
        report.classification = Classification::PositiveRecurrent;
    } else if prod > 1.0 + DECISION_MARGIN {
        report.classification = Classification::Transient;
    } else {
        reasons.push(format!("r1*r2 = {prod:.12} is within {DECISION_MARGIN:e} of 1"));
    }
    if opts.certificate && report.classification == Classification::PositiveRecurrent {
        match lyapunov_certificate(&table) {
            Ok(c) => report.certificate = Some(c),
            Err(e) => report.certificate_error = Some(e.to_string()),
        }
    }
    report.reasons = reasons;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::induced_chains::drift_table;
    use crate::service_disciplines::Discipline;

    fn np(l1: f64, l3: f64, mu: [f64; 4], p: f64) -> NetworkModel {
        NetworkModel::exponential(l1, l3, mu, p, Discipline::NonPreemptive).unwrap()
    }

    #[test]
    fn nominal_examples() {
        let (rho, ok) = nominal_condition(&np(1.0, 0.0, [5.0, 2.0, 5.0, 2.0], 1.0));
        for (a, b) in rho.iter().zip([0.2, 0.5, 0.2, 0.5]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(ok);
        let (rho, ok) = nominal_condition(&np(0.0, 0.0, [5.0, 2.0, 5.0, 2.0], 0.5));
        assert_eq!(rho, [0.0; 4]);
        assert!(ok);
        // Slow classes 2 and 4 overload the virtual station, not a real one.
        let (rho, ok) = nominal_condition(&np(1.0, 1.0, [10.0, 1.5, 10.0, 1.5], 0.0));
        assert!((rho[1] + rho[3] - 2.0 / 1.5).abs() < 1e-12);
        assert!(ok);
        let (rho, ok) = nominal_condition(&np(1.0, 1.0, [10.0, 1.5, 1.5, 10.0], 0.0));
        assert!((rho[1] + rho[2] - 2.0 / 1.5).abs() < 1e-12);
        assert!(!ok);
    }

    #[test]
    fn priority_r_values() {
        let (l1, l3, mu, p) = (1.0, 0.5, [5.0, 2.0, 4.0, 1.5], 0.3);
        let t = drift_table(&np(l1, l3, mu, p), DriftMode::ClosedForm).unwrap();
        let (r1, r2) = compute_r1_r2(&t).unwrap();
        assert!((r1 - (l3 + p * mu[1]) / (mu[1] - l1)).abs() < 1e-12);
        assert!((r2 - l1 / (mu[3] - l3)).abs() < 1e-12);
        assert_eq!(check_ratio_conditions(&t).unwrap().variant, RatioVariant::LeLt);
    }

    #[test]
    fn zero_denominator_rejected() {
        let t = drift_table(&np(1.0, 0.5, [5.0, 2.0, 4.0, 1.5], 0.3), DriftMode::ClosedForm).unwrap();
        let mut t2 = t.clone();
        t2.rows[4].drifts[1] = 0.0;
        assert!(matches!(compute_r1_r2(&t2), Err(Error::SignConditionViolated(_))));
        assert!(matches!(check_ratio_conditions(&t2), Err(Error::SignConditionViolated(_))));
        assert!(matches!(spiral_path(&t2, [1.0, 0.0, 0.0, 0.0]), Err(Error::SignConditionViolated(_))));
    }

    #[test]
    fn lambda3_zero_still_first_variant() {
        let t = drift_table(&np(1.0, 0.0, [5.0, 2.0, 4.0, 1.5], 0.3), DriftMode::ClosedForm).unwrap();
        let rc = check_ratio_conditions(&t).unwrap();
        assert_eq!(rc.variant, RatioVariant::LeLt);
        assert!(rc.margins[0].abs() < 1e-12);
    }

    #[test]
    fn minors_forms_agree() {
        let d = [1.0, 2.0, 0.7, 3.0];
        for e in [0.5, 0.1, 1e-3] {
            let a = equicorrelation_minors(d, e);
            let b = expanded_minors(d, e);
            let m = Matrix4::from_fn(|i, j| u_matrix(d, e)[i][j]);
            for k in 0..4 {
                let det = m.view((0, 0), (k + 1, k + 1)).determinant();
                assert!((a[k] - b[k]).abs() < 1e-9 * a[k].abs().max(1e-3), "{k} {e}");
                assert!((a[k] - det).abs() < 1e-9 * a[k].abs().max(1e-3));
            }
        }
        assert_eq!(equicorrelation_minors(d, 0.0)[1], 0.0);
    }

    #[test]
    fn spiral_examples() {
        let t = drift_table(&np(1.0, 0.5, [5.0, 2.0, 4.0, 1.5], 0.3), DriftMode::ClosedForm).unwrap();
        let (r1, r2) = compute_r1_r2(&t).unwrap();
        let path = spiral_path(&t, [1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(path.len(), 5);
        assert!((path[2][2] - r1).abs() < 1e-12);
        let tail = spiral_path(&t, [0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((tail[2][0] - r2).abs() < 1e-12);
        assert!(spiral_path(&t, [1.0, 1.0, 0.0, 0.0]).is_err());
    }
}
