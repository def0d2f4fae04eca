//! Induced chains on saturated faces, their stationary distributions, and
//! the drift table Δqᵢᴬ for A in 𝒩ₚ.

pub mod solver;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::generator::{signature, signature_index, BlockKernel, Disp, Generator, SIGNATURES};
use crate::linalg::Csr;
use crate::service_disciplines::{Discipline, NetworkModel};
use crate::stability::nominal_condition;
use crate::{Error, Result, Subset};

pub use solver::Method;

/// Interior representative used for saturated coordinates.
pub const SATURATED_LEVEL: usize = 2;

/// Relative tolerance for numeric vs closed-form cross-checks.
pub const CROSS_CHECK_TOL: f64 = 1e-4;

pub const RESIDUAL_TOL: f64 = 1e-8;
pub const TAIL_TOL: f64 = 1e-6;

/// The induced chain 𝓛ᴬ: queues in A pinned at the interior regime, their
/// displacements summed out.
#[derive(Debug, Clone)]
pub struct InducedChain {
    subset: Subset,
    free: Vec<usize>,
    generator: Generator,
    nu: f64,
    // Indexed by full signature; only signatures with A-coordinates at 2.
    moves: Vec<Vec<(Disp, Csr)>>,
}

pub fn build_induced_chain(kernel: &BlockKernel, subset: Subset) -> Result<InducedChain> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let g = kernel.generator().clone();
    let free = subset.free_coords();
    let mut moves = vec![Vec::new(); SIGNATURES];
    for (idx, slot) in moves.iter_mut().enumerate() {
        let s = crate::generator::signature_from_index(idx);
        if (0..4).any(|i| subset.contains(i + 1) && s[i] != 2) {
            continue;
        }
        let mut merged: Vec<(Disp, Csr)> = Vec::new();
        for (z, b) in &g.sig(s).blocks {
            let mut zp = *z;
            for i in 0..4 {
                if subset.contains(i + 1) {
                    zp[i] = 0;
                }
            }
            match merged.iter_mut().find(|(d, _)| *d == zp) {
                Some((_, acc)) => *acc = acc.add(b),
                None => merged.push((zp, b.clone())),
            }
        }
        *slot = merged;
    }
    Ok(InducedChain { subset, free, generator: g, nu: kernel.nu(), moves })
}

impl InducedChain {
    pub fn subset(&self) -> Subset {
        self.subset
    }

    /// Number of unbounded coordinates, 4 − |A|.
    pub fn dimension(&self) -> usize {
        self.free.len()
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    /// Full 4-vector for free-coordinate values `y`.
    fn lift(&self, y: &[usize]) -> [usize; 4] {
        let mut x = [SATURATED_LEVEL; 4];
        for (k, &c) in self.free.iter().enumerate() {
            x[c] = y[k];
        }
        x
    }

    /// Rate blocks of the induced chain at free-coordinate values `y`.
    pub fn rate_blocks(&self, y: &[usize]) -> &[(Disp, Csr)] {
        &self.moves[signature_index(signature(self.lift(y)))]
    }

    /// Summed one-step probability blocks, I + (Σ Q)/ν, at `y`.
    pub fn probability_blocks(&self, y: &[usize]) -> Vec<(Disp, Csr)> {
        self.rate_blocks(y)
            .iter()
            .map(|(z, b)| {
                let p = b.scaled(1.0 / self.nu);
                (*z, if z.iter().all(|&v| v == 0) { p.add_identity(1.0) } else { p })
            })
            .collect()
    }

    /// Truncates to [0, level]^d, folding moves above the box back onto it,
    /// keeping only states reachable from (0, background 0).
    fn truncate(&self, level: usize, max_states: usize) -> Option<Truncated> {
        let d = self.free.len();
        let m = self.generator.phase_dim();
        let side = level + 1;
        let cells = side.checked_pow(d as u32)?;
        let box_size = cells.checked_mul(m)?;
        if box_size > max_states {
            return None;
        }
        let decode = |mut cell: usize| -> Vec<usize> {
            let mut y = vec![0; d];
            for k in (0..d).rev() {
                y[k] = cell % side;
                cell /= side;
            }
            y
        };
        let encode = |y: &[usize]| y.iter().fold(0usize, |acc, &v| acc * side + v);
        let step = |y: &[usize], z: &Disp| -> Vec<usize> {
            self.free
                .iter()
                .zip(y)
                .map(|(&c, &v)| (v as i64 + z[c] as i64).clamp(0, level as i64) as usize)
                .collect()
        };
        let mut seen = vec![false; box_size];
        seen[0] = true;
        let mut stack = vec![0usize];
        while let Some(s) = stack.pop() {
            let (cell, j) = (s / m, s % m);
            let y = decode(cell);
            for (z, b) in self.rate_blocks(&y) {
                let base = encode(&step(&y, z)) * m;
                for &jp in b.row(j).0 {
                    let t = base + jp;
                    if !seen[t] {
                        seen[t] = true;
                        stack.push(t);
                    }
                }
            }
        }
        let mut index = vec![u32::MAX; box_size];
        let mut ids = Vec::new();
        for (s, &v) in seen.iter().enumerate() {
            if v {
                index[s] = ids.len() as u32;
                ids.push(s);
            }
        }
        let n = ids.len();
        let mut trips = Vec::new();
        let mut coords = Vec::with_capacity(n);
        let mut phases = Vec::with_capacity(n);
        for (r, &s) in ids.iter().enumerate() {
            let (cell, j) = (s / m, s % m);
            let y = decode(cell);
            let mut out = 0.0;
            for (z, b) in self.rate_blocks(&y) {
                let base = encode(&step(&y, z)) * m;
                let (cols, vals) = b.row(j);
                for (&jp, &v) in cols.iter().zip(vals) {
                    let c = index[base + jp] as usize;
                    if c != r && v > 0.0 {
                        trips.push((r, c, v));
                        out += v;
                    }
                }
            }
            trips.push((r, r, -out));
            let x = self.lift(&y);
            coords.push(x.map(|v| v as u16));
            phases.push(j as u32);
        }
        let levels = (d == 1).then(|| coords.iter().map(|x| x[self.free[0]] as usize).collect());
        Some(Truncated {
            chain: solver::FiniteChain { q: Csr::from_triplets(n, n, trips), levels },
            coords,
            phases,
        })
    }
}

struct Truncated {
    chain: solver::FiniteChain,
    coords: Vec<[u16; 4]>,
    phases: Vec<u32>,
}

/// Truncation protocol for [`solve_stationary`].
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub start_level: usize,
    pub cap: usize,
    /// Box size (lattice points × background states) beyond which doubling stops.
    pub max_states: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { start_level: 32, cap: 512, max_states: 6_000_000 }
    }
}

/// Stationary distribution of a truncated induced chain.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct InducedChainSolution {
    pub subset: Subset,
    /// Full level vectors (saturated coordinates at 2).
    #[serde(skip)]
    pub coords: Vec<[u16; 4]>,
    #[serde(skip)]
    pub phases: Vec<u32>,
    #[serde(skip)]
    pub distribution: Vec<f64>,
    pub truncation_level: usize,
    pub residual: f64,
    pub tail_mass: f64,
    pub converged: bool,
    pub method: Option<Method>,
    /// (level, tail mass) for every truncation tried.
    pub history: Vec<(usize, f64)>,
}

impl InducedChainSolution {
    pub fn len(&self) -> usize {
        self.distribution.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distribution.is_empty()
    }
}

/// Solves the truncated balance equations, doubling the truncation level
/// from `start_level` until the residual and tail mass are small or the
/// cap is reached. Non-convergence is reported in the result.
pub fn solve_stationary(chain: &InducedChain, opts: &SolveOptions) -> InducedChainSolution {
    let d = chain.dimension();
    let mut level = if d == 0 { 0 } else { opts.start_level.max(1) };
    let mut history = Vec::new();
    let mut best: Option<InducedChainSolution> = None;
    let mut warm: Option<(usize, Vec<[u16; 4]>, Vec<u32>, Vec<f64>)> = None;
    loop {
        let Some(t) = chain.truncate(level, opts.max_states) else { break };
        let warm_vec = warm.as_ref().map(|(_, c, p, pi)| embed(c, p, pi, &t.coords, &t.phases));
        let (pi, method) = solver::solve(&t.chain, warm_vec.as_deref(), 1e-2 * RESIDUAL_TOL * chain.nu);
        let r = t.chain.q.left_mul(&pi);
        let mut residual = 0.0f64;
        let mut tail = 0.0;
        for (k, x) in t.coords.iter().enumerate() {
            let on_edge = d > 0 && chain.free.iter().any(|&c| x[c] as usize == level);
            if on_edge {
                tail += pi[k];
            } else {
                residual = residual.max(r[k].abs() / chain.nu);
            }
        }
        history.push((level, tail));
        let converged = residual <= RESIDUAL_TOL && tail <= TAIL_TOL;
        let sol = InducedChainSolution {
            subset: chain.subset,
            coords: t.coords,
            phases: t.phases,
            distribution: pi,
            truncation_level: level,
            residual,
            tail_mass: tail,
            converged,
            method: Some(method),
            history: history.clone(),
        };
        if converged || d == 0 || level * 2 > opts.cap {
            return sol;
        }
        warm = Some((level, sol.coords.clone(), sol.phases.clone(), sol.distribution.clone()));
        best = Some(sol);
        level *= 2;
    }
    match best {
        Some(mut s) => {
            s.history = history;
            s
        }
        None => InducedChainSolution {
            subset: chain.subset,
            coords: Vec::new(),
            phases: Vec::new(),
            distribution: Vec::new(),
            truncation_level: level,
            residual: f64::INFINITY,
            tail_mass: 1.0,
            converged: false,
            method: None,
            history,
        },
    }
}

fn embed(c0: &[[u16; 4]], p0: &[u32], pi0: &[f64], c1: &[[u16; 4]], p1: &[u32]) -> Vec<f64> {
    let lookup: std::collections::HashMap<([u16; 4], u32), f64> =
        c0.iter().zip(p0).zip(pi0).map(|((c, p), v)| ((*c, *p), *v)).collect();
    c1.iter().zip(p1).map(|(c, p)| lookup.get(&(*c, *p)).copied().unwrap_or(0.0)).collect()
}

/// Mean output rates μ̄ᵢᴬ from a solution, for any subset.
pub fn raw_output_rates(chain: &InducedChain, sol: &InducedChainSolution) -> [f64; 4] {
    let g = chain.generator();
    let mut mu = [0.0; 4];
    for k in 0..sol.len() {
        let x = sol.coords[k].map(|v| v as usize);
        let s = g.sig_at(x);
        let j = sol.phases[k] as usize;
        for (i, m) in mu.iter_mut().enumerate() {
            *m += sol.distribution[k] * s.completion[i][j];
        }
    }
    mu
}

/// Stationary mean displacement per unit time, Σ_y π(y) Σ_z z Q_z(y)·1.
/// Equals ν·a(A).
pub fn mean_drift_rate(chain: &InducedChain, sol: &InducedChainSolution) -> [f64; 4] {
    let g = chain.generator();
    let mut a = [0.0; 4];
    for k in 0..sol.len() {
        let x = sol.coords[k].map(|v| v as usize);
        let inc = g.mean_increment(x, sol.phases[k] as usize);
        for i in 0..4 {
            a[i] += sol.distribution[k] * inc[i];
        }
    }
    a
}

/// μ̄ᴬ in events per unit time for A in 𝒩ₚ.
pub fn output_rates(chain: &InducedChain, sol: &InducedChainSolution) -> Result<[f64; 4]> {
    if !chain.subset().is_positive_class() {
        return Err(Error::UnsupportedSubset(chain.subset().to_string()));
    }
    if !sol.converged {
        return Err(Error::NotConverged {
            subset: chain.subset().to_string(),
            detail: format!("residual {:.3e}, tail mass {:.3e}", sol.residual, sol.tail_mass),
        });
    }
    Ok(raw_output_rates(chain, sol))
}

/// λ̄ = (λ₁, μ̄₁, λ₃ + p·μ̄₂, μ̄₃).
pub fn input_rates(mu: [f64; 4], lambda1: f64, lambda3: f64, p: f64) -> [f64; 4] {
    [lambda1, mu[0], lambda3 + p * mu[1], mu[2]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    Numeric,
    ClosedForm,
    Both,
}

impl std::str::FromStr for DriftMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "numeric" => Ok(DriftMode::Numeric),
            "closed" | "closed_form" => Ok(DriftMode::ClosedForm),
            "both" => Ok(DriftMode::Both),
            _ => Err(Error::InvalidArgument(format!("unknown mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    ClosedForm,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Residuals {
    pub residual: f64,
    pub tail_mass: f64,
    pub truncation_level: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DriftRow {
    pub subset: Subset,
    pub input_rates: [f64; 4],
    pub output_rates: [f64; 4],
    /// Δqᵢᴬ for all four queues; entries outside A should be 0.
    pub drifts: [f64; 4],
    pub provenance: [Provenance; 4],
    pub residuals: Option<Residuals>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub numeric_drifts: Option<[f64; 4]>,
}

impl DriftRow {
    fn from_output(subset: Subset, mu: [f64; 4], model_rates: (f64, f64, f64), prov: Provenance) -> DriftRow {
        let lam = input_rates(mu, model_rates.0, model_rates.1, model_rates.2);
        DriftRow {
            subset,
            input_rates: lam,
            output_rates: mu,
            drifts: std::array::from_fn(|i| lam[i] - mu[i]),
            provenance: [prov; 4],
            residuals: None,
            numeric_drifts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Discrepancy {
    pub subset: Subset,
    pub queue: usize,
    pub closed_form: f64,
    pub numeric: f64,
    pub relative: f64,
}

/// Δqᵢᴬ for A in 𝒩ₚ (rows in the order N, {1,2,3}, {1,3,4}, {1,4}, {2,3}).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DriftTable {
    pub rows: Vec<DriftRow>,
    #[serde(default)]
    pub cross_check: Vec<Discrepancy>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl DriftTable {
    /// Table from raw drift vectors indexed like [`Subset::POSITIVE`].
    /// Rates are left at zero; used for hand-built tables.
    pub fn from_drifts(drifts: [[f64; 4]; 5]) -> DriftTable {
        let rows = Subset::POSITIVE
            .iter()
            .zip(drifts)
            .map(|(&subset, d)| DriftRow {
                subset,
                input_rates: [0.0; 4],
                output_rates: [0.0; 4],
                drifts: d,
                provenance: [Provenance::ClosedForm; 4],
                residuals: None,
                numeric_drifts: None,
            })
            .collect();
        DriftTable { rows, cross_check: Vec::new(), notes: Vec::new() }
    }

    pub fn row(&self, subset: Subset) -> Option<&DriftRow> {
        self.rows.iter().find(|r| r.subset == subset)
    }

    /// Δqᵢᴬ (queue is 1-based). Panics if A is not in the table.
    pub fn dq(&self, subset: Subset, queue: usize) -> f64 {
        self.row(subset).unwrap_or_else(|| panic!("subset {subset} missing from drift table")).drifts[queue - 1]
    }

    /// True when every numeric row converged.
    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.residuals.as_ref().is_none_or(|s| s.converged))
    }

    /// Multiplies every rate by `c`.
    pub fn scaled(&self, c: f64) -> DriftTable {
        let mut t = self.clone();
        for r in &mut t.rows {
            for i in 0..4 {
                r.input_rates[i] *= c;
                r.output_rates[i] *= c;
                r.drifts[i] *= c;
            }
        }
        t
    }
}

/// Output rates of a priority network (either priority discipline), with
/// no assumption checks. Station 1 gives priority to class 4, station 2
/// to class 2.
pub fn priority_output_rates_unchecked(lambda1: f64, lambda3: f64, mu: [f64; 4], subset: Subset) -> Result<[f64; 4]> {
    Ok(match subset {
        Subset::N => [0.0, mu[1], 0.0, mu[3]],
        Subset::S123 => [mu[0], mu[1], 0.0, 0.0],
        Subset::S134 => [0.0, 0.0, mu[2], mu[3]],
        Subset::S14 => [0.0, 0.0, lambda3, mu[3]],
        Subset::S23 => [lambda1, mu[1], 0.0, 0.0],
        other => return Err(Error::UnsupportedSubset(other.to_string())),
    })
}

/// Output rates of the symmetric (1,K)-limited network with no assumption
/// checks: λ = λ₁ = λ₃, μ₁ = μ₃ (single-service classes), μ₂ = μ₄.
pub fn limited_output_rates_unchecked(lambda: f64, mu1: f64, mu2: f64, k: usize, subset: Subset) -> Result<[f64; 4]> {
    let kf = k as f64;
    let d = 1.0 / mu1 + kf / mu2;
    let busy = (1.0 + (kf - 1.0) * mu1 / mu2) / d;
    Ok(match subset {
        Subset::N => [1.0 / d, kf / d, 1.0 / d, kf / d],
        Subset::S123 => [busy, kf / d, 1.0 / d, 1.0 / d],
        Subset::S134 => [1.0 / d, 1.0 / d, busy, kf / d],
        Subset::S14 => [1.0 / d, 1.0 / d, lambda, kf / d],
        Subset::S23 => [lambda, kf / d, 1.0 / d, 1.0 / d],
        other => return Err(Error::UnsupportedSubset(other.to_string())),
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300)
}

/// K* = max{1, (1−ρ₁)/ρ₂, ρ₁/(1−ρ₂)} of the symmetric (1,K)-limited model.
pub fn limited_k_star(lambda: f64, mu1: f64, mu2: f64) -> f64 {
    let (r1, r2) = (lambda / mu1, lambda / mu2);
    let a = if r2 > 0.0 { (1.0 - r1) / r2 } else { f64::INFINITY };
    let b = if r2 < 1.0 { r1 / (1.0 - r2) } else { f64::INFINITY };
    1f64.max(a).max(b)
}

/// Closed-form output rates μ̄ᴬ for the built-in disciplines under the
/// parameter assumptions the formulas rely on.
pub fn closed_form_output_rates(model: &NetworkModel, subset: Subset) -> Result<[f64; 4]> {
    let (l1, l3) = (model.lambda1(), model.lambda3());
    let mu = [model.mu(1), model.mu(2), model.mu(3), model.mu(4)];
    let (rho, nominal) = nominal_condition(model);
    let need_nominal = || -> Result<()> {
        if nominal {
            Ok(())
        } else {
            Err(Error::AssumptionViolated(format!(
                "nominal condition fails: rho1+rho4 = {:.6}, rho2+rho3 = {:.6}",
                rho[0] + rho[3],
                rho[1] + rho[2]
            )))
        }
    };
    match model.discipline() {
        Discipline::NonPreemptive | Discipline::PreemptiveResume => {
            need_nominal()?;
            if mu[0] <= mu[1] {
                return Err(Error::AssumptionViolated(format!("mu1 = {} must exceed mu2 = {}", mu[0], mu[1])));
            }
            if mu[2] <= mu[3] {
                return Err(Error::AssumptionViolated(format!("mu3 = {} must exceed mu4 = {}", mu[2], mu[3])));
            }
            priority_output_rates_unchecked(l1, l3, mu, subset)
        }
        Discipline::Limited { k } => {
            if !(close(l1, l3) && close(mu[0], mu[2]) && close(mu[1], mu[3]) && model.p() == 0.0) {
                return Err(Error::ClosedFormUnavailable(
                    "(1,K)-limited closed form needs lambda1 = lambda3, mu1 = mu3, mu2 = mu4 and p = 0".into(),
                ));
            }
            need_nominal()?;
            if mu[0] <= mu[1] {
                return Err(Error::AssumptionViolated(format!("mu1 = {} must exceed mu2 = {}", mu[0], mu[1])));
            }
            let ks = limited_k_star(l1, mu[0], mu[1]);
            if (k as f64) <= ks {
                return Err(Error::AssumptionViolated(format!("K = {k} does not exceed K* = {ks:.6}")));
            }
            limited_output_rates_unchecked(l1, mu[0], mu[1], k, subset)
        }
        Discipline::Custom => Err(Error::ClosedFormUnavailable("custom discipline".into())),
    }
}

fn closed_form_table(model: &NetworkModel) -> Result<DriftTable> {
    let rates = (model.lambda1(), model.lambda3(), model.p());
    let rows = Subset::POSITIVE
        .iter()
        .map(|&a| Ok(DriftRow::from_output(a, closed_form_output_rates(model, a)?, rates, Provenance::ClosedForm)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DriftTable { rows, cross_check: Vec::new(), notes: Vec::new() })
}

/// Numeric drift row from an induced-chain solve. Never fails on
/// non-convergence; the residuals record it.
pub fn numeric_row(kernel: &BlockKernel, model: &NetworkModel, subset: Subset, opts: &SolveOptions) -> Result<DriftRow> {
    let chain = build_induced_chain(kernel, subset)?;
    let sol = solve_stationary(&chain, opts);
    let mu = raw_output_rates(&chain, &sol);
    let mut row = DriftRow::from_output(subset, mu, (model.lambda1(), model.lambda3(), model.p()), Provenance::Numeric);
    row.residuals = Some(Residuals {
        residual: sol.residual,
        tail_mass: sol.tail_mass,
        truncation_level: sol.truncation_level,
        converged: sol.converged,
    });
    Ok(row)
}

pub fn numeric_table(model: &NetworkModel, opts: &SolveOptions) -> Result<DriftTable> {
    let kernel = BlockKernel::new(model);
    let rows = Subset::POSITIVE
        .par_iter()
        .map(|&a| numeric_row(&kernel, model, a, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut notes = Vec::new();
    for r in &rows {
        if let Some(s) = &r.residuals {
            if !s.converged {
                notes.push(format!(
                    "induced chain {} did not converge (residual {:.3e}, tail mass {:.3e} at level {})",
                    r.subset, s.residual, s.tail_mass, s.truncation_level
                ));
            }
        }
    }
    Ok(DriftTable { rows, cross_check: Vec::new(), notes })
}

/// Relative difference used by the cross-check; `scale` guards entries
/// whose closed form is zero.
pub fn relative_difference(numeric: f64, closed: f64, scale: f64) -> f64 {
    (numeric - closed).abs() / closed.abs().max(scale)
}

/// Drift table in the requested mode. `Both` uses the closed form when one
/// exists and records the numeric cross-check; it falls back to numeric
/// values when the closed form does not apply.
pub fn drift_table(model: &NetworkModel, mode: DriftMode) -> Result<DriftTable> {
    drift_table_with(model, mode, &SolveOptions::default())
}

pub fn drift_table_with(model: &NetworkModel, mode: DriftMode, opts: &SolveOptions) -> Result<DriftTable> {
    match mode {
        DriftMode::ClosedForm => closed_form_table(model),
        DriftMode::Numeric => numeric_table(model, opts),
        DriftMode::Both => {
            let numeric = numeric_table(model, opts)?;
            let mut closed = match closed_form_table(model) {
                Ok(t) => t,
                Err(e @ (Error::ClosedFormUnavailable(_) | Error::AssumptionViolated(_))) => {
                    let mut t = numeric;
                    t.notes.push(format!("closed form not used: {e}"));
                    return Ok(t);
                }
                Err(e) => return Err(e),
            };
            let scale = 1e-6 * model_rate_scale(model);
            for (c, n) in closed.rows.iter_mut().zip(&numeric.rows) {
                c.residuals = n.residuals.clone();
                c.numeric_drifts = Some(n.drifts);
                for q in c.subset.queues() {
                    let rel = relative_difference(n.drifts[q - 1], c.drifts[q - 1], scale);
                    if rel > CROSS_CHECK_TOL {
                        closed.cross_check.push(Discrepancy {
                            subset: c.subset,
                            queue: q,
                            closed_form: c.drifts[q - 1],
                            numeric: n.drifts[q - 1],
                            relative: rel,
                        });
                    }
                }
            }
            closed.notes.extend(numeric.notes);
            Ok(closed)
        }
    }
}

fn model_rate_scale(model: &NetworkModel) -> f64 {
    (1..=4).map(|i| model.mu(i)).fold(model.lambda1().max(model.lambda3()), f64::max)
}

/// One strict sign inequality on a drift entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SignCheck {
    pub subset: Subset,
    pub queue: usize,
    /// +1 for Δq > 0, −1 for Δq < 0.
    pub expected: i8,
    pub value: f64,
    /// expected·value; positive when the inequality holds.
    pub margin: f64,
    pub pass: bool,
}

impl fmt::Display for SignCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = if self.expected > 0 { ">" } else { "<" };
        write!(f, "dq{}^{} {} 0 (value {:.6e})", self.queue, self.subset, op, self.value)
    }
}

/// The fourteen sign conditions on the 𝒩ₚ drifts.
pub const SIGN_PATTERN: [(Subset, usize, i8); 14] = [
    (Subset::N, 1, 1),
    (Subset::N, 2, -1),
    (Subset::N, 3, 1),
    (Subset::N, 4, -1),
    (Subset::S123, 1, -1),
    (Subset::S123, 2, 1),
    (Subset::S123, 3, 1),
    (Subset::S134, 1, 1),
    (Subset::S134, 3, -1),
    (Subset::S134, 4, 1),
    (Subset::S14, 1, 1),
    (Subset::S14, 4, -1),
    (Subset::S23, 2, -1),
    (Subset::S23, 3, 1),
];

pub fn check_sign_conditions(table: &DriftTable) -> Vec<SignCheck> {
    SIGN_PATTERN
        .iter()
        .map(|&(subset, queue, expected)| {
            let value = table.row(subset).map_or(f64::NAN, |r| r.drifts[queue - 1]);
            let margin = expected as f64 * value;
            SignCheck { subset, queue, expected, value, margin, pass: margin > 0.0 }
        })
        .collect()
}
