//! Event-by-event simulation of {Y(t)}, optionally with saturated queues.
//!
//! Transition rates are read from the [`Generator`] blocks. Random numbers
//! come from ChaCha8 seeded with `seed_from_u64(seed)`; replication `r`
//! uses stream `r` of that generator. Exponential holding times are drawn
//! by inversion. Finite-horizon output is corroborative evidence only: no
//! finite run separates transience from slow positive recurrence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::generator::{signature, Disp, Generator, SIGNATURES};
use crate::service_disciplines::NetworkModel;
use crate::{Error, Result, Subset};

/// Level at which saturated queues are held.
pub const SATURATED_SIM_LEVEL: usize = 3;

/// Default number of sampling intervals over the horizon.
pub const DEFAULT_SAMPLES: usize = 2000;

/// Minimum number of post-burn-in samples for [`estimate_drift`].
pub const MIN_SAMPLES: usize = 100;

const BATCHES: usize = 20;

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub samples: usize,
    /// Record every event (time, levels); for short diagnostic runs.
    pub record_events: bool,
    /// Stream index of the random generator.
    pub stream: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { samples: DEFAULT_SAMPLES, record_events: false, stream: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Trajectory {
    pub seed: u64,
    pub stream: u64,
    pub horizon: f64,
    pub saturated: Option<Subset>,
    /// Grid times 0, Δ, 2Δ, … , horizon.
    pub sample_times: Vec<f64>,
    /// Queue lengths at the grid times. Saturated queues report their
    /// virtual count (arrivals minus departures since time 0).
    pub samples: Vec<[i64; 4]>,
    /// Cumulative departures from each queue at the grid times.
    pub departures: Vec<[u64; 4]>,
    pub empty_return_times: Vec<f64>,
    pub final_levels: [i64; 4],
    pub final_phase: usize,
    pub events: u64,
    /// Time the servers spent on each class.
    pub class_busy_time: [f64; 4],
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub event_log: Vec<(f64, [i64; 4])>,
}

struct JumpTable {
    // [sig][phase] -> (displacement, target phase, cumulative rate)
    rows: Vec<Vec<Vec<(Disp, u32, f64)>>>,
}

impl JumpTable {
    fn new(g: &Generator) -> JumpTable {
        let m = g.phase_dim();
        let rows = (0..SIGNATURES)
            .map(|si| {
                let s = g.sig(crate::generator::signature_from_index(si));
                (0..m)
                    .map(|j| {
                        let mut acc = 0.0;
                        let mut out = Vec::new();
                        for (z, b) in &s.blocks {
                            let (cols, vals) = b.row(j);
                            for (&jp, &v) in cols.iter().zip(vals) {
                                let is_self = jp == j && z.iter().all(|&c| c == 0);
                                if is_self || v <= 0.0 {
                                    continue;
                                }
                                acc += v;
                                out.push((*z, jp as u32, acc));
                            }
                        }
                        out
                    })
                    .collect()
            })
            .collect();
        JumpTable { rows }
    }
}

fn class_of_phase(model: &NetworkModel, g: &Generator, j: usize) -> [bool; 4] {
    let p = g.split_phase(j);
    let (s1, s2) = (model.msp1().partition(), model.msp2().partition());
    [s1.first.contains(&p[2]), s2.second.contains(&p[3]), s2.first.contains(&p[3]), s1.second.contains(&p[2])]
}

/// Simulates from `initial` levels with every background component in its
/// first state.
pub fn simulate(model: &NetworkModel, horizon: f64, seed: u64, initial: [usize; 4]) -> Result<Trajectory> {
    run(model, None, horizon, seed, initial, &SimOptions::default())
}

/// Simulates with the queues in `subset` held at an interior level.
pub fn simulate_saturated(model: &NetworkModel, subset: Subset, horizon: f64, seed: u64) -> Result<Trajectory> {
    simulate_with(model, Some(subset), horizon, seed, [0; 4], &SimOptions::default())
}

pub fn simulate_with(
    model: &NetworkModel,
    saturated: Option<Subset>,
    horizon: f64,
    seed: u64,
    initial: [usize; 4],
    opts: &SimOptions,
) -> Result<Trajectory> {
    if let Some(a) = saturated {
        if a.is_empty() {
            return Err(Error::EmptySubset);
        }
    }
    run(model, saturated, horizon, seed, initial, opts)
}

fn run(
    model: &NetworkModel,
    saturated: Option<Subset>,
    horizon: f64,
    seed: u64,
    initial: [usize; 4],
    opts: &SimOptions,
) -> Result<Trajectory> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be finite and nonnegative, got {horizon}")));
    }
    let g = Generator::new(model);
    let table = JumpTable::new(&g);
    let m = g.phase_dim();
    let busy: Vec<[bool; 4]> = (0..m).map(|j| class_of_phase(model, &g, j)).collect();
    let sat = |i: usize| saturated.is_some_and(|a| a.contains(i + 1));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(opts.stream);

    let mut level = [0usize; 4];
    let mut virt = [0i64; 4];
    for i in 0..4 {
        level[i] = if sat(i) { SATURATED_SIM_LEVEL } else { initial[i] };
    }
    let report = |level: &[usize; 4], virt: &[i64; 4]| -> [i64; 4] {
        std::array::from_fn(|i| if sat(i) { virt[i] } else { level[i] as i64 })
    };
    let mut phase = 0usize;
    let mut t = 0.0;
    let n = opts.samples.max(1);
    let dt_sample = horizon / n as f64;
    let mut next_sample = 0usize;
    let mut traj = Trajectory {
        seed,
        stream: opts.stream,
        horizon,
        saturated,
        sample_times: Vec::with_capacity(n + 1),
        samples: Vec::with_capacity(n + 1),
        departures: Vec::with_capacity(n + 1),
        empty_return_times: Vec::new(),
        final_levels: [0; 4],
        final_phase: 0,
        events: 0,
        class_busy_time: [0.0; 4],
        event_log: Vec::new(),
    };
    let mut deps = [0u64; 4];
    if opts.record_events {
        traj.event_log.push((0.0, report(&level, &virt)));
    }
    let grid = |k: usize| if k >= n { horizon } else { k as f64 * dt_sample };
    loop {
        let si = crate::generator::signature_index(signature(level));
        let row = &table.rows[si][phase];
        let total = row.last().map_or(0.0, |r| r.2);
        let hold = if total > 0.0 {
            let u: f64 = rng.random();
            -(1.0 - u).ln() / total
        } else {
            f64::INFINITY
        };
        let t_next = t + hold;
        let end = t_next.min(horizon);
        for (i, b) in busy[phase].iter().enumerate() {
            if *b {
                traj.class_busy_time[i] += end - t;
            }
        }
        // Grid points before the next event see the current state.
        let state = report(&level, &virt);
        while next_sample <= n && (grid(next_sample) < t_next || t_next > horizon) {
            traj.sample_times.push(grid(next_sample));
            traj.samples.push(state);
            traj.departures.push(deps);
            next_sample += 1;
            if horizon == 0.0 {
                break;
            }
        }
        if t_next > horizon {
            break;
        }
        t = t_next;
        let target = rng.random::<f64>() * total;
        let k = row.partition_point(|r| r.2 <= target).min(row.len() - 1);
        let (z, jp, _) = row[k];
        let was_empty = level.iter().all(|&v| v == 0);
        for i in 0..4 {
            if z[i] < 0 {
                deps[i] += 1;
            }
            if sat(i) {
                virt[i] += z[i] as i64;
            } else {
                level[i] = (level[i] as i64 + z[i] as i64) as usize;
            }
        }
        phase = jp as usize;
        traj.events += 1;
        if !was_empty && level.iter().all(|&v| v == 0) && saturated.is_none() {
            traj.empty_return_times.push(t);
        }
        if opts.record_events {
            traj.event_log.push((t, report(&level, &virt)));
        }
    }
    traj.final_levels = report(&level, &virt);
    traj.final_phase = phase;
    Ok(traj)
}

/// Slopes with batch-means confidence half-widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DriftEstimate {
    pub per_queue_slope: [f64; 4],
    pub half_width: [f64; 4],
    pub regime: Option<Subset>,
    pub confidence: f64,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RateEstimate {
    pub rate: [f64; 4],
    pub half_width: [f64; 4],
}

fn post_burn_in(traj: &Trajectory, burn_in: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&burn_in) {
        return Err(Error::InvalidArgument(format!("burn-in fraction must be in [0,1), got {burn_in}")));
    }
    let start = (traj.samples.len() as f64 * burn_in).floor() as usize;
    let available = traj.samples.len().saturating_sub(start);
    if available < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!("{available} samples after burn-in, need {MIN_SAMPLES}")));
    }
    Ok(start)
}

fn t_quantile(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64).map(|d| d.inverse_cdf(0.975)).unwrap_or(1.96)
}

fn batch_half_width<F: Fn(usize, usize) -> f64>(start: usize, len: usize, stat: F) -> f64 {
    let b = BATCHES;
    let size = (len - 1) / b;
    let vals: Vec<f64> = (0..b).map(|k| stat(start + k * size, start + (k + 1) * size)).collect();
    let mean = vals.iter().sum::<f64>() / b as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
    (t_quantile(b - 1) * (var / b as f64).sqrt()).max(1e-12)
}

/// Least-squares slope of each queue length against time after discarding
/// the first `burn_in` fraction of samples.
pub fn estimate_drift(traj: &Trajectory, burn_in: f64) -> Result<DriftEstimate> {
    let start = post_burn_in(traj, burn_in)?;
    let ts = &traj.sample_times[start..];
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let sxx: f64 = ts.iter().map(|t| (t - tm).powi(2)).sum();
    let mut slope = [0.0; 4];
    let mut hw = [0.0; 4];
    for i in 0..4 {
        let ys: Vec<f64> = traj.samples[start..].iter().map(|s| s[i] as f64).collect();
        let ym = ys.iter().sum::<f64>() / n;
        let sxy: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - tm) * (y - ym)).sum();
        slope[i] = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        hw[i] = batch_half_width(start, ts.len(), |a, b| {
            let dt = traj.sample_times[b] - traj.sample_times[a];
            (traj.samples[b][i] - traj.samples[a][i]) as f64 / dt
        });
    }
    Ok(DriftEstimate { per_queue_slope: slope, half_width: hw, regime: traj.saturated, confidence: 0.95, batches: BATCHES })
}

/// Slope and half-width for a linear combination of queue lengths.
pub fn estimate_combined_drift(traj: &Trajectory, burn_in: f64, weights: [f64; 4]) -> Result<(f64, f64)> {
    let start = post_burn_in(traj, burn_in)?;
    let val = |k: usize| (0..4).map(|i| weights[i] * traj.samples[k][i] as f64).sum::<f64>();
    let ts = &traj.sample_times[start..];
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let ym = (start..traj.samples.len()).map(val).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (k, t) in (start..).zip(ts) {
        sxx += (t - tm).powi(2);
        sxy += (t - tm) * (val(k) - ym);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let hw = batch_half_width(start, ts.len(), |a, b| (val(b) - val(a)) / (traj.sample_times[b] - traj.sample_times[a]));
    Ok((slope, hw))
}

/// Departure rate of each queue after burn-in, with batch-means half-widths.
pub fn departure_rates(traj: &Trajectory, burn_in: f64) -> Result<RateEstimate> {
    let start = post_burn_in(traj, burn_in)?;
    let last = traj.samples.len() - 1;
    let span = traj.sample_times[last] - traj.sample_times[start];
    let mut rate = [0.0; 4];
    let mut hw = [0.0; 4];
    for i in 0..4 {
        rate[i] = (traj.departures[last][i] - traj.departures[start][i]) as f64 / span;
        hw[i] = batch_half_width(start, last - start + 1, |a, b| {
            (traj.departures[b][i] - traj.departures[a][i]) as f64 / (traj.sample_times[b] - traj.sample_times[a])
        });
    }
    Ok(RateEstimate { rate, half_width: hw })
}

/// Time-average busy fraction of each class.
pub fn utilization(traj: &Trajectory) -> [f64; 4] {
    traj.class_busy_time.map(|b| if traj.horizon > 0.0 { b / traj.horizon } else { 0.0 })
}

/// Runs `replications` independent trajectories (stream r for replication r).
pub fn replicate(
    model: &NetworkModel,
    saturated: Option<Subset>,
    horizon: f64,
    seed: u64,
    initial: [usize; 4],
    replications: usize,
    samples: usize,
) -> Result<Vec<Trajectory>> {
    use rayon::prelude::*;
    (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let opts = SimOptions { samples, record_events: false, stream: r };
            simulate_with(model, saturated, horizon, seed, initial, &opts)
        })
        .collect()
}
