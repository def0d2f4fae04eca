use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use netstab::generator::{check_semi_irreducible, SemiIrreducibility, DEFAULT_PROBE};
use netstab::induced_chains::{drift_table_with, SolveOptions};
use netstab::simulator::{departure_rates, estimate_drift, replicate, utilization, DriftEstimate, RateEstimate};
use netstab::stability::nominal_condition;
use netstab::{classify, Classification, ClassifyOptions, DriftMode, Error, Generator, StabilityReport, Subset};
use serde::Serialize;
use serde_json::Value;

use crate::error::{exit, CliError};
use crate::model_file::load_model;
use crate::sweep::{parse_sweep_str, run_sweep, write_csv};

type Res<T> = std::result::Result<T, CliError>;

/// Options shared by the analysis commands.
#[derive(Debug, Clone)]
pub struct AnalysisSettings {
    pub mode: DriftMode,
    pub level_cap: usize,
    pub probe_radius: usize,
    pub assume_semi_irreducible: bool,
}

impl AnalysisSettings {
    fn classify_options(&self, certificate: bool, spiral: bool) -> ClassifyOptions {
        ClassifyOptions {
            mode: self.mode,
            certificate,
            spiral,
            solve: SolveOptions { cap: self.level_cap, ..SolveOptions::default() },
            probe_radius: self.probe_radius,
            assume_semi_irreducible: self.assume_semi_irreducible,
        }
    }
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            mode: DriftMode::Both,
            level_cap: SolveOptions::default().cap,
            probe_radius: 2,
            assume_semi_irreducible: false,
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Res<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(&format!("writing {}", path.display()), e))
}

fn json_bytes<T: Serialize>(v: &T) -> Res<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    s.push(b'\n');
    Ok(s)
}

fn print(out: &mut dyn Write, bytes: &[u8]) -> Res<()> {
    out.write_all(bytes).map_err(|e| CliError::io("writing output", e))
}

pub fn classification_exit(c: Classification) -> i32 {
    match c {
        Classification::PositiveRecurrent => exit::POSITIVE_RECURRENT,
        Classification::Transient => exit::TRANSIENT,
        Classification::Inconclusive => exit::INCONCLUSIVE,
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidateArgs {
    pub probe_radius: usize,
    pub export_q: Option<PathBuf>,
    pub export_level: usize,
}

/// Validates a model file and probes semi-irreducibility.
pub fn cmd_validate(model_path: &Path, args: &ValidateArgs, out: &mut dyn Write) -> Res<i32> {
    let (_, model) = load_model(model_path)?;
    let g = Generator::new(&model);
    let semi = check_semi_irreducible(&g, DEFAULT_PROBE, args.probe_radius)?;
    let (rho, nominal) = nominal_condition(&model);
    let mut text = String::new();
    text.push_str(&format!("model: {}\n", model_path.display()));
    text.push_str(&format!("discipline: {:?}\n", model.discipline()));
    text.push_str(&format!("background states: {}\n", model.phase_dim()));
    text.push_str(&format!("uniformization constant: {}\n", g.uniformization_constant()));
    text.push_str(&format!("arrival rates: lambda1 = {}, lambda3 = {}\n", model.lambda1(), model.lambda3()));
    text.push_str(&format!("loads: {rho:?}, nominal condition {}\n", if nominal { "holds" } else { "fails" }));
    for (station, msp) in [(1, model.msp1()), (2, model.msp2())] {
        let names = msp.reducible_composites();
        if !names.is_empty() {
            text.push_str(&format!("station {station} reducible composites: {}\n", names.join("; ")));
        }
    }
    let verdict = match semi {
        SemiIrreducibility::ConfirmedSemiIrreducible => "confirmed",
        SemiIrreducibility::Unknown => "not confirmed (the probe is a sufficient check only)",
    };
    text.push_str(&format!("semi-irreducibility within radius {}: {verdict}\n", args.probe_radius));
    if let Some(p) = &args.export_q {
        let f = fs::File::create(p).map_err(|e| CliError::io(&format!("creating {}", p.display()), e))?;
        g.write_triplets(args.export_level, std::io::BufWriter::new(f))
            .map_err(|e| CliError::io(&format!("writing {}", p.display()), e))?;
        text.push_str(&format!("generator on [0,{}]^4 written to {}\n", args.export_level, p.display()));
    }
    text.push_str("valid\n");
    print(out, text.as_bytes())?;
    Ok(0)
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeArgs {
    pub settings: AnalysisSettings,
    pub certificate: bool,
    pub spiral: bool,
    pub out: Option<PathBuf>,
    pub spiral_csv: Option<PathBuf>,
}

/// Spiral points as CSV: `step,x1,x2,x3,x4`.
pub fn spiral_csv(points: &[[f64; 4]]) -> Res<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(["step", "x1", "x2", "x3", "x4"]).map_err(err)?;
    for (k, p) in points.iter().enumerate() {
        let mut rec = vec![(k + 1).to_string()];
        rec.extend(p.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

/// Runs the classification; closed-form requests whose assumptions fail
/// come back as `Err` with the message.
pub fn analyze_model(
    model: &netstab::NetworkModel,
    args: &AnalyzeArgs,
) -> Res<std::result::Result<StabilityReport, String>> {
    let opts = args.settings.classify_options(args.certificate, args.spiral);
    match classify(model, &opts) {
        Ok(r) => Ok(Ok(r)),
        Err(e @ (Error::AssumptionViolated(_) | Error::ClosedFormUnavailable(_))) => Ok(Err(e.to_string())),
        Err(e) => Err(e.into()),
    }
}

pub fn cmd_analyze(model_path: &Path, args: &AnalyzeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Res<i32> {
    let (_, model) = load_model(model_path)?;
    let report = match analyze_model(&model, args)? {
        Ok(r) => r,
        Err(msg) => {
            let _ = writeln!(err, "inconclusive: {msg}");
            return Ok(exit::INCONCLUSIVE);
        }
    };
    let bytes = json_bytes(&report)?;
    match &args.out {
        Some(p) => {
            write_file(p, &bytes)?;
            let r = report.r1r2.map(|v| format!(" (r1r2 = {v})")).unwrap_or_default();
            print(out, format!("{}{r}\n", report.classification.as_str()).as_bytes())?;
        }
        None => print(out, &bytes)?,
    }
    if let Some(points) = &report.spiral_path {
        let target = args.spiral_csv.clone().or_else(|| args.out.as_ref().map(|p| p.with_extension("spiral.csv")));
        if let Some(p) = target {
            write_file(&p, &spiral_csv(points)?)?;
        }
    }
    for r in &report.reasons {
        let _ = writeln!(err, "note: {r}");
    }
    if let Some(e) = &report.certificate_error {
        let _ = writeln!(err, "certificate: {e}");
    }
    Ok(classification_exit(report.classification))
}

#[derive(Debug, Clone, Default)]
pub struct SweepArgs {
    pub settings: AnalysisSettings,
    pub out: Option<PathBuf>,
}

pub fn cmd_sweep(model_path: &Path, sweep_path: &Path, args: &SweepArgs, out: &mut dyn Write) -> Res<i32> {
    let (doc, _) = load_model(model_path)?;
    let text = fs::read_to_string(sweep_path).map_err(|e| CliError::Parse {
        path: String::new(),
        message: format!("cannot read {}: {e}", sweep_path.display()),
    })?;
    let spec = parse_sweep_str(&text)?;
    let rows = run_sweep(&doc, &spec, &args.settings.classify_options(false, false))?;
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf).map_err(|e| CliError::Io(e.to_string()))?;
    match &args.out {
        Some(p) => write_file(p, &buf)?,
        None => print(out, &buf)?,
    }
    Ok(0)
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub horizon: f64,
    pub seed: u64,
    pub replications: usize,
    pub saturate: Option<Subset>,
    pub out: Option<PathBuf>,
    pub samples: usize,
    pub burn_in: f64,
    pub settings: AnalysisSettings,
}

impl Default for SimulateArgs {
    fn default() -> Self {
        SimulateArgs {
            horizon: 1e4,
            seed: 0,
            replications: 1,
            saturate: None,
            out: None,
            samples: netstab::simulator::DEFAULT_SAMPLES,
            burn_in: 0.1,
            settings: AnalysisSettings::default(),
        }
    }
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct Agreement {
    queue: usize,
    simulated: f64,
    half_width: f64,
    analytical: f64,
    within_three_half_widths: bool,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct RunSummary {
    stream: u64,
    events: u64,
    final_levels: [i64; 4],
    utilization: [f64; 4],
    drift: Option<DriftEstimate>,
    departure_rates: Option<RateEstimate>,
    error: Option<String>,
    agreement: Vec<Agreement>,
    trajectory_file: Option<String>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct SimulationSummary {
    horizon: f64,
    seed: u64,
    replications: usize,
    samples: usize,
    burn_in: f64,
    saturated: Option<Subset>,
    analytical_drifts: Option<[f64; 4]>,
    analytical_note: Option<String>,
    runs: Vec<RunSummary>,
}

/// Trajectory samples as CSV: `t,x1,x2,x3,x4`.
pub fn trajectory_csv(t: &netstab::simulator::Trajectory) -> Res<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(["t", "x1", "x2", "x3", "x4"]).map_err(err)?;
    for (time, x) in t.sample_times.iter().zip(&t.samples) {
        let mut rec = vec![time.to_string()];
        rec.extend(x.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn analytical(model: &netstab::NetworkModel, a: Subset, settings: &AnalysisSettings) -> (Option<[f64; 4]>, Option<String>) {
    if !a.is_positive_class() {
        return (None, Some(format!("no analytical drift for {a}")));
    }
    let opts = SolveOptions { cap: settings.level_cap, ..SolveOptions::default() };
    match drift_table_with(model, settings.mode, &opts) {
        Ok(t) => match t.row(a) {
            Some(r) => (Some(r.drifts), t.notes.first().cloned()),
            None => (None, Some(format!("drift table has no row {a}"))),
        },
        Err(e) => (None, Some(e.to_string())),
    }
}

pub fn cmd_simulate(model_path: &Path, args: &SimulateArgs, out: &mut dyn Write) -> Res<i32> {
    let (_, model) = load_model(model_path)?;
    let runs = replicate(&model, args.saturate, args.horizon, args.seed, [0; 4], args.replications, args.samples)?;
    let (drifts, note) = match args.saturate {
        Some(a) => analytical(&model, a, &args.settings),
        None => (None, None),
    };
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| CliError::io(&format!("creating {}", dir.display()), e))?;
    }
    let mut summaries = Vec::with_capacity(runs.len());
    let mut insufficient = false;
    for t in &runs {
        let est = estimate_drift(t, args.burn_in);
        let rates = departure_rates(t, args.burn_in);
        let error = match (&est, &rates) {
            (Err(e), _) | (_, Err(e)) => {
                if !matches!(e, Error::InsufficientData(_)) {
                    return Err(e.clone().into());
                }
                insufficient = true;
                Some(e.to_string())
            }
            _ => None,
        };
        let mut agreement = Vec::new();
        if let (Ok(d), Some(want), Some(a)) = (&est, drifts, args.saturate) {
            for q in a.queues() {
                let (sim, hw, target) = (d.per_queue_slope[q - 1], d.half_width[q - 1], want[q - 1]);
                agreement.push(Agreement {
                    queue: q,
                    simulated: sim,
                    half_width: hw,
                    analytical: target,
                    within_three_half_widths: (sim - target).abs() <= 3.0 * hw,
                });
            }
        }
        let trajectory_file = match &args.out {
            Some(dir) => {
                let name = format!("trajectory_{}.csv", t.stream);
                write_file(&dir.join(&name), &trajectory_csv(t)?)?;
                Some(name)
            }
            None => None,
        };
        summaries.push(RunSummary {
            stream: t.stream,
            events: t.events,
            final_levels: t.final_levels,
            utilization: utilization(t),
            drift: est.ok(),
            departure_rates: rates.ok(),
            error,
            agreement,
            trajectory_file,
        });
    }
    let summary = SimulationSummary {
        horizon: args.horizon,
        seed: args.seed,
        replications: args.replications,
        samples: args.samples,
        burn_in: args.burn_in,
        saturated: args.saturate,
        analytical_drifts: drifts,
        analytical_note: note,
        runs: summaries,
    };
    let bytes = json_bytes(&summary)?;
    match &args.out {
        Some(dir) => write_file(&dir.join("summary.json"), &bytes)?,
        None => print(out, &bytes)?,
    }
    Ok(if insufficient { exit::INCONCLUSIVE } else { 0 })
}

/// Parses a model file and returns its canonical JSON.
pub fn canonical_text(model_path: &Path) -> Res<String> {
    let (_, model) = load_model(model_path)?;
    let v: Value = crate::model_file::canonical(&model);
    serde_json::to_string_pretty(&v).map_err(|e| CliError::Io(e.to_string()))
}
