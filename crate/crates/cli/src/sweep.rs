//! One-parameter sweeps over a model file.

use netstab::{classify, Classification, ClassifyOptions, Error, StabilityReport};
use rayon::prelude::*;
use serde_json::{Number, Value};

use crate::error::CliError;
use crate::model_file::parse_model;

type Res<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<Number>,
}

pub fn parse_sweep_str(text: &str) -> Res<SweepSpec> {
    let parse = |path: &str, message: String| CliError::Parse { path: path.into(), message };
    let v: Value = serde_json::from_str(text).map_err(|e| parse("", format!("malformed JSON: {e}")))?;
    let obj = v.as_object().ok_or_else(|| parse("", "expected an object".into()))?;
    if let Some(k) = obj.keys().find(|k| *k != "parameter" && *k != "values") {
        return Err(parse(k, "unknown field (expected parameter, values)".into()));
    }
    let parameter = obj
        .get("parameter")
        .and_then(Value::as_str)
        .ok_or_else(|| parse("parameter", "expected a string".into()))?
        .to_string();
    let values = obj
        .get("values")
        .and_then(Value::as_array)
        .ok_or_else(|| parse("values", "expected an array of numbers".into()))?
        .iter()
        .enumerate()
        .map(|(i, x)| match x {
            Value::Number(n) => Ok(n.clone()),
            _ => Err(parse(&format!("values.{i}"), "expected a number".into())),
        })
        .collect::<Res<Vec<_>>>()?;
    Ok(SweepSpec { parameter, values })
}

fn lookup<'a>(v: &'a Value, path: &[String]) -> Option<&'a Value> {
    path.iter().try_fold(v, |cur, seg| match cur {
        Value::Object(m) => m.get(seg),
        Value::Array(a) => seg.parse::<usize>().ok().and_then(|i| a.get(i)),
        _ => None,
    })
}

fn lookup_mut<'a>(v: &'a mut Value, path: &[String]) -> Option<&'a mut Value> {
    path.iter().try_fold(v, |cur, seg| match cur {
        Value::Object(m) => m.get_mut(seg),
        Value::Array(a) => seg.parse::<usize>().ok().and_then(move |i| a.get_mut(i)),
        _ => None,
    })
}

/// Resolves a parameter path against a model document to the numeric
/// field it names. Besides literal paths, `discipline.K`,
/// `arrivals.<i>.rate` and `services.<i>.rate` address the shorthand
/// fields.
pub fn resolve_parameter(model: &Value, parameter: &str) -> Res<Vec<String>> {
    let segs: Vec<String> = parameter.split('.').map(str::to_string).collect();
    let mut candidates = vec![segs.clone()];
    match segs.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["discipline", "K"] => candidates.push(vec!["discipline".into(), "limited".into(), "K".into()]),
        ["arrivals", i, "rate"] => candidates.push(vec!["arrivals".into(), i.to_string(), "poisson".into()]),
        ["services", i, "rate"] => {
            candidates.push(vec!["services".into(), i.to_string(), "exponential".into()]);
            candidates.push(vec!["services".into(), i.to_string(), "erlang".into(), "rate".into()]);
        }
        _ => {}
    }
    candidates
        .into_iter()
        .find(|p| lookup(model, p).is_some_and(Value::is_number))
        .ok_or_else(|| CliError::BadParameterPath(parameter.to_string()))
}

/// Model document with the field at `path` replaced by `value`.
pub fn with_value(model: &Value, path: &[String], value: &Number) -> Value {
    let mut v = model.clone();
    if let Some(slot) = lookup_mut(&mut v, path) {
        *slot = Value::Number(value.clone());
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: Number,
    pub r1: Option<f64>,
    pub r2: Option<f64>,
    pub r1r2: Option<f64>,
    /// Classification, or `AssumptionViolated` when the closed-form
    /// assumptions fail and no verdict is reached.
    pub classification: String,
    pub report: Option<StabilityReport>,
}

fn row_from(value: Number, result: std::result::Result<StabilityReport, Error>) -> Res<SweepRow> {
    match result {
        Ok(rep) => {
            let label = if rep.classification == Classification::Inconclusive && rep.assumption_violated.is_some() {
                "AssumptionViolated".to_string()
            } else {
                rep.classification.as_str().to_string()
            };
            Ok(SweepRow { value, r1: rep.r1, r2: rep.r2, r1r2: rep.r1r2, classification: label, report: Some(rep) })
        }
        Err(Error::AssumptionViolated(_)) => {
            Ok(SweepRow { value, r1: None, r2: None, r1r2: None, classification: "AssumptionViolated".into(), report: None })
        }
        Err(Error::ClosedFormUnavailable(_)) => {
            Ok(SweepRow { value, r1: None, r2: None, r1r2: None, classification: "Inconclusive".into(), report: None })
        }
        Err(e) => Err(e.into()),
    }
}

/// Classifies the model at every sweep value, in the order given.
pub fn run_sweep(model: &Value, spec: &SweepSpec, opts: &ClassifyOptions) -> Res<Vec<SweepRow>> {
    let path = resolve_parameter(model, &spec.parameter)?;
    let models = spec
        .values
        .iter()
        .map(|x| {
            parse_model(&with_value(model, &path, x)).map_err(|e| match e {
                CliError::Invalid { path, message } => {
                    CliError::Invalid { path, message: format!("{message} (sweep value {x})") }
                }
                other => other,
            })
        })
        .collect::<Res<Vec<_>>>()?;
    models
        .par_iter()
        .zip(spec.values.par_iter())
        .map(|(m, x)| row_from(x.clone(), classify(m, opts)))
        .collect()
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes the sweep table as CSV: `value,r1,r2,r1r2,classification`.
pub fn write_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["value", "r1", "r2", "r1r2", "classification"])?;
    for r in rows {
        w.write_record([r.value.to_string(), opt(r.r1), opt(r.r2), opt(r.r1r2), r.classification.clone()])?;
    }
    w.flush()?;
    Ok(())
}
