//! JSON model files.
//!
//! Shorthand entries (`poisson`, `exponential`, `erlang`) are expanded to
//! explicit matrices before validation, and every error carries the dotted
//! path of the offending field, e.g. `services.2.beta`.

use nalgebra::{DMatrix, RowDVector};
use netstab::primitives::{validate_map, validate_ph};
use netstab::service_disciplines::{matrix_names, MatrixKind, MspPartition};
use netstab::{Discipline, MapSpec, MspSpec, NetworkModel, PhSpec};
use serde_json::{json, Map, Value};

use crate::error::CliError;

type Res<T> = std::result::Result<T, CliError>;

fn parse_err(path: &str, message: impl Into<String>) -> CliError {
    CliError::Parse { path: path.to_string(), message: message.into() }
}

fn invalid(path: &str, message: impl ToString) -> CliError {
    CliError::Invalid { path: path.to_string(), message: message.to_string() }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn object<'a>(v: &'a Value, path: &str, allowed: &[&str]) -> Res<&'a Map<String, Value>> {
    let obj = v.as_object().ok_or_else(|| parse_err(path, "expected an object"))?;
    if let Some(k) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(parse_err(&join(path, k), format!("unknown field (expected one of {})", allowed.join(", "))));
    }
    Ok(obj)
}

fn field<'a>(obj: &'a Map<String, Value>, path: &str, key: &str) -> Res<&'a Value> {
    obj.get(key).ok_or_else(|| parse_err(&join(path, key), "missing field"))
}

fn number(v: &Value, path: &str) -> Res<f64> {
    v.as_f64().ok_or_else(|| parse_err(path, "expected a number"))
}

fn count(v: &Value, path: &str) -> Res<usize> {
    let x = number(v, path)?;
    if x.fract() != 0.0 || x < 0.0 || x > u32::MAX as f64 {
        return Err(invalid(path, format!("expected a nonnegative integer, got {x}")));
    }
    Ok(x as usize)
}

fn vector(v: &Value, path: &str) -> Res<Vec<f64>> {
    let arr = v.as_array().ok_or_else(|| parse_err(path, "expected an array of numbers"))?;
    arr.iter().enumerate().map(|(i, x)| number(x, &join(path, &i.to_string()))).collect()
}

fn matrix(v: &Value, path: &str) -> Res<DMatrix<f64>> {
    let rows = v.as_array().ok_or_else(|| parse_err(path, "expected an array of rows"))?;
    let data: Vec<Vec<f64>> =
        rows.iter().enumerate().map(|(i, r)| vector(r, &join(path, &i.to_string()))).collect::<Res<_>>()?;
    let ncols = data.first().map_or(0, Vec::len);
    if let Some(i) = data.iter().position(|r| r.len() != ncols) {
        return Err(parse_err(&join(path, &i.to_string()), "rows have different lengths"));
    }
    Ok(DMatrix::from_fn(data.len(), ncols, |i, j| data[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Value {
    Value::Array((0..m.nrows()).map(|i| json!(m.row(i).iter().collect::<Vec<_>>())).collect())
}

fn parse_map(v: &Value, path: &str) -> Res<MapSpec> {
    let obj = object(v, path, &["poisson", "C", "D"])?;
    if let Some(r) = obj.get("poisson") {
        if obj.len() > 1 {
            return Err(parse_err(path, "poisson cannot be combined with C and D"));
        }
        let p = join(path, "poisson");
        let rate = number(r, &p)?;
        let c = DMatrix::from_element(1, 1, -rate);
        let d = DMatrix::from_element(1, 1, rate);
        return validate_map(c, d).map_err(|e| invalid(&p, e));
    }
    let c = matrix(field(obj, path, "C")?, &join(path, "C"))?;
    let d = matrix(field(obj, path, "D")?, &join(path, "D"))?;
    validate_map(c, d).map_err(|e| {
        let at = match &e {
            netstab::Error::NegativeRate { what, .. } if what == "D" => join(path, "D"),
            netstab::Error::NegativeRate { .. } => join(path, "C"),
            _ => path.to_string(),
        };
        invalid(&at, e)
    })
}

fn parse_ph(v: &Value, path: &str) -> Res<PhSpec> {
    let obj = object(v, path, &["exponential", "erlang", "beta", "H"])?;
    let shorthand = |key: &str| -> Res<Option<String>> {
        if obj.contains_key(key) {
            if obj.len() > 1 {
                return Err(parse_err(path, format!("{key} cannot be combined with other fields")));
            }
            return Ok(Some(join(path, key)));
        }
        Ok(None)
    };
    if let Some(p) = shorthand("exponential")? {
        let rate = number(&obj["exponential"], &p)?;
        let h = DMatrix::from_element(1, 1, -rate);
        return validate_ph(RowDVector::from_element(1, 1.0), h).map_err(|e| invalid(&p, e));
    }
    if let Some(p) = shorthand("erlang")? {
        let e = object(&obj["erlang"], &p, &["phases", "rate"])?;
        let phases_path = join(&p, "phases");
        let n = count(field(e, &p, "phases")?, &phases_path)?;
        if n == 0 {
            return Err(invalid(&phases_path, "an Erlang distribution needs at least one phase"));
        }
        let rate = number(field(e, &p, "rate")?, &join(&p, "rate"))?;
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            h[(i, i)] = -rate;
            if i + 1 < n {
                h[(i, i + 1)] = rate;
            }
        }
        let mut beta = RowDVector::zeros(n);
        beta[0] = 1.0;
        return validate_ph(beta, h).map_err(|e| invalid(&p, e));
    }
    let beta = vector(field(obj, path, "beta")?, &join(path, "beta"))?;
    let h = matrix(field(obj, path, "H")?, &join(path, "H"))?;
    validate_ph(RowDVector::from_vec(beta), h).map_err(|e| {
        let at = match &e {
            netstab::Error::BetaSumNotOne { .. } | netstab::Error::NegativeProbability { .. } => join(path, "beta"),
            netstab::Error::InvalidSubgenerator(_) | netstab::Error::SingularH => join(path, "H"),
            _ => path.to_string(),
        };
        invalid(&at, e)
    })
}

/// File key of a named MSP matrix: `T` for rate matrices, `U` for jumps.
fn matrix_key(name: &str, kind: MatrixKind) -> String {
    match kind {
        MatrixKind::Jump => format!("U{name}"),
        MatrixKind::Rates | MatrixKind::Completion => format!("T{name}"),
    }
}

fn indices(v: &Value, path: &str) -> Res<Vec<usize>> {
    let arr = v.as_array().ok_or_else(|| parse_err(path, "expected an array of state indices"))?;
    arr.iter().enumerate().map(|(i, x)| count(x, &join(path, &i.to_string()))).collect()
}

fn parse_msp(v: &Value, path: &str) -> Res<MspSpec> {
    let obj = object(v, path, &["states", "partition", "matrices"])?;
    let n = count(field(obj, path, "states")?, &join(path, "states"))?;
    let pp = join(path, "partition");
    let part = object(field(obj, path, "partition")?, &pp, &["idle", "first", "second"])?;
    let partition = MspPartition {
        idle: indices(field(part, &pp, "idle")?, &join(&pp, "idle"))?,
        first: indices(field(part, &pp, "first")?, &join(&pp, "first"))?,
        second: indices(field(part, &pp, "second")?, &join(&pp, "second"))?,
    };
    let mp = join(path, "matrices");
    let names = matrix_names();
    let keys: Vec<String> = names.iter().map(|(n, k)| matrix_key(n, *k)).collect();
    let key_refs: Vec<&str> = keys.iter().map(String::as_str).collect();
    let mats = object(field(obj, path, "matrices")?, &mp, &key_refs)?;
    let mut parsed = std::collections::HashMap::new();
    for ((name, _), key) in names.iter().zip(&keys) {
        let m = matrix(field(mats, &mp, key)?, &join(&mp, key))?;
        parsed.insert(name.clone(), m);
    }
    MspSpec::from_named(n, partition, |name| parsed.remove(name)).map_err(|e| {
        let at = match &e {
            netstab::Error::NegativeOffDiagonal { name, .. } | netstab::Error::NonStochasticU { name, .. } => {
                join(&mp, name)
            }
            netstab::Error::GeneratorRowSumNonzero { name, .. } if keys.contains(name) => join(&mp, name),
            _ => path.to_string(),
        };
        invalid(&at, e)
    })
}

enum DisciplineSpec {
    Builtin(Discipline),
    Custom(Box<(MspSpec, MspSpec)>),
}

fn parse_discipline(v: &Value) -> Res<DisciplineSpec> {
    let path = "discipline";
    if let Some(s) = v.as_str() {
        return match s {
            "non_preemptive" => Ok(DisciplineSpec::Builtin(Discipline::NonPreemptive)),
            "preemptive_resume" => Ok(DisciplineSpec::Builtin(Discipline::PreemptiveResume)),
            other => Err(parse_err(path, format!("unknown discipline '{other}'"))),
        };
    }
    let obj = object(v, path, &["limited", "custom"])?;
    if obj.len() != 1 {
        return Err(parse_err(path, "expected exactly one of limited, custom"));
    }
    if let Some(l) = obj.get("limited") {
        let lp = join(path, "limited");
        let kp = join(&lp, "K");
        let k = count(field(object(l, &lp, &["K"])?, &lp, "K")?, &kp)?;
        if k == 0 {
            return Err(invalid(&kp, netstab::Error::InvalidK(0)));
        }
        return Ok(DisciplineSpec::Builtin(Discipline::Limited { k }));
    }
    let cp = join(path, "custom");
    let c = object(&obj["custom"], &cp, &["msp1", "msp2"])?;
    let m1 = parse_msp(field(c, &cp, "msp1")?, &join(&cp, "msp1"))?;
    let m2 = parse_msp(field(c, &cp, "msp2")?, &join(&cp, "msp2"))?;
    Ok(DisciplineSpec::Custom(Box::new((m1, m2))))
}

/// Parses model JSON text.
pub fn parse_model_str(text: &str) -> Res<NetworkModel> {
    let v: Value = serde_json::from_str(text).map_err(|e| parse_err("", format!("malformed JSON: {e}")))?;
    parse_model(&v)
}

/// Parses and validates a model from a JSON value.
pub fn parse_model(v: &Value) -> Res<NetworkModel> {
    let top = object(v, "", &["arrivals", "services", "discipline", "p"])?;
    let arr = object(field(top, "", "arrivals")?, "arrivals", &["1", "3"])?;
    let map1 = parse_map(field(arr, "arrivals", "1")?, "arrivals.1")?;
    let map3 = parse_map(field(arr, "arrivals", "3")?, "arrivals.3")?;
    let svc = object(field(top, "", "services")?, "services", &["1", "2", "3", "4"])?;
    let mut ph = Vec::with_capacity(4);
    for i in 1..=4 {
        let key = i.to_string();
        ph.push(parse_ph(field(svc, "services", &key)?, &join("services", &key))?);
    }
    let ph: [PhSpec; 4] = ph.try_into().expect("four services");
    let p = match top.get("p") {
        Some(x) => number(x, "p")?,
        None => 0.0,
    };
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid("p", format!("feedback probability {p} outside [0, 1]")));
    }
    match parse_discipline(field(top, "", "discipline")?)? {
        DisciplineSpec::Builtin(d) => NetworkModel::new(map1, map3, ph, p, d).map_err(|e| invalid("discipline", e)),
        DisciplineSpec::Custom(b) => {
            let (m1, m2) = *b;
            NetworkModel::with_msps(map1, map3, m1, m2, ph, p).map_err(|e| invalid("discipline.custom", e))
        }
    }
}

fn msp_value(msp: &MspSpec) -> Value {
    let part = msp.partition();
    let mut mats = Map::new();
    for (name, kind) in matrix_names() {
        mats.insert(matrix_key(&name, kind), rows_of(msp.matrix(&name).expect("known name")));
    }
    json!({
        "states": msp.state_count(),
        "partition": {"idle": part.idle, "first": part.first, "second": part.second},
        "matrices": mats,
    })
}

/// Canonical form: every primitive as explicit matrices, fixed key order.
pub fn canonical(model: &NetworkModel) -> Value {
    let map = |m: &MapSpec| json!({"C": rows_of(m.c()), "D": rows_of(m.d())});
    let ph = |p: &PhSpec| json!({"beta": p.beta().iter().collect::<Vec<_>>(), "H": rows_of(p.h())});
    let discipline = match model.discipline() {
        Discipline::NonPreemptive => json!("non_preemptive"),
        Discipline::PreemptiveResume => json!("preemptive_resume"),
        Discipline::Limited { k } => json!({"limited": {"K": k}}),
        Discipline::Custom => json!({"custom": {"msp1": msp_value(model.msp1()), "msp2": msp_value(model.msp2())}}),
    };
    let s = model.ph();
    json!({
        "arrivals": {"1": map(model.map1()), "3": map(model.map3())},
        "services": {"1": ph(&s[0]), "2": ph(&s[1]), "3": ph(&s[2]), "4": ph(&s[3])},
        "discipline": discipline,
        "p": model.p(),
    })
}

/// Reads and parses a model file. Unreadable files are parse errors.
pub fn load_model(path: &std::path::Path) -> Res<(Value, NetworkModel)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| parse_err("", format!("cannot read {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| parse_err("", format!("malformed JSON: {e}")))?;
    let m = parse_model(&v)?;
    Ok((v, m))
}
