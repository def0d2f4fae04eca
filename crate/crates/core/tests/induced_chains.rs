use nalgebra::DMatrix;
use netstab::induced_chains::{
    build_induced_chain, closed_form_output_rates, drift_table, input_rates, mean_drift_rate, numeric_table,
    raw_output_rates, relative_difference, solve_stationary, SolveOptions,
};
use netstab::primitives::validate_map;
use netstab::{BlockKernel, Discipline, DriftMode, MapSpec, NetworkModel, PhSpec, Subset};

fn exp_models() -> Vec<NetworkModel> {
    let mut out = Vec::new();
    for d in [Discipline::NonPreemptive, Discipline::PreemptiveResume] {
        out.push(NetworkModel::exponential(1.0, 0.5, [5.0, 2.0, 4.0, 1.5], 0.3, d).unwrap());
        out.push(NetworkModel::exponential(0.7, 0.2, [3.0, 1.2, 6.0, 2.0], 0.0, d).unwrap());
    }
    for k in [2, 3, 5] {
        out.push(NetworkModel::exponential(1.0, 1.0, [5.0, 1.8, 5.0, 1.8], 0.0, Discipline::Limited { k }).unwrap());
    }
    out.push(NetworkModel::exponential(0.5, 0.5, [4.0, 2.0, 4.0, 2.0], 0.0, Discipline::Limited { k: 4 }).unwrap());
    out
}

fn phase_model() -> NetworkModel {
    let map1 = validate_map(
        DMatrix::from_row_slice(2, 2, &[-1.5, 1.0, 2.0, -4.0]),
        DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0]),
    )
    .unwrap();
    let ph = [
        PhSpec::erlang(2, 10.0).unwrap(),
        PhSpec::exponential(3.0).unwrap(),
        PhSpec::erlang(2, 8.0).unwrap(),
        PhSpec::exponential(2.5).unwrap(),
    ];
    NetworkModel::new(map1, MapSpec::poisson(0.4).unwrap(), ph, 0.3, Discipline::NonPreemptive).unwrap()
}

fn rate_scale(m: &NetworkModel) -> f64 {
    (1..=4).map(|i| m.mu(i)).fold(m.lambda1().max(m.lambda3()), f64::max)
}

#[test]
fn numeric_matches_closed_forms() {
    for model in exp_models() {
        let num = numeric_table(&model, &SolveOptions::default()).unwrap();
        assert!(num.all_converged(), "{:?}: {:?}", model.discipline(), num.notes);
        for row in &num.rows {
            let mu = closed_form_output_rates(&model, row.subset).unwrap();
            let lam = input_rates(mu, model.lambda1(), model.lambda3(), model.p());
            for q in row.subset.queues() {
                let closed = lam[q - 1] - mu[q - 1];
                let rel = relative_difference(row.drifts[q - 1], closed, 1e-6 * rate_scale(&model));
                assert!(rel <= 1e-4, "{:?} dq{q}^{}: {} vs {closed}", model.discipline(), row.subset, row.drifts[q - 1]);
            }
        }
    }
}

#[test]
fn unsaturated_queues_have_zero_drift() {
    let mut all = exp_models();
    all.push(phase_model());
    for model in all {
        let num = numeric_table(&model, &SolveOptions::default()).unwrap();
        for row in num.rows.iter().filter(|r| r.residuals.as_ref().unwrap().converged) {
            for q in (1..=4).filter(|&q| !row.subset.contains(q)) {
                assert!(row.drifts[q - 1].abs() <= 1e-5, "dq{q}^{} = {}", row.subset, row.drifts[q - 1]);
            }
        }
    }
}

// Independent mean one-step increment of the uniformized chain from the
// probability blocks, against the rate-based table entries.
#[test]
fn drift_equals_nu_times_mean_increment() {
    for model in [exp_models().remove(0), phase_model()] {
        let kernel = BlockKernel::new(&model);
        for a in Subset::POSITIVE {
            let chain = build_induced_chain(&kernel, a).unwrap();
            let sol = solve_stationary(&chain, &SolveOptions::default());
            assert!(sol.converged);
            let mut inc = [0.0; 4];
            for k in 0..sol.len() {
                let x = sol.coords[k].map(|v| v as usize);
                let j = sol.phases[k] as usize;
                for (z, p) in kernel.probability_blocks(netstab::generator::signature(x)) {
                    let mass: f64 = p.row(j).1.iter().sum();
                    for i in 0..4 {
                        inc[i] += sol.distribution[k] * z[i] as f64 * mass;
                    }
                }
            }
            let mu = raw_output_rates(&chain, &sol);
            let lam = input_rates(mu, model.lambda1(), model.lambda3(), model.p());
            let rate = mean_drift_rate(&chain, &sol);
            for i in 0..4 {
                let dq = lam[i] - mu[i];
                assert!((kernel.nu() * inc[i] - dq).abs() <= 1e-8, "{a} q{}: {} vs {dq}", i + 1, kernel.nu() * inc[i]);
                assert!((rate[i] - dq).abs() <= 1e-8);
            }
        }
    }
}

#[test]
fn drifts_scale_with_rates() {
    let model = phase_model();
    let base = numeric_table(&model, &SolveOptions::default()).unwrap();
    for c in [0.1, 10.0] {
        let scaled = numeric_table(&model.scaled(c), &SolveOptions::default()).unwrap();
        for (r0, r1) in base.rows.iter().zip(&scaled.rows) {
            for i in 0..4 {
                let want = c * r0.drifts[i];
                assert!((r1.drifts[i] - want).abs() <= 1e-9 * c.max(1.0) * rate_scale(&model));
            }
        }
    }
}

#[test]
fn both_mode_records_cross_check_or_fallback() {
    let model = exp_models().remove(0);
    let t = drift_table(&model, DriftMode::Both).unwrap();
    assert!(t.cross_check.is_empty());
    assert!(t.rows.iter().all(|r| r.numeric_drifts.is_some()));
    let t = drift_table(&phase_model(), DriftMode::Both).unwrap();
    // Priority closed forms only involve mean service times.
    assert!(t.cross_check.is_empty(), "{:?}", t.cross_check);
    let custom_k = NetworkModel::exponential(1.0, 0.5, [5.0, 1.8, 5.0, 1.8], 0.0, Discipline::Limited { k: 3 }).unwrap();
    let t = drift_table(&custom_k, DriftMode::Both).unwrap();
    assert!(t.notes.iter().any(|n| n.starts_with("closed form not used")));
    assert!(t.rows.iter().all(|r| r.provenance.iter().all(|p| *p == netstab::induced_chains::Provenance::Numeric)));
    let k1 = NetworkModel::exponential(1.0, 1.0, [5.0, 1.8, 5.0, 1.8], 0.0, Discipline::Limited { k: 1 }).unwrap();
    let e = drift_table(&k1, DriftMode::ClosedForm).unwrap_err();
    assert!(matches!(e, netstab::Error::AssumptionViolated(_)), "{e}");
}

#[test]
fn drift_table_json_keys() {
    let t = drift_table(&exp_models().remove(0), DriftMode::ClosedForm).unwrap();
    let v = serde_json::to_value(&t).unwrap();
    let row = &v["rows"][0];
    for key in ["subset", "inputRates", "outputRates", "drifts", "provenance", "residuals"] {
        assert!(row.get(key).is_some(), "missing {key}");
    }
    let back: netstab::DriftTable = serde_json::from_value(v).unwrap();
    assert_eq!(back, t);
}
