use nalgebra::DMatrix;
use netstab::induced_chains::{
    build_induced_chain, closed_form_output_rates, input_rates, solve_stationary, SolveOptions,
};
use netstab::primitives::validate_map;
use netstab::simulator::{
    departure_rates, estimate_combined_drift, estimate_drift, replicate, simulate, simulate_saturated, simulate_with,
    utilization, SimOptions,
};
use netstab::{BlockKernel, Discipline, Error, Generator, MapSpec, NetworkModel, PhSpec, Subset};

fn np(l1: f64, l3: f64, mu: [f64; 4], p: f64) -> NetworkModel {
    NetworkModel::exponential(l1, l3, mu, p, Discipline::NonPreemptive).unwrap()
}

#[test]
fn saturated_departure_rates_match_priority_service() {
    let mu = [5.0, 2.0, 4.0, 1.5];
    let t = simulate_saturated(&np(1.0, 0.5, mu, 0.3), Subset::N, 1e5, 17).unwrap();
    let est = departure_rates(&t, 0.1).unwrap();
    let want = [0.0, mu[1], 0.0, mu[3]];
    for i in 0..4 {
        let tol = 3.0 * est.half_width[i];
        assert!((est.rate[i] - want[i]).abs() <= tol, "q{}: {} vs {} (hw {})", i + 1, est.rate[i], want[i], tol);
    }
}

#[test]
fn saturated_drifts_bracket_closed_forms() {
    let models = [
        np(1.0, 0.5, [5.0, 2.0, 4.0, 1.5], 0.3),
        NetworkModel::exponential(1.0, 0.5, [5.0, 2.0, 4.0, 1.5], 0.3, Discipline::PreemptiveResume).unwrap(),
        NetworkModel::exponential(1.0, 1.0, [5.0, 1.8, 5.0, 1.8], 0.0, Discipline::Limited { k: 3 }).unwrap(),
    ];
    for (mi, model) in models.iter().enumerate() {
        for (ai, a) in Subset::POSITIVE.into_iter().enumerate() {
            let mu = closed_form_output_rates(model, a).unwrap();
            let lam = input_rates(mu, model.lambda1(), model.lambda3(), model.p());
            let t = simulate_saturated(model, a, 1e5, 100 + (mi * 5 + ai) as u64).unwrap();
            let est = estimate_drift(&t, 0.1).unwrap();
            for q in a.queues() {
                let want = lam[q - 1] - mu[q - 1];
                let got = est.per_queue_slope[q - 1];
                let tol = 3.0 * est.half_width[q - 1];
                assert!((got - want).abs() <= tol, "{:?} {a} q{q}: {got} vs {want} (3hw {tol})", model.discipline());
            }
        }
    }
}

#[test]
fn single_station_utilization_matches_load() {
    // λ3 = p = 0: station 1 is a MAP/PH/1 queue for class 1.
    let map1 = validate_map(
        DMatrix::from_row_slice(2, 2, &[-1.5, 1.0, 2.0, -4.0]),
        DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0]),
    )
    .unwrap();
    let ph = [
        PhSpec::erlang(2, 5.0).unwrap(),
        PhSpec::exponential(3.0).unwrap(),
        PhSpec::exponential(4.0).unwrap(),
        PhSpec::exponential(3.0).unwrap(),
    ];
    let m = NetworkModel::new(map1, MapSpec::poisson(0.0).unwrap(), ph, 0.0, Discipline::NonPreemptive).unwrap();
    let rho1 = m.lambda1() / m.mu(1);
    let runs = replicate(&m, None, 2e4, 5, [0; 4], 10, 500).unwrap();
    let us: Vec<f64> = runs.iter().map(|t| utilization(t)[0]).collect();
    let mean = us.iter().sum::<f64>() / us.len() as f64;
    let sd = (us.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / (us.len() - 1) as f64).sqrt();
    let se = sd / (us.len() as f64).sqrt();
    assert!((mean - rho1).abs() <= 3.0 * se + 1e-3, "utilization {mean} vs rho1 {rho1} (se {se})");
    let rho2 = m.lambda1() / m.mu(2);
    let u2 = runs.iter().map(|t| utilization(t)[1]).sum::<f64>() / runs.len() as f64;
    assert!((u2 - rho2).abs() < 0.02);
}

#[test]
fn event_rate_matches_generator_diagonal() {
    let model = np(1.0, 0.5, [5.0, 2.0, 4.0, 1.5], 0.3);
    let kernel = BlockKernel::new(&model);
    let chain = build_induced_chain(&kernel, Subset::N).unwrap();
    let sol = solve_stationary(&chain, &SolveOptions::default());
    let g = Generator::new(&model);
    let diag = g.block([2; 4], [2; 4]).unwrap().to_dense();
    let expected: f64 = sol.phases.iter().zip(&sol.distribution).map(|(&j, p)| -diag[(j as usize, j as usize)] * p).sum();
    let runs = replicate(&model, Some(Subset::N), 1e4, 3, [0; 4], 10, 200).unwrap();
    let rates: Vec<f64> = runs.iter().map(|t| t.events as f64 / t.horizon).collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let sd = (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (rates.len() - 1) as f64).sqrt();
    assert!((mean - expected).abs() <= 3.0 * sd / (rates.len() as f64).sqrt(), "{mean} vs {expected}");
}

#[test]
fn stable_network_has_flat_trajectory() {
    let model = np(1.0, 1.0, [5.0, 2.5, 5.0, 2.5], 0.0);
    let t = simulate(&model, 1e5, 8, [0; 4]).unwrap();
    let est = estimate_drift(&t, 0.2).unwrap();
    for i in 0..4 {
        assert!(est.per_queue_slope[i].abs() <= 3.0 * est.half_width[i] + 1e-3, "{est:?}");
    }
    assert!(!t.empty_return_times.is_empty());
}

#[test]
fn overloaded_station_grows() {
    // ρ2 + ρ3 = 1.2: station 2 is overloaded.
    let model = np(1.0, 0.5, [10.0, 1.25, 1.25, 5.0], 0.0);
    let t = simulate(&model, 1e5, 21, [0; 4]).unwrap();
    let (slope, hw) = estimate_combined_drift(&t, 0.2, [0.0, 1.0, 1.0, 0.0]).unwrap();
    assert!(slope - hw > 0.0, "slope {slope} hw {hw}");
}

#[test]
fn virtual_station_overload_grows() {
    // ρ2 + ρ4 = 1.2 with both stations under nominal load.
    let m2 = 2.0 / 1.2;
    let model = np(1.0, 1.0, [10.0, m2, 10.0, m2], 0.0);
    let t = simulate(&model, 1e5, 21, [0; 4]).unwrap();
    // The content spirals between stations, so only the total grows steadily.
    let (slope, hw) = estimate_combined_drift(&t, 0.2, [1.0; 4]).unwrap();
    assert!(slope - hw > 0.0, "slope {slope} hw {hw}");
}

#[test]
fn determinism_and_streams() {
    let m = np(1.0, 0.5, [5.0, 2.0, 4.0, 1.5], 0.3);
    let a = simulate(&m, 500.0, 4, [1, 0, 2, 0]).unwrap();
    let b = simulate(&m, 500.0, 4, [1, 0, 2, 0]).unwrap();
    assert_eq!(a, b);
    let c = simulate_with(&m, None, 500.0, 4, [1, 0, 2, 0], &SimOptions { stream: 1, ..Default::default() }).unwrap();
    assert_ne!(a.samples, c.samples);
    let reps = replicate(&m, None, 500.0, 4, [1, 0, 2, 0], 2, 2000).unwrap();
    assert_eq!(reps[0], a);
    assert_eq!(reps[1], c);
}

#[test]
fn horizon_zero_has_no_data() {
    let m = np(1.0, 0.5, [5.0, 2.0, 4.0, 1.5], 0.3);
    let t = simulate(&m, 0.0, 1, [0; 4]).unwrap();
    assert!(matches!(estimate_drift(&t, 0.0), Err(Error::InsufficientData(_))));
    assert!(matches!(simulate(&m, -1.0, 1, [0; 4]), Err(Error::InvalidArgument(_))));
    assert!(matches!(simulate_saturated(&m, Subset::EMPTY, 10.0, 1), Err(Error::EmptySubset)));
}
