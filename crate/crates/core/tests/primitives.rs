use nalgebra::{DMatrix, RowDVector};
use netstab::primitives::{map_arrival_rate, map_stationary_phase, ph_mean, validate_map, validate_ph};
use netstab::{MapSpec, PhSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arb_map() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>)> {
    (1usize..=3).prop_flat_map(|n| {
        (prop::collection::vec(0.0..3.0f64, n * n), prop::collection::vec(0.1..3.0f64, n * n)).prop_map(
            move |(c_off, d)| {
                let d = DMatrix::from_row_slice(n, n, &d);
                let mut c = DMatrix::from_row_slice(n, n, &c_off);
                for i in 0..n {
                    c[(i, i)] = 0.0;
                    let out: f64 = c.row(i).sum() + d.row(i).sum();
                    c[(i, i)] = -out;
                }
                (c, d)
            },
        )
    })
}

fn arb_ph() -> impl Strategy<Value = PhSpec> {
    (1usize..=3).prop_flat_map(|n| {
        (
            prop::collection::vec(0.05..1.0f64, n),
            prop::collection::vec(0.0..2.0f64, n * n),
            prop::collection::vec(0.1..3.0f64, n),
        )
            .prop_map(move |(w, off, exit)| {
                let s: f64 = w.iter().sum();
                let mut beta: Vec<f64> = w.iter().map(|v| v / s).collect();
                let rest: f64 = beta[1..].iter().sum();
                beta[0] = 1.0 - rest;
                let mut h = DMatrix::from_row_slice(n, n, &off);
                for i in 0..n {
                    h[(i, i)] = 0.0;
                    let r = h.row(i).sum();
                    h[(i, i)] = -(r + exit[i]);
                }
                validate_ph(RowDVector::from_vec(beta), h).unwrap()
            })
    })
}

fn permuted(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(perm[i], perm[j])] = m[(i, j)];
        }
    }
    out
}

proptest! {
    #[test]
    fn map_stationary_phase_balances((c, d) in arb_map()) {
        let map = validate_map(c, d).unwrap();
        let pi = map_stationary_phase(&map).unwrap();
        let g = map.c() + map.d();
        let res = (pi.transpose() * &g).amax();
        prop_assert!(res <= 1e-10 * g.amax().max(1.0));
        prop_assert!((pi.sum() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn arrival_rate_permutation_invariant((c, d) in arb_map(), seed in any::<u64>()) {
        let n = c.nrows();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let a = map_arrival_rate(&validate_map(c.clone(), d.clone()).unwrap()).unwrap();
        let b = map_arrival_rate(&validate_map(permuted(&c, &perm), permuted(&d, &perm)).unwrap()).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn ph_mean_scales_inversely(ph in arb_ph(), c in 0.05..20.0f64) {
        let m = ph_mean(&ph).unwrap();
        let ms = ph_mean(&ph.scaled(c)).unwrap();
        prop_assert!((ms - m / c).abs() <= 1e-10 * m / c);
    }
}

// Absorption time of the phase chain, drawn by direct simulation.
fn sample_absorption(ph: &PhSpec, rng: &mut ChaCha8Rng) -> f64 {
    let n = ph.phases();
    let pick = |w: &[f64], rng: &mut ChaCha8Rng| {
        let total: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (i, &x) in w.iter().enumerate() {
            if u < x {
                return i;
            }
            u -= x;
        }
        w.len() - 1
    };
    let mut state = pick(ph.beta().as_slice(), rng);
    let mut t = 0.0;
    loop {
        let rate = -ph.h()[(state, state)];
        t += -(1.0 - rng.random::<f64>()).ln() / rate;
        let mut w: Vec<f64> = (0..n).map(|j| if j == state { 0.0 } else { ph.h()[(state, j)] }).collect();
        w.push(ph.exit()[state]);
        let next = pick(&w, rng);
        if next == n {
            return t;
        }
        state = next;
    }
}

#[test]
fn ph_mean_matches_monte_carlo() {
    let cases = [
        PhSpec::erlang(3, 2.0).unwrap(),
        PhSpec::exponential(0.7).unwrap(),
        validate_ph(
            RowDVector::from_row_slice(&[0.3, 0.7]),
            DMatrix::from_row_slice(2, 2, &[-4.0, 1.0, 0.5, -1.5]),
        )
        .unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 100_000;
    for ph in &cases {
        let xs: Vec<f64> = (0..n).map(|_| sample_absorption(ph, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let exact = ph_mean(ph).unwrap();
        assert!((mean - exact).abs() <= 3.0 * se, "mc {mean} vs exact {exact} (se {se})");
    }
}

#[test]
fn poisson_and_exponential_shorthands() {
    let m = MapSpec::poisson(2.5).unwrap();
    assert_eq!(m.c()[(0, 0)], -2.5);
    assert_eq!(m.d()[(0, 0)], 2.5);
    assert!((map_arrival_rate(&m).unwrap() - 2.5).abs() < 1e-15);
    assert!((PhSpec::exponential(4.0).unwrap().rate() - 4.0).abs() < 1e-12);
    assert!((ph_mean(&PhSpec::erlang(4, 2.0).unwrap()).unwrap() - 2.0).abs() < 1e-12);
}
