use nalgebra::{DMatrix, DVector};
use netstab::generator::{lattice_box, signature, BlockKernel, Generator};
use netstab::induced_chains::{build_induced_chain, solve_stationary, SolveOptions};
use netstab::primitives::validate_map;
use netstab::{Discipline, MapSpec, NetworkModel, PhSpec, Subset};
use proptest::prelude::*;

fn mmpp_model(discipline: Discipline) -> NetworkModel {
    let map1 = validate_map(
        DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 2.0, -5.0]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]),
    )
    .unwrap();
    let ph = [
        PhSpec::erlang(2, 10.0).unwrap(),
        PhSpec::exponential(3.0).unwrap(),
        PhSpec::exponential(4.0).unwrap(),
        PhSpec::exponential(2.5).unwrap(),
    ];
    NetworkModel::new(map1, MapSpec::poisson(0.4).unwrap(), ph, 0.3, discipline).unwrap()
}

fn models() -> Vec<NetworkModel> {
    vec![
        mmpp_model(Discipline::NonPreemptive),
        mmpp_model(Discipline::PreemptiveResume),
        mmpp_model(Discipline::Limited { k: 2 }),
    ]
}

fn displacements() -> impl Iterator<Item = [i8; 4]> {
    (0..81).map(|mut k| {
        let mut z = [0i8; 4];
        for zi in z.iter_mut() {
            *zi = (k % 3) as i8 - 1;
            k /= 3;
        }
        z
    })
}

fn shifted(x: [usize; 4], z: [i8; 4]) -> Option<[usize; 4]> {
    let mut out = [0; 4];
    for i in 0..4 {
        out[i] = usize::try_from(x[i] as i64 + z[i] as i64).ok()?;
    }
    Some(out)
}

#[test]
fn box_rows_conserve_rate_and_probability() {
    for model in models() {
        let kernel = BlockKernel::new(&model);
        let g = kernel.generator();
        let m = g.phase_dim();
        for x in lattice_box(3) {
            let mut q_rows = vec![0.0; m];
            let mut p_rows = vec![0.0; m];
            for z in displacements() {
                let p = kernel.probability_block(signature(x), z);
                match shifted(x, z) {
                    Some(xp) => {
                        for (r, s) in q_rows.iter_mut().zip(g.block(x, xp).unwrap().row_sums()) {
                            *r += s;
                        }
                        for (i, _, v) in p.triplets() {
                            assert!(v >= 0.0, "negative probability at {x:?} {z:?}");
                            p_rows[i] += v;
                        }
                    }
                    None => assert!(p.is_zero(), "move {z:?} leaves the orthant from {x:?}"),
                }
            }
            assert!(q_rows.iter().all(|r| r.abs() <= 1e-10), "{x:?}: {q_rows:?}");
            assert!(p_rows.iter().all(|r| (r - 1.0).abs() <= 1e-10), "{x:?}: {p_rows:?}");
        }
    }
}

#[test]
fn mean_increments_are_skip_free() {
    for model in models() {
        let g = Generator::new(&model);
        let nu = g.uniformization_constant();
        for x in lattice_box(3) {
            for j in 0..g.phase_dim() {
                let a = g.mean_increment(x, j);
                assert!(a.iter().all(|v| (v / nu).abs() <= 1.0));
            }
        }
    }
}

fn same_signature_pair() -> impl Strategy<Value = ([usize; 4], [usize; 4], [i8; 4])> {
    (prop::array::uniform4(0usize..6), prop::array::uniform4(2usize..40), prop::array::uniform4(-1i8..=1)).prop_map(
        |(x, high, z)| {
            let xp = std::array::from_fn(|i| if x[i] >= 2 { high[i] } else { x[i] });
            (x, xp, z)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn blocks_depend_only_on_signature((x, xp, z) in same_signature_pair()) {
        let g = Generator::new(&mmpp_model(Discipline::NonPreemptive));
        prop_assert_eq!(signature(x), signature(xp));
        if let (Some(y), Some(yp)) = (shifted(x, z), shifted(xp, z)) {
            let a = g.block(x, y).unwrap();
            let b = g.block(xp, yp).unwrap();
            prop_assert_eq!(a.triplets(), b.triplets());
        }
    }
}

// Stationary vector of the background chain of the fully saturated
// induced chain, from Q and by power iteration of P.
#[test]
fn saturated_chain_stationary_vector_agrees_with_power_iteration() {
    for model in models() {
        let kernel = BlockKernel::new(&model);
        let chain = build_induced_chain(&kernel, Subset::N).unwrap();
        let sol = solve_stationary(&chain, &SolveOptions::default());
        assert!(sol.converged);
        let m = kernel.generator().phase_dim();
        let mut q = DMatrix::zeros(m, m);
        for (_, b) in chain.rate_blocks(&[]) {
            q += b.to_dense();
        }
        for i in 0..m {
            let off: f64 = (0..m).filter(|&j| j != i).map(|j| q[(i, j)]).sum();
            q[(i, i)] = -off;
        }
        let p = DMatrix::identity(m, m) + &q / kernel.nu();
        let mut pi = DVector::zeros(m);
        for (k, &j) in sol.phases.iter().enumerate() {
            pi[j as usize] = sol.distribution[k];
        }
        let res_q = (pi.transpose() * &q).amax();
        let res_p = (pi.transpose() * &p - pi.transpose()).amax();
        assert!(res_q <= 1e-10 * kernel.nu(), "piQ residual {res_q}");
        assert!(res_p <= 1e-9, "piP residual {res_p}");
        let mut v = DVector::zeros(m).transpose();
        v[0] = 1.0;
        for _ in 0..200_000 {
            let next = &v * &p;
            let done = (&next - &v).amax() < 1e-15;
            v = next;
            if done {
                break;
            }
        }
        assert!((v - pi.transpose()).amax() <= 1e-9);
    }
}
