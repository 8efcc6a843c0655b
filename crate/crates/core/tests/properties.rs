//! Property tests against independent oracles written here, not in the
//! library.

use kdgp_core::basis::{build_basis, se_kernel, BasisSet, KernelHyperparams, SpectralForm};
use kdgp_core::field::{measure, sample_gp_field_basis, transport_step, FieldGrid, GridSpec};
use kdgp_core::geometry::Domain;
use kdgp_core::gp::{blr_batch_posterior, kgp_init, kgp_update, posterior_predict, SensorReading};
use kdgp_core::harness::metrics::{rmse_field, rmse_matrix};
use kdgp_core::kdgp::{
    build_local_message, dual_extrema_step, kdgp_predict, kdgp_update, AssembledMeasurement,
};
use kdgp_core::madgp::avg_consensus_step;
use kdgp_core::maxplus::{
    build_adjacency, consensus_target, extrema_split, min_power_to_all_e, mp_mat_mul, MaxPlus,
    MaxPlusMatrix, MessageStack,
};
use kdgp_core::network::{random_geometric_deployment, NetworkGraph};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hp() -> KernelHyperparams {
    KernelHyperparams {
        sigma_s: 1.5,
        l: 0.3,
        sigma_n: 0.3,
        l_k: 40.0,
    }
}

fn point() -> impl Strategy<Value = [f64; 2]> {
    (-0.9..0.9f64, -0.9..0.9f64).prop_map(|(a, b)| [a, b])
}

/// Textbook posterior by explicit inversion of the information matrix.
fn dense_posterior(
    readings: &[([f64; 2], f64)],
    basis: &BasisSet,
    hp: &KernelHyperparams,
) -> (DVector<f64>, DMatrix<f64>) {
    let e = basis.len();
    let mut phi = DMatrix::zeros(e, readings.len());
    let mut y = DVector::zeros(readings.len());
    for (n, (x, v)) in readings.iter().enumerate() {
        for k in 0..e {
            phi[(k, n)] = basis.eigenfunction(k, x).unwrap();
        }
        y[n] = *v;
    }
    let lambda_inv = DMatrix::from_diagonal(&DVector::from_iterator(
        e,
        basis.spectral_densities().iter().map(|s| 1.0 / s),
    ));
    let s2 = hp.sigma_n * hp.sigma_n;
    let info = lambda_inv + &phi * phi.transpose() / s2;
    let p = info.try_inverse().unwrap();
    let m = &p * &phi * &y / s2;
    (m, p)
}

fn random_connected_graph(n: usize, seed: u64) -> NetworkGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_geometric_deployment(n, &Domain::square(0.0, 1.0), 0.35, &mut rng).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn approx_kernel_is_symmetric(a in point(), b in point()) {
        let basis = build_basis(60, 1.0, &hp(), SpectralForm::ThreeHalves).unwrap();
        prop_assert_eq!(basis.approx_kernel(&a, &b).unwrap(), basis.approx_kernel(&b, &a).unwrap());
    }

    #[test]
    fn approx_gram_is_psd(pts in prop::collection::vec(point(), 1..20), form in prop_oneof![Just(SpectralForm::ThreeHalves), Just(SpectralForm::Standard2d)]) {
        let basis = build_basis(80, 1.0, &hp(), form).unwrap();
        let n = pts.len();
        let gram = DMatrix::from_fn(n, n, |i, j| basis.approx_kernel(&pts[i], &pts[j]).unwrap());
        let min = gram.symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-9, "min eigenvalue {min}");
    }

    #[test]
    fn kernel_vanishes_on_box_boundary(t in -1.0..1.0f64, side in 0usize..4, other in point()) {
        let basis = build_basis(50, 1.0, &hp(), SpectralForm::ThreeHalves).unwrap();
        let x = match side { 0 => [-1.0, t], 1 => [1.0, t], 2 => [t, -1.0], _ => [t, 1.0] };
        prop_assert!(basis.approx_kernel(&x, &other).unwrap().abs() < 1e-12);
    }

    #[test]
    fn recursion_matches_batch(seed in any::<u64>(), n in 1usize..50) {
        let h = hp();
        let basis = build_basis(30, 1.0, &h, SpectralForm::ThreeHalves).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<([f64; 2], f64)> = (0..n)
            .map(|_| ([rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)], rng.random_range(-3.0..3.0)))
            .collect();
        let mut state = kgp_init(&basis);
        for (x, y) in &data {
            state = kgp_update(&state, x, *y, &h, &basis).unwrap();
            prop_assert!(state.p.clone().symmetric_eigenvalues().min() > 0.0);
        }
        let (m, p) = dense_posterior(&data, &basis, &h);
        prop_assert!((&state.m - &m).amax() < 1e-8);
        prop_assert!((&state.p - &p).amax() < 1e-8);

        let readings: Vec<SensorReading> = data.iter().enumerate()
            .map(|(i, (x, y))| SensorReading { sensor_id: 0, step: i + 1, position: *x, value: *y })
            .collect();
        let batch = blr_batch_posterior(&readings, &basis, &h).unwrap();
        prop_assert!((&state.m - &batch.m).amax() < 1e-8);
        prop_assert!((&state.p - &batch.p).amax() < 1e-8);
    }

    #[test]
    fn fold_is_order_free(seed in any::<u64>()) {
        let h = hp();
        let basis = build_basis(25, 1.0, &h, SpectralForm::ThreeHalves).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data: Vec<([f64; 2], f64)> = (0..20)
            .map(|_| ([rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)], rng.random_range(-3.0..3.0)))
            .collect();
        let fold = |d: &[([f64; 2], f64)]| d.iter().fold(kgp_init(&basis), |s, (x, y)| kgp_update(&s, x, *y, &h, &basis).unwrap());
        let a = fold(&data);
        data.reverse();
        data.swap(0, 7);
        let b = fold(&data);
        prop_assert!(a.max_abs_diff(&b) < 1e-8);
    }

    #[test]
    fn weight_space_matches_function_space(seed in any::<u64>(), n in 1usize..20) {
        let h = hp();
        let basis = build_basis(40, 1.0, &h, SpectralForm::ThreeHalves).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)]).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let q = [[0.1, 0.2], [-0.5, 0.4]];
        let state = xs.iter().zip(&ys).fold(kgp_init(&basis), |s, (x, y)| kgp_update(&s, x, *y, &h, &basis).unwrap());
        let pred = posterior_predict(&state, &q, &basis).unwrap();
        // K* (K + s2 I)^-1 y with the approximate kernel, solved densely
        let k = DMatrix::from_fn(n, n, |i, j| basis.approx_kernel(&xs[i], &xs[j]).unwrap()) + DMatrix::identity(n, n) * (h.sigma_n * h.sigma_n);
        let kinv = k.try_inverse().unwrap();
        for (qi, p) in q.iter().zip(&pred) {
            let ks = DVector::from_iterator(n, xs.iter().map(|x| basis.approx_kernel(qi, x).unwrap()));
            let mean = ks.dot(&(&kinv * DVector::from_column_slice(&ys)));
            let var = basis.approx_kernel(qi, qi).unwrap() - ks.dot(&(&kinv * &ks));
            prop_assert!((p.mean - mean).abs() < 1e-6);
            prop_assert!((p.variance - var).abs() < 1e-6);
        }
    }

    #[test]
    fn assembled_update_matches_sequential(seed in any::<u64>(), r in 1usize..30) {
        let h = hp();
        let basis = build_basis(36, 1.0, &h, SpectralForm::ThreeHalves).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let readings: Vec<SensorReading> = (0..r)
            .map(|id| SensorReading { sensor_id: id, step: 1, position: [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)], value: rng.random_range(-2.0..2.0) })
            .collect();
        let meas = AssembledMeasurement::from_readings(&readings, &basis).unwrap();
        let joint = kdgp_update(&kgp_init(&basis), &meas, &h).unwrap();
        let seq = readings.iter().fold(kgp_init(&basis), |s, rd| kgp_update(&s, &rd.position, rd.value, &h, &basis).unwrap());
        prop_assert!(joint.max_abs_diff(&seq) < 1e-8);
    }

    #[test]
    fn prediction_contracts_mean_and_shifts_spectrum(seed in any::<u64>(), dk in 0.0..100.0f64) {
        let h = hp();
        let basis = build_basis(12, 1.0, &h, SpectralForm::ThreeHalves).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = (0..5).fold(kgp_init(&basis), |s, _| {
            kgp_update(&s, &[rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)], rng.random_range(-2.0..2.0), &h, &basis).unwrap()
        });
        let next = kdgp_predict(&state, dk, &h).unwrap();
        let a = (-dk / h.l_k).exp();
        let q = 1.0 - (-2.0 * dk / h.l_k).exp();
        prop_assert!((next.m.norm() - a * state.m.norm()).abs() <= 1e-12 * state.m.norm().max(1.0));
        let mut before: Vec<f64> = state.p.clone().symmetric_eigenvalues().iter().map(|l| a * a * l + q).collect();
        let mut after: Vec<f64> = next.p.clone().symmetric_eigenvalues().iter().copied().collect();
        before.sort_by(f64::total_cmp);
        after.sort_by(f64::total_cmp);
        for (x, y) in before.iter().zip(&after) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn dual_extrema_reaches_sum_at_diameter(seed in any::<u64>(), n in 2usize..25) {
        let graph = random_connected_graph(n, seed);
        let diameter = graph.diameter().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let basis = build_basis(6, 1.0, &hp(), SpectralForm::ThreeHalves).unwrap();
        let mut msgs: Vec<_> = (0..n)
            .map(|r| build_local_message(r, n, &[rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)], rng.random_range(-2.0..2.0), &basis).unwrap())
            .collect();
        let intrinsic: Vec<_> = msgs.iter().map(|m| m.intrinsic_column()).collect();
        let total = msgs.iter().skip(1).fold(msgs[0].matrix.clone(), |acc, m| acc + &m.matrix);
        for t in 0..diameter {
            let next: Vec<_> = (0..n)
                .map(|r| {
                    let inbox: Vec<_> = graph.neighbors(r).iter().map(|&j| &msgs[j]).collect();
                    dual_extrema_step(&msgs[r], &inbox).unwrap()
                })
                .collect();
            msgs = next;
            for (m, c) in msgs.iter().zip(&intrinsic) {
                prop_assert_eq!(&m.intrinsic_column(), c);
            }
            if t + 1 < diameter {
                prop_assert!(msgs.iter().any(|m| m.matrix != total));
            }
        }
        for m in &msgs {
            prop_assert!((&m.matrix - &total).amax() <= 1e-12);
        }
        // a fixpoint of the protocol
        let again = dual_extrema_step(&msgs[0], &graph.neighbors(0).iter().map(|&j| &msgs[j]).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(&again.matrix, &msgs[0].matrix);
    }

    #[test]
    fn adjacency_power_matches_bfs_diameter(seed in any::<u64>(), n in 2usize..20) {
        let graph = random_connected_graph(n, seed);
        let t = min_power_to_all_e(&build_adjacency(&graph)).unwrap();
        prop_assert_eq!(t, graph.diameter());
    }

    #[test]
    fn extrema_split_signs_and_reconstruction(seed in any::<u64>(), depth in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // one nonzero contribution per depth line
        let owners = DMatrix::from_fn(4, 5, |_, _| rng.random_range(0..depth));
        let values = DMatrix::from_fn(4, 5, |_, _| rng.random_range(-5.0..5.0));
        let layers: Vec<_> = (0..depth)
            .map(|d| DMatrix::from_fn(4, 5, |i, j| if owners[(i, j)] == d { values[(i, j)] } else { 0.0 }))
            .collect();
        let stack = MessageStack::new(layers).unwrap();
        prop_assert!(stack.satisfies_identical_or_zero());
        let (plus, minus) = extrema_split(&stack).unwrap();
        prop_assert!(plus.iter().all(|v| *v >= 0.0));
        prop_assert!(minus.iter().all(|v| *v <= 0.0));
        prop_assert_eq!(consensus_target(&stack).unwrap(), stack.sum().unwrap());
    }

    #[test]
    fn average_consensus_conserves_the_mean(seed in any::<u64>(), n in 2usize..15) {
        let graph = random_connected_graph(n, seed);
        let gamma = 1.0 / (graph.max_degree() as f64 + 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vals: Vec<DMatrix<f64>> = (0..n).map(|_| DMatrix::from_fn(3, 4, |_, _| rng.random_range(-10.0..10.0))).collect();
        let mean = |v: &[DMatrix<f64>]| v.iter().skip(1).fold(v[0].clone(), |a, b| a + b) / v.len() as f64;
        let start = mean(&vals);
        for _ in 0..20 {
            vals = (0..n)
                .map(|r| {
                    let nb: Vec<_> = graph.neighbors(r).iter().map(|&j| &vals[j]).collect();
                    avg_consensus_step(&vals[r], &nb, gamma).unwrap()
                })
                .collect();
            prop_assert!((mean(&vals) - &start).amax() < 1e-10);
        }
    }

    #[test]
    fn rmse_matches_double_loop(rows in 1usize..8, cols in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: DMatrix<f64> = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-4.0..4.0));
        let b: DMatrix<f64> = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-4.0..4.0));
        let mut acc = 0.0;
        for i in 0..rows {
            for j in 0..cols {
                acc += (a[(i, j)] - b[(i, j)]).powi(2);
            }
        }
        let want = (acc / (rows * cols) as f64).sqrt();
        prop_assert!((rmse_matrix(&a, &b).unwrap() - want).abs() < 1e-12);

        if rows >= 2 && cols >= 2 {
            let spec = GridSpec::new(Domain::square(0.0, 1.0), cols, rows).unwrap();
            let fa = FieldGrid::from_values(spec, a.transpose().iter().copied().collect(), 0.0).unwrap();
            let fb = FieldGrid::from_values(spec, b.transpose().iter().copied().collect(), 0.0).unwrap();
            prop_assert!((rmse_field(&fa, &fb).unwrap() - want).abs() < 1e-12);
        }
    }
}

fn mp(v: i32) -> MaxPlus {
    if v == i32::MIN {
        MaxPlus::EPSILON
    } else {
        MaxPlus(v as f64)
    }
}

fn mp_scalar() -> impl Strategy<Value = MaxPlus> {
    prop_oneof![1 => Just(i32::MIN), 9 => -1000i32..1000].prop_map(mp)
}

fn mp_matrix() -> impl Strategy<Value = MaxPlusMatrix> {
    prop::collection::vec(mp_scalar(), 16)
        .prop_map(|v| MaxPlusMatrix::from_fn(4, 4, |i, j| v[4 * i + j]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn scalar_semiring_laws(a in mp_scalar(), b in mp_scalar(), c in mp_scalar()) {
        prop_assert_eq!(a.oplus(b).oplus(c), a.oplus(b.oplus(c)));
        prop_assert_eq!(a.oplus(b), b.oplus(a));
        prop_assert_eq!(a.oplus(MaxPlus::EPSILON), a);
        prop_assert_eq!(a.otimes(b).otimes(c), a.otimes(b.otimes(c)));
        prop_assert_eq!(a.otimes(MaxPlus::E), a);
        prop_assert_eq!(a.otimes(b.oplus(c)), a.otimes(b).oplus(a.otimes(c)));
        prop_assert!(a.otimes(MaxPlus::EPSILON).is_epsilon());
    }

    #[test]
    fn matrix_semiring_laws(a in mp_matrix(), b in mp_matrix(), c in mp_matrix()) {
        let id = MaxPlusMatrix::identity(4);
        let eps = MaxPlusMatrix::filled(4, 4, MaxPlus::EPSILON);
        prop_assert_eq!(mp_mat_mul(&mp_mat_mul(&a, &b).unwrap(), &c).unwrap(), mp_mat_mul(&a, &mp_mat_mul(&b, &c).unwrap()).unwrap());
        prop_assert_eq!(a.oplus(&b).unwrap().oplus(&c).unwrap(), a.oplus(&b.oplus(&c).unwrap()).unwrap());
        prop_assert_eq!(mp_mat_mul(&a, &id).unwrap(), a.clone());
        prop_assert_eq!(mp_mat_mul(&id, &a).unwrap(), a.clone());
        prop_assert_eq!(a.oplus(&eps).unwrap(), a.clone());
        prop_assert_eq!(mp_mat_mul(&a, &eps).unwrap(), eps.clone());
        prop_assert_eq!(
            mp_mat_mul(&a, &b.oplus(&c).unwrap()).unwrap(),
            mp_mat_mul(&a, &b).unwrap().oplus(&mp_mat_mul(&a, &c).unwrap()).unwrap()
        );
    }
}

#[test]
fn refinement_shrinks_kernel_error() {
    let h = KernelHyperparams {
        sigma_s: 4.0,
        l: 0.07,
        sigma_n: 0.1,
        l_k: 1.0,
    };
    let mse = |e: usize| {
        let basis = build_basis(e, 0.6, &h, SpectralForm::Standard2d).unwrap();
        let mut acc = 0.0;
        let n = 25;
        for i in 0..n {
            for j in 0..n {
                let d = [
                    -0.2 + 0.4 * i as f64 / (n - 1) as f64,
                    -0.2 + 0.4 * j as f64 / (n - 1) as f64,
                ];
                acc += (basis.approx_kernel(&[0.0, 0.0], &d).unwrap()
                    - se_kernel(&[0.0, 0.0], &d, &h))
                .powi(2);
            }
        }
        acc / (n * n) as f64
    };
    let (m25, m100, m400) = (mse(25), mse(100), mse(400));
    assert!(m400 < m100 && m100 < m25, "{m25} {m100} {m400}");
}

#[test]
fn basis_draw_variance_matches_prior() {
    let h = KernelHyperparams {
        sigma_s: 2.0,
        l: 0.2,
        sigma_n: 0.1,
        l_k: 1.0,
    };
    let basis = BasisSet::for_domain(
        60,
        &Domain::square(0.0, 1.0),
        1.2,
        &h,
        SpectralForm::Standard2d,
    )
    .unwrap();
    let spec = GridSpec::new(Domain::square(0.0, 1.0), 5, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let probe = spec.index(2, 2);
    let x = spec.node(2, 2);
    let draws: Vec<f64> = (0..2000)
        .map(|_| {
            sample_gp_field_basis(&basis, &spec, &mut rng)
                .unwrap()
                .values[probe]
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
    let want = basis.approx_kernel(&x, &x).unwrap();
    assert!((var / want - 1.0).abs() < 0.15, "sample {var} vs {want}");
}

#[test]
fn pure_diffusion_never_gains_mass() {
    let spec = GridSpec::new(Domain::square(0.0, 1.0), 31, 31).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut values: Vec<f64> = (0..spec.len())
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    for iy in 0..spec.ny {
        for ix in 0..spec.nx {
            if ix == 0 || iy == 0 || ix == spec.nx - 1 || iy == spec.ny - 1 {
                values[spec.index(ix, iy)] = 0.0;
            }
        }
    }
    let mut g = FieldGrid::from_values(spec, values, 0.0).unwrap();
    let d = 0.01;
    let dt = 0.9 / (2.0 * d * 2.0 / (spec.dx() * spec.dx()));
    let mass = |g: &FieldGrid| g.values.iter().sum::<f64>() * spec.dx() * spec.dy();
    let mut last = mass(&g);
    for _ in 0..200 {
        g = transport_step(&g, dt, |_| d, |_, _| [0.0, 0.0], |_| 0.0).unwrap();
        let now = mass(&g);
        assert!(now <= last + 1e-12, "{now} > {last}");
        last = now;
    }
}

#[test]
fn refinement_converges_at_first_order() {
    // smooth bump, short horizon
    let solve = |n: usize| {
        let spec = GridSpec::new(Domain::square(0.0, 10.0), n, n).unwrap();
        let values = spec
            .nodes()
            .iter()
            .map(|x| (-((x[0] - 5.0).powi(2) + (x[1] - 5.0).powi(2)) / 2.0).exp())
            .collect();
        let mut g = FieldGrid::from_values(spec, values, 0.0).unwrap();
        g = kdgp_core::field::advance(&g, 0.05, &[6.0, 6.0]).unwrap();
        g.interpolate(&[5.0, 5.0]).unwrap()
    };
    let (coarse, mid, fine) = (solve(41), solve(81), solve(161));
    assert!(
        (fine - mid).abs() < (mid - coarse).abs(),
        "{coarse} {mid} {fine}"
    );
}

#[test]
fn measurement_noise_is_seeded() {
    let spec = GridSpec::new(Domain::square(0.0, 1.0), 4, 4).unwrap();
    let g = FieldGrid::zeros(spec);
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..5)
            .map(|_| measure(&g, &[0.5, 0.5], 0.3, &mut rng).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(9), draw(9));
    assert_ne!(draw(9), draw(10));
}
