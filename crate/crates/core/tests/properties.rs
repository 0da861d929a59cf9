use ddfl_core::controller::{control, design_gain, GainVector};
use ddfl_core::numerics::{build_hankel, check_pe, pinv, rk4_hold_step, Matrix, SignalWindow};
use ddfl_core::plant::{build_extended_model, make_vdp_demo, FullState};
use ddfl_core::Complex;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn seeded_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn rel_close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
    (a - b).norm() <= tol * a.norm().max(b.norm()).max(1.0)
}

#[test]
fn pinv_of_full_column_rank_is_left_inverse() {
    let x = seeded_matrix(5, 3, 99);
    let p = pinv(&x);
    assert!((&p * &x - Matrix::identity(3, 3)).norm() < 1e-10);
    // normal-equation route as an independent oracle
    let normal = (x.transpose() * &x).try_inverse().unwrap() * x.transpose();
    assert!((p - normal).norm() < 1e-10);
}

#[test]
fn rk4_global_order() {
    let lambda = -1.3;
    let x0 = 1.0;
    let horizon = 2.0;
    let counts = [4usize, 8, 16, 32];
    let errs: Vec<f64> = counts
        .iter()
        .map(|&n| {
            let x = rk4_hold_step(
                |x, _, _, out| out[0] = lambda * x[0],
                &[x0],
                0.0,
                0.0,
                horizon,
                n,
            )
            .unwrap();
            (x[0] - (lambda * horizon).exp() * x0).abs()
        })
        .collect();
    let h: Vec<f64> = counts.iter().map(|&n| horizon / n as f64).collect();
    let slope = ddfl_core::loglog_slope(&h, &errs).unwrap();
    assert!(slope >= 3.8, "observed order {slope}");
}

#[test]
fn exact_cancellation_matches_linear_chain() {
    let plant = make_vdp_demo(false, 0.0);
    let k = GainVector::new(vec![-20.0, -10.0]).unwrap();
    let mut errs = Vec::new();
    for t in [0.04, 0.02, 0.01] {
        let s = FullState::new(vec![1.2, -0.4], vec![0.7, -0.3], 0.0);
        let u = control(&s.xi, plant.true_alpha(&s), plant.true_beta(&s), &k).unwrap();
        let next = rk4_hold_step(
            |x, u, _, out| plant.derivative_into(x, u, out),
            &s.packed(),
            u,
            0.0,
            t,
            400,
        )
        .unwrap();
        let model = build_extended_model(2, t).unwrap();
        let kt = Matrix::from_row_slice(1, 2, k.as_slice());
        let lin = (model.chain_a() + model.chain_b() * kt) * Matrix::from_column_slice(2, 1, &s.xi);
        let e = ((next[2] - lin[0]).powi(2) + (next[3] - lin[1]).powi(2)).sqrt();
        errs.push(e);
    }
    // second-order local agreement: halving T shrinks the gap about fourfold
    assert!(
        errs[0] / errs[1] > 3.0 && errs[1] / errs[2] > 3.0,
        "{errs:?}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn moore_penrose_identities(rows in 1usize..=20, cols in 1usize..=20, seed in any::<u64>(), rank_cut in 0usize..=3) {
        let mut x = seeded_matrix(rows, cols, seed);
        // sometimes make it rank deficient by duplicating columns
        for c in 0..rank_cut.min(cols.saturating_sub(1)) {
            let src = x.column(0).into_owned();
            x.set_column(cols - 1 - c, &src);
        }
        let p = pinv(&x);
        prop_assert!(rel_close(&(&x * &p * &x), &x, 1e-8));
        prop_assert!(rel_close(&(&p * &x * &p), &p, 1e-8));
        let xp = &x * &p;
        prop_assert!(rel_close(&xp.transpose(), &xp, 1e-8));
        let px = &p * &x;
        prop_assert!(rel_close(&px.transpose(), &px, 1e-8));
    }

    #[test]
    fn hankel_first_column_is_first_samples(
        values in prop::collection::vec(-100.0f64..100.0, 1..40),
        depth_frac in 0.0f64..1.0,
    ) {
        let depth = 1 + ((values.len() - 1) as f64 * depth_frac) as usize;
        let h = build_hankel(&SignalWindow::scalar(&values, 0).unwrap(), depth).unwrap();
        prop_assert_eq!(h.shape(), (depth, values.len() - depth + 1));
        let first: Vec<f64> = h.column(0).iter().copied().collect();
        prop_assert_eq!(&first[..], &values[..depth]);
    }

    #[test]
    fn pe_is_scale_invariant(seed in any::<u64>(), scale in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3], order in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = 2 * order - 1 + rng.random_range(0..5usize);
        let v: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
        prop_assert_eq!(
            check_pe(&SignalWindow::scalar(&v, 0).unwrap(), order).unwrap(),
            check_pe(&SignalWindow::scalar(&scaled, 0).unwrap(), order).unwrap()
        );
    }

    #[test]
    fn pole_placement_round_trip(
        rho in 1usize..=5,
        reals in prop::collection::vec(-10.0f64..-0.1, 5),
        pair in (-5.0f64..-0.1, 0.1f64..4.0),
        use_pair in any::<bool>(),
    ) {
        let mut poles: Vec<Complex<f64>> = reals[..rho].iter().map(|&r| Complex::new(r, 0.0)).collect();
        if use_pair && rho >= 2 {
            poles[0] = Complex::new(pair.0, pair.1);
            poles[1] = Complex::new(pair.0, -pair.1);
        }
        let k = design_gain(rho, &poles).unwrap();
        // characteristic polynomial of A1 + B1 K must vanish at every requested pole
        let cl = k.closed_loop_matrix();
        for p in &poles {
            let mut m = nalgebra::DMatrix::<Complex<f64>>::from_fn(rho, rho, |i, j| Complex::new(-cl[(i, j)], 0.0));
            for i in 0..rho {
                m[(i, i)] += *p;
            }
            let det = m.determinant();
            let scale: f64 = poles.iter().map(|q| q.norm()).fold(1.0, f64::max).powi(rho as i32);
            prop_assert!(det.norm() < 1e-8 * scale, "det = {det}");
        }
        let mut got = k.closed_loop_poles();
        let mut want = poles.clone();
        let key = |c: &Complex<f64>| (c.re, c.im);
        got.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        want.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        for (g, w) in got.iter().zip(&want) {
            // eigenvalues of repeated roots are ill-conditioned; compare loosely there
            prop_assert!((g - w).norm() < 1e-4, "{g} vs {w}");
        }
    }

    #[test]
    fn control_is_homogeneous(
        xi in prop::array::uniform2(-5.0f64..5.0),
        alpha in -5.0f64..5.0,
        beta in prop_oneof![-3.0f64..-0.5, 0.5f64..3.0],
        c in -10.0f64..10.0,
    ) {
        let k = GainVector::new(vec![-20.0, -10.0]).unwrap();
        let u = control(&xi, alpha, beta, &k).unwrap();
        let us = control(&[c * xi[0], c * xi[1]], c * alpha, beta, &k).unwrap();
        prop_assert!((us - c * u).abs() <= 1e-12 * (1.0 + us.abs()));
    }
}
