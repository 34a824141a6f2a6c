use std::f64::consts::PI;
use std::sync::Arc;

use homog::cellsolve::{solve_lambda, CellConfig};
use homog::harness::{c_phi, fit_rates};
use homog::linalg::CMat;
use homog::resolvent::{Coefficients, OscillatoryOperator};
use homog::smoothing::steklov_symbol;
use homog::spectral::Spectral;
use homog::{Complex64 as C64, Lattice, PeriodicField, SymbolB, TorusGrid};
use proptest::prelude::*;

fn grid_1d(points: usize) -> TorusGrid {
    TorusGrid::cell(Arc::new(Lattice::cubic(1)), vec![points]).unwrap()
}

fn complex_vec(len: usize) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), len)
        .prop_map(|v| v.into_iter().map(|(a, b)| C64::new(a, b)).collect())
}

fn dot(u: &[C64], v: &[C64]) -> C64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

/// Piecewise-constant positive profile with one value per cell node.
fn profile(values: &[f64]) -> PeriodicField {
    let grid = grid_1d(values.len());
    let n = values.len();
    PeriodicField::scalar_fn(grid, |t| values[((t[0] * n as f64).round() as usize) % n])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn spectral_round_trip(data in complex_vec(8 * 6)) {
        let grid = TorusGrid::cell(Arc::new(Lattice::cubic(2)), vec![8, 6]).unwrap();
        let sp = Spectral::new(&grid);
        let mut coeffs = vec![C64::default(); sp.nmodes()];
        let mut back = vec![C64::default(); sp.nphys()];
        sp.forward(&data, &mut coeffs);
        sp.inverse(&coeffs, &mut back);
        for (a, b) in data.iter().zip(&back) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn cell_band_keeps_n_minus_one_harmonics(
        half in 1usize..6,
        k in 1usize..4,
        periods in 1usize..4,
    ) {
        let n = 2 * half;
        let cell = grid_1d(n);
        let torus = TorusGrid::scaled(&cell, k, &[periods]).unwrap();
        let kept = torus.cell_band(cell.points()).iter().filter(|b| **b).count();
        prop_assert_eq!(kept, (n - 1) * k * periods);
    }

    #[test]
    fn one_dimensional_g0_is_the_harmonic_mean(
        pairs in prop::collection::vec(0.2..5.0f64, 1..6),
    ) {
        // Equal node pairs leave 1/g without a Nyquist component, which the
        // cell band drops.
        let values: Vec<f64> = pairs.iter().flat_map(|&v| [v, v]).collect();
        let g = profile(&values);
        let s = solve_lambda(&g, &SymbolB::gradient(1), &CellConfig::default()).unwrap();
        let harmonic = g.harmonic_mean().unwrap()[(0, 0)];
        prop_assert!((s.g0[(0, 0)] - harmonic).norm() < 1e-8 * harmonic.norm());
    }

    #[test]
    fn one_dimensional_g0_lies_between_the_means(
        values in prop::collection::vec(0.2..5.0f64, 1..5),
    ) {
        let values: Vec<f64> = values.iter().flat_map(|&v| [v, 1.0 / v]).collect();
        let g = profile(&values);
        let s = solve_lambda(&g, &SymbolB::gradient(1), &CellConfig::default()).unwrap();
        let g0 = s.g0[(0, 0)];
        prop_assert!(g0.im.abs() < 1e-10);
        prop_assert!(g.harmonic_mean().unwrap()[(0, 0)].re <= g0.re + 1e-10);
        prop_assert!(g0.re <= g.mean()[(0, 0)].re + 1e-10);
    }

    #[test]
    fn power_laws_are_recovered(
        slope in -3.0..3.0f64,
        scale in 0.01..100.0f64,
        xs in prop::collection::vec(0.01..1.0f64, 3..8),
    ) {
        let mut xs = xs;
        xs.sort_by(f64::total_cmp);
        xs.dedup_by(|a, b| (*a / *b).ln().abs() < 1e-3);
        prop_assume!(xs.len() >= 3);
        let pts: Vec<(f64, f64)> = xs.iter().map(|&x| (x, scale * x.powf(slope))).collect();
        let fit = fit_rates(&pts).unwrap();
        prop_assert!((fit.slope - slope).abs() < 1e-8);
        prop_assert!((fit.intercept - scale.ln()).abs() < 1e-6);
        prop_assert!(fit.residual < 1e-8);
    }

    #[test]
    fn c_phi_is_at_least_one_and_even_about_pi(phi in 1e-3..(PI - 1e-3)) {
        let a = c_phi(phi).unwrap();
        let b = c_phi(2.0 * PI - phi).unwrap();
        prop_assert!(a >= 1.0);
        prop_assert!((a - b).abs() < 1e-9 * a);
    }

    #[test]
    fn steklov_symbol_is_a_contraction(
        eps in 0.01..1.0f64,
        xi in prop::collection::vec(-200.0..200.0f64, 2),
        shear in -0.5..0.5f64,
    ) {
        let lattice = Lattice::new(vec![vec![1.0, 0.0], vec![shear, 1.0]]).unwrap();
        let s = steklov_symbol(&lattice, eps, &xi);
        prop_assert!(s.abs() <= 1.0 + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn operator_is_hermitian_for_real_zeta(
        contrast in 0.5..4.0f64,
        drift in -0.5..0.5f64,
        zeta in -3.0..3.0f64,
        dealias in any::<bool>(),
        u in complex_vec(48),
        v in complex_vec(48),
    ) {
        let cell = grid_1d(8);
        let scalar = |f: &dyn Fn(f64) -> f64| PeriodicField::scalar_fn(cell.clone(), |t| f(t[0]));
        let coeffs = Coefficients {
            b: SymbolB::gradient(1),
            g: scalar(&|x| if x < 0.5 { 1.0 } else { contrast }),
            a: vec![PeriodicField::from_fn(cell.clone(), 1, 1, |t| {
                CMat::from_element(1, 1, C64::new(drift * (2.0 * PI * t[0]).cos(), drift))
            })],
            q: scalar(&|x| 0.3 * (2.0 * PI * x).sin()),
            q0: scalar(&|x| 1.0 + 0.2 * (2.0 * PI * x).cos()),
            singular: None,
        };
        let torus = TorusGrid::scaled(&cell, 2, &[3]).unwrap();
        let op = OscillatoryOperator::new(&coeffs, 2, &torus, 1.0, dealias).unwrap();
        let z = C64::new(zeta, 0.0);
        let (mut au, mut av) = (vec![C64::default(); 48], vec![C64::default(); 48]);
        op.apply_coeffs(z, &u, &mut au);
        op.apply_coeffs(z, &v, &mut av);
        let lhs = dot(&au, &v);
        let rhs = dot(&u, &av);
        prop_assert!((lhs - rhs).norm() < 1e-9 * (1.0 + lhs.norm()), "{lhs} vs {rhs}");
    }
}
