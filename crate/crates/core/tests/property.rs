//! Property tests of the structural invariants.

use lmcflow::geometry::{eigen_sym, induced_metric, lagrangian_angle};
use lmcflow::grid::{fd_gradient, fd_hessian, make_ball_mask, GridSpec, ScalarField};
use lmcflow::liouville::{quadratic_fit, QuadraticFit};
use proptest::prelude::*;

fn sym3(entries: [f64; 6]) -> [[f64; 3]; 3] {
    let [a, b, c, d, e, f] = entries;
    [[a, b, c], [b, d, e], [c, e, f]]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigen_reconstructs_and_stays_orthonormal(
        entries in prop::array::uniform6(-2.0f64..2.0)
    ) {
        let m = sym3(entries);
        let spec = eigen_sym(&m, 3).unwrap();
        let scale = entries.iter().fold(1e-12f64, |s, v| s.max(v.abs()));
        for i in 0..3 {
            for j in 0..3 {
                let mut rebuilt = 0.0;
                let mut ortho = 0.0;
                for k in 0..3 {
                    rebuilt += spec.eigenvalues()[k]
                        * spec.eigenvector(k)[i]
                        * spec.eigenvector(k)[j];
                    ortho += spec.eigenvector(i)[k] * spec.eigenvector(j)[k];
                }
                prop_assert!((rebuilt - m[i][j]).abs() <= 1e-12 * scale.max(1.0));
                let expect = if i == j { 1.0 } else { 0.0 };
                prop_assert!((ortho - expect).abs() <= 1e-12);
            }
        }
        prop_assert!(spec.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn volume_element_at_least_one(entries in prop::array::uniform6(-3.0f64..3.0)) {
        let spec = eigen_sym(&sym3(entries), 3).unwrap();
        let metric = induced_metric(&spec);
        prop_assert!(metric.b() >= 1.0);
        prop_assert!(metric.volume() >= 1.0);
        // Equality iff all eigenvalues vanish.
        let all_zero = spec.eigenvalues().iter().all(|l| *l == 0.0);
        if !all_zero && spec.eigenvalues().iter().any(|l| l.abs() > 1e-7) {
            prop_assert!(metric.b() > 1.0);
        }
    }

    #[test]
    fn convex_spectra_have_nonnegative_angle(
        diag in prop::array::uniform3(0.0f64..4.0)
    ) {
        let m = [[diag[0], 0.0, 0.0], [0.0, diag[1], 0.0], [0.0, 0.0, diag[2]]];
        let spec = eigen_sym(&m, 3).unwrap();
        prop_assert!(lagrangian_angle(&spec) >= 0.0);
    }

    #[test]
    fn stencils_exact_on_quadratics(
        coeffs in prop::array::uniform6(-2.0f64..2.0),
        linear in prop::array::uniform2(-2.0f64..2.0),
    ) {
        let grid = GridSpec::new(2, 1.0, 9).unwrap();
        let a = [[coeffs[0], coeffs[1]], [coeffs[1], coeffs[2]]];
        let u = ScalarField::from_fn(grid, |x| {
            let mut s = coeffs[3];
            for i in 0..2 {
                s += linear[i] * x[i];
                for j in 0..2 {
                    s += 0.5 * a[i][j] * x[i] * x[j];
                }
            }
            s
        });
        let grad = fd_gradient(&u);
        let hess = fd_hessian(&u);
        for node in 0..grid.node_count() {
            let x = grid.node_coords(node);
            for i in 0..2 {
                let gi: f64 = linear[i] + (0..2).map(|j| a[i][j] * x[j]).sum::<f64>();
                prop_assert!((grad.at(node)[i] - gi).abs() < 1e-11);
                for j in i..2 {
                    prop_assert!((hess.entry(node, i, j) - a[i][j]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn mask_boundary_partition_is_consistent(
        radius in 0.3f64..2.0,
        cx in -0.5f64..0.5,
        cy in -0.5f64..0.5,
    ) {
        let grid = GridSpec::new(2, 1.5, 13).unwrap();
        let mask = make_ball_mask(grid, &[cx, cy], radius).unwrap();
        for &b in mask.boundary() {
            prop_assert!(mask.contains(b));
            prop_assert!(grid.neighbors(b).iter().any(|&q| !mask.contains(q)));
        }
        for p in mask.interior_members() {
            prop_assert!(grid.neighbors(p).iter().all(|&q| mask.contains(q)));
        }
    }

    #[test]
    fn quadratic_fit_is_idempotent(
        coeffs in prop::array::uniform6(-1.0f64..1.0)
    ) {
        let grid = GridSpec::new(2, 1.0, 13).unwrap();
        let mask = make_ball_mask(grid, &[0.0, 0.0], 0.9).unwrap();
        let fit = QuadraticFit {
            a: vec![vec![coeffs[0], coeffs[1]], vec![coeffs[1], coeffs[2]]],
            linear: vec![coeffs[3], coeffs[4]],
            constant: coeffs[5],
            residual_sup: 0.0,
        };
        let field = ScalarField::from_fn(grid, |x| fit.eval(x));
        let refit = quadratic_fit(&field, &mask).unwrap();
        prop_assert!(refit.residual_sup < 1e-11);
    }
}
