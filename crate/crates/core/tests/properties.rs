use funcreg::fpca::ScoreMatrix;
use funcreg::funcdata::{center, CurveSet, Grid};
use funcreg::inference::{fit_covariance, normal_quantile, pointwise_band};
use funcreg::scad::{scad_derivative, scad_value, ScadParams};
use funcreg::solver::{assemble, FitConfig, Problem};
use funcreg::tuning::gcv_score;
use funcreg::{Design, ResponseVector};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid_values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-10.0..10.0_f64, len)
}

fn smooth_curves(n: usize, g: usize, seed: u64) -> CurveSet {
    let grid = Grid::new(g).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let c: Vec<f64> = (0..6).map(|k| rng.random_range(-1.0..1.0) / (k + 1) as f64).collect();
            grid.sample(|t| {
                c.iter()
                    .enumerate()
                    .map(|(k, a)| a * (std::f64::consts::PI * k as f64 * t).cos())
                    .sum()
            })
        })
        .collect();
    CurveSet::from_rows(grid, &rows, "x").unwrap()
}

fn toy_data(seed: u64) -> (Vec<CurveSet>, ResponseVector) {
    let curves: Vec<CurveSet> = (0..3)
        .map(|j| smooth_curves(40, 30, seed * 7 + j).with_label(format!("x{j}")))
        .collect();
    let grid = curves[0].grid().clone();
    let beta = grid.sample(|t| 2.0 * t - 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<f64> = (0..40)
        .map(|i| grid.inner_product(&curves[0].row(i), &beta).unwrap() + 0.05 * rng.random_range(-1.0..1.0))
        .collect();
    (curves, ResponseVector::new(y).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn integration_is_linear(f in grid_values(17), g in grid_values(17), a in -5.0..5.0_f64) {
        let grid = Grid::new(17).unwrap();
        let combo: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + y).collect();
        let lhs = grid.integrate(&combo).unwrap();
        let rhs = a * grid.integrate(&f).unwrap() + grid.integrate(&g).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn inner_product_is_symmetric_and_positive(f in grid_values(23), g in grid_values(23)) {
        let grid = Grid::new(23).unwrap();
        let fg = grid.inner_product(&f, &g).unwrap();
        prop_assert_eq!(fg, grid.inner_product(&g, &f).unwrap());
        prop_assert!(grid.inner_product(&f, &f).unwrap() >= 0.0);
    }

    #[test]
    fn centering_is_idempotent(seed in 0u64..1000) {
        let curves = smooth_curves(9, 12, seed);
        let (once, _) = center(&curves).unwrap();
        let (twice, mean) = center(&once).unwrap();
        prop_assert!(mean.iter().all(|m| m.abs() < 1e-14));
        prop_assert!((once.values() - twice.values()).amax() < 1e-14);
    }

    #[test]
    fn scad_is_lipschitz_and_monotone(x in 0.0..20.0_f64, y in 0.0..20.0_f64, lambda in 0.0..5.0_f64) {
        let p = ScadParams::with_lambda(lambda).unwrap();
        let (px, py) = (scad_value(x, &p).unwrap(), scad_value(y, &p).unwrap());
        prop_assert!((px - py).abs() <= lambda * (x - y).abs() + 1e-12);
        if x <= y {
            prop_assert!(px <= py + 1e-15);
        }
        let d = scad_derivative(x, &p).unwrap();
        prop_assert!((0.0..=lambda).contains(&d));
    }

    #[test]
    fn scad_value_integrates_the_derivative(theta in 0.0..15.0_f64, lambda in 0.01..3.0_f64) {
        let p = ScadParams::with_lambda(lambda).unwrap();
        // Simpson per piece; the derivative is smooth between breakpoints
        let mut knots = vec![0.0, theta];
        for b in [lambda, p.a() * lambda] {
            if b < theta {
                knots.push(b);
            }
        }
        knots.sort_by(f64::total_cmp);
        let mut integral = 0.0;
        for w in knots.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let mid = 0.5 * (lo + hi);
            let f = |t: f64| scad_derivative(t, &p).unwrap();
            integral += (hi - lo) / 6.0 * (f(lo) + 4.0 * f(mid) + f(hi));
        }
        prop_assert!((integral - scad_value(theta, &p).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn ridge_step_matches_dense_inverse(seed in 0u64..500, w in 0.0..2.0_f64) {
        // one LQA step with constant weights is a ridge solve
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(30, |_, _| rng.random_range(-1.0..1.0));
        let lambda = 0.5;
        let config = FitConfig::new(2, lambda).unwrap();
        // equal group norms give one shared weight p'(‖b‖)/‖b‖
        let norm = if w > 0.0 { lambda / w } else { 10.0 };
        let b = DVector::from_vec(vec![norm, 0.0, 0.0, norm]);
        let step = funcreg::solver::lqa_step(&z, &y, &b, 2, &config).unwrap();
        let weight = scad_derivative(norm, &config.scad).unwrap() / norm;
        let a = z.transpose() * &z + DMatrix::identity(4, 4) * (30.0 * weight);
        let oracle = a.try_inverse().unwrap() * z.transpose() * &y;
        prop_assert!((step.b - oracle).amax() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn eigenfunction_sign_flips_leave_the_fit_unchanged(seed in 0u64..200, flip in proptest::collection::vec(any::<bool>(), 3)) {
        let (curves, y) = toy_data(seed);
        let design = Design::from_curves(&curves, 3).unwrap();
        let mut flipped = design.clone();
        let mut z = design.scores.matrix().clone();
        for (j, f) in flip.iter().enumerate() {
            if *f {
                for phi in flipped.predictors[j].eigen.eigenfunctions.iter_mut() {
                    phi.iter_mut().for_each(|v| *v = -*v);
                }
                z.columns_mut(j * 3, 3).neg_mut();
            }
        }
        flipped.scores = ScoreMatrix::from_matrix(z, 3).unwrap();

        let config = FitConfig::new(3, 0.02).unwrap();
        let run = |d: &Design| {
            let problem = Problem::new(&d.scores, &y).unwrap();
            let coef = problem.solve(&config).unwrap();
            let fit = assemble(d, &y, &coef, &config);
            let gcv = gcv_score(&problem, &coef).unwrap();
            (fit, gcv, problem, coef)
        };
        let (a, ga, pa, ca) = run(&design);
        let (b, gb, pb, cb) = run(&flipped);
        prop_assert_eq!(&a.active_set, &b.active_set);
        prop_assert!((ga - gb).abs() < 1e-10 * ga.max(1e-12));
        for (x, y) in a.beta_curves.iter().flatten().zip(b.beta_curves.iter().flatten()) {
            prop_assert!((x - y).abs() < 1e-8);
        }
        let (obj_a, obj_b) = (ca.objective_trace.last().unwrap(), cb.objective_trace.last().unwrap());
        prop_assert!((obj_a - obj_b).abs() < 1e-10 * obj_a.abs().max(1.0));
        if !a.active_set.is_empty() {
            let (cov_a, cov_b) = (fit_covariance(&pa, &ca).unwrap(), fit_covariance(&pb, &cb).unwrap());
            let j = a.active_set[0];
            let (ba, bb) = (pointwise_band(&a, &cov_a, j, 0.95).unwrap(), pointwise_band(&b, &cov_b, j, 0.95).unwrap());
            for (x, y) in ba.half_width.iter().zip(&bb.half_width) {
                prop_assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn predictor_order_does_not_matter(seed in 0u64..200) {
        let (curves, y) = toy_data(seed);
        let order = [2usize, 0, 1];
        let permuted: Vec<CurveSet> = order.iter().map(|&j| curves[j].clone()).collect();
        let config = FitConfig::new(3, 0.02).unwrap();
        let a = funcreg::solver::fit(&Design::from_curves(&curves, 3).unwrap(), &y, &config).unwrap();
        let b = funcreg::solver::fit(&Design::from_curves(&permuted, 3).unwrap(), &y, &config).unwrap();
        for (slot, &j) in order.iter().enumerate() {
            prop_assert_eq!(a.active_set.contains(&j), b.active_set.contains(&slot));
            for (x, y) in a.beta_curves[j].iter().zip(&b.beta_curves[slot]) {
                prop_assert!((x - y).abs() < 1e-8);
            }
        }
        prop_assert!((a.intercept - b.intercept).abs() < 1e-8);
    }

    #[test]
    fn response_shift_only_moves_the_intercept(seed in 0u64..200, shift in -50.0..50.0_f64) {
        let (curves, y) = toy_data(seed);
        let shifted = ResponseVector::new(y.as_slice().iter().map(|v| v + shift).collect()).unwrap();
        let design = Design::from_curves(&curves, 3).unwrap();
        let config = FitConfig::new(3, 0.02).unwrap();
        let pa = Problem::new(&design.scores, &y).unwrap();
        let pb = Problem::new(&design.scores, &shifted).unwrap();
        let (ca, cb) = (pa.solve(&config).unwrap(), pb.solve(&config).unwrap());
        let (ga, gb) = (gcv_score(&pa, &ca).unwrap(), gcv_score(&pb, &cb).unwrap());
        prop_assert!((ga - gb).abs() < 1e-8 * ga.max(1e-12));
        let a = assemble(&design, &y, &ca, &config);
        let b = assemble(&design, &shifted, &cb, &config);
        prop_assert!((b.intercept - a.intercept - shift).abs() < 1e-8);
    }

    #[test]
    fn band_width_scales_with_the_quantile(seed in 0u64..200, level in 0.5..0.99_f64) {
        let (curves, y) = toy_data(seed);
        let design = Design::from_curves(&curves, 3).unwrap();
        let config = FitConfig::new(3, 0.0).unwrap();
        let problem = Problem::new(&design.scores, &y).unwrap();
        let coef = problem.solve(&config).unwrap();
        let fit = assemble(&design, &y, &coef, &config);
        let cov = fit_covariance(&problem, &coef).unwrap();
        let base = pointwise_band(&fit, &cov, 0, 0.95).unwrap();
        let other = pointwise_band(&fit, &cov, 0, level).unwrap();
        let ratio = normal_quantile(0.5 + level / 2.0).unwrap() / normal_quantile(0.975).unwrap();
        for (x, y) in base.half_width.iter().zip(&other.half_width) {
            prop_assert!((y - ratio * x).abs() <= 1e-12 * x.max(1.0));
        }
    }
}
