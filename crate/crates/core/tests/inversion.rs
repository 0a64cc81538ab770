use loopfield::field::{design_matrix, forward, MeasurementSetup, Reading};
use loopfield::geometry::{Edge, Grid};
use loopfield::graph::Support;
use loopfield::inversion::{InversionProblem, Solution, SolveOptions};
use loopfield::measures::{DipoleAtom, DipoleField, EdgeMeasure, Magnetization};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Problem {
    setup: MeasurementSetup,
    support: Support,
    f: Reading,
    lambda: f64,
}

/// Random support with up to two candidate dipoles, data from a random
/// magnetization on it plus noise, and a lambda spread over three decades.
fn problem(seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid::new(3, 3, 0.5, [0.0, 0.0]).unwrap();
    let edges: Vec<Edge> = grid.edges().filter(|_| rng.random_bool(0.6)).collect();
    let dipoles: Vec<[f64; 2]> = (0..rng.random_range(0..=2))
        .map(|_| [rng.random_range(0.0..1.5), rng.random_range(0.0..1.5)])
        .collect();
    let support = Support::new(grid, edges, dipoles).unwrap();
    let weights: Vec<f64> = support
        .edges()
        .iter()
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let atoms = support
        .dipoles()
        .iter()
        .map(|&p| {
            DipoleAtom::new(
                p,
                [0.0; 3].map(|_| 0.2 * rng.sample::<f64, _>(StandardNormal)),
            )
        })
        .collect();
    let truth = Magnetization::new(
        support.measure(&weights).unwrap(),
        DipoleField::new(atoms).unwrap(),
    );
    let setup = MeasurementSetup::lattice([-0.5, 2.0], [-0.5, 2.0], [8, 8], 0.3, [0.0, 0.0, 1.0])
        .unwrap()
        .with_mu0(4.0 * std::f64::consts::PI)
        .unwrap();
    let clean = forward(&truth, &setup).unwrap();
    let scale = clean.max_abs().max(1e-3);
    let noise: Vec<f64> = (0..setup.len())
        .map(|_| 0.05 * scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let f = clean.add(&Reading::new(noise));
    let lambda = 10f64.powf(rng.random_range(-3.0..0.0)) * scale;
    Problem {
        setup,
        support,
        f,
        lambda,
    }
}

/// Objective and gradient of the smooth part evaluated with the assembled
/// design matrix, which folds in the square roots of the weights.
struct MatrixRoute {
    a: DMatrix<f64>,
    b: DVector<f64>,
    ne: usize,
    lambda: f64,
}

impl MatrixRoute {
    fn new(p: &Problem) -> Self {
        let a = design_matrix(
            &p.setup,
            p.support.grid(),
            p.support.edges(),
            p.support.dipoles(),
        )
        .unwrap();
        let b = DVector::from_iterator(
            p.setup.len(),
            p.f.values
                .iter()
                .zip(p.setup.weights())
                .map(|(f, w)| f * w.sqrt()),
        );
        MatrixRoute {
            a,
            b,
            ne: p.support.edges().len(),
            lambda: p.lambda,
        }
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let r = &self.b - &self.a * DVector::from_column_slice(x);
        let edges: f64 = x[..self.ne].iter().map(|v| v.abs()).sum();
        let dipoles: f64 = x[self.ne..]
            .chunks(3)
            .map(|m| (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt())
            .sum();
        r.norm_squared() + self.lambda * (edges + dipoles)
    }

    /// Subgradient optimality gap: zero exactly at a minimizer.
    fn stationarity_gap(&self, x: &[f64]) -> f64 {
        let r = &self.b - &self.a * DVector::from_column_slice(x);
        let c = self.a.transpose() * r;
        let half = self.lambda / 2.0;
        let mut gap = 0.0f64;
        for k in 0..self.ne {
            gap = gap.max(if x[k] == 0.0 {
                (c[k].abs() - half).max(0.0)
            } else {
                (c[k] - half * x[k].signum()).abs()
            });
        }
        for k in (self.ne..x.len()).step_by(3) {
            let n = (x[k] * x[k] + x[k + 1] * x[k + 1] + x[k + 2] * x[k + 2]).sqrt();
            let g: Vec<f64> = (0..3)
                .map(|i| c[k + i] - if n == 0.0 { 0.0 } else { half * x[k + i] / n })
                .collect();
            let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            gap = gap.max(if n == 0.0 { (gn - half).max(0.0) } else { gn });
        }
        gap / half
    }
}

fn solve(p: &Problem, lambda: f64, f: &Reading) -> Solution {
    InversionProblem::new(&p.setup, &p.support, f)
        .unwrap()
        .solve(&SolveOptions::with_lambda(lambda))
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn certified_solutions_are_minimizers(seed in any::<u64>()) {
        let p = problem(seed);
        let sol = solve(&p, p.lambda, &p.f);
        prop_assert!(sol.converged, "{:?}", sol.certificate);
        let route = MatrixRoute::new(&p);
        let x = sol.coefficients(&p.support).unwrap();
        prop_assert!(route.stationarity_gap(&x) <= 1e-5, "gap {}", route.stationarity_gap(&x));
        let fx = route.objective(&x);
        prop_assert!((fx - sol.objective).abs() <= 1e-9 * fx.max(1.0));
        prop_assert!(fx <= route.objective(&vec![0.0; x.len()]) + 1e-12);
        // No nearby point does better.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..20 {
            let y: Vec<f64> = x.iter().map(|v| v + 1e-4 * rng.sample::<f64, _>(StandardNormal)).collect();
            prop_assert!(route.objective(&y) >= fx - 1e-9 * fx.max(1.0));
        }
    }

    #[test]
    fn scaling_data_and_lambda_scales_the_solution(seed in any::<u64>(), c in 0.25f64..4.0) {
        let p = problem(seed);
        let base = solve(&p, p.lambda, &p.f);
        let scaled = solve(&p, c * p.lambda, &p.f.scaled(c));
        prop_assert!(base.converged && scaled.converged);
        let tol = 1e-6 * base.objective.max(1e-12);
        prop_assert!((scaled.objective / (c * c) - base.objective).abs() <= tol);
        // The scaled base solution is itself a minimizer of the scaled problem.
        let q = Problem { setup: p.setup.clone(), support: p.support.clone(), f: p.f.scaled(c), lambda: c * p.lambda };
        let cx: Vec<f64> = base.coefficients(&p.support).unwrap().iter().map(|v| c * v).collect();
        prop_assert!(MatrixRoute::new(&q).stationarity_gap(&cx) <= 1e-5);
    }
}

#[test]
fn lambda_above_threshold_gives_zero() {
    let p = problem(11);
    let problem = InversionProblem::new(&p.setup, &p.support, &p.f).unwrap();
    let threshold = problem.zero_threshold();
    let route = MatrixRoute::new(&p);
    let c = route.a.transpose() * &route.b;
    let ne = route.ne;
    let groups = c.as_slice()[ne..]
        .chunks(3)
        .map(|g| (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt());
    let expected = 2.0 * c.rows(0, ne).amax().max(groups.fold(0.0, f64::max));
    assert!((expected - threshold).abs() <= 1e-12 * threshold);
    let above = problem
        .solve(&SolveOptions::with_lambda(1.01 * threshold))
        .unwrap();
    assert!(above.converged);
    assert!(above.weights.values().all(|&w| w == 0.0));
    assert!(above.dipoles.iter().all(|a| a.moment == [0.0; 3]));
    let below = problem
        .solve(&SolveOptions::with_lambda(0.9 * threshold))
        .unwrap();
    assert!(below.tv > 0.0);
}

#[test]
fn single_edge_closed_form() {
    // One edge and one unknown: x = max(0, <a, f> - lambda/2) / |a|^2.
    let grid = Grid::unit(1, 1);
    let support = Support::edges_only(grid, vec![Edge::h(0, 0)]).unwrap();
    let setup =
        MeasurementSetup::lattice([-1.0, 2.0], [-1.0, 2.0], [5, 5], 0.5, [0.0, 0.0, 1.0]).unwrap();
    let truth = EdgeMeasure::from_entries(grid, [(Edge::h(0, 0), 2.0)]).unwrap();
    let f = forward(&Magnetization::from_edges(truth), &setup).unwrap();
    let a = design_matrix(&setup, &grid, support.edges(), &[]).unwrap();
    let norm_sq = a.norm_squared();
    let lambda = 0.3 * norm_sq;
    let sol = InversionProblem::new(&setup, &support, &f)
        .unwrap()
        .solve(&SolveOptions::with_lambda(lambda))
        .unwrap();
    let expected = (2.0 * norm_sq - lambda / 2.0) / norm_sq;
    assert!((sol.weights["h:0:0"] - expected).abs() <= 1e-9);
}
