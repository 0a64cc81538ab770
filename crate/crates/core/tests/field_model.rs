use loopfield::field::{
    adjoint_dipoles, adjoint_edges, edge_response, forward, forward_dipoles, forward_edges,
    kernel_antiderivative, kernel_kv, scalar_potential, MeasurementSetup, Reading,
};
use loopfield::geometry::{Edge, Grid, OrientedLoop};
use loopfield::measures::{
    edge_measure_from_loop, DipoleAtom, DipoleField, EdgeMeasure, Magnetization,
};
use proptest::prelude::*;

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// `v / r^3 - 3 x (v . x) / r^5`, written out independently of the library.
fn kernel_by_hand(x: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    let vx = v[0] * x[0] + v[1] * x[1] + v[2] * x[2];
    std::array::from_fn(|a| v[a] / r.powi(3) - 3.0 * x[a] * vx / r.powi(5))
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    step(
        f,
        a,
        b,
        fa,
        fm,
        fb,
        (b - a) / 6.0 * (fa + 4.0 * fm + fb),
        tol,
        40,
    )
}

/// Reading of a unit-weight edge by quadrature of the dipole kernel along it:
/// `-(mu0 / 4 pi) / h * int_e K_v(q - y) . tau dy`.
fn edge_reading_by_quadrature(grid: &Grid, e: Edge, q: [f64; 3], v: [f64; 3], mu0: f64) -> f64 {
    let (a, b) = e.endpoints();
    let (pa, pb) = (grid.vertex_position(a), grid.vertex_position(b));
    let tau = [(pb[0] - pa[0]) / grid.h, (pb[1] - pa[1]) / grid.h, 0.0];
    let integrand = |s: f64| {
        let y = [
            pa[0] + s * (pb[0] - pa[0]),
            pa[1] + s * (pb[1] - pa[1]),
            0.0,
        ];
        let k = kernel_by_hand([q[0] - y[0], q[1] - y[1], q[2] - y[2]], v);
        grid.h * (k[0] * tau[0] + k[1] * tau[1])
    };
    -mu0 / FOUR_PI / grid.h * adaptive_simpson(&integrand, 0.0, 1.0, 1e-14)
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|c| c / n)
}

#[test]
fn bottom_edge_reading_matches_quadrature() {
    let g = Grid::unit(1, 1);
    let setup =
        MeasurementSetup::new(vec![[0.0, 0.0, 1.0]], [0.0, 0.0, 1.0], vec![1.0], 1.0).unwrap();
    let closed = edge_response(&g, Edge::h(0, 0), [0.0, 0.0, 1.0], &setup);
    let quad = edge_reading_by_quadrature(&g, Edge::h(0, 0), [0.0, 0.0, 1.0], [0.0, 0.0, 1.0], 1.0);
    assert!((closed - quad).abs() < 1e-12, "{closed} vs {quad}");
    let formula = -(1.0 - 2f64.powf(-1.5)) / FOUR_PI;
    assert!(
        (closed - formula).abs() < 1e-16 && (closed + 0.05144259).abs() < 1e-8,
        "{closed}"
    );
    let m = EdgeMeasure::from_entries(g, [(Edge::h(0, 0), 1.0)]).unwrap();
    assert!((forward_edges(&m, &setup).values[0] - closed).abs() < 1e-16);
}

#[test]
fn kernel_is_gradient_of_antiderivative() {
    let v = unit([0.2, -0.5, 0.8]);
    for x in [[0.3, 0.4, 0.9], [-1.2, 0.1, 0.5], [2.0, -1.5, 0.3]] {
        let k = kernel_kv(x, v).unwrap();
        let by_hand = kernel_by_hand(x, v);
        for a in 0..3 {
            let eps = 1e-5;
            let (mut xp, mut xm) = (x, x);
            xp[a] += eps;
            xm[a] -= eps;
            let fd = (kernel_antiderivative(xp, v).unwrap()
                - kernel_antiderivative(xm, v).unwrap())
                / (2.0 * eps);
            assert!(
                (fd - k[a]).abs() <= 1e-7 * k[a].abs().max(1.0),
                "{fd} vs {}",
                k[a]
            );
            assert!((by_hand[a] - k[a]).abs() <= 1e-14 * k[a].abs().max(1.0));
        }
    }
}

#[test]
fn dipole_reading_is_directional_derivative_of_potential() {
    let v = unit([0.6, 0.0, 0.8]);
    let mu0 = 2.5;
    let d = DipoleField::new(vec![
        DipoleAtom::new([0.1, -0.3], [0.4, -0.2, 1.0]),
        DipoleAtom::new([1.0, 0.5], [0.0, 0.7, -0.3]),
    ])
    .unwrap();
    for q in [[0.0, 0.0, 0.8], [1.5, -0.5, 0.4], [-2.0, 1.0, 1.7]] {
        let setup = MeasurementSetup::new(vec![q], v, vec![1.0], mu0).unwrap();
        let reading = forward_dipoles(&d, &setup).unwrap().values[0];
        let eps = 1e-5;
        let shifted = |s: f64| std::array::from_fn(|a| q[a] + s * v[a]);
        let dir = (scalar_potential(&d, shifted(eps)).unwrap()
            - scalar_potential(&d, shifted(-eps)).unwrap())
            / (2.0 * eps);
        assert!(
            (reading + mu0 * dir).abs() <= 1e-7 * reading.abs().max(1e-3),
            "{reading} vs {}",
            -mu0 * dir
        );
    }
}

#[test]
fn far_field_decays_like_inverse_cube() {
    let g = Grid::unit(2, 2);
    let m = EdgeMeasure::from_entries(g, [(Edge::h(0, 0), 1.0), (Edge::v(2, 1), 0.5)]).unwrap();
    let dip = DipoleField::new(vec![DipoleAtom::new([1.0, 1.0], [0.3, 0.1, 0.5])]).unwrap();
    let mu = Magnetization::new(m, dip);
    let dir = unit([0.3, 0.5, 0.8]);
    let at = |r: f64| {
        let setup =
            MeasurementSetup::new(vec![dir.map(|c| c * r)], [0.0, 0.0, 1.0], vec![1.0], 1.0)
                .unwrap();
        forward(&mu, &setup).unwrap().values[0]
    };
    let ratio = at(2e4) / at(1e4);
    assert!((ratio - 0.125).abs() < 1e-3, "{ratio}");
}

fn grid_strategy() -> impl Strategy<Value = Grid> {
    (
        1usize..5,
        1usize..5,
        0.25f64..2.0,
        -2.0f64..2.0,
        -2.0f64..2.0,
    )
        .prop_map(|(nx, ny, h, ox, oy)| Grid::new(nx, ny, h, [ox, oy]).unwrap())
}

fn setup_strategy(count: usize) -> impl Strategy<Value = MeasurementSetup> {
    (
        prop::collection::vec(
            (-4.0f64..4.0, -4.0f64..4.0, 0.2f64..3.0, 0.1f64..2.0),
            count,
        ),
        (-1.0f64..1.0, -1.0f64..1.0, 0.1f64..1.0),
        0.5f64..5.0,
    )
        .prop_map(|(pts, v, mu0)| {
            let points = pts.iter().map(|p| [p.0, p.1, p.2]).collect();
            let weights = pts.iter().map(|p| p.3).collect();
            MeasurementSetup::new(points, unit([v.0, v.1, v.2]), weights, mu0).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn edge_response_matches_quadrature(g in grid_strategy(), k in 0usize..1000, q in (-3.0f64..3.0, -3.0f64..3.0, 0.3f64..2.0), v in (-1.0f64..1.0, -1.0f64..1.0, 0.2f64..1.0)) {
        let e = g.edge_at(k % g.edge_count());
        let v = unit([v.0, v.1, v.2]);
        let q = [q.0, q.1, q.2];
        let setup = MeasurementSetup::new(vec![q], v, vec![1.0], 1.3).unwrap();
        let closed = edge_response(&g, e, q, &setup);
        let quad = edge_reading_by_quadrature(&g, e, q, v, 1.3);
        prop_assert!((closed - quad).abs() <= 1e-9 * quad.abs().max(1e-3), "{} vs {}", closed, quad);
    }

    #[test]
    fn rectangle_loops_are_silent(g in grid_strategy(), corners in (0usize..5, 0usize..5, 0usize..5, 0usize..5), w in -3.0f64..3.0, setup in setup_strategy(12)) {
        let (i0, i1) = (corners.0.min(corners.1) % (g.nx + 1), corners.0.max(corners.1) % (g.nx + 1));
        let (j0, j1) = (corners.2.min(corners.3) % (g.ny + 1), corners.2.max(corners.3) % (g.ny + 1));
        prop_assume!(i0 < i1 && j0 < j1);
        let lp = edge_measure_from_loop(&g, &OrientedLoop::rectangle(i0, j0, i1, j1).unwrap(), w).unwrap();
        prop_assert_eq!(forward_edges(&lp, &setup).max_abs(), 0.0);
        let edgewise: f64 = setup.points().iter().map(|&q| lp.nonzero().map(|(e, x)| x * edge_response(&g, e, q, &setup)).sum::<f64>().abs()).fold(0.0, f64::max);
        prop_assert!(edgewise <= 1e-12 * lp.max_abs().max(1.0));
    }

    #[test]
    fn forward_is_linear_and_adjoint_consistent(
        g in grid_strategy(),
        setup in setup_strategy(10),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let (wa, wb) = (draw(g.edge_count()), draw(g.edge_count()));
        let (ma, mb) = (draw(3), draw(3));
        let pos = [[g.origin[0] + 0.3, g.origin[1] + 0.2]];
        let psi = Reading::new(draw(setup.len()));
        let a = Magnetization::new(EdgeMeasure::from_weights(g, wa.clone()).unwrap(), DipoleField::new(vec![DipoleAtom::new(pos[0], [ma[0], ma[1], ma[2]])]).unwrap());
        let b = Magnetization::new(EdgeMeasure::from_weights(g, wb).unwrap(), DipoleField::new(vec![DipoleAtom::new(pos[0], [mb[0], mb[1], mb[2]])]).unwrap());
        let sum = Magnetization::new(
            a.edge_part.try_add(&b.edge_part).unwrap(),
            DipoleField::new(vec![DipoleAtom::new(pos[0], [ma[0] + mb[0], ma[1] + mb[1], ma[2] + mb[2]])]).unwrap(),
        );
        let (fa, fb, fs) = (forward(&a, &setup).unwrap(), forward(&b, &setup).unwrap(), forward(&sum, &setup).unwrap());
        let scale = fa.max_abs().max(fb.max_abs()).max(1e-3);
        prop_assert!(fs.sub(&fa.add(&fb)).max_abs() <= 1e-12 * scale);

        let lhs = fa.weighted_dot(&psi, &setup);
        let ae = adjoint_edges(&psi, &setup, &g).unwrap();
        let ad = adjoint_dipoles(&psi, &setup, &pos).unwrap();
        let rhs = wa.iter().zip(ae.weights()).map(|(x, y)| x * y).sum::<f64>() + (0..3).map(|k| ma[k] * ad[0][k]).sum::<f64>();
        let bound: f64 = setup.weights().iter().zip(&psi.values).map(|(w, p)| (w * p).abs()).sum::<f64>() * scale;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * bound.max(1e-12), "{} vs {}", lhs, rhs);
    }
}
