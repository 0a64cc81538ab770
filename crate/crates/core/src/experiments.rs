//! End-to-end scenarios with fixed seeds: instance generators plus runners
//! that check each scenario's expected outcome and collect artifacts.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::field::{forward, forward_edges, MeasurementSetup, Reading};
use crate::geometry::{Edge, Grid, Segment, SegmentFamily};
use crate::graph::{silent_basis, treelike_check, Support};
use crate::inversion::{
    certify_tv_minimal, ep1_oracle, kernel_dimension_check, lambda_path, support_coefficients,
    tv_distance, CertifyMode, InversionProblem, MinimizerShape, PathPoint, SolveOptions, Verdict,
};
use crate::loops::{
    coarea_checksum, coarea_profile, decompose, reconstruct, rotated_gradient, CellFunction,
};
use crate::measures::{DipoleAtom, DipoleField, EdgeMeasure, Magnetization, TotalVariation};

pub const EXPERIMENTS: [&str; 5] = [
    "unit_square",
    "separated_segments",
    "tree_like",
    "coarea_fuzz",
    "uniqueness_multistart",
];

/// Decreasing regularization schedule shared by the path scenarios.
pub const LAMBDA_SCHEDULE: [f64; 5] = [1.0, 0.3, 0.1, 0.03, 0.01];

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;
const E3: [f64; 3] = [0.0, 0.0, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    pub passed: bool,
    pub criteria: Vec<CriterionResult>,
    pub artifacts: BTreeMap<String, Value>,
}

impl ExperimentReport {
    fn new(name: &str, seed: u64) -> Self {
        ExperimentReport {
            name: name.into(),
            seed,
            passed: true,
            criteria: Vec::new(),
            artifacts: BTreeMap::new(),
        }
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.passed &= passed;
        self.criteria.push(CriterionResult {
            name: name.into(),
            passed,
            detail,
        });
    }

    fn artifact<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        self.artifacts
            .insert(key.into(), serde_json::to_value(value)?);
        Ok(())
    }

    /// Names of the failed criteria.
    pub fn failures(&self) -> Vec<&str> {
        self.criteria
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }
}

pub fn run(name: &str, seed: u64) -> Result<ExperimentReport> {
    match name {
        "unit_square" => unit_square(seed),
        "separated_segments" => separated_segments(seed),
        "tree_like" => tree_like(seed, 20),
        "coarea_fuzz" => coarea_fuzz(seed, 200),
        "uniqueness_multistart" => uniqueness_multistart(seed, 5),
        other => Err(Error::Invalid(format!(
            "unknown experiment {other:?}; expected one of {EXPERIMENTS:?}"
        ))),
    }
}

/// Integer values in `[-range, range]` on every cell, a quarter of them zero.
pub fn random_cell_function(grid: Grid, range: i32, rng: &mut impl Rng) -> CellFunction {
    let values = (0..grid.cell_count())
        .map(|_| {
            if rng.random_bool(0.25) {
                0.0
            } else {
                rng.random_range(-range..=range) as f64
            }
        })
        .collect();
    CellFunction::new(grid, values).expect("finite values")
}

/// The unit square example: the support is the square's four edges,
/// `mu0` runs along the bottom and back along the top, `mu1` down the right
/// and up the left, and `mu0 - mu1` is the counterclockwise square loop.
pub struct SquareScenario {
    pub grid: Grid,
    pub support: Support,
    pub setup: MeasurementSetup,
    pub mu0: EdgeMeasure,
    pub mu1: EdgeMeasure,
}

pub fn square_scenario() -> Result<SquareScenario> {
    let grid = Grid::unit(1, 1);
    let mu0 = EdgeMeasure::from_entries(grid, [(Edge::h(0, 0), 1.0), (Edge::h(0, 1), -1.0)])?;
    let mu1 = EdgeMeasure::from_entries(grid, [(Edge::v(1, 0), -1.0), (Edge::v(0, 0), 1.0)])?;
    let setup = MeasurementSetup::lattice([-1.0, 2.0], [-1.0, 2.0], [12, 12], 0.25, E3)?
        .with_mu0(FOUR_PI)?;
    Ok(SquareScenario {
        grid,
        support: Support::full(grid),
        setup,
        mu0,
        mu1,
    })
}

/// Quarter turn about the square's center `(1/2, 1/2)`.
pub fn quarter_turn(p: [f64; 3]) -> [f64; 3] {
    [1.0 - p[1], p[0], p[2]]
}

/// Index of the point `rot(q)` for every point `q`, if the setup is closed
/// under the quarter turn.
pub fn quarter_turn_permutation(setup: &MeasurementSetup) -> Option<Vec<usize>> {
    let pts = setup.points();
    pts.iter()
        .map(|&q| {
            let r = quarter_turn(q);
            pts.iter()
                .position(|p| (0..3).all(|a| (p[a] - r[a]).abs() <= 1e-9))
        })
        .collect()
}

/// Random noise with `e(Rq) = -e(q)`, the symmetry of the square data for a
/// vertical sensor direction.
pub fn antisymmetric_noise(
    setup: &MeasurementSetup,
    scale: f64,
    rng: &mut impl Rng,
) -> Result<Reading> {
    let perm = quarter_turn_permutation(setup)
        .ok_or_else(|| Error::InvalidSetup("points are not quarter-turn symmetric".into()))?;
    let mut values = vec![f64::NAN; setup.len()];
    for start in 0..setup.len() {
        if !values[start].is_nan() {
            continue;
        }
        let a: f64 = scale * rng.sample::<f64, _>(StandardNormal);
        let (mut k, mut sign) = (start, 1.0);
        while values[k].is_nan() {
            values[k] = sign * a;
            sign = -sign;
            k = perm[k];
        }
        if values[k] != sign * a {
            // An orbit of odd length forces zero noise on it.
            let mut k = start;
            loop {
                values[k] = 0.0;
                k = perm[k];
                if k == start {
                    break;
                }
            }
        }
    }
    Ok(Reading::new(values))
}

/// `T(w) = -R(w)` on the square's edge weights: bottom -> right -> top ->
/// left -> bottom along the quarter turn, with the sign flip.
pub fn square_symmetry(w: &EdgeMeasure) -> Result<EdgeMeasure> {
    let g = *w.grid();
    // Rotating the canonical direction of each edge: bottom (+x) maps to the
    // right edge (+y), right (+y) to the top traversed -x, top (+x) to the left
    // edge traversed -y, left (+y) to the bottom edge (+x).
    let rot = [
        (Edge::h(0, 0), Edge::v(1, 0), 1.0),
        (Edge::v(1, 0), Edge::h(0, 1), -1.0),
        (Edge::h(0, 1), Edge::v(0, 0), 1.0),
        (Edge::v(0, 0), Edge::h(0, 0), -1.0),
    ];
    EdgeMeasure::from_entries(g, rot.iter().map(|&(from, to, s)| (to, -s * w.get(from))))
}

pub fn unit_square(seed: u64) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new("unit_square", seed);
    let sc = square_scenario()?;
    let (tv0, tv1) = (sc.mu0.tv_norm(), sc.mu1.tv_norm());
    report.check(
        "tv_equal_two",
        tv0 == 2.0 && tv1 == 2.0,
        format!("TV(mu0) = {tv0}, TV(mu1) = {tv1}"),
    );
    let (f0, f1) = (
        forward_edges(&sc.mu0, &sc.setup),
        forward_edges(&sc.mu1, &sc.setup),
    );
    report.check(
        "same_field",
        f0 == f1,
        format!("max |A mu0 - A mu1| = {:e}", f0.sub(&f1).max_abs()),
    );
    let oracle = ep1_oracle(&sc.mu0, &sc.support, 41)?;
    let segment = matches!(oracle.shape, MinimizerShape::Segment { .. });
    report.check(
        "oracle_segment",
        oracle.min_tv == 2.0 && segment,
        format!("min TV = {}, shape = {:?}", oracle.min_tv, oracle.shape),
    );
    report.artifact("oracle", &oracle)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = antisymmetric_noise(&sc.setup, 1e-2, &mut rng)?;
    let path = lambda_path(
        &f0,
        &sc.setup,
        &sc.support,
        &LAMBDA_SCHEDULE,
        Some(&noise),
        None,
        &SolveOptions::default(),
    )?;
    let last = path.last().expect("nonempty schedule");
    let w = last.solution.magnetization(&sc.support)?.edge_part;
    let dev = sc
        .support
        .edges()
        .iter()
        .map(|&e| (w.get(e).abs() - 0.5).abs())
        .fold(0.0, f64::max);
    report.check(
        "path_limit_half",
        dev <= 1e-3,
        format!("max ||w_e| - 1/2| = {dev:e} at lambda = {}", last.lambda),
    );
    let asym = w.axpy(-1.0, &square_symmetry(&w)?)?.max_abs();
    report.check(
        "path_symmetric",
        asym <= 1e-6,
        format!("max |w - T w| = {asym:e}"),
    );
    report.check(
        "path_certified",
        path.iter().all(|p| p.solution.converged),
        format!(
            "{} of {} path points certified",
            path.iter().filter(|p| p.solution.converged).count(),
            path.len()
        ),
    );
    report.artifact("path", &path_summary(&path))?;
    Ok(report)
}

fn path_summary(path: &[PathPoint]) -> Value {
    Value::Array(
        path.iter()
            .map(|p| {
                json!({
                    "lambda": p.lambda,
                    "objective": p.solution.objective,
                    "tv": p.solution.tv,
                    "residual_norm": p.residual_norm,
                    "converged": p.solution.converged,
                    "distance": p.distance,
                    "weights": p.solution.weights,
                })
            })
            .collect(),
    )
}

/// Two collinear unit segments at gap 1.5 on a grid of step 1/2, with three
/// random dipoles, measured on a lattice above the sample.
pub struct SegmentsScenario {
    pub grid: Grid,
    pub support: Support,
    pub setup: MeasurementSetup,
    pub truth: Magnetization,
    pub segments: SegmentFamily,
}

pub fn segments_scenario(seed: u64) -> Result<SegmentsScenario> {
    let grid = Grid::new(9, 2, 0.5, [-0.5, -0.5])?;
    // Horizontal edges on y = 0 are row j = 1; x = -0.5 + 0.5 i.
    let edges = Magnetization::from_edges(EdgeMeasure::from_entries(
        grid,
        [
            (Edge::h(1, 1), 0.5),
            (Edge::h(2, 1), 0.5),
            (Edge::h(6, 1), -0.4),
            (Edge::h(7, 1), -0.4),
        ],
    )?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atoms: Vec<DipoleAtom> = (0..3)
        .map(|_| {
            let p = [rng.random_range(-0.5..4.0), rng.random_range(-0.5..0.5)];
            let m: [f64; 3] = std::array::from_fn(|_| 0.3 * rng.sample::<f64, _>(StandardNormal));
            DipoleAtom::new(p, m)
        })
        .collect();
    let positions = atoms.iter().map(DipoleAtom::position).collect();
    let truth = Magnetization::new(edges.edge_part, DipoleField::new(atoms)?);
    let support = Support::full(grid).with_dipoles(positions)?;
    let setup = MeasurementSetup::lattice([-1.5, 5.0], [-1.5, 1.5], [26, 12], 0.25, E3)?
        .with_mu0(FOUR_PI)?;
    let segments = SegmentFamily {
        segments: vec![
            Segment::new([0.0, 0.0], [1.0, 0.0]),
            Segment::new([2.5, 0.0], [3.5, 0.0]),
        ],
    };
    Ok(SegmentsScenario {
        grid,
        support,
        setup,
        truth,
        segments,
    })
}

pub fn separated_segments(seed: u64) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new("separated_segments", seed);
    let sc = segments_scenario(seed)?;
    let sep = crate::geometry::segment_separation_check(&sc.segments, true)?;
    report.check(
        "segments_separated",
        sep.passed,
        format!("{:?}", sep.per_segment),
    );
    let cert = certify_tv_minimal(&sc.truth, &sc.support, CertifyMode::Exhaustive)?;
    report.check(
        "strict_certificate",
        cert.verdict == Verdict::Strict,
        format!(
            "{:?} over {} cycles, min margin {:?}",
            cert.verdict, cert.cycles_checked, cert.min_margin
        ),
    );
    let f = forward(&sc.truth, &sc.setup)?;
    let path = lambda_path(
        &f,
        &sc.setup,
        &sc.support,
        &LAMBDA_SCHEDULE,
        None,
        Some(&sc.truth),
        &SolveOptions::default(),
    )?;
    let last = path.last().expect("nonempty schedule");
    let dist = last.distance.expect("reference supplied");
    report.check(
        "path_recovery",
        dist <= 1e-3,
        format!("TV distance {dist:e} at lambda = {}", last.lambda),
    );
    report.check(
        "path_certified",
        path.iter().all(|p| p.solution.converged),
        format!(
            "{} of {} path points certified",
            path.iter().filter(|p| p.solution.converged).count(),
            path.len()
        ),
    );
    report.artifact("truth", &sc.truth)?;
    report.artifact("path", &path_summary(&path))?;
    Ok(report)
}

/// Random spanning tree of the full grid graph (randomized Kruskal).
pub fn random_spanning_tree(grid: Grid, rng: &mut impl Rng) -> Result<Support> {
    let mut edges: Vec<Edge> = grid.edges().collect();
    edges.shuffle(rng);
    let mut parent: Vec<usize> = (0..grid.vertex_count()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut tree = Vec::new();
    for e in edges {
        let (a, b) = e.endpoints();
        let (ra, rb) = (
            find(&mut parent, grid.vertex_index(a)),
            find(&mut parent, grid.vertex_index(b)),
        );
        if ra != rb {
            parent[ra] = rb;
            tree.push(e);
        }
    }
    Support::edges_only(grid, tree)
}

pub struct TreeScenario {
    pub support: Support,
    pub setup: MeasurementSetup,
    pub truth: EdgeMeasure,
}

/// Spanning tree of a 4 x 4 cell grid with weights of magnitude in
/// `[0.5, 1.5]` on every tree edge.
pub fn tree_scenario(rng: &mut impl Rng) -> Result<TreeScenario> {
    let grid = Grid::new(4, 4, 0.5, [0.0, 0.0])?;
    let support = random_spanning_tree(grid, rng)?;
    let weights: Vec<f64> = support
        .edges()
        .iter()
        .map(|_| {
            let m = rng.random_range(0.5..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    let truth = support.measure(&weights)?;
    let setup = MeasurementSetup::lattice([-0.5, 2.5], [-0.5, 2.5], [24, 24], 0.15, E3)?
        .with_mu0(FOUR_PI)?;
    Ok(TreeScenario {
        support,
        setup,
        truth,
    })
}

pub const TREE_LAMBDA: f64 = 1e-3;

pub fn tree_like(seed: u64, count: usize) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new("tree_like", seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for k in 0..count {
        let sc = tree_scenario(&mut rng)?;
        let basis = silent_basis(&sc.support).len();
        let kernel = kernel_dimension_check(&sc.setup, &sc.support, 1e-8)?;
        let f = forward_edges(&sc.truth, &sc.setup);
        let problem = InversionProblem::new(&sc.setup, &sc.support, &f)?;
        let sol = problem.solve(&SolveOptions::with_lambda(TREE_LAMBDA))?;
        let x = sol.coefficients(&sc.support)?;
        let truth =
            support_coefficients(&sc.support, &Magnetization::from_edges(sc.truth.clone()))?;
        let dist = tv_distance(&x, &truth, x.len());
        let ok = treelike_check(&sc.support)
            && basis == 0
            && kernel.nullity == 0
            && dist <= 1e-3
            && sol.converged;
        report.check(
            &format!("tree_{k}"),
            ok,
            format!(
                "basis {basis}, nullity {}, TV distance {dist:e}, certified {}",
                kernel.nullity, sol.converged
            ),
        );
        rows.push(
            json!({"edges": sc.support.edges().len(), "nullity": kernel.nullity, "distance": dist}),
        );
    }
    report.artifact("instances", &rows)?;
    Ok(report)
}

pub const FUZZ_GRID: usize = 64;

pub fn coarea_fuzz(seed: u64, count: usize) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new("coarea_fuzz", seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid::unit(FUZZ_GRID, FUZZ_GRID);
    let (mut coarea_ok, mut roundtrip_ok) = (0, 0);
    for _ in 0..count {
        let phi = random_cell_function(grid, 5, &mut rng);
        let nu = rotated_gradient(&phi);
        let tv = nu.tv_norm();
        let check = coarea_checksum(&coarea_profile(&phi));
        if (tv - check).abs() <= 1e-12 * tv.max(1.0) {
            coarea_ok += 1;
        }
        let d = decompose(&nu)?;
        if reconstruct(&d)? == nu {
            roundtrip_ok += 1;
        }
    }
    report.check(
        "coarea_identity",
        coarea_ok == count,
        format!("{coarea_ok}/{count} exact"),
    );
    report.check(
        "round_trip",
        roundtrip_ok == count,
        format!("{roundtrip_ok}/{count} exact"),
    );
    Ok(report)
}

pub struct UniquenessInstance {
    pub support: Support,
    pub setup: MeasurementSetup,
    pub f: Reading,
}

/// Random subgraph of a 5 x 5 cell grid (at most 60 edges) and Gaussian data
/// rescaled so that the zero solution is optimal exactly for `lambda >= 1`.
pub fn uniqueness_instance(rng: &mut impl Rng) -> Result<UniquenessInstance> {
    let grid = Grid::unit(5, 5);
    let edges: Vec<Edge> = grid.edges().filter(|_| rng.random_bool(0.7)).collect();
    let support = Support::edges_only(grid, edges)?;
    let setup = MeasurementSetup::lattice([-1.0, 6.0], [-1.0, 6.0], [14, 14], 0.5, E3)?;
    let raw = Reading::new(
        (0..setup.len())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect(),
    );
    let threshold = InversionProblem::new(&setup, &support, &raw)?.zero_threshold();
    Ok(UniquenessInstance {
        support,
        setup,
        f: raw.scaled(1.0 / threshold),
    })
}

pub const UNIQUENESS_LAMBDAS: [f64; 2] = [0.1, 0.01];
pub const UNIQUENESS_STARTS: usize = 10;

/// Largest pairwise difference in weights between solutions.
pub fn max_pairwise_gap(coeffs: &[Vec<f64>]) -> f64 {
    let mut gap = 0.0f64;
    for a in coeffs {
        for b in coeffs {
            gap = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(gap, f64::max);
        }
    }
    gap
}

pub fn uniqueness_multistart(seed: u64, instances: usize) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new("uniqueness_multistart", seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for k in 0..instances {
        let inst = uniqueness_instance(&mut rng)?;
        let problem = InversionProblem::new(&inst.setup, &inst.support, &inst.f)?;
        for &lambda in &UNIQUENESS_LAMBDAS {
            let opts = SolveOptions {
                lambda,
                restarts: UNIQUENESS_STARTS,
                seed: seed.wrapping_mul(1000) + k as u64,
                ..Default::default()
            };
            let sols = problem.multistart(&opts)?;
            let coeffs = sols
                .iter()
                .map(|s| s.coefficients(&inst.support))
                .collect::<Result<Vec<_>>>()?;
            let gap = max_pairwise_gap(&coeffs);
            let certified = sols.iter().filter(|s| s.converged).count();
            let objectives: Vec<f64> = sols.iter().map(|s| s.objective).collect();
            let spread = objectives.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - objectives.iter().cloned().fold(f64::INFINITY, f64::min);
            // Distinct minimizers must differ by a silent measure.
            let fields = sols
                .iter()
                .map(|s| {
                    Ok(forward_edges(
                        &s.magnetization(&inst.support)?.edge_part,
                        &inst.setup,
                    ))
                })
                .collect::<Result<Vec<Reading>>>()?;
            let field_gap = fields
                .iter()
                .map(|a| {
                    fields
                        .iter()
                        .map(|b| a.sub(b).max_abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            // A cycle inside the support of a minimizer is a flat direction.
            let cyclic = sols
                .iter()
                .map(|s| {
                    s.magnetization(&inst.support)
                        .map(|m| !treelike_check(&Support::of_measure(&m.edge_part)))
                })
                .collect::<Result<Vec<bool>>>()?;
            report.check(
                &format!("instance_{k}_lambda_{lambda}"),
                gap <= 1e-6 && certified == sols.len(),
                format!(
                    "{} edges, max pairwise gap {gap:e}, {certified}/{} certified, objective spread {spread:e}, \
                     max field gap {field_gap:e} (data scale {:e}), minimizer supports with a cycle: {}",
                    inst.support.edges().len(),
                    sols.len(),
                    inst.f.max_abs(),
                    cyclic.iter().filter(|&&c| c).count()
                ),
            );
            rows.push(json!({
                "instance": k,
                "lambda": lambda,
                "gap": gap,
                "certified": certified,
                "objective_spread": spread,
                "field_gap": field_gap,
                "cyclic_supports": cyclic.iter().filter(|&&c| c).count(),
            }));
        }
    }
    report.artifact("instances", &rows)?;
    Ok(report)
}
