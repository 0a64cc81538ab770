//! Silent-space analysis of a support and total-variation minimality of a
//! magnetization within its class of magnetizations with the same field.
//!
//! Adding `t * nu` for a silent edge measure `nu` changes the total variation
//! at first order by `t * D(nu)` with
//! `D(nu) = sum_{e in Z} s_e nu_e + sum_{e not in Z} |nu_e|`, where `Z` is the
//! carrier of the edge part and `s` its sign. `D` is additive over a
//! sign-conformal decomposition of `nu` into simple cycles, so minimality
//! (`D >= 0` on every silent `nu`) and strict minimality (`D > 0`) can be
//! decided cycle by cycle.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{forward_edges, operator_matrix, MeasurementSetup};
use crate::geometry::{OrientedLoop, Vertex};
use crate::graph::{cycle_measure, silent_basis, Support, SupportGraph};
use crate::measures::{variational_pairing, EdgeMeasure, Magnetization, TotalVariation};

/// Cycle enumeration limit in exhaustive mode.
pub const CYCLE_GUARD: usize = 1_000_000;

/// Normalized pairings above `-PAIRING_TOL` do not count as witnesses.
pub const PAIRING_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub rows: usize,
    pub cols: usize,
    pub sigma_max: f64,
    pub threshold: f64,
    /// Number of singular values below `threshold * sigma_max`, counting the
    /// missing ones when there are fewer rows than columns.
    pub nullity: usize,
    pub silent_dimension: usize,
    /// Largest absolute forward reading over the silent basis.
    pub max_basis_reading: f64,
    pub sufficient: bool,
}

/// Numerical kernel of the assembled edge operator compared with the cycle
/// space of the support.
pub fn kernel_dimension_check(
    setup: &MeasurementSetup,
    support: &Support,
    threshold: f64,
) -> Result<KernelReport> {
    let a = operator_matrix(setup, support.grid(), support.edges())?;
    let (rows, cols) = a.shape();
    let (sigma_max, rank) = if rows == 0 || cols == 0 {
        (0.0, 0)
    } else {
        let svd = nalgebra::SVD::try_new(a, false, false, f64::EPSILON, 0)
            .ok_or_else(|| Error::Svd(format!("no convergence on a {rows}x{cols} matrix")))?;
        let smax = svd.singular_values.max();
        (
            smax,
            svd.singular_values
                .iter()
                .filter(|&&s| s >= threshold * smax && s > 0.0)
                .count(),
        )
    };
    let basis = silent_basis(support);
    let max_basis_reading = basis
        .iter()
        .map(|b| forward_edges(b, setup).max_abs())
        .fold(0.0, f64::max);
    let nullity = cols - rank;
    Ok(KernelReport {
        rows,
        cols,
        sigma_max,
        threshold,
        nullity,
        silent_dimension: basis.len(),
        max_basis_reading,
        sufficient: nullity == basis.len() && max_basis_reading <= 1e-12,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum CertifyMode {
    Exhaustive,
    Sampled { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict")]
pub enum Verdict {
    /// Every silent perturbation strictly increases the total variation.
    Strict,
    /// No silent perturbation decreases it, some leave it unchanged.
    Minimal,
    /// Sampled mode found no decreasing cycle.
    Undetermined,
    /// Moving along `cycle` lowers the total variation at rate `-rate` per
    /// unit of edge mass moved.
    Violated { cycle: OrientedLoop, rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimalityReport {
    pub verdict: Verdict,
    pub cycles_checked: usize,
    /// Smallest `D(cycle) / length(cycle)` over the checked cycles.
    pub min_margin: Option<f64>,
    /// Sign-blind length condition `|cycle in Z| <= |cycle outside Z|` on
    /// every checked cycle, and its strict form.
    pub length_condition: bool,
    pub length_condition_strict: bool,
}

/// `D` of a signed cycle in units of `h`, together with the carrier and
/// off-carrier edge counts.
fn cycle_rate(cycle: &[(usize, f64)], x: &[f64]) -> (f64, usize, usize) {
    let mut d = 0.0;
    let (mut on, mut off) = (0, 0);
    for &(e, s) in cycle {
        if x[e] != 0.0 {
            d += x[e].signum() * s;
            on += 1;
        } else {
            d += 1.0;
            off += 1;
        }
    }
    (d, on, off)
}

/// Vertex sequence of a signed cycle, in traversal order.
fn cycle_loop(graph: &SupportGraph, cycle: &[(usize, f64)]) -> Result<OrientedLoop> {
    let vertices: Vec<Vertex> = cycle
        .iter()
        .map(|&(e, s)| {
            let (a, b) = graph.ends[e];
            graph.vertices[if s > 0.0 { a } else { b }]
        })
        .collect();
    OrientedLoop::new(vertices)
}

fn reverse(cycle: &[(usize, f64)]) -> Vec<(usize, f64)> {
    cycle.iter().rev().map(|&(e, s)| (e, -s)).collect()
}

/// Splits an integer-valued circulation on the support into simple cycles
/// whose traversal signs agree with the circulation on every edge.
fn conformal_cycles(graph: &SupportGraph, flow: &[i64]) -> Vec<Vec<(usize, f64)>> {
    let mut flow = flow.to_vec();
    let mut out = Vec::new();
    while let Some(start_edge) = flow.iter().position(|&f| f != 0) {
        // Walk along edges in the direction of their flow until a vertex repeats.
        let (a, b) = graph.ends[start_edge];
        let mut at = if flow[start_edge] > 0 { a } else { b };
        let mut seen = vec![usize::MAX; graph.vertex_count()];
        let mut walk: Vec<(usize, f64, usize)> = Vec::new();
        loop {
            if seen[at] != usize::MAX {
                let cyc: Vec<(usize, f64, usize)> = walk[seen[at]..].to_vec();
                let amount = cyc
                    .iter()
                    .map(|&(e, _, _)| flow[e].abs())
                    .min()
                    .unwrap_or(0);
                for &(e, s, _) in &cyc {
                    flow[e] -= s as i64 * amount;
                }
                out.push(cyc.iter().map(|&(e, s, _)| (e, s)).collect());
                break;
            }
            seen[at] = walk.len();
            let next = graph.adjacency[at].iter().find_map(|&(w, e)| {
                let s = if graph.ends[e].0 == at { 1.0 } else { -1.0 };
                (flow[e] != 0 && (flow[e] > 0) == (s > 0.0)).then_some((w, e, s))
            });
            // A circulation always has an outgoing edge; bail out otherwise.
            let Some((w, e, s)) = next else { return out };
            walk.push((e, s, at));
            at = w;
        }
    }
    out
}

/// Decides total-variation minimality of `mu` among magnetizations with the
/// same field on `support`. Dipole atoms carry no length and never block a
/// cycle.
pub fn certify_tv_minimal(
    mu: &Magnetization,
    support: &Support,
    mode: CertifyMode,
) -> Result<MinimalityReport> {
    if mu.grid() != support.grid() {
        return Err(Error::GridMismatch);
    }
    let x = support.restrict(&mu.edge_part);
    let graph = support.graph();
    let cycles = match mode {
        CertifyMode::Exhaustive => graph.simple_cycles(CYCLE_GUARD)?,
        CertifyMode::Sampled { samples, seed } => sampled_cycles(&graph, samples, seed),
    };
    let mut min_margin: Option<f64> = None;
    let mut worst: Option<(f64, &Vec<(usize, f64)>)> = None;
    let (mut blind, mut blind_strict) = (true, true);
    for c in &cycles {
        let (d, on, off) = cycle_rate(c, &x);
        let len = c.len() as f64;
        // `d - off` is the carrier term; take the worse of the two orientations.
        let oriented = off as f64 - (d - off as f64).abs();
        let margin = oriented / len;
        min_margin = Some(min_margin.map_or(margin, |m| m.min(margin)));
        if oriented < 0.0 && worst.is_none_or(|(r, _)| margin < r) {
            worst = Some((margin, c));
        }
        blind &= on <= off;
        blind_strict &= on < off;
    }
    let verdict = if let Some((margin, c)) = worst {
        // Orient the witness so that moving along it lowers the variation.
        let (d, _, _) = cycle_rate(c, &x);
        let dir = if d < 0.0 { c.clone() } else { reverse(c) };
        Verdict::Violated {
            cycle: cycle_loop(&graph, &dir)?,
            rate: margin,
        }
    } else {
        match mode {
            CertifyMode::Sampled { .. } => Verdict::Undetermined,
            CertifyMode::Exhaustive if min_margin.is_none_or(|m| m > 0.0) => Verdict::Strict,
            CertifyMode::Exhaustive => Verdict::Minimal,
        }
    };
    Ok(MinimalityReport {
        verdict,
        cycles_checked: cycles.len(),
        min_margin,
        length_condition: blind,
        length_condition_strict: blind_strict,
    })
}

/// Fundamental cycles plus the conformal pieces of random integer
/// combinations of them.
fn sampled_cycles(graph: &SupportGraph, samples: usize, seed: u64) -> Vec<Vec<(usize, f64)>> {
    let basis = graph.fundamental_cycles();
    let mut out = basis.clone();
    if basis.is_empty() {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let mut flow = vec![0i64; graph.edge_count()];
        for b in &basis {
            let c: i64 = rng.random_range(-2..=2);
            for &(e, s) in b {
                flow[e] += c * s as i64;
            }
        }
        out.extend(conformal_cycles(graph, &flow));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "shape")]
pub enum MinimizerShape {
    Point,
    /// Minimizers form the segment between these two coefficient vectors.
    Segment {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Face {
        dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ep1Result {
    pub cycle_dimension: usize,
    pub start_tv: f64,
    /// Best value found by the coefficient grid scan.
    pub grid_min_tv: f64,
    pub min_tv: f64,
    /// Coefficients on the silent basis of one minimizer.
    pub argmin: Vec<f64>,
    pub shape: MinimizerShape,
}

impl Ep1Result {
    /// True when some equivalent measure has strictly smaller variation.
    pub fn improves(&self) -> bool {
        self.min_tv < self.start_tv - 1e-9 * self.start_tv.max(f64::MIN_POSITIVE)
    }
}

/// Brute-force minimization of the total variation over `mu0 + span(silent
/// basis)` for cycle spaces of dimension at most 3: a grid scan over the
/// coefficient box, then an exact search over the vertices of the
/// hyperplane arrangement on which the variation is piecewise linear.
pub fn ep1_oracle(mu0: &EdgeMeasure, support: &Support, resolution: usize) -> Result<Ep1Result> {
    let basis = silent_basis(support);
    let d = basis.len();
    if d > 3 {
        return Err(Error::OracleDimension(d));
    }
    if let Some((e, _)) = mu0.nonzero().find(|(e, _)| !support.contains(*e)) {
        return Err(Error::Invalid(format!(
            "edge {} carries weight outside the support",
            e.id()
        )));
    }
    let x0 = support.restrict(mu0);
    let cols: Vec<Vec<f64>> = basis.iter().map(|b| support.restrict(b)).collect();
    let ne = x0.len();
    let tv_at = |c: &[f64]| -> f64 {
        (0..ne)
            .map(|e| {
                (x0[e]
                    + c.iter()
                        .zip(&cols)
                        .map(|(ci, col)| ci * col[e])
                        .sum::<f64>())
                .abs()
            })
            .sum()
    };
    let start_tv = tv_at(&vec![0.0; d]);
    if d == 0 {
        return Ok(Ep1Result {
            cycle_dimension: 0,
            start_tv,
            grid_min_tv: start_tv,
            min_tv: start_tv,
            argmin: vec![],
            shape: MinimizerShape::Point,
        });
    }

    // Each basis cycle owns an edge no other cycle uses, so a minimizer has
    // |c_i| h <= 2 TV(mu0).
    let h = support.grid().h;
    let radius = 2.0 * start_tv / h;
    let n = (resolution.max(3) / 2) * 2 + 1;
    let mut grid_best = (start_tv, vec![0.0; d]);
    let mut idx = vec![0usize; d];
    loop {
        let c: Vec<f64> = idx
            .iter()
            .map(|&k| -radius + 2.0 * radius * k as f64 / (n - 1) as f64)
            .collect();
        let v = tv_at(&c);
        if v < grid_best.0 {
            grid_best = (v, c);
        }
        let mut p = 0;
        while p < d {
            idx[p] += 1;
            if idx[p] < n {
                break;
            }
            idx[p] = 0;
            p += 1;
        }
        if p == d {
            break;
        }
    }

    // Arrangement vertices: points where d of the edge weights vanish.
    let mut vertices: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut pick = (0..d).collect::<Vec<usize>>();
    loop {
        let m = DMatrix::from_fn(d, d, |r, c| cols[c][pick[r]]);
        let rhs = DVector::from_fn(d, |r, _| -x0[pick[r]]);
        if let Some(lu) = m.clone().lu().solve(&rhs) {
            let ok = (&m * &lu - &rhs).amax() <= 1e-9 * (1.0 + rhs.amax())
                && lu.iter().all(|v| v.is_finite());
            if ok {
                let c: Vec<f64> = lu.iter().copied().collect();
                vertices.push((tv_at(&c), c));
            }
        }
        if !next_combination(&mut pick, ne) {
            break;
        }
    }
    let min_tv = vertices.iter().map(|v| v.0).fold(grid_best.0, f64::min);
    let tol = 1e-9 * start_tv.max(min_tv).max(f64::MIN_POSITIVE);
    let optimal: Vec<&Vec<f64>> = vertices
        .iter()
        .filter(|v| v.0 <= min_tv + tol)
        .map(|v| &v.1)
        .collect();
    let argmin = optimal
        .first()
        .map(|c| c.to_vec())
        .unwrap_or_else(|| grid_best.1.clone());
    let shape = minimizer_shape(&optimal, start_tv);
    Ok(Ep1Result {
        cycle_dimension: d,
        start_tv,
        grid_min_tv: grid_best.0,
        min_tv,
        argmin,
        shape,
    })
}

fn next_combination(pick: &mut [usize], n: usize) -> bool {
    let k = pick.len();
    if k > n {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if pick[i] < n - k + i {
            pick[i] += 1;
            for j in i + 1..k {
                pick[j] = pick[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Dimension of the convex hull of the optimal arrangement vertices.
fn minimizer_shape(optimal: &[&Vec<f64>], scale: f64) -> MinimizerShape {
    let Some(first) = optimal.first() else {
        return MinimizerShape::Point;
    };
    let d = first.len();
    let diffs: Vec<Vec<f64>> = optimal
        .iter()
        .map(|c| c.iter().zip(first.iter()).map(|(a, b)| a - b).collect())
        .collect();
    let m = DMatrix::from_fn(diffs.len(), d, |r, c| diffs[r][c]);
    let tol = 1e-9 * scale.max(1.0);
    let rank = m
        .svd(false, false)
        .singular_values
        .iter()
        .filter(|&&s| s > tol)
        .count();
    match rank {
        0 => MinimizerShape::Point,
        1 => {
            let (k, _) = diffs
                .iter()
                .enumerate()
                .map(|(k, v)| (k, v.iter().map(|x| x * x).sum::<f64>()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("nonempty");
            let dir = &diffs[k];
            let proj = |c: &Vec<f64>| {
                c.iter()
                    .zip(first.iter())
                    .zip(dir)
                    .map(|((a, b), u)| (a - b) * u)
                    .sum::<f64>()
            };
            let lo = optimal
                .iter()
                .min_by(|a, b| proj(a).total_cmp(&proj(b)))
                .expect("nonempty");
            let hi = optimal
                .iter()
                .max_by(|a, b| proj(a).total_cmp(&proj(b)))
                .expect("nonempty");
            // Report endpoints in lexicographic order.
            let (lo, hi) = if lo
                .iter()
                .zip(hi.iter())
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| o.is_ne())
                == Some(std::cmp::Ordering::Greater)
            {
                (hi, lo)
            } else {
                (lo, hi)
            };
            MinimizerShape::Segment {
                lo: lo.to_vec(),
                hi: hi.to_vec(),
            }
        }
        r => MinimizerShape::Face { dim: r },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalReport {
    /// Smallest pairing over `+-nu` for the silent basis elements `nu`.
    pub min_basis_pairing: Option<f64>,
    /// Smallest pairing per unit variation over basis elements and samples.
    pub min_normalized_pairing: Option<f64>,
    pub evaluated: usize,
    /// A silent measure with negative pairing, if one was found.
    pub witness: Option<EdgeMeasure>,
}

impl VariationalReport {
    pub fn not_minimal(&self) -> bool {
        self.witness.is_some()
    }
}

/// Evaluates the variational pairing against the silent basis (both signs)
/// and `samples` random combinations of it.
pub fn variational_certify(
    mu: &Magnetization,
    support: &Support,
    samples: usize,
    seed: u64,
) -> Result<VariationalReport> {
    let basis = silent_basis(support);
    let mut report = VariationalReport {
        min_basis_pairing: None,
        min_normalized_pairing: None,
        evaluated: 0,
        witness: None,
    };
    let consider =
        |nu: EdgeMeasure, from_basis: bool, report: &mut VariationalReport| -> Result<()> {
            let p = variational_pairing(mu, &nu)?;
            let tv = nu.tv_norm();
            if tv == 0.0 {
                return Ok(());
            }
            report.evaluated += 1;
            if from_basis {
                report.min_basis_pairing = Some(report.min_basis_pairing.map_or(p, |m| m.min(p)));
            }
            let q = p / tv;
            if report.min_normalized_pairing.is_none_or(|m| q < m) {
                report.min_normalized_pairing = Some(q);
                // Random combinations of ties can round slightly below zero.
                if q < -PAIRING_TOL {
                    report.witness = Some(nu.scaled(1.0 / tv));
                }
            }
            Ok(())
        };
    for b in &basis {
        consider(b.clone(), true, &mut report)?;
        consider(b.scaled(-1.0), true, &mut report)?;
    }
    if !basis.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let mut nu = EdgeMeasure::zero(*support.grid());
            for b in &basis {
                let c: f64 = rng.sample(StandardNormal);
                nu = nu.axpy(c, b)?;
            }
            consider(nu, false, &mut report)?;
        }
    }
    Ok(report)
}

/// Edge measure of the silent basis combination with coefficients `c`.
pub fn silent_combination(support: &Support, c: &[f64]) -> Result<EdgeMeasure> {
    let basis = silent_basis(support);
    if c.len() != basis.len() {
        return Err(Error::LengthMismatch {
            expected: basis.len(),
            got: c.len(),
        });
    }
    let mut nu = EdgeMeasure::zero(*support.grid());
    for (ci, b) in c.iter().zip(&basis) {
        nu = nu.axpy(*ci, b)?;
    }
    Ok(nu)
}

/// Signed cycle of the support as an edge measure with weight `h` per edge.
pub fn loop_measure(support: &Support, cycle: &[(usize, f64)]) -> EdgeMeasure {
    cycle_measure(support, cycle)
}
