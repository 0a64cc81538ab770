//! Total-variation regularized least squares over a discrete support:
//!
//! `F(w) = ||f - A w||^2 + lambda * (sum_e |w_e| + sum_k |m_k|)`
//!
//! where the weighted norm uses the quadrature weights of the measurement
//! setup, edge weights enter with their absolute value and dipole moments
//! with their Euclidean length. The minimizer is characterized by the dual
//! certificate `A*(f - A w) = (lambda/2) u_w` on the support of `w` and
//! `|A*(f - A w)| <= lambda/2` everywhere.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    adjoint_dipoles, adjoint_edges, design_matrix, forward, MeasurementSetup, Reading,
};
use crate::graph::Support;
use crate::measures::{norm3, DipoleAtom, DipoleField, EdgeMeasure, Magnetization, TotalVariation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub lambda: f64,
    pub max_iters: usize,
    /// Certificate tolerance, relative to `lambda / 2`.
    pub tol: f64,
    /// Number of starts; the first is always the zero start.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            lambda: 0.1,
            max_iters: 50_000,
            tol: 1e-6,
            restarts: 1,
            seed: 0,
        }
    }
}

impl SolveOptions {
    pub fn with_lambda(lambda: f64) -> Self {
        SolveOptions {
            lambda,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidOptions(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidOptions(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidOptions("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    /// Largest `|A* r| / (lambda/2)` over zero variables.
    pub max_offsupport: f64,
    /// Largest `|A* r - (lambda/2) u| / (lambda/2)` over nonzero variables.
    pub max_onsupport_gap: f64,
    pub tol: f64,
    pub passed: bool,
}

impl CertReport {
    fn new(max_offsupport: f64, max_onsupport_gap: f64, tol: f64) -> Self {
        let passed = max_offsupport <= 1.0 + tol && max_onsupport_gap <= tol;
        CertReport {
            max_offsupport,
            max_onsupport_gap,
            tol,
            passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub lambda: f64,
    /// Weight per support edge, keyed by edge id.
    pub weights: BTreeMap<String, f64>,
    /// Moment per candidate dipole position, in support order.
    pub dipoles: Vec<DipoleAtom>,
    pub objective: f64,
    pub tv: f64,
    pub residual: Reading,
    pub certificate: CertReport,
    pub iterations: usize,
    pub converged: bool,
}

impl Solution {
    pub fn magnetization(&self, support: &Support) -> Result<Magnetization> {
        let x = self.coefficients(support)?;
        to_magnetization(support, &x)
    }

    /// Flat variable vector: support edges in order, then three components
    /// per dipole position.
    pub fn coefficients(&self, support: &Support) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(support.edges().len() + 3 * support.dipoles().len());
        for e in support.edges() {
            x.push(
                *self
                    .weights
                    .get(&e.id())
                    .ok_or_else(|| Error::Invalid(format!("solution misses edge {}", e.id())))?,
            );
        }
        if self.dipoles.len() != support.dipoles().len() {
            return Err(Error::LengthMismatch {
                expected: support.dipoles().len(),
                got: self.dipoles.len(),
            });
        }
        for a in &self.dipoles {
            x.extend_from_slice(&a.moment);
        }
        Ok(x)
    }
}

fn to_magnetization(support: &Support, x: &[f64]) -> Result<Magnetization> {
    let ne = support.edges().len();
    let edges = support.measure(&x[..ne])?;
    let atoms = support
        .dipoles()
        .iter()
        .enumerate()
        .map(|(k, &p)| DipoleAtom::new(p, [x[ne + 3 * k], x[ne + 3 * k + 1], x[ne + 3 * k + 2]]))
        .collect();
    Ok(Magnetization::new(edges, DipoleField::new(atoms)?))
}

/// Flattens a magnetization onto the support variables. Edge weights off the
/// support and atoms away from candidate positions are rejected.
pub fn support_coefficients(support: &Support, mu: &Magnetization) -> Result<Vec<f64>> {
    if mu.grid() != support.grid() {
        return Err(Error::GridMismatch);
    }
    if let Some((e, _)) = mu.edge_part.nonzero().find(|(e, _)| !support.contains(*e)) {
        return Err(Error::Invalid(format!(
            "edge {} carries weight outside the support",
            e.id()
        )));
    }
    let mut x = support.restrict(&mu.edge_part);
    let mut moments = vec![[0.0; 3]; support.dipoles().len()];
    for a in mu.dipole_part.atoms() {
        let k = support
            .dipoles()
            .iter()
            .position(|p| *p == a.position())
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "dipole at ({}, {}) is not a candidate position",
                    a.x, a.y
                ))
            })?;
        moments[k] = a.moment;
    }
    x.extend(moments.iter().flatten());
    Ok(x)
}

/// Certificate evaluated through the forward and adjoint maps directly,
/// independent of any assembled matrix.
pub fn optimality_certificate(
    mu: &Magnetization,
    f: &Reading,
    setup: &MeasurementSetup,
    support: &Support,
    lambda: f64,
    tol: f64,
) -> Result<CertReport> {
    f.check_len(setup)?;
    let x = support_coefficients(support, mu)?;
    let r = f.sub(&forward(mu, setup)?);
    let c_edges = adjoint_edges(&r, setup, support.grid())?;
    let c_dip = adjoint_dipoles(&r, setup, support.dipoles())?;
    let mut c: Vec<f64> = support.restrict(&c_edges);
    c.extend(c_dip.iter().flatten());
    let (off, on) = certificate_margins(&x, &c, support.edges().len(), lambda);
    Ok(CertReport::new(off, on, tol))
}

fn certificate_margins(x: &[f64], c: &[f64], ne: usize, lambda: f64) -> (f64, f64) {
    let half = lambda / 2.0;
    let (mut off, mut on) = (0.0f64, 0.0f64);
    for k in 0..ne {
        if x[k] == 0.0 {
            off = off.max(c[k].abs() / half);
        } else {
            on = on.max((c[k] - half * x[k].signum()).abs() / half);
        }
    }
    for k in (ne..x.len()).step_by(3) {
        let m = [x[k], x[k + 1], x[k + 2]];
        let ck = [c[k], c[k + 1], c[k + 2]];
        let n = norm3(m);
        if n == 0.0 {
            off = off.max(norm3(ck) / half);
        } else {
            let gap = [
                ck[0] - half * m[0] / n,
                ck[1] - half * m[1] / n,
                ck[2] - half * m[2] / n,
            ];
            on = on.max(norm3(gap) / half);
        }
    }
    (off, on)
}

fn penalty(x: &[f64], ne: usize) -> f64 {
    let edges: f64 = x[..ne].iter().map(|v| v.abs()).sum();
    let groups: f64 = x[ne..].chunks(3).map(|m| norm3([m[0], m[1], m[2]])).sum();
    edges + groups
}

/// Soft thresholding of edge weights and block shrinkage of dipole moments.
fn prox(x: &mut [f64], ne: usize, thr: f64) {
    for v in &mut x[..ne] {
        *v = v.signum() * (v.abs() - thr).max(0.0);
    }
    for m in x[ne..].chunks_mut(3) {
        let n = norm3([m[0], m[1], m[2]]);
        let s = if n > thr { 1.0 - thr / n } else { 0.0 };
        m.iter_mut().for_each(|v| *v *= s);
    }
}

/// A measurement setup, support and data with the assembled normal
/// equations; reused across regularization parameters and starts.
pub struct InversionProblem {
    setup: MeasurementSetup,
    support: Support,
    f: Reading,
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    lipschitz: f64,
}

impl InversionProblem {
    pub fn new(setup: &MeasurementSetup, support: &Support, f: &Reading) -> Result<Self> {
        f.check_len(setup)?;
        let a = design_matrix(setup, support.grid(), support.edges(), support.dipoles())?;
        let ft = DVector::from_iterator(
            setup.len(),
            f.values
                .iter()
                .zip(setup.weights())
                .map(|(v, w)| v * w.sqrt()),
        );
        let gram = a.tr_mul(&a);
        let rhs = a.tr_mul(&ft);
        let lipschitz = power_iteration(&gram) * 1.02;
        Ok(InversionProblem {
            setup: setup.clone(),
            support: support.clone(),
            f: f.clone(),
            gram,
            rhs,
            lipschitz,
        })
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn setup(&self) -> &MeasurementSetup {
        &self.setup
    }

    pub fn data(&self) -> &Reading {
        &self.f
    }

    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    fn ne(&self) -> usize {
        self.support.edges().len()
    }

    /// `A* f` on the support variables.
    pub fn adjoint_data(&self) -> &[f64] {
        self.rhs.as_slice()
    }

    /// Smallest `lambda` for which the zero measure is optimal.
    pub fn zero_threshold(&self) -> f64 {
        let ne = self.ne();
        let c = self.rhs.as_slice();
        let edges = c[..ne].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let groups = c[ne..]
            .chunks(3)
            .fold(0.0f64, |m, g| m.max(norm3([g[0], g[1], g[2]])));
        2.0 * edges.max(groups)
    }

    /// `1/2 x'Gx - b'x + (lambda/2) pen(x)`: half the objective minus `|f|^2 / 2`.
    fn reduced_objective(&self, x: &DVector<f64>, lambda: f64) -> f64 {
        0.5 * x.dot(&(&self.gram * x)) - self.rhs.dot(x)
            + 0.5 * lambda * penalty(x.as_slice(), self.ne())
    }

    fn gram_margins(&self, x: &DVector<f64>, lambda: f64) -> (f64, f64) {
        let c = &self.rhs - &self.gram * x;
        certificate_margins(x.as_slice(), c.as_slice(), self.ne(), lambda)
    }

    /// Active-set refinement: repeatedly solves the stationarity equations on
    /// the current support (Newton on the dipole blocks), drops variables whose
    /// sign flips and adds the worst certificate violator. Returns a point only
    /// if it passes the certificate.
    fn polish(&self, x: &DVector<f64>, lambda: f64, tol: f64) -> Option<DVector<f64>> {
        let ne = self.ne();
        let half = lambda / 2.0;
        let mut x = x.clone();
        for _round in 0..(2 * self.dim() + 4) {
            let vars: Vec<usize> = (0..ne)
                .filter(|&k| x[k] != 0.0)
                .chain(
                    (ne..self.dim())
                        .step_by(3)
                        .filter(|&k| norm3([x[k], x[k + 1], x[k + 2]]) > 0.0)
                        .flat_map(|k| k..k + 3),
                )
                .collect();
            let signs: Vec<f64> = vars
                .iter()
                .filter(|&&k| k < ne)
                .map(|&k| x[k].signum())
                .collect();
            let mut xa = DVector::from_iterator(vars.len(), vars.iter().map(|&k| x[k]));
            let gaa =
                DMatrix::from_fn(vars.len(), vars.len(), |a, b| self.gram[(vars[a], vars[b])]);
            let ba = DVector::from_iterator(vars.len(), vars.iter().map(|&k| self.rhs[k]));
            let n_edge_vars = signs.len();
            let mut flipped = false;
            for _ in 0..if vars.is_empty() { 0 } else { 60 } {
                let mut grad = &gaa * &xa - &ba;
                let mut hess = gaa.clone();
                for a in 0..n_edge_vars {
                    grad[a] += half * signs[a];
                }
                for g in (n_edge_vars..vars.len()).step_by(3) {
                    let m = [xa[g], xa[g + 1], xa[g + 2]];
                    let n = norm3(m);
                    if n == 0.0 {
                        flipped = true;
                        break;
                    }
                    for p in 0..3 {
                        grad[g + p] += half * m[p] / n;
                        for q in 0..3 {
                            let id = if p == q { 1.0 } else { 0.0 };
                            hess[(g + p, g + q)] += half * (id - m[p] * m[q] / (n * n)) / n;
                        }
                    }
                }
                if flipped {
                    break;
                }
                let scale = ba.amax().max(half);
                if grad.amax() <= 1e-15 * scale {
                    break;
                }
                let svd = hess.svd(true, true);
                let eps = 1e-13 * svd.singular_values.max();
                let Ok(step) = svd.solve(&grad, eps) else {
                    return None;
                };
                xa -= step;
                if n_edge_vars == vars.len() {
                    // Edge-only systems are linear: one step is exact.
                    break;
                }
            }
            if flipped {
                return None;
            }
            let mut next = DVector::zeros(self.dim());
            for (a, &k) in vars.iter().enumerate() {
                next[k] = xa[a];
            }
            let bad: Vec<usize> = (0..n_edge_vars)
                .filter(|&a| xa[a] == 0.0 || xa[a].signum() != signs[a])
                .collect();
            if !bad.is_empty() {
                // Drop sign flips and retry from the previous point on the reduced set.
                for a in bad {
                    x[vars[a]] = 0.0;
                }
                continue;
            }
            x = next;
            let c = &self.rhs - &self.gram * &x;
            let worst = (0..ne)
                .filter(|&k| x[k] == 0.0)
                .map(|k| (k, c[k].abs() / half))
                .filter(|&(_, v)| v > 1.0 + tol)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            match worst {
                Some((k, _)) => {
                    // Enter with a tiny weight of the violating sign.
                    x[k] = c[k].signum() * f64::MIN_POSITIVE.sqrt();
                }
                None => {
                    let (off, on) = certificate_margins(x.as_slice(), c.as_slice(), ne, lambda);
                    return (off <= 1.0 + tol && on <= tol).then_some(x);
                }
            }
        }
        None
    }

    /// Monotone accelerated proximal gradient from `x0`, with periodic
    /// active-set polishing; stops once the certificate passes.
    pub fn solve_from(&self, x0: &[f64], opts: &SolveOptions) -> Result<Solution> {
        opts.validate()?;
        if x0.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                got: x0.len(),
            });
        }
        let lambda = opts.lambda;
        let ne = self.ne();
        let step = 1.0 / self.lipschitz;
        let thr = 0.5 * lambda * step;
        let mut x = DVector::from_column_slice(x0);
        let mut fx = self.reduced_objective(&x, lambda);
        let mut y = x.clone();
        let mut t = 1.0f64;
        let mut iterations = 0;
        let mut certified = false;
        if self.dim() == 0 {
            certified = true;
        }
        while !certified && iterations < opts.max_iters {
            iterations += 1;
            let grad = &self.gram * &y - &self.rhs;
            let mut z = &y - grad * step;
            prox(z.as_mut_slice(), ne, thr);
            let fz = self.reduced_objective(&z, lambda);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            if fz <= fx {
                y = &z + (&z - &x) * ((t - 1.0) / t_next);
                x = z;
                fx = fz;
                t = t_next;
            } else {
                // Restart the momentum from the last accepted point.
                y = x.clone();
                t = 1.0;
            }
            if iterations % 20 == 0 || iterations == opts.max_iters {
                let (off, on) = self.gram_margins(&x, lambda);
                if off <= 1.0 + opts.tol && on <= opts.tol {
                    certified = true;
                } else if iterations % 100 == 0 || iterations == opts.max_iters {
                    if let Some(p) = self.polish(&x, lambda, opts.tol) {
                        x = p;
                        certified = true;
                    }
                }
            }
        }
        if !certified {
            if let Some(p) = self.polish(&x, lambda, opts.tol) {
                x = p;
            }
        }
        self.finish(x.as_slice(), lambda, opts.tol, iterations)
    }

    fn finish(&self, x: &[f64], lambda: f64, tol: f64, iterations: usize) -> Result<Solution> {
        let mu = to_magnetization(&self.support, x)?;
        let residual = self.f.sub(&forward(&mu, &self.setup)?);
        let tv = penalty(x, self.ne());
        let objective = residual.weighted_norm_sq(&self.setup) + lambda * tv;
        let certificate =
            optimality_certificate(&mu, &self.f, &self.setup, &self.support, lambda, tol)?;
        let weights = self
            .support
            .edges()
            .iter()
            .zip(x)
            .map(|(e, &w)| (e.id(), w))
            .collect();
        Ok(Solution {
            lambda,
            weights,
            dipoles: mu.dipole_part.atoms().to_vec(),
            objective,
            tv,
            residual,
            converged: certificate.passed,
            certificate,
            iterations,
        })
    }

    pub fn solve(&self, opts: &SolveOptions) -> Result<Solution> {
        self.solve_from(&vec![0.0; self.dim()], opts)
    }

    /// `opts.restarts` independent solves: the zero start plus seeded Gaussian
    /// starts of scale `|A* f|_inf / lambda`.
    pub fn multistart(&self, opts: &SolveOptions) -> Result<Vec<Solution>> {
        opts.validate()?;
        let scale = self.rhs.amax() / opts.lambda;
        (0..opts.restarts.max(1))
            .into_par_iter()
            .map(|k| {
                let x0: Vec<f64> = if k == 0 {
                    vec![0.0; self.dim()]
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64));
                    (0..self.dim())
                        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                        .collect()
                };
                self.solve_from(&x0, opts)
            })
            .collect()
    }
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix.
fn power_iteration(g: &DMatrix<f64>) -> f64 {
    let n = g.nrows();
    if n == 0 {
        return 1.0;
    }
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut est = 0.0;
    for _ in 0..2000 {
        let w = g * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 1.0;
        }
        v = w / norm;
        if (norm - est).abs() <= 1e-12 * norm {
            est = norm;
            break;
        }
        est = norm;
    }
    est
}

/// Minimizes the regularized objective; with `opts.restarts > 1` returns the
/// lowest-objective solution among the starts.
pub fn solve_ep2(
    f: &Reading,
    setup: &MeasurementSetup,
    support: &Support,
    opts: &SolveOptions,
) -> Result<Solution> {
    let problem = InversionProblem::new(setup, support, f)?;
    let mut sols = problem.multistart(opts)?;
    sols.sort_by(|a, b| a.objective.total_cmp(&b.objective));
    Ok(sols.swap_remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub solution: Solution,
    /// Total variation distance to the reference measure, when one is given.
    pub distance: Option<f64>,
    pub residual_norm: f64,
}

/// Warm-started solves along a strictly decreasing schedule. When `noise`
/// is given, the data at step `n` is `f + lambda_n * noise`, so the noise
/// level over `sqrt(lambda_n)` tends to zero along the path.
pub fn lambda_path(
    f: &Reading,
    setup: &MeasurementSetup,
    support: &Support,
    schedule: &[f64],
    noise: Option<&Reading>,
    reference: Option<&Magnetization>,
    opts: &SolveOptions,
) -> Result<Vec<PathPoint>> {
    if schedule.is_empty() || schedule.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::InvalidOptions(
            "lambda schedule must be nonempty and positive".into(),
        ));
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidOptions(
            "lambda schedule must be strictly decreasing".into(),
        ));
    }
    let reference = reference
        .map(|m| support_coefficients(support, m))
        .transpose()?;
    let clean = match noise {
        None => Some(InversionProblem::new(setup, support, f)?),
        Some(e) => {
            e.check_len(setup)?;
            None
        }
    };
    let mut x = vec![0.0; support.edges().len() + 3 * support.dipoles().len()];
    let mut out = Vec::with_capacity(schedule.len());
    for &lambda in schedule {
        let local;
        let problem = match (&clean, noise) {
            (Some(p), _) => p,
            (None, Some(e)) => {
                local = InversionProblem::new(setup, support, &f.add(&e.scaled(lambda)))?;
                &local
            }
            (None, None) => unreachable!("noise-free problem is prebuilt"),
        };
        let sol = problem.solve_from(
            &x,
            &SolveOptions {
                lambda,
                ..opts.clone()
            },
        )?;
        x = sol.coefficients(support)?;
        let distance = reference
            .as_ref()
            .map(|r| tv_distance(&x, r, support.edges().len()));
        let residual_norm = sol.residual.weighted_norm_sq(setup).sqrt();
        out.push(PathPoint {
            lambda,
            solution: sol,
            distance,
            residual_norm,
        });
    }
    Ok(out)
}

/// Total variation of the difference of two coefficient vectors.
pub fn tv_distance(a: &[f64], b: &[f64], ne: usize) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    penalty(&d, ne)
}

/// Writes one CSV row per path point: lambda, objective, TV, residual norm,
/// certificate margins, convergence flag and reference distance.
pub fn write_path_csv<W: Write>(path: &[PathPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "lambda",
        "objective",
        "tv",
        "residual_norm",
        "max_offsupport",
        "max_onsupport_gap",
        "converged",
        "distance",
    ])?;
    for p in path {
        let s = &p.solution;
        w.write_record([
            p.lambda.to_string(),
            s.objective.to_string(),
            s.tv.to_string(),
            p.residual_norm.to_string(),
            s.certificate.max_offsupport.to_string(),
            s.certificate.max_onsupport_gap.to_string(),
            s.converged.to_string(),
            p.distance.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

impl TotalVariation for Solution {
    fn tv_norm(&self) -> f64 {
        self.tv
    }
}

/// Convenience for tests and the command line: the edge part of a solution
/// as a full-grid measure.
pub fn solution_edges(sol: &Solution, support: &Support) -> Result<EdgeMeasure> {
    Ok(sol.magnetization(support)?.edge_part)
}
