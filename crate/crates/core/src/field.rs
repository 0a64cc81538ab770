//! Magnetostatic forward model: the field component along a fixed direction
//! `v`, measured at points off the sample plane, produced by edge measures and
//! point dipoles lying in the plane `z = 0`.
//!
//! Edge contributions use the closed-form antiderivative of the kernel along
//! a straight segment, so a reading is a combination of per-vertex terms
//! weighted by the divergence of the measure. Divergence-free measures are
//! therefore silent to rounding, independent of the measurement points.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Edge, Grid};
use crate::measures::{divergence, DipoleAtom, DipoleField, EdgeMeasure, Magnetization};

/// Largest number of dense matrix entries we are willing to assemble.
pub const MAX_MATRIX_ENTRIES: usize = 100_000_000;

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

fn default_mu0() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SetupRepr")]
pub struct MeasurementSetup {
    points: Vec<[f64; 3]>,
    v: [f64; 3],
    weights: Vec<f64>,
    mu0: f64,
}

#[derive(Deserialize)]
struct SetupRepr {
    points: Vec<[f64; 3]>,
    v: [f64; 3],
    weights: Option<Vec<f64>>,
    #[serde(default = "default_mu0")]
    mu0: f64,
}

impl TryFrom<SetupRepr> for MeasurementSetup {
    type Error = Error;

    fn try_from(r: SetupRepr) -> Result<Self> {
        let weights = r.weights.unwrap_or_else(|| vec![1.0; r.points.len()]);
        MeasurementSetup::new(r.points, r.v, weights, r.mu0)
    }
}

impl MeasurementSetup {
    pub fn new(points: Vec<[f64; 3]>, v: [f64; 3], weights: Vec<f64>, mu0: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidSetup("no measurement points".into()));
        }
        if weights.len() != points.len() {
            return Err(Error::LengthMismatch {
                expected: points.len(),
                got: weights.len(),
            });
        }
        let vn = dot(v, v).sqrt();
        if vn.is_nan() || (vn - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSetup(format!(
                "direction must be a unit vector, |v| = {vn}"
            )));
        }
        if let Some(k) = points
            .iter()
            .position(|q| !(q.iter().all(|c| c.is_finite()) && q[2] != 0.0))
        {
            return Err(Error::InvalidSetup(format!(
                "point {k} lies in the sample plane or is not finite"
            )));
        }
        if let Some(k) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidSetup(format!("weight {k} is not positive")));
        }
        if !(mu0.is_finite() && mu0 > 0.0) {
            return Err(Error::InvalidSetup("mu0 must be positive".into()));
        }
        Ok(MeasurementSetup {
            points,
            v,
            weights,
            mu0,
        })
    }

    /// `nx * ny` points at cell centers of the rectangle `[x0,x1] x [y0,y1]`
    /// at height `z`, with equal weights summing to the rectangle's area.
    pub fn lattice(x: [f64; 2], y: [f64; 2], n: [usize; 2], z: f64, v: [f64; 3]) -> Result<Self> {
        if n[0] == 0 || n[1] == 0 || !(x[1] > x[0] && y[1] > y[0]) {
            return Err(Error::InvalidSetup("empty measurement rectangle".into()));
        }
        let (dx, dy) = ((x[1] - x[0]) / n[0] as f64, (y[1] - y[0]) / n[1] as f64);
        let points = (0..n[1])
            .flat_map(|b| {
                (0..n[0]).map(move |a| {
                    [
                        x[0] + (a as f64 + 0.5) * dx,
                        y[0] + (b as f64 + 0.5) * dy,
                        z,
                    ]
                })
            })
            .collect::<Vec<_>>();
        let weights = vec![dx * dy; points.len()];
        MeasurementSetup::new(points, v, weights, 1.0)
    }

    pub fn with_mu0(mut self, mu0: f64) -> Result<Self> {
        if !(mu0.is_finite() && mu0 > 0.0) {
            return Err(Error::InvalidSetup("mu0 must be positive".into()));
        }
        self.mu0 = mu0;
        Ok(self)
    }

    /// Multiplies every quadrature weight by `c > 0`.
    pub fn with_weight_scale(mut self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidSetup("weight scale must be positive".into()));
        }
        self.weights.iter_mut().for_each(|w| *w *= c);
        Ok(self)
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn direction(&self) -> [f64; 3] {
        self.v
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn zero_reading(&self) -> Reading {
        Reading {
            values: vec![0.0; self.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub values: Vec<f64>,
}

impl Reading {
    pub fn new(values: Vec<f64>) -> Self {
        Reading { values }
    }

    pub fn check_len(&self, setup: &MeasurementSetup) -> Result<()> {
        if self.values.len() != setup.len() {
            return Err(Error::LengthMismatch {
                expected: setup.len(),
                got: self.values.len(),
            });
        }
        Ok(())
    }

    /// `sum_q weight_q * a_q * b_q`.
    pub fn weighted_dot(&self, other: &Reading, setup: &MeasurementSetup) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .zip(setup.weights())
            .map(|((a, b), w)| w * a * b)
            .sum()
    }

    pub fn weighted_norm_sq(&self, setup: &MeasurementSetup) -> f64 {
        self.weighted_dot(self, setup)
    }

    pub fn sub(&self, other: &Reading) -> Reading {
        Reading {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn add(&self, other: &Reading) -> Reading {
        Reading {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Reading {
        Reading {
            values: self.values.iter().map(|a| c * a).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, a| m.max(a.abs()))
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn in_plane(p: [f64; 2]) -> [f64; 3] {
    [p[0], p[1], 0.0]
}

/// `v . x / |x|^3`, whose gradient is the kernel.
pub fn kernel_antiderivative(x: [f64; 3], v: [f64; 3]) -> Result<f64> {
    let r2 = dot(x, x);
    if r2 == 0.0 {
        return Err(Error::Singular);
    }
    Ok(dot(v, x) / (r2 * r2.sqrt()))
}

/// `v / |x|^3 - 3 x (v . x) / |x|^5`.
pub fn kernel_kv(x: [f64; 3], v: [f64; 3]) -> Result<[f64; 3]> {
    let r2 = dot(x, x);
    if r2 == 0.0 {
        return Err(Error::Singular);
    }
    let r3 = r2 * r2.sqrt();
    let c = 3.0 * dot(v, x) / (r3 * r2);
    Ok([
        v[0] / r3 - c * x[0],
        v[1] / r3 - c * x[1],
        v[2] / r3 - c * x[2],
    ])
}

fn dipole_reading(q: [f64; 3], atom: &DipoleAtom, setup: &MeasurementSetup) -> Result<f64> {
    let k = kernel_kv(sub3(q, in_plane(atom.position())), setup.v)?;
    Ok(-setup.mu0 / FOUR_PI * dot(k, atom.moment))
}

pub fn forward_dipoles(d: &DipoleField, setup: &MeasurementSetup) -> Result<Reading> {
    let values = setup
        .points
        .par_iter()
        .map(|&q| {
            d.atoms()
                .iter()
                .map(|a| dipole_reading(q, a, setup))
                .sum::<Result<f64>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Reading { values })
}

/// Vertex positions in 3-D and the divergence of `m` at each of them, for
/// vertices with nonzero divergence.
fn charged_vertices(m: &EdgeMeasure) -> Vec<([f64; 3], f64)> {
    let g = m.grid();
    divergence(m)
        .nonzero()
        .map(|(v, d)| (in_plane(g.vertex_position(v)), d))
        .collect()
}

pub fn forward_edges(m: &EdgeMeasure, setup: &MeasurementSetup) -> Reading {
    let charges = charged_vertices(m);
    let c = -setup.mu0 / (FOUR_PI * m.grid().h);
    let values = setup
        .points
        .par_iter()
        .map(|&q| {
            // Points sit off the plane, so the antiderivative is never singular.
            c * charges
                .iter()
                .map(|&(p, d)| d * kernel_antiderivative(sub3(q, p), setup.v).unwrap_or(0.0))
                .sum::<f64>()
        })
        .collect();
    Reading { values }
}

/// Reading of a single edge with unit weight, evaluated per edge rather than
/// through vertex charges.
pub fn edge_response(grid: &Grid, e: Edge, q: [f64; 3], setup: &MeasurementSetup) -> f64 {
    let (a, b) = e.endpoints();
    let fa =
        kernel_antiderivative(sub3(q, in_plane(grid.vertex_position(a))), setup.v).unwrap_or(0.0);
    let fb =
        kernel_antiderivative(sub3(q, in_plane(grid.vertex_position(b))), setup.v).unwrap_or(0.0);
    -setup.mu0 / (FOUR_PI * grid.h) * (fa - fb)
}

pub fn forward(mu: &Magnetization, setup: &MeasurementSetup) -> Result<Reading> {
    Ok(forward_edges(&mu.edge_part, setup).add(&forward_dipoles(&mu.dipole_part, setup)?))
}

/// Adjoint of the edge forward map with respect to the weighted inner
/// product on readings: `(A* psi)_e = sum_q weight_q psi_q A_{q,e}`.
pub fn adjoint_edges(psi: &Reading, setup: &MeasurementSetup, grid: &Grid) -> Result<EdgeMeasure> {
    psi.check_len(setup)?;
    let coeffs: Vec<f64> = psi
        .values
        .iter()
        .zip(&setup.weights)
        .map(|(p, w)| p * w)
        .collect();
    let potentials: Vec<f64> = (0..grid.vertex_count())
        .into_par_iter()
        .map(|k| {
            let p = in_plane(grid.vertex_position(grid.vertex_at(k)));
            setup
                .points
                .iter()
                .zip(&coeffs)
                .map(|(&q, c)| c * kernel_antiderivative(sub3(q, p), setup.v).unwrap_or(0.0))
                .sum()
        })
        .collect();
    let c = -setup.mu0 / (FOUR_PI * grid.h);
    let weights = grid
        .edges()
        .map(|e| {
            let (a, b) = e.endpoints();
            c * (potentials[grid.vertex_index(a)] - potentials[grid.vertex_index(b)])
        })
        .collect();
    EdgeMeasure::from_weights(*grid, weights)
}

/// Adjoint of the dipole forward map: one 3-vector per candidate position.
pub fn adjoint_dipoles(
    psi: &Reading,
    setup: &MeasurementSetup,
    positions: &[[f64; 2]],
) -> Result<Vec<[f64; 3]>> {
    psi.check_len(setup)?;
    positions
        .par_iter()
        .map(|&y| {
            let mut acc = [0.0; 3];
            for ((&q, p), w) in setup.points.iter().zip(&psi.values).zip(&setup.weights) {
                let k = kernel_kv(sub3(q, in_plane(y)), setup.v)?;
                let c = -setup.mu0 / FOUR_PI * w * p;
                for a in 0..3 {
                    acc[a] += c * k[a];
                }
            }
            Ok(acc)
        })
        .collect()
}

fn check_size(rows: usize, cols: usize) -> Result<()> {
    if rows.saturating_mul(cols) > MAX_MATRIX_ENTRIES {
        return Err(Error::TooLarge { rows, cols });
    }
    Ok(())
}

/// Dense matrix of the edge forward map restricted to `edges`, with row `q`
/// scaled by `sqrt(weight_q)` so plain least squares matches the weighted norm.
pub fn operator_matrix(
    setup: &MeasurementSetup,
    grid: &Grid,
    edges: &[Edge],
) -> Result<DMatrix<f64>> {
    design_matrix(setup, grid, edges, &[])
}

/// Edge columns followed by three columns (x, y, z moment) per dipole
/// position, rows scaled by `sqrt(weight_q)`.
pub fn design_matrix(
    setup: &MeasurementSetup,
    grid: &Grid,
    edges: &[Edge],
    dipoles: &[[f64; 2]],
) -> Result<DMatrix<f64>> {
    for &e in edges {
        grid.edge_index(e)?;
    }
    let rows = setup.len();
    let cols = edges.len() + 3 * dipoles.len();
    check_size(rows, cols)?;
    let sqrt_w: Vec<f64> = setup.weights.iter().map(|w| w.sqrt()).collect();
    let columns: Vec<Vec<f64>> = (0..cols)
        .into_par_iter()
        .map(|c| {
            setup
                .points
                .iter()
                .zip(&sqrt_w)
                .map(|(&q, s)| {
                    let a = if c < edges.len() {
                        Ok(edge_response(grid, edges[c], q, setup))
                    } else {
                        let k = c - edges.len();
                        let atom = DipoleAtom::new(dipoles[k / 3], unit(k % 3));
                        dipole_reading(q, &atom, setup)
                    }?;
                    Ok(s * a)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_iterator(
        rows,
        cols,
        columns.into_iter().flatten(),
    ))
}

fn unit(a: usize) -> [f64; 3] {
    let mut u = [0.0; 3];
    u[a] = 1.0;
    u
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub rows: usize,
    pub cols: usize,
    pub edge_index: Vec<String>,
}

/// Writes `matrix` column-major as little-endian f64 to `bin`, and the shape
/// plus column labels to `sidecar` as JSON.
pub fn export_matrix(
    matrix: &DMatrix<f64>,
    edges: &[Edge],
    bin: &Path,
    sidecar: &Path,
) -> Result<()> {
    if edges.len() != matrix.ncols() {
        return Err(Error::LengthMismatch {
            expected: matrix.ncols(),
            got: edges.len(),
        });
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(bin)?);
    for x in matrix.as_slice() {
        out.write_all(&x.to_le_bytes())?;
    }
    out.flush()?;
    let meta = MatrixSidecar {
        rows: matrix.nrows(),
        cols: matrix.ncols(),
        edge_index: edges.iter().map(Edge::id).collect(),
    };
    std::fs::write(sidecar, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Scalar potential `(1/4pi) sum (x - y) . m / |x - y|^3` of a dipole field.
pub fn scalar_potential(d: &DipoleField, x: [f64; 3]) -> Result<f64> {
    d.atoms()
        .iter()
        .map(|a| {
            kernel_antiderivative(sub3(x, in_plane(a.position())), a.moment).map(|f| f / FOUR_PI)
        })
        .sum()
}
