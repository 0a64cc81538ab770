//! Discrete planar vector measures: edge-supported tangential measures and
//! point dipoles.
//!
//! An [`EdgeMeasure`] stores one signed weight per grid edge. The weight is
//! the full mass carried by the edge (density times `h`), signed along the
//! edge's canonical direction (+x for horizontal, +y for vertical edges), so
//! the total variation is the plain sum of absolute weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Edge, EdgeKind, Grid, OrientedLoop, Vertex};

/// Relative tolerance used when testing a measure for zero divergence.
pub const DIVERGENCE_RTOL: f64 = 1e-12;

pub trait TotalVariation {
    fn tv_norm(&self) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMeasure {
    grid: Grid,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EdgeEntry {
    kind: EdgeKind,
    i: usize,
    j: usize,
    w: f64,
}

#[derive(Serialize, Deserialize)]
struct EdgeMeasureRepr {
    grid: Grid,
    edges: Vec<EdgeEntry>,
}

impl Serialize for EdgeMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let edges = self
            .nonzero()
            .map(|(e, w)| EdgeEntry {
                kind: e.kind,
                i: e.i,
                j: e.j,
                w,
            })
            .collect();
        EdgeMeasureRepr {
            grid: self.grid,
            edges,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EdgeMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = EdgeMeasureRepr::deserialize(d)?;
        r.grid.validate().map_err(D::Error::custom)?;
        let mut m = EdgeMeasure::zero(r.grid);
        let mut seen = vec![false; r.grid.edge_count()];
        for entry in r.edges {
            let e = Edge {
                kind: entry.kind,
                i: entry.i,
                j: entry.j,
            };
            let k = r.grid.edge_index(e).map_err(D::Error::custom)?;
            if std::mem::replace(&mut seen[k], true) {
                return Err(D::Error::custom(format!("edge {} listed twice", e.id())));
            }
            if !entry.w.is_finite() {
                return Err(D::Error::custom(format!(
                    "non-finite weight on edge {}",
                    e.id()
                )));
            }
            m.weights[k] = entry.w;
        }
        Ok(m)
    }
}

impl EdgeMeasure {
    pub fn zero(grid: Grid) -> Self {
        EdgeMeasure {
            grid,
            weights: vec![0.0; grid.edge_count()],
        }
    }

    pub fn from_weights(grid: Grid, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.edge_count() {
            return Err(Error::LengthMismatch {
                expected: grid.edge_count(),
                got: weights.len(),
            });
        }
        Ok(EdgeMeasure { grid, weights })
    }

    pub fn from_entries(
        grid: Grid,
        entries: impl IntoIterator<Item = (Edge, f64)>,
    ) -> Result<Self> {
        let mut m = EdgeMeasure::zero(grid);
        for (e, w) in entries {
            m.add(e, w)?;
        }
        Ok(m)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, e: Edge) -> f64 {
        self.grid
            .edge_index(e)
            .map(|k| self.weights[k])
            .unwrap_or(0.0)
    }

    pub fn set(&mut self, e: Edge, w: f64) -> Result<()> {
        let k = self.grid.edge_index(e)?;
        self.weights[k] = w;
        Ok(())
    }

    pub fn add(&mut self, e: Edge, w: f64) -> Result<()> {
        let k = self.grid.edge_index(e)?;
        self.weights[k] += w;
        Ok(())
    }

    /// Nonzero entries in edge-index order.
    pub fn nonzero(&self) -> impl Iterator<Item = (Edge, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(k, &w)| (self.grid.edge_at(k), w))
    }

    pub fn support(&self) -> Vec<Edge> {
        self.nonzero().map(|(e, _)| e).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        EdgeMeasure {
            grid: self.grid,
            weights: self.weights.iter().map(|w| c * w).collect(),
        }
    }

    pub fn try_add(&self, other: &EdgeMeasure) -> Result<Self> {
        self.axpy(1.0, other)
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &EdgeMeasure) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| a + c * b)
            .collect();
        Ok(EdgeMeasure {
            grid: self.grid,
            weights,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.weights.iter().fold(0.0, |m, w| m.max(w.abs()))
    }
}

impl TotalVariation for EdgeMeasure {
    fn tv_norm(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipoleAtom {
    pub x: f64,
    pub y: f64,
    #[serde(rename = "m")]
    pub moment: [f64; 3],
}

impl DipoleAtom {
    pub fn new(position: [f64; 2], moment: [f64; 3]) -> Self {
        DipoleAtom {
            x: position[0],
            y: position[1],
            moment,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn strength(&self) -> f64 {
        norm3(self.moment)
    }
}

pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Finitely many point dipoles in the plane.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DipoleFieldRepr")]
pub struct DipoleField {
    atoms: Vec<DipoleAtom>,
}

#[derive(Deserialize)]
struct DipoleFieldRepr {
    atoms: Vec<DipoleAtom>,
}

impl TryFrom<DipoleFieldRepr> for DipoleField {
    type Error = Error;

    fn try_from(r: DipoleFieldRepr) -> Result<Self> {
        DipoleField::new(r.atoms)
    }
}

impl DipoleField {
    pub fn new(atoms: Vec<DipoleAtom>) -> Result<Self> {
        for (k, a) in atoms.iter().enumerate() {
            if !(a.x.is_finite() && a.y.is_finite() && a.moment.iter().all(|m| m.is_finite())) {
                return Err(Error::Invalid(format!("dipole {k} has non-finite data")));
            }
            if atoms[..k].iter().any(|b| b.x == a.x && b.y == a.y) {
                return Err(Error::Invalid(format!(
                    "dipole {k} repeats position ({}, {})",
                    a.x, a.y
                )));
            }
        }
        Ok(DipoleField { atoms })
    }

    pub fn empty() -> Self {
        DipoleField::default()
    }

    pub fn atoms(&self) -> &[DipoleAtom] {
        &self.atoms
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

impl TotalVariation for DipoleField {
    fn tv_norm(&self) -> f64 {
        self.atoms.iter().map(DipoleAtom::strength).sum()
    }
}

/// Edge part plus dipole part. The two parts are mutually singular, so the
/// total variation is additive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Magnetization {
    pub edge_part: EdgeMeasure,
    #[serde(default)]
    pub dipole_part: DipoleField,
}

impl Magnetization {
    pub fn new(edge_part: EdgeMeasure, dipole_part: DipoleField) -> Self {
        Magnetization {
            edge_part,
            dipole_part,
        }
    }

    pub fn from_edges(edge_part: EdgeMeasure) -> Self {
        Magnetization {
            edge_part,
            dipole_part: DipoleField::empty(),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.edge_part.grid()
    }
}

impl TotalVariation for Magnetization {
    fn tv_norm(&self) -> f64 {
        self.edge_part.tv_norm() + self.dipole_part.tv_norm()
    }
}

/// A scalar per grid vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl VertexFunction {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, v: Vertex) -> f64 {
        self.values[self.grid.vertex_index(v)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Vertex with the largest absolute value, if any value is nonzero.
    pub fn argmax_abs(&self) -> Option<(Vertex, f64)> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(k, &v)| (self.grid.vertex_at(k), v))
    }

    pub fn nonzero(&self) -> impl Iterator<Item = (Vertex, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(k, &v)| (self.grid.vertex_at(k), v))
    }
}

/// Per-edge sign field (-1, 0 or +1).
#[derive(Debug, Clone, PartialEq)]
pub struct SignField {
    grid: Grid,
    signs: Vec<i8>,
}

impl SignField {
    pub fn get(&self, e: Edge) -> i8 {
        self.grid.edge_index(e).map(|k| self.signs[k]).unwrap_or(0)
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// `weight * R_gamma`: every traversed edge receives `weight * h` with the
/// traversal sign. The degenerate loop gives the zero measure.
pub fn edge_measure_from_loop(grid: &Grid, lp: &OrientedLoop, weight: f64) -> Result<EdgeMeasure> {
    let mut m = EdgeMeasure::zero(*grid);
    for (e, s) in lp.edges(grid)? {
        m.add(e, s * weight * grid.h)?;
    }
    Ok(m)
}

pub fn tv_norm<T: TotalVariation + ?Sized>(m: &T) -> f64 {
    m.tv_norm()
}

/// Net outflow at every vertex.
pub fn divergence(m: &EdgeMeasure) -> VertexFunction {
    let g = m.grid;
    let mut values = vec![0.0; g.vertex_count()];
    for (k, &w) in m.weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (tail, head) = g.edge_at(k).endpoints();
        values[g.vertex_index(tail)] += w;
        values[g.vertex_index(head)] -= w;
    }
    VertexFunction { grid: g, values }
}

/// Errors with the worst vertex unless the divergence vanishes up to
/// [`DIVERGENCE_RTOL`] relative to the largest weight.
pub fn check_divergence_free(m: &EdgeMeasure) -> Result<()> {
    let div = divergence(m);
    let tol = DIVERGENCE_RTOL * m.max_abs();
    match div.argmax_abs() {
        Some((vertex, value)) if value.abs() > tol => {
            Err(Error::NotDivergenceFree { vertex, value })
        }
        _ => Ok(()),
    }
}

pub fn unit_direction(m: &EdgeMeasure) -> SignField {
    SignField {
        grid: m.grid,
        signs: m.weights.iter().map(|&w| sign(w)).collect(),
    }
}

/// The sign field `w` of the variational characterization: on the support of
/// `nu` it is the sign of `mu`'s edge weight where that is nonzero and the
/// sign of `nu` elsewhere. Dipole atoms never contribute.
pub fn w_field(mu: &Magnetization, nu: &EdgeMeasure) -> Result<SignField> {
    if mu.edge_part.grid != nu.grid {
        return Err(Error::GridMismatch);
    }
    let signs = mu
        .edge_part
        .weights
        .iter()
        .zip(&nu.weights)
        .map(|(&a, &b)| {
            if b == 0.0 {
                0
            } else if a != 0.0 {
                sign(a)
            } else {
                sign(b)
            }
        })
        .collect();
    Ok(SignField {
        grid: nu.grid,
        signs,
    })
}

/// `sum_e w(e) * nu_e`. Nonnegative for every silent `nu` exactly when `mu`
/// has minimal total variation in its equivalence class.
pub fn variational_pairing(mu: &Magnetization, nu: &EdgeMeasure) -> Result<f64> {
    check_divergence_free(nu)?;
    let w = w_field(mu, nu)?;
    Ok(w.signs
        .iter()
        .zip(&nu.weights)
        .map(|(&s, &x)| s as f64 * x)
        .sum())
}
