use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid vertex `(i, j)` at position `origin + h * (i, j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Vertex(pub usize, pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    /// Horizontal edge, canonical direction +x.
    #[serde(rename = "h")]
    H,
    /// Vertical edge, canonical direction +y.
    #[serde(rename = "v")]
    V,
}

/// A grid edge. `H(i, j)` joins vertex `(i, j)` to `(i + 1, j)`,
/// `V(i, j)` joins `(i, j)` to `(i, j + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub kind: EdgeKind,
    pub i: usize,
    pub j: usize,
}

impl Edge {
    pub const fn h(i: usize, j: usize) -> Self {
        Edge {
            kind: EdgeKind::H,
            i,
            j,
        }
    }

    pub const fn v(i: usize, j: usize) -> Self {
        Edge {
            kind: EdgeKind::V,
            i,
            j,
        }
    }

    /// Tail and head along the canonical direction.
    pub fn endpoints(&self) -> (Vertex, Vertex) {
        match self.kind {
            EdgeKind::H => (Vertex(self.i, self.j), Vertex(self.i + 1, self.j)),
            EdgeKind::V => (Vertex(self.i, self.j), Vertex(self.i, self.j + 1)),
        }
    }

    /// Short identifier used as a JSON map key, e.g. `h:3:4`.
    pub fn id(&self) -> String {
        let k = match self.kind {
            EdgeKind::H => 'h',
            EdgeKind::V => 'v',
        };
        format!("{k}:{}:{}", self.i, self.j)
    }
}

/// Uniform square lattice of `nx * ny` cells of side `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub origin: [f64; 2],
}

impl Grid {
    pub fn new(nx: usize, ny: usize, h: f64, origin: [f64; 2]) -> Result<Self> {
        let grid = Grid { nx, ny, h, origin };
        grid.validate()?;
        Ok(grid)
    }

    /// Unit-spaced grid anchored at the origin.
    pub fn unit(nx: usize, ny: usize) -> Self {
        Grid {
            nx,
            ny,
            h: 1.0,
            origin: [0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::InvalidGrid(format!(
                "cell counts must be positive, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "cell side must be positive, got {}",
                self.h
            )));
        }
        if !self.origin.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn vertex_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    fn h_edge_count(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    pub fn edge_count(&self) -> usize {
        self.h_edge_count() + (self.nx + 1) * self.ny
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    pub fn cell_coords(&self, index: usize) -> (usize, usize) {
        (index % self.nx, index / self.nx)
    }

    pub fn contains_vertex(&self, v: Vertex) -> bool {
        v.0 <= self.nx && v.1 <= self.ny
    }

    pub fn vertex_index(&self, v: Vertex) -> usize {
        debug_assert!(self.contains_vertex(v));
        v.1 * (self.nx + 1) + v.0
    }

    pub fn vertex_at(&self, index: usize) -> Vertex {
        Vertex(index % (self.nx + 1), index / (self.nx + 1))
    }

    pub fn contains_edge(&self, e: Edge) -> bool {
        match e.kind {
            EdgeKind::H => e.i < self.nx && e.j <= self.ny,
            EdgeKind::V => e.i <= self.nx && e.j < self.ny,
        }
    }

    pub fn edge_index(&self, e: Edge) -> Result<usize> {
        if !self.contains_edge(e) {
            return Err(Error::EdgeOutOfRange(e));
        }
        Ok(match e.kind {
            EdgeKind::H => e.j * self.nx + e.i,
            EdgeKind::V => self.h_edge_count() + e.j * (self.nx + 1) + e.i,
        })
    }

    pub fn edge_at(&self, index: usize) -> Edge {
        let nh = self.h_edge_count();
        if index < nh {
            Edge::h(index % self.nx, index / self.nx)
        } else {
            let k = index - nh;
            Edge::v(k % (self.nx + 1), k / (self.nx + 1))
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        (0..self.edge_count()).map(move |k| self.edge_at(k))
    }

    /// Cells to the left and to the right of an edge traversed in its
    /// canonical direction; `None` stands for the exterior of the grid.
    pub fn edge_cells(&self, e: Edge) -> (Option<usize>, Option<usize>) {
        match e.kind {
            EdgeKind::H => {
                let above = (e.j < self.ny).then(|| self.cell_index(e.i, e.j));
                let below = (e.j > 0).then(|| self.cell_index(e.i, e.j - 1));
                (above, below)
            }
            EdgeKind::V => {
                let left = (e.i > 0).then(|| self.cell_index(e.i - 1, e.j));
                let right = (e.i < self.nx).then(|| self.cell_index(e.i, e.j));
                (left, right)
            }
        }
    }

    /// The grid edge joining two adjacent vertices, with `+1` if `a -> b` is
    /// the canonical direction and `-1` otherwise.
    pub fn edge_between(&self, a: Vertex, b: Vertex) -> Option<(Edge, f64)> {
        if !self.contains_vertex(a) || !self.contains_vertex(b) {
            return None;
        }
        let (ai, aj, bi, bj) = (a.0 as i64, a.1 as i64, b.0 as i64, b.1 as i64);
        match (bi - ai, bj - aj) {
            (1, 0) => Some((Edge::h(a.0, a.1), 1.0)),
            (-1, 0) => Some((Edge::h(b.0, b.1), -1.0)),
            (0, 1) => Some((Edge::v(a.0, a.1), 1.0)),
            (0, -1) => Some((Edge::v(b.0, b.1), -1.0)),
            _ => None,
        }
    }

    /// Position of a vertex in the plane.
    pub fn vertex_position(&self, v: Vertex) -> [f64; 2] {
        [
            self.origin[0] + self.h * v.0 as f64,
            self.origin[1] + self.h * v.1 as f64,
        ]
    }

    pub fn cell_center(&self, index: usize) -> [f64; 2] {
        let (i, j) = self.cell_coords(index);
        [
            self.origin[0] + self.h * (i as f64 + 0.5),
            self.origin[1] + self.h * (j as f64 + 0.5),
        ]
    }

    /// Edges incident to a vertex, with `+1` for edges leaving it
    /// (the vertex is the canonical tail) and `-1` for edges entering it.
    pub fn incident_edges(&self, v: Vertex) -> impl Iterator<Item = (Edge, f64)> {
        let Vertex(i, j) = v;
        let (nx, ny) = (self.nx, self.ny);
        [
            (i < nx).then(|| (Edge::h(i, j), 1.0)),
            (j < ny).then(|| (Edge::v(i, j), 1.0)),
            (i > 0).then(|| (Edge::h(i.wrapping_sub(1), j), -1.0)),
            (j > 0).then(|| (Edge::v(i, j.wrapping_sub(1)), -1.0)),
        ]
        .into_iter()
        .flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_bijective() {
        let g = Grid::unit(3, 2);
        assert_eq!(g.edge_count(), 3 * 3 + 4 * 2);
        for k in 0..g.edge_count() {
            assert_eq!(g.edge_index(g.edge_at(k)).unwrap(), k);
        }
        for k in 0..g.vertex_count() {
            assert_eq!(g.vertex_index(g.vertex_at(k)), k);
        }
        for k in 0..g.cell_count() {
            let (i, j) = g.cell_coords(k);
            assert_eq!(g.cell_index(i, j), k);
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(0, 3, 1.0, [0.0, 0.0]).is_err());
        assert!(Grid::new(2, 3, 0.0, [0.0, 0.0]).is_err());
        assert!(Grid::new(2, 3, f64::NAN, [0.0, 0.0]).is_err());
    }

    #[test]
    fn edge_between_orients() {
        let g = Grid::unit(2, 2);
        assert_eq!(
            g.edge_between(Vertex(1, 1), Vertex(2, 1)),
            Some((Edge::h(1, 1), 1.0))
        );
        assert_eq!(
            g.edge_between(Vertex(2, 1), Vertex(1, 1)),
            Some((Edge::h(1, 1), -1.0))
        );
        assert_eq!(
            g.edge_between(Vertex(1, 1), Vertex(1, 0)),
            Some((Edge::v(1, 0), -1.0))
        );
        assert_eq!(g.edge_between(Vertex(1, 1), Vertex(2, 2)), None);
        assert!(g.edge_index(Edge::h(2, 0)).is_err());
    }

    #[test]
    fn incident_edges_at_corner_and_interior() {
        let g = Grid::unit(2, 2);
        assert_eq!(g.incident_edges(Vertex(0, 0)).count(), 2);
        assert_eq!(g.incident_edges(Vertex(1, 1)).count(), 4);
        assert_eq!(g.incident_edges(Vertex(2, 2)).count(), 2);
    }
}
