//! Oriented Jordan loops on the grid lattice and boundary tracing of pixel sets.
//!
//! The boundary of a pixel set is traced with the set kept on the left, so
//! outer boundaries come out counterclockwise and hole boundaries clockwise.
//! At a saddle vertex (two diagonal cells of the set meeting at a corner) the
//! tracer turns left, hugging the corner of the cell it is following; any
//! walk that still revisits a vertex is cut there into simple loops.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::grid::{Edge, Grid, Vertex};
use super::pixels::{boundary_edges_of_mask, PixelSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Ccw,
    Cw,
}

impl Orientation {
    pub fn reversed(self) -> Self {
        match self {
            Orientation::Ccw => Orientation::Cw,
            Orientation::Cw => Orientation::Ccw,
        }
    }
}

/// A simple closed lattice curve. Vertices are listed once each; the closing
/// step from the last vertex back to the first is implicit. An empty vertex
/// list is the degenerate loop.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "LoopRepr")]
pub struct OrientedLoop {
    vertices: Vec<Vertex>,
    orientation: Orientation,
}

#[derive(Deserialize)]
struct LoopRepr {
    vertices: Vec<Vertex>,
    orientation: Orientation,
}

impl TryFrom<LoopRepr> for OrientedLoop {
    type Error = Error;

    fn try_from(r: LoopRepr) -> Result<Self> {
        let lp = OrientedLoop::new(r.vertices)?;
        if !lp.is_degenerate() && lp.orientation != r.orientation {
            return Err(Error::InvalidLoop(format!(
                "declared orientation {:?} disagrees with vertex order",
                r.orientation
            )));
        }
        Ok(lp)
    }
}

fn twice_signed_area(vertices: &[Vertex]) -> i64 {
    let n = vertices.len();
    (0..n)
        .map(|k| {
            let a = vertices[k];
            let b = vertices[(k + 1) % n];
            a.0 as i64 * b.1 as i64 - b.0 as i64 * a.1 as i64
        })
        .sum()
}

impl OrientedLoop {
    /// Builds a loop from its cyclic vertex list; orientation is read off
    /// the signed area.
    pub fn new(vertices: Vec<Vertex>) -> Result<Self> {
        if vertices.is_empty() {
            return Ok(Self::degenerate());
        }
        if vertices.len() < 4 {
            return Err(Error::InvalidLoop(format!(
                "{} vertices cannot close a lattice loop",
                vertices.len()
            )));
        }
        let n = vertices.len();
        for k in 0..n {
            let a = vertices[k];
            let b = vertices[(k + 1) % n];
            if a.0.abs_diff(b.0) + a.1.abs_diff(b.1) != 1 {
                return Err(Error::InvalidLoop(format!(
                    "vertices ({}, {}) and ({}, {}) are not lattice neighbours",
                    a.0, a.1, b.0, b.1
                )));
            }
        }
        let mut sorted = vertices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidLoop("loop revisits a vertex".into()));
        }
        let area = twice_signed_area(&vertices);
        let orientation = if area > 0 {
            Orientation::Ccw
        } else {
            Orientation::Cw
        };
        Ok(OrientedLoop {
            vertices,
            orientation,
        })
    }

    pub fn degenerate() -> Self {
        OrientedLoop {
            vertices: Vec::new(),
            orientation: Orientation::Ccw,
        }
    }

    /// Counterclockwise boundary of the cell rectangle `[i0, i1) x [j0, j1)`.
    pub fn rectangle(i0: usize, j0: usize, i1: usize, j1: usize) -> Result<Self> {
        if i1 <= i0 || j1 <= j0 {
            return Err(Error::InvalidLoop("empty rectangle".into()));
        }
        let mut v = Vec::new();
        v.extend((i0..i1).map(|i| Vertex(i, j0)));
        v.extend((j0..j1).map(|j| Vertex(i1, j)));
        v.extend((i0 + 1..=i1).rev().map(|i| Vertex(i, j1)));
        v.extend((j0 + 1..=j1).rev().map(|j| Vertex(i0, j)));
        OrientedLoop::new(v)
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn is_degenerate(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn length(&self, h: f64) -> f64 {
        h * self.edge_count() as f64
    }

    /// Shoelace area in cell units; positive for counterclockwise loops.
    pub fn signed_area(&self) -> f64 {
        twice_signed_area(&self.vertices) as f64 / 2.0
    }

    pub fn reversed(&self) -> Self {
        if self.is_degenerate() {
            return self.clone();
        }
        let mut v = self.vertices.clone();
        v.reverse();
        OrientedLoop {
            vertices: v,
            orientation: self.orientation.reversed(),
        }
        .canonical()
    }

    /// Same loop started at its smallest vertex.
    pub fn canonical(mut self) -> Self {
        if let Some((k, _)) = self.vertices.iter().enumerate().min_by_key(|(_, v)| **v) {
            self.vertices.rotate_left(k);
        }
        self
    }

    /// Traversed edges with the traversal sign relative to each edge's
    /// canonical direction.
    pub fn edges(&self, grid: &Grid) -> Result<Vec<(Edge, f64)>> {
        let n = self.vertices.len();
        (0..n)
            .map(|k| {
                let a = self.vertices[k];
                let b = self.vertices[(k + 1) % n];
                grid.edge_between(a, b).ok_or_else(|| {
                    Error::InvalidLoop(format!(
                        "step ({}, {}) -> ({}, {}) leaves the grid",
                        a.0, a.1, b.0, b.1
                    ))
                })
            })
            .collect()
    }

    /// Cells enclosed by the loop (even-odd rule on horizontal rays).
    pub fn interior(&self, grid: &Grid) -> Result<PixelSet> {
        let mut mask = vec![false; grid.cell_count()];
        let mut crossings = vec![false; grid.vertex_count()];
        for (e, _) in self.edges(grid)? {
            if let super::grid::EdgeKind::V = e.kind {
                crossings[grid.vertex_index(Vertex(e.i, e.j))] = true;
            }
        }
        for j in 0..grid.ny {
            let mut inside = false;
            for i in 0..grid.nx {
                if crossings[grid.vertex_index(Vertex(i, j))] {
                    inside = !inside;
                }
                mask[grid.cell_index(i, j)] = inside;
            }
        }
        Ok(PixelSet::from_mask(*grid, &mask))
    }
}

/// Oriented boundary of a pixel set: counterclockwise outer loops and
/// clockwise hole loops, pairwise edge-disjoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCurves {
    pub outer: Vec<OrientedLoop>,
    pub holes: Vec<OrientedLoop>,
}

impl BoundaryCurves {
    pub fn total_edge_count(&self) -> usize {
        self.outer
            .iter()
            .chain(&self.holes)
            .map(OrientedLoop::edge_count)
            .sum()
    }

    pub fn loops(&self) -> impl Iterator<Item = &OrientedLoop> {
        self.outer.iter().chain(&self.holes)
    }
}

/// Boundary curves of a pixel set.
pub fn boundary_curves(set: &PixelSet) -> BoundaryCurves {
    let loops = trace_mask(set.grid(), &set.mask());
    let (mut outer, mut holes): (Vec<_>, Vec<_>) = loops
        .into_iter()
        .partition(|l| l.orientation == Orientation::Ccw);
    sort_loops(&mut outer);
    sort_loops(&mut holes);
    BoundaryCurves { outer, holes }
}

pub(crate) fn sort_loops(loops: &mut [OrientedLoop]) {
    loops.sort_by(|a, b| {
        b.signed_area()
            .abs()
            .total_cmp(&a.signed_area().abs())
            .then(b.edge_count().cmp(&a.edge_count()))
            .then_with(|| a.vertices.cmp(&b.vertices))
    });
}

/// Traces the boundary of the set given by `mask` into simple loops with
/// the set on the left.
pub(crate) fn trace_mask(grid: &Grid, mask: &[bool]) -> Vec<OrientedLoop> {
    let directed: Vec<(Vertex, Vertex)> = boundary_edges_of_mask(grid, mask)
        .into_iter()
        .map(|e| {
            let (tail, head) = e.endpoints();
            let left_in = grid.edge_cells(e).0.is_some_and(|c| mask[c]);
            if left_in {
                (tail, head)
            } else {
                (head, tail)
            }
        })
        .collect();

    let mut outgoing: HashMap<Vertex, Vec<usize>> = HashMap::new();
    for (k, &(tail, _)) in directed.iter().enumerate() {
        outgoing.entry(tail).or_default().push(k);
    }
    let step = |k: usize| {
        let (a, b) = directed[k];
        (b.0 as i64 - a.0 as i64, b.1 as i64 - a.1 as i64)
    };
    let successor = |k: usize| -> usize {
        let head = directed[k].1;
        let outs = &outgoing[&head];
        if outs.len() == 1 {
            return outs[0];
        }
        let (dx, dy) = step(k);
        let left = (-dy, dx);
        *outs
            .iter()
            .find(|&&o| step(o) == left)
            .expect("saddle vertex offers a left turn")
    };

    let mut used = vec![false; directed.len()];
    let mut loops = Vec::new();
    for start in 0..directed.len() {
        if used[start] {
            continue;
        }
        let mut walk = Vec::new();
        let mut k = start;
        while !used[k] {
            used[k] = true;
            walk.push(directed[k].0);
            k = successor(k);
        }
        for simple in split_at_repeats(&walk) {
            let lp =
                OrientedLoop::new(simple).expect("traced boundary pieces are simple lattice loops");
            loops.push(lp.canonical());
        }
    }
    loops
}

fn split_at_repeats(walk: &[Vertex]) -> Vec<Vec<Vertex>> {
    let mut out = Vec::new();
    let mut stack: Vec<Vertex> = Vec::new();
    let mut pos: HashMap<Vertex, usize> = HashMap::new();
    for &v in walk.iter().chain(walk.first()) {
        if let Some(&k) = pos.get(&v) {
            for u in &stack[k + 1..] {
                pos.remove(u);
            }
            out.push(stack[k..].to_vec());
            stack.truncate(k + 1);
        } else {
            pos.insert(v, stack.len());
            stack.push(v);
        }
    }
    out
}
