//! Support sets as graphs: spanning forests, the cycle space (the silent
//! edge measures on the support) and simple-cycle enumeration.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Edge, EdgeKind, Grid, Vertex};
use crate::measures::EdgeMeasure;

/// Admissible edges and candidate dipole positions for an inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SupportRepr", into = "SupportRepr")]
pub struct Support {
    grid: Grid,
    edges: Vec<Edge>,
    dipoles: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct EdgeRef {
    kind: EdgeKind,
    i: usize,
    j: usize,
}

#[derive(Serialize, Deserialize)]
struct SupportRepr {
    grid: Grid,
    edges: Vec<EdgeRef>,
    #[serde(default)]
    dipoles: Vec<[f64; 2]>,
}

impl TryFrom<SupportRepr> for Support {
    type Error = Error;

    fn try_from(r: SupportRepr) -> Result<Self> {
        r.grid.validate()?;
        let edges = r
            .edges
            .into_iter()
            .map(|e| Edge {
                kind: e.kind,
                i: e.i,
                j: e.j,
            })
            .collect();
        Support::new(r.grid, edges, r.dipoles)
    }
}

impl From<Support> for SupportRepr {
    fn from(s: Support) -> Self {
        SupportRepr {
            grid: s.grid,
            edges: s
                .edges
                .iter()
                .map(|e| EdgeRef {
                    kind: e.kind,
                    i: e.i,
                    j: e.j,
                })
                .collect(),
            dipoles: s.dipoles,
        }
    }
}

impl Support {
    /// Edges are sorted by grid edge index and deduplicated.
    pub fn new(grid: Grid, mut edges: Vec<Edge>, dipoles: Vec<[f64; 2]>) -> Result<Self> {
        let mut keyed = edges
            .drain(..)
            .map(|e| grid.edge_index(e).map(|k| (k, e)))
            .collect::<Result<Vec<_>>>()?;
        keyed.sort_by_key(|p| p.0);
        keyed.dedup_by_key(|p| p.0);
        for (k, p) in dipoles.iter().enumerate() {
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(Error::Invalid(format!("dipole position {k} is not finite")));
            }
            if dipoles[..k].contains(p) {
                return Err(Error::Invalid(format!("dipole position {k} is repeated")));
            }
        }
        Ok(Support {
            grid,
            edges: keyed.into_iter().map(|p| p.1).collect(),
            dipoles,
        })
    }

    pub fn edges_only(grid: Grid, edges: Vec<Edge>) -> Result<Self> {
        Support::new(grid, edges, Vec::new())
    }

    pub fn full(grid: Grid) -> Self {
        Support {
            grid,
            edges: grid.edges().collect(),
            dipoles: Vec::new(),
        }
    }

    /// Edges carrying nonzero weight in `m`.
    pub fn of_measure(m: &EdgeMeasure) -> Self {
        Support {
            grid: *m.grid(),
            edges: m.support(),
            dipoles: Vec::new(),
        }
    }

    pub fn with_dipoles(mut self, dipoles: Vec<[f64; 2]>) -> Result<Self> {
        let s = Support::new(self.grid, std::mem::take(&mut self.edges), dipoles)?;
        Ok(s)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn dipoles(&self) -> &[[f64; 2]] {
        &self.dipoles
    }

    pub fn position(&self, e: Edge) -> Option<usize> {
        let k = self.grid.edge_index(e).ok()?;
        self.edges
            .binary_search_by_key(&k, |x| self.grid.edge_index(*x).expect("support edge"))
            .ok()
    }

    pub fn contains(&self, e: Edge) -> bool {
        self.position(e).is_some()
    }

    /// Edge measure with the given weights on the support edges, in order.
    pub fn measure(&self, weights: &[f64]) -> Result<EdgeMeasure> {
        if weights.len() != self.edges.len() {
            return Err(Error::LengthMismatch {
                expected: self.edges.len(),
                got: weights.len(),
            });
        }
        EdgeMeasure::from_entries(
            self.grid,
            self.edges.iter().copied().zip(weights.iter().copied()),
        )
    }

    /// Weights of `m` on the support edges, in order.
    pub fn restrict(&self, m: &EdgeMeasure) -> Vec<f64> {
        self.edges.iter().map(|&e| m.get(e)).collect()
    }

    pub fn graph(&self) -> SupportGraph {
        SupportGraph::new(self)
    }
}

/// The support as an abstract graph on the vertices it touches. Local vertex
/// ids follow grid vertex order.
#[derive(Debug, Clone)]
pub struct SupportGraph {
    pub vertices: Vec<Vertex>,
    /// `(tail, head)` local vertex ids per support edge, in support order.
    pub ends: Vec<(usize, usize)>,
    /// Per vertex: `(neighbor, edge position)` sorted by neighbor.
    pub adjacency: Vec<Vec<(usize, usize)>>,
}

impl SupportGraph {
    fn new(s: &Support) -> Self {
        let mut vertices: Vec<Vertex> = s
            .edges
            .iter()
            .flat_map(|e| {
                let (a, b) = e.endpoints();
                [a, b]
            })
            .collect();
        // Local ids follow grid vertex indexing, row by row.
        vertices.sort_by_key(|v| (v.1, v.0));
        vertices.dedup();
        let index: BTreeMap<Vertex, usize> =
            vertices.iter().enumerate().map(|(k, v)| (*v, k)).collect();
        let ends: Vec<(usize, usize)> = s
            .edges
            .iter()
            .map(|e| {
                let (a, b) = e.endpoints();
                (index[&a], index[&b])
            })
            .collect();
        let mut adjacency = vec![Vec::new(); vertices.len()];
        for (k, &(a, b)) in ends.iter().enumerate() {
            adjacency[a].push((b, k));
            adjacency[b].push((a, k));
        }
        adjacency.iter_mut().for_each(|l| l.sort_unstable());
        SupportGraph {
            vertices,
            ends,
            adjacency,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.ends.len()
    }

    /// Breadth-first spanning forest: per vertex its parent `(vertex, edge)`
    /// (none for roots), plus the component label of every vertex.
    pub fn spanning_forest(&self) -> (Vec<Option<(usize, usize)>>, Vec<usize>) {
        let n = self.vertex_count();
        let mut parent = vec![None; n];
        let mut comp = vec![usize::MAX; n];
        let mut label = 0;
        for root in 0..n {
            if comp[root] != usize::MAX {
                continue;
            }
            comp[root] = label;
            let mut queue = VecDeque::from([root]);
            while let Some(u) = queue.pop_front() {
                for &(w, e) in &self.adjacency[u] {
                    if comp[w] == usize::MAX {
                        comp[w] = label;
                        parent[w] = Some((u, e));
                        queue.push_back(w);
                    }
                }
            }
            label += 1;
        }
        (parent, comp)
    }

    pub fn component_count(&self) -> usize {
        self.spanning_forest().1.iter().max().map_or(0, |m| m + 1)
    }

    /// `E - V + C`.
    pub fn cycle_rank(&self) -> usize {
        self.edge_count() + self.component_count() - self.vertex_count()
    }

    /// Fundamental cycles of the spanning forest as signed edge-position
    /// lists, traversing each non-tree edge along its canonical direction.
    pub fn fundamental_cycles(&self) -> Vec<Vec<(usize, f64)>> {
        let (parent, _) = self.spanning_forest();
        let mut depth = vec![0usize; self.vertex_count()];
        // Parents are discovered before children in BFS order; resolve depths lazily.
        fn depth_of(v: usize, parent: &[Option<(usize, usize)>], depth: &mut [usize]) -> usize {
            let mut chain = Vec::new();
            let mut u = v;
            while let Some((p, _)) = parent[u] {
                if depth[u] != 0 {
                    break;
                }
                chain.push(u);
                u = p;
            }
            let mut d = depth[u];
            for &w in chain.iter().rev() {
                d += 1;
                depth[w] = d;
            }
            depth[v]
        }
        let mut is_tree = vec![false; self.edge_count()];
        for &(_, e) in parent.iter().flatten() {
            is_tree[e] = true;
        }
        let mut cycles = Vec::new();
        for (k, &(a, b)) in self.ends.iter().enumerate() {
            if is_tree[k] {
                continue;
            }
            // Edge a -> b, then tree path b -> a.
            let mut from_b = Vec::new();
            let mut from_a = Vec::new();
            let (mut x, mut y) = (b, a);
            let (mut dx, mut dy) = (
                depth_of(x, &parent, &mut depth),
                depth_of(y, &parent, &mut depth),
            );
            while dx > dy {
                let (p, e) = parent[x].expect("depth > 0");
                from_b.push((e, x, p));
                x = p;
                dx -= 1;
            }
            while dy > dx {
                let (p, e) = parent[y].expect("depth > 0");
                from_a.push((e, p, y));
                y = p;
                dy -= 1;
            }
            while x != y {
                let (px, ex) = parent[x].expect("same component");
                from_b.push((ex, x, px));
                x = px;
                let (py, ey) = parent[y].expect("same component");
                from_a.push((ey, py, y));
                y = py;
            }
            let mut cycle = vec![(k, 1.0)];
            for (e, from, _) in from_b.into_iter().chain(from_a.into_iter().rev()) {
                let s = if self.ends[e].0 == from { 1.0 } else { -1.0 };
                cycle.push((e, s));
            }
            cycles.push(cycle);
        }
        cycles
    }

    /// All simple cycles, each listed once as signed edge positions. Fails
    /// with [`Error::EnumerationGuard`] once more than `guard` cycles are found.
    pub fn simple_cycles(&self, guard: usize) -> Result<Vec<Vec<(usize, f64)>>> {
        let mut out = Vec::new();
        let n = self.vertex_count();
        let mut on_path = vec![false; n];
        let mut steps = 0usize;
        let step_guard = guard.saturating_mul(64).max(1 << 20);
        for start in 0..n {
            let mut path: Vec<(usize, usize)> = Vec::new();
            on_path[start] = true;
            // Explicit DFS stack of (vertex, next adjacency slot).
            let mut stack = vec![(start, 0usize)];
            while let Some(top) = stack.last_mut() {
                let (u, slot) = *top;
                if slot >= self.adjacency[u].len() {
                    stack.pop();
                    on_path[u] = false;
                    path.pop();
                    continue;
                }
                top.1 += 1;
                let (w, e) = self.adjacency[u][slot];
                steps += 1;
                if steps > step_guard {
                    return Err(Error::EnumerationGuard(out.len()));
                }
                if w == start && path.len() >= 2 {
                    // Each cycle is found twice; keep the traversal whose
                    // first neighbor is smaller than the last.
                    let first = self.other_end(path[0].1, start);
                    if first < u {
                        let mut cycle: Vec<(usize, f64)> = path
                            .iter()
                            .map(|&(from, e)| (e, self.sign(e, from)))
                            .collect();
                        cycle.push((e, self.sign(e, u)));
                        out.push(cycle);
                        if out.len() > guard {
                            return Err(Error::EnumerationGuard(guard));
                        }
                    }
                } else if w > start && !on_path[w] {
                    on_path[w] = true;
                    path.push((u, e));
                    stack.push((w, 0));
                }
            }
            on_path[start] = false;
        }
        Ok(out)
    }

    fn other_end(&self, e: usize, v: usize) -> usize {
        let (a, b) = self.ends[e];
        if a == v {
            b
        } else {
            a
        }
    }

    fn sign(&self, e: usize, from: usize) -> f64 {
        if self.ends[e].0 == from {
            1.0
        } else {
            -1.0
        }
    }
}

/// Builds the edge measure of a signed edge-position cycle with unit tangent
/// density (weight `h` per edge).
pub fn cycle_measure(support: &Support, cycle: &[(usize, f64)]) -> EdgeMeasure {
    let h = support.grid.h;
    let mut m = EdgeMeasure::zero(support.grid);
    for &(e, s) in cycle {
        m.add(support.edges[e], s * h).expect("support edge");
    }
    m
}

/// Basis of the silent (divergence-free) edge measures on the support: the
/// fundamental cycles of a spanning forest, `E - V + C` of them.
pub fn silent_basis(support: &Support) -> Vec<EdgeMeasure> {
    support
        .graph()
        .fundamental_cycles()
        .iter()
        .map(|c| cycle_measure(support, c))
        .collect()
}

/// True iff the support graph has no cycle.
pub fn treelike_check(support: &Support) -> bool {
    support.graph().cycle_rank() == 0
}
