use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::grid::{Edge, Grid};
use crate::error::{Error, Result};

/// A set of grid cells, stored as sorted unique indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PixelSetRepr")]
pub struct PixelSet {
    grid: Grid,
    cells: Vec<usize>,
}

#[derive(Deserialize)]
struct PixelSetRepr {
    grid: Grid,
    cells: Vec<usize>,
}

impl TryFrom<PixelSetRepr> for PixelSet {
    type Error = Error;

    fn try_from(r: PixelSetRepr) -> Result<Self> {
        r.grid.validate()?;
        PixelSet::new(r.grid, r.cells)
    }
}

impl PixelSet {
    pub fn new(grid: Grid, mut cells: Vec<usize>) -> Result<Self> {
        let count = grid.cell_count();
        if let Some(&index) = cells.iter().find(|&&c| c >= count) {
            return Err(Error::CellOutOfRange { index, count });
        }
        cells.sort_unstable();
        cells.dedup();
        Ok(PixelSet { grid, cells })
    }

    pub fn empty(grid: Grid) -> Self {
        PixelSet {
            grid,
            cells: Vec::new(),
        }
    }

    pub fn full(grid: Grid) -> Self {
        PixelSet {
            grid,
            cells: (0..grid.cell_count()).collect(),
        }
    }

    /// Cells `(i, j)` with `i0 <= i < i1`, `j0 <= j < j1`.
    pub fn rect(grid: Grid, i0: usize, j0: usize, i1: usize, j1: usize) -> Result<Self> {
        if i1 > grid.nx || j1 > grid.ny {
            return Err(Error::CellOutOfRange {
                index: grid.cell_count(),
                count: grid.cell_count(),
            });
        }
        let cells = (j0..j1)
            .flat_map(|j| (i0..i1).map(move |i| grid.cell_index(i, j)))
            .collect();
        PixelSet::new(grid, cells)
    }

    pub(crate) fn from_mask(grid: Grid, mask: &[bool]) -> Self {
        let cells = mask
            .iter()
            .enumerate()
            .filter_map(|(k, &m)| m.then_some(k))
            .collect();
        PixelSet { grid, cells }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.cells.binary_search(&cell).is_ok()
    }

    pub fn is_subset(&self, other: &PixelSet) -> bool {
        self.cells.iter().all(|&c| other.contains(c))
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.grid.cell_count()];
        for &c in &self.cells {
            m[c] = true;
        }
        m
    }

    /// Cells of the grid not in the set.
    pub fn complement(&self) -> PixelSet {
        let mask: Vec<bool> = self.mask().into_iter().map(|b| !b).collect();
        PixelSet::from_mask(self.grid, &mask)
    }

    /// Edges with exactly one incident cell in the set (the exterior of
    /// the grid counts as outside).
    pub fn boundary_edges(&self) -> Vec<Edge> {
        boundary_edges_of_mask(&self.grid, &self.mask())
    }

    pub fn boundary_edge_count(&self) -> usize {
        self.boundary_edges().len()
    }

    pub fn perimeter(&self) -> f64 {
        self.grid.h * self.boundary_edge_count() as f64
    }

    /// 4-connected components, largest first; ties broken by smallest cell.
    pub fn components(&self) -> Vec<PixelSet> {
        let g = self.grid;
        let mask = self.mask();
        let mut seen = vec![false; g.cell_count()];
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        for &start in &self.cells {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            let mut comp = Vec::new();
            while let Some(c) = queue.pop_front() {
                comp.push(c);
                let (i, j) = g.cell_coords(c);
                let neighbours = [
                    (i > 0).then(|| g.cell_index(i - 1, j)),
                    (i + 1 < g.nx).then(|| g.cell_index(i + 1, j)),
                    (j > 0).then(|| g.cell_index(i, j - 1)),
                    (j + 1 < g.ny).then(|| g.cell_index(i, j + 1)),
                ];
                for n in neighbours.into_iter().flatten() {
                    if mask[n] && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
            comp.sort_unstable();
            out.push(PixelSet {
                grid: g,
                cells: comp,
            });
        }
        out.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cells[0].cmp(&b.cells[0])));
        out
    }
}

pub(crate) fn boundary_edges_of_mask(grid: &Grid, mask: &[bool]) -> Vec<Edge> {
    grid.edges()
        .filter(|&e| {
            let (l, r) = grid.edge_cells(e);
            l.is_some_and(|c| mask[c]) != r.is_some_and(|c| mask[c])
        })
        .collect()
}

/// Perimeter of a set given as a cell mask.
pub fn perimeter(set: &PixelSet) -> f64 {
    set.perimeter()
}

/// 4-connected components of a pixel set.
pub fn pixel_components(set: &PixelSet) -> Vec<PixelSet> {
    set.components()
}
