//! Stream functions, suplevel sets, the discrete co-area identity and the
//! loop decomposition of divergence-free edge measures.
//!
//! A divergence-free edge measure is the rotated gradient of a piecewise
//! constant cell function that vanishes outside the grid. Slicing that cell
//! function at each of its finitely many jump values yields nested suplevel
//! sets; their oriented boundaries, weighted by the level thickness, add back
//! up to the original measure edge by edge.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sort_loops, trace_mask, Edge, Grid, OrientedLoop, PixelSet};
use crate::measures::{check_divergence_free, edge_measure_from_loop, EdgeMeasure, TotalVariation};

/// Piecewise constant function on the cells of a grid, zero outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFunction {
    grid: Grid,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CellEntry {
    i: usize,
    j: usize,
    v: f64,
}

#[derive(Serialize, Deserialize)]
struct CellFunctionRepr {
    grid: Grid,
    cells: Vec<CellEntry>,
}

impl Serialize for CellFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let cells = self
            .values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(k, &v)| {
                let (i, j) = self.grid.cell_coords(k);
                CellEntry { i, j, v }
            })
            .collect();
        CellFunctionRepr {
            grid: self.grid,
            cells,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CellFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = CellFunctionRepr::deserialize(d)?;
        r.grid.validate().map_err(D::Error::custom)?;
        let mut values = vec![0.0; r.grid.cell_count()];
        for c in r.cells {
            if c.i >= r.grid.nx || c.j >= r.grid.ny {
                return Err(D::Error::custom(format!(
                    "cell ({}, {}) outside the grid",
                    c.i, c.j
                )));
            }
            if !c.v.is_finite() {
                return Err(D::Error::custom("non-finite cell value"));
            }
            values[r.grid.cell_index(c.i, c.j)] = c.v;
        }
        Ok(CellFunction {
            grid: r.grid,
            values,
        })
    }
}

impl CellFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::LengthMismatch {
                expected: grid.cell_count(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("cell function values must be finite".into()));
        }
        Ok(CellFunction { grid, values })
    }

    pub fn zero(grid: Grid) -> Self {
        CellFunction {
            grid,
            values: vec![0.0; grid.cell_count()],
        }
    }

    /// `c` on the cells of `set`, zero elsewhere.
    pub fn indicator(set: &PixelSet, c: f64) -> Self {
        let mut values = vec![0.0; set.grid().cell_count()];
        for &k in set.cells() {
            values[k] = c;
        }
        CellFunction {
            grid: *set.grid(),
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.cell_index(i, j)]
    }

    pub fn add(&self, other: &CellFunction) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(CellFunction {
            grid: self.grid,
            values,
        })
    }

    /// Sorted distinct values together with the exterior value 0.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .values
            .iter()
            .copied()
            .chain(std::iter::once(0.0))
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

/// Rotated gradient of a cell function: on every edge the jump of the
/// function across it, scaled by `h`, signed so that the measure circulates
/// counterclockwise around suplevel sets.
pub fn rotated_gradient(phi: &CellFunction) -> EdgeMeasure {
    let g = phi.grid;
    let value = |c: Option<usize>| c.map_or(0.0, |k| phi.values[k]);
    let weights = g
        .edges()
        .map(|e| {
            let (left, right) = g.edge_cells(e);
            g.h * (value(left) - value(right))
        })
        .collect();
    EdgeMeasure::from_weights(g, weights).expect("one weight per edge")
}

/// Cell function whose rotated gradient is `nu`, normalized to vanish on the
/// unbounded face.
pub fn stream_function(nu: &EdgeMeasure) -> Result<CellFunction> {
    check_divergence_free(nu)?;
    let g = *nu.grid();
    let mut values = vec![0.0; g.cell_count()];
    for i in 0..g.nx {
        // Crossing horizontal edges bottom-up from the exterior below.
        let mut acc = 0.0;
        for j in 0..g.ny {
            acc += nu.get(Edge::h(i, j));
            values[g.cell_index(i, j)] = acc / g.h;
        }
    }
    Ok(CellFunction { grid: g, values })
}

/// Cells where `phi > t`. For `t < 0` the suplevel set also contains the
/// whole exterior of the grid, which a pixel set cannot represent.
pub fn suplevel_set(phi: &CellFunction, t: f64) -> PixelSet {
    let mask: Vec<bool> = phi.values.iter().map(|&v| v > t).collect();
    PixelSet::from_mask(phi.grid, &mask)
}

/// Suplevel set membership for `{phi > t}`, returned as the finite set to
/// trace together with a flag telling whether it is the set itself (`true`)
/// or its complement (`false`, when the suplevel set contains the exterior).
fn finite_side(phi: &CellFunction, t: f64) -> (Vec<bool>, bool) {
    if t >= 0.0 {
        (phi.values.iter().map(|&v| v > t).collect(), true)
    } else {
        (phi.values.iter().map(|&v| v <= t).collect(), false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoareaLevel {
    pub t_lo: f64,
    pub t_hi: f64,
    pub perimeter: f64,
}

/// Perimeter of the suplevel set on each interval between consecutive
/// breakpoints; intervals with empty boundary are omitted.
pub fn coarea_profile(phi: &CellFunction) -> Vec<CoareaLevel> {
    let bp = phi.breakpoints();
    bp.windows(2)
        .filter_map(|w| {
            let (mask, _) = finite_side(phi, w[0]);
            let count = PixelSet::from_mask(phi.grid, &mask).boundary_edge_count();
            (count > 0).then(|| CoareaLevel {
                t_lo: w[0],
                t_hi: w[1],
                perimeter: phi.grid.h * count as f64,
            })
        })
        .collect()
}

/// `sum |interval| * perimeter` over the co-area profile.
pub fn coarea_checksum(profile: &[CoareaLevel]) -> f64 {
    profile
        .iter()
        .map(|l| (l.t_hi - l.t_lo) * l.perimeter)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionLevel {
    pub t_lo: f64,
    pub t_hi: f64,
    pub loops: Vec<OrientedLoop>,
    pub masses: Vec<f64>,
}

impl DecompositionLevel {
    pub fn thickness(&self) -> f64 {
        self.t_hi - self.t_lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopDecomposition {
    pub grid: Grid,
    pub levels: Vec<DecompositionLevel>,
}

impl LoopDecomposition {
    pub fn loop_count(&self) -> usize {
        self.levels.iter().map(|l| l.loops.len()).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.levels.iter().flat_map(|l| &l.masses).sum()
    }

    /// Per edge index: `h * sum over levels of thickness * [edge on a loop]`.
    pub fn edge_mass_profile(&self) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.grid.edge_count()];
        for level in &self.levels {
            for lp in &level.loops {
                for (e, _) in lp.edges(&self.grid)? {
                    acc[self.grid.edge_index(e)?] += level.thickness();
                }
            }
        }
        Ok(acc.into_iter().map(|a| a * self.grid.h).collect())
    }
}

/// Loop decomposition of a divergence-free edge measure: for every interval
/// between consecutive values of the stream function, the boundary loops of
/// the suplevel set (outer loops counterclockwise, holes clockwise).
pub fn decompose(nu: &EdgeMeasure) -> Result<LoopDecomposition> {
    let phi = stream_function(nu)?;
    let g = phi.grid;
    let bp = phi.breakpoints();
    let levels: Vec<DecompositionLevel> = bp
        .par_windows(2)
        .filter_map(|w| {
            let (t_lo, t_hi) = (w[0], w[1]);
            let (mask, is_set) = finite_side(&phi, t_lo);
            let mut loops = trace_mask(&g, &mask);
            if !is_set {
                loops = loops.iter().map(OrientedLoop::reversed).collect();
            }
            if loops.is_empty() {
                return None;
            }
            sort_loops(&mut loops);
            let masses = loops
                .iter()
                .map(|l| (t_hi - t_lo) * l.length(g.h))
                .collect();
            Some(DecompositionLevel {
                t_lo,
                t_hi,
                loops,
                masses,
            })
        })
        .collect();
    Ok(LoopDecomposition { grid: g, levels })
}

/// Sum over levels and loops of thickness times the loop measure.
pub fn reconstruct(d: &LoopDecomposition) -> Result<EdgeMeasure> {
    let g = d.grid;
    let mut acc = vec![0.0; g.edge_count()];
    for level in &d.levels {
        for lp in &level.loops {
            for (e, s) in lp.edges(&g)? {
                acc[g.edge_index(e)?] += s * level.thickness();
            }
        }
    }
    EdgeMeasure::from_weights(g, acc.into_iter().map(|a| a * g.h).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentingAtom {
    /// Weight of the atom: loop length times level thickness.
    pub mass: f64,
    #[serde(rename = "loop")]
    pub lp: OrientedLoop,
    /// Total variation of the unit-tangent loop measure `R_gamma / length`.
    pub normalized_tv: f64,
}

/// Atoms of the representing measure over normalized loop measures; the
/// masses sum to the total variation of the decomposed measure.
pub fn representing_measure(d: &LoopDecomposition) -> Result<Vec<RepresentingAtom>> {
    let mut out = Vec::new();
    for level in &d.levels {
        for lp in level.loops.iter().filter(|l| !l.is_degenerate()) {
            let len = lp.length(d.grid.h);
            let tv = edge_measure_from_loop(&d.grid, lp, 1.0)?.tv_norm() / len;
            out.push(RepresentingAtom {
                mass: level.thickness() * len,
                lp: lp.clone(),
                normalized_tv: tv,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Orientation, Vertex};
    use crate::measures::divergence;

    fn nested() -> CellFunction {
        let g = Grid::unit(7, 7);
        let outer = CellFunction::indicator(&PixelSet::rect(g, 1, 1, 6, 6).unwrap(), 1.0);
        let center = CellFunction::indicator(&PixelSet::rect(g, 3, 3, 4, 4).unwrap(), 1.0);
        outer.add(&center).unwrap()
    }

    #[test]
    fn rotated_gradient_examples() {
        let g = Grid::unit(3, 3);
        let one = CellFunction::indicator(&PixelSet::rect(g, 1, 1, 2, 2).unwrap(), 1.0);
        let m = rotated_gradient(&one);
        let sq =
            edge_measure_from_loop(&g, &OrientedLoop::rectangle(1, 1, 2, 2).unwrap(), 1.0).unwrap();
        assert_eq!(m, sq);
        assert_eq!(m.tv_norm(), 4.0);
        let constant = CellFunction::new(Grid::unit(2, 2), vec![5.0; 4]).unwrap();
        // Constant inside the grid still jumps to the exterior value 0.
        assert_eq!(rotated_gradient(&constant).tv_norm(), 5.0 * 8.0);
        assert!(rotated_gradient(&CellFunction::zero(g)).is_zero());
        let g5 = Grid::unit(5, 5);
        let block = CellFunction::indicator(&PixelSet::rect(g5, 1, 1, 4, 4).unwrap(), 2.0);
        let m = rotated_gradient(&block);
        assert_eq!(m.nonzero().count(), 12);
        assert!(m.weights().iter().all(|w| *w == 0.0 || w.abs() == 2.0));
        assert_eq!(m.tv_norm(), 24.0);
        assert_eq!(divergence(&m).max_abs(), 0.0);
    }

    #[test]
    fn stream_function_examples() {
        let g = Grid::unit(3, 3);
        let sq =
            edge_measure_from_loop(&g, &OrientedLoop::rectangle(1, 1, 2, 2).unwrap(), 1.0).unwrap();
        let phi = stream_function(&sq).unwrap();
        assert_eq!(
            phi,
            CellFunction::indicator(&PixelSet::rect(g, 1, 1, 2, 2).unwrap(), 1.0)
        );
        assert_eq!(
            stream_function(&EdgeMeasure::zero(g)).unwrap(),
            CellFunction::zero(g)
        );
        let n = nested();
        assert_eq!(stream_function(&rotated_gradient(&n)).unwrap(), n);
        let open = EdgeMeasure::from_entries(g, [(Edge::v(1, 1), 1.0)]).unwrap();
        match stream_function(&open) {
            Err(Error::NotDivergenceFree { vertex, .. }) => {
                assert!(vertex == Vertex(1, 1) || vertex == Vertex(1, 2))
            }
            other => panic!("expected divergence error, got {other:?}"),
        }
    }

    #[test]
    fn suplevel_examples() {
        let g = Grid::unit(4, 4);
        let block = PixelSet::rect(g, 1, 1, 3, 3).unwrap();
        let phi = CellFunction::indicator(&block, 1.0);
        assert_eq!(suplevel_set(&phi, 0.5), block);
        assert!(suplevel_set(&phi, 1.5).is_empty());
        assert_eq!(suplevel_set(&phi, -0.5), PixelSet::full(g));
    }

    #[test]
    fn coarea_examples() {
        let g = Grid::unit(5, 5);
        let phi = CellFunction::indicator(&PixelSet::rect(g, 1, 1, 4, 4).unwrap(), 2.0);
        let p = coarea_profile(&phi);
        assert_eq!(
            p,
            vec![CoareaLevel {
                t_lo: 0.0,
                t_hi: 2.0,
                perimeter: 12.0
            }]
        );
        assert_eq!(coarea_checksum(&p), 24.0);
        let p = coarea_profile(&nested());
        assert_eq!(
            p,
            vec![
                CoareaLevel {
                    t_lo: 0.0,
                    t_hi: 1.0,
                    perimeter: 20.0
                },
                CoareaLevel {
                    t_lo: 1.0,
                    t_hi: 2.0,
                    perimeter: 4.0
                },
            ]
        );
        assert_eq!(coarea_checksum(&p), 24.0);
        assert!(coarea_profile(&CellFunction::zero(g)).is_empty());
    }

    #[test]
    fn negative_values_use_the_complement() {
        let g = Grid::unit(4, 4);
        let phi = CellFunction::indicator(&PixelSet::rect(g, 1, 1, 3, 2).unwrap(), -3.0);
        let nu = rotated_gradient(&phi);
        assert_eq!(coarea_checksum(&coarea_profile(&phi)), nu.tv_norm());
        let d = decompose(&nu).unwrap();
        assert_eq!(d.levels.len(), 1);
        assert_eq!(d.levels[0].loops[0].orientation(), Orientation::Cw);
        assert_eq!(reconstruct(&d).unwrap(), nu);
    }

    #[test]
    fn decompose_examples() {
        let g = Grid::unit(3, 3);
        let sq =
            edge_measure_from_loop(&g, &OrientedLoop::rectangle(1, 1, 2, 2).unwrap(), 3.0).unwrap();
        let d = decompose(&sq).unwrap();
        assert_eq!(d.levels.len(), 1);
        assert_eq!((d.levels[0].t_lo, d.levels[0].t_hi), (0.0, 3.0));
        assert_eq!(d.levels[0].loops.len(), 1);
        assert_eq!(d.levels[0].masses, vec![12.0]);
        assert_eq!(reconstruct(&d).unwrap(), sq);

        let g7 = Grid::unit(7, 7);
        let mut ring = PixelSet::rect(g7, 1, 1, 6, 6).unwrap().mask();
        ring[g7.cell_index(3, 3)] = false;
        let annulus = CellFunction::new(
            g7,
            ring.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let d = decompose(&rotated_gradient(&annulus)).unwrap();
        assert_eq!(d.levels.len(), 1);
        let loops = &d.levels[0].loops;
        assert_eq!(loops.len(), 2);
        assert_eq!(
            (loops[0].orientation(), loops[0].edge_count()),
            (Orientation::Ccw, 20)
        );
        assert_eq!(
            (loops[1].orientation(), loops[1].edge_count()),
            (Orientation::Cw, 4)
        );
    }

    #[test]
    fn reconstruct_examples() {
        let g = Grid::unit(2, 2);
        let empty = LoopDecomposition {
            grid: g,
            levels: vec![],
        };
        assert!(reconstruct(&empty).unwrap().is_zero());
        let n = nested();
        let nu = rotated_gradient(&n);
        let mut d = decompose(&nu).unwrap();
        d.levels[0].loops.reverse();
        assert_eq!(reconstruct(&d).unwrap(), nu);
    }

    #[test]
    fn representing_measure_examples() {
        let g = Grid::unit(3, 3);
        let sq =
            edge_measure_from_loop(&g, &OrientedLoop::rectangle(1, 1, 2, 2).unwrap(), 3.0).unwrap();
        let atoms = representing_measure(&decompose(&sq).unwrap()).unwrap();
        assert_eq!(atoms.len(), 1);
        assert_eq!(atoms[0].mass, 12.0);
        assert_eq!(atoms[0].normalized_tv, 1.0);
        let atoms =
            representing_measure(&decompose(&rotated_gradient(&nested())).unwrap()).unwrap();
        let masses: Vec<f64> = atoms.iter().map(|a| a.mass).collect();
        assert_eq!(masses, vec![20.0, 4.0]);
    }
}
