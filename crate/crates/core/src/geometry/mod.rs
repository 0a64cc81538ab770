//! Pixel-grid geometry: lattice indexing, pixel sets of finite perimeter,
//! 4-connected components and oriented boundary loops.

mod contour;
mod grid;
mod pixels;
mod segments;

pub use contour::{boundary_curves, BoundaryCurves, Orientation, OrientedLoop};
pub use grid::{Edge, EdgeKind, Grid, Vertex};
pub use pixels::{perimeter, pixel_components, PixelSet};
pub use segments::{segment_separation_check, Segment, SegmentFamily, SeparationReport};

pub(crate) use contour::{sort_loops, trace_mask};
