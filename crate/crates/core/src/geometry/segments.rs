use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Segment {
    pub fn new(a: [f64; 2], b: [f64; 2]) -> Self {
        Segment { a, b }
    }

    pub fn length(&self) -> f64 {
        (self.b[0] - self.a[0]).hypot(self.b[1] - self.a[1])
    }

    fn point_distance(&self, p: [f64; 2]) -> f64 {
        let d = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let w = [p[0] - self.a[0], p[1] - self.a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let t = ((w[0] * d[0] + w[1] * d[1]) / len2).clamp(0.0, 1.0);
        (w[0] - t * d[0]).hypot(w[1] - t * d[1])
    }

    fn intersects(&self, other: &Segment) -> bool {
        fn orient(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
            (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
        }
        let d1 = orient(other.a, other.b, self.a);
        let d2 = orient(other.a, other.b, self.b);
        let d3 = orient(self.a, self.b, other.a);
        let d4 = orient(self.a, self.b, other.b);
        (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
    }

    /// Euclidean distance between two segments.
    pub fn distance(&self, other: &Segment) -> f64 {
        if self.intersects(other) {
            return 0.0;
        }
        [
            self.point_distance(other.a),
            self.point_distance(other.b),
            other.point_distance(self.a),
            other.point_distance(self.b),
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFamily {
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    /// Per segment: every other segment lies at distance at least its length
    /// (strictly more in strict mode).
    pub per_segment: Vec<bool>,
    pub passed: bool,
}

/// Checks that each segment is at least its own length away from every other.
pub fn segment_separation_check(family: &SegmentFamily, strict: bool) -> Result<SeparationReport> {
    let segs = &family.segments;
    if let Some(index) = segs
        .iter()
        .position(|s| s.length().is_nan() || s.length() <= 0.0)
    {
        return Err(Error::DegenerateSegment { index });
    }
    let per_segment: Vec<bool> = segs
        .iter()
        .enumerate()
        .map(|(k, sk)| {
            let len = sk.length();
            segs.iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .all(|(_, sj)| {
                    let d = sk.distance(sj);
                    if strict {
                        d > len
                    } else {
                        d >= len
                    }
                })
        })
        .collect();
    let passed = per_segment.iter().all(|&b| b);
    Ok(SeparationReport {
        per_segment,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn collinear(gap: f64) -> SegmentFamily {
        SegmentFamily {
            segments: vec![
                Segment::new([0.0, 0.0], [1.0, 0.0]),
                Segment::new([1.0 + gap, 0.0], [2.0 + gap, 0.0]),
            ],
        }
    }

    #[test]
    fn single_segment_passes() {
        let f = SegmentFamily {
            segments: vec![Segment::new([0.0, 0.0], [0.0, 3.0])],
        };
        assert!(segment_separation_check(&f, true).unwrap().passed);
    }

    #[test]
    fn unit_gap_is_borderline() {
        assert!(
            segment_separation_check(&collinear(1.0), false)
                .unwrap()
                .passed
        );
        assert!(
            !segment_separation_check(&collinear(1.0), true)
                .unwrap()
                .passed
        );
        assert!(
            segment_separation_check(&collinear(1.5), true)
                .unwrap()
                .passed
        );
    }

    #[test]
    fn degenerate_segment_errors() {
        let f = SegmentFamily {
            segments: vec![Segment::new([1.0, 1.0], [1.0, 1.0])],
        };
        assert!(matches!(
            segment_separation_check(&f, false),
            Err(Error::DegenerateSegment { index: 0 })
        ));
    }

    #[test]
    fn crossing_segments_have_zero_distance() {
        let a = Segment::new([0.0, 0.0], [2.0, 2.0]);
        let b = Segment::new([0.0, 2.0], [2.0, 0.0]);
        assert_eq!(a.distance(&b), 0.0);
        let c = Segment::new([0.0, 1.0], [0.0, 2.0]);
        let d = Segment::new([3.0, 0.0], [3.0, 5.0]);
        assert_eq!(c.distance(&d), 3.0);
    }
}
