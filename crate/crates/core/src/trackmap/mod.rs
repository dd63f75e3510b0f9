//! Compact geometric track maps: assembly from identified segments, global
//! refinement against a position trace, CSV persistence and scoring against
//! a reference polyline.

mod assemble;
mod error_cdf;
mod io;
mod lm;
mod reference;
mod refine;

pub use assemble::{assemble_map, GAP_THRESHOLD};
pub use error_cdf::{map_error_cdf, map_error_vs_chain, nearest_rank, MapErrorStats, Polyline};
pub use io::{map_from_str, map_load, map_save, map_to_string};
pub use reference::{load_reference, parse_reference_csv, parse_reference_geojson};
pub use refine::{refine_map, RefineOptions, Refinement, TracePoint};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{normalize_angle, Chain, GeoPoint, LocalFrame, Pose2, Shape, TrackElement};

/// Curvature mismatch tolerated at joints touching a transitional arc.
pub const CURVATURE_JOINT_TOLERANCE: f64 = 1e-12;

/// Start point, start heading and an ordered element list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackMap {
    pub origin: GeoPoint,
    /// Degrees, counter-clockwise from east.
    pub start_heading_deg: f64,
    pub elements: Vec<TrackElement>,
}

impl TrackMap {
    pub fn new(origin: GeoPoint, start_heading_deg: f64, elements: Vec<TrackElement>) -> Result<TrackMap> {
        let map = TrackMap {
            origin,
            start_heading_deg,
            elements,
        };
        map.validate()?;
        Ok(map)
    }

    /// Builds a map whose start pose is given in `frame` coordinates.
    pub fn from_start_pose(frame: &LocalFrame, start: &Pose2, elements: Vec<TrackElement>) -> Result<TrackMap> {
        let origin = frame.to_geo(start.position());
        let heading = normalize_angle(start.heading).to_degrees().rem_euclid(360.0);
        TrackMap::new(origin, heading, elements)
    }

    pub fn validate(&self) -> Result<()> {
        self.origin.validate()?;
        if !self.start_heading_deg.is_finite() {
            return Err(Error::domain("non-finite start heading"));
        }
        for e in &self.elements {
            e.validate()?;
        }
        for (i, e) in self.elements.iter().enumerate() {
            if e.shape != Shape::TransitionalArc {
                continue;
            }
            if i > 0 {
                let prev = &self.elements[i - 1];
                if (prev.end_curvature - e.start_curvature).abs() > CURVATURE_JOINT_TOLERANCE {
                    return Err(Error::domain(format!(
                        "curvature jump entering transitional arc {}: {} vs {}",
                        i + 1,
                        prev.end_curvature,
                        e.start_curvature
                    )));
                }
            }
            if let Some(next) = self.elements.get(i + 1) {
                if (e.end_curvature - next.start_curvature).abs() > CURVATURE_JOINT_TOLERANCE {
                    return Err(Error::domain(format!(
                        "curvature jump leaving transitional arc {}: {} vs {}",
                        i + 1,
                        e.end_curvature,
                        next.start_curvature
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn start_heading(&self) -> f64 {
        normalize_angle(self.start_heading_deg.to_radians())
    }

    pub fn start_pose(&self, frame: &LocalFrame) -> Pose2 {
        let p = frame.to_local(self.origin);
        let k = self.elements.first().map_or(0.0, |e| e.start_curvature);
        Pose2::new(p[0], p[1], self.start_heading(), k)
    }

    pub fn chain(&self, frame: &LocalFrame) -> Result<Chain> {
        Chain::new(self.start_pose(frame), &self.elements)
    }

    pub fn shapes(&self) -> Vec<Shape> {
        self.elements.iter().map(|e| e.shape).collect()
    }

    pub fn total_length(&self) -> f64 {
        self.elements.iter().map(|e| e.length).sum()
    }

    /// Drops element `index` and merges neighbours that become redundant:
    /// two adjacent transitional arcs become one, as do two straights.
    pub fn without_element(&self, index: usize) -> Result<TrackMap> {
        if index >= self.elements.len() {
            return Err(Error::domain(format!("no element {index}")));
        }
        let mut els = self.elements.clone();
        let removed = els.remove(index);
        if index > 0 && index < els.len() {
            let (a, b) = (els[index - 1], els[index]);
            let merged = match (a.shape, b.shape) {
                (Shape::TransitionalArc, Shape::TransitionalArc) => Some(TrackElement::transitional_arc(
                    a.length + b.length,
                    a.start_curvature,
                    b.end_curvature,
                )),
                (Shape::Straight, Shape::Straight) => Some(TrackElement::straight(a.length + b.length)),
                (Shape::CircularArc, Shape::CircularArc) if a.start_curvature == b.start_curvature => {
                    Some(TrackElement::circular_arc(a.length + b.length, a.start_curvature))
                }
                _ => None,
            };
            if let Some(m) = merged {
                els[index - 1] = m;
                els.remove(index);
            }
        }
        // A removed curved element leaves the transitional arcs around it
        // pointing at curvatures that no longer exist.
        reconcile_transitions(&mut els);
        let _ = removed;
        TrackMap::new(self.origin, self.start_heading_deg, els)
    }
}

/// Makes every transitional arc start and end at its neighbours' curvature.
pub(crate) fn reconcile_transitions(els: &mut [TrackElement]) {
    for i in 0..els.len() {
        if els[i].shape != Shape::TransitionalArc {
            continue;
        }
        if i > 0 {
            els[i].start_curvature = els[i - 1].end_curvature;
        }
        if i + 1 < els.len() && els[i + 1].shape != Shape::TransitionalArc {
            els[i].end_curvature = els[i + 1].start_curvature;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentShape {
    #[serde(rename = "st")]
    Straight,
    #[serde(rename = "ca")]
    CircularArc,
}

impl SegmentShape {
    pub fn shape(self) -> Shape {
        match self {
            SegmentShape::Straight => Shape::Straight,
            SegmentShape::CircularArc => Shape::CircularArc,
        }
    }
}

/// A straight or circular arc identified from a stretch of filter output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedSegment {
    pub shape: SegmentShape,
    pub start_time: f64,
    pub end_time: f64,
    /// Fitted start pose in local coordinates.
    pub anchor: Pose2,
    pub length: f64,
    /// Zero for straights.
    pub curvature: f64,
    pub fit_rms: f64,
}

impl IdentifiedSegment {
    pub fn element(&self) -> TrackElement {
        match self.shape {
            SegmentShape::Straight => TrackElement::straight(self.length),
            SegmentShape::CircularArc => TrackElement::circular_arc(self.length, self.curvature),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) || !self.length.is_finite() {
            return Err(Error::domain(format!("segment length must be positive, got {}", self.length)));
        }
        if self.shape == SegmentShape::Straight && self.curvature != 0.0 {
            return Err(Error::domain("straight segment with nonzero curvature"));
        }
        if self.end_time < self.start_time {
            return Err(Error::domain("segment ends before it starts"));
        }
        self.element().validate()
    }
}
