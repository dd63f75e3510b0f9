//! Planar track geometry.
//!
//! Conventions used throughout the crate: `x` points east, `y` points north,
//! headings are measured counter-clockwise from east, positive curvature is a
//! left turn and a positive signed distance lies left of the direction of
//! travel.

mod element;
pub mod geodetic;
mod project;
mod quadrature;

pub use element::{element_pose_at, Shape, TrackElement};
pub use geodetic::{geo_to_local, local_to_geo, GeoPoint, LocalFrame};
pub use project::{project_point, Chain, Projection};

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Position, heading and curvature at a point of the track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    /// Radians, counter-clockwise from east, in (-pi, pi].
    pub heading: f64,
    /// 1/m, positive for left turns.
    pub curvature: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64, curvature: f64) -> Self {
        Pose2 {
            x,
            y,
            heading: normalize_angle(heading),
            curvature,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn tangent(&self) -> [f64; 2] {
        [self.heading.cos(), self.heading.sin()]
    }

    /// Left-pointing unit normal.
    pub fn normal(&self) -> [f64; 2] {
        [-self.heading.sin(), self.heading.cos()]
    }

    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.x).hypot(p[1] - self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite() && self.curvature.is_finite()
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Signed z-component of the cross product `a x b`.
pub(crate) fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_keeps_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-15);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((normalize_angle(-7.0) - (-7.0 + 2.0 * PI)).abs() < 1e-12);
        assert_eq!(normalize_angle(0.3), 0.3);
    }
}
