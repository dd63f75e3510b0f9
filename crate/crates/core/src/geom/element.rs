use serde::{Deserialize, Serialize};

use super::quadrature::QuadraticHeading;
use super::Pose2;
use crate::error::{Error, Result};

/// Slack allowed when an arclength lands a hair past the element end through
/// floating point accumulation.
const END_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    #[serde(rename = "st")]
    Straight,
    #[serde(rename = "ta")]
    TransitionalArc,
    #[serde(rename = "ca")]
    CircularArc,
}

impl Shape {
    /// The compact-map token (`st`, `ta`, `ca`).
    pub fn token(self) -> &'static str {
        match self {
            Shape::Straight => "st",
            Shape::TransitionalArc => "ta",
            Shape::CircularArc => "ca",
        }
    }

    pub fn from_token(token: &str) -> Option<Shape> {
        match token {
            "st" => Some(Shape::Straight),
            "ta" => Some(Shape::TransitionalArc),
            "ca" => Some(Shape::CircularArc),
            _ => None,
        }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// A straight, a circular arc or a clothoid whose curvature ramps linearly
/// from `start_curvature` to `end_curvature` over `length`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackElement {
    pub shape: Shape,
    pub length: f64,
    pub start_curvature: f64,
    pub end_curvature: f64,
}

impl TrackElement {
    pub fn straight(length: f64) -> Self {
        TrackElement {
            shape: Shape::Straight,
            length,
            start_curvature: 0.0,
            end_curvature: 0.0,
        }
    }

    pub fn circular_arc(length: f64, curvature: f64) -> Self {
        TrackElement {
            shape: Shape::CircularArc,
            length,
            start_curvature: curvature,
            end_curvature: curvature,
        }
    }

    pub fn transitional_arc(length: f64, start_curvature: f64, end_curvature: f64) -> Self {
        TrackElement {
            shape: Shape::TransitionalArc,
            length,
            start_curvature,
            end_curvature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length.is_finite() && self.start_curvature.is_finite() && self.end_curvature.is_finite()) {
            return Err(Error::domain(format!("non-finite element parameters: {self:?}")));
        }
        if self.length <= 0.0 {
            return Err(Error::domain(format!("element length must be positive, got {}", self.length)));
        }
        match self.shape {
            Shape::Straight if self.start_curvature != 0.0 || self.end_curvature != 0.0 => {
                Err(Error::domain("straight element with nonzero curvature"))
            }
            Shape::CircularArc if self.start_curvature != self.end_curvature => {
                Err(Error::domain("circular arc with varying curvature"))
            }
            Shape::CircularArc if self.start_curvature == 0.0 => {
                Err(Error::domain("circular arc with zero curvature"))
            }
            _ => Ok(()),
        }
    }

    /// Curvature at arclength `s`.
    pub fn curvature_at(&self, s: f64) -> f64 {
        match self.shape {
            Shape::Straight => 0.0,
            Shape::CircularArc => self.start_curvature,
            Shape::TransitionalArc => {
                self.start_curvature + (self.end_curvature - self.start_curvature) * s / self.length
            }
        }
    }

    /// Unwrapped heading change from the element start to arclength `s`.
    pub fn heading_change(&self, s: f64) -> f64 {
        let k0 = self.start_curvature;
        let dk = self.end_curvature - self.start_curvature;
        match self.shape {
            Shape::Straight => 0.0,
            Shape::CircularArc => k0 * s,
            Shape::TransitionalArc => k0 * s + dk * s * s / (2.0 * self.length),
        }
    }

    /// The portion of this element from arclength `s` to its end.
    pub fn remainder_from(&self, s: f64) -> TrackElement {
        TrackElement {
            shape: self.shape,
            length: self.length - s,
            start_curvature: self.curvature_at(s),
            end_curvature: self.end_curvature,
        }
    }

    pub(crate) fn heading_polynomial(&self, psi0: f64) -> QuadraticHeading {
        let c = match self.shape {
            Shape::TransitionalArc => (self.end_curvature - self.start_curvature) / (2.0 * self.length),
            _ => 0.0,
        };
        QuadraticHeading {
            psi0,
            k0: self.start_curvature,
            c,
        }
    }

    /// Pose at `s` without range checks; `s` must lie in `[0, length]`.
    pub(crate) fn pose_unchecked(&self, start: &Pose2, s: f64) -> Pose2 {
        let psi0 = start.heading;
        let heading = psi0 + self.heading_change(s);
        let (dx, dy) = match self.shape {
            Shape::Straight => (s * psi0.cos(), s * psi0.sin()),
            Shape::CircularArc => {
                let half = 0.5 * self.start_curvature * s;
                let chord = s * sinc(half);
                let dir = psi0 + half;
                (chord * dir.cos(), chord * dir.sin())
            }
            Shape::TransitionalArc => {
                let d = self.heading_polynomial(psi0).displacement(0.0, s);
                (d[0], d[1])
            }
        };
        Pose2::new(start.x + dx, start.y + dy, heading, self.curvature_at(s))
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Pose reached after travelling `s` meters along `element` from `start`.
///
/// Straights and circular arcs use closed forms; transitional arcs integrate
/// the heading polynomial by adaptive quadrature to 1e-10 m.
pub fn element_pose_at(start: &Pose2, element: &TrackElement, s: f64) -> Result<Pose2> {
    element.validate()?;
    if !start.is_finite() || !s.is_finite() {
        return Err(Error::domain("non-finite pose or arclength"));
    }
    if s < 0.0 || s > element.length + END_SLACK {
        return Err(Error::domain(format!(
            "arclength {s} outside [0, {}]",
            element.length
        )));
    }
    Ok(element.pose_unchecked(start, s.min(element.length)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn origin() -> Pose2 {
        Pose2::new(0.0, 0.0, 0.0, 0.0)
    }

    #[test]
    fn straight_closed_form() {
        let p = element_pose_at(&origin(), &TrackElement::straight(100.0), 100.0).unwrap();
        assert_eq!((p.x, p.y, p.heading), (100.0, 0.0, 0.0));
    }

    #[test]
    fn quarter_circle() {
        let p = element_pose_at(&origin(), &TrackElement::circular_arc(25.0 * PI, 1.0 / 50.0), 25.0 * PI).unwrap();
        assert!((p.x - 50.0).abs() < 1e-12);
        assert!((p.y - 50.0).abs() < 1e-12);
        assert!((p.heading - PI / 2.0).abs() < 1e-15);
        assert_eq!(p.curvature, 0.02);
    }

    #[test]
    fn right_turn_goes_south() {
        let p = element_pose_at(&origin(), &TrackElement::circular_arc(10.0, -1.0 / 213.0), 10.0).unwrap();
        assert!(p.y < 0.0);
        assert!(p.heading < 0.0);
    }

    #[test]
    fn ramp_midpoint_curvature() {
        let e = TrackElement::transitional_arc(76.0, 0.0, 1.0 / 213.0);
        let p = element_pose_at(&origin(), &e, 38.0).unwrap();
        assert!((p.curvature - 1.0 / 426.0).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_is_domain_error() {
        let e = TrackElement::straight(10.0);
        assert!(matches!(element_pose_at(&origin(), &e, 10.5), Err(Error::Domain(_))));
        assert!(matches!(element_pose_at(&origin(), &e, -0.1), Err(Error::Domain(_))));
        assert!(matches!(element_pose_at(&origin(), &e, f64::NAN), Err(Error::Domain(_))));
        let bad = Pose2 { x: f64::INFINITY, ..origin() };
        assert!(element_pose_at(&bad, &e, 1.0).is_err());
    }

    #[test]
    fn invalid_elements_rejected() {
        assert!(TrackElement::straight(0.0).validate().is_err());
        assert!(TrackElement::straight(-1.0).validate().is_err());
        assert!(TrackElement::circular_arc(5.0, 0.0).validate().is_err());
        let mut st = TrackElement::straight(3.0);
        st.end_curvature = 0.1;
        assert!(st.validate().is_err());
        assert!(TrackElement::transitional_arc(5.0, 0.0, f64::NAN).validate().is_err());
    }

    #[test]
    fn remainder_keeps_ramp_slope() {
        let e = TrackElement::transitional_arc(100.0, 0.0, 0.01);
        let r = e.remainder_from(40.0);
        assert!((r.length - 60.0).abs() < 1e-12);
        assert!((r.start_curvature - 0.004).abs() < 1e-15);
        let slope = (r.end_curvature - r.start_curvature) / r.length;
        assert!((slope - 1e-4).abs() < 1e-15);
    }
}
