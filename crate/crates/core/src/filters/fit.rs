//! Straight-line and circle fits over the filtered positions of one segment.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use super::KinematicState;
use crate::error::{Error, Result};
use crate::geom::{normalize_angle, Pose2};
use crate::trackmap::{IdentifiedSegment, SegmentShape};

/// Circles with a larger algebraic radius are treated as straight.
pub const MAX_FIT_RADIUS: f64 = 100_000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleFit {
    pub center: [f64; 2],
    pub radius: f64,
    /// One-sigma radius uncertainty from the residual scatter.
    pub radius_std: f64,
    pub rms: f64,
}

fn weight(state: &KinematicState) -> f64 {
    let tr = state.position_covariance().trace();
    if tr > 0.0 {
        2.0 / tr
    } else {
        1.0
    }
}

fn split(states: &[(f64, KinematicState)]) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
    if states.len() < 3 {
        return Err(Error::domain(format!("segment fit needs at least 3 states, got {}", states.len())));
    }
    if states.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::domain("segment states are not time-ordered"));
    }
    Ok(states.iter().map(|(_, s)| (s.position(), weight(s))).unzip())
}

/// Total-least-squares line, heading oriented with the direction of travel.
pub fn fit_straight_params(states: &[(f64, KinematicState)]) -> Result<IdentifiedSegment> {
    let (pts, w) = split(states)?;
    let wsum: f64 = w.iter().sum();
    let cx = pts.iter().zip(&w).map(|(p, w)| w * p[0]).sum::<f64>() / wsum;
    let cy = pts.iter().zip(&w).map(|(p, w)| w * p[1]).sum::<f64>() / wsum;
    let mut scatter = Matrix2::zeros();
    for (p, w) in pts.iter().zip(&w) {
        let d = Vector2::new(p[0] - cx, p[1] - cy);
        scatter += d * d.transpose() * *w;
    }
    let eig = scatter.symmetric_eigen();
    let major = if eig.eigenvalues[0] >= eig.eigenvalues[1] { 0 } else { 1 };
    let mut dir = eig.eigenvectors.column(major).into_owned();
    let first = pts[0];
    let last = pts[pts.len() - 1];
    if dir.dot(&Vector2::new(last[0] - first[0], last[1] - first[1])) < 0.0 {
        dir = -dir;
    }
    let along = |p: &[f64; 2]| (p[0] - cx) * dir[0] + (p[1] - cy) * dir[1];
    let across = |p: &[f64; 2]| -(p[0] - cx) * dir[1] + (p[1] - cy) * dir[0];
    let s0 = along(&first);
    let length = along(&last) - s0;
    if !(length > 0.0) {
        return Err(Error::Degenerate("straight segment has no extent along its axis".into()));
    }
    let rms = (pts.iter().map(|p| across(p).powi(2)).sum::<f64>() / pts.len() as f64).sqrt();
    Ok(IdentifiedSegment {
        shape: SegmentShape::Straight,
        start_time: states[0].0,
        end_time: states[states.len() - 1].0,
        anchor: Pose2::new(cx + s0 * dir[0], cy + s0 * dir[1], dir[1].atan2(dir[0]), 0.0),
        length,
        curvature: 0.0,
        fit_rms: rms,
    })
}

/// Geometric circle fit: an algebraic (Kasa) fit refined by Gauss-Newton on
/// the radial residuals.
pub fn fit_circle(points: &[[f64; 2]], weights: Option<&[f64]>) -> Result<CircleFit> {
    let n = points.len();
    if n < 3 {
        return Err(Error::domain(format!("circle fit needs at least 3 points, got {n}")));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    // Centre the data to keep the normal equations well conditioned.
    let wsum: f64 = (0..n).map(w).sum();
    let mx = (0..n).map(|i| w(i) * points[i][0]).sum::<f64>() / wsum;
    let my = (0..n).map(|i| w(i) * points[i][1]).sum::<f64>() / wsum;
    let local: Vec<[f64; 2]> = points.iter().map(|p| [p[0] - mx, p[1] - my]).collect();

    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for (i, p) in local.iter().enumerate() {
        let row = Vector3::new(p[0], p[1], 1.0);
        let z = p[0] * p[0] + p[1] * p[1];
        a += row * row.transpose() * w(i);
        b += row * (z * w(i));
    }
    let sol = a
        .cholesky()
        .map(|c| c.solve(&b))
        .ok_or_else(|| Error::Degenerate("circle fit normal equations are singular".into()))?;
    let (mut cx, mut cy) = (0.5 * sol[0], 0.5 * sol[1]);
    let r2 = sol[2] + cx * cx + cy * cy;
    let mut r = r2.max(0.0).sqrt();
    if !(r.is_finite()) || r > MAX_FIT_RADIUS || r == 0.0 {
        return Err(Error::Degenerate(format!("points are nearly collinear (radius {r:.0} m)")));
    }

    let mut normal = Matrix3::zeros();
    for _ in 0..50 {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (i, p) in local.iter().enumerate() {
            let (dx, dy) = (p[0] - cx, p[1] - cy);
            let d = dx.hypot(dy);
            if d == 0.0 {
                continue;
            }
            let res = d - r;
            let j = Vector3::new(-dx / d, -dy / d, -1.0);
            jtj += j * j.transpose() * w(i);
            jtr += j * (res * w(i));
        }
        normal = jtj;
        let Some(step) = jtj.cholesky().map(|c| c.solve(&(-jtr))) else {
            return Err(Error::Degenerate("circle refinement is singular".into()));
        };
        cx += step[0];
        cy += step[1];
        r += step[2];
        if step.norm() < 1e-12 * r.max(1.0) {
            break;
        }
    }
    if !(r > 0.0) || r > MAX_FIT_RADIUS {
        return Err(Error::Degenerate(format!("circle refinement diverged (radius {r:.0} m)")));
    }
    let rss: f64 = local
        .iter()
        .enumerate()
        .map(|(i, p)| w(i) * ((p[0] - cx).hypot(p[1] - cy) - r).powi(2))
        .sum();
    let dof = (n as f64 - 3.0).max(1.0);
    let radius_var = normal.try_inverse().map_or(f64::INFINITY, |inv| inv[(2, 2)] * rss / dof);
    let rms = (local.iter().map(|p| ((p[0] - cx).hypot(p[1] - cy) - r).powi(2)).sum::<f64>() / n as f64).sqrt();
    Ok(CircleFit {
        center: [cx + mx, cy + my],
        radius: r,
        radius_std: radius_var.sqrt(),
        rms,
    })
}

/// Circular-arc fit. The curvature sign follows the direction of travel and
/// the length is the arc between the first and last projected positions.
pub fn fit_arc_params(states: &[(f64, KinematicState)]) -> Result<IdentifiedSegment> {
    let (pts, w) = split(states)?;
    let fit = fit_circle(&pts, Some(&w))?;
    let [cx, cy] = fit.center;
    let angle = |p: &[f64; 2]| (p[1] - cy).atan2(p[0] - cx);
    let mut swept = 0.0;
    for pair in pts.windows(2) {
        swept += normalize_angle(angle(&pair[1]) - angle(&pair[0]));
    }
    if swept == 0.0 {
        return Err(Error::Degenerate("arc has no angular extent".into()));
    }
    let sign = swept.signum();
    let theta0 = angle(&pts[0]);
    let anchor = Pose2::new(
        cx + fit.radius * theta0.cos(),
        cy + fit.radius * theta0.sin(),
        theta0 + sign * std::f64::consts::FRAC_PI_2,
        sign / fit.radius,
    );
    Ok(IdentifiedSegment {
        shape: SegmentShape::CircularArc,
        start_time: states[0].0,
        end_time: states[states.len() - 1].0,
        anchor,
        length: swept.abs() * fit.radius,
        curvature: sign / fit.radius,
        fit_rms: fit.rms,
    })
}
