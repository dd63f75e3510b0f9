//! Map-constrained positioning: the track centreline as a cross-track
//! measurement on the filtered position.

use nalgebra::{Matrix2, SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{EpochLog, FusedColumns, KinematicState, X, Y};
use crate::geom::{Chain, Projection};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapFusionConfig {
    /// Cross-track map sigma in metres. Defaults to the map's estimated
    /// cross-track accuracy.
    pub sigma_m: Option<f64>,
    /// Lower bound applied to the default sigma.
    pub sigma_floor: f64,
    /// Gate: positions farther than `gate_factor` times the cross-track 3-sigma
    /// plus `gate_offset` from the map are not constrained.
    pub gate_factor: f64,
    pub gate_offset: f64,
    /// Feed the constrained position back into the filter.
    pub closed_loop: bool,
}

impl Default for MapFusionConfig {
    fn default() -> Self {
        MapFusionConfig {
            sigma_m: None,
            sigma_floor: 0.25,
            gate_factor: 3.0,
            gate_offset: 20.0,
            closed_loop: false,
        }
    }
}

impl MapFusionConfig {
    /// The map sigma to use for a map of estimated cross-track `accuracy`.
    pub fn sigma_for(&self, accuracy: Option<f64>) -> f64 {
        match self.sigma_m {
            Some(s) => s,
            None => accuracy.filter(|r| r.is_finite()).unwrap_or(0.0).max(self.sigma_floor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedPosition {
    pub t: f64,
    pub position: [f64; 2],
    pub covariance: Matrix2<f64>,
    /// Arclength of the foot point along the map; NaN when unconstrained.
    pub station: f64,
    pub map_constrained: bool,
}

impl FusedPosition {
    fn passthrough(t: f64, position: [f64; 2], covariance: Matrix2<f64>) -> Self {
        FusedPosition {
            t,
            position,
            covariance,
            station: f64::NAN,
            map_constrained: false,
        }
    }

    pub fn columns(&self) -> FusedColumns {
        FusedColumns {
            x: self.position[0],
            y: self.position[1],
            p_xx: self.covariance[(0, 0)],
            p_xy: self.covariance[(0, 1)],
            p_yy: self.covariance[(1, 1)],
            station: self.station,
            map_constrained: self.map_constrained,
        }
    }
}

/// True when the nearest map point is an end of the map and the position lies
/// beyond it.
fn off_the_ends(proj: &Projection, position: [f64; 2]) -> bool {
    let t = proj.foot_point.tangent();
    let along = t[0] * (position[0] - proj.foot_point.x) + t[1] * (position[1] - proj.foot_point.y);
    along.abs() > 1e-6
}

/// Constrains a position to the map: the cross-track offset and variance
/// shrink by `sigma_m^2 / (P_nn + sigma_m^2)`, the along-track component and
/// variance are kept.
pub fn fuse_position(
    t: f64,
    position: [f64; 2],
    covariance: &Matrix2<f64>,
    map: &Chain,
    sigma_m: f64,
    cfg: &MapFusionConfig,
) -> Result<FusedPosition> {
    if !(sigma_m > 0.0) || !sigma_m.is_finite() {
        return Err(Error::domain(format!("map sigma must be positive, got {sigma_m}")));
    }
    if map.is_empty() {
        return Ok(FusedPosition::passthrough(t, position, *covariance));
    }
    let proj = map.project(position)?;
    if off_the_ends(&proj, position) {
        return Ok(FusedPosition::passthrough(t, position, *covariance));
    }
    let tangent = Vector2::from(proj.foot_point.tangent());
    let normal = Vector2::from(proj.foot_point.normal());
    let rot = Matrix2::from_columns(&[tangent, normal]);
    let local = rot.transpose() * covariance * rot;
    let (ptt, ptn, pnn) = (local[(0, 0)], local[(0, 1)], local[(1, 1)]);
    let d = proj.signed_distance;
    let gate = cfg.gate_factor * 3.0 * pnn.max(0.0).sqrt() + cfg.gate_offset;
    if d.abs() > gate {
        return Ok(FusedPosition::passthrough(t, position, *covariance));
    }
    let shrink = sigma_m * sigma_m / (pnn.max(0.0) + sigma_m * sigma_m);
    let foot = Vector2::new(proj.foot_point.x, proj.foot_point.y);
    let along = tangent.dot(&(Vector2::from(position) - foot));
    let fused = foot + tangent * along + normal * (d * shrink);
    let fused_local = Matrix2::new(ptt, ptn * shrink, ptn * shrink, pnn * shrink);
    let cov = rot * fused_local * rot.transpose();
    Ok(FusedPosition {
        t,
        position: [fused[0], fused[1]],
        covariance: (cov + cov.transpose()) * 0.5,
        station: proj.station,
        map_constrained: true,
    })
}

pub fn fuse_with_map(t: f64, state: &KinematicState, map: &Chain, sigma_m: f64, cfg: &MapFusionConfig) -> Result<FusedPosition> {
    fuse_position(t, state.position(), &state.position_covariance(), map, sigma_m, cfg)
}

/// Kalman update of a full state with the cross-track pseudo-measurement
/// `d = 0`, used for closed-loop operation. Returns `None` when gated out.
pub fn constrain_state(state: &KinematicState, map: &Chain, sigma_m: f64, cfg: &MapFusionConfig) -> Result<Option<KinematicState>> {
    if map.is_empty() {
        return Ok(None);
    }
    let proj = map.project(state.position())?;
    if off_the_ends(&proj, state.position()) {
        return Ok(None);
    }
    let n = proj.foot_point.normal();
    let mut h = SMatrix::<f64, 1, 5>::zeros();
    h[(0, X)] = n[0];
    h[(0, Y)] = n[1];
    let pnn = (h * state.p * h.transpose())[(0, 0)];
    if proj.signed_distance.abs() > cfg.gate_factor * 3.0 * pnn.max(0.0).sqrt() + cfg.gate_offset {
        return Ok(None);
    }
    let innovation = SVector::<f64, 1>::new(-proj.signed_distance);
    let r = SMatrix::<f64, 1, 1>::new(sigma_m * sigma_m);
    Ok(crate::filters::linear_update(state, &h, innovation, &r).map(|(s, _)| s))
}

/// Appends fused columns to every available epoch of a state log.
pub fn fuse_log(rows: &mut [EpochLog], map: &Chain, sigma_m: f64, cfg: &MapFusionConfig) -> Result<()> {
    for r in rows.iter_mut() {
        if !r.available {
            r.fused = None;
            continue;
        }
        let f = fuse_position(r.t, r.position(), &r.position_covariance(), map, sigma_m, cfg)?;
        r.fused = Some(f.columns());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{Mat5, Vec5};
    use crate::geom::{Pose2, TrackElement};

    fn straight() -> Chain {
        Chain::new(Pose2::new(0.0, 0.0, 0.0, 0.0), &[TrackElement::straight(1000.0)]).unwrap()
    }

    #[test]
    fn offset_shrinks_by_scalar_gain() {
        let cov = Matrix2::new(25.0, 0.0, 0.0, 25.0);
        let f = fuse_position(0.0, [300.0, 10.0], &cov, &straight(), 0.5, &MapFusionConfig::default()).unwrap();
        let expect = 10.0 * 0.25 / (25.0 + 0.25);
        assert!((f.position[1] - expect).abs() < 1e-12);
        assert!((f.position[1] - 0.09901).abs() < 1e-5);
        assert_eq!(f.position[0], 300.0);
        assert!((f.covariance[(1, 1)] - 25.0 * 0.25 / 25.25).abs() < 1e-12);
        assert_eq!(f.covariance[(0, 0)], 25.0);
        assert!(f.map_constrained);
        assert_eq!(f.station, 300.0);
    }

    #[test]
    fn on_track_with_tiny_map_sigma() {
        let cov = Matrix2::new(9.0, 0.0, 0.0, 4.0);
        let f = fuse_position(0.0, [50.0, 0.0], &cov, &straight(), 1e-9, &MapFusionConfig::default()).unwrap();
        assert_eq!(f.position, [50.0, 0.0]);
        assert!(f.covariance[(1, 1)] < 1e-12);
        assert_eq!(f.covariance[(0, 0)], 9.0);
    }

    #[test]
    fn far_positions_pass_through() {
        let cov = Matrix2::identity() * 4.0;
        let f = fuse_position(0.0, [200.0, 500.0], &cov, &straight(), 0.5, &MapFusionConfig::default()).unwrap();
        assert!(!f.map_constrained);
        assert_eq!(f.position, [200.0, 500.0]);
        let empty = Chain::new(Pose2::new(0.0, 0.0, 0.0, 0.0), &[]).unwrap();
        assert!(!fuse_position(0.0, [0.0, 0.0], &cov, &empty, 0.5, &MapFusionConfig::default()).unwrap().map_constrained);
    }

    #[test]
    fn along_track_variance_is_invariant_on_an_arc() {
        let arc = Chain::new(Pose2::new(0.0, 0.0, 0.3, 0.0), &[TrackElement::circular_arc(500.0, 1.0 / 213.0)]).unwrap();
        let p = arc.pose_at_station(200.0).unwrap();
        let pos = [p.x + 3.0 * p.normal()[0], p.y + 3.0 * p.normal()[1]];
        let cov = Matrix2::new(16.0, 3.0, 3.0, 9.0);
        let f = fuse_position(0.0, pos, &cov, &arc, 0.5, &MapFusionConfig::default()).unwrap();
        let t = Vector2::from(p.tangent());
        let n = Vector2::from(p.normal());
        assert!(((t.transpose() * f.covariance * t)[(0, 0)] - (t.transpose() * cov * t)[(0, 0)]).abs() < 1e-9);
        let pnn = (n.transpose() * cov * n)[(0, 0)];
        assert!((n.transpose() * f.covariance * n)[(0, 0)] <= pnn.min(0.25) + 1e-12);
    }

    #[test]
    fn repeated_fusion_follows_closed_form() {
        let cov = Matrix2::new(4.0, 0.0, 0.0, 16.0);
        let cfg = MapFusionConfig::default();
        let once = fuse_position(0.0, [10.0, 2.0], &cov, &straight(), 1.0, &cfg).unwrap();
        let twice = fuse_position(0.0, once.position, &once.covariance, &straight(), 1.0, &cfg).unwrap();
        let p1 = 16.0 / 17.0;
        assert!((twice.covariance[(1, 1)] - p1 / (p1 + 1.0)).abs() < 1e-12);
        assert!((twice.position[1] - 2.0 / 17.0 / (p1 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn positions_beyond_the_map_ends_pass_through() {
        let cov = Matrix2::identity() * 4.0;
        let cfg = MapFusionConfig::default();
        for pos in [[-5.0, 1.0], [1004.0, -2.0]] {
            let f = fuse_position(0.0, pos, &cov, &straight(), 0.5, &cfg).unwrap();
            assert!(!f.map_constrained);
            assert_eq!(f.position, pos);
        }
        let st = KinematicState::new(Vec5::from_column_slice(&[-5.0, 1.0, 10.0, 0.0, 0.0]), Mat5::identity());
        assert!(constrain_state(&st, &straight(), 0.5, &cfg).unwrap().is_none());
    }

    #[test]
    fn closed_loop_update_pulls_state_to_track() {
        let mut p = Mat5::identity();
        p[(1, 1)] = 25.0;
        let st = KinematicState::new(Vec5::from_column_slice(&[100.0, 10.0, 10.0, 0.0, 0.0]), p);
        let c = constrain_state(&st, &straight(), 0.5, &MapFusionConfig::default()).unwrap().unwrap();
        assert!((c.x[Y] - 10.0 * 0.25 / 25.25).abs() < 1e-9);
        assert!(c.p[(1, 1)] < 0.25);
    }

    #[test]
    fn default_sigma_uses_floor() {
        let cfg = MapFusionConfig::default();
        assert_eq!(cfg.sigma_for(Some(0.1)), 0.25);
        assert_eq!(cfg.sigma_for(Some(0.8)), 0.8);
        assert_eq!(cfg.sigma_for(None), 0.25);
    }
}
