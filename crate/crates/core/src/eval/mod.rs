//! Along/cross-track error decomposition, availability-aware CDFs and
//! report tables.

mod report;

pub use report::{
    compare_methods, improvement, improvements_csv, table1_csv, table2_csv, table4_csv, Comparison, EvalReport,
    Improvement, CDF_LEVELS, THRESHOLD_ALONG, THRESHOLD_CROSS,
};

use std::fmt::Write as _;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::filters::EpochLog;
use crate::geom::{LocalFrame, Pose2};
use crate::sim::TruthSample;
use crate::trackmap::nearest_rank;

/// Largest allowed distance between an epoch and its truth sample, s.
pub const MAX_TIME_OFFSET: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub t: f64,
    /// Signed error along the true heading, m.
    pub err_along: f64,
    /// Signed error to the left of the true heading, m.
    pub err_cross: f64,
    pub sigma3_along: f64,
    pub sigma3_cross: f64,
    /// 3 sqrt of the largest position covariance eigenvalue.
    pub sigma3_max: f64,
    pub available: bool,
}

impl ErrorSample {
    fn unavailable(t: f64) -> ErrorSample {
        ErrorSample {
            t,
            err_along: f64::NAN,
            err_cross: f64::NAN,
            sigma3_along: f64::INFINITY,
            sigma3_cross: f64::INFINITY,
            sigma3_max: f64::INFINITY,
            available: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Max,
    Along,
    Cross,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Max, Channel::Along, Channel::Cross];

    pub fn label(self) -> &'static str {
        match self {
            Channel::Max => "MAX",
            Channel::Along => "AT",
            Channel::Cross => "CT",
        }
    }

    fn of(self, s: &ErrorSample) -> f64 {
        if !s.available {
            return f64::INFINITY;
        }
        match self {
            Channel::Max => s.sigma3_max,
            Channel::Along => s.sigma3_along,
            Channel::Cross => s.sigma3_cross,
        }
    }
}

/// 3-sigma along, cross and major-axis extents of a position covariance
/// in the frame of `heading`.
pub fn sigma3_components(cov: &Matrix2<f64>, heading: f64) -> (f64, f64, f64) {
    let (s, c) = heading.sin_cos();
    let rot = Matrix2::new(c, -s, s, c);
    let local = rot.transpose() * cov * rot;
    let major = cov.symmetric_eigen().eigenvalues.max();
    (
        3.0 * local[(0, 0)].max(0.0).sqrt(),
        3.0 * local[(1, 1)].max(0.0).sqrt(),
        3.0 * major.max(0.0).sqrt(),
    )
}

/// Truth poses re-expressed in another local frame. Headings are carried
/// over via a point one metre ahead.
pub fn truth_in_frame(truth: &[TruthSample], truth_frame: &LocalFrame, frame: &LocalFrame) -> Vec<TruthSample> {
    truth
        .iter()
        .map(|s| {
            let p = frame.to_local(truth_frame.to_geo(s.pose.position()));
            let t = s.pose.tangent();
            let ahead = frame.to_local(truth_frame.to_geo([s.pose.x + t[0], s.pose.y + t[1]]));
            let heading = (ahead[1] - p[1]).atan2(ahead[0] - p[0]);
            TruthSample {
                pose: Pose2::new(p[0], p[1], heading, s.pose.curvature),
                ..*s
            }
        })
        .collect()
}

/// Splits estimation errors and covariances into the true along/cross-track
/// frame. With `fused`, the map-fused columns are scored where present.
/// Returns the samples and the number of epochs dropped for lack of a truth
/// sample within [`MAX_TIME_OFFSET`].
pub fn decompose_errors(log: &[EpochLog], truth: &[TruthSample], fused: bool) -> (Vec<ErrorSample>, usize) {
    let mut out = Vec::with_capacity(log.len());
    let mut dropped = 0;
    for row in log {
        let i = truth.partition_point(|s| s.t < row.t);
        let near = [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|j| truth.get(j))
            .min_by(|a, b| (a.t - row.t).abs().total_cmp(&(b.t - row.t).abs()));
        let Some(truth) = near.filter(|s| (s.t - row.t).abs() <= MAX_TIME_OFFSET) else {
            dropped += 1;
            continue;
        };
        if !row.available {
            out.push(ErrorSample::unavailable(row.t));
            continue;
        }
        let (pos, cov) = if fused { row.best_position() } else { (row.position(), row.position_covariance()) };
        let tan = truth.pose.tangent();
        let nor = truth.pose.normal();
        let e = [pos[0] - truth.pose.x, pos[1] - truth.pose.y];
        let (sa, sc, sm) = sigma3_components(&cov, truth.pose.heading);
        out.push(ErrorSample {
            t: row.t,
            err_along: e[0] * tan[0] + e[1] * tan[1],
            err_cross: e[0] * nor[0] + e[1] * nor[1],
            sigma3_along: sa,
            sigma3_cross: sc,
            sigma3_max: sm,
            available: true,
        });
    }
    (out, dropped)
}

/// Empirical CDF of one 3-sigma channel; unavailable epochs count as
/// infinitely large.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cdf {
    sorted: Vec<f64>,
}

impl Cdf {
    pub fn from_values(mut values: Vec<f64>) -> Cdf {
        values.sort_by(f64::total_cmp);
        Cdf { sorted: values }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of samples `<= x`.
    pub fn at(&self, x: f64) -> f64 {
        if self.sorted.is_empty() {
            return f64::NAN;
        }
        self.sorted.partition_point(|v| *v <= x) as f64 / self.sorted.len() as f64
    }

    /// Nearest-rank quantile; infinite when `p` exceeds the availability.
    pub fn quantile(&self, p: f64) -> f64 {
        nearest_rank(&self.sorted, p)
    }

    /// `(value, probability)` steps of the CDF over the finite values.
    pub fn table(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, v) in self.sorted.iter().enumerate() {
            if !v.is_finite() {
                break;
            }
            let p = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == *v => last.1 = p,
                _ => out.push((*v, p)),
            }
        }
        out
    }
}

pub fn cdf(samples: &[ErrorSample], channel: Channel) -> Cdf {
    Cdf::from_values(samples.iter().map(|s| channel.of(s)).collect())
}

/// 3-sigma ellipse of a position covariance: `(semi_major, semi_minor,
/// orientation)` with the orientation of the major axis in radians from
/// east, in (-pi/2, pi/2]. `None` for a covariance that is not PSD.
pub fn ellipse(cov: &Matrix2<f64>) -> Option<(f64, f64, f64)> {
    let (a, b, c) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
    if !(a.is_finite() && b.is_finite() && c.is_finite()) {
        return None;
    }
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c).powi(2) + b * b).sqrt();
    let (l1, l2) = (mid + rad, mid - rad);
    if l2 < -1e-9 * l1.abs().max(1.0) {
        return None;
    }
    let theta = if b == 0.0 && a == c { 0.0 } else { 0.5 * (2.0 * b).atan2(a - c) };
    Some((3.0 * l1.max(0.0).sqrt(), 3.0 * l2.max(0.0).sqrt(), theta))
}

/// CSV of 3-sigma ellipses for every `every`-th available epoch.
pub fn ellipse_export(log: &[EpochLog], every: usize, fused: bool) -> String {
    let mut out = String::from("t,x,y,semi_major_3sigma,semi_minor_3sigma,orientation_rad,valid\n");
    for row in log.iter().filter(|r| r.available).step_by(every.max(1)) {
        let (pos, cov) = if fused { row.best_position() } else { (row.position(), row.position_covariance()) };
        let (maj, min, th, ok) = match ellipse(&cov) {
            Some((a, b, t)) => (a, b, t, 1),
            None => (f64::NAN, f64::NAN, f64::NAN, 0),
        };
        let _ = writeln!(out, "{},{},{},{maj},{min},{th},{ok}", row.t, pos[0], pos[1]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotropic_covariance_is_rotation_invariant() {
        let cov = Matrix2::identity() * 4.0;
        for h in [0.0, 0.4, -2.0, 3.0] {
            let (a, c, m) = sigma3_components(&cov, h);
            assert!((a - 6.0).abs() < 1e-12 && (c - 6.0).abs() < 1e-12 && (m - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn axis_aligned_and_rotated_components() {
        let cov = Matrix2::new(4.0, 0.0, 0.0, 1.0);
        let (a, c, m) = sigma3_components(&cov, 0.0);
        assert_eq!((a, c), (6.0, 3.0));
        assert!((m - 6.0).abs() < 1e-12);
        // Oracle: explicit rotation of the 2x2 matrix.
        let h = 30f64.to_radians();
        let (s, co) = h.sin_cos();
        let along = co * co * 4.0 + s * s * 1.0;
        let cross = s * s * 4.0 + co * co * 1.0;
        let (a, c, _) = sigma3_components(&cov, h);
        assert!((a - 3.0 * along.sqrt()).abs() < 1e-12);
        assert!((c - 3.0 * cross.sqrt()).abs() < 1e-12);
        assert!((a * a + c * c - 9.0 * 5.0).abs() < 1e-9);
    }

    #[test]
    fn cdf_lookup_and_availability() {
        let c = Cdf::from_values(vec![3.0, 1.0, 2.0]);
        assert!((c.at(2.0) - 2.0 / 3.0).abs() < 1e-15);
        let mut v: Vec<f64> = (0..95).map(|i| i as f64 * 0.1).collect();
        v.extend([f64::INFINITY; 5]);
        let c = Cdf::from_values(v);
        assert!(c.at(1e9) <= 0.95);
        assert_eq!(c.quantile(0.99), f64::INFINITY);
        assert!(c.quantile(0.9).is_finite());
        let t = c.table();
        assert!(t.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
        assert!((t.last().unwrap().1 - 0.95).abs() < 1e-12);
    }

    #[test]
    fn ellipses() {
        let (a, b, t) = ellipse(&(Matrix2::identity() * 4.0)).unwrap();
        assert_eq!((a, b, t), (6.0, 6.0, 0.0));
        let (a, b, t) = ellipse(&Matrix2::new(9.0, 0.0, 0.0, 1.0)).unwrap();
        assert_eq!((a, b, t), (9.0, 3.0, 0.0));
        // Rotated diag(9, 1) by 0.3 rad against a symmetric eigen solver.
        let (s, c) = 0.3f64.sin_cos();
        let r = Matrix2::new(c, -s, s, c);
        let cov = r * Matrix2::new(9.0, 0.0, 0.0, 1.0) * r.transpose();
        let (a, b, t) = ellipse(&cov).unwrap();
        let eig = cov.symmetric_eigen();
        let big = if eig.eigenvalues[0] > eig.eigenvalues[1] { 0 } else { 1 };
        assert!((a - 3.0 * eig.eigenvalues[big].sqrt()).abs() < 1e-12);
        assert!((b - 3.0 * eig.eigenvalues[1 - big].sqrt()).abs() < 1e-12);
        assert!((t - 0.3).abs() < 1e-12);
        assert!(ellipse(&Matrix2::new(1.0, 3.0, 3.0, 1.0)).is_none());
    }
}
