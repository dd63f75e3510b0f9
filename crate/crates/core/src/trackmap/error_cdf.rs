use serde::{Deserialize, Serialize};

use super::TrackMap;
use crate::error::{Error, Result};
use crate::geom::{Chain, GeoPoint, LocalFrame};

/// Maps farther apart than this (meters) are considered unrelated.
const DISJOINT_DISTANCE: f64 = 1000.0;

/// Probabilities reported by [`map_error_cdf`].
pub const MAP_ERROR_LEVELS: [f64; 3] = [0.95, 0.99, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapErrorStats {
    /// Absolute perpendicular error per 1 m map sample.
    pub samples: Vec<f64>,
    pub mean: f64,
    /// `(probability, error)` pairs, nearest-rank.
    pub quantiles: Vec<(f64, f64)>,
    pub max: f64,
}

impl MapErrorStats {
    pub fn from_samples(samples: Vec<f64>, levels: &[f64]) -> Result<MapErrorStats> {
        if samples.is_empty() {
            return Err(Error::domain("no map error samples"));
        }
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let quantiles = levels.iter().map(|&p| (p, nearest_rank(&sorted, p))).collect();
        Ok(MapErrorStats {
            mean,
            quantiles,
            max: *sorted.last().unwrap(),
            samples,
        })
    }

    pub fn quantile(&self, p: f64) -> Option<f64> {
        self.quantiles.iter().find(|(q, _)| (q - p).abs() < 1e-12).map(|&(_, v)| v)
    }
}

/// Nearest-rank quantile of an ascending slice: the smallest value whose
/// empirical CDF reaches `p`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let n = sorted.len();
    let k = ((p * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[k - 1]
}

/// A planar polyline with segment-wise point distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<[f64; 2]>,
}

impl Polyline {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Polyline> {
        if points.len() < 2 {
            return Err(Error::domain("polyline needs at least 2 points"));
        }
        if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(Error::domain("non-finite polyline vertex"));
        }
        Ok(Polyline { points })
    }

    pub fn from_geo(points: &[GeoPoint], frame: &LocalFrame) -> Result<Polyline> {
        for p in points {
            p.validate()?;
        }
        Polyline::new(points.iter().map(|&p| frame.to_local(p)).collect())
    }

    /// Dense sampling of a chain, every `step` meters plus the end point.
    pub fn from_chain(chain: &Chain, step: f64) -> Result<Polyline> {
        let mut pts: Vec<[f64; 2]> = chain.sample(step).into_iter().map(|(_, p)| p.position()).collect();
        pts.push(chain.end_pose().position());
        Polyline::new(pts)
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn distance(&self, q: [f64; 2]) -> f64 {
        let mut best = f64::INFINITY;
        for w in self.points.windows(2) {
            let (a, b) = (w[0], w[1]);
            let ab = [b[0] - a[0], b[1] - a[1]];
            let aq = [q[0] - a[0], q[1] - a[1]];
            let len2 = ab[0] * ab[0] + ab[1] * ab[1];
            let t = if len2 > 0.0 {
                ((aq[0] * ab[0] + aq[1] * ab[1]) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let d = (aq[0] - t * ab[0]).hypot(aq[1] - t * ab[1]);
            best = best.min(d);
        }
        best
    }
}

/// Error of `chain`, sampled every meter, against `reference`.
pub fn map_error_vs_chain(chain: &Chain, reference: &Polyline) -> Result<MapErrorStats> {
    if chain.is_empty() {
        return Err(Error::domain("empty map"));
    }
    let samples: Vec<f64> = chain
        .sample(1.0)
        .iter()
        .map(|(_, p)| reference.distance(p.position()))
        .collect();
    let closest = samples.iter().copied().fold(f64::INFINITY, f64::min);
    if closest > DISJOINT_DISTANCE {
        return Err(Error::domain(format!(
            "map and reference are disjoint (closest approach {closest:.0} m)"
        )));
    }
    MapErrorStats::from_samples(samples, &MAP_ERROR_LEVELS)
}

/// Absolute perpendicular error of `map` against a reference polyline,
/// sampled every meter of map arclength.
pub fn map_error_cdf(map: &TrackMap, reference: &[GeoPoint]) -> Result<MapErrorStats> {
    let frame = LocalFrame::new(map.origin)?;
    let polyline = Polyline::from_geo(reference, &frame)?;
    map_error_vs_chain(&map.chain(&frame)?, &polyline)
}
