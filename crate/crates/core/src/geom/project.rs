use serde::{Deserialize, Serialize};

use super::element::{Shape, TrackElement};
use super::{cross, Pose2};
use crate::error::{Error, Result};

/// Distances closer than this count as a tie.
const TIE_TOLERANCE: f64 = 1e-9;

/// Foot point of a perpendicular from a query point onto a chain of elements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub element_index: usize,
    /// Arclength within the element, `0 <= arclength <= length`.
    pub arclength: f64,
    /// Positive left of the direction of travel.
    pub signed_distance: f64,
    pub foot_point: Pose2,
    /// Cumulative arclength from the chain start.
    pub station: f64,
}

/// A sequence of elements integrated from a start pose, with the start pose of
/// every element cached.
#[derive(Debug, Clone)]
pub struct Chain {
    elements: Vec<TrackElement>,
    starts: Vec<Pose2>,
    stations: Vec<f64>,
    end: Pose2,
}

impl Chain {
    pub fn new(start: Pose2, elements: &[TrackElement]) -> Result<Chain> {
        if !start.is_finite() {
            return Err(Error::domain("non-finite chain start pose"));
        }
        let mut starts = Vec::with_capacity(elements.len());
        let mut stations = Vec::with_capacity(elements.len());
        let mut pose = start;
        let mut station = 0.0;
        for e in elements {
            e.validate()?;
            pose.curvature = e.start_curvature;
            starts.push(pose);
            stations.push(station);
            pose = e.pose_unchecked(&pose, e.length);
            station += e.length;
        }
        Ok(Chain {
            elements: elements.to_vec(),
            starts,
            stations,
            end: pose,
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[TrackElement] {
        &self.elements
    }

    pub fn start_pose(&self, index: usize) -> Pose2 {
        self.starts[index]
    }

    pub fn end_pose(&self) -> Pose2 {
        self.end
    }

    /// End pose of element `index` (equal to the start pose of `index + 1`).
    pub fn element_end_pose(&self, index: usize) -> Pose2 {
        let e = &self.elements[index];
        e.pose_unchecked(&self.starts[index], e.length)
    }

    pub fn station(&self, index: usize) -> f64 {
        self.stations[index]
    }

    pub fn total_length(&self) -> f64 {
        self.stations.last().map_or(0.0, |s| s + self.elements.last().unwrap().length)
    }

    /// Pose at cumulative arclength `station`.
    pub fn pose_at_station(&self, station: f64) -> Result<Pose2> {
        if self.is_empty() {
            return Err(Error::domain("empty chain"));
        }
        let total = self.total_length();
        if !(0.0..=total + 1e-9).contains(&station) {
            return Err(Error::domain(format!("station {station} outside [0, {total}]")));
        }
        let i = match self.stations.binary_search_by(|s| s.total_cmp(&station)) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let e = &self.elements[i];
        let s = (station - self.stations[i]).clamp(0.0, e.length);
        Ok(e.pose_unchecked(&self.starts[i], s))
    }

    /// Poses every `step` meters of arclength, starting at 0 and never past the end.
    pub fn sample(&self, step: f64) -> Vec<(f64, Pose2)> {
        let mut out = Vec::new();
        if self.is_empty() || step <= 0.0 {
            return out;
        }
        let total = self.total_length();
        let mut i = 0;
        let mut k = 0usize;
        loop {
            let station = k as f64 * step;
            if station > total {
                break;
            }
            while i + 1 < self.len() && self.stations[i + 1] <= station {
                i += 1;
            }
            let e = &self.elements[i];
            let s = (station - self.stations[i]).clamp(0.0, e.length);
            out.push((station, e.pose_unchecked(&self.starts[i], s)));
            k += 1;
        }
        out
    }

    /// Projection onto a single element.
    pub fn project_onto(&self, index: usize, point: [f64; 2]) -> Projection {
        let (s, foot) = project_element(&self.starts[index], &self.elements[index], point);
        let offset = [point[0] - foot.x, point[1] - foot.y];
        let dist = offset[0].hypot(offset[1]);
        let signed = if cross(foot.tangent(), offset) >= 0.0 { dist } else { -dist };
        Projection {
            element_index: index,
            arclength: s,
            signed_distance: signed,
            foot_point: foot,
            station: self.stations[index] + s,
        }
    }

    /// Global minimum-distance projection; ties go to the smaller station.
    pub fn project(&self, point: [f64; 2]) -> Result<Projection> {
        self.project_with_hint(point, 0)
    }

    /// As [`Chain::project`], but starts the search at element `hint`, which
    /// only affects speed.
    pub fn project_with_hint(&self, point: [f64; 2], hint: usize) -> Result<Projection> {
        if self.is_empty() {
            return Err(Error::domain("cannot project onto an empty chain"));
        }
        if !(point[0].is_finite() && point[1].is_finite()) {
            return Err(Error::domain("non-finite query point"));
        }
        let hint = hint.min(self.len() - 1);
        let mut best = self.project_onto(hint, point);
        for i in 0..self.len() {
            if i == hint {
                continue;
            }
            let lower_bound = self.starts[i].distance_to(point) - self.elements[i].length;
            if lower_bound > best.signed_distance.abs() + TIE_TOLERANCE {
                continue;
            }
            let cand = self.project_onto(i, point);
            let (dc, db) = (cand.signed_distance.abs(), best.signed_distance.abs());
            if dc < db - TIE_TOLERANCE || (dc <= db + TIE_TOLERANCE && cand.station < best.station) {
                best = cand;
            }
        }
        Ok(best)
    }
}

/// Minimum-distance projection onto a single chain.
pub fn project_point(chain_start: &Pose2, elements: &[TrackElement], point: [f64; 2]) -> Result<Projection> {
    if elements.is_empty() {
        return Err(Error::domain("cannot project onto an empty chain"));
    }
    Chain::new(*chain_start, elements)?.project(point)
}

fn closest(start: &Pose2, e: &TrackElement, point: [f64; 2], candidates: &[f64]) -> (f64, Pose2) {
    let mut best: Option<(f64, Pose2, f64)> = None;
    for &s in candidates {
        let pose = e.pose_unchecked(start, s);
        let d = pose.distance_to(point);
        match best {
            Some((_, _, bd)) if bd <= d => {}
            _ => best = Some((s, pose, d)),
        }
    }
    let (s, pose, _) = best.expect("at least one candidate");
    (s, pose)
}

fn project_element(start: &Pose2, e: &TrackElement, point: [f64; 2]) -> (f64, Pose2) {
    match e.shape {
        Shape::Straight => {
            let t = start.tangent();
            let along = (point[0] - start.x) * t[0] + (point[1] - start.y) * t[1];
            let s = along.clamp(0.0, e.length);
            (s, e.pose_unchecked(start, s))
        }
        Shape::CircularArc if e.start_curvature.abs() >= 1e-5 => project_arc(start, e, point),
        _ => project_sampled(start, e, point),
    }
}

fn project_arc(start: &Pose2, e: &TrackElement, point: [f64; 2]) -> (f64, Pose2) {
    let k = e.start_curvature;
    let n = start.normal();
    let cx = start.x + n[0] / k;
    let cy = start.y + n[1] / k;
    let (qx, qy) = (point[0] - cx, point[1] - cy);
    if qx.hypot(qy) == 0.0 {
        return (0.0, e.pose_unchecked(start, 0.0));
    }
    let phi0 = (start.y - cy).atan2(start.x - cx);
    let phiq = qy.atan2(qx);
    let sweep = (k.signum() * (phiq - phi0)).rem_euclid(2.0 * std::f64::consts::PI);
    let s_perp = sweep / k.abs();
    if s_perp <= e.length {
        closest(start, e, point, &[s_perp, 0.0, e.length])
    } else {
        closest(start, e, point, &[0.0, e.length])
    }
}

/// Dense sampling followed by a safeguarded Newton search on
/// `g(s) = (p(s) - q) . t(s)`.
fn project_sampled(start: &Pose2, e: &TrackElement, point: [f64; 2]) -> (f64, Pose2) {
    let n = ((e.length / 5.0).ceil() as usize).clamp(4, 64);
    let h = e.length / n as f64;
    let poly = e.heading_polynomial(start.heading);

    let mut samples = Vec::with_capacity(n + 1);
    let mut p = [start.x, start.y];
    samples.push(p);
    for k in 0..n {
        let d = poly.displacement(k as f64 * h, (k + 1) as f64 * h);
        p = [p[0] + d[0], p[1] + d[1]];
        samples.push(p);
    }
    let dist2 = |p: &[f64; 2]| (p[0] - point[0]).powi(2) + (p[1] - point[1]).powi(2);
    let (kbest, _) = samples
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bd), (i, p)| {
            let d = dist2(p);
            if d < bd {
                (i, d)
            } else {
                (bi, bd)
            }
        });

    let anchor_k = kbest;
    let anchor_s = anchor_k as f64 * h;
    let anchor_p = samples[anchor_k];
    let g = |s: f64| -> (f64, f64) {
        let d = poly.displacement(anchor_s, s);
        let px = anchor_p[0] + d[0] - point[0];
        let py = anchor_p[1] + d[1] - point[1];
        let psi = poly.at(s);
        let (sn, cs) = psi.sin_cos();
        let val = px * cs + py * sn;
        let deriv = 1.0 + e.curvature_at(s) * (-px * sn + py * cs);
        (val, deriv)
    };

    let mut lo = anchor_k.saturating_sub(1) as f64 * h;
    let mut hi = ((anchor_k + 1).min(n)) as f64 * h;
    let (glo, _) = g(lo);
    let (ghi, _) = g(hi);
    let mut candidates = vec![0.0, e.length, anchor_s];
    if glo < 0.0 && ghi > 0.0 {
        let mut s = anchor_s.clamp(lo, hi);
        for _ in 0..60 {
            let (val, deriv) = g(s);
            if val == 0.0 {
                break;
            }
            if val < 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let mut next = if deriv > 1e-3 { s - val / deriv } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = (next - s).abs();
            s = next;
            if step <= 1e-13 * e.length.max(1.0) || hi - lo <= 1e-13 * e.length.max(1.0) {
                break;
            }
        }
        candidates.push(s);
    } else {
        candidates.push(lo);
        candidates.push(hi);
    }
    closest(start, e, point, &candidates)
}
