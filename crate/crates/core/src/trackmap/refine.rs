use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, LeastSquares, LmOptions, LmStop};
use super::TrackMap;
use crate::error::{Error, Result};
use crate::geom::{normalize_angle, Chain, LocalFrame, Pose2, Projection, Shape, TrackElement};

/// A position estimate in local coordinates with its least-squares weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineOptions {
    pub max_iterations: usize,
    pub rel_tolerance: f64,
    /// Elements driven shorter than this (meters) are merged away.
    pub min_length: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            max_iterations: 200,
            rel_tolerance: 1e-9,
            min_length: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub map: TrackMap,
    /// Objective before the first and after every accepted iteration of the
    /// final optimization pass.
    pub objective_history: Vec<f64>,
    /// History of the pass that was abandoned to merge short elements.
    pub abandoned_history: Vec<f64>,
    /// Indices (into the input map) of elements removed by merging.
    pub merged: Vec<usize>,
    /// Weighted RMS distance of the trace to the refined map.
    pub fit_rms: f64,
    pub converged: bool,
}

impl Refinement {
    pub fn iterations(&self) -> usize {
        self.objective_history.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy)]
enum CurvatureSource {
    Fixed(f64),
    Param(usize),
}

/// Chain parameterization: `[x0, y0, psi0, L_1..L_n, kappa of each ca]`.
/// Transitional arcs borrow the curvature of their neighbours so continuity
/// holds for every parameter vector.
struct ChainModel<'a> {
    shapes: Vec<Shape>,
    /// Per element: start/end curvature source.
    curvature: Vec<(CurvatureSource, CurvatureSource)>,
    /// Per parameter: elements whose shape depends on it.
    shape_deps: Vec<Vec<usize>>,
    steps: Vec<f64>,
    trace: &'a [TracePoint],
    sqrt_w: Vec<f64>,
    min_length: f64,
}

const POSE_PARAMS: usize = 3;

impl<'a> ChainModel<'a> {
    fn new(elements: &[TrackElement], trace: &'a [TracePoint], min_length: f64) -> (ChainModel<'a>, Vec<f64>) {
        let n = elements.len();
        let mut ca_param = vec![None; n];
        let mut next = POSE_PARAMS + n;
        for (i, e) in elements.iter().enumerate() {
            if e.shape == Shape::CircularArc {
                ca_param[i] = Some(next);
                next += 1;
            }
        }
        let own = |i: usize, fallback: f64| match elements[i].shape {
            Shape::Straight => CurvatureSource::Fixed(0.0),
            Shape::CircularArc => CurvatureSource::Param(ca_param[i].unwrap()),
            Shape::TransitionalArc => CurvatureSource::Fixed(fallback),
        };
        let mut curvature = Vec::with_capacity(n);
        let mut shape_deps = vec![Vec::new(); next];
        for (i, e) in elements.iter().enumerate() {
            shape_deps[POSE_PARAMS + i].push(i);
            let src = match e.shape {
                Shape::Straight => (CurvatureSource::Fixed(0.0), CurvatureSource::Fixed(0.0)),
                Shape::CircularArc => {
                    let c = CurvatureSource::Param(ca_param[i].unwrap());
                    (c, c)
                }
                Shape::TransitionalArc => {
                    let k0 = if i > 0 {
                        own(i - 1, e.start_curvature)
                    } else {
                        CurvatureSource::Fixed(e.start_curvature)
                    };
                    let k1 = if i + 1 < n {
                        own(i + 1, e.end_curvature)
                    } else {
                        CurvatureSource::Fixed(e.end_curvature)
                    };
                    (k0, k1)
                }
            };
            for c in [src.0, src.1] {
                if let CurvatureSource::Param(j) = c {
                    if !shape_deps[j].contains(&i) {
                        shape_deps[j].push(i);
                    }
                }
            }
            curvature.push(src);
        }

        let mut p = vec![0.0; next];
        let mut steps = vec![1e-3, 1e-3, 1e-6];
        for (i, e) in elements.iter().enumerate() {
            p[POSE_PARAMS + i] = e.length;
            steps.push(1e-3);
        }
        for (i, e) in elements.iter().enumerate() {
            if let Some(j) = ca_param[i] {
                p[j] = e.start_curvature;
                steps.push(1e-7);
            }
        }
        let sqrt_w = trace.iter().map(|t| t.weight.sqrt()).collect();
        let model = ChainModel {
            shapes: elements.iter().map(|e| e.shape).collect(),
            curvature,
            shape_deps,
            steps,
            trace,
            sqrt_w,
            min_length,
        };
        (model, p)
    }

    fn curvature(&self, src: CurvatureSource, p: &[f64]) -> f64 {
        match src {
            CurvatureSource::Fixed(k) => k,
            CurvatureSource::Param(j) => p[j],
        }
    }

    fn elements(&self, p: &[f64]) -> Option<Vec<TrackElement>> {
        let mut out = Vec::with_capacity(self.shapes.len());
        for (i, &shape) in self.shapes.iter().enumerate() {
            let length = p[POSE_PARAMS + i];
            if !(length > 0.0) || !length.is_finite() {
                return None;
            }
            let (k0, k1) = self.curvature[i];
            let (k0, k1) = (self.curvature(k0, p), self.curvature(k1, p));
            let e = match shape {
                Shape::Straight => TrackElement::straight(length),
                Shape::CircularArc => TrackElement::circular_arc(length, k0),
                Shape::TransitionalArc => TrackElement::transitional_arc(length, k0, k1),
            };
            if e.validate().is_err() {
                return None;
            }
            out.push(e);
        }
        Some(out)
    }

    fn chain(&self, p: &[f64]) -> Option<Chain> {
        if p[..POSE_PARAMS].iter().any(|v| !v.is_finite()) {
            return None;
        }
        let elements = self.elements(p)?;
        Chain::new(Pose2::new(p[0], p[1], p[2], elements[0].start_curvature), &elements).ok()
    }
}

impl ChainModel<'_> {
    /// Map arclength before the first and after the last trace point.
    fn end_gaps(&self, chain: &Chain, projections: &[Projection]) -> [f64; 2] {
        let first = projections.first().map_or(0.0, |p| p.station);
        let last = projections.last().map_or(0.0, |p| p.station);
        [first, chain.total_length() - last]
    }
}

struct Evaluation {
    chain: Chain,
    projections: Vec<Projection>,
}

impl LeastSquares for ChainModel<'_> {
    type Cache = Evaluation;

    fn evaluate(&self, p: &[f64]) -> Option<(Vec<f64>, Evaluation)> {
        let chain = self.chain(p)?;
        let mut projections = Vec::with_capacity(self.trace.len());
        let mut hint = 0;
        for t in self.trace {
            let pr = chain.project_with_hint([t.x, t.y], hint).ok()?;
            hint = pr.element_index;
            projections.push(pr);
        }
        let mut r: Vec<f64> = projections
            .iter()
            .zip(&self.sqrt_w)
            .map(|(pr, w)| w * pr.signed_distance)
            .collect();
        let [head, tail] = self.end_gaps(&chain, &projections);
        r.push(self.sqrt_w[0] * head);
        r.push(self.sqrt_w[self.trace.len() - 1] * tail);
        Some((r, Evaluation { chain, projections }))
    }

    /// Moves each foot point with the perturbed chain at fixed arclength and
    /// differentiates the distance to it; the foot point is stationary, so
    /// re-projecting is unnecessary to first order.
    fn jacobian(&self, p: &[f64], cache: &Evaluation) -> DMatrix<f64> {
        let m = self.trace.len();
        let mut jac = DMatrix::zeros(m + 2, p.len());
        let base = &cache.chain;
        for (j, &h0) in self.steps.iter().enumerate() {
            let mut q = p.to_vec();
            let mut h = h0;
            q[j] += h;
            let pert = match self.chain(&q) {
                Some(c) => c,
                None => {
                    h = -h0;
                    q[j] = p[j] + h;
                    match self.chain(&q) {
                        Some(c) => c,
                        None => continue,
                    }
                }
            };
            let ends = [0, m - 1].map(|i| {
                let t = &self.trace[i];
                pert.project_with_hint([t.x, t.y], cache.projections[i].element_index)
                    .unwrap_or(cache.projections[i])
            });
            let gaps0 = self.end_gaps(base, &cache.projections);
            let gaps1 = self.end_gaps(&pert, &ends);
            jac[(m, j)] = self.sqrt_w[0] * (gaps1[0] - gaps0[0]) / h;
            jac[(m + 1, j)] = self.sqrt_w[m - 1] * (gaps1[1] - gaps0[1]) / h;
            let deps = &self.shape_deps[j];
            for (i, pr) in cache.projections.iter().enumerate() {
                let e = pr.element_index;
                let s0 = base.start_pose(e);
                let s1 = pert.start_pose(e);
                let foot = pr.foot_point;
                let v = if deps.contains(&e) {
                    let el = &pert.elements()[e];
                    // A foot clamped to the chain end follows the end.
                    let at_end = e + 1 == base.len() && pr.arclength >= base.elements()[e].length - 1e-9;
                    let s = if at_end { el.length } else { pr.arclength.min(el.length) };
                    let moved = el.pose_unchecked(&s1, s);
                    [(moved.x - foot.x) / h, (moved.y - foot.y) / h]
                } else {
                    let dpsi = normalize_angle(s1.heading - s0.heading) / h;
                    if s1.x == s0.x && s1.y == s0.y && dpsi == 0.0 {
                        continue;
                    }
                    [
                        (s1.x - s0.x) / h - dpsi * (foot.y - s0.y),
                        (s1.y - s0.y) / h + dpsi * (foot.x - s0.x),
                    ]
                };
                let t = &self.trace[i];
                let off = [t.x - foot.x, t.y - foot.y];
                let dist = off[0].hypot(off[1]);
                let dd = if dist > 1e-12 {
                    -(pr.signed_distance.signum()) * (off[0] * v[0] + off[1] * v[1]) / dist
                } else {
                    let nrm = foot.normal();
                    -(nrm[0] * v[0] + nrm[1] * v[1])
                };
                jac[(i, j)] = self.sqrt_w[i] * dd;
            }
        }
        jac
    }

    fn clamp_short(&self, p: &mut [f64]) -> Vec<usize> {
        let mut out = Vec::new();
        for i in 0..self.shapes.len() {
            if p[POSE_PARAMS + i] < self.min_length {
                p[POSE_PARAMS + i] = self.min_length;
                out.push(i);
            }
        }
        out
    }
}

fn validate_trace(trace: &[TracePoint]) -> Result<()> {
    if trace.len() < 10 {
        return Err(Error::domain(format!("refinement needs at least 10 trace points, got {}", trace.len())));
    }
    for (i, t) in trace.iter().enumerate() {
        if !(t.x.is_finite() && t.y.is_finite() && t.weight.is_finite()) || t.weight < 0.0 {
            return Err(Error::domain(format!("trace point {i} is not finite or has negative weight")));
        }
    }
    if trace.iter().all(|t| t.weight == 0.0) {
        return Err(Error::domain("all trace weights are zero"));
    }
    Ok(())
}

fn to_map(model: &ChainModel, p: &[f64], frame: &LocalFrame) -> Result<TrackMap> {
    let elements = model
        .elements(p)
        .ok_or_else(|| Error::Numerical("refinement produced invalid elements".into()))?;
    let start = Pose2::new(p[0], p[1], normalize_angle(p[2]), elements[0].start_curvature);
    TrackMap::from_start_pose(frame, &start, elements)
}

/// Minimizes the weighted squared distance of `trace` to the map over start
/// pose, element lengths and arc curvatures.
///
/// `trace` is in `frame` coordinates, ordered along the track, and is taken
/// to span the map: the map arclength before the first and after the last
/// trace point is penalized like a distance with those points' weights.
pub fn refine_map(map: &TrackMap, trace: &[TracePoint], frame: &LocalFrame, opts: &RefineOptions) -> Result<Refinement> {
    map.validate()?;
    validate_trace(trace)?;
    if map.elements.is_empty() {
        return Err(Error::domain("cannot refine an empty map"));
    }
    let lm_opts = |interrupt| LmOptions {
        max_iterations: opts.max_iterations,
        rel_tolerance: opts.rel_tolerance,
        interrupt_on_clamp: interrupt,
    };
    let mut current = map.clone();
    let mut merged = Vec::new();
    let mut abandoned_history = Vec::new();
    let mut allow_merge = true;
    loop {
        let (model, mut p0) = ChainModel::new(&current.elements, trace, opts.min_length);
        let s = current.start_pose(frame);
        p0[..POSE_PARAMS].copy_from_slice(&[s.x, s.y, s.heading]);
        let out = levenberg_marquardt(&model, &p0, lm_opts(allow_merge))
            .ok_or_else(|| Error::Numerical("trace cannot be projected onto the initial map".into()))?;
        if let LmStop::Interrupted(short) = &out.stop {
            let mut next = to_map(&model, &out.params, frame)?;
            for &i in short.iter().rev() {
                if next.elements.len() > 1 {
                    next = next.without_element(i)?;
                }
            }
            merged = short.clone();
            abandoned_history = out.history;
            current = next;
            allow_merge = false;
            continue;
        }
        let refined = to_map(&model, &out.params, frame)?;
        let objective = *out.history.last().unwrap();
        let wsum: f64 = trace.iter().map(|t| t.weight).sum();
        return Ok(Refinement {
            map: refined,
            fit_rms: (objective / wsum).sqrt(),
            converged: matches!(out.stop, LmStop::Converged | LmStop::Stalled),
            objective_history: out.history,
            abandoned_history,
            merged,
        });
    }
}
