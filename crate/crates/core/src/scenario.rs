//! The reference scenario and the in-memory end-to-end pipeline:
//! simulate, localize with every method, build and refine a map, fuse and
//! evaluate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{decompose_errors, truth_in_frame, EvalReport};
use crate::filters::{
    classify_segments, fit_arc_params, fit_straight_params, run_filter, ClassifyConfig, EpochLog, EventKind,
    FilterConfig, FilterRun, GeometryEvent, KinematicState, Method,
};
use crate::geom::{GeoPoint, LocalFrame, Shape, TrackElement};
use crate::mapfusion::fuse_log;
use crate::sim::{
    build_track, simulate_run, ElementSpec, GnssFix, ImuNoise, Inflation, Interval, RunConfig, SimulatedRun,
    SpeedSegment, TrackSpec, TruthSample,
};
use crate::trackmap::{
    assemble_map, map_error_vs_chain, refine_map, IdentifiedSegment, GAP_THRESHOLD, MapErrorStats, Polyline, RefineOptions,
    Refinement, SegmentShape, TracePoint, TrackMap,
};

/// Track of the reference scenario: 5.7 km with the element sequence and
/// radii of the published map excerpt (213 m, 376 m followed directly by
/// 197 m) stretched to identifiable lengths, plus two further curves.
pub fn reference_track() -> TrackSpec {
    let e = [
        ElementSpec::straight(300.0),
        ElementSpec::transition(60.0),
        ElementSpec::arc(250.0, -213.0),
        ElementSpec::transition(60.0),
        ElementSpec::straight(600.0),
        ElementSpec::transition(76.0),
        ElementSpec::arc(300.0, 376.0),
        ElementSpec::transition(37.0),
        ElementSpec::arc(200.0, 197.0),
        ElementSpec::transition(48.0),
        ElementSpec::straight(800.0),
        ElementSpec::transition(80.0),
        ElementSpec::arc(350.0, -500.0),
        ElementSpec::transition(80.0),
        ElementSpec::straight(700.0),
        ElementSpec::transition(70.0),
        ElementSpec::arc(300.0, 300.0),
        ElementSpec::transition(70.0),
        ElementSpec::straight(600.0),
        ElementSpec::transition(60.0),
        ElementSpec::arc(280.0, -600.0),
        ElementSpec::transition(60.0),
        ElementSpec::straight(319.0),
    ];
    TrackSpec {
        origin: GeoPoint { lat: 50.548, lon: 12.913 },
        heading_deg: 231.2,
        elements: e.to_vec(),
    }
}

/// Run of the reference scenario: 22 to 56 km/h with speed changes on
/// straights only, one 13 s outage plus short dropouts (about 95 % GNSS
/// availability) and two phases of inflated GNSS noise.
pub fn reference_run(seed: u64) -> RunConfig {
    let kmh = |v: f64| v / 3.6;
    let seg = |from_m, to_m, v| SpeedSegment {
        from_m,
        to_m,
        speed_mps: kmh(v),
    };
    let gap = |start, end| Interval { start, end };
    RunConfig {
        seed,
        gnss_rate_hz: 1.0,
        imu_rate_hz: 500.0,
        gnss_sigma_m: 5.0,
        gnss_speed_sigma_mps: 0.1,
        gnss_axis_ratio: 1.0,
        gnss_axis_orientation_deg: 0.0,
        max_accel_mps2: 0.3,
        start_time: 0.0,
        speed_profile: vec![
            seg(0.0, 900.0, 40.0),
            seg(900.0, 2300.0, 30.0),
            seg(2300.0, 3600.0, 56.0),
            seg(3600.0, 4700.0, 22.0),
            seg(4700.0, 5700.0, 45.0),
        ],
        sigma_inflation: vec![
            Inflation {
                start: 100.0,
                end: 140.0,
                scale: 2.0,
            },
            Inflation {
                start: 380.0,
                end: 420.0,
                scale: 3.0,
            },
        ],
        outages: vec![
            gap(60.0, 62.0),
            gap(150.0, 153.0),
            gap(268.0, 281.0),
            gap(350.0, 352.0),
            gap(430.0, 433.0),
            gap(520.0, 522.0),
        ],
        imu: ImuNoise::default(),
    }
}

/// Settings for turning a classified IMM run into a map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    /// Epochs dropped at both ends of a segment before fitting.
    pub trim_epochs: usize,
    /// Segments with fewer epochs after trimming are not mapped.
    pub min_segment_epochs: usize,
    /// Iteration limit of the refinements while the map is grown segment by
    /// segment; the final pass over the whole map uses `refine`.
    pub stage_iterations: usize,
    pub refine: RefineOptions,
}

impl Default for MappingConfig {
    fn default() -> Self {
        MappingConfig {
            trim_epochs: 1,
            min_segment_epochs: 3,
            stage_iterations: 30,
            refine: RefineOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapBuild {
    pub events: Vec<GeometryEvent>,
    pub segments: Vec<IdentifiedSegment>,
    /// Concatenation of the fitted segments and bridging clothoids.
    pub initial: TrackMap,
    /// Final refinement of the map grown segment by segment.
    pub refinement: Refinement,
}

fn states_within(run: &FilterRun, t0: f64, t1: f64) -> Vec<(f64, KinematicState)> {
    run.states.iter().filter(|(t, _)| *t >= t0 && *t <= t1).copied().collect()
}

/// Trace for refinement: available filter positions weighted by the inverse
/// cross-track 3-sigma variance.
pub fn refinement_trace(epochs: &[EpochLog], t0: f64, t1: f64) -> Vec<TracePoint> {
    epochs
        .iter()
        .filter(|e| e.available && e.t >= t0 && e.t <= t1 && e.sigma3_cross > 0.0)
        .map(|e| TracePoint {
            x: e.x,
            y: e.y,
            weight: 1.0 / (e.sigma3_cross * e.sigma3_cross),
        })
        .collect()
}

/// Classification, per-segment fits, assembly and refinement of an IMM run.
pub fn build_map(run: &FilterRun, frame: &LocalFrame, classify: &ClassifyConfig, cfg: &MappingConfig) -> Result<MapBuild> {
    if run.method != Method::Imm {
        return Err(Error::domain("mapping needs the model probabilities of an IMM run"));
    }
    build_map_from_events(run, classify_segments(&run.modes, classify), frame, cfg)
}

/// [`build_map`] for already classified events.
pub fn build_map_from_events(run: &FilterRun, events: Vec<GeometryEvent>, frame: &LocalFrame, cfg: &MappingConfig) -> Result<MapBuild> {
    let mut segments = Vec::new();
    for ev in &events {
        let mut states = states_within(run, ev.t, ev.end_t);
        let trim = cfg.trim_epochs.min(states.len() / 2);
        states.truncate(states.len() - trim);
        states.drain(..trim);
        if states.len() < cfg.min_segment_epochs.max(3) {
            continue;
        }
        let seg = match ev.kind {
            EventKind::EnterStraight => fit_straight_params(&states),
            EventKind::EnterArc => match fit_arc_params(&states) {
                Err(Error::Degenerate(_)) => fit_straight_params(&states),
                other => other,
            },
            EventKind::EnterUnknown => continue,
        };
        match seg {
            Ok(s) => segments.push(s),
            Err(Error::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if segments.len() < 2 {
        return Err(Error::domain(format!(
            "only {} mappable segment(s) recognized; a map needs at least two",
            segments.len()
        )));
    }
    let initial = assemble_map(&segments, frame)?;
    let t0 = segments[0].start_time;
    let mut map = assemble_map(&segments[..1], frame)?;
    let stage = RefineOptions {
        max_iterations: cfg.stage_iterations,
        ..cfg.refine
    };
    for next in &segments[1..] {
        map = extend_map(&map, next, frame)?;
        let trace = refinement_trace(&run.epochs, t0, next.end_time);
        map = refine_map(&map, &trace, frame, &stage)?.map;
    }
    let trace = refinement_trace(&run.epochs, t0, segments[segments.len() - 1].end_time);
    let refinement = refine_map(&map, &trace, frame, &cfg.refine)?;
    Ok(MapBuild {
        events,
        segments,
        initial,
        refinement,
    })
}

/// Appends `next` to the end of `map`, bridged by a transitional arc as long
/// as the chord from the map end to the segment anchor.
fn extend_map(map: &TrackMap, next: &IdentifiedSegment, frame: &LocalFrame) -> Result<TrackMap> {
    let end = map.chain(frame)?.end_pose();
    let chord = end.distance_to(next.anchor.position());
    let mut elements = map.elements.clone();
    if chord >= GAP_THRESHOLD {
        elements.push(TrackElement::transitional_arc(chord, end.curvature, next.curvature));
    }
    elements.push(next.element());
    TrackMap::new(map.origin, map.start_heading_deg, elements)
}

/// Estimation frame: tangent plane at the first valid fix.
pub fn estimation_frame(gnss: &[GnssFix]) -> Result<LocalFrame> {
    let first = gnss
        .iter()
        .find(|f| f.valid)
        .ok_or_else(|| Error::domain("no valid GNSS fix"))?;
    LocalFrame::new(first.position)
}

/// Straight and circular-arc stretches of the true track, in time.
pub fn truth_segments(track: &TrackMap, truth: &[TruthSample]) -> Vec<(SegmentShape, f64, f64)> {
    let mut out = Vec::new();
    let mut station = 0.0;
    for e in &track.elements {
        let (s0, s1) = (station, station + e.length);
        station = s1;
        let shape = match e.shape {
            Shape::Straight => SegmentShape::Straight,
            Shape::CircularArc => SegmentShape::CircularArc,
            Shape::TransitionalArc => continue,
        };
        let first = truth.iter().find(|s| s.arclength >= s0);
        let last = truth.iter().rev().find(|s| s.arclength <= s1);
        if let (Some(a), Some(b)) = (first, last) {
            if b.t > a.t {
                out.push((shape, a.t, b.t));
            }
        }
    }
    out
}

/// Compares recognized straights and arcs with the true ones: same shapes
/// in the same order and every boundary between two of them within `tol`
/// seconds. The start of the first and the end of the last stretch are the
/// ends of the run and are not compared. Returns the largest boundary offset
/// on a shape match.
pub fn compare_segments(events: &[GeometryEvent], truth: &[(SegmentShape, f64, f64)]) -> Option<f64> {
    let found: Vec<&GeometryEvent> = events.iter().filter(|e| e.kind != EventKind::EnterUnknown).collect();
    if found.len() != truth.len() {
        return None;
    }
    let mut worst: f64 = 0.0;
    for (i, (e, (shape, t0, t1))) in found.iter().zip(truth).enumerate() {
        let kind = match shape {
            SegmentShape::Straight => EventKind::EnterStraight,
            SegmentShape::CircularArc => EventKind::EnterArc,
        };
        if e.kind != kind {
            return None;
        }
        if i > 0 {
            worst = worst.max((e.t - t0).abs());
        }
        if i + 1 < truth.len() {
            worst = worst.max((e.end_t - t1).abs());
        }
    }
    Some(worst)
}

/// Radii of the circular arcs of a map in order, signed like curvature.
pub fn arc_radii(map: &TrackMap) -> Vec<f64> {
    map.elements
        .iter()
        .filter(|e| e.shape == Shape::CircularArc)
        .map(|e| 1.0 / e.start_curvature)
        .collect()
}

/// Cross-track accuracy of a map built from `epochs` between `t0` and `t1`:
/// the refinement RMS combined with the RMS of the trace's own cross-track
/// sigma, which the map inherits.
pub fn map_accuracy(fit_rms: f64, epochs: &[EpochLog], t0: f64, t1: f64) -> Option<f64> {
    let var: Vec<f64> = epochs
        .iter()
        .filter(|e| e.available && e.t >= t0 && e.t <= t1 && e.sigma3_cross.is_finite())
        .map(|e| (e.sigma3_cross / 3.0).powi(2))
        .collect();
    if var.is_empty() || !fit_rms.is_finite() {
        return None;
    }
    Some((fit_rms * fit_rms + var.iter().sum::<f64>() / var.len() as f64).sqrt())
}

/// Seed of the trip that is localized against the map of the survey run
/// with seed `seed`.
pub fn trip_seed(seed: u64) -> u64 {
    seed.wrapping_add(0x9e37_79b9_7f4a_7c15)
}

/// A simulated run together with its estimation frame and the truth in that
/// frame.
#[derive(Debug, Clone)]
pub struct FramedRun {
    pub sim: SimulatedRun,
    pub frame: LocalFrame,
    pub truth: Vec<TruthSample>,
}

impl FramedRun {
    pub fn simulate(track: &TrackMap, cfg: &RunConfig) -> Result<FramedRun> {
        let sim = simulate_run(track, cfg)?;
        let frame = estimation_frame(&sim.gnss)?;
        let truth = truth_in_frame(&sim.truth, &LocalFrame::new(sim.frame_origin)?, &frame);
        Ok(FramedRun { sim, frame, truth })
    }

    pub fn localize(&self, method: Method, cfg: &FilterConfig) -> Result<FilterRun> {
        run_filter(&self.sim.gnss, &self.sim.imu, &self.frame, method, cfg, None)
    }
}

/// Everything produced by one pipeline run: a survey run from which the map
/// is built and an independent trip over the same track that every method
/// localizes.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub track: TrackMap,
    pub survey: FramedRun,
    /// IMM run over the survey.
    pub survey_imm: FilterRun,
    pub map: MapBuild,
    /// Refined map against the true track.
    pub map_error: MapErrorStats,
    pub sigma_m: f64,
    pub trip: FramedRun,
    /// GNSS, KF and IMM over the trip.
    pub runs: Vec<FilterRun>,
    /// Trip IMM epochs with map-fused columns.
    pub fused: Vec<EpochLog>,
    /// GNSS, KF, IMM and IMM with map fusion, in that order.
    pub reports: Vec<EvalReport>,
}

impl ScenarioOutcome {
    pub fn run(&self, method: Method) -> &FilterRun {
        self.runs.iter().find(|r| r.method == method).expect("all methods are run")
    }

    pub fn report(&self, name: &str) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.method == name)
    }
}

/// Name of the map-fused IMM method in reports.
pub const FUSED_METHOD: &str = "imm+map";

/// Refined map against the true track sampled every metre, in `frame`.
pub fn map_error_vs_truth(map: &TrackMap, track: &TrackMap, truth_origin: GeoPoint, frame: &LocalFrame) -> Result<MapErrorStats> {
    let truth_frame = LocalFrame::new(truth_origin)?;
    let reference: Vec<[f64; 2]> = track
        .chain(&truth_frame)?
        .sample(1.0)
        .iter()
        .map(|(_, p)| frame.to_local(truth_frame.to_geo(p.position())))
        .collect();
    map_error_vs_chain(&map.chain(frame)?, &Polyline::new(reference)?)
}

/// Survey with `survey_cfg`, map, then localize the trip with `trip_cfg`.
pub fn run_pipeline(
    track_spec: &TrackSpec,
    survey_cfg: &RunConfig,
    trip_cfg: &RunConfig,
    filter_cfg: &FilterConfig,
    mapping: &MappingConfig,
) -> Result<ScenarioOutcome> {
    let track = build_track(track_spec)?;
    let survey = FramedRun::simulate(&track, survey_cfg)?;
    let survey_imm = survey.localize(Method::Imm, filter_cfg)?;
    let map = build_map(&survey_imm, &survey.frame, &filter_cfg.classify, mapping)?;
    let map_error = map_error_vs_truth(&map.refinement.map, &track, survey.sim.frame_origin, &survey.frame)?;
    let (t0, t1) = (map.segments[0].start_time, map.segments[map.segments.len() - 1].end_time);
    let accuracy = map_accuracy(map.refinement.fit_rms, &survey_imm.epochs, t0, t1);
    let sigma_m = filter_cfg.map_fusion.sigma_for(accuracy);

    let trip = FramedRun::simulate(&track, trip_cfg)?;
    let runs = Method::ALL
        .iter()
        .map(|&m| trip.localize(m, filter_cfg))
        .collect::<Result<Vec<_>>>()?;
    let imm = runs.iter().find(|r| r.method == Method::Imm).expect("imm run");
    let chain = map.refinement.map.chain(&trip.frame)?;
    let mut fused = imm.epochs.clone();
    fuse_log(&mut fused, &chain, sigma_m, &filter_cfg.map_fusion)?;

    let mut reports = Vec::new();
    for r in &runs {
        reports.push(EvalReport::new(r.method.name(), decompose_errors(&r.epochs, &trip.truth, false).0)?);
    }
    reports.push(EvalReport::new(FUSED_METHOD, decompose_errors(&fused, &trip.truth, true).0)?);

    Ok(ScenarioOutcome {
        track,
        survey,
        survey_imm,
        map,
        map_error,
        sigma_m,
        trip,
        runs,
        fused,
        reports,
    })
}

/// [`run_pipeline`] on the reference track and runs.
pub fn reference_pipeline(seed: u64, filter_cfg: &FilterConfig, mapping: &MappingConfig) -> Result<ScenarioOutcome> {
    run_pipeline(
        &reference_track(),
        &reference_run(seed),
        &reference_run(trip_seed(seed)),
        filter_cfg,
        mapping,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_track_is_5_7_km() {
        let track = build_track(&reference_track()).unwrap();
        assert!((track.total_length() - 5700.0).abs() < 1e-9);
        let cfg = reference_run(1);
        cfg.validate().unwrap();
    }
}
