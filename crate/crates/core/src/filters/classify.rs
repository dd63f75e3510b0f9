//! Segmentation of a run into straights, arcs and unknown stretches from the
//! IMM model probabilities.

use serde::{Deserialize, Serialize};

use super::imm::{ARC, STRAIGHT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    EnterStraight,
    EnterArc,
    EnterUnknown,
}

/// A recognized stretch of track geometry, `t..end_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryEvent {
    pub kind: EventKind,
    pub t: f64,
    pub end_t: f64,
}

/// Model probabilities and the arc model's yaw rate at one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochModes {
    pub t: f64,
    pub mu: [f64; 3],
    pub speed: f64,
    pub arc_yaw_rate: f64,
    pub arc_yaw_rate_var: f64,
}

impl EpochModes {
    fn curvature(&self) -> (f64, f64) {
        let v = self.speed.max(1.0);
        (self.arc_yaw_rate / v, self.arc_yaw_rate_var.max(0.0).sqrt() / v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyConfig {
    pub open_threshold: f64,
    pub close_threshold: f64,
    pub confirm_epochs: usize,
    /// An arc is split when its curvature level moves by more than this many
    /// sigmas for `confirm_epochs` epochs.
    pub level_shift_sigmas: f64,
    /// Lower bound on the curvature level sigma, 1/m.
    pub level_sigma_floor: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            open_threshold: 0.9,
            close_threshold: 0.5,
            confirm_epochs: 3,
            level_shift_sigmas: 3.0,
            level_sigma_floor: 2e-4,
        }
    }
}

struct Open {
    model: usize,
    start: usize,
    level_sum: f64,
    level_n: usize,
    shifted: usize,
    low: usize,
}

fn kind_of(model: usize) -> EventKind {
    if model == STRAIGHT {
        EventKind::EnterStraight
    } else {
        EventKind::EnterArc
    }
}

/// Hysteresis segmentation of an epoch history. A segment opens once its
/// model stays above `open_threshold` and is dated back to where the model
/// rose above `close_threshold`. Stretches not claimed by a straight or arc
/// are reported as unknown.
pub fn classify_segments(history: &[EpochModes], cfg: &ClassifyConfig) -> Vec<GeometryEvent> {
    let mut segments: Vec<GeometryEvent> = Vec::new();
    let mut open: Option<Open> = None;
    let mut runs = [0usize; 2];
    let mut floor = 0usize;
    let confirm = cfg.confirm_epochs.max(1);

    for (k, e) in history.iter().enumerate() {
        if let Some(o) = open.as_mut() {
            o.low = if e.mu[o.model] < cfg.close_threshold { o.low + 1 } else { 0 };
            if o.low >= confirm {
                segments.push(GeometryEvent {
                    kind: kind_of(o.model),
                    t: history[o.start].t,
                    end_t: history[k + 1 - confirm].t,
                });
                floor = k + 1 - confirm;
                open = None;
            } else if o.model == ARC && o.low == 0 {
                let (kappa, sd) = e.curvature();
                let sd = sd.max(cfg.level_sigma_floor);
                let level = o.level_sum / o.level_n.max(1) as f64;
                if o.level_n >= confirm && (kappa - level).abs() > cfg.level_shift_sigmas * sd {
                    o.shifted += 1;
                } else {
                    o.shifted = 0;
                    o.level_sum += kappa;
                    o.level_n += 1;
                }
                if o.shifted >= confirm {
                    let split = k + 1 - confirm;
                    segments.push(GeometryEvent {
                        kind: EventKind::EnterArc,
                        t: history[o.start].t,
                        end_t: history[split].t,
                    });
                    let level_sum = history[split..=k].iter().map(|e| e.curvature().0).sum();
                    *o = Open {
                        model: ARC,
                        start: split,
                        level_sum,
                        level_n: confirm,
                        shifted: 0,
                        low: 0,
                    };
                }
            }
        }

        for (slot, model) in [STRAIGHT, ARC].into_iter().enumerate() {
            runs[slot] = if e.mu[model] > cfg.open_threshold { runs[slot] + 1 } else { 0 };
            if open.is_none() && runs[slot] >= confirm {
                let confirmed = k + 1 - confirm;
                let mut start = confirmed;
                while start > floor && history[start - 1].mu[model] > cfg.close_threshold {
                    start -= 1;
                }
                let level_sum = history[confirmed..=k].iter().map(|e| e.curvature().0).sum();
                open = Some(Open {
                    model,
                    start,
                    level_sum,
                    level_n: confirm,
                    shifted: 0,
                    low: 0,
                });
            }
        }
    }
    if let (Some(o), Some(last)) = (open, history.last()) {
        segments.push(GeometryEvent {
            kind: kind_of(o.model),
            t: history[o.start].t,
            end_t: last.t,
        });
    }

    let (Some(first), Some(last)) = (history.first(), history.last()) else {
        return Vec::new();
    };
    let mut events = Vec::with_capacity(2 * segments.len() + 1);
    let mut cursor = first.t;
    for s in segments {
        if s.t > cursor {
            events.push(GeometryEvent {
                kind: EventKind::EnterUnknown,
                t: cursor,
                end_t: s.t,
            });
        }
        cursor = s.end_t;
        events.push(s);
    }
    if last.t > cursor {
        events.push(GeometryEvent {
            kind: EventKind::EnterUnknown,
            t: cursor,
            end_t: last.t,
        });
    }
    events
}
