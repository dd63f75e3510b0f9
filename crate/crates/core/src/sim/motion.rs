use super::SpeedSegment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Phase {
    t0: f64,
    s0: f64,
    v0: f64,
    accel: f64,
}

/// Arclength, speed and acceleration over time for a piecewise-constant
/// speed profile whose steps are smoothed into constant-acceleration ramps
/// centred on the profile breakpoints.
#[derive(Debug, Clone)]
pub(crate) struct SpeedPlan {
    phases: Vec<Phase>,
    duration: f64,
    length: f64,
}

impl SpeedPlan {
    pub fn new(profile: &[SpeedSegment], max_accel: f64, length: f64) -> Result<SpeedPlan> {
        let covered = profile.last().map_or(0.0, |p| p.to_m);
        if covered < length - 1e-9 {
            return Err(Error::domain(format!(
                "speed profile covers {covered} m of a {length} m track"
            )));
        }
        // (start, end, v_start, v_end) pieces in arclength.
        let mut pieces: Vec<(f64, f64, f64, f64)> = Vec::new();
        let mut s = 0.0;
        let mut v = profile[0].speed_mps;
        for w in profile.windows(2) {
            let (a, b) = (w[0], w[1]);
            if a.to_m >= length || a.speed_mps == b.speed_mps {
                continue;
            }
            let half = (b.speed_mps.powi(2) - a.speed_mps.powi(2)).abs() / (4.0 * max_accel);
            let (r0, r1) = (a.to_m - half, a.to_m + half);
            if r0 < s || r1 > b.to_m.min(length) {
                return Err(Error::Config(format!(
                    "speed change at {} m needs {:.1} m of ramp, which does not fit",
                    a.to_m,
                    2.0 * half
                )));
            }
            if r0 > s {
                pieces.push((s, r0, v, v));
            }
            pieces.push((r0, r1, a.speed_mps, b.speed_mps));
            s = r1;
            v = b.speed_mps;
        }
        if length > s {
            pieces.push((s, length, v, v));
        }

        let mut phases = Vec::with_capacity(pieces.len());
        let mut t = 0.0;
        for (s0, s1, v0, v1) in pieces {
            let ds = s1 - s0;
            let (accel, dt) = if v0 == v1 {
                (0.0, ds / v0)
            } else {
                let a = (v1 * v1 - v0 * v0) / (2.0 * ds);
                (a, (v1 - v0) / a)
            };
            phases.push(Phase { t0: t, s0, v0, accel });
            t += dt;
        }
        Ok(SpeedPlan {
            phases,
            duration: t,
            length,
        })
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// `(arclength, speed, acceleration)` at time `t` since the start.
    pub fn at(&self, t: f64) -> (f64, f64, f64) {
        let k = self.phases.partition_point(|p| p.t0 <= t).max(1) - 1;
        let p = &self.phases[k];
        let tau = t - p.t0;
        let v = p.v0 + p.accel * tau;
        let s = p.s0 + p.v0 * tau + 0.5 * p.accel * tau * tau;
        (s.min(self.length), v, p.accel)
    }
}
