use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::ekf::{constrained_step, kf_step, ModelNoise, SensorModel};
use super::{GnssMeasurement, ImuBatch, KinematicState, Mat5, StepFlags, Vec5, OMEGA, PSI, V};
use crate::geom::normalize_angle;

pub const STRAIGHT: usize = 0;
pub const ARC: usize = 1;
pub const UNCONSTRAINED: usize = 2;

const LIKELIHOOD_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImmConfig {
    pub straight: ModelNoise,
    pub arc: ModelNoise,
    pub unconstrained: ModelNoise,
    /// Variance of the straight model's zero yaw-rate pseudo-measurement.
    pub straight_yaw_rate_var: f64,
    /// Row-stochastic model transition matrix (straight, arc, unconstrained).
    pub transition: [[f64; 3]; 3],
    /// The arc model's likelihood is scaled by the probability that its
    /// yaw rate exceeds this curvature times the speed, 1/m.
    pub min_arc_curvature: f64,
}

impl Default for ImmConfig {
    fn default() -> Self {
        ImmConfig {
            straight: ModelNoise {
                q_along: 0.01,
                q_cross: 0.0,
                q_speed: 0.005,
                q_heading: 4e-7,
                q_yaw_rate: 1e-9,
            },
            arc: ModelNoise {
                q_along: 0.01,
                q_cross: 0.0,
                q_speed: 0.005,
                q_heading: 4e-7,
                q_yaw_rate: 1e-9,
            },
            unconstrained: ModelNoise {
                q_along: 0.05,
                q_cross: 0.05,
                q_speed: 0.02,
                q_heading: 1e-6,
                q_yaw_rate: 4e-6,
            },
            straight_yaw_rate_var: 1e-12,
            transition: [[0.98, 0.005, 0.015], [0.005, 0.98, 0.015], [0.01, 0.01, 0.98]],
            min_arc_curvature: 1.0 / 3000.0,
        }
    }
}

impl ImmConfig {
    pub fn validate(&self) -> crate::Result<()> {
        for (i, row) in self.transition.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
                return Err(crate::Error::Config(format!("transition row {i} is not a probability vector")));
            }
        }
        if !(self.straight_yaw_rate_var > 0.0) || !(self.min_arc_curvature >= 0.0) {
            return Err(crate::Error::Config("invalid IMM constraint parameters".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImmState {
    pub models: [KinematicState; 3],
    pub mu: [f64; 3],
    pub fused: KinematicState,
}

impl ImmState {
    pub fn new(initial: KinematicState, mu: [f64; 3]) -> ImmState {
        ImmState {
            models: [initial; 3],
            mu,
            fused: initial,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImmOutcome {
    pub state: ImmState,
    pub flags: StepFlags,
    /// Per-model log-likelihood of the step.
    pub log_likelihoods: [f64; 3],
}

/// Probability-weighted mean and covariance, heading averaged on the
/// circle. Zero weights are skipped.
pub(crate) fn moment_match(states: &[KinematicState; 3], weights: &[f64; 3]) -> KinematicState {
    let r = (0..3).fold(0, |best, i| if weights[i] > weights[best] { i } else { best });
    let psi_ref = states[r].x[PSI];
    let diff = |x: &Vec5, mean: &Vec5| {
        let mut d = x - mean;
        d[PSI] = normalize_angle(x[PSI] - mean[PSI]);
        d
    };
    let mut mean = Vec5::zeros();
    let mut dpsi = 0.0;
    for i in 0..3 {
        if weights[i] == 0.0 {
            continue;
        }
        mean += states[i].x * weights[i];
        dpsi += weights[i] * normalize_angle(states[i].x[PSI] - psi_ref);
    }
    mean[PSI] = normalize_angle(psi_ref + dpsi);
    let mut p = Mat5::zeros();
    for i in 0..3 {
        if weights[i] == 0.0 {
            continue;
        }
        let d = diff(&states[i].x, &mean);
        p += (states[i].p + d * d.transpose()) * weights[i];
    }
    KinematicState::new(mean, p)
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Probability that the yaw rate magnitude is at least `threshold`.
fn exceedance(state: &KinematicState, threshold: f64) -> f64 {
    let w = state.x[OMEGA];
    let sd = state.p[(OMEGA, OMEGA)].max(0.0).sqrt();
    if sd == 0.0 {
        return if w.abs() >= threshold { 1.0 } else { 0.0 };
    }
    std_normal_cdf((-threshold - w) / sd) + 1.0 - std_normal_cdf((threshold - w) / sd)
}

/// One IMM cycle: mixing, per-model EKF steps, probability update and
/// moment-matched output.
pub fn imm_step(
    imm: &ImmState,
    imu: &ImuBatch,
    gnss: Option<&GnssMeasurement>,
    dt: f64,
    cfg: &ImmConfig,
    sensors: &SensorModel,
) -> ImmOutcome {
    let pi = &cfg.transition;
    let mut c = [0.0; 3];
    for (j, cj) in c.iter_mut().enumerate() {
        for i in 0..3 {
            *cj += pi[i][j] * imm.mu[i];
        }
    }
    let mut mixed = imm.models;
    for j in 0..3 {
        if c[j] > 0.0 {
            let w = [0, 1, 2].map(|i| pi[i][j] * imm.mu[i] / c[j]);
            mixed[j] = moment_match(&imm.models, &w);
        }
    }

    let mut flags = StepFlags::default();
    let outs = [
        constrained_step(&mixed[STRAIGHT], imu, gnss, dt, &cfg.straight, sensors, Some(cfg.straight_yaw_rate_var)),
        constrained_step(&mixed[ARC], imu, gnss, dt, &cfg.arc, sensors, None),
        kf_step(&mixed[UNCONSTRAINED], imu, gnss, dt, &cfg.unconstrained, sensors),
    ];
    let mut ll = [0.0; 3];
    for j in 0..3 {
        flags.merge(outs[j].flags);
        ll[j] = outs[j].log_likelihood;
    }
    let arc = &outs[ARC].state;
    ll[ARC] += exceedance(arc, cfg.min_arc_curvature * arc.x[V].abs()).ln();

    let floor = LIKELIHOOD_FLOOR.ln();
    let live: Vec<usize> = (0..3).filter(|&j| c[j] > 0.0).collect();
    let mu = if live.iter().all(|&j| !(ll[j] >= floor)) {
        flags.likelihood_underflow = true;
        imm.mu
    } else {
        let top = live.iter().map(|&j| ll[j].max(floor)).fold(f64::NEG_INFINITY, f64::max);
        let mut w = [0.0; 3];
        for &j in &live {
            w[j] = c[j] * (ll[j].max(floor) - top).exp();
        }
        let total: f64 = w.iter().sum();
        w.map(|v| v / total)
    };
    let models = [outs[0].state, outs[1].state, outs[2].state];
    let fused = moment_match(&models, &mu);
    ImmOutcome {
        state: ImmState { models, mu, fused },
        flags,
        log_likelihoods: ll,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::tests::unconstrained;

    fn initial() -> KinematicState {
        let mut p = Mat5::identity();
        p[(3, 3)] = 0.01;
        p[(4, 4)] = 1e-4;
        KinematicState::new(Vec5::from_column_slice(&[1.0, 2.0, 12.0, 3.1, 0.01]), p)
    }

    #[test]
    fn identity_transition_degenerates_to_ekf() {
        let mut cfg = ImmConfig::default();
        cfg.transition = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let sensors = SensorModel::default();
        let mut imm = ImmState::new(initial(), [0.0, 0.0, 1.0]);
        let mut kf = initial();
        for k in 0..50 {
            let batch = ImuBatch {
                accel: 0.1 * (k as f64).sin(),
                yaw_rate: 0.01 + 1e-3 * (k as f64).cos(),
            };
            let m = GnssMeasurement {
                position: [1.0 + k as f64, 2.0 - 0.5 * k as f64],
                cov: nalgebra::Matrix2::new(25.0, 1.0, 1.0, 20.0),
                speed: 12.0,
                speed_var: 0.01,
            };
            let g = (k % 10 == 0).then_some(&m);
            imm = imm_step(&imm, &batch, g, 0.1, &cfg, &sensors).state;
            kf = kf_step(&kf, &batch, g, 0.1, &unconstrained(), &sensors).state;
            assert_eq!(imm.fused, kf);
            assert_eq!(imm.mu, [0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn probabilities_stay_normalized() {
        let cfg = ImmConfig::default();
        let sensors = SensorModel::default();
        let mut imm = ImmState::new(initial(), [0.2, 0.3, 0.5]);
        for k in 0..200 {
            let batch = ImuBatch {
                accel: 0.0,
                yaw_rate: if k < 100 { 0.0 } else { 0.05 },
            };
            imm = imm_step(&imm, &batch, None, 0.1, &cfg, &sensors).state;
            let s: f64 = imm.mu.iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
            assert!(imm.mu.iter().all(|m| (0.0..=1.0).contains(m)));
        }
    }

    #[test]
    fn moment_match_matches_direct_formula() {
        let a = initial();
        let mut b = initial();
        b.x[0] += 2.0;
        b.x[PSI] = -3.1;
        let mut c = initial();
        c.x[1] -= 1.0;
        let w = [0.5, 0.3, 0.2];
        let m = moment_match(&[a, b, c], &w);
        let x0 = 0.5 * a.x[0] + 0.3 * b.x[0] + 0.2 * c.x[0];
        assert!((m.x[0] - x0).abs() < 1e-12);
        // Heading average across the +-pi seam.
        let unwrapped = 0.5 * 3.1 + 0.3 * (-3.1 + 2.0 * std::f64::consts::PI) + 0.2 * 3.1;
        assert!((m.x[PSI] - normalize_angle(unwrapped)).abs() < 1e-12);
        let d = b.x[0] - x0;
        let pxx = 0.5 * (a.p[(0, 0)] + (a.x[0] - x0).powi(2)) + 0.3 * (b.p[(0, 0)] + d * d) + 0.2 * (c.p[(0, 0)] + (c.x[0] - x0).powi(2));
        assert!((m.p[(0, 0)] - pxx).abs() < 1e-12);
    }
}
