use nalgebra::{Matrix2, Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use super::{GnssMeasurement, ImuBatch, KinematicState, Mat5, StepFlags, OMEGA, PSI, V, X, Y};
use crate::geom::normalize_angle;

/// Process noise spectral densities. Position noise is split along and
/// across the current heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelNoise {
    /// m^2/s
    pub q_along: f64,
    /// m^2/s
    pub q_cross: f64,
    /// (m/s)^2/s
    pub q_speed: f64,
    /// rad^2/s
    pub q_heading: f64,
    /// (rad/s)^2/s
    pub q_yaw_rate: f64,
}

/// IMU error model as seen by the filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorModel {
    pub gyro_noise_density: f64,
    pub gyro_bias_sigma: f64,
    pub accel_noise_density: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            gyro_noise_density: 5e-5,
            gyro_bias_sigma: 1e-4,
            accel_noise_density: 0.01,
        }
    }
}

impl SensorModel {
    /// Variance of a gyro batch mean over `dt` seconds, bias included.
    pub fn gyro_variance(&self, dt: f64) -> f64 {
        self.gyro_noise_density.powi(2) / dt + self.gyro_bias_sigma.powi(2)
    }
}

/// Outcome of one filter step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: KinematicState,
    pub flags: StepFlags,
    /// Log density of all measurement innovations of the step.
    pub log_likelihood: f64,
}

/// Constant turn rate and speed prediction driven by the batch mean forward
/// acceleration, midpoint-integrated.
pub(crate) fn predict(state: &KinematicState, accel: f64, dt: f64, noise: &ModelNoise, sensors: &SensorModel) -> KinematicState {
    let s = &state.x;
    let v_mid = s[V] + 0.5 * accel * dt;
    let psi_mid = s[PSI] + 0.5 * s[OMEGA] * dt;
    let (sin, cos) = psi_mid.sin_cos();

    let mut x = *s;
    x[X] += v_mid * cos * dt;
    x[Y] += v_mid * sin * dt;
    x[V] += accel * dt;
    x[PSI] = normalize_angle(s[PSI] + s[OMEGA] * dt);

    let mut f = Mat5::identity();
    f[(X, V)] = cos * dt;
    f[(X, PSI)] = -v_mid * sin * dt;
    f[(X, OMEGA)] = -v_mid * sin * 0.5 * dt * dt;
    f[(Y, V)] = sin * dt;
    f[(Y, PSI)] = v_mid * cos * dt;
    f[(Y, OMEGA)] = v_mid * cos * 0.5 * dt * dt;
    f[(PSI, OMEGA)] = dt;

    let mut q = Mat5::zeros();
    let (qa, qc) = (noise.q_along * dt, noise.q_cross * dt);
    q[(X, X)] = qa * cos * cos + qc * sin * sin;
    q[(Y, Y)] = qa * sin * sin + qc * cos * cos;
    q[(X, Y)] = (qa - qc) * sin * cos;
    q[(Y, X)] = q[(X, Y)];
    q[(V, V)] = (noise.q_speed + sensors.accel_noise_density.powi(2)) * dt;
    q[(PSI, PSI)] = noise.q_heading * dt;
    q[(OMEGA, OMEGA)] = noise.q_yaw_rate * dt;

    let p = f * state.p * f.transpose() + q;
    KinematicState { x, p: symmetrize(&p) }
}

pub(crate) fn symmetrize(p: &Mat5) -> Mat5 {
    (p + p.transpose()) * 0.5
}

/// Projects a symmetric matrix onto the PSD cone when it has drifted out.
pub(crate) fn ensure_psd(p: &Mat5) -> (Mat5, bool) {
    let p = symmetrize(p);
    if p.cholesky().is_some() {
        return (p, false);
    }
    let eig = p.symmetric_eigen();
    if eig.eigenvalues.min() >= 0.0 {
        return (p, false);
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let fixed = eig.eigenvectors * Mat5::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    (symmetrize(&fixed), true)
}

/// Linear update `z = H x + noise(R)` with an `M`-dimensional measurement.
/// Returns `None` when the innovation covariance is singular.
pub(crate) fn update<const M: usize>(
    state: &KinematicState,
    h: &SMatrix<f64, M, 5>,
    innovation: SVector<f64, M>,
    r: &SMatrix<f64, M, M>,
) -> Option<(KinematicState, f64)> {
    let s = h * state.p * h.transpose() + r;
    let s = (s + s.transpose()) * 0.5;
    let chol = s.cholesky()?;
    let s_inv = chol.inverse();
    let k = state.p * h.transpose() * s_inv;
    let mut x = state.x + k * innovation;
    x[PSI] = normalize_angle(x[PSI]);
    let i_kh = Mat5::identity() - k * h;
    let p = i_kh * state.p * i_kh.transpose() + k * r * k.transpose();
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let maha = (innovation.transpose() * s_inv * innovation)[(0, 0)];
    let ll = -0.5 * (maha + log_det + M as f64 * (2.0 * std::f64::consts::PI).ln());
    if !ll.is_finite() || !x.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some((KinematicState { x, p: symmetrize(&p) }, ll))
}

pub(crate) fn update_yaw_rate(state: &KinematicState, z: f64, var: f64) -> Option<(KinematicState, f64)> {
    let mut h = SMatrix::<f64, 1, 5>::zeros();
    h[(0, OMEGA)] = 1.0;
    update(state, &h, SVector::<f64, 1>::new(z - state.x[OMEGA]), &SMatrix::<f64, 1, 1>::new(var))
}

pub(crate) fn update_gnss(state: &KinematicState, m: &GnssMeasurement) -> Option<(KinematicState, f64)> {
    let mut h = SMatrix::<f64, 3, 5>::zeros();
    h[(0, X)] = 1.0;
    h[(1, Y)] = 1.0;
    h[(2, V)] = 1.0;
    let nu = Vector3::new(m.position[0] - state.x[X], m.position[1] - state.x[Y], m.speed - state.x[V]);
    let mut r = Matrix3::zeros();
    r.fixed_view_mut::<2, 2>(0, 0).copy_from(&m.cov);
    r[(2, 2)] = m.speed_var;
    update(state, &h, nu, &r)
}

fn finish(state: KinematicState, flags: &mut StepFlags) -> KinematicState {
    let mut state = state;
    if state.x[V] < 0.0 {
        state.x[V] = 0.0;
        flags.speed_clamped = true;
    }
    let (p, projected) = ensure_psd(&state.p);
    state.p = p;
    flags.psd_projected |= projected;
    state
}

/// Extended Kalman filter step of the unconstrained motion model: predict
/// with the IMU batch, update with the gyro yaw rate and, if present, the
/// GNSS position and speed.
pub fn kf_step(
    state: &KinematicState,
    imu: &ImuBatch,
    gnss: Option<&GnssMeasurement>,
    dt: f64,
    noise: &ModelNoise,
    sensors: &SensorModel,
) -> StepOutcome {
    constrained_step(state, imu, gnss, dt, noise, sensors, None)
}

/// As [`kf_step`], with an optional yaw-rate pseudo-measurement of zero
/// (variance given) applied to the prediction before the gyro update.
pub(crate) fn constrained_step(
    state: &KinematicState,
    imu: &ImuBatch,
    gnss: Option<&GnssMeasurement>,
    dt: f64,
    noise: &ModelNoise,
    sensors: &SensorModel,
    zero_yaw_rate_var: Option<f64>,
) -> StepOutcome {
    let mut flags = StepFlags::default();
    let mut ll = 0.0;
    let mut st = predict(state, imu.accel, dt, noise, sensors);
    if let Some(var) = zero_yaw_rate_var {
        match update_yaw_rate(&st, 0.0, var) {
            Some((s, _)) => st = s,
            None => flags.update_skipped = true,
        }
    }
    match update_yaw_rate(&st, imu.yaw_rate, sensors.gyro_variance(dt)) {
        Some((s, l)) => {
            st = s;
            ll += l;
        }
        None => flags.update_skipped = true,
    }
    if let Some(m) = gnss {
        match update_gnss(&st, m) {
            Some((s, l)) => {
                st = s;
                ll += l;
            }
            None => flags.update_skipped = true,
        }
    }
    StepOutcome {
        state: finish(st, &mut flags),
        flags,
        log_likelihood: ll,
    }
}

/// Position covariance block.
pub fn position_covariance(state: &KinematicState) -> Matrix2<f64> {
    state.p.fixed_view::<2, 2>(0, 0).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::tests::{still_batch, unconstrained};
    use crate::filters::Vec5;

    #[test]
    fn scalar_kalman_arithmetic() {
        let mut st = KinematicState::new(Vec5::zeros(), Mat5::identity());
        st.x[X] = 0.0;
        let mut h = SMatrix::<f64, 1, 5>::zeros();
        h[(0, X)] = 1.0;
        let (post, _) = update(&st, &h, SVector::<f64, 1>::new(2.0), &SMatrix::<f64, 1, 1>::new(1.0)).unwrap();
        assert!((post.x[X] - 1.0).abs() < 1e-15);
        assert!((post.p[(X, X)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn prediction_only_grows_trace() {
        let mut st = KinematicState::new(Vec5::from_column_slice(&[0.0, 0.0, 10.0, 0.3, 0.01]), Mat5::identity() * 0.1);
        let batch = ImuBatch {
            accel: 0.0,
            yaw_rate: 0.01,
        };
        let noise = unconstrained();
        let sensors = SensorModel::default();
        for _ in 0..100 {
            let before = st.p.trace();
            st = predict(&st, batch.accel, 0.1, &noise, &sensors);
            assert!(st.p.trace() >= before);
        }
    }

    #[test]
    fn singular_innovation_is_flagged() {
        let st = KinematicState::new(Vec5::zeros(), Mat5::zeros());
        let m = GnssMeasurement {
            position: [1.0, 0.0],
            cov: Matrix2::zeros(),
            speed: 0.0,
            speed_var: 0.0,
        };
        let noise = ModelNoise {
            q_along: 0.0,
            q_cross: 0.0,
            q_speed: 0.0,
            q_heading: 0.0,
            q_yaw_rate: 0.0,
        };
        let sensors = SensorModel {
            gyro_noise_density: 0.0,
            gyro_bias_sigma: 0.0,
            accel_noise_density: 0.0,
        };
        let out = kf_step(&st, &still_batch(), Some(&m), 0.1, &noise, &sensors);
        assert!(out.flags.update_skipped);
        assert_eq!(out.state.x[X], 0.0);
    }
}
