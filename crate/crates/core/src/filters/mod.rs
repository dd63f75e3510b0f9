//! State estimation: the baseline EKF, the straight/arc/unconstrained IMM,
//! geometry classification from model probabilities and segment fitting.

mod classify;
mod ekf;
mod fit;
mod imm;
mod log;
mod run;

pub use classify::{classify_segments, ClassifyConfig, EpochModes, EventKind, GeometryEvent};
pub use ekf::{kf_step, position_covariance, ModelNoise, SensorModel, StepOutcome};
pub use fit::{fit_arc_params, fit_circle, fit_straight_params, CircleFit, MAX_FIT_RADIUS};
pub use imm::{imm_step, ImmConfig, ImmOutcome, ImmState, ARC, STRAIGHT, UNCONSTRAINED};
pub use log::{parse_state_log, read_state_log, state_log_to_string, write_state_log, EpochLog, FusedColumns};
pub use run::{run_filter, FilterConfig, FilterRun, InitConfig, Method};

pub(crate) use ekf::update as linear_update;

use nalgebra::{Matrix2, SMatrix, SVector};

use crate::geom::LocalFrame;
use crate::sim::{GnssFix, ImuSample};

pub type Vec5 = SVector<f64, 5>;
pub type Mat5 = SMatrix<f64, 5, 5>;

pub const X: usize = 0;
pub const Y: usize = 1;
pub const V: usize = 2;
pub const PSI: usize = 3;
pub const OMEGA: usize = 4;

/// Planar train state `[x, y, v, psi, omega]` with covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState {
    pub x: Vec5,
    pub p: Mat5,
}

impl KinematicState {
    pub fn new(x: Vec5, p: Mat5) -> Self {
        KinematicState { x, p }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x[X], self.x[Y]]
    }

    pub fn heading(&self) -> f64 {
        self.x[PSI]
    }

    pub fn position_covariance(&self) -> Matrix2<f64> {
        position_covariance(self)
    }

    /// 3-sigma position extent along and across the state's own heading.
    pub fn sigma3_along_cross(&self) -> (f64, f64) {
        let (s, c) = self.x[PSI].sin_cos();
        let p = self.position_covariance();
        let along = c * c * p[(0, 0)] + 2.0 * s * c * p[(0, 1)] + s * s * p[(1, 1)];
        let cross = s * s * p[(0, 0)] - 2.0 * s * c * p[(0, 1)] + c * c * p[(1, 1)];
        (3.0 * along.max(0.0).sqrt(), 3.0 * cross.max(0.0).sqrt())
    }
}

/// Conditions raised during a step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepFlags {
    /// A measurement update was skipped for a singular innovation covariance.
    pub update_skipped: bool,
    pub speed_clamped: bool,
    pub psd_projected: bool,
    /// All IMM model likelihoods underflowed; probabilities were kept.
    pub likelihood_underflow: bool,
}

impl StepFlags {
    pub fn merge(&mut self, other: StepFlags) {
        self.update_skipped |= other.update_skipped;
        self.speed_clamped |= other.speed_clamped;
        self.psd_projected |= other.psd_projected;
        self.likelihood_underflow |= other.likelihood_underflow;
    }
}

/// IMU samples averaged over one filter step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuBatch {
    pub accel: f64,
    pub yaw_rate: f64,
}

impl ImuBatch {
    pub fn mean(samples: &[ImuSample]) -> Option<ImuBatch> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        Some(ImuBatch {
            accel: samples.iter().map(|s| s.accel[0]).sum::<f64>() / n,
            yaw_rate: samples.iter().map(|s| s.gyro[2]).sum::<f64>() / n,
        })
    }
}

/// A GNSS fix in local coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnssMeasurement {
    pub position: [f64; 2],
    pub cov: Matrix2<f64>,
    pub speed: f64,
    pub speed_var: f64,
}

impl GnssMeasurement {
    pub fn from_fix(fix: &GnssFix, frame: &LocalFrame) -> GnssMeasurement {
        GnssMeasurement {
            position: frame.to_local(fix.position),
            cov: fix.covariance(),
            speed: fix.speed,
            speed_var: fix.speed_sigma * fix.speed_sigma,
        }
    }
}
