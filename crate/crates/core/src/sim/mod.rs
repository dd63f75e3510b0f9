//! Ground-truth runs over a track and synthetic GNSS/IMU streams.

mod config;
mod io;
mod motion;

pub use config::{build_track, ElementSpec, ImuNoise, Inflation, Interval, RunConfig, SpeedSegment, TrackSpec};
pub use io::{read_jsonl, write_jsonl, RunStreams};

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geom::{GeoPoint, LocalFrame, Pose2};
use crate::trackmap::TrackMap;
use motion::SpeedPlan;

pub const GRAVITY: f64 = 9.80665;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnssFix {
    pub t: f64,
    pub position: GeoPoint,
    /// m/s
    pub speed: f64,
    pub speed_sigma: f64,
    /// East/north position covariance, m^2.
    pub cov: [[f64; 2]; 2],
    pub valid: bool,
}

impl GnssFix {
    pub fn covariance(&self) -> Matrix2<f64> {
        Matrix2::new(self.cov[0][0], self.cov[0][1], self.cov[1][0], self.cov[1][1])
    }

    /// Three times the square root of the largest covariance eigenvalue.
    pub fn sigma3_max(&self) -> f64 {
        let e = SymmetricEigen::new(self.covariance()).eigenvalues;
        3.0 * e.max().max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    /// Body frame (forward, left, up), m/s^2.
    pub accel: [f64; 3],
    /// rad/s; `gyro[2]` is the yaw rate.
    pub gyro: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub t: f64,
    /// In the run frame (tangent plane at the track origin).
    pub pose: Pose2,
    pub speed: f64,
    pub yaw_rate: f64,
    /// Distance travelled along the track.
    pub arclength: f64,
    pub accel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedRun {
    /// Origin of the frame `truth` poses are expressed in.
    pub frame_origin: GeoPoint,
    pub truth: Vec<TruthSample>,
    pub gnss: Vec<GnssFix>,
    pub imu: Vec<ImuSample>,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Base GNSS position covariance (before inflation).
pub fn gnss_base_covariance(cfg: &RunConfig) -> Matrix2<f64> {
    let (s, c) = cfg.gnss_axis_orientation_deg.to_radians().sin_cos();
    let rot = Matrix2::new(c, -s, s, c);
    let major = cfg.gnss_sigma_m * cfg.gnss_axis_ratio;
    let d = Matrix2::new(major * major, 0.0, 0.0, cfg.gnss_sigma_m * cfg.gnss_sigma_m);
    rot * d * rot.transpose()
}

/// Drives along `map` with the configured speed profile and synthesizes the
/// sensor streams. Deterministic for a fixed configuration and seed.
pub fn simulate_run(map: &TrackMap, cfg: &RunConfig) -> Result<SimulatedRun> {
    cfg.validate()?;
    map.validate()?;
    let frame = LocalFrame::new(map.origin)?;
    let chain = map.chain(&frame)?;
    let plan = SpeedPlan::new(&cfg.speed_profile, cfg.max_accel_mps2, chain.total_length())?;

    let mut gnss_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    gnss_rng.set_stream(1);
    let mut imu_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    imu_rng.set_stream(2);

    let base_cov = gnss_base_covariance(cfg);
    let dt = 1.0 / cfg.imu_rate_hz;
    let per_sample = dt.recip().sqrt();
    let gyro_sd = cfg.imu.gyro_noise_density * per_sample;
    let accel_sd = cfg.imu.accel_noise_density * per_sample;
    let every = cfg.imu_per_gnss();
    let steps = (plan.duration() / dt).floor() as usize;

    let mut truth = Vec::with_capacity(steps + 1);
    let mut imu = Vec::with_capacity(steps + 1);
    let mut gnss = Vec::with_capacity(steps / every + 1);
    for k in 0..=steps {
        let rel = k as f64 * dt;
        let t = cfg.start_time + rel;
        let (s, v, a) = plan.at(rel);
        let pose = chain.pose_at_station(s)?;
        let yaw_rate = v * pose.curvature;
        truth.push(TruthSample {
            t,
            pose,
            speed: v,
            yaw_rate,
            arclength: s,
            accel: a,
        });
        imu.push(ImuSample {
            t,
            accel: [
                a + cfg.imu.accel_bias + accel_sd * gauss(&mut imu_rng),
                v * v * pose.curvature + accel_sd * gauss(&mut imu_rng),
                GRAVITY + accel_sd * gauss(&mut imu_rng),
            ],
            gyro: [
                gyro_sd * gauss(&mut imu_rng),
                gyro_sd * gauss(&mut imu_rng),
                yaw_rate + cfg.imu.gyro_bias + gyro_sd * gauss(&mut imu_rng),
            ],
        });
        if k % every != 0 || cfg.outages.iter().any(|o| o.contains(t)) {
            continue;
        }
        let scale = cfg
            .sigma_inflation
            .iter()
            .find(|i| t >= i.start && t <= i.end)
            .map_or(1.0, |i| i.scale);
        let cov = base_cov * (scale * scale);
        let l = cov.cholesky().expect("GNSS covariance is positive definite").l();
        let noise = l * Vector2::new(gauss(&mut gnss_rng), gauss(&mut gnss_rng));
        let speed = (v + cfg.gnss_speed_sigma_mps * gauss(&mut gnss_rng)).max(0.0);
        gnss.push(GnssFix {
            t,
            position: frame.to_geo([pose.x + noise[0], pose.y + noise[1]]),
            speed,
            speed_sigma: cfg.gnss_speed_sigma_mps,
            cov: [[cov[(0, 0)], cov[(0, 1)]], [cov[(1, 0)], cov[(1, 1)]]],
            valid: true,
        });
    }
    Ok(SimulatedRun {
        frame_origin: map.origin,
        truth,
        gnss,
        imu,
    })
}
