//! Driving a filter over recorded GNSS and IMU streams.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use super::classify::{ClassifyConfig, EpochModes};
use super::ekf::{kf_step, ModelNoise, SensorModel};
use super::imm::{imm_step, ImmConfig, ImmState, ARC};
use super::log::EpochLog;
use super::{GnssMeasurement, ImuBatch, KinematicState, Mat5, StepFlags, Vec5, OMEGA, PSI, V, X, Y};
use crate::error::{Error, Result};
use crate::geom::{normalize_angle, Chain, LocalFrame};
use crate::mapfusion::{constrain_state, MapFusionConfig};
use crate::sim::{GnssFix, ImuSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gnss,
    Kf,
    Imm,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Gnss, Method::Kf, Method::Imm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gnss => "gnss",
            Method::Kf => "kf",
            Method::Imm => "imm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        match s.to_ascii_lowercase().as_str() {
            "gnss" => Ok(Method::Gnss),
            "kf" => Ok(Method::Kf),
            "imm" => Ok(Method::Imm),
            other => Err(Error::Config(format!("unknown method {other:?} (expected gnss, kf or imm)"))),
        }
    }
}

/// Start-up from a straight-line regression over the first GNSS fixes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    /// Seconds of fixes used for the regression.
    pub window_s: f64,
    /// Variance multiplier applied to the initial speed and heading.
    pub inflation: f64,
    /// rad/s
    pub yaw_rate_sigma: f64,
    /// Minimum regression speed for a usable heading, m/s.
    pub min_speed: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            window_s: 5.0,
            inflation: 4.0,
            yaw_rate_sigma: 0.02,
            min_speed: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Filter step, s. The IMU is averaged over each step.
    pub step_s: f64,
    /// Spacing of logged epochs, s.
    pub epoch_s: f64,
    pub kf: ModelNoise,
    pub imm: ImmConfig,
    pub sensors: SensorModel,
    pub classify: ClassifyConfig,
    pub init: InitConfig,
    pub map_fusion: MapFusionConfig,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let imm = ImmConfig::default();
        FilterConfig {
            step_s: 0.1,
            epoch_s: 1.0,
            kf: imm.unconstrained,
            imm,
            sensors: SensorModel::default(),
            classify: ClassifyConfig::default(),
            init: InitConfig::default(),
            map_fusion: MapFusionConfig::default(),
        }
    }
}

impl FilterConfig {
    pub fn from_toml(text: &str) -> Result<FilterConfig> {
        let cfg: FilterConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<FilterConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("filter configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_s > 0.0) || !(self.epoch_s >= self.step_s) {
            return Err(Error::Config("need 0 < step_s <= epoch_s".into()));
        }
        if !(self.init.window_s > 0.0) || !(self.init.inflation >= 1.0) {
            return Err(Error::Config("init window must be positive and inflation at least 1".into()));
        }
        self.imm.validate()
    }
}

/// Per-model result of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    pub method: Method,
    /// One row per epoch of the common grid.
    pub epochs: Vec<EpochLog>,
    /// Model probabilities at available epochs (IMM only).
    pub modes: Vec<EpochModes>,
    /// Filter state at available epochs.
    pub states: Vec<(f64, KinematicState)>,
    pub flags: StepFlags,
    /// Fixes that matched no filter step.
    pub unmatched_fixes: usize,
}

impl FilterRun {
    /// Rebuilds a run from its state log. States carry the logged variances
    /// and the x-y covariance; the other covariances are zero.
    pub fn from_log(method: Method, epochs: Vec<EpochLog>) -> FilterRun {
        let mut modes = Vec::new();
        let mut states = Vec::new();
        for e in epochs.iter().filter(|e| e.available) {
            let x = Vec5::from_column_slice(&[e.x, e.y, e.v, e.heading, e.yaw_rate]);
            let mut p = Mat5::from_diagonal(&Vec5::from_column_slice(&e.p_diag));
            p[(X, Y)] = e.p_xy;
            p[(Y, X)] = e.p_xy;
            states.push((e.t, KinematicState::new(x, p)));
            if e.mu.iter().all(|m| m.is_finite()) {
                modes.push(EpochModes {
                    t: e.t,
                    mu: e.mu,
                    speed: e.v,
                    arc_yaw_rate: e.arc_yaw_rate,
                    arc_yaw_rate_var: e.arc_yaw_rate_var,
                });
            }
        }
        FilterRun {
            method,
            epochs,
            modes,
            states,
            flags: StepFlags::default(),
            unmatched_fixes: 0,
        }
    }
}

struct Grid {
    per_step: usize,
    per_epoch: usize,
    imu_dt: f64,
}

fn grid(imu: &[ImuSample], cfg: &FilterConfig) -> Result<Grid> {
    if imu.len() < 2 {
        return Err(Error::domain("IMU stream needs at least two samples"));
    }
    if imu.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(Error::domain("IMU stream is not strictly time-ordered"));
    }
    let imu_dt = (imu[imu.len() - 1].t - imu[0].t) / (imu.len() - 1) as f64;
    let per_step = ((cfg.step_s / imu_dt).round() as usize).max(1);
    let per_epoch = ((cfg.epoch_s / imu_dt).round() as usize).max(1);
    if per_epoch % per_step != 0 {
        return Err(Error::Config(format!(
            "epoch spacing {} s is not a multiple of the filter step {} s at the IMU rate",
            cfg.epoch_s, cfg.step_s
        )));
    }
    Ok(Grid {
        per_step,
        per_epoch,
        imu_dt,
    })
}

/// Initial state at the first fix: position from that fix, speed from the
/// mean GNSS speed and heading from a straight-line fit over the window.
/// Returns the state and the index of the first fix not used.
fn initialize(fixes: &[(f64, GnssMeasurement)], imu: &[ImuSample], cfg: &InitConfig) -> Result<(f64, KinematicState, usize)> {
    let Some(&(t0, first)) = fixes.first() else {
        return Err(Error::domain("no GNSS fixes to initialize from"));
    };
    let used = fixes.iter().take_while(|(t, _)| *t <= t0 + cfg.window_s).count();
    if used < 3 {
        return Err(Error::domain(format!("initialization window holds {used} fixes, need 3")));
    }
    let win = &fixes[..used];
    let n = used as f64;
    let tm = win.iter().map(|(t, _)| t - t0).sum::<f64>() / n;
    let stt: f64 = win.iter().map(|(t, _)| (t - t0 - tm).powi(2)).sum();
    let mut slope = [0.0; 2];
    for (axis, s) in slope.iter_mut().enumerate() {
        let pm = win.iter().map(|(_, m)| m.position[axis]).sum::<f64>() / n;
        *s = win.iter().map(|(t, m)| (t - t0 - tm) * (m.position[axis] - pm)).sum::<f64>() / stt;
    }
    let cov = win.iter().map(|(_, m)| m.cov).sum::<Matrix2<f64>>() / n;
    let course = slope[0].hypot(slope[1]);
    if course < cfg.min_speed {
        return Err(Error::domain(format!("train moves at {course:.2} m/s during initialization, heading is unobservable")));
    }
    let t_last = win[used - 1].0;
    let (yaw_sum, yaw_n) = imu
        .iter()
        .filter(|s| s.t >= t0 && s.t <= t_last)
        .fold((0.0, 0usize), |(a, c), s| (a + s.gyro[2], c + 1));
    let yaw_rate = if yaw_n > 0 { yaw_sum / yaw_n as f64 } else { 0.0 };
    let heading = normalize_angle(slope[1].atan2(slope[0]) - yaw_rate * tm);
    let speed = win.iter().map(|(_, m)| m.speed).sum::<f64>() / n;
    let speed_var = win.iter().map(|(_, m)| m.speed_var).sum::<f64>() / (n * n);
    let x = Vec5::from_column_slice(&[first.position[0], first.position[1], speed, heading, yaw_rate]);
    let mut p = Mat5::zeros();
    p.fixed_view_mut::<2, 2>(0, 0).copy_from(&first.cov);
    p[(V, V)] = speed_var * cfg.inflation;
    p[(PSI, PSI)] = cov.trace() / 2.0 / stt / (course * course) * cfg.inflation;
    p[(OMEGA, OMEGA)] = cfg.yaw_rate_sigma.powi(2);
    Ok((t0, KinematicState::new(x, p), 1))
}

fn epoch_row(t: f64, state: &KinematicState) -> EpochLog {
    let (a, c) = state.sigma3_along_cross();
    let mut row = EpochLog::unavailable(t);
    row.available = true;
    row.x = state.x[X];
    row.y = state.x[Y];
    row.v = state.x[V];
    row.heading = state.x[PSI];
    row.yaw_rate = state.x[OMEGA];
    row.p_diag = [0, 1, 2, 3, 4].map(|i| state.p[(i, i)]);
    row.p_xy = state.p[(X, Y)];
    row.sigma3_along = a;
    row.sigma3_cross = c;
    row
}

/// Runs `method` over the streams. Positions are expressed in `frame`.
/// Epochs fall on every `epoch_s` of IMU time starting at the first IMU
/// sample; epochs before the filter is initialized are unavailable. When
/// `map` is given and closed-loop fusion is configured, the map constraint
/// is applied to the filter state at every epoch.
pub fn run_filter(
    gnss: &[GnssFix],
    imu: &[ImuSample],
    frame: &LocalFrame,
    method: Method,
    cfg: &FilterConfig,
    map: Option<(&Chain, f64)>,
) -> Result<FilterRun> {
    cfg.validate()?;
    let g = grid(imu, cfg)?;
    if gnss.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(Error::domain("GNSS stream is not time-ordered"));
    }
    let fixes: Vec<(f64, GnssMeasurement)> = gnss
        .iter()
        .filter(|f| f.valid)
        .map(|f| (f.t, GnssMeasurement::from_fix(f, frame)))
        .collect();
    let tol = 0.5 * g.imu_dt;
    let mut run = FilterRun {
        method,
        epochs: Vec::new(),
        modes: Vec::new(),
        states: Vec::new(),
        flags: StepFlags::default(),
        unmatched_fixes: 0,
    };

    if method == Method::Gnss {
        let mut next = 0;
        for k in (0..imu.len()).step_by(g.per_epoch) {
            let t = imu[k].t;
            while next < fixes.len() && fixes[next].0 < t - tol {
                next += 1;
                run.unmatched_fixes += 1;
            }
            match fixes.get(next) {
                Some((tf, m)) if (tf - t).abs() <= tol => {
                    let mut row = EpochLog::unavailable(t);
                    row.available = true;
                    row.x = m.position[0];
                    row.y = m.position[1];
                    row.v = m.speed;
                    row.p_diag = [m.cov[(0, 0)], m.cov[(1, 1)], m.speed_var, f64::NAN, f64::NAN];
                    row.p_xy = m.cov[(0, 1)];
                    run.epochs.push(row);
                    next += 1;
                }
                _ => run.epochs.push(EpochLog::unavailable(t)),
            }
        }
        run.unmatched_fixes += fixes.len() - next;
        return Ok(run);
    }

    let (t_init, init, used) = initialize(&fixes, imu, &cfg.init)?;
    // First step boundary at or after the initialization time.
    let first = imu.iter().position(|s| s.t >= t_init - tol).unwrap_or(imu.len());
    let k0 = first.div_ceil(g.per_step) * g.per_step;
    if k0 >= imu.len() {
        return Err(Error::domain("streams end before the filter is initialized"));
    }
    let mut kf_state = init;
    kf_state.x[X] += init.x[V] * init.x[PSI].cos() * (imu[k0].t - t_init);
    kf_state.x[Y] += init.x[V] * init.x[PSI].sin() * (imu[k0].t - t_init);
    let mut imm = ImmState::new(kf_state, [1.0 / 3.0; 3]);
    let mut next = used;

    for k in (0..k0).step_by(g.per_epoch) {
        run.epochs.push(EpochLog::unavailable(imu[k].t));
    }

    let mut k = k0;
    loop {
        if k % g.per_epoch == 0 {
            let t = imu[k].t;
            if let (Some((chain, sigma)), true) = (map, cfg.map_fusion.closed_loop) {
                match method {
                    Method::Kf => {
                        if let Some(s) = constrain_state(&kf_state, chain, sigma, &cfg.map_fusion)? {
                            kf_state = s;
                        }
                    }
                    _ => {
                        for m in imm.models.iter_mut() {
                            if let Some(s) = constrain_state(m, chain, sigma, &cfg.map_fusion)? {
                                *m = s;
                            }
                        }
                        imm.fused = super::imm::moment_match(&imm.models, &imm.mu);
                    }
                }
            }
            let state = if method == Method::Kf { kf_state } else { imm.fused };
            let mut row = epoch_row(t, &state);
            if method == Method::Imm {
                row.mu = imm.mu;
                let arc = &imm.models[ARC];
                row.arc_yaw_rate = arc.x[OMEGA];
                row.arc_yaw_rate_var = arc.p[(OMEGA, OMEGA)];
                run.modes.push(EpochModes {
                    t,
                    mu: imm.mu,
                    speed: state.x[V],
                    arc_yaw_rate: row.arc_yaw_rate,
                    arc_yaw_rate_var: row.arc_yaw_rate_var,
                });
            }
            run.epochs.push(row);
            run.states.push((t, state));
        }
        let end = k + g.per_step;
        if end >= imu.len() {
            break;
        }
        let batch = ImuBatch::mean(&imu[k..end]).expect("non-empty batch");
        let t_end = imu[end].t;
        let dt = t_end - imu[k].t;
        while next < fixes.len() && fixes[next].0 < t_end - tol {
            next += 1;
            run.unmatched_fixes += 1;
        }
        let fix = match fixes.get(next) {
            Some((tf, m)) if (tf - t_end).abs() <= tol => {
                next += 1;
                Some(m)
            }
            _ => None,
        };
        match method {
            Method::Kf => {
                let out = kf_step(&kf_state, &batch, fix, dt, &cfg.kf, &cfg.sensors);
                run.flags.merge(out.flags);
                kf_state = out.state;
            }
            _ => {
                let out = imm_step(&imm, &batch, fix, dt, &cfg.imm, &cfg.sensors);
                run.flags.merge(out.flags);
                imm = out.state;
            }
        }
        k = end;
    }
    Ok(run)
}
