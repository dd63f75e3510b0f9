use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{GeoPoint, Shape, TrackElement};
use crate::trackmap::TrackMap;

/// Speed held over an arclength interval of the track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedSegment {
    pub from_m: f64,
    pub to_m: f64,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }
}

/// GNSS covariance scaled by `scale` (a standard-deviation factor) inside
/// the interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inflation {
    pub start: f64,
    pub end: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuNoise {
    /// rad/s/sqrt(Hz)
    pub gyro_noise_density: f64,
    /// rad/s, constant per run
    pub gyro_bias: f64,
    /// m/s^2/sqrt(Hz)
    pub accel_noise_density: f64,
    /// m/s^2, forward axis, constant per run
    pub accel_bias: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        ImuNoise {
            gyro_noise_density: 5e-5,
            gyro_bias: 1e-4,
            accel_noise_density: 0.01,
            accel_bias: 0.02,
        }
    }
}

fn default_gnss_rate() -> f64 {
    1.0
}
fn default_imu_rate() -> f64 {
    500.0
}
fn default_sigma() -> f64 {
    5.0
}
fn default_speed_sigma() -> f64 {
    0.1
}
fn default_axis_ratio() -> f64 {
    1.0
}
fn default_max_accel() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_gnss_rate")]
    pub gnss_rate_hz: f64,
    #[serde(default = "default_imu_rate")]
    pub imu_rate_hz: f64,
    /// Per-axis GNSS position sigma (minor axis when elongated), meters.
    #[serde(default = "default_sigma")]
    pub gnss_sigma_m: f64,
    #[serde(default = "default_speed_sigma")]
    pub gnss_speed_sigma_mps: f64,
    /// Major/minor sigma ratio of the GNSS error ellipse; 1 is isotropic.
    #[serde(default = "default_axis_ratio")]
    pub gnss_axis_ratio: f64,
    /// Major axis direction, degrees counter-clockwise from east.
    #[serde(default)]
    pub gnss_axis_orientation_deg: f64,
    /// Limit on speed changes between profile segments, m/s^2.
    #[serde(default = "default_max_accel")]
    pub max_accel_mps2: f64,
    #[serde(default)]
    pub start_time: f64,
    pub speed_profile: Vec<SpeedSegment>,
    #[serde(default)]
    pub sigma_inflation: Vec<Inflation>,
    #[serde(default)]
    pub outages: Vec<Interval>,
    #[serde(default)]
    pub imu: ImuNoise,
}

fn check_disjoint(name: &str, mut spans: Vec<(f64, f64)>) -> Result<()> {
    for &(a, b) in &spans {
        if !(a.is_finite() && b.is_finite()) || b < a {
            return Err(Error::Config(format!("{name}: invalid interval [{a}, {b}]")));
        }
    }
    spans.sort_by(|x, y| x.0.total_cmp(&y.0));
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::Config(format!(
                "{name}: intervals [{}, {}] and [{}, {}] overlap",
                w[0].0, w[0].1, w[1].0, w[1].1
            )));
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Number of IMU samples per GNSS epoch.
    pub fn imu_per_gnss(&self) -> usize {
        (self.imu_rate_hz / self.gnss_rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gnss_rate_hz", self.gnss_rate_hz),
            ("imu_rate_hz", self.imu_rate_hz),
            ("gnss_sigma_m", self.gnss_sigma_m),
            ("gnss_speed_sigma_mps", self.gnss_speed_sigma_mps),
            ("max_accel_mps2", self.max_accel_mps2),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("imu.gyro_noise_density", self.imu.gyro_noise_density),
            ("imu.accel_noise_density", self.imu.accel_noise_density),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.gnss_axis_ratio >= 1.0 && self.gnss_axis_ratio.is_finite()) {
            return Err(Error::Config("gnss_axis_ratio must be >= 1".into()));
        }
        let ratio = self.imu_rate_hz / self.gnss_rate_hz;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(Error::Config(format!(
                "imu_rate_hz / gnss_rate_hz must be a positive integer, got {ratio}"
            )));
        }
        if !(self.imu.gyro_bias.is_finite() && self.imu.accel_bias.is_finite() && self.start_time.is_finite()) {
            return Err(Error::Config("non-finite bias or start time".into()));
        }
        check_disjoint("outages", self.outages.iter().map(|o| (o.start, o.end)).collect())?;
        check_disjoint(
            "sigma_inflation",
            self.sigma_inflation.iter().map(|o| (o.start, o.end)).collect(),
        )?;
        if let Some(bad) = self.sigma_inflation.iter().find(|i| !(i.scale > 0.0 && i.scale.is_finite())) {
            return Err(Error::Config(format!("inflation scale must be positive, got {}", bad.scale)));
        }
        if self.speed_profile.is_empty() {
            return Err(Error::Config("speed_profile is empty".into()));
        }
        let mut expected = 0.0;
        for seg in &self.speed_profile {
            if (seg.from_m - expected).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "speed_profile must be contiguous from 0: segment starts at {} instead of {expected}",
                    seg.from_m
                )));
            }
            if !(seg.to_m > seg.from_m) || !(seg.speed_mps > 0.0 && seg.speed_mps.is_finite()) {
                return Err(Error::Config(format!(
                    "invalid speed segment [{}, {}] at {} m/s",
                    seg.from_m, seg.to_m, seg.speed_mps
                )));
            }
            expected = seg.to_m;
        }
        Ok(())
    }
}

/// One element of a track specification. Radii are signed (negative turns
/// right) and may be `inf`. Transitional arcs take their end curvatures
/// from the neighbours unless `from_radius`/`to_radius` are given, in which
/// case they must agree with them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementSpec {
    pub shape: Shape,
    pub length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_radius: Option<f64>,
}

impl ElementSpec {
    pub fn straight(length: f64) -> Self {
        ElementSpec {
            shape: Shape::Straight,
            length,
            radius: None,
            from_radius: None,
            to_radius: None,
        }
    }

    pub fn arc(length: f64, radius: f64) -> Self {
        ElementSpec {
            shape: Shape::CircularArc,
            radius: Some(radius),
            ..ElementSpec::straight(length)
        }
    }

    pub fn transition(length: f64) -> Self {
        ElementSpec {
            shape: Shape::TransitionalArc,
            ..ElementSpec::straight(length)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSpec {
    pub origin: GeoPoint,
    pub heading_deg: f64,
    pub elements: Vec<ElementSpec>,
}

impl TrackSpec {
    pub fn from_toml(text: &str) -> Result<TrackSpec> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<TrackSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrackSpec::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("track spec serializes")
    }
}

fn curvature_of(radius: f64) -> f64 {
    if radius.is_infinite() {
        0.0
    } else {
        1.0 / radius
    }
}

/// Builds a continuous map from a track specification.
pub fn build_track(spec: &TrackSpec) -> Result<TrackMap> {
    let n = spec.elements.len();
    if n == 0 {
        return Err(Error::domain("track spec has no elements"));
    }
    let fixed = |e: &ElementSpec| -> Result<Option<f64>> {
        match e.shape {
            Shape::Straight => Ok(Some(0.0)),
            Shape::CircularArc => {
                let r = e.radius.ok_or_else(|| Error::domain("circular arc without radius"))?;
                if r == 0.0 || !r.is_finite() {
                    return Err(Error::domain(format!("circular arc radius must be finite and nonzero, got {r}")));
                }
                Ok(Some(1.0 / r))
            }
            Shape::TransitionalArc => Ok(None),
        }
    };
    let mut elements = Vec::with_capacity(n);
    for (i, e) in spec.elements.iter().enumerate() {
        let el = match e.shape {
            Shape::Straight => TrackElement::straight(e.length),
            Shape::CircularArc => TrackElement::circular_arc(e.length, fixed(e)?.unwrap()),
            Shape::TransitionalArc => {
                let prev = if i > 0 { fixed(&spec.elements[i - 1])? } else { Some(0.0) };
                let next = if i + 1 < n { fixed(&spec.elements[i + 1])? } else { Some(0.0) };
                let k0 = match (e.from_radius.map(curvature_of), prev) {
                    (Some(k), _) | (None, Some(k)) => k,
                    (None, None) => return Err(Error::domain(format!("element {}: start curvature undetermined", i + 1))),
                };
                let k1 = match (e.to_radius.map(curvature_of), next) {
                    (Some(k), _) | (None, Some(k)) => k,
                    (None, None) => return Err(Error::domain(format!("element {}: end curvature undetermined", i + 1))),
                };
                TrackElement::transitional_arc(e.length, k0, k1)
            }
        };
        el.validate()
            .map_err(|err| Error::domain(format!("element {}: {err}", i + 1)))?;
        elements.push(el);
    }
    TrackMap::new(spec.origin, spec.heading_deg, elements)
}
