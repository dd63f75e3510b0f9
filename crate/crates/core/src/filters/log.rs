//! Per-epoch state log CSV. The first line is `# manifest: {json}`, the
//! second the column header. Missing quantities are written as `NaN`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix2;
use serde_json::Value;

use crate::error::{Error, Result};

const BASE_COLUMNS: [&str; 20] = [
    "t",
    "available",
    "x",
    "y",
    "v",
    "psi",
    "omega",
    "mu_straight",
    "mu_arc",
    "mu_unconstrained",
    "p_xx",
    "p_yy",
    "p_vv",
    "p_psipsi",
    "p_omegaomega",
    "p_xy",
    "sigma3_along",
    "sigma3_cross",
    "arc_omega",
    "arc_p_omegaomega",
];

const FUSED_COLUMNS: [&str; 7] = [
    "fused_x",
    "fused_y",
    "fused_p_xx",
    "fused_p_xy",
    "fused_p_yy",
    "fused_station",
    "map_constrained",
];

/// Map-constrained position appended to an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedColumns {
    pub x: f64,
    pub y: f64,
    pub p_xx: f64,
    pub p_xy: f64,
    pub p_yy: f64,
    /// Arclength along the map.
    pub station: f64,
    pub map_constrained: bool,
}

impl FusedColumns {
    pub fn covariance(&self) -> Matrix2<f64> {
        Matrix2::new(self.p_xx, self.p_xy, self.p_xy, self.p_yy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub t: f64,
    pub available: bool,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub heading: f64,
    pub yaw_rate: f64,
    /// Straight, arc, unconstrained; NaN for single-model methods.
    pub mu: [f64; 3],
    /// Diagonal of the state covariance in `[x, y, v, psi, omega]` order.
    pub p_diag: [f64; 5],
    pub p_xy: f64,
    pub sigma3_along: f64,
    pub sigma3_cross: f64,
    pub arc_yaw_rate: f64,
    pub arc_yaw_rate_var: f64,
    pub fused: Option<FusedColumns>,
}

impl EpochLog {
    pub fn unavailable(t: f64) -> EpochLog {
        EpochLog {
            t,
            available: false,
            x: f64::NAN,
            y: f64::NAN,
            v: f64::NAN,
            heading: f64::NAN,
            yaw_rate: f64::NAN,
            mu: [f64::NAN; 3],
            p_diag: [f64::NAN; 5],
            p_xy: f64::NAN,
            sigma3_along: f64::NAN,
            sigma3_cross: f64::NAN,
            arc_yaw_rate: f64::NAN,
            arc_yaw_rate_var: f64::NAN,
            fused: None,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn position_covariance(&self) -> Matrix2<f64> {
        Matrix2::new(self.p_diag[0], self.p_xy, self.p_xy, self.p_diag[1])
    }

    /// The map-fused position when present, the filter position otherwise.
    pub fn best_position(&self) -> ([f64; 2], Matrix2<f64>) {
        match &self.fused {
            Some(f) => ([f.x, f.y], f.covariance()),
            None => (self.position(), self.position_covariance()),
        }
    }

    fn values(&self) -> Vec<f64> {
        let mut v = vec![self.t, if self.available { 1.0 } else { 0.0 }, self.x, self.y, self.v, self.heading, self.yaw_rate];
        v.extend(self.mu);
        v.extend(self.p_diag);
        v.extend([self.p_xy, self.sigma3_along, self.sigma3_cross, self.arc_yaw_rate, self.arc_yaw_rate_var]);
        v
    }
}

/// Renders a log; the fused columns are written when any epoch has them.
pub fn state_log_to_string(manifest: &Value, rows: &[EpochLog]) -> String {
    let fused = rows.iter().any(|r| r.fused.is_some());
    let mut out = format!("# manifest: {manifest}\n");
    let mut header: Vec<&str> = BASE_COLUMNS.to_vec();
    if fused {
        header.extend(FUSED_COLUMNS);
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for r in rows {
        let mut cells: Vec<String> = r.values().iter().map(|v| v.to_string()).collect();
        if fused {
            match &r.fused {
                Some(f) => {
                    cells.extend([f.x, f.y, f.p_xx, f.p_xy, f.p_yy, f.station].iter().map(|v| v.to_string()));
                    cells.push(if f.map_constrained { "1" } else { "0" }.into());
                }
                None => cells.extend(std::iter::repeat_n("NaN".to_string(), FUSED_COLUMNS.len())),
            }
        }
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

pub fn write_state_log(path: &Path, manifest: &Value, rows: &[EpochLog]) -> Result<()> {
    std::fs::write(path, state_log_to_string(manifest, rows)).map_err(|e| Error::io(path, e))
}

pub fn parse_state_log(text: &str) -> Result<(Option<Value>, Vec<EpochLog>)> {
    let mut manifest = None;
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        if let Some(rest) = line.strip_prefix("# manifest:") {
            let v = serde_json::from_str(rest.trim()).map_err(|e| Error::parse(lineno, e.to_string()))?;
            manifest = Some(v);
            continue;
        }
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some(cols) = &header else {
            let cols: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
            if cols.len() < BASE_COLUMNS.len() || cols[..BASE_COLUMNS.len()] != BASE_COLUMNS {
                return Err(Error::parse(lineno, "unexpected state log header"));
            }
            if cols.len() != BASE_COLUMNS.len() && cols[BASE_COLUMNS.len()..] != FUSED_COLUMNS {
                return Err(Error::parse(lineno, "unexpected fused columns"));
            }
            header = Some(cols);
            continue;
        };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols.len() {
            return Err(Error::parse(lineno, format!("expected {} fields, found {}", cols.len(), cells.len())));
        }
        let vals = cells
            .iter()
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(lineno, e.to_string()))?;
        let flag = |v: f64| match v {
            0.0 => Ok(false),
            1.0 => Ok(true),
            _ => Err(Error::parse(lineno, format!("flag must be 0 or 1, got {v}"))),
        };
        let fused = if vals.len() > BASE_COLUMNS.len() && !vals[BASE_COLUMNS.len()].is_nan() {
            let f = &vals[BASE_COLUMNS.len()..];
            Some(FusedColumns {
                x: f[0],
                y: f[1],
                p_xx: f[2],
                p_xy: f[3],
                p_yy: f[4],
                station: f[5],
                map_constrained: flag(f[6])?,
            })
        } else {
            None
        };
        rows.push(EpochLog {
            t: vals[0],
            available: flag(vals[1])?,
            x: vals[2],
            y: vals[3],
            v: vals[4],
            heading: vals[5],
            yaw_rate: vals[6],
            mu: [vals[7], vals[8], vals[9]],
            p_diag: [vals[10], vals[11], vals[12], vals[13], vals[14]],
            p_xy: vals[15],
            sigma3_along: vals[16],
            sigma3_cross: vals[17],
            arc_yaw_rate: vals[18],
            arc_yaw_rate_var: vals[19],
            fused,
        });
    }
    if header.is_none() {
        return Err(Error::parse(1, "state log has no header"));
    }
    Ok((manifest, rows))
}

pub fn read_state_log(path: &Path) -> Result<(Option<Value>, Vec<EpochLog>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_state_log(&text)
}
