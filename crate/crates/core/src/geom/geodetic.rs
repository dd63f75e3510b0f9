//! WGS84 geodetic coordinates and the east-north tangent plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WGS84_A: f64 = 6_378_137.0;
const WGS84_F: f64 = 1.0 / 298.257_223_563;
const WGS84_B: f64 = WGS84_A * (1.0 - WGS84_F);
const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

/// Latitude/longitude in degrees on the WGS84 ellipsoid (height zero).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<GeoPoint> {
        let p = GeoPoint { lat, lon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lat.is_finite() && self.lon.is_finite()) || self.lat.abs() > 90.0 || self.lon.abs() > 180.0 {
            return Err(Error::domain(format!("invalid WGS84 point ({}, {})", self.lat, self.lon)));
        }
        Ok(())
    }

    fn to_ecef(self) -> [f64; 3] {
        let (sl, cl) = self.lat.to_radians().sin_cos();
        let (so, co) = self.lon.to_radians().sin_cos();
        let n = WGS84_A / (1.0 - WGS84_E2 * sl * sl).sqrt();
        [n * cl * co, n * cl * so, n * (1.0 - WGS84_E2) * sl]
    }
}

/// East-north tangent plane anchored at a geodetic origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    origin: GeoPoint,
    origin_ecef: [f64; 3],
    east: [f64; 3],
    north: [f64; 3],
    up: [f64; 3],
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl LocalFrame {
    pub fn new(origin: GeoPoint) -> Result<LocalFrame> {
        origin.validate()?;
        let (sl, cl) = origin.lat.to_radians().sin_cos();
        let (so, co) = origin.lon.to_radians().sin_cos();
        Ok(LocalFrame {
            origin,
            origin_ecef: origin.to_ecef(),
            east: [-so, co, 0.0],
            north: [-sl * co, -sl * so, cl],
            up: [cl * co, cl * so, sl],
        })
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    /// East/north coordinates of `p` in meters.
    pub fn to_local(&self, p: GeoPoint) -> [f64; 2] {
        let e = p.to_ecef();
        let d = [
            e[0] - self.origin_ecef[0],
            e[1] - self.origin_ecef[1],
            e[2] - self.origin_ecef[2],
        ];
        [dot(self.east, d), dot(self.north, d)]
    }

    /// Inverse of [`LocalFrame::to_local`]: the ellipsoid point whose
    /// orthogonal projection onto the tangent plane is `(east, north)`.
    pub fn to_geo(&self, en: [f64; 2]) -> GeoPoint {
        let base = [
            self.origin_ecef[0] + en[0] * self.east[0] + en[1] * self.north[0],
            self.origin_ecef[1] + en[0] * self.east[1] + en[1] * self.north[1],
            self.origin_ecef[2] + en[0] * self.east[2] + en[1] * self.north[2],
        ];
        // Solve |base + u*up| on the ellipsoid for the root closest to zero.
        let (a2, b2) = (WGS84_A * WGS84_A, WGS84_B * WGS84_B);
        let qa = (self.up[0] * self.up[0] + self.up[1] * self.up[1]) / a2 + self.up[2] * self.up[2] / b2;
        let qb = 2.0 * ((base[0] * self.up[0] + base[1] * self.up[1]) / a2 + base[2] * self.up[2] / b2);
        let qc = (base[0] * base[0] + base[1] * base[1]) / a2 + base[2] * base[2] / b2 - 1.0;
        let disc = (qb * qb - 4.0 * qa * qc).max(0.0);
        // Numerically stable small root.
        let u = -2.0 * qc / (qb + qb.signum() * disc.sqrt());
        let x = base[0] + u * self.up[0];
        let y = base[1] + u * self.up[1];
        let z = base[2] + u * self.up[2];
        let p = x.hypot(y);
        let lat = z.atan2((1.0 - WGS84_E2) * p).to_degrees();
        let lon = y.atan2(x).to_degrees();
        GeoPoint { lat, lon }
    }
}

pub fn geo_to_local(p: GeoPoint, origin: GeoPoint) -> Result<[f64; 2]> {
    p.validate()?;
    Ok(LocalFrame::new(origin)?.to_local(p))
}

pub fn local_to_geo(en: [f64; 2], origin: GeoPoint) -> Result<GeoPoint> {
    if !(en[0].is_finite() && en[1].is_finite()) {
        return Err(Error::domain("non-finite local coordinates"));
    }
    Ok(LocalFrame::new(origin)?.to_geo(en))
}
