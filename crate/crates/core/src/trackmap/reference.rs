//! Reference polylines from GeoJSON LineStrings or `lat,lon` CSV.

use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::geom::GeoPoint;

pub fn load_reference(path: &Path) -> Result<Vec<GeoPoint>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if ext == "geojson" || ext == "json" || text.trim_start().starts_with('{') {
        parse_reference_geojson(&text)
    } else {
        parse_reference_csv(&text)
    }
}

/// Two columns, latitude then longitude in degrees. A non-numeric first row
/// is taken as a header; `#` lines are comments.
pub fn parse_reference_csv(text: &str) -> Result<Vec<GeoPoint>> {
    let mut out = Vec::new();
    let mut first = true;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = l.split(',').map(str::trim).collect();
        if cols.len() != 2 {
            return Err(Error::parse(line, format!("expected 2 columns, found {}", cols.len())));
        }
        let parsed = (cols[0].parse::<f64>(), cols[1].parse::<f64>());
        let was_first = std::mem::replace(&mut first, false);
        match parsed {
            (Ok(lat), Ok(lon)) => out.push(GeoPoint::new(lat, lon).map_err(|e| Error::parse(line, e.to_string()))?),
            _ if was_first => continue,
            _ => return Err(Error::parse(line, format!("invalid coordinates `{l}`"))),
        }
    }
    if out.len() < 2 {
        return Err(Error::domain("reference polyline needs at least 2 points"));
    }
    Ok(out)
}

/// Accepts a bare LineString geometry, a Feature carrying one, or a
/// FeatureCollection whose first LineString feature is used.
pub fn parse_reference_geojson(text: &str) -> Result<Vec<GeoPoint>> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e.to_string()))?;
    let line = find_linestring(&v).ok_or_else(|| Error::parse(1, "no LineString geometry found"))?;
    let coords = line
        .get("coordinates")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse(1, "LineString without coordinates"))?;
    let mut out = Vec::with_capacity(coords.len());
    for (i, c) in coords.iter().enumerate() {
        let pair = c.as_array().filter(|a| a.len() >= 2);
        let (lon, lat) = match pair.map(|a| (a[0].as_f64(), a[1].as_f64())) {
            Some((Some(lon), Some(lat))) => (lon, lat),
            _ => return Err(Error::parse(1, format!("coordinate {i} is not a [lon, lat] pair"))),
        };
        out.push(GeoPoint::new(lat, lon)?);
    }
    if out.len() < 2 {
        return Err(Error::domain("reference polyline needs at least 2 points"));
    }
    Ok(out)
}

fn find_linestring(v: &Value) -> Option<&Value> {
    match v.get("type")?.as_str()? {
        "LineString" => Some(v),
        "Feature" => find_linestring(v.get("geometry")?),
        "FeatureCollection" => v.get("features")?.as_array()?.iter().find_map(find_linestring),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_with_header() {
        let pts = parse_reference_csv("lat,lon\n50.5,12.9\n# note\n50.6,12.95\n").unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1].lon, 12.95);
        assert!(matches!(parse_reference_csv("50.5,12.9\nx,1\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn geojson_feature_collection() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","geometry":{"type":"Point","coordinates":[1,2]}},
            {"type":"Feature","properties":{},"geometry":{"type":"LineString","coordinates":[[12.9,50.5],[12.95,50.6]]}}]}"#;
        let pts = parse_reference_geojson(text).unwrap();
        assert_eq!((pts[0].lat, pts[0].lon), (50.5, 12.9));
        assert!(parse_reference_geojson(r#"{"type":"Point","coordinates":[1,2]}"#).is_err());
    }
}
