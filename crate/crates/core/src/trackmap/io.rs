//! Compact map CSV.
//!
//! ```text
//! p0_lat_deg,50.54800000
//! p0_lon_deg,12.91300000
//! psi0_deg,231.2000
//! index,shape,length_m,radius_m
//! 1,st,218.000,inf
//! 2,ta,76.000,376.000
//! 3,ca,136.000,376.000
//! ```
//!
//! Radii are signed (negative for right turns). A transitional arc takes its
//! curvatures from its neighbours; its radius column repeats the curved end
//! (the following element if curved, else the preceding one) and only
//! supplies a curvature when the arc is the first or last element. Lines
//! starting with `#` are comments.

use std::path::Path;

use super::TrackMap;
use crate::error::{Error, Result};
use crate::geom::{GeoPoint, Shape, TrackElement};

const HEADER: &str = "index,shape,length_m,radius_m";

fn radius_token(curvature: f64) -> String {
    if curvature == 0.0 {
        "inf".to_string()
    } else {
        format!("{:.3}", 1.0 / curvature)
    }
}

fn heading_token(deg: f64) -> String {
    let s = format!("{:.4}", deg.rem_euclid(360.0));
    if s == "360.0000" {
        "0.0000".to_string()
    } else {
        s
    }
}

/// Curvature written in the radius column of a transitional arc.
fn ta_column(e: &TrackElement, has_prev: bool, has_next: bool) -> f64 {
    if !has_prev && has_next {
        e.start_curvature
    } else if !has_next || e.end_curvature != 0.0 {
        e.end_curvature
    } else {
        e.start_curvature
    }
}

fn column_curvature(elements: &[TrackElement], i: usize) -> f64 {
    let e = &elements[i];
    match e.shape {
        Shape::Straight => 0.0,
        Shape::CircularArc => e.start_curvature,
        Shape::TransitionalArc => ta_column(e, i > 0, i + 1 < elements.len()),
    }
}

pub fn map_to_string(map: &TrackMap) -> String {
    let mut out = String::new();
    out.push_str(&format!("p0_lat_deg,{:.8}\n", map.origin.lat));
    out.push_str(&format!("p0_lon_deg,{:.8}\n", map.origin.lon));
    out.push_str(&format!("psi0_deg,{}\n", heading_token(map.start_heading_deg)));
    out.push_str(HEADER);
    out.push('\n');
    for (i, e) in map.elements.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{:.3},{}\n",
            i + 1,
            e.shape,
            e.length,
            radius_token(column_curvature(&map.elements, i))
        ));
    }
    out
}

pub fn map_save(map: &TrackMap, path: &Path) -> Result<()> {
    map.validate()?;
    std::fs::write(path, map_to_string(map)).map_err(|e| Error::io(path, e))
}

pub fn map_load(path: &Path) -> Result<TrackMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    map_from_str(&text)
}

fn parse_number(line: usize, token: &str, what: &str) -> Result<f64> {
    token
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(line, format!("invalid {what} `{}`", token.trim())))
}

fn parse_radius(line: usize, token: &str) -> Result<f64> {
    let t = token.trim();
    if t == "inf" || t == "-inf" {
        return Ok(0.0);
    }
    let r = parse_number(line, t, "radius")?;
    if r == 0.0 || !r.is_finite() {
        return Err(Error::parse(line, format!("invalid radius `{t}`")));
    }
    Ok(1.0 / r)
}

struct Row {
    line: usize,
    shape: Shape,
    length: f64,
    curvature: f64,
}

pub fn map_from_str(text: &str) -> Result<TrackMap> {
    let mut lat = None;
    let mut lon = None;
    let mut psi = None;
    let mut header_seen = false;
    let mut rows: Vec<Row> = Vec::new();

    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = l.split(',').map(str::trim).collect();
        if !header_seen {
            match cols.as_slice() {
                ["p0_lat_deg", v] => lat = Some(parse_number(line, v, "latitude")?),
                ["p0_lon_deg", v] => lon = Some(parse_number(line, v, "longitude")?),
                ["psi0_deg", v] => psi = Some(parse_number(line, v, "heading")?),
                ["index", "shape", "length_m", "radius_m"] => header_seen = true,
                _ => return Err(Error::parse(line, format!("unexpected header row `{l}`"))),
            }
            continue;
        }
        let [index, shape, length, radius] = cols.as_slice() else {
            return Err(Error::parse(line, format!("expected 4 columns, found {}", cols.len())));
        };
        let index: usize = index
            .parse()
            .map_err(|_| Error::parse(line, format!("invalid index `{index}`")))?;
        if index != rows.len() + 1 {
            return Err(Error::parse(
                line,
                format!("index {index} out of sequence, expected {}", rows.len() + 1),
            ));
        }
        let shape = Shape::from_token(shape).ok_or_else(|| Error::parse(line, format!("unknown shape `{shape}`")))?;
        let length = parse_number(line, length, "length")?;
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::parse(line, format!("length must be positive, got {length}")));
        }
        let curvature = parse_radius(line, radius)?;
        match shape {
            Shape::Straight if curvature != 0.0 => {
                return Err(Error::parse(line, "straight must have radius inf"));
            }
            Shape::CircularArc if curvature == 0.0 => {
                return Err(Error::parse(line, "circular arc needs a finite radius"));
            }
            _ => {}
        }
        rows.push(Row {
            line,
            shape,
            length,
            curvature,
        });
    }

    let missing = |what: &str| Error::parse(text.lines().count().max(1), format!("missing {what} row"));
    let origin = GeoPoint::new(lat.ok_or_else(|| missing("p0_lat_deg"))?, lon.ok_or_else(|| missing("p0_lon_deg"))?)
        .map_err(|e| Error::parse(1, e.to_string()))?;
    let psi = psi.ok_or_else(|| missing("psi0_deg"))?;
    if !header_seen {
        return Err(missing("element header"));
    }

    let n = rows.len();
    let mut elements = Vec::with_capacity(n);
    for (i, r) in rows.iter().enumerate() {
        let e = match r.shape {
            Shape::Straight => TrackElement::straight(r.length),
            Shape::CircularArc => TrackElement::circular_arc(r.length, r.curvature),
            Shape::TransitionalArc => {
                let neighbour = |j: usize| -> Result<f64> {
                    if rows[j].shape == Shape::TransitionalArc {
                        Err(Error::parse(r.line, "adjacent transitional arcs"))
                    } else {
                        Ok(rows[j].curvature)
                    }
                };
                let k0 = if i > 0 { neighbour(i - 1)? } else if n > 1 { r.curvature } else { 0.0 };
                let k1 = if i + 1 < n { neighbour(i + 1)? } else { r.curvature };
                let ta = TrackElement::transitional_arc(r.length, k0, k1);
                let expected = ta_column(&ta, i > 0, i + 1 < n);
                if !same_radius(expected, r.curvature) {
                    return Err(Error::parse(
                        r.line,
                        format!("transitional arc radius does not match its neighbours ({})", radius_token(expected)),
                    ));
                }
                ta
            }
        };
        elements.push(e);
    }
    TrackMap::new(origin, psi, elements).map_err(|e| Error::parse(rows.last().map_or(1, |r| r.line), e.to_string()))
}

fn same_radius(a: f64, b: f64) -> bool {
    if a == 0.0 || b == 0.0 {
        return a == b;
    }
    let (ra, rb) = (1.0 / a, 1.0 / b);
    (ra - rb).abs() <= 1e-6 * ra.abs().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE: &str = "\
# excerpt
p0_lat_deg,50.54800000
p0_lon_deg,12.91300000
psi0_deg,231.2000
index,shape,length_m,radius_m
1,st,10.000,inf
2,ta,11.000,213.000
3,ca,27.000,213.000
4,ta,25.000,213.000
5,st,218.000,inf
6,ta,76.000,376.000
7,ca,136.000,376.000
8,ta,37.000,197.000
9,ca,87.000,197.000
";

    #[test]
    fn parses_table_layout() {
        let m = map_from_str(TABLE).unwrap();
        assert_eq!(m.elements.len(), 9);
        let ta = m.elements[1];
        assert_eq!(ta.shape, Shape::TransitionalArc);
        assert_eq!(ta.length, 11.0);
        assert_eq!(ta.start_curvature, 0.0);
        assert_eq!(ta.end_curvature, 1.0 / 213.0);
        let back = m.elements[3];
        assert_eq!((back.start_curvature, back.end_curvature), (1.0 / 213.0, 0.0));
        let arcs = m.elements[7];
        assert_eq!((arcs.start_curvature, arcs.end_curvature), (1.0 / 376.0, 1.0 / 197.0));
        assert_eq!(m.start_heading_deg, 231.2);
    }

    #[test]
    fn save_load_save_identical() {
        let m = map_from_str(TABLE).unwrap();
        let s1 = map_to_string(&m);
        let s2 = map_to_string(&map_from_str(&s1).unwrap());
        assert_eq!(s1, s2);
        assert!(s1.contains("1,st,10.000,inf\n"));
    }

    #[test]
    fn right_turns_keep_sign() {
        let text = "p0_lat_deg,50\np0_lon_deg,12\npsi0_deg,0\nindex,shape,length_m,radius_m\n1,st,5,inf\n2,ta,5,-300\n3,ca,10,-300\n4,ta,6,-300\n";
        let m = map_from_str(text).unwrap();
        assert_eq!(m.elements[2].start_curvature, -1.0 / 300.0);
        assert_eq!(m.elements[3].end_curvature, -1.0 / 300.0);
        assert_eq!(map_to_string(&map_from_str(&map_to_string(&m)).unwrap()), map_to_string(&m));
    }

    fn row_error(body: &str) -> usize {
        let text = format!("p0_lat_deg,50\np0_lon_deg,12\npsi0_deg,0\nindex,shape,length_m,radius_m\n{body}");
        match map_from_str(&text) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_rows_report_line() {
        assert_eq!(row_error("1,st,5,inf\n2,xx,5,inf\n"), 6);
        assert_eq!(row_error("1,st,5,inf\n3,st,5,inf\n"), 6);
        assert_eq!(row_error("1,st,-5,inf\n"), 5);
        assert_eq!(row_error("1,st,0,inf\n"), 5);
        assert_eq!(row_error("1,ca,5,inf\n"), 5);
        assert_eq!(row_error("1,st,5,inf\n2,ta,5,100\n3,ca,5,200\n"), 6);
    }
}
