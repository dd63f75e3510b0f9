//! JSONL streams. The first line of every file is `{"manifest": {...}}`;
//! each following line is one record.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// File names of a simulated run inside an output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStreams {
    pub truth: PathBuf,
    pub gnss: PathBuf,
    pub imu: PathBuf,
}

impl RunStreams {
    pub fn in_dir(dir: &Path) -> RunStreams {
        RunStreams {
            truth: dir.join("truth.jsonl"),
            gnss: dir.join("gnss.jsonl"),
            imu: dir.join("imu.jsonl"),
        }
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, manifest: &Value, records: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = serde_json::json!({ "manifest": manifest });
    let io = |e| Error::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads records, returning the manifest if the file has one. Blank lines
/// are skipped; a malformed line is a parse error carrying its number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(Option<Value>, Vec<T>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut manifest = None;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if n == 0 && line.starts_with("{\"manifest\"") {
            let v: Value = serde_json::from_str(&line).map_err(|e| Error::parse(1, e.to_string()))?;
            manifest = v.get("manifest").cloned();
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::parse(n + 1, format!("{}: {e}", path.display())))?;
        out.push(rec);
    }
    Ok((manifest, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ImuSample;

    #[test]
    fn round_trip_and_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imu.jsonl");
        let recs = vec![
            ImuSample {
                t: 0.0,
                accel: [0.1, 0.0, 9.8],
                gyro: [0.0, 0.0, 0.01],
            },
            ImuSample {
                t: 0.002,
                accel: [0.1, -1e-17, 9.8],
                gyro: [0.0, 0.0, 0.3333333333333333],
            },
        ];
        write_jsonl(&path, &serde_json::json!({"seed": 1}), &recs).unwrap();
        let (m, back): (_, Vec<ImuSample>) = read_jsonl(&path).unwrap();
        assert_eq!(back, recs);
        assert_eq!(m.unwrap()["seed"], 1);

        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"t\": oops}\n");
        std::fs::write(&path, text).unwrap();
        let err = read_jsonl::<ImuSample>(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
    }
}
