//! File-based batch workflow: simulate, localize, map and evaluate. Each
//! command reads files, writes its outputs into a directory and stamps every
//! output with a manifest (tool version, seed, SHA-256 of the inputs).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{
    compare_methods, decompose_errors, improvements_csv, table1_csv, table2_csv, table4_csv, truth_in_frame, Channel,
    EvalReport,
};
use crate::filters::{
    parse_state_log, run_filter, state_log_to_string, EpochLog, FilterConfig, FilterRun, GeometryEvent, Method,
};
use crate::geom::{GeoPoint, LocalFrame};
use crate::mapfusion::fuse_log;
use crate::scenario::{
    build_map_from_events, estimation_frame, map_accuracy, reference_run, reference_track, MappingConfig, FUSED_METHOD,
};
use crate::sim::{build_track, read_jsonl, simulate_run, write_jsonl, GnssFix, ImuSample, RunConfig, RunStreams, TrackSpec, TruthSample};
use crate::trackmap::{load_reference, map_error_cdf, map_from_str, map_to_string, IdentifiedSegment, TrackMap};

pub const TOOL: &str = "railloc";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Value of `track` or `run` selecting the built-in reference scenario.
pub const REFERENCE: &str = "reference";

const MANIFEST_PREFIX: &str = "# manifest: ";

/// Scenario file (TOML). `track` and `run` name a track spec and a run
/// configuration, relative to the scenario file, or `"reference"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub track: String,
    #[serde(default = "reference_name")]
    pub run: String,
    /// Overrides the seed of the run configuration.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub mapping: MappingConfig,
}

fn reference_name() -> String {
    REFERENCE.to_string()
}

/// A loaded scenario with every referenced file resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub track: TrackSpec,
    pub run: RunConfig,
    pub filter: FilterConfig,
    pub mapping: MappingConfig,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// SHA-256 of the scenario file and the files it references.
    pub inputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<(String, String)> {
    let bytes = read_bytes(path)?;
    let hash = sha256_hex(&bytes);
    let text = String::from_utf8(bytes).map_err(|_| Error::parse(1, format!("{}: not UTF-8", path.display())))?;
    Ok((text, hash))
}

fn config_error(path: &Path, e: Error) -> Error {
    match e {
        Error::Config(m) if m.starts_with(&path.display().to_string()) => Error::Config(m),
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        Error::Io { source, .. } => Error::Config(format!("{}: {source}", path.display())),
        other => Error::Config(format!("{}: {other}", path.display())),
    }
}

impl Scenario {
    /// The built-in reference track and run with default tuning.
    pub fn reference(seed: u64) -> Scenario {
        Scenario {
            track: reference_track(),
            run: reference_run(seed),
            filter: FilterConfig::default(),
            mapping: MappingConfig::default(),
            seed,
            out: None,
            inputs: BTreeMap::new(),
        }
    }

    /// Loads a scenario file; `seed` overrides the configured seed.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Scenario> {
        let (text, hash) = read_text(path).map_err(|e| config_error(path, e))?;
        let cfg: ScenarioConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        cfg.filter.validate().map_err(|e| config_error(path, e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut inputs = BTreeMap::from([("scenario".to_string(), hash)]);

        let track = if cfg.track == REFERENCE {
            reference_track()
        } else {
            let p = dir.join(&cfg.track);
            let (text, hash) = read_text(&p).map_err(|e| config_error(&p, e))?;
            inputs.insert("track".into(), hash);
            TrackSpec::from_toml(&text).map_err(|e| config_error(&p, e))?
        };
        let seed = seed.or(cfg.seed);
        let run = if cfg.run == REFERENCE {
            reference_run(seed.unwrap_or(1))
        } else {
            let p = dir.join(&cfg.run);
            let (text, hash) = read_text(&p).map_err(|e| config_error(&p, e))?;
            inputs.insert("run".into(), hash);
            let mut run = RunConfig::from_toml(&text).map_err(|e| config_error(&p, e))?;
            if let Some(s) = seed {
                run.seed = s;
            }
            run
        };
        Ok(Scenario {
            seed: run.seed,
            track,
            run,
            filter: cfg.filter,
            mapping: cfg.mapping,
            out: cfg.out.map(|o| dir.join(o)),
            inputs,
        })
    }

    fn manifest(&self, command: &str, inputs: &BTreeMap<String, String>) -> Value {
        let mut all = self.inputs.clone();
        all.extend(inputs.iter().map(|(k, v)| (k.clone(), v.clone())));
        json!({
            "tool": TOOL,
            "version": VERSION,
            "command": command,
            "seed": self.seed,
            "inputs": all,
        })
    }
}

fn with_field(mut manifest: Value, key: &str, value: Value) -> Value {
    manifest[key] = value;
    manifest
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Splits a leading `# manifest: {json}` line from a text file.
pub fn split_manifest(text: &str) -> Result<(Option<Value>, &str)> {
    match text.strip_prefix(MANIFEST_PREFIX) {
        Some(rest) => {
            let (line, body) = rest.split_once('\n').unwrap_or((rest, ""));
            let v = serde_json::from_str(line).map_err(|e| Error::parse(1, format!("manifest: {e}")))?;
            Ok((Some(v), body))
        }
        None => Ok((None, text)),
    }
}

fn manifest_line(manifest: &Value) -> String {
    format!("{MANIFEST_PREFIX}{manifest}\n")
}

fn frame_from(manifest: Option<&Value>, path: &Path) -> Result<LocalFrame> {
    let origin = manifest
        .and_then(|m| m.get("frame_origin"))
        .ok_or_else(|| Error::parse(1, format!("{}: manifest lacks frame_origin", path.display())))?;
    let origin: GeoPoint = serde_json::from_value(origin.clone())
        .map_err(|e| Error::parse(1, format!("{}: frame_origin: {e}", path.display())))?;
    LocalFrame::new(origin)
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

/// Output files of [`simulate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOutputs {
    pub streams: RunStreams,
    /// True track as a compact map.
    pub track: PathBuf,
    /// True track centerline every metre as `lat,lon`.
    pub reference: PathBuf,
    pub manifest: PathBuf,
}

/// Simulates the scenario's run and writes the truth, GNSS and IMU streams.
pub fn simulate(scenario: &Scenario, out: &Path) -> Result<SimulateOutputs> {
    create_dir(out)?;
    let track = build_track(&scenario.track)?;
    let sim = simulate_run(&track, &scenario.run)?;
    let manifest = with_field(
        scenario.manifest("simulate", &BTreeMap::new()),
        "frame_origin",
        json!(sim.frame_origin),
    );
    let streams = RunStreams::in_dir(out);
    write_jsonl(&streams.truth, &manifest, &sim.truth)?;
    write_jsonl(&streams.gnss, &manifest, &sim.gnss)?;
    write_jsonl(&streams.imu, &manifest, &sim.imu)?;

    let track_path = out.join("track.csv");
    write_file(&track_path, &(manifest_line(&manifest) + &map_to_string(&track)))?;

    let frame = LocalFrame::new(track.origin)?;
    let mut reference = manifest_line(&manifest) + "lat,lon\n";
    for (_, pose) in track.chain(&frame)?.sample(1.0) {
        let g = frame.to_geo(pose.position());
        let _ = writeln!(reference, "{:.9},{:.9}", g.lat, g.lon);
    }
    let reference_path = out.join("reference.csv");
    write_file(&reference_path, &reference)?;

    let mut outputs = BTreeMap::new();
    for p in [&streams.truth, &streams.gnss, &streams.imu, &track_path, &reference_path] {
        outputs.insert(file_name(p), file_hash(p)?);
    }
    let manifest_path = out.join("manifest.json");
    let summary = with_field(manifest, "outputs", json!(outputs));
    write_file(&manifest_path, &(serde_json::to_string_pretty(&summary).expect("json") + "\n"))?;
    Ok(SimulateOutputs {
        streams,
        track: track_path,
        reference: reference_path,
        manifest: manifest_path,
    })
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// A compact map file with its manifest.
#[derive(Debug, Clone)]
pub struct MapFile {
    pub map: TrackMap,
    pub manifest: Option<Value>,
    pub hash: String,
}

impl MapFile {
    pub fn load(path: &Path) -> Result<MapFile> {
        let (text, hash) = read_text(path)?;
        let (manifest, _) = split_manifest(&text)?;
        let map = map_from_str(&text).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        Ok(MapFile { map, manifest, hash })
    }

    /// Cross-track accuracy recorded when the map was built.
    pub fn accuracy(&self) -> Option<f64> {
        self.manifest.as_ref()?.get("accuracy_m")?.as_f64()
    }
}

/// Output files of [`localize`].
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizeOutputs {
    pub log: PathBuf,
    /// Recognized segments (IMM only).
    pub events: Option<PathBuf>,
}

/// Runs `method` over the streams in `streams_dir`. With a map, the log gets
/// map-fused columns and closed-loop fusion applies when configured.
pub fn localize(
    scenario: &Scenario,
    streams_dir: &Path,
    method: Method,
    map: Option<&Path>,
    out: &Path,
) -> Result<LocalizeOutputs> {
    let streams = RunStreams::in_dir(streams_dir);
    let (gnss_manifest, gnss): (_, Vec<GnssFix>) = read_jsonl(&streams.gnss)?;
    let (_, imu): (_, Vec<ImuSample>) = read_jsonl(&streams.imu)?;
    let mut inputs = BTreeMap::from([
        ("gnss".to_string(), file_hash(&streams.gnss)?),
        ("imu".to_string(), file_hash(&streams.imu)?),
    ]);
    let frame = estimation_frame(&gnss)?;
    let map = map.map(MapFile::load).transpose()?;
    let cfg = &scenario.filter;
    let fusion = match &map {
        Some(m) => {
            inputs.insert("map".into(), m.hash.clone());
            Some((m.map.chain(&frame)?, cfg.map_fusion.sigma_for(m.accuracy())))
        }
        None => None,
    };
    let mut run = run_filter(&gnss, &imu, &frame, method, cfg, fusion.as_ref().map(|(c, s)| (c, *s)))?;
    if let Some((chain, sigma)) = &fusion {
        fuse_log(&mut run.epochs, chain, *sigma, &cfg.map_fusion)?;
    }

    let seed = gnss_manifest.as_ref().and_then(|m| m.get("seed")).cloned().unwrap_or(json!(scenario.seed));
    let mut manifest = scenario.manifest("localize", &inputs);
    manifest["seed"] = seed;
    manifest["method"] = json!(method.name());
    manifest["frame_origin"] = json!(frame.origin());
    if let Some((_, sigma)) = &fusion {
        manifest["sigma_m"] = json!(sigma);
    }
    create_dir(out)?;
    let log = out.join(format!("log_{}.csv", method.name()));
    write_file(&log, &state_log_to_string(&manifest, &run.epochs))?;
    let events = if method == Method::Imm {
        let events = crate::filters::classify_segments(&run.modes, &cfg.classify);
        let path = out.join(format!("events_{}.json", method.name()));
        let body = json!({ "manifest": manifest, "events": events });
        write_file(&path, &(serde_json::to_string_pretty(&body).expect("json") + "\n"))?;
        Some(path)
    } else {
        None
    };
    Ok(LocalizeOutputs { log, events })
}

/// A state log with its manifest.
#[derive(Debug, Clone)]
pub struct LogFile {
    pub method: Method,
    pub frame: LocalFrame,
    pub epochs: Vec<EpochLog>,
    pub manifest: Value,
    pub hash: String,
}

impl LogFile {
    pub fn load(path: &Path) -> Result<LogFile> {
        let (text, hash) = read_text(path)?;
        let (manifest, epochs) = parse_state_log(&text).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        let frame = frame_from(manifest.as_ref(), path)?;
        let manifest = manifest.unwrap_or(Value::Null);
        let method = manifest
            .get("method")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::parse(1, format!("{}: manifest lacks method", path.display())))?
            .parse()?;
        Ok(LogFile {
            method,
            frame,
            epochs,
            manifest,
            hash,
        })
    }
}

/// Output files of [`build_map_files`].
#[derive(Debug, Clone, PartialEq)]
pub struct MapOutputs {
    pub map: PathBuf,
    pub segments: PathBuf,
    pub refinement: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct EventsFile {
    events: Vec<GeometryEvent>,
}

/// Fits, assembles and refines a map from an IMM state log and its events.
pub fn build_map_files(scenario: &Scenario, log_path: &Path, events_path: &Path, out: &Path) -> Result<MapOutputs> {
    let log = LogFile::load(log_path)?;
    if log.method != Method::Imm {
        return Err(Error::Config(format!(
            "{}: mapping needs an IMM log, this one is {}",
            log_path.display(),
            log.method.name()
        )));
    }
    let (events_text, events_hash) = read_text(events_path)?;
    let events: EventsFile = serde_json::from_str(&events_text)
        .map_err(|e| Error::parse(e.line(), format!("{}: {e}", events_path.display())))?;
    let run = FilterRun::from_log(Method::Imm, log.epochs);
    let build = build_map_from_events(&run, events.events, &log.frame, &scenario.mapping).map_err(|e| match e {
        Error::Domain(m) => Error::Domain(format!("{m}; record a longer run or lower mapping.min_segment_epochs")),
        other => other,
    })?;
    let segments = &build.segments;
    let (t0, t1) = (segments[0].start_time, segments[segments.len() - 1].end_time);
    let fit_rms = build.refinement.fit_rms;
    let accuracy = map_accuracy(fit_rms, &run.epochs, t0, t1);

    let inputs = BTreeMap::from([("log".to_string(), log.hash), ("events".to_string(), events_hash)]);
    let mut manifest = scenario.manifest("map", &inputs);
    manifest["seed"] = log.manifest.get("seed").cloned().unwrap_or(json!(scenario.seed));
    manifest["fit_rms_m"] = json!(fit_rms);
    manifest["accuracy_m"] = json!(accuracy);
    create_dir(out)?;

    let map = out.join("map.csv");
    write_file(&map, &(manifest_line(&manifest) + &map_to_string(&build.refinement.map)))?;

    let seg_path = out.join("segments.json");
    let body = json!({ "manifest": manifest, "segments": segments as &[IdentifiedSegment] });
    write_file(&seg_path, &(serde_json::to_string_pretty(&body).expect("json") + "\n"))?;

    let mut hist = manifest_line(&manifest) + "pass,iteration,objective\n";
    for (pass, h) in [("abandoned", &build.refinement.abandoned_history), ("final", &build.refinement.objective_history)] {
        for (i, v) in h.iter().enumerate() {
            let _ = writeln!(hist, "{pass},{i},{v}");
        }
    }
    let refinement = out.join("refinement.csv");
    write_file(&refinement, &hist)?;
    Ok(MapOutputs {
        map,
        segments: seg_path,
        refinement,
    })
}

/// Evaluation inputs beyond the state logs.
#[derive(Debug, Clone)]
pub struct EvaluateInputs<'a> {
    pub truth: &'a Path,
    pub logs: &'a [PathBuf],
    /// Reference polyline for map-error statistics; needs `map`.
    pub reference: Option<&'a Path>,
    pub map: Option<&'a Path>,
}

fn cdf_file_name(method: &str, channel: Channel) -> String {
    let m: String = method.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
    format!("cdf_{m}_{}.csv", channel.label().to_ascii_lowercase())
}

/// Error CDFs and comparison tables of the given logs against the truth.
pub fn evaluate(scenario: &Scenario, inputs: &EvaluateInputs, out: &Path) -> Result<Vec<PathBuf>> {
    if inputs.reference.is_some() != inputs.map.is_some() {
        return Err(Error::Config("map-error statistics need both a reference polyline and a map".into()));
    }
    let (truth_manifest, truth): (_, Vec<TruthSample>) = read_jsonl(inputs.truth)?;
    let truth_frame = frame_from(truth_manifest.as_ref(), inputs.truth)?;
    let mut hashes = BTreeMap::from([("truth".to_string(), file_hash(inputs.truth)?)]);

    let loaded: Vec<Result<(LogFile, Vec<EvalReport>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = inputs
            .logs
            .iter()
            .map(|p| {
                let truth = &truth;
                let truth_frame = &truth_frame;
                s.spawn(move || -> Result<(LogFile, Vec<EvalReport>)> {
                    let log = LogFile::load(p)?;
                    let truth = truth_in_frame(truth, truth_frame, &log.frame);
                    let mut reports = vec![EvalReport::new(log.method.name(), decompose_errors(&log.epochs, &truth, false).0)?];
                    if log.epochs.iter().any(|e| e.fused.is_some()) {
                        let name = if log.method == Method::Imm {
                            FUSED_METHOD.to_string()
                        } else {
                            format!("{}+map", log.method.name())
                        };
                        reports.push(EvalReport::new(name, decompose_errors(&log.epochs, &truth, true).0)?);
                    }
                    Ok((log, reports))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation thread")).collect()
    });
    let mut reports = Vec::new();
    let mut seed = json!(scenario.seed);
    for (i, r) in loaded.into_iter().enumerate() {
        let (log, rs) = r?;
        hashes.insert(format!("log_{}", i + 1), log.hash.clone());
        if let Some(s) = log.manifest.get("seed") {
            seed = s.clone();
        }
        reports.extend(rs);
    }
    let comparison = compare_methods(&reports)?;

    let stats = match (inputs.reference, inputs.map) {
        (Some(r), Some(m)) => {
            let map = MapFile::load(m)?;
            hashes.insert("reference".into(), file_hash(r)?);
            hashes.insert("map".into(), map.hash.clone());
            Some(map_error_cdf(&map.map, &load_reference(r)?)?)
        }
        _ => None,
    };

    let mut manifest = scenario.manifest("evaluate", &hashes);
    manifest["seed"] = seed;
    let header = manifest_line(&manifest);
    create_dir(out)?;
    let mut files: Vec<(String, String)> = vec![
        ("table1.csv".into(), table1_csv(&comparison)),
        ("table2.csv".into(), table2_csv(&comparison)),
        ("improvements.csv".into(), improvements_csv(&comparison)),
    ];
    let mut consistency = String::from("method,availability,consistency_along,consistency_cross\n");
    for r in &reports {
        let _ = writeln!(
            consistency,
            "{},{:.4},{:.4},{:.4}",
            r.method, r.availability, r.consistency.0, r.consistency.1
        );
    }
    files.push(("consistency.csv".into(), consistency));
    for r in &reports {
        for ch in [Channel::Along, Channel::Cross] {
            let mut t = String::from("value_m,probability\n");
            for (v, p) in r.cdf(ch).table() {
                let _ = writeln!(t, "{v:.4},{p:.6}");
            }
            files.push((cdf_file_name(&r.method, ch), t));
        }
    }
    if let Some(stats) = &stats {
        files.push(("table4.csv".into(), table4_csv(stats)));
    }
    let mut written = Vec::new();
    for (name, body) in files {
        let p = out.join(name);
        write_file(&p, &(header.clone() + &body))?;
        written.push(p);
    }
    Ok(written)
}
