use std::path::Path;
use std::process::{Command, Output};

fn railloc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_railloc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TRACK: &str = r#"
heading_deg = 75.0
origin = { lat = 48.1, lon = 11.5 }
[[elements]]
shape = "st"
length = 350.0
[[elements]]
shape = "ta"
length = 50.0
[[elements]]
shape = "ca"
length = 250.0
radius = -280.0
[[elements]]
shape = "ta"
length = 50.0
[[elements]]
shape = "st"
length = 350.0
"#;

const RUN: &str = r#"
seed = 2
imu_rate_hz = 100.0
gnss_sigma_m = 0.5
[[speed_profile]]
from_m = 0.0
to_m = 1050.0
speed_mps = 14.0
"#;

fn fixture(dir: &Path) {
    std::fs::write(dir.join("track.toml"), TRACK).unwrap();
    std::fs::write(dir.join("run.toml"), RUN).unwrap();
    std::fs::write(dir.join("scenario.toml"), "track = \"track.toml\"\nrun = \"run.toml\"\n").unwrap();
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    let ok = |args: &[&str]| {
        let o = railloc(args, d);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        String::from_utf8(o.stdout).unwrap()
    };
    let listed = ok(&["simulate", "--config", "scenario.toml", "--out", "survey"]);
    assert_eq!(listed.lines().count(), 6);
    ok(&["simulate", "--config", "scenario.toml", "--seed", "11", "--out", "trip"]);
    ok(&["localize", "--config", "scenario.toml", "--method", "imm", "--out", "survey", "survey"]);
    ok(&["map", "--config", "scenario.toml", "--out", "map", "survey/log_imm.csv", "survey/events_imm.json"]);
    let map = std::fs::read_to_string(d.join("map/map.csv")).unwrap();
    assert!(map.starts_with("# manifest: "));
    let shapes: Vec<&str> = map.lines().skip_while(|l| !l.starts_with("index,")).skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(shapes, ["st", "ta", "ca", "ta", "st"]);

    ok(&["localize", "--config", "scenario.toml", "--method", "kf", "--out", "trip", "trip"]);
    ok(&["localize", "--config", "scenario.toml", "--method", "imm", "--map", "map/map.csv", "--out", "trip", "trip"]);
    ok(&[
        "evaluate", "--config", "scenario.toml", "--truth", "trip/truth.jsonl", "--map", "map/map.csv",
        "--reference", "trip/reference.csv", "--out", "report", "trip/log_kf.csv", "trip/log_imm.csv",
    ]);
    let table1 = std::fs::read_to_string(d.join("report/table1.csv")).unwrap();
    assert!(table1.contains("channel,cdf,kf,imm,imm+map"));
    assert!(table1.lines().next().unwrap().contains("\"seed\":11"));
    assert!(d.join("report/table4.csv").exists());
}

#[test]
fn missing_track_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("scenario.toml"), "seed = 3\n").unwrap();
    let o = railloc(&["simulate", "--config", "scenario.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("track"), "{}", stderr(&o));
}

#[test]
fn unknown_method_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = railloc(&["localize", "--method", "ukf", "streams"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ukf"));
}

#[test]
fn data_errors_exit_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = railloc(&["localize", "--method", "kf", "missing"], d);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("gnss.jsonl"));

    fixture(d);
    assert!(railloc(&["simulate", "--config", "scenario.toml", "--out", "sim"], d).status.success());
    let gnss = d.join("sim/gnss.jsonl");
    let text = std::fs::read_to_string(&gnss).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[9] = "not json";
    std::fs::write(&gnss, lines.join("\n")).unwrap();
    let o = railloc(&["localize", "--method", "kf", "--out", "logs", "sim"], d);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("line 10"), "{}", stderr(&o));
}

#[test]
fn map_from_a_kf_log_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    assert!(railloc(&["simulate", "--config", "scenario.toml", "--out", "sim"], d).status.success());
    assert!(railloc(&["localize", "--method", "kf", "--out", "sim", "sim"], d).status.success());
    std::fs::write(d.join("events.json"), "{\"events\": []}").unwrap();
    let o = railloc(&["map", "--out", "map", "sim/log_kf.csv", "events.json"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("IMM"));
}
