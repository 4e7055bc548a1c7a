use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_cloudprobe");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn schema_validator() -> jsonschema::Validator {
    let text = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/report.v1.schema.json")).unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).unwrap()
}

fn assert_valid_report(v: &Value) {
    let validator = schema_validator();
    let errors: Vec<String> = validator.iter_errors(v).map(|e| format!("{e} at {}", e.instance_path)).collect();
    assert!(errors.is_empty(), "schema violations: {errors:?}");
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path
}

fn sim_config(days: f64, retry_gap_s: f64, process: &str) -> String {
    format!(
        "probe_interval_s = 600\nhorizon_days = {days}\nvantage_points = 2\nretry_max = 5\nretry_gap_s = {retry_gap_s}\nseed = 9\nmode = \"simulate\"\n\n{process}"
    )
}

const FIXED_900: &str = "[process]\nup_mean_s = 7200\n\n[process.duration]\nkind = \"fixed\"\nvalue_s = 900\n";
const EXP_120: &str = "[process]\nup_mean_s = 3600\nnetwork_fail_prob = 0.01\n\n[process.duration]\nkind = \"exponential\"\nmean_s = 120\n";

fn simulate(dir: &Path, config: &Path) -> Output {
    let o = run(&["simulate", "--config", config.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn kv(out: &str, key: &str) -> u64 {
    out.lines().find_map(|l| l.strip_prefix(&format!("{key}="))).unwrap().parse().unwrap()
}

#[test]
fn simulate_first_campaign_try_count() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(dir.path(), &repo_config("campaign-10min.toml"));
    let out = stdout(&o);
    assert_eq!(kv(&out, "expected_tries"), 109_296);
    assert_eq!(kv(&out, "y1"), 109_296);
    assert!(dir.path().join("truth.jsonl").exists());
}

#[test]
fn simulate_without_outages_succeeds_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &sim_config(3.0, 1.0, "[process]\nup_mean_s = 1e15\n\n[process.duration]\nkind = \"fixed\"\nvalue_s = 60\n"));
    let out = stdout(&simulate(dir.path(), &cfg));
    assert_eq!(kv(&out, "x1"), kv(&out, "y1"));
}

#[test]
fn simulate_is_deterministic_and_seed_overridable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &sim_config(5.0, 1.0, EXP_120));
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    simulate(&a, &cfg);
    simulate(&b, &cfg);
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", c.to_str().unwrap(), "--seed", "10"]);
    assert!(o.status.success());
    for f in ["attempts.jsonl", "truth.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    assert_ne!(fs::read(a.join("truth.jsonl")).unwrap(), fs::read(c.join("truth.jsonl")).unwrap());
}

#[test]
fn invalid_config_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &sim_config(1.0, 200.0, FIXED_900));
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("retry_gap_s"));
    assert_eq!(run(&["simulate"]).status.code(), Some(1));
    assert_eq!(run(&["estimate", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

fn synthetic_log(path: &Path, y1: u64, x1: u64) {
    let mut f = std::io::BufWriter::new(fs::File::create(path).unwrap());
    for slot in 0..y1 {
        let outcome = if slot < y1 - x1 { "fail" } else { "success" };
        writeln!(f, "{{\"ts_s\":{},\"vantage\":0,\"slot\":{slot},\"attempt\":1,\"outcome\":\"{outcome}\"}}", slot * 600).unwrap();
    }
}

#[test]
fn estimate_rejects_three_nines_for_first_try_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("attempts.jsonl");
    synthetic_log(&log, 639_478, 639_478 - 2_782);
    let o = run(&["estimate", "--log", log.to_str().unwrap(), "--claim", "0.999@0.01", "--claim", "0.99"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_valid_report(&v);
    let p1 = v["estimate_set"]["p1"].as_f64().unwrap();
    assert_eq!(format!("{:.3}", p1 * 100.0), "99.565");
    let sigma = v["estimate_set"]["sigma"].as_f64().unwrap();
    assert!((sigma - 8.2e-5).abs() / 8.2e-5 < 0.02);
    assert_eq!(v["sla_tests"][0]["reject"], Value::Bool(true));
    assert_eq!(v["sla_tests"][1]["reject"], Value::Bool(false));
}

#[test]
fn estimate_without_claims_and_with_no_data() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("attempts.jsonl");
    synthetic_log(&log, 20, 19);
    let v: Value = serde_json::from_str(&stdout(&run(&["estimate", "--log", log.to_str().unwrap()]))).unwrap();
    assert!(v.get("sla_tests").is_none());
    assert_eq!(v["estimate_set"]["p1"].as_f64().unwrap(), 0.95);

    fs::write(&log, "").unwrap();
    let o = run(&["estimate", "--log", log.to_str().unwrap(), "--claim", "0.999"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_valid_report(&v);
    assert!(v["insufficient_data"].is_string());
    assert!(v.get("estimate_set").is_none());
}

#[test]
fn malformed_log_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("attempts.jsonl");
    fs::write(
        &log,
        "{\"ts_s\":0,\"vantage\":0,\"slot\":0,\"attempt\":1,\"outcome\":\"fail\"}\n{\"ts_s\":1,\"vantage\":0,\"slot\":0,\"attempt\":3,\"outcome\":\"success\"}\n",
    )
    .unwrap();
    let o = run(&["estimate", "--log", log.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("slot 0"));
    assert_eq!(run(&["estimate", "--log", "/nonexistent/attempts.jsonl"]).status.code(), Some(3));
}

#[test]
fn persistence_extreme_gives_equal_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &sim_config(10.0, 0.0, FIXED_900));
    simulate(dir.path(), &cfg);
    let log = dir.path().join("attempts.jsonl");
    let o = run(&["estimate", "--config", cfg.to_str().unwrap(), "--log", log.to_str().unwrap()]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let e = &v["estimate_set"];
    assert!(e["p1"].as_f64().unwrap() < 1.0);
    assert_eq!(e["p1"], e["p_star"]);
}

fn detect(dir: &Path, cfg: &Path, extra: &[&str]) -> Output {
    let (log, truth) = (dir.join("attempts.jsonl"), dir.join("truth.jsonl"));
    let mut args = vec!["detect", "--config", cfg.to_str().unwrap(), "--log", log.to_str().unwrap(), "--truth", truth.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn long_outages_are_all_detected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &sim_config(10.0, 1.0, FIXED_900));
    simulate(dir.path(), &cfg);
    let o = detect(dir.path(), &cfg, &["--threshold-s", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_valid_report(&v);
    assert!(v["detection"]["total_true_outages"].as_u64().unwrap() > 0);
    assert_eq!(v["detection"]["undetected"], 0);
    let m = &v["sla_metrics"]["detected"];
    assert_eq!(m["long_outage_count"], m["failure_count"]);
}

#[test]
fn curve_csv_and_censoring() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &sim_config(10.0, 1.0, EXP_120));
    simulate(dir.path(), &cfg);
    let csv = stdout(&detect(dir.path(), &cfg, &["--format", "csv"]));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("l_over_t,p_nodet"));
    assert!(csv.lines().any(|l| l == "0.5,0.5"));
    assert!(csv.lines().any(|l| l == "1,0"));

    let out = dir.path().join("report");
    let o = detect(dir.path(), &cfg, &["--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(out.join("nodetect_curve.csv")).unwrap(), csv);
    let v: Value = serde_json::from_str(&fs::read_to_string(out.join("detect.json")).unwrap()).unwrap();
    assert_valid_report(&v);
    let (detected, truth) = (&v["sla_metrics"]["detected"], &v["sla_metrics"]["true"]);
    assert!(detected["failure_count"].as_u64().unwrap() < truth["failure_count"].as_u64().unwrap());
}

#[test]
fn truth_beyond_config_horizon_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &sim_config(10.0, 1.0, FIXED_900));
    simulate(dir.path(), &cfg);
    let short = dir.path().join("short.toml");
    fs::write(&short, sim_config(1.0, 1.0, FIXED_900)).unwrap();
    let o = detect(dir.path(), &short, &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pipeline_is_byte_reproducible_and_reports_merge() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &sim_config(4.0, 1.0, EXP_120));
    let render = |name: &str| -> Vec<u8> {
        let d = dir.path().join(name);
        simulate(&d, &cfg);
        let log = d.join("attempts.jsonl");
        let est = run(&["estimate", "--config", cfg.to_str().unwrap(), "--log", log.to_str().unwrap(), "--claim", "0.999", "--out", d.to_str().unwrap()]);
        assert!(est.status.success());
        assert!(detect(&d, &cfg, &["--out", d.to_str().unwrap()]).status.success());
        let merged = run(&["report", d.join("estimate.json").to_str().unwrap(), d.join("detect.json").to_str().unwrap()]);
        assert!(merged.status.success(), "{}", String::from_utf8_lossy(&merged.stderr));
        merged.stdout
    };
    let (a, b) = (render("a"), render("b"));
    assert_eq!(a, b);
    let v: Value = serde_json::from_slice(&a).unwrap();
    assert_valid_report(&v);
    assert!(v["estimate_set"].is_object() && v["detection"].is_object() && v["sla_metrics"].is_object());
    assert_eq!(v["provenance"]["inputs"].as_object().unwrap().len(), 3);

    let single = run(&["report", dir.path().join("a/estimate.json").to_str().unwrap()]);
    let original: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a/estimate.json")).unwrap()).unwrap();
    assert_eq!(serde_json::from_slice::<Value>(&single.stdout).unwrap(), original);

    // a fragment from a different log must not merge
    let other = dir.path().join("other");
    let cfg2 = dir.path().join("other.toml");
    fs::write(&cfg2, sim_config(2.0, 1.0, EXP_120)).unwrap();
    simulate(&other, &cfg2);
    let est = run(&["estimate", "--log", other.join("attempts.jsonl").to_str().unwrap(), "--out", other.to_str().unwrap()]);
    assert!(est.status.success());
    let o = run(&["report", dir.path().join("a/detect.json").to_str().unwrap(), other.join("estimate.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

fn up_fixture() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            thread::spawn(move || answer(stream));
        }
    });
    format!("http://{addr}/object")
}

fn answer(mut stream: TcpStream) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    while reader.read_line(&mut line).is_ok_and(|n| n > 0) {
        if line == "\r\n" {
            break;
        }
        line.clear();
    }
    let _ = stream.write_all(b"HTTP/1.1 200 OK\r\nContent-Length: 2\r\nConnection: close\r\n\r\nok");
}

fn live_config(dir: &Path, url: &str, interval_s: f64, slots: u64) -> PathBuf {
    write_config(
        dir,
        &format!(
            "probe_interval_s = {interval_s}\nhorizon_days = {}\nvantage_points = 1\nretry_max = 3\nretry_gap_s = 0.01\nmode = \"live\"\ntarget = \"{url}\"\n\n[probe]\ntimeout_ms = 2000\n",
            slots as f64 * interval_s / 86_400.0
        ),
    )
}

#[test]
fn probe_three_slots_against_up_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = live_config(dir.path(), &up_fixture(), 0.2, 3);
    let o = run(&["probe", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(dir.path().join("attempts.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.lines().all(|l| l.contains("\"outcome\":\"success\"")));
    assert_eq!(fs::read_to_string(dir.path().join("checkpoint")).unwrap().trim(), "2");
}

#[test]
fn probe_rejects_bad_scheme_before_probing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = live_config(dir.path(), "ftp://127.0.0.1/object", 0.2, 3);
    let o = run(&["probe", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("attempts.jsonl").exists());
    let cfg = live_config(dir.path(), "http://127.0.0.1/object", 0.2, 3);
    let o = run(&["probe", "--config", cfg.to_str().unwrap(), "--url", "gopher://x/y", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn probe_resume_after_kill_has_no_duplicate_slots() {
    let dir = tempfile::tempdir().unwrap();
    let slots = 12;
    let cfg = live_config(dir.path(), &up_fixture(), 0.25, slots);
    let out = dir.path().to_str().unwrap();
    let mut child = Command::new(BIN)
        .args(["probe", "--config", cfg.to_str().unwrap(), "--out", out])
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let ckpt = dir.path().join("checkpoint");
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        let done: Option<u64> = fs::read_to_string(&ckpt).ok().and_then(|s| s.trim().parse().ok());
        if done.is_some_and(|d| d >= 2) {
            break;
        }
        assert!(Instant::now() < deadline, "campaign never checkpointed");
        thread::sleep(Duration::from_millis(20));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let killed_at: u64 = fs::read_to_string(&ckpt).unwrap().trim().parse().unwrap();
    assert!(killed_at < slots - 1, "campaign finished before the kill");

    let o = run(&["probe", "--config", cfg.to_str().unwrap(), "--out", out, "--resume"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("finished=true"));

    let log = fs::read_to_string(dir.path().join("attempts.jsonl")).unwrap();
    let mut slots_seen: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|v| v["attempt"] == 1)
        .map(|v| v["slot"].as_u64().unwrap())
        .collect();
    let n = slots_seen.len();
    slots_seen.dedup();
    assert_eq!(slots_seen.len(), n, "duplicate slot indices");
    assert_eq!(slots_seen, (0..slots).collect::<Vec<_>>());
    let ts: Vec<f64> = log.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()["ts_s"].as_f64().unwrap()).collect();
    assert!(ts.windows(2).all(|w| w[0] <= w[1]));
    let est = run(&["estimate", "--config", cfg.to_str().unwrap(), "--log", dir.path().join("attempts.jsonl").to_str().unwrap()]);
    assert!(est.status.success());
}
