use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use fieldlink::{sha256_file, Manifest, HISTORY_FILE, MANIFEST_FILE};
use fieldlink_core::fieldnet::{Flags, Frame};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fieldlink"));
    c.env("RUST_LOG", "warn");
    c
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stdout: {}\nstderr: {}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().arg("run").arg("--out-dir").arg(dir).args(args).output().unwrap()
}

#[test]
fn same_seed_same_history_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    ok(&run(&a, &["--seed", "9", "--duration", "172800"]));
    ok(&run(&b, &["--seed", "9", "--duration", "172800"]));
    ok(&run(&c, &["--seed", "10", "--duration", "172800"]));
    let h = |d: &Path| sha256_file(&d.join(HISTORY_FILE)).unwrap();
    assert_eq!(h(&a), h(&b));
    assert_ne!(h(&a), h(&c));
    let m = Manifest::read(&a.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.history_sha256, h(&a));
    assert_eq!(m.seed, 9);
}

#[test]
fn manifest_alone_repeats_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    ok(&run(&first, &["--config", "table2_scenario", "--seed", "3"]));
    let again = tmp.path().join("again");
    let out = bin()
        .args(["run", "--manifest"])
        .arg(first.join(MANIFEST_FILE))
        .arg("--out-dir")
        .arg(&again)
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(sha256_file(&first.join(HISTORY_FILE)).unwrap(), sha256_file(&again.join(HISTORY_FILE)).unwrap());
    let a = std::fs::read_to_string(first.join("actuation.csv")).unwrap();
    assert_eq!(a, std::fs::read_to_string(again.join("actuation.csv")).unwrap());
    assert!(a.lines().any(|l| l.contains("lake_pump")));
}

#[test]
fn missing_config_leaves_no_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let out = run(&out_dir, &["--config", "/no/such/site.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/site.toml"));
    let leftover = std::fs::read_dir(&out_dir).map(|d| d.count()).unwrap_or(0);
    assert_eq!(leftover, 0);
}

#[test]
fn config_error_names_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "name = \"bad\"\n[env]\ndt = 60\nbogus = true\n").unwrap();
    let out = run(&tmp.path().join("out"), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:4:"), "{err}");
    assert!(!tmp.path().join("out").join(HISTORY_FILE).exists());
}

#[test]
fn finance_defaults_reach_seven_times_the_investment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin().args(["analyze", "--mode", "finance", "--out-dir"]).arg(tmp.path()).output().unwrap();
    ok(&out);
    let text = std::fs::read_to_string(tmp.path().join("analysis_finance.csv")).unwrap();
    let last: Vec<&str> = text.lines().last().unwrap().split(',').collect();
    assert_eq!(last[0], "10");
    let ccf: f64 = last[2].parse().unwrap();
    assert!((ccf / 10_000.0 - 7.16).abs() < 0.01, "{ccf}");
    assert!(tmp.path().join("analysis_finance_plot.dat").exists());
}

#[test]
fn analysis_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let history = tmp.path().join("h.csv");
    std::fs::write(&history, "time,kind,value,flags\n0,ph,6,0\n60,ph,six,0\n").unwrap();
    let out = bin().arg("analyze").arg(&history).args(["--mode", "summary"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"), "{}", String::from_utf8_lossy(&out.stderr));

    std::fs::write(&history, "time,kind,value,flags\n0,ph,6,0\n60,ph,6,0\n").unwrap();
    let out = bin().arg("analyze").arg(&history).args(["--mode", "suitability"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));

    let out = bin().arg("analyze").arg(&history).args(["--mode", "astrology"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn year_long_run_summarises_into_twelve_months() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&run(tmp.path(), &[]));
    let history = tmp.path().join(HISTORY_FILE);
    let out = bin().arg("analyze").arg(&history).args(["--mode", "summary"]).output().unwrap();
    ok(&out);
    let text = std::fs::read_to_string(tmp.path().join("history_summary.csv")).unwrap();
    let mut per_kind = std::collections::BTreeMap::<String, usize>::new();
    for line in text.lines().skip(1) {
        *per_kind.entry(line.split(',').next().unwrap().to_string()).or_default() += 1;
    }
    assert_eq!(per_kind.len(), 10);
    assert!(per_kind.values().all(|&n| n == 12), "{per_kind:?}");

    let out = bin().arg("analyze").arg(&history).args(["--mode", "suitability", "--rules", "demo"]).output().unwrap();
    ok(&out);
    let recs = std::fs::read_to_string(tmp.path().join("history_suitability.csv")).unwrap();
    assert_eq!(recs.lines().count(), 4);
}

#[test]
fn frame_dump_decodes_and_rejects() {
    let frame = Frame { node_id: 2, sensor_kind: 2, seq: 513, value: 2.5, flags: Flags(0x02) };
    let hex: String = frame.encode().iter().map(|b| format!("{b:02x}")).collect();
    let out = bin().args(["frame-dump", &hex]).output().unwrap();
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("tank_level") && text.contains("seq        513") && text.contains("test_error=true"), "{text}");

    let mut bytes = frame.encode();
    bytes[5] ^= 0x10;
    let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
    let out = bin().args(["frame-dump", &hex]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("invalid"));
}

fn hash_password(pw: &str) -> String {
    let mut child = bin().arg("hash-password").stdin(Stdio::piped()).stdout(Stdio::piped()).spawn().unwrap();
    child.stdin.take().unwrap().write_all(format!("{pw}\n").as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    ok(&out);
    String::from_utf8(out.stdout).unwrap().trim().to_string()
}

#[test]
fn hash_password_output_verifies() {
    let h = fieldlink_core::ctrlserver::PasswordHash(hash_password("orchard"));
    assert!(h.is_well_formed());
    assert!(h.verify("orchard"));
    assert!(!h.verify("orchard "));
    let out = bin().args(["hash-password", "--password", ""]).output().unwrap();
    assert!(!out.status.success());
}

fn credentials(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("users.toml");
    std::fs::write(&path, format!("[[users]]\nname = \"manager\"\nhash = \"{}\"\n", hash_password("secret"))).unwrap();
    path
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn spawn_serve(dir: &Path, port: u16) -> Child {
    bin()
        .args(["serve", "--config", "table1_scenario", "--accel", "20", "--port", &port.to_string()])
        .arg("--credentials")
        .arg(credentials(dir))
        .arg("--data-dir")
        .arg(dir.join("data"))
        .stderr(Stdio::piped())
        .spawn()
        .unwrap()
}

fn http(port: u16, request: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    s.write_all(request.as_bytes()).ok()?;
    let mut reply = String::new();
    s.read_to_string(&mut reply).ok()?;
    Some(reply)
}

fn wait_for(port: u16) {
    let start = Instant::now();
    while http(port, "GET /api/health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").is_none() {
        assert!(start.elapsed() < Duration::from_secs(20), "server did not come up");
        std::thread::sleep(Duration::from_millis(50));
    }
}

#[cfg(unix)]
#[test]
fn serve_round_trip_and_clean_shutdown() {
    let tmp = tempfile::tempdir().unwrap();
    let port = free_port();
    let mut child = spawn_serve(tmp.path(), port);
    wait_for(port);

    let body = r#"{"user":"manager","password":"secret"}"#;
    let login = format!(
        "POST /api/login HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let reply = http(port, &login).unwrap();
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    let json = &reply[reply.find("\r\n\r\n").unwrap() + 4..];
    let session: serde_json::Value = serde_json::from_str(json).unwrap();
    let token = session["token"].as_str().unwrap();

    std::thread::sleep(Duration::from_millis(500));
    let reply = http(port, &format!("GET /api/status HTTP/1.1\r\nHost: x\r\nAuthorization: Bearer {token}\r\nConnection: close\r\n\r\n")).unwrap();
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("tank_level"));
    let reply = http(port, "POST /api/commands HTTP/1.1\r\nHost: x\r\nContent-Length: 2\r\nConnection: close\r\n\r\n{}").unwrap();
    assert!(reply.starts_with("HTTP/1.1 401"), "{reply}");

    let status = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(status.success());
    let start = Instant::now();
    let exit = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(start.elapsed() < Duration::from_secs(10), "serve ignored SIGTERM");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(exit.success(), "{exit:?}");
    assert!(tmp.path().join("data").join("state.json").exists());

    // the log it left behind reopens cleanly
    let (_, warnings) = fieldlink_core::ctrlserver::ControlServer::open(
        Default::default(),
        fieldlink_core::SensorKind::ALL.to_vec(),
        &tmp.path().join("data"),
    )
    .unwrap();
    assert!(warnings.is_empty(), "{warnings:?}");
}

#[test]
fn second_serve_on_a_busy_port_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let holder = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = holder.local_addr().unwrap().port();
    let mut child = spawn_serve(tmp.path(), port);
    let start = Instant::now();
    let exit = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(start.elapsed() < Duration::from_secs(20), "serve kept running on a busy port");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(!exit.success());
    let mut err = String::new();
    child.stderr.take().unwrap().read_to_string(&mut err).unwrap();
    assert!(err.contains(&port.to_string()), "{err}");
    drop(holder);
}

#[test]
fn serve_without_credentials_refuses_to_start() {
    let out = bin().args(["serve", "--config", "table1_scenario", "--port", "0"]).env_remove("FIELDLINK_CREDENTIALS").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("credentials"));
}
