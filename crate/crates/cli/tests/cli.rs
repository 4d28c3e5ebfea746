use std::fs;
use std::io::{BufRead, BufReader};
use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use namelt_core::netsim::{run_script, SimConfig};
use serde_json::{json, Value};

struct Daemon(Child);

impl Drop for Daemon {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn cmd(dir: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_namelt"));
    c.current_dir(dir).env("NAMELT_CONFIG", dir.join("namelt.toml"));
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    cmd(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Config with a funded wallet.
fn wallet() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("namelt.toml"), "chain = \"chain.json\"\nkey = \"wallet.key\"\n").unwrap();
    ok(tmp.path(), &["keygen", "--out", "wallet.key"]);
    ok(tmp.path(), &["mine", "--blocks", "2"]);
    tmp
}

fn spawn(dir: &Path, args: &[&str]) -> (Daemon, Vec<String>) {
    let mut child = cmd(dir).args(args).stdout(Stdio::piped()).spawn().unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    (Daemon(child), line.split_whitespace().map(str::to_string).collect())
}

const LISTING: &str = r#"{"ip":"192.0.2.44","tor":"a2b3c4d5e6f7g2h3.onion","email":"ops@example.org","info":"Example Operator","map":{"www":{"ip":"192.0.2.44"}}}"#;

#[test]
fn register_mine_resolve_round_trip() {
    let w = wallet();
    let dir = w.path();
    fs::write(dir.join("record.json"), LISTING).unwrap();
    let queued = ok(dir, &["register", "d/example", "record.json"]);
    assert!(queued.starts_with("queued registration "));
    assert!(ok(dir, &["mine", "--blocks", "1"]).contains("(1 txs)"));
    assert_eq!(ok(dir, &["resolve", "example.bit", "--local"]).trim(), LISTING);
    let j: Value = serde_json::from_str(&ok(dir, &["--json", "resolve", "www.example.bit", "--local"])).unwrap();
    assert_eq!(j["record"]["ip"], "192.0.2.44");
    assert_eq!(j["height"], 3);
}

#[test]
fn missing_name_exits_not_found_with_empty_stdout() {
    let w = wallet();
    let out = run(w.path(), &["resolve", "missing.bit", "--local"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(out.stdout.is_empty());
    assert!(!out.stderr.is_empty());
}

#[test]
fn world_readable_key_is_refused() {
    let w = wallet();
    let key = w.path().join("wallet.key");
    fs::set_permissions(&key, fs::Permissions::from_mode(0o644)).unwrap();
    let out = run(w.path(), &["mine"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("world-readable"));
    fs::set_permissions(&key, fs::Permissions::from_mode(0o600)).unwrap();
    ok(w.path(), &["mine"]);
}

#[test]
fn keygen_does_not_clobber() {
    let w = wallet();
    let before = fs::read(w.path().join("wallet.key")).unwrap();
    assert!(!run(w.path(), &["keygen", "--out", "wallet.key"]).status.success());
    assert_eq!(fs::read(w.path().join("wallet.key")).unwrap(), before);
    ok(w.path(), &["keygen", "--out", "wallet.key", "--force"]);
    assert_ne!(fs::read(w.path().join("wallet.key")).unwrap(), before);
}

#[test]
fn usage_and_validation_errors() {
    let w = wallet();
    assert_eq!(run(w.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(w.path(), &["resolve"]).status.code(), Some(2));
    // no resolver endpoint configured
    assert_eq!(run(w.path(), &["resolve", "x.bit"]).status.code(), Some(2));
    fs::write(w.path().join("r.json"), "{}").unwrap();
    assert_eq!(run(w.path(), &["register", "d/Bad_Name", "r.json"]).status.code(), Some(5));
    let out = run(w.path(), &["send", "--to", "N6NzAxvyt5q4pbfBjNvi3Tig2v1k2SnjtM", "--amount", "1000"]);
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn update_eph_replaces_the_published_key() {
    let w = wallet();
    let dir = w.path();
    let eph = |name: &str| -> String {
        let j: Value = serde_json::from_str(&ok(dir, &["--json", "keygen", "--kind", "x25519", "--out", name])).unwrap();
        j["public"].as_str().unwrap().to_string()
    };
    let (k1, k2) = (eph("e1.key"), eph("e2.key"));
    let rec = json!({"ip": "10.0.0.5", "minimaLT": {"port": 4433, "id_key": k1, "eph_key": k1}});
    fs::write(dir.join("rec.json"), rec.to_string()).unwrap();
    ok(dir, &["register", "d/site", "rec.json"]);
    ok(dir, &["mine"]);
    ok(dir, &["update-eph", "d/site", "--eph-key", "e2.key"]);
    ok(dir, &["mine"]);
    let j: Value = serde_json::from_str(&ok(dir, &["--json", "resolve", "site.bit", "--local"])).unwrap();
    assert_eq!(j["record"]["minimaLT"]["eph_key"], k2);
    assert_eq!(j["record"]["minimaLT"]["id_key"], k1);
}

fn handshake_script() -> Value {
    json!([
        {"time": 0, "host": "srv", "action": "define", "args": {"role": "server", "addr": "10.0.0.2:4000", "docs": {"/": "hi"}}},
        {"time": 0, "host": "cli", "action": "define", "args": {"role": "client", "addr": "10.0.0.1:5000"}},
        {"time": 0, "host": "cli", "action": "fetch", "args": {"server": "srv", "path": "/"}}
    ])
}

#[test]
fn sim_bench_prints_the_rtt_table() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("namelt.toml"), "").unwrap();
    fs::write(tmp.path().join("handshake.json"), handshake_script().to_string()).unwrap();
    let table = ok(tmp.path(), &["sim-bench", "handshake.json", "--trace", "t.jsonl"]);
    let rows: Vec<(String, String)> = table
        .lines()
        .skip(1)
        .map(|l| {
            let (label, value) = l.trim_end().rsplit_once(' ').unwrap();
            (label.trim().to_string(), value.to_string())
        })
        .collect();
    assert_eq!(rows[0], ("minimalt cli->srv /".to_string(), "1.0".to_string()));
    assert!(rows.contains(&("tcp (model)".to_string(), "1.5".to_string())));
    assert!(rows.contains(&("tcp_tls12 (model)".to_string(), "3.5".to_string())));

    let direct = run_script(SimConfig { latency_ms: 50, ..SimConfig::default() }, &serde_json::from_value::<Vec<_>>(handshake_script()).unwrap()).unwrap();
    assert_eq!(fs::read_to_string(tmp.path().join("t.jsonl")).unwrap(), direct.events_jsonl());
    let j: Value = serde_json::from_str(&ok(tmp.path(), &["--json", "sim-bench", "handshake.json"])).unwrap();
    assert_eq!(j["minimalt"][0]["rtt_to_first_byte"], direct.flows[0].rtt_to_first_byte.unwrap());
    assert_eq!(j["baselines"]["tcp_tls12"], 3.5);
}

#[test]
fn fetch_over_real_udp_through_the_resolver() {
    let w = wallet();
    let dir = w.path();
    fs::create_dir(dir.join("docs")).unwrap();
    fs::write(dir.join("docs/index.html"), "front page\n").unwrap();
    fs::write(dir.join("docs/about.txt"), "about\n").unwrap();
    ok(dir, &["keygen", "--kind", "x25519", "--out", "eph.key"]);
    let (_srv, banner) = spawn(dir, &["mlt-serve", "--listen", "127.0.0.1:0", "--eph-key", "eph.key", "--docs", "docs"]);
    assert_eq!(banner[0], "listening");
    let port: u16 = banner[1].rsplit_once(':').unwrap().1.parse().unwrap();
    let eph = &banner[3];
    let rec = json!({"ip": "127.0.0.1", "minimaLT": {"port": port, "id_key": eph, "eph_key": eph}});
    fs::write(dir.join("rec.json"), rec.to_string()).unwrap();
    ok(dir, &["register", "d/local", "rec.json"]);
    ok(dir, &["mine"]);

    ok(dir, &["keygen", "--out", "resolver.key"]);
    let (_rd, rb) = spawn(dir, &["--key", "resolver.key", "resolverd", "--listen", "127.0.0.1:0"]);
    let via = ["--resolver", rb[1].as_str(), "--resolver-key", rb[3].as_str(), "--fingerprint", rb[5].as_str()];
    let fetch = |path: &str| run(dir, &[&via[..], &["mlt-fetch", "local.bit", path, "--trace", "udp.jsonl"]].concat());

    let out = fetch("/");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(out.stdout, b"front page\n");
    let trace = fs::read_to_string(dir.join("udp.jsonl")).unwrap();
    let first: Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    assert_eq!(first["dir"], "out");
    assert_eq!(first["type"], "INIT");
    assert_eq!(first["payload"], "GET /\n".len());
    assert_eq!(fetch("/about.txt").stdout, b"about\n");
    let missing = fetch("/nope");
    assert_eq!(missing.status.code(), Some(3));
    assert!(missing.stdout.is_empty());

    let mut wrong_pin = via.map(str::to_string);
    wrong_pin[5] = format!("00{}", &rb[5][2..]);
    let wrong_pin: Vec<&str> = wrong_pin.iter().map(String::as_str).collect();
    let out = run(dir, &[&wrong_pin[..], &["mlt-fetch", "local.bit", "/"]].concat());
    assert_eq!(out.status.code(), Some(7));
}
