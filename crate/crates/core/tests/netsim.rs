use namelt_core::netsim::*;
use proptest::prelude::*;
use serde_json::json;

fn handshake_script(load: bool) -> Vec<Action> {
    let v = json!([
        {"time": 0, "host": "srv", "action": "define", "args": {"role": "server", "addr": "10.0.0.2:4000", "docs": {"/": "hello"}, "load": load}},
        {"time": 0, "host": "cli", "action": "define", "args": {"role": "client", "addr": "10.0.0.1:5000"}},
        {"time": 10, "host": "cli", "action": "fetch", "args": {"server": "srv", "path": "/"}}
    ]);
    serde_json::from_value(v).unwrap()
}

fn cfg(latency_ms: u64) -> SimConfig {
    SimConfig { latency_ms, ..SimConfig::default() }
}

#[test]
fn first_byte_after_one_round_trip() {
    for latency in [1, 7, 50, 333] {
        let t = run_script(cfg(latency), &handshake_script(false)).unwrap();
        assert_eq!(t.flows.len(), 1);
        assert_eq!(t.flows[0].status, "ok");
        assert_eq!(t.flows[0].rtt_to_first_byte, Some(1.0));
    }
}

#[test]
fn puzzle_costs_one_extra_round_trip() {
    for latency in [3, 50] {
        let t = run_script(cfg(latency), &handshake_script(true)).unwrap();
        assert_eq!(t.flows[0].rtt_to_first_byte, Some(2.0));
        assert_eq!(t.flows[0].status, "ok");
    }
}

#[test]
fn request_precedes_any_other_client_datagram() {
    let t = run_script(cfg(20), &handshake_script(false)).unwrap();
    let first = t.events.iter().find(|e| e.ev == "send" && e.host == "cli").unwrap();
    assert_eq!(first.ptype, Some("INIT"));
    assert_eq!(first.conn, Some(1));
    assert_eq!(first.payload, Some("GET /\n".len()));
}

#[test]
fn baselines_by_leg_count() {
    // each leg is one one-way trip
    assert_eq!(legs(Baseline::Tcp).len(), 3);
    assert_eq!(legs(Baseline::TcpTls12).len(), 7);
    let t = run_script(cfg(10), &handshake_script(false)).unwrap();
    assert_eq!(t.baselines["tcp"], 1.5);
    assert_eq!(t.baselines["tcp_tls12"], 3.5);
    assert_eq!(t.baselines["tcp_tls_4rtt"], 5.5);
    assert!(t.flows[0].rtt_to_first_byte.unwrap() < t.baselines["tcp"]);
}

#[test]
fn missing_document_reports_notfound() {
    let mut s = handshake_script(false);
    s[2].args["path"] = json!("/nope");
    let t = run_script(cfg(5), &s).unwrap();
    assert_eq!(t.flows[0].status, "notfound");
}

#[test]
fn script_errors() {
    let mut s = handshake_script(false);
    s[2].args["server"] = json!("ghost");
    assert!(matches!(run_script(cfg(5), &s), Err(ScriptError::UnknownHost { .. })));
    let mut s = handshake_script(false);
    s[1].host = "srv".into();
    assert!(matches!(run_script(cfg(5), &s), Err(ScriptError::DuplicateHost { .. })));
    let mut s = handshake_script(false);
    s[2].action = "teleport".into();
    assert!(matches!(run_script(cfg(5), &s), Err(ScriptError::UnknownAction { .. })));
    let mut s = handshake_script(false);
    s[2].host = "srv".into();
    assert!(matches!(run_script(cfg(5), &s), Err(ScriptError::BadArgs { .. })));
    assert!(matches!(parse_script("{", SimConfig::default()), Err(ScriptError::Parse(_))));
}

#[test]
fn embedded_config_overrides_the_base() {
    let text = json!({"config": {"seed": 4, "latency_ms": 25}, "actions": handshake_script(false)}).to_string();
    let (c, actions) = parse_script(&text, SimConfig::default()).unwrap();
    assert_eq!(c.latency_ms, 25);
    assert_eq!(c.seed, 4);
    assert_eq!(actions.len(), 3);
    let (c, _) = parse_script(&serde_json::to_string(&handshake_script(false)).unwrap(), cfg(9)).unwrap();
    assert_eq!(c.latency_ms, 9);
}

fn transfer_script() -> Vec<Action> {
    serde_json::from_value(json!([
        {"time": 0, "host": "srv", "action": "define", "args": {"role": "server", "addr": "10.0.0.2:4000", "sink": true}},
        {"time": 0, "host": "cli", "action": "define", "args": {"role": "client", "addr": "10.0.0.1:5000", "rekey_bytes": 16384}},
        {"time": 0, "host": "cli", "action": "send", "args": {"server": "srv", "bytes": 60000, "conns": 2}},
        {"time": 40, "host": "cli", "action": "change_address", "args": {"addr": "10.0.0.9:5000"}}
    ]))
    .unwrap()
}

fn lossy(seed: u64) -> SimConfig {
    SimConfig { seed, latency_ms: 4, loss: 0.05, reorder: 0.1, bandwidth: Some(1000) }
}

#[test]
fn same_seed_same_trace() {
    let a = run_script(lossy(17), &transfer_script()).unwrap();
    let b = run_script(lossy(17), &transfer_script()).unwrap();
    assert_eq!(a.events_jsonl(), b.events_jsonl());
    let c = run_script(lossy(18), &transfer_script()).unwrap();
    assert_ne!(a.events_jsonl(), c.events_jsonl());
}

#[test]
fn bandwidth_cap_serializes_departures() {
    let t = run_script(SimConfig { bandwidth: Some(100), ..cfg(10) }, &handshake_script(false)).unwrap();
    // ~84-byte INIT at 100 B/ms departs 1 ms late each way
    assert!(t.flows[0].rtt_to_first_byte.unwrap() > 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn conservation_and_delivery(seed in any::<u64>()) {
        let t = run_script(lossy(seed), &transfer_script()).unwrap();
        prop_assert_eq!(t.net.sent, t.net.delivered + t.net.lost + t.net.in_flight);
        let sends = t.events.iter().filter(|e| e.ev == "send").count() as u64;
        let delivers = t.events.iter().filter(|e| e.ev == "deliver").count() as u64;
        prop_assert_eq!(sends, t.net.sent);
        prop_assert_eq!(delivers, t.net.delivered);
    }
}

#[test]
fn scripted_transfer_arrives_intact() {
    let mut sim = Sim::new(lossy(3));
    let srv = sim.add_server("srv", "10.0.0.2:4000".parse().unwrap(), Default::default(), Default::default());
    sim.server(srv).sink = true;
    let cli = sim.add_client("cli", "10.0.0.1:5000".parse().unwrap(), Default::default());
    send_streams(&mut sim, cli, srv, 2, 60_000).unwrap();
    assert!(sim.run_while(600_000, |s| s.client_ref(cli).streams_done()));
    let rx = &sim.server_ref(srv).received;
    assert_eq!(rx.len(), 2);
    for ((_, conn), data) in rx {
        assert_eq!(data, &pattern(*conn, 60_000));
    }
}
