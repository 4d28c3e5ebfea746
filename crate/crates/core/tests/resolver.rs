use std::net::UdpSocket;
use std::sync::Arc;
use std::time::Duration;

use namelt_core::chaincore::*;
use namelt_core::nameregistry::register;
use namelt_core::resolver::*;

fn key(seed: u8) -> KeyPair {
    KeyPair::from_private_bytes(&[seed; 32]).unwrap()
}

const LISTING: &[u8] = br#"{"ip":"192.0.2.44","tls":{"tcp":{"443":[[1,"5A1C9E07B3D24F68A0E1C7B95D3F2A8164E0B7C2",1]]}},"map":{"www":{"ip":"192.0.2.44"}}}"#;

fn chain() -> Node {
    let owner = key(1);
    let mut node = Node::new(ChainConfig::default());
    for _ in 0..2 {
        node.mine_block(owner.address(0x34), 10, u64::MAX).unwrap();
    }
    node.submit_transaction(register("d/example", LISTING, &owner, Amount::ZERO, 1).unwrap()).unwrap();
    node.mine_block(owner.address(0x34), 10, u64::MAX).unwrap();
    node
}

fn client_for(handle: &ResolverHandle, k: &KeyPair) -> ClientConfig {
    ClientConfig {
        server: handle.local_addr(),
        server_key: k.public_key(),
        pinned_fingerprint: k.public_key().fingerprint(),
    }
}

fn start(k: &KeyPair, source: ChainSource) -> ResolverHandle {
    serve(ResolverConfig { listen: "127.0.0.1:0".parse().unwrap(), key: k.clone(), source }).unwrap()
}

#[test]
fn resolves_over_udp() {
    let rk = key(7);
    let handle = start(&rk, ChainSource::Fixed(Arc::new(chain().state().clone())));
    let cfg = client_for(&handle, &rk);
    let a = client_resolve(&cfg, "example.bit", Duration::from_millis(500)).unwrap();
    assert_eq!(a.record.ip.as_deref(), Some("192.0.2.44"));
    assert_eq!(a.height, 3);
    let www = client_resolve(&cfg, "www.example.bit", Duration::from_millis(500)).unwrap();
    assert_eq!(www.record.ip.as_deref(), Some("192.0.2.44"));
    assert!(matches!(client_resolve(&cfg, "missing.bit", Duration::from_millis(500)), Err(ClientError::NotFound)));
    assert!(matches!(client_resolve(&cfg, "bad.com", Duration::from_millis(500)), Err(ClientError::Server(_))));
}

#[test]
fn pin_mismatch_fails_before_sending() {
    let rk = key(7);
    let handle = start(&rk, ChainSource::Fixed(Arc::new(chain().state().clone())));
    let mut cfg = client_for(&handle, &rk);
    cfg.pinned_fingerprint[0] ^= 1;
    assert!(matches!(client_resolve(&cfg, "example.bit", Duration::from_millis(200)), Err(ClientError::FingerprintMismatch)));
    let impostor = ClientConfig { server_key: key(8).public_key(), ..client_for(&handle, &rk) };
    assert!(matches!(client_resolve(&impostor, "example.bit", Duration::from_millis(200)), Err(ClientError::FingerprintMismatch)));
}

#[test]
fn response_from_other_key_is_bad_signature() {
    let (rk, other) = (key(7), key(8));
    let handle = start(&other, ChainSource::Fixed(Arc::new(chain().state().clone())));
    let cfg = client_for(&handle, &rk);
    assert!(matches!(client_resolve(&cfg, "example.bit", Duration::from_millis(500)), Err(ClientError::BadSignature)));
}

#[test]
fn malformed_datagrams_get_no_answer() {
    let rk = key(7);
    let handle = start(&rk, ChainSource::Fixed(Arc::new(chain().state().clone())));
    let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
    sock.set_read_timeout(Some(Duration::from_millis(150))).unwrap();
    let mut q = Query { qid: 1, fqdn: "example.bit".into() }.encode();
    q[0] = b'X';
    sock.send_to(&q, handle.local_addr()).unwrap();
    sock.send_to(b"", handle.local_addr()).unwrap();
    let mut buf = [0u8; 2048];
    assert!(sock.recv_from(&mut buf).is_err());
    let good = Query { qid: 1, fqdn: "missing.bit".into() }.encode();
    sock.send_to(&good, handle.local_addr()).unwrap();
    let (n, _) = sock.recv_from(&mut buf).unwrap();
    let r = verify_response(&rk.public_key(), 1, &buf[..n]).unwrap();
    assert_eq!(r.status, Status::NotFound);
}

#[test]
fn timeout_after_retries() {
    let silent = UdpSocket::bind("127.0.0.1:0").unwrap();
    let rk = key(7);
    let cfg = ClientConfig {
        server: silent.local_addr().unwrap(),
        server_key: rk.public_key(),
        pinned_fingerprint: rk.public_key().fingerprint(),
    };
    assert!(matches!(client_resolve(&cfg, "x.bit", Duration::from_millis(30)), Err(ClientError::Timeout(4))));
    let mut buf = [0u8; 512];
    silent.set_read_timeout(Some(Duration::from_millis(10))).unwrap();
    let mut seen = 0;
    while silent.recv_from(&mut buf).is_ok() {
        seen += 1;
    }
    assert_eq!(seen, 1 + MAX_RETRIES);
}

#[test]
fn file_source_follows_chain_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.jsonl");
    let mut node = Node::new(ChainConfig::default());
    save_chain(&node, &path).unwrap();
    let rk = key(7);
    let handle = start(&rk, ChainSource::file(&path, ChainConfig::default()));
    let cfg = client_for(&handle, &rk);
    assert!(matches!(client_resolve(&cfg, "example.bit", Duration::from_millis(500)), Err(ClientError::NotFound)));
    node = chain();
    save_chain(&node, &path).unwrap();
    let a = client_resolve(&cfg, "example.bit", Duration::from_millis(500)).unwrap();
    assert_eq!(a.height, 3);
}

#[test]
fn service_source_sees_new_blocks() {
    let (svc, _thread) = ChainService::spawn(Node::new(ChainConfig::default()));
    let rk = key(7);
    let handle = start(&rk, ChainSource::Service(svc.clone()));
    let cfg = client_for(&handle, &rk);
    assert_eq!(client_resolve(&cfg, "example.bit", Duration::from_millis(500)).unwrap_err().to_string(), "name not found");
    let owner = key(1);
    for _ in 0..2 {
        svc.with({
            let a = owner.address(0x34);
            move |n| n.mine_block(a, 10, u64::MAX).unwrap()
        });
    }
    svc.submit_transaction(register("d/example", LISTING, &owner, Amount::ZERO, 1).unwrap()).unwrap();
    let b = mine(svc.block_template(owner.address(0x34), 10), u64::MAX).unwrap();
    svc.submit_block(b).unwrap();
    let got = client_resolve(&cfg, "example.bit", Duration::from_millis(500));
    assert!(got.is_ok(), "{got:?} at height {}", svc.snapshot().height);
}
