use namelt_core::chaincore::*;
use namelt_core::nameregistry::*;

/// A listing annotated with comments, as listings often are.
const ANNOTATED: &str = r#"{
    "ip"      : "192.0.2.44",    // IPv4 address
    "tor"     : "a2b3c4d5e6f7g2h3.onion",
    "email"   : "ops@example.org",
    "info"    : "Example Operator",
    "tls": {
        "tcp": {
            443: [[1, "5A1C9E07B3D24F68A0E1C7B95D3F2A8164E0B7C2", 1]]  // fingerprint
        }
    },
    "map":
    {
        "www" : { "ip": "192.0.2.44" },
    }
}"#;

fn strip_comments(text: &str) -> String {
    text.lines().map(|l| l.split("//").next().unwrap()).collect::<Vec<_>>().join("\n")
}

fn key(seed: u8) -> KeyPair {
    KeyPair::from_private_bytes(&[seed; 32]).unwrap()
}

fn funded_node(k: &KeyPair) -> Node {
    let mut node = Node::new(ChainConfig::default());
    for _ in 0..2 {
        node.mine_block(k.address(0x34), 10, u64::MAX).unwrap();
    }
    node
}

fn confirm(node: &mut Node, tx: Transaction) {
    node.submit_transaction(tx).unwrap();
    node.mine_block(key(99).address(0x34), 10, u64::MAX).unwrap();
}

fn mlt_record(eph: [u8; 32]) -> String {
    format!(
        r#"{{"ip":"10.0.0.1","info":"x","minimaLT":{{"port":4433,"id_key":"{}","eph_key":"{}"}},"future":[1,2]}}"#,
        hex::encode([0xaa; 32]),
        hex::encode(eph)
    )
}

#[test]
fn annotated_listing_parses_after_comment_strip() {
    let raw = strip_comments(ANNOTATED);
    let r = parse_record(raw.as_bytes()).unwrap();
    assert_eq!(r.ip.as_deref(), Some("192.0.2.44"));
    assert_eq!(r.tls.unwrap()["tcp"]["443"][0].1, "5A1C9E07B3D24F68A0E1C7B95D3F2A8164E0B7C2");
    assert!(parse_record(ANNOTATED.as_bytes()).is_err());
}

#[test]
fn register_and_resolve_listing() {
    let owner = key(1);
    let mut node = funded_node(&owner);
    let tx = register("d/example", strip_comments(ANNOTATED).as_bytes(), &owner, Amount::from_base_units(100), 1).unwrap();
    assert_eq!(tx.kind, TxKind::NameNew);
    assert!(verify_transaction_signature(&tx));
    assert_eq!(node.state().validate_transaction(&tx), Ok(()));
    confirm(&mut node, tx);

    let base = resolve(node.state(), "example.bit").unwrap();
    assert_eq!(base.record.ip.as_deref(), Some("192.0.2.44"));
    assert_eq!(base.owner, owner.public_key());
    let www = resolve(node.state(), "www.example.bit").unwrap();
    assert_eq!(www.record.ip.as_deref(), Some("192.0.2.44"));
    assert_eq!(www.record.tor.as_deref(), Some("a2b3c4d5e6f7g2h3.onion"));
    assert!(www.record.map.is_none());
    assert_eq!(resolve(node.state(), "missing.bit"), Err(ResolveError::NotFound));
    assert_eq!(resolve(node.state(), "ftp.example.bit"), Err(ResolveError::NotFound));
    assert!(matches!(resolve(node.state(), "example.com"), Err(ResolveError::BadFqdn(_))));
}

#[test]
fn overlay_shadows_base_fields() {
    let owner = key(1);
    let mut node = funded_node(&owner);
    let rec = br#"{"ip":"1.1.1.1","info":"base","map":{"www":{"ip":"2.2.2.2"}}}"#;
    confirm(&mut node, register("d/shadow", rec, &owner, Amount::ZERO, 1).unwrap());
    let www = resolve(node.state(), "www.shadow.bit").unwrap();
    assert_eq!(www.record.ip.as_deref(), Some("2.2.2.2"));
    assert_eq!(www.record.info.as_deref(), Some("base"));
}

#[test]
fn bad_names() {
    let k = key(1);
    assert!(matches!(register("example", b"{}", &k, Amount::ZERO, 1), Err(RegistryError::BadName(_))));
    assert!(matches!(register("d/ExampleName", b"{}", &k, Amount::ZERO, 1), Err(RegistryError::BadName(_))));
    assert!(matches!(update_eph_key("d/Nope", &[0; 32], &k, Amount::ZERO, 1), Err(RegistryError::BadName(_))));
}

#[test]
fn eph_key_update_merges_and_renews() {
    let owner = key(1);
    let mut node = funded_node(&owner);
    confirm(&mut node, register("d/site", mlt_record([1; 32]).as_bytes(), &owner, Amount::ZERO, 1).unwrap());
    let NameLookup::Found(before) = name_lookup(node.state(), "d/site") else { panic!() };
    let before = before.clone();

    let upd = update_eph_key("d/site", &[2; 32], &owner, Amount::ZERO, 2).unwrap();
    assert_eq!(upd.kind, TxKind::NameUpdate);
    assert_eq!(upd.value, format!(r#"{{"minimaLT":{{"eph_key":"{}"}}}}"#, hex::encode([2; 32])).into_bytes());
    confirm(&mut node, upd);
    let NameLookup::Found(after) = name_lookup(node.state(), "d/site") else { panic!() };
    assert!(after.last_update_height > before.last_update_height);
    assert_eq!(after.last_update_height, node.height());

    let mut expected = parse_record(&before.value).unwrap();
    expected.minimalt.as_mut().unwrap().eph_key = Key32([2; 32]);
    assert_eq!(parse_record(&after.value).unwrap(), expected);

    // last write wins
    confirm(&mut node, update_eph_key("d/site", &[3; 32], &owner, Amount::ZERO, 3).unwrap());
    let r = resolve(node.state(), "site.bit").unwrap();
    assert_eq!(r.record.minimalt.unwrap().eph_key, Key32([3; 32]));
    assert_eq!(r.record.extra["future"], serde_json::json!([1, 2]));

    let stranger = key(2);
    node.mine_block(stranger.address(0x34), 10, u64::MAX).unwrap();
    let forged = update_eph_key("d/site", &[4; 32], &stranger, Amount::ZERO, 1).unwrap();
    assert_eq!(node.state().validate_transaction(&forged), Err(ValidationError::NotOwner("d/site".into())));
}

#[test]
fn detached_update_verifies_against_chain_owner() {
    let owner = key(1);
    let mut node = funded_node(&owner);
    confirm(&mut node, register("d/site", mlt_record([1; 32]).as_bytes(), &owner, Amount::ZERO, 1).unwrap());
    let NameLookup::Found(entry) = name_lookup(node.state(), "d/site") else { panic!() };
    let msg = EphKeyUpdate::sign("d/site", [5; 32], &owner);
    assert!(msg.verify(&entry.owner_pubkey));
    assert!(!EphKeyUpdate::sign("d/site", [5; 32], &key(2)).verify(&entry.owner_pubkey));
    let merged = merge_value(&entry.value, &msg.update_value()).unwrap();
    let twice = merge_value(&merged, &msg.update_value()).unwrap();
    assert_eq!(merged, twice);
}

#[test]
fn full_replace_marker() {
    let owner = key(1);
    let mut node = funded_node(&owner);
    confirm(&mut node, register("d/site", mlt_record([1; 32]).as_bytes(), &owner, Amount::ZERO, 1).unwrap());
    let tx = sign_transaction(
        Transaction::name_update(owner.public_key(), "d/site", br#"{"_replace":true,"ip":"9.9.9.9"}"#.to_vec(), Amount::ZERO, 2),
        &owner,
    )
    .unwrap();
    confirm(&mut node, tx);
    let r = resolve(node.state(), "site.bit").unwrap();
    assert_eq!(r.raw, br#"{"ip":"9.9.9.9"}"#.to_vec());
}

#[test]
fn update_breaking_schema_rejected() {
    let owner = key(1);
    let mut node = funded_node(&owner);
    confirm(&mut node, register("d/site", mlt_record([1; 32]).as_bytes(), &owner, Amount::ZERO, 1).unwrap());
    let tx = sign_transaction(
        Transaction::name_update(owner.public_key(), "d/site", br#"{"minimaLT":{"port":0}}"#.to_vec(), Amount::ZERO, 2),
        &owner,
    )
    .unwrap();
    assert!(matches!(node.state().validate_transaction(&tx), Err(ValidationError::BadValue(_))));
}

#[test]
fn ownership_transfer_via_update() {
    let (owner, heir) = (key(1), key(2));
    let mut node = funded_node(&owner);
    confirm(&mut node, register("d/site", b"{}", &owner, Amount::ZERO, 1).unwrap());
    let mut tx = Transaction::name_update(owner.public_key(), "d/site", b"{}".to_vec(), Amount::ZERO, 2);
    tx.new_owner_pubkey = Some(heir.public_key());
    confirm(&mut node, sign_transaction(tx, &owner).unwrap());
    let NameLookup::Found(e) = name_lookup(node.state(), "d/site") else { panic!() };
    assert_eq!(e.owner_pubkey, heir.public_key());
    let stale = update_eph_key("d/site", &[1; 32], &owner, Amount::ZERO, 3).unwrap();
    assert_eq!(node.state().validate_transaction(&stale), Err(ValidationError::NotOwner("d/site".into())));
}
