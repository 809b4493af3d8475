mod common;

use auxmix::scenarios::{blob_path, load_scenario, save_scenario};
use auxmix::Error;

#[test]
fn round_trip_preserves_content_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    let sc = common::scenario(3);
    save_scenario(&sc, &path).unwrap();
    let back = load_scenario(&path).unwrap();
    assert_eq!(back, sc);
    assert_eq!(back.content_hash(), sc.content_hash());
    assert_eq!(back.origins(), sc.origins());
}

#[test]
fn manifest_is_human_readable_json_with_ids() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    let sc = common::scenario(3);
    save_scenario(&sc, &path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(v.get("version").is_some());
    let text = v.to_string();
    for id in sc.labeled_ids().into_iter().chain(sc.auxiliary_ids()) {
        assert!(text.contains(id), "manifest lacks {id}");
    }
}

#[test]
fn tampered_blob_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    save_scenario(&common::scenario(3), &path).unwrap();
    let blob = blob_path(&path);
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes[10] ^= 0x40;
    std::fs::write(&blob, bytes).unwrap();
    assert!(matches!(load_scenario(&path), Err(Error::CorruptManifest { .. })));
}

#[test]
fn unknown_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    save_scenario(&common::scenario(3), &path).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    v["version"] = serde_json::json!(99);
    std::fs::write(&path, v.to_string()).unwrap();
    assert!(matches!(load_scenario(&path), Err(Error::VersionMismatch { .. })));
}
