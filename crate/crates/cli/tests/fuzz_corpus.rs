//! Feeds the checked-in fuzz corpus through every decoder.

use std::fs;
use std::path::Path;

use dype_cli::config::RunConfig;
use dype_cli::manifest::RunManifest;
use dype_core::dataggen::DatasetManifest;
use dype_core::pgm::GrayImage;
use dype_core::tinydit::Checkpoint;
use dype_core::PolicyKind;

fn corpus(target: &str) -> Vec<Vec<u8>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| fs::read(e.unwrap().path()).unwrap())
        .collect();
    assert!(!out.is_empty(), "empty corpus for {target}");
    out.sort();
    out
}

#[test]
fn checkpoints() {
    let decoded = corpus("checkpoint")
        .iter()
        .filter(|b| Checkpoint::decode(b).is_ok())
        .count();
    assert!(decoded >= 1);
}

#[test]
fn pgm_images() {
    for b in corpus("pgm") {
        if let Ok(img) = GrayImage::decode(&b) {
            assert_eq!(GrayImage::decode(&img.encode()).unwrap(), img);
        }
    }
}

#[test]
fn configs() {
    let parsed = corpus("config")
        .iter()
        .filter(|b| RunConfig::from_toml(std::str::from_utf8(b).unwrap()).is_ok())
        .count();
    assert_eq!(parsed, 3);
}

#[test]
fn manifests() {
    assert!(corpus("dataset_manifest")
        .iter()
        .all(|b| DatasetManifest::parse(b).is_ok()));
    assert!(corpus("run_manifest").iter().all(|b| RunManifest::parse(b).is_ok()));
}

#[test]
fn policy_names() {
    let valid = corpus("policy_name")
        .iter()
        .filter(|b| std::str::from_utf8(b).unwrap().parse::<PolicyKind>().is_ok())
        .count();
    assert_eq!(valid, 9);
}
