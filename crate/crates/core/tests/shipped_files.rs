//! The catalog and machine files under docs/ stay in sync with the code.

use std::path::{Path, PathBuf};

use cachebench::catalog::{build_catalog, expand_catalog, CaseOptions, Catalog};
use cachebench::machine::MachineConfig;
use cachebench::Error;

fn docs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs")
}

#[test]
fn shipped_catalog_is_the_built_catalog() {
    let built = build_catalog(0).unwrap();
    let text = std::fs::read_to_string(docs().join("catalog.json")).unwrap();
    assert_eq!(text, built.catalog.to_json());
    let cat = Catalog::parse(&text, Path::new("catalog.json")).unwrap();
    assert_eq!(cat, built.catalog);
}

#[test]
fn catalog_build_is_byte_stable() {
    assert_eq!(build_catalog(0).unwrap().catalog.to_json(), build_catalog(0).unwrap().catalog.to_json());
}

#[test]
fn big_little_quadruples_the_cases() {
    let cat = build_catalog(0).unwrap().catalog;
    let single = expand_catalog(&cat, CaseOptions::default()).len();
    let bl = expand_catalog(&cat, CaseOptions { big_little: true, lock_prelude: false }).len();
    assert_eq!((single, bl), (1094, 4 * 1094));
}

#[test]
fn shipped_machines_parse() {
    let d = MachineConfig::default();
    for (file, want) in [
        ("default.json", d.clone()),
        ("pl.json", d.with_pl()),
        ("rf-5.json", d.with_rf(0, 5)),
        ("rf-128.json", d.with_rf(0, 128)),
    ] {
        let got = MachineConfig::from_json_file(&docs().join("machines").join(file)).unwrap();
        assert_eq!(got, want, "{file}");
    }
}

#[test]
fn schema_violations_report_a_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(docs().join("machines/default.json")).unwrap();
    let typo = text.replacen("\"mshr_size\"", "\"mshr_sise\"", 1);
    let path = dir.path().join("m.json");
    std::fs::write(&path, typo).unwrap();
    match MachineConfig::from_json_file(&path) {
        Err(Error::Schema { line, msg, .. }) => {
            assert!(line > 1, "{msg}");
            assert!(msg.contains("mshr_sise"), "{msg}");
        }
        other => panic!("expected a schema error, got {other:?}"),
    }

    let cat = std::fs::read_to_string(docs().join("catalog.json")).unwrap();
    let bad = cat.replacen("\"type\": \"AO\"", "\"type\": \"XO\"", 1);
    let path = dir.path().join("c.json");
    std::fs::write(&path, bad).unwrap();
    assert!(matches!(Catalog::read(&path), Err(Error::Schema { line, .. }) if line > 1));

    let invalid = text.replacen("\"local_core\": 0", "\"local_core\": 9", 1);
    let path = dir.path().join("bad-core.json");
    std::fs::write(&path, invalid).unwrap();
    assert!(matches!(MachineConfig::from_json_file(&path), Err(Error::Config(_))));
}
