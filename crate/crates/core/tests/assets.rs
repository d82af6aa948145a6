//! The files shipped under machines/ and fixtures/ must parse back to the
//! built-in defaults, or `--machine`/`--lc-fixture` would silently change
//! results.

use std::path::PathBuf;

use tristencil::ecm::{LcFixture, MachineModel};

fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

#[test]
fn machine_file_matches_builtin() {
    let parsed = MachineModel::from_file(repo_path("machines/skx_8174.machine")).unwrap();
    let builtin = MachineModel::skx_8174();
    assert_eq!(format!("{parsed:?}"), format!("{builtin:?}"));
}

#[test]
fn lc_fixture_file_matches_builtin() {
    let parsed = LcFixture::from_file(repo_path("fixtures/skx_8174_lc.txt")).unwrap();
    let builtin = LcFixture::reference();
    assert_eq!(format!("{parsed:?}"), format!("{builtin:?}"));
}
