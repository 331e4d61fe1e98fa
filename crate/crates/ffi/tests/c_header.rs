use std::path::{Path, PathBuf};
use std::process::Command;

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

// target/<profile>/deps/<test-binary> -> target/<profile>
fn profile_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

fn have_cc() -> bool {
    Command::new("cc").arg("--version").output().is_ok()
}

#[test]
fn header_compiles_as_c_and_cpp() {
    if !have_cc() {
        eprintln!("no C compiler, skipping");
        return;
    }
    let header = manifest().join("include/dpclust.h");
    assert!(header.exists());
    for lang in ["c", "c++"] {
        let st = Command::new("cc")
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&header)
            .status()
            .unwrap();
        assert!(st.success(), "{lang}");
    }
}

#[test]
fn c_client_links_against_static_library() {
    let lib = profile_dir().join("libdpclust_ffi.a");
    if !have_cc() || !lib.exists() {
        eprintln!("static library or compiler unavailable, skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("c_client");
    let st = Command::new("cc")
        .arg(manifest().join("tests/c_client.c"))
        .arg("-I")
        .arg(manifest().join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(st.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok"));
}
