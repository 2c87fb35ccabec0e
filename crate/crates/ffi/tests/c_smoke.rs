use std::path::{Path, PathBuf};
use std::process::Command;

/// `target/<profile>`, found from the test binary in `target/<profile>/deps`.
fn profile_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_shared_library() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let lib_dir = profile_dir();
    if !lib_dir.join("libpkgee_ffi.so").exists() {
        eprintln!("shared library not built in {}; skipping", lib_dir.display());
        return;
    }
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let out_dir = tempfile::tempdir().unwrap();
    let exe = out_dir.path().join("smoke");
    let status = Command::new(&cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lpkgee_ffi")
        .arg("-lm")
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let output = Command::new(&exe).env("LD_LIBRARY_PATH", &lib_dir).output().unwrap();
    assert!(output.status.success(), "smoke program exited with {:?}", output.status.code());

    let printed: f64 = String::from_utf8(output.stdout).unwrap().trim().parse().unwrap();
    let mut want = 0.0;
    let status = unsafe {
        pkgee_ffi::pkgee_concentration(3.72, 1.38, -1.89, -0.35, 1400.0, 0.5, 1.0, &mut want)
    };
    assert_eq!(status, pkgee_ffi::PkgeeStatus::Ok);
    assert_eq!(printed, want);
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc.to_owned());
        }
    }
    Err(())
}
