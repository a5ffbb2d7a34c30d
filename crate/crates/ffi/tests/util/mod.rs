//! Helpers shared by the integration tests: locating the compiled shared
//! library so it can be loaded (or linked) like a third-party artifact.

use std::path::PathBuf;

/// Path of this crate's compiled cdylib.
///
/// Test binaries land in `target/<profile>/deps`, the shared library either
/// directly under `target/<profile>/` or (hash-suffixed) next to the tests;
/// prefer the unsuffixed copy and fall back to the newest hashed one.
pub fn built_cdylib() -> PathBuf {
    let exe = std::env::current_exe().expect("test binary path");
    let profile_dir = exe
        .ancestors()
        .find(|p| {
            p.join("deps").is_dir()
                && p.file_name().map_or(false, |n| n != "deps")
        })
        .expect("profile dir above test binary")
        .to_path_buf();

    let direct = profile_dir.join("libtextlens_ffi.so");
    if direct.exists() {
        return direct;
    }

    let mut best: Option<(std::time::SystemTime, PathBuf)> = None;
    for entry in std::fs::read_dir(profile_dir.join("deps")).expect("read deps dir") {
        let path = entry.expect("dir entry").path();
        let name = match path.file_name() {
            Some(n) => n.to_string_lossy().into_owned(),
            None => continue,
        };
        if name.starts_with("libtextlens_ffi") && name.ends_with(".so") {
            let t = path
                .metadata()
                .and_then(|m| m.modified())
                .unwrap_or(std::time::SystemTime::UNIX_EPOCH);
            if best.as_ref().map_or(true, |(bt, _)| t > *bt) {
                best = Some((t, path));
            }
        }
    }
    best.expect("libtextlens_ffi.so was not built").1
}

/// Copy the cdylib into `dir` under its canonical `lib<name>.so` file name,
/// so name-based lookup and `-l` linking can find it.
pub fn stage_cdylib(dir: &std::path::Path) -> PathBuf {
    let staged = dir.join("libtextlens_ffi.so");
    std::fs::copy(built_cdylib(), &staged).expect("stage cdylib");
    staged
}
