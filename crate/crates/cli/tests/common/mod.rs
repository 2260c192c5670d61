#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use corgi_core::backbone::tiny::{build_tiny_snapshot, default_corpus, TinyConfig};

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the command line in-process.
pub fn corgi<S: AsRef<str>>(args: &[S]) -> Run {
    let argv = std::iter::once("corgi").chain(args.iter().map(AsRef::as_ref)).map(String::from);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = corgi_cli::main_with(argv, &mut out, &mut err);
    Run { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

pub fn ok<S: AsRef<str>>(args: &[S]) -> String {
    let r = corgi(args);
    assert_eq!(r.code, 0, "corgi {:?} failed: {}", args.iter().map(AsRef::as_ref).collect::<Vec<_>>(), r.stderr);
    r.stdout
}

pub fn path(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

/// The default tiny snapshot, shared with the other crates' tests through the target dir.
pub fn tiny_snapshot() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("tiny-snapshot-v1");
        if !dir.join("manifest.json").exists() {
            let staging = tempfile::tempdir_in(env!("CARGO_TARGET_TMPDIR")).unwrap();
            build_tiny_snapshot(staging.path(), &default_corpus(), &TinyConfig::default()).unwrap();
            let staged = staging.keep();
            if std::fs::rename(&staged, &dir).is_err() {
                std::fs::remove_dir_all(&staged).ok();
            }
        }
        dir
    })
}
