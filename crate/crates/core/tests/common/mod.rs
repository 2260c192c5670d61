#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use candle_core::DType;
use corgi_core::backbone::tiny::{build_tiny_snapshot, default_corpus, TinyConfig};
use corgi_core::backbone::{load_backbone, BackboneKind, SharedLm};

/// Builds the default tiny snapshot once per target directory and returns its path.
pub fn tiny_snapshot() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("tiny-snapshot-v1");
        if !dir.join("manifest.json").exists() {
            let staging = tempfile::tempdir_in(env!("CARGO_TARGET_TMPDIR")).unwrap();
            build_tiny_snapshot(staging.path(), &default_corpus(), &TinyConfig::default()).unwrap();
            let staged = staging.keep();
            if std::fs::rename(&staged, &dir).is_err() {
                // another test binary won the race
                std::fs::remove_dir_all(&staged).ok();
            }
        }
        dir
    })
}

pub fn tiny_lm(kind: BackboneKind, dtype: DType) -> SharedLm {
    load_backbone(tiny_snapshot(), kind, 0, dtype).unwrap()
}
