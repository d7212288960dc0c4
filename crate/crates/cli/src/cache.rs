//! On-disk cache of PCL reports, keyed by a hash of everything that
//! determines the report. Enabled by `WHITTLE_CACHE_DIR`.

use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};
use whittle_core::config::ModelSpec;
use whittle_core::pcl::{PCLReport, PclGrids, PclTolerances};

pub const CACHE_ENV: &str = "WHITTLE_CACHE_DIR";

#[derive(Serialize)]
struct Key<'a> {
    schema: &'a str,
    model: &'a ModelSpec,
    grids: &'a PclGrids,
    tolerances: &'a PclTolerances,
}

pub struct ReportCache {
    dir: Option<PathBuf>,
}

impl ReportCache {
    pub fn from_env() -> Self {
        let dir = std::env::var_os(CACHE_ENV)
            .filter(|d| !d.is_empty())
            .map(PathBuf::from);
        Self { dir }
    }

    fn path(&self, model: &ModelSpec, grids: &PclGrids, tols: &PclTolerances) -> Option<PathBuf> {
        let dir = self.dir.as_ref()?;
        let key = Key {
            schema: whittle_core::pcl::SCHEMA_VERSION,
            model,
            grids,
            tolerances: tols,
        };
        let bytes = serde_json::to_vec(&key).ok()?;
        let digest = hex::encode(Sha256::digest(&bytes));
        Some(dir.join(format!("pcl-{digest}.json")))
    }

    pub fn get(&self, model: &ModelSpec, grids: &PclGrids, tols: &PclTolerances) -> Option<PCLReport> {
        let path = self.path(model, grids, tols)?;
        let text = std::fs::read(path).ok()?;
        // A corrupt or stale entry is simply recomputed.
        serde_json::from_slice(&text).ok()
    }

    /// Best-effort store; written to a temporary file and renamed into place
    /// so concurrent runs never see a partial entry.
    pub fn put(&self, model: &ModelSpec, grids: &PclGrids, tols: &PclTolerances, report: &PCLReport) {
        let Some(path) = self.path(model, grids, tols) else {
            return;
        };
        let Some(dir) = path.parent() else {
            return;
        };
        if std::fs::create_dir_all(dir).is_err() {
            return;
        }
        let Ok(mut tmp) = tempfile::NamedTempFile::new_in(dir) else {
            return;
        };
        let Ok(bytes) = serde_json::to_vec(report) else {
            return;
        };
        if tmp.write_all(&bytes).is_ok() {
            let _ = tmp.persist(&path);
        }
    }
}
