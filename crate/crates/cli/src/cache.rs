//! On-disk cache of finished scan reports.
//!
//! Enabled by `SHEARSTAB_CACHE_DIR`. Entries are keyed by the configuration
//! hash and the artifact version, so a rerun of an identical scan reuses the
//! report instead of factoring every resolvent again.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use shearstab::scan::ScanReport;

use crate::config::hex;
use crate::report::ARTIFACT_VERSION;

pub const CACHE_ENV: &str = "SHEARSTAB_CACHE_DIR";

pub struct ScanCache {
    dir: PathBuf,
}

impl ScanCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// The cache named by the environment, if any.
    pub fn from_env() -> Option<Self> {
        std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(Self::new)
    }

    fn path(&self, config_hash: &str) -> PathBuf {
        let key = hex(&Sha256::digest(format!("{config_hash}:{ARTIFACT_VERSION}").as_bytes()));
        self.dir.join(format!("scan-{key}.json"))
    }

    /// A stored report; unreadable or stale entries count as misses.
    pub fn load(&self, config_hash: &str) -> Option<ScanReport> {
        let bytes = std::fs::read(self.path(config_hash)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    /// Stores `report` unless it holds non-finite values, which JSON cannot
    /// carry. Returns whether an entry was written.
    pub fn store(&self, config_hash: &str, report: &ScanReport) -> std::io::Result<bool> {
        if !all_finite(report) {
            return Ok(false);
        }
        std::fs::create_dir_all(&self.dir)?;
        let path = self.path(config_hash);
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        std::fs::write(&tmp, serde_json::to_vec(report).expect("scan reports serialize"))?;
        std::fs::rename(&tmp, &path)?;
        Ok(true)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

fn all_finite(report: &ScanReport) -> bool {
    let opt = |v: Option<f64>| v.is_none_or(f64::is_finite);
    report
        .rows
        .iter()
        .all(|r| r.sup_ratio.is_finite() && r.argmax_lambda.is_finite())
        && report.fits.iter().all(|f| {
            opt(f.fitted_exponent) && opt(f.intercept) && opt(f.r2) && opt(f.constant_spread)
        })
        && report.failures.iter().all(|f| f.lambda.is_finite())
}
