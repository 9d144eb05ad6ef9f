//! Run manifests: every subcommand records what produced its outputs.

use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use serde_json::json;

pub struct RunClock {
    start: Instant,
}

impl RunClock {
    pub fn start() -> Self {
        Self {
            start: Instant::now(),
        }
    }

    /// Write manifest.json into `dir`. Identical (subcommand, config hash,
    /// seed, inputs) imply byte-identical primary outputs; wall time is
    /// informational only.
    pub fn write_manifest(
        &self,
        dir: &Path,
        subcommand: &str,
        config_sha256: &str,
        seed: Option<u64>,
        extras: serde_json::Value,
    ) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = json!({
            "subcommand": subcommand,
            "config_sha256": config_sha256,
            "seed": seed,
            "threads": rayon::current_num_threads(),
            "version": env!("CARGO_PKG_VERSION"),
            "wall_time_s": self.start.elapsed().as_secs_f64(),
            "extras": extras,
        });
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }
}
