//! Run manifests: what ran, with which inputs, producing which files.
//!
//! Every field is deterministic for a fixed configuration and seed except
//! `timings`, which holds elapsed seconds.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use rgbdsde::{Error, Result};

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub command: String,
    pub spec_digest: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    /// Elapsed seconds per stage; the only run-dependent field.
    pub timings: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    pub pass: bool,
    pub metrics: BTreeMap<String, f64>,
    pub config_echo: serde_json::Value,
    #[serde(default)]
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, digest: &str, seed: u64, echo: serde_json::Value) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("rgbdsde".into(), env!("CARGO_PKG_VERSION").into());
        Self {
            schema: MANIFEST_SCHEMA,
            command: command.into(),
            spec_digest: digest.into(),
            seed,
            versions,
            timings: BTreeMap::new(),
            outputs: Vec::new(),
            pass: true,
            metrics: BTreeMap::new(),
            config_echo: echo,
            error: None,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("manifest serialization failed: {e}")))?;
        std::fs::write(path, body + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        serde_json::from_str(&raw)
            .map_err(|e| Error::Config(format!("bad manifest {}: {e}", path.display())))
    }
}

/// One row per manifest: digest, seed, pass and headline metrics.
pub fn summary_table(manifests: &[(String, RunManifest)]) -> String {
    let mut out = String::new();
    out.push_str("digest        seed        pass  command     metrics\n");
    for (name, m) in manifests {
        let digest_short: String = m.spec_digest.chars().take(12).collect();
        let headline: Vec<String> = m
            .metrics
            .iter()
            .take(3)
            .map(|(k, v)| format!("{k}={v:.6}"))
            .collect();
        out.push_str(&format!(
            "{:<13} {:<11} {:<5} {:<11} {}  [{}]\n",
            digest_short,
            m.seed,
            if m.pass { "ok" } else { "FAIL" },
            m.command,
            headline.join(" "),
            name,
        ));
    }
    let failed = manifests.iter().filter(|(_, m)| !m.pass).count();
    out.push_str(&format!("{} run(s), {} failed\n", manifests.len(), failed));
    out
}

/// Long-format CSV: one row per metric per run.
pub fn summary_csv(manifests: &[(String, RunManifest)]) -> String {
    let mut out = String::from("digest,seed,command,pass,metric,value\n");
    for (_, m) in manifests {
        for (k, v) in &m.metrics {
            out.push_str(&format!(
                "{},{},{},{},{k},{v}\n",
                m.spec_digest, m.seed, m.command, m.pass
            ));
        }
        if m.metrics.is_empty() {
            out.push_str(&format!(
                "{},{},{},{},,\n",
                m.spec_digest, m.seed, m.command, m.pass
            ));
        }
    }
    out
}
