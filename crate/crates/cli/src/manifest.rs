//! Run manifests and atomic file output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub status: String,
    pub code_version: String,
    pub argv: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    /// Full configuration after overrides; rerun with `--config` on this table.
    pub config: ExperimentConfig,
    pub tolerance_overrides: BTreeMap<String, f64>,
    /// SHA-256 of every output, keyed by path relative to the output directory.
    pub outputs: BTreeMap<String, String>,
}

/// Collects outputs of one run and keeps `manifest.json` current.
pub struct Run {
    pub dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    /// Creates the output directory and writes a `running` manifest.
    pub fn start(
        command: &str,
        cfg: &ExperimentConfig,
        argv: Vec<String>,
        tol_overrides: BTreeMap<String, f64>,
    ) -> anyhow::Result<Self> {
        let dir = cfg.out.clone();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let manifest = RunManifest {
            command: command.to_string(),
            status: "running".into(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            argv,
            started_unix: now_unix(),
            finished_unix: None,
            config: cfg.clone(),
            tolerance_overrides: tol_overrides,
            outputs: BTreeMap::new(),
        };
        let run = Run { dir, manifest };
        run.flush()?;
        Ok(run)
    }

    fn flush(&self) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        write_atomic(&self.dir.join(MANIFEST_NAME), text.as_bytes())
    }

    /// Writes `rel` under the output directory and records its checksum.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(rel);
        write_atomic(&path, bytes)?;
        self.manifest.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> anyhow::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    pub fn finish(mut self, status: &str) -> anyhow::Result<RunManifest> {
        self.manifest.status = status.to_string();
        self.manifest.finished_unix = Some(now_unix());
        self.flush()?;
        Ok(self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksums_and_status() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig { out: dir.path().join("run"), ..Default::default() };
        let mut run = Run::start("demo", &cfg, vec!["x".into()], BTreeMap::new()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("run").join(MANIFEST_NAME)).unwrap();
        assert!(text.contains("\"running\""));
        run.write("sub/a.csv", b"a,b\n1,2\n").unwrap();
        let m = run.finish("ok").unwrap();
        assert_eq!(m.outputs["sub/a.csv"], sha256_hex(b"a,b\n1,2\n"));
        assert_eq!(std::fs::read(dir.path().join("run/sub/a.csv")).unwrap(), b"a,b\n1,2\n");
        let text = std::fs::read_to_string(dir.path().join("run").join(MANIFEST_NAME)).unwrap();
        assert!(text.contains("\"ok\""));
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
