//! Atomic file output, content hashes and the run manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SimConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ROUND_LOG_FILE: &str = "round_log.jsonl";
pub const ERRORS_FILE: &str = "errors.csv";
pub const SUMMARY_DEVICES_FILE: &str = "summary_devices.csv";
pub const SUMMARY_AVERAGE_FILE: &str = "summary_average.csv";
pub const SMOOTHED_FILE: &str = "smoothed_mse.csv";
pub const CFN_FILE: &str = "cfn.csv";
pub const PREDICTIONS_DIR: &str = "predictions";

/// Writes `path` through a temporary file in the same directory, renamed
/// into place once fully written.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("temp file in {}", dir.display()))?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    write_atomic(path, |w| Ok(w.write_all(bytes)?))
}

/// Git blob id computed with SHA-256: `sha256("blob <len>\0" + content)`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn file_hash(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(content_hash(&bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HashedFile {
    pub role: String,
    pub path: PathBuf,
    pub hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub method: String,
    pub seed: u64,
    pub pretrained: bool,
    pub config: SimConfig,
    pub inputs: Vec<HashedFile>,
    /// Relative to the run directory.
    pub outputs: Vec<HashedFile>,
}

impl Manifest {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    /// Fails if an input file changed since the manifest was written.
    pub fn verify_inputs(&self) -> anyhow::Result<()> {
        for f in &self.inputs {
            let now = file_hash(&f.path)?;
            anyhow::ensure!(now == f.hash, "{} input {} changed since the run (hash {} != {})", f.role, f.path.display(), now, f.hash);
        }
        Ok(())
    }
}
