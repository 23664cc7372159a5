//! Run manifests: enough to re-create a run (config hash + seeds live in the
//! config copy) and to detect any post-hoc tampering with its outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub code_version: String,
    pub started: String,
    pub finished: String,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash every file under the run directory (except the manifest itself) and
/// write `manifest.json`.
pub fn write_manifest(run_dir: &Path, config_text: &str, started: &str) -> anyhow::Result<()> {
    let mut files = Vec::new();
    collect(run_dir, run_dir, &mut files)?;
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = RunManifest {
        config_sha256: sha256_hex(config_text.as_bytes()),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started: started.to_string(),
        finished: chrono::Utc::now().to_rfc3339(),
        files,
    };
    std::fs::write(
        run_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<FileEntry>) -> anyhow::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else if path.file_name().and_then(|n| n.to_str()) != Some("manifest.json") {
            let bytes = std::fs::read(&path)?;
            out.push(FileEntry {
                path: path
                    .strip_prefix(root)
                    .unwrap_or(&path)
                    .to_string_lossy()
                    .into_owned(),
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            });
        }
    }
    Ok(())
}
