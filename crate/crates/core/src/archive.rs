//! Run archives: a directory of outputs plus `manifest.json` listing every
//! file with its size and SHA-256.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn entries(dir: &Path) -> std::io::Result<Vec<FileEntry>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == MANIFEST_FILE {
            continue;
        }
        let data = fs::read(entry.path())?;
        files.push(FileEntry {
            path: name,
            bytes: data.len() as u64,
            sha256: sha256_hex(&data),
        });
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(files)
}

/// Rewrites `manifest.json` to cover every regular file in `dir`.
pub fn seal(dir: &Path) -> std::io::Result<ArchiveManifest> {
    let manifest = ArchiveManifest {
        files: entries(dir)?,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(manifest)
}

/// Files whose content no longer matches the manifest, plus listed files
/// that are missing and present files that are unlisted.
pub fn verify(dir: &Path) -> std::io::Result<Vec<String>> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let recorded: ArchiveManifest = serde_json::from_str(&text).map_err(std::io::Error::other)?;
    let actual = entries(dir)?;
    let mut problems = Vec::new();
    for r in &recorded.files {
        match actual.iter().find(|a| a.path == r.path) {
            None => problems.push(format!("{}: missing", r.path)),
            Some(a) if a != r => problems.push(format!("{}: content changed", r.path)),
            Some(_) => {}
        }
    }
    for a in &actual {
        if !recorded.files.iter().any(|r| r.path == a.path) {
            problems.push(format!("{}: not listed", a.path));
        }
    }
    Ok(problems)
}
