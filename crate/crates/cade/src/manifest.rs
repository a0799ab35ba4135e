//! `manifest.json`: SHA-256 of every file under a report directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the report directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<FileEntry>,
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(Error::io(dir))? {
        let path = entry.map_err(Error::io(dir))?.path();
        if path.is_dir() {
            walk(root, &path, out)?;
        } else if path != root.join(MANIFEST) {
            out.push(path);
        }
    }
    Ok(())
}

fn entry(root: &Path, path: &Path) -> Result<FileEntry> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let rel = path.strip_prefix(root).expect("walked under root");
    let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
    Ok(FileEntry { path: rel, bytes: bytes.len() as u64, sha256: hex::encode(Sha256::digest(&bytes)) })
}

/// Hash every file under `root` and write the manifest there.
pub fn write(root: &Path) -> Result<Manifest> {
    let mut paths = Vec::new();
    walk(root, root, &mut paths)?;
    let mut files = paths.iter().map(|p| entry(root, p)).collect::<Result<Vec<_>>>()?;
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest { files };
    let path = root.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
        .map_err(Error::io(&path))?;
    Ok(manifest)
}

/// Verify every listed file and report any file the manifest misses.
pub fn check(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?;
    let mut problems = Vec::new();
    for f in &manifest.files {
        let file = root.join(&f.path);
        if !file.is_file() {
            problems.push(format!("{} is missing", f.path));
            continue;
        }
        let actual = entry(root, &file)?;
        if actual.sha256 != f.sha256 || actual.bytes != f.bytes {
            problems.push(format!("{} has changed", f.path));
        }
    }
    let mut on_disk = Vec::new();
    walk(root, root, &mut on_disk)?;
    for p in on_disk {
        let rel = entry(root, &p)?.path;
        if !manifest.files.iter().any(|f| f.path == rel) {
            problems.push(format!("{rel} is not listed"));
        }
    }
    if problems.is_empty() {
        Ok(manifest)
    } else {
        Err(Error::Manifest(problems.join("; ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_edits_removals_and_strays() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::create_dir(root.join("sub")).unwrap();
        fs::write(root.join("a.txt"), "alpha").unwrap();
        fs::write(root.join("sub/b.txt"), "beta").unwrap();
        let m = write(root).unwrap();
        assert_eq!(m.files.iter().map(|f| f.path.as_str()).collect::<Vec<_>>(), ["a.txt", "sub/b.txt"]);
        assert_eq!(m.files[0].sha256, "8ed3f6ad685b959ead7022518e1af76cd816f8e8ec7ccdda1ed4018e8f2223f8");
        check(root).unwrap();

        fs::write(root.join("a.txt"), "alphA").unwrap();
        assert!(check(root).unwrap_err().to_string().contains("a.txt has changed"));
        fs::write(root.join("a.txt"), "alpha").unwrap();
        fs::write(root.join("stray"), "").unwrap();
        assert!(check(root).unwrap_err().to_string().contains("stray is not listed"));
        fs::remove_file(root.join("stray")).unwrap();
        fs::remove_file(root.join("sub/b.txt")).unwrap();
        assert!(check(root).unwrap_err().to_string().contains("sub/b.txt is missing"));
    }
}
