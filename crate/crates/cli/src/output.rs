//! Staged outputs and run manifests.
//!
//! A command writes everything into a hidden staging directory next to its
//! destination. Only when the command has succeeded are the files moved into
//! place and `manifest.json` written, so a failed run never leaves outputs
//! without a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    adsm_core::Error::Io {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| io_err(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

/// Regular files under `dir`, relative, sorted, hidden entries skipped.
fn walk(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    let mut stack = vec![PathBuf::new()];
    while let Some(rel) = stack.pop() {
        let abs = dir.join(&rel);
        for entry in fs::read_dir(&abs).map_err(|e| io_err(&abs, e))? {
            let entry = entry.map_err(|e| io_err(&abs, e))?;
            if entry.file_name().to_string_lossy().starts_with('.') {
                continue;
            }
            let child = rel.join(entry.file_name());
            if entry.path().is_dir() {
                stack.push(child);
            } else {
                out.push(child);
            }
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    pub sha256: String,
    /// Number of files hashed (directories hash their sorted file list).
    pub files: usize,
}

/// SHA-256 of a file, or of `"<relative path> <file sha256>\n"` lines for
/// every file in a directory.
pub fn digest_input(path: &Path) -> Result<InputDigest, CliError> {
    if !path.is_dir() {
        return Ok(InputDigest {
            sha256: sha256_file(path)?,
            files: 1,
        });
    }
    let files = walk(path)?;
    let mut hasher = Sha256::new();
    for rel in &files {
        hasher.update(format!("{} {}\n", rel.display(), sha256_file(&path.join(rel))?).as_bytes());
    }
    Ok(InputDigest {
        sha256: hex(&hasher.finalize()),
        files: files.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub versions: BTreeMap<&'static str, &'static str>,
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: BTreeMap<String, InputDigest>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        let versions = BTreeMap::from([
            ("adsm", env!("CARGO_PKG_VERSION")),
            ("adsm-core", adsm_core::VERSION),
            ("feature-format", "ADSMFV1"),
            ("vocabulary-format", "ADSMVOC1"),
            ("tag-matrix-format", "ADSMTAG1"),
        ]);
        Self {
            tool: "adsm",
            versions,
            command: command.to_owned(),
            config,
            seeds,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        if path.exists() {
            self.inputs
                .insert(format!("{role}:{}", path.display()), digest_input(path)?);
        }
        Ok(())
    }
}

/// Destination directory plus the staging area that feeds it.
pub struct Staging {
    dest: PathBuf,
    tmp: PathBuf,
    committed: bool,
}

impl Staging {
    pub fn new(dest: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dest).map_err(|e| io_err(dest, e))?;
        let tmp = dest.join(format!(".adsm-staging-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| io_err(&tmp, e))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| io_err(&tmp, e))?;
        Ok(Self {
            dest: dest.to_path_buf(),
            tmp,
            committed: false,
        })
    }

    /// Staging for a single output file: `(staging, file name)`.
    pub fn for_file(path: &Path) -> Result<(Self, String), CliError> {
        let name = path
            .file_name()
            .ok_or_else(|| {
                CliError::Usage(format!("output path {} has no file name", path.display()))
            })?
            .to_string_lossy()
            .into_owned();
        let parent = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        Ok((Self::new(parent)?, name))
    }

    /// Directory to write staged files into.
    pub fn dir(&self) -> &Path {
        &self.tmp
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.tmp.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))
    }

    /// Moves staged files into place and writes the manifest last.
    pub fn commit(mut self, mut manifest: Manifest) -> Result<PathBuf, CliError> {
        for rel in walk(&self.tmp)? {
            let from = self.tmp.join(&rel);
            manifest
                .outputs
                .insert(rel.display().to_string(), sha256_file(&from)?);
            let to = self.dest.join(&rel);
            if let Some(parent) = to.parent() {
                fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
            }
            fs::rename(&from, &to).map_err(|e| io_err(&to, e))?;
        }
        let json = serde_json::to_string_pretty(&manifest)? + "\n";
        let staged = self.tmp.join(MANIFEST_NAME);
        fs::write(&staged, json).map_err(|e| io_err(&staged, e))?;
        let target = self.dest.join(MANIFEST_NAME);
        fs::rename(&staged, &target).map_err(|e| io_err(&target, e))?;
        fs::remove_dir_all(&self.tmp).map_err(|e| io_err(&self.tmp, e))?;
        self.committed = true;
        Ok(target)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}
