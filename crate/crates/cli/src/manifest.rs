use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    /// Relative path to lowercase hex SHA-256 of the file contents.
    files: BTreeMap<String, String>,
}

/// Every artifact of a run goes through here, so `manifest.json` lists each
/// file under the output directory with its content hash. Entries from
/// earlier commands on the same directory are kept.
pub struct Manifest {
    root: PathBuf,
    content: ManifestFile,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn open(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)?;
        let path = root.join(MANIFEST);
        let content = if path.exists() {
            let text = fs::read_to_string(&path)?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            ManifestFile::default()
        };
        Ok(Self {
            root: root.to_path_buf(),
            content,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, bytes)?;
        self.content.files.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Lets `f` write the file itself, then hashes what it wrote.
    pub fn write_with<E>(&mut self, rel: &str, f: impl FnOnce(&Path) -> Result<(), E>) -> Result<(), CliError>
    where
        CliError: From<E>,
    {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        f(&path)?;
        let bytes = fs::read(&path)?;
        self.content.files.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn finish(self) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(&self.content).expect("manifest serializes");
        text.push('\n');
        fs::write(self.root.join(MANIFEST), text)?;
        Ok(())
    }
}
