//! Output directory writer. Every file carries the config hash and is
//! listed with its digest in the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nowcast_core::digest::{json_digest, sha256_hex};
use serde::Serialize;

use crate::error::CliError;

pub struct Outputs {
    dir: PathBuf,
    hash: String,
    files: BTreeMap<String, String>,
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub config_hash: &'a str,
    pub files: &'a BTreeMap<String, String>,
    pub outputs_digest: String,
}

impl Outputs {
    pub fn create(dir: &Path, hash: &str) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(&format!("create {}", dir.display()), e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hash: hash.to_string(),
            files: BTreeMap::new(),
        })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&format!("write {}", path.display()), e))?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// CSV body behind a `# config_hash:` comment line.
    pub fn csv(&mut self, name: &str, body: Vec<u8>) -> Result<(), CliError> {
        let mut bytes = format!("# config_hash: {}\n", self.hash).into_bytes();
        bytes.extend(body);
        self.put(name, &bytes)
    }

    /// Pretty JSON with `config_hash` as the first key.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Stamped<'a, T> {
            config_hash: &'a str,
            #[serde(flatten)]
            body: &'a T,
        }
        let text = serde_json::to_string_pretty(&Stamped {
            config_hash: &self.hash,
            body: value,
        })
        .map_err(|e| CliError::validation(format!("serialize {name}: {e}")))?;
        self.put(name, format!("{text}\n").as_bytes())
    }

    /// Text whose content already names the config hash.
    pub fn text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        debug_assert!(text.contains(&self.hash));
        self.put(name, text.as_bytes())
    }

    /// Writes `manifest_name` and returns the digest over all listed files.
    pub fn finish(self, manifest_name: &str) -> Result<String, CliError> {
        let digest = json_digest(&self.files);
        let manifest = Manifest {
            config_hash: &self.hash,
            files: &self.files,
            outputs_digest: digest.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let path = self.dir.join(manifest_name);
        std::fs::write(&path, format!("{text}\n")).map_err(|e| CliError::io(&format!("write {}", path.display()), e))?;
        Ok(digest)
    }
}

/// Runs a `csv::Writer`-based writer into memory.
pub fn to_bytes<F>(f: F) -> Result<Vec<u8>, CliError>
where
    F: FnOnce(&mut Vec<u8>) -> nowcast_core::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}
