use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self { path: path.display().to_string(), sha256: sha256_hex(&std::fs::read(path)?) })
    }
}

/// Inputs and outputs of one run. Contains no timestamps or host details, so
/// identical runs produce identical manifests.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub config: &'a C,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl<'a, C: Serialize> RunManifest<'a, C> {
    pub fn new(subcommand: &'static str, seed: Option<u64>, config: &'a C) -> Result<Self> {
        let canonical = serde_json::to_vec(config)?;
        Ok(Self {
            tool: "factorvid",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            seed,
            config_sha256: sha256_hex(&canonical),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(self)
    }

    pub fn output(mut self, path: &Path) -> Result<Self> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(self)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
