//! Run manifests: config hash, seed, and content hashes of inputs and outputs.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::io_util::write_atomic;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub lines: Vec<(String, String)>,
}

impl Manifest {
    /// Manifest for a command with no run config.
    pub fn bare(command: &str, seed: u64) -> Self {
        let mut m = Self::default();
        m.push("command", command);
        m.push("version", env!("CARGO_PKG_VERSION"));
        m.push("seed", &seed.to_string());
        m
    }

    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        let mut m = Self::bare(command, cfg.seed);
        m.push("config_sha256", &sha256_hex(cfg.to_text().as_bytes()));
        m
    }

    pub fn push(&mut self, key: &str, value: &str) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    pub fn input(&mut self, role: &str, path: &Path, bytes: &[u8]) {
        self.push(
            &format!("input.{role}"),
            &format!("{} {}", sha256_hex(bytes), path.display()),
        );
    }

    pub fn output_file(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_name()
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.push(&format!("output.{name}"), &sha256_hex(&bytes));
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.lines.iter().map(|(k, v)| format!("{k} {v}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = Manifest::new("train", &RunConfig::default());
        let b = Manifest::new(
            "train",
            &RunConfig {
                seed: 1,
                ..RunConfig::default()
            },
        );
        assert_ne!(a.lines[3], b.lines[3]);
        assert_eq!(a, Manifest::new("train", &RunConfig::default()));
    }
}
