use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Versions {
    pub idestab: &'static str,
    pub core: &'static str,
    pub parallel: bool,
}

impl Versions {
    pub fn current() -> Self {
        Self { idestab: env!("CARGO_PKG_VERSION"), core: ide_stability::VERSION, parallel: ide_stability::PARALLEL }
    }
}

#[derive(Debug, Default, Serialize)]
pub struct Overrides {
    pub delta: Option<f64>,
    pub segments: Option<usize>,
    pub r_max: Option<usize>,
    pub seed: Option<u64>,
    pub grid_n: Option<usize>,
    pub no_oracle: bool,
    pub strict: bool,
}

/// Everything needed to redo a run: the config bytes (by hash), the flags and
/// the build.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub subcommand: String,
    pub config: PathBuf,
    pub config_sha256: String,
    pub seed: u64,
    pub overrides: Overrides,
    pub versions: Versions,
    pub status: String,
    pub message: Option<String>,
    pub outputs: Vec<PathBuf>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn write(&self, dir: &Path, stem: &str) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{stem}_{}.manifest.json", self.subcommand));
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, json + "\n")?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    #[test]
    fn sha256_of_abc() {
        assert_eq!(
            super::sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
