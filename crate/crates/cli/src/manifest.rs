use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.toml";

/// Written to every output directory. `args` is the full command line, so a
/// run can be repeated with `locomanip replay`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub version: String,
    /// Wall-clock time per stage (ms).
    pub timings_ms: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        args: Vec<String>,
        config: Option<PathBuf>,
        seed: u64,
        out_dir: PathBuf,
    ) -> Self {
        Self {
            command: command.to_string(),
            args,
            config,
            seed,
            out_dir,
            version: env!("LOCOMANIP_VERSION").to_string(),
            timings_ms: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn save(&self) -> Result<()> {
        let path = self.out_dir.join(MANIFEST_FILE);
        let text = toml::to_string_pretty(self)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(toml::from_str(&text)?)
    }
}
