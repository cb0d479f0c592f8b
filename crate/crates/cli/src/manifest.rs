use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use tomomar::simulate::SpectrumBin;
use tomomar::{NoiseSpec, Result, ScanConfig, TomoError};

/// Everything `simulate` consumed and produced. Output paths are relative
/// to the output directory so two runs with the same inputs write the same
/// bytes.
#[derive(Debug, Serialize)]
pub struct PipelineManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub inputs: BTreeMap<&'static str, Option<String>>,
    pub config: ScanConfig,
    pub spectrum: Vec<SpectrumBin>,
    pub noise: Option<NoiseSpec>,
    pub supersample: usize,
    pub outputs: BTreeMap<&'static str, String>,
}

impl PipelineManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| TomoError::InvalidConfig(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|source| TomoError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
