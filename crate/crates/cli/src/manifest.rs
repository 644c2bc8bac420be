//! Run manifests: every output file gets a sibling `<name>.manifest.json`
//! recording the tool version, the command, the full effective config, the
//! seed, and digests of all inputs. Deliberately timestamp-free so repeated
//! runs are byte-identical.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;
use synaptor::config::PipelineConfig;
use synaptor::error::{Error, Result};
use synaptor::io::atomic_write;

#[derive(Serialize)]
pub struct RunManifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: &'a PipelineConfig,
    pub seed: u64,
    /// Input file basename -> sha256 of contents.
    pub inputs: BTreeMap<String, String>,
}

impl<'a> RunManifest<'a> {
    pub fn new(command: &str, config: &'a PipelineConfig, seed: u64) -> Self {
        RunManifest {
            tool: "synaptor",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config,
            seed,
            inputs: BTreeMap::new(),
        }
    }

    /// Records a digest of an input file, keyed by basename so that runs in
    /// different directories produce identical manifests.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.inputs
            .insert(name, format!("{:x}", Sha256::digest(&bytes)));
        Ok(())
    }

    /// Writes `<output>.manifest.json` next to the given output file.
    pub fn write_for(&self, output: &Path) -> Result<()> {
        let mut name = output
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        name.push_str(".manifest.json");
        let path = output.with_file_name(name);
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        atomic_write(&path, &bytes)
    }
}
