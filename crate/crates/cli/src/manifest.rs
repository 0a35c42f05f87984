use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{CliError, CliResult};

pub const RUN_MANIFEST: &str = "run.json";

/// Provenance of one command invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub inputs: Vec<String>,
    pub output: String,
    pub threads: usize,
    pub wall_ms: u128,
}

impl RunManifest {
    pub fn write(
        dir: &Path,
        command: &str,
        config: Value,
        seed: Option<u64>,
        inputs: &[&Path],
        threads: usize,
        started: Instant,
    ) -> CliResult<()> {
        let m = RunManifest {
            command: command.to_string(),
            config,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            output: dir.display().to_string(),
            threads,
            wall_ms: started.elapsed().as_millis(),
        };
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        std::fs::write(dir.join(RUN_MANIFEST), text)
            .map_err(|e| CliError::runtime(format!("cannot write run manifest in {}: {e}", dir.display())))
    }
}
