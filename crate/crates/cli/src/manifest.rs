use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WallClock {
    pub started_unix_ms: u64,
    pub elapsed_ms: u64,
}

/// Record of one run. The outputs it lists never contain the wall-clock
/// fields, so a replay can be compared byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub wall_clock: WallClock,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digests of the inputs that exist; a missing input is reported by the
/// command itself.
fn digests(paths: &[PathBuf]) -> CliResult<Vec<FileDigest>> {
    paths
        .iter()
        .filter(|p| p.exists())
        .map(|p| Ok(FileDigest { path: p.display().to_string(), sha256: sha256_file(p)? }))
        .collect()
}

/// Executes `config`, writing outputs and `manifest.json` into `out`.
pub fn run(config: &RunConfig, out: &Path) -> CliResult<RunManifest> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
    let clock = Instant::now();
    let inputs = digests(&config.input_files())?;
    let files = commands::execute(config, out)?;
    let outputs = files
        .iter()
        .map(|f| Ok(FileDigest { path: f.clone(), sha256: sha256_file(&out.join(f))? }))
        .collect::<CliResult<Vec<_>>>()?;
    let manifest = RunManifest {
        command: config.command().into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        seeds: config.seeds(),
        inputs,
        outputs,
        wall_clock: WallClock { started_unix_ms: started, elapsed_ms: clock.elapsed().as_millis() as u64 },
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(fairpca::Error::from)?;
    std::fs::write(out.join(MANIFEST_FILE), text + "\n")?;
    Ok(manifest)
}

pub fn load(path: &Path) -> CliResult<RunManifest> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid manifest {}: {e}", path.display())))
}

/// Re-executes a recorded run into `out` and checks that inputs and outputs
/// match the recorded digests.
pub fn replay(recorded: &RunManifest, out: &Path) -> CliResult<RunManifest> {
    for input in &recorded.inputs {
        let now = sha256_file(Path::new(&input.path))?;
        if now != input.sha256 {
            return Err(CliError::Data(format!("input {} changed since the recorded run", input.path)));
        }
    }
    let fresh = run(&recorded.config, out)?;
    if fresh.outputs != recorded.outputs {
        let diff: Vec<&str> =
            recorded.outputs.iter().filter(|o| !fresh.outputs.contains(o)).map(|o| o.path.as_str()).collect();
        return Err(CliError::Mismatch(format!("outputs differ: {}", diff.join(", "))));
    }
    Ok(fresh)
}
