//! Command-line driver: parses a flat config, runs one command, and leaves
//! CSV artifacts plus a run manifest in the output directory.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::Utc;

pub use commands::{run_command, Command, Outputs, RunOptions};
pub use config::{ConfigError, RunConfig};
pub use error::{CliError, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK};
pub use manifest::{git_blob_hash, RunManifest, MANIFEST_FILE};

/// One command invocation as given on the command line.
#[derive(Clone, Debug)]
pub struct Invocation {
    pub command: Command,
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
    /// Overrides the config's `seed`.
    pub seed: Option<u64>,
    pub options: RunOptions,
}

/// Loads the config, runs the command and writes the manifest last. The
/// manifest is also written when the command fails after producing output.
pub fn execute(inv: &Invocation, log: &mut dyn Write) -> Result<RunManifest, CliError> {
    let bytes = std::fs::read(&inv.config_path).map_err(|e| {
        ConfigError::new(
            "--config",
            format!("cannot read {}: {e}", inv.config_path.display()),
        )
    })?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| ConfigError::new("--config", format!("not UTF-8: {e}")))?;
    let mut cfg = RunConfig::from_json_str(text)?;
    if let Some(seed) = inv.seed {
        cfg.set_seed(seed);
    }
    std::fs::create_dir_all(&inv.out_dir).map_err(|e| CliError::output(&inv.out_dir, e))?;

    let started_at = manifest::timestamp(Utc::now());
    let mut outputs = Outputs::new(&inv.out_dir);
    let result = run_command(inv.command, &cfg, inv.options, &mut outputs, log);
    let manifest = RunManifest {
        command: inv.command.name().to_string(),
        config_path: inv.config_path.display().to_string(),
        seed: cfg.seed,
        started_at,
        finished_at: manifest::timestamp(Utc::now()),
        outputs: outputs.files().to_vec(),
        config_hash: git_blob_hash(&bytes),
        exit_code: result.as_ref().err().map_or(EXIT_OK, CliError::exit_code),
    };
    let written = manifest.write(&inv.out_dir);
    result?;
    written?;
    Ok(manifest)
}

/// Convenience for tests and scripts: the run directory's manifest.
pub fn read_manifest(out_dir: &Path) -> Result<RunManifest, CliError> {
    RunManifest::read(out_dir)
}
