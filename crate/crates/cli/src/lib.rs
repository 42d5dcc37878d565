//! Reproducible command-line runs over the `proximal-core` estimators.
//!
//! Every command resolves its flags into a [`config::RunConfig`], computes all
//! artifacts in memory, then writes them atomically together with a manifest
//! (`<output stem>.manifest.json`) that records the resolved configuration, its
//! SHA-256, the seed, and digests of every input and output file.

pub mod artifacts;
pub mod cli;
pub mod commands;
pub mod config;

use artifacts::{build_manifest, manifest_path, read_json, to_json_bytes, CliResult, Manifest};
use config::RunConfig;

/// Executes a resolved configuration and writes its artifacts and manifest.
pub fn run(config: &RunConfig) -> CliResult<String> {
    let mut outcome = commands::execute(config)?;
    let manifest = build_manifest(config, &outcome.inputs, &outcome.artifacts);
    outcome.artifacts.add(manifest_path(config), to_json_bytes(&manifest));
    outcome.artifacts.commit()?;
    Ok(outcome.summary)
}

/// Re-executes the run recorded in a manifest. Returns the summary and the
/// artifacts whose digests differ from the recorded ones.
pub fn replay(manifest: &str) -> CliResult<(String, Vec<String>)> {
    let recorded: Manifest = read_json(manifest)?;
    let mut outcome = commands::execute(&recorded.config)?;
    let fresh = build_manifest(&recorded.config, &outcome.inputs, &outcome.artifacts);
    let mut changed: Vec<String> = recorded
        .artifacts
        .iter()
        .filter(|a| !fresh.artifacts.contains(a))
        .map(|a| a.path.clone())
        .collect();
    changed.extend(
        recorded
            .inputs
            .iter()
            .filter(|i| !fresh.inputs.contains(i))
            .map(|i| format!("{} (input)", i.path)),
    );
    outcome.artifacts.add(manifest_path(&recorded.config), to_json_bytes(&fresh));
    outcome.artifacts.commit()?;
    Ok((outcome.summary, changed))
}
