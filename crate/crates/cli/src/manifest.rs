//! Replayable run manifests: the exact argument set plus content digests of
//! every input and output file, persisted as a digest-checked artifact.

use crate::args::{EvaluateArgs, GuideArgs, SampleArgs, TrainDenoiserArgs, TrainOracleArgs};
use abdiff_core::artifact::{file_sha256_hex, save_json, ArtifactKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// The replayable portion of a command invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunSpec {
    TrainDenoiser(TrainDenoiserArgs),
    TrainOracle(TrainOracleArgs),
    Sample(SampleArgs),
    Guide(GuideArgs),
    Evaluate(EvaluateArgs),
}

impl RunSpec {
    pub fn command_name(&self) -> &'static str {
        match self {
            RunSpec::TrainDenoiser(_) => "train-denoiser",
            RunSpec::TrainOracle(_) => "train-oracle",
            RunSpec::Sample(_) => "sample",
            RunSpec::Guide(_) => "guide",
            RunSpec::Evaluate(_) => "evaluate",
        }
    }

    /// Drop the manifest path so a replayed run does not re-write the
    /// manifest it came from.
    pub fn without_manifest_out(mut self) -> Self {
        match &mut self {
            RunSpec::TrainDenoiser(a) => a.manifest_out = None,
            RunSpec::TrainOracle(a) => a.manifest_out = None,
            RunSpec::Sample(a) => a.manifest_out = None,
            RunSpec::Guide(a) => a.manifest_out = None,
            RunSpec::Evaluate(a) => a.manifest_out = None,
        }
        self
    }
}

/// What ran, on which bytes, producing which bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub spec: RunSpec,
    /// Input path -> sha256 of its content at run time.
    pub inputs: BTreeMap<String, String>,
    /// Output path -> sha256 of the produced content. The manifest file
    /// itself is never listed.
    pub outputs: BTreeMap<String, String>,
}

/// Digest the named files into a path -> sha256 map.
pub fn digest_files<P: AsRef<Path>>(paths: &[P]) -> std::io::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for p in paths {
        let path = p.as_ref();
        out.insert(path.display().to_string(), file_sha256_hex(path)?);
    }
    Ok(out)
}

/// Build and persist a manifest when a destination was requested.
pub fn write_manifest(
    dest: &Option<PathBuf>,
    spec: RunSpec,
    inputs: &[&PathBuf],
    outputs: &[&PathBuf],
) -> Result<(), crate::commands::CliError> {
    let Some(path) = dest else {
        return Ok(());
    };
    let manifest = RunManifest {
        spec,
        inputs: digest_files(inputs)?,
        outputs: digest_files(outputs)?,
    };
    save_json(ArtifactKind::RunManifest, &manifest, path)?;
    Ok(())
}
