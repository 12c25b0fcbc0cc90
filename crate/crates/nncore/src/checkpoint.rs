//! Checkpoint serialization: a JSON manifest followed by the flat parameter
//! vector as little-endian f32.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{Model, ModelConfig};
use crate::NnError;

const MAGIC: &[u8; 8] = b"NNCKPT01";

/// Metadata stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    /// SHA-256 of the canonical config JSON; lets reports reference the
    /// architecture without embedding it.
    pub config_hash: String,
    pub param_count: usize,
    /// Master seed the weights were initialized from.
    pub master_seed: u64,
    /// RNG substream that performed the initialization.
    pub init_stream_id: u64,
    /// Optimizer steps applied to these weights since initialization.
    pub steps_completed: u64,
}

/// Canonical hash of a model configuration.
pub fn config_hash(config: &ModelConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Writes `model` to `path`. Parameters are narrowed to f32, so save→load
/// →save round-trips are byte-identical.
pub fn save_checkpoint(
    model: &Model,
    steps_completed: u64,
    path: &Path,
) -> Result<(), NnError> {
    let manifest = CheckpointManifest {
        config: *model.config(),
        config_hash: config_hash(model.config()),
        param_count: model.param_count(),
        master_seed: model.master_seed(),
        init_stream_id: rngutil::stream_id("init", 0),
        steps_completed,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(
        MAGIC.len() + 8 + manifest_bytes.len() + 4 * model.param_count(),
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    for &p in model.params() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Reads a checkpoint. When `expected` is given, every config field must
/// match; the first differing field is named in the error.
pub fn load_checkpoint(
    path: &Path,
    expected: Option<&ModelConfig>,
) -> Result<(Model, CheckpointManifest), NnError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(NnError::CorruptCheckpoint(
            "missing or wrong magic header".into(),
        ));
    }
    let len_bytes: [u8; 8] = bytes[MAGIC.len()..MAGIC.len() + 8].try_into().unwrap();
    let manifest_len = u64::from_le_bytes(len_bytes) as usize;
    let manifest_start = MAGIC.len() + 8;
    let params_start = manifest_start + manifest_len;
    if bytes.len() < params_start {
        return Err(NnError::CorruptCheckpoint(
            "manifest extends past end of file".into(),
        ));
    }
    let manifest: CheckpointManifest =
        serde_json::from_slice(&bytes[manifest_start..params_start])?;

    if let Some(want) = expected {
        check_config(&manifest.config, want)?;
    }
    if manifest.config_hash != config_hash(&manifest.config) {
        return Err(NnError::CorruptCheckpoint(
            "config hash does not match stored config".into(),
        ));
    }

    let payload = &bytes[params_start..];
    if payload.len() != 4 * manifest.param_count {
        return Err(NnError::CorruptCheckpoint(format!(
            "expected {} parameter bytes, found {}",
            4 * manifest.param_count,
            payload.len()
        )));
    }
    let params: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let model = Model::with_params(manifest.config, params, manifest.master_seed)?;
    Ok((model, manifest))
}

fn check_config(found: &ModelConfig, want: &ModelConfig) -> Result<(), NnError> {
    let mismatch = |field: &str, f: String, w: String| {
        Err(NnError::CheckpointMismatch {
            field: field.into(),
            found: f,
            expected: w,
        })
    };
    if found.input_channels != want.input_channels {
        return mismatch(
            "input_channels",
            found.input_channels.to_string(),
            want.input_channels.to_string(),
        );
    }
    if found.input_size != want.input_size {
        return mismatch(
            "input_size",
            found.input_size.to_string(),
            want.input_size.to_string(),
        );
    }
    if found.stage_widths != want.stage_widths {
        return mismatch(
            "stage_widths",
            format!("{:?}", found.stage_widths),
            format!("{:?}", want.stage_widths),
        );
    }
    if found.groups_per_norm != want.groups_per_norm {
        return mismatch(
            "groups_per_norm",
            found.groups_per_norm.to_string(),
            want.groups_per_norm.to_string(),
        );
    }
    if found.activation != want.activation {
        return mismatch(
            "activation",
            format!("{:?}", found.activation),
            format!("{:?}", want.activation),
        );
    }
    if found.num_labels != want.num_labels {
        return mismatch(
            "num_labels",
            found.num_labels.to_string(),
            want.num_labels.to_string(),
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let model = Model::new(ModelConfig::test_scale(8, 3), 99).unwrap();
        save_checkpoint(&model, 17, &p1).unwrap();
        let (loaded, manifest) = load_checkpoint(&p1, None).unwrap();
        assert_eq!(manifest.steps_completed, 17);
        assert_eq!(manifest.param_count, model.param_count());
        save_checkpoint(&loaded, 17, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn mismatched_label_count_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = Model::new(ModelConfig::test_scale(8, 3), 1).unwrap();
        save_checkpoint(&model, 0, &path).unwrap();
        let want = ModelConfig::test_scale(8, 5);
        let err = load_checkpoint(&path, Some(&want)).unwrap_err();
        match err {
            NnError::CheckpointMismatch { field, found, expected } => {
                assert_eq!(field, "num_labels");
                assert_eq!(found, "3");
                assert_eq!(expected, "5");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(
            load_checkpoint(&path, None),
            Err(NnError::CorruptCheckpoint(_))
        ));

        // Truncated parameter payload.
        let model = Model::new(ModelConfig::test_scale(8, 2), 5).unwrap();
        let good = dir.path().join("good.ckpt");
        save_checkpoint(&model, 0, &good).unwrap();
        let mut bytes = fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 10);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path, None),
            Err(NnError::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn config_hash_is_stable_and_field_sensitive() {
        let a = ModelConfig::test_scale(8, 3);
        let mut b = a;
        assert_eq!(config_hash(&a), config_hash(&b));
        b.num_labels = 4;
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
