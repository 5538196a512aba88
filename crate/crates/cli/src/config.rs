//! Run configuration: one TOML file, overridable by dotted-path flags.

use std::path::{Path, PathBuf};

use pano_nav_core::policy::{EpisodeLimits, RunOptions};
use pano_nav_core::rng::combine;
use pano_nav_core::{CameraIntrinsics, GenParams, NoiseModel, ProjectionMode, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const POLICIES: [&str; 6] = ["expert", "random", "unguided", "heuristic", "localizer", "oracle"];
pub const SPLITS: [&str; 3] = ["train", "valid_seen", "valid_unseen"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct SplitSpec {
    /// Scenes in the split. `valid_seen` reuses the first scenes of `train`.
    pub scenes: usize,
    pub tasks_per_scene: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { scenes: 20, tasks_per_scene: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct Splits {
    pub train: SplitSpec,
    pub valid_seen: SplitSpec,
    pub valid_unseen: SplitSpec,
}

impl Default for Splits {
    fn default() -> Self {
        Self {
            train: SplitSpec { scenes: 60, tasks_per_scene: 5 },
            valid_seen: SplitSpec::default(),
            valid_unseen: SplitSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub pairs: usize,
    pub eps: f64,
    pub threshold: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { pairs: 100, eps: 1e-3, threshold: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed for splits and episode draws.
    pub seed: u64,
    /// Scene parameters; the per-scene seed is derived, so `seed` here is
    /// ignored.
    pub gen_params: GenParams,
    pub camera: CameraIntrinsics,
    pub projection_mode: ProjectionMode,
    pub noise_model: NoiseModel,
    pub train: TrainConfig,
    pub model_dim: usize,
    pub limits: EpisodeLimits,
    pub sweep_counts_as_actions: bool,
    pub policies: Vec<String>,
    pub splits: Splits,
    pub gradcheck: GradcheckConfig,
    /// Excluded from the digest.
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            gen_params: GenParams::default(),
            camera: CameraIntrinsics::default(),
            projection_mode: ProjectionMode::Corners,
            noise_model: NoiseModel::default(),
            train: TrainConfig::default(),
            model_dim: 32,
            limits: EpisodeLimits::default(),
            sweep_counts_as_actions: false,
            policies: POLICIES.iter().map(|s| s.to_string()).collect(),
            splits: Splits::default(),
            gradcheck: GradcheckConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>().map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        self.gen_params.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !self.camera.is_valid() {
            return bad("camera fields of view must lie in (0, 180)");
        }
        if !self.noise_model.is_valid() {
            return bad("noiseModel rates must lie in [0, 1] and deviations be non-negative");
        }
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.model_dim < 2 || !self.model_dim.is_multiple_of(2) {
            return bad("modelDim must be a positive even number");
        }
        if !self.limits.is_valid() {
            return bad("episode limits must be positive");
        }
        for p in &self.policies {
            if !POLICIES.contains(&p.as_str()) {
                return bad(&format!("unknown policy {p:?}; expected one of {POLICIES:?}"));
            }
        }
        if self.splits.train.scenes == 0 || self.splits.train.tasks_per_scene == 0 {
            return bad("the train split needs at least one scene and one task per scene");
        }
        if self.splits.valid_seen.scenes > self.splits.train.scenes {
            return bad("splits.validSeen.scenes cannot exceed splits.train.scenes");
        }
        if !(1e-6..=1e-3).contains(&self.gradcheck.eps) {
            return bad("gradcheck.eps must lie in [1e-6, 1e-3]");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, without the output directory.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = value.as_object_mut() {
            m.remove("outputDir");
        }
        let canonical = serde_json::to_string(&value).expect("json value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn split_spec(&self, split: &str) -> Option<&SplitSpec> {
        match split {
            "train" => Some(&self.splits.train),
            "valid_seen" => Some(&self.splits.valid_seen),
            "valid_unseen" => Some(&self.splits.valid_unseen),
            _ => None,
        }
    }

    pub fn split_seed(&self, split: &str) -> u64 {
        let tag = SPLITS.iter().position(|s| *s == split).unwrap_or(SPLITS.len()) as u64;
        combine(self.seed, 0x5EED_0000 + tag)
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions { limits: self.limits, sweep_counts_as_actions: self.sweep_counts_as_actions }
    }
}

/// Applies `a.b.c=value`; the value is parsed as TOML, falling back to a
/// plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not KEY=VALUE")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("bad override path {path:?}")));
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| CliError::Config(format!("override path {path:?} crosses a non-table")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_digest_is_stable() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.digest(), RunConfig::default().digest());
        assert_eq!(c.digest().len(), 64);
    }

    #[test]
    fn output_dir_does_not_change_digest() {
        let a = RunConfig::default();
        let b = RunConfig { output_dir: "elsewhere".into(), ..RunConfig::default() };
        assert_eq!(a.digest(), b.digest());
        let c = RunConfig { seed: 1, ..RunConfig::default() };
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn dotted_overrides() {
        let c = RunConfig::load(None, &["train.epochs=3".into(), "noiseModel.missRate=0.5".into(), "seed=9".into()]).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.noise_model.miss_rate, 0.5);
        assert_eq!(c.seed, 9);
        assert_eq!(c.train.learning_rate, TrainConfig::default().learning_rate);
    }

    #[test]
    fn bad_configs_rejected() {
        for o in ["policies=[\"bogus\"]", "camera.F_x=200", "nosuchfield=1", "train.epochs", "limits.maxTimesteps=0"] {
            assert!(matches!(RunConfig::load(None, &[o.into()]), Err(CliError::Config(_))), "{o}");
        }
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::default();
        let text = toml::to_string(&c).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
