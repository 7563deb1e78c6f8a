//! Run configuration: one TOML file with a section per component, plus
//! dotted `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SynthConfig;
use crate::error::{Error, Result};
use crate::evaluation::{EvalConfig, Recipe};
use crate::model::ModelConfig;
use crate::objective::SupConConfig;
use crate::sampling::{SampleMode, SamplerConfig};
use crate::training::TrainConfig;

/// Environment variable naming the output root.
pub const OUT_ENV: &str = "FINGERDIFF_OUT";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Where `synth-data` writes and other commands look for
    /// `manifest.jsonl`, unless `manifest` is set.
    pub data_dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Optional; when present its clip length and frame size must agree
    /// with `[model]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerConfig>,
    pub synth: SynthConfig,
    pub objective: SupConConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Reads `path` (if any), applies overrides in order and validates.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.objective.validate()?;
        self.synth.validate()?;
        if let Some(s) = &self.sampler {
            s.validate()?;
            if s.clip_length != self.model.clip_length || s.frame_size != self.model.frame_size {
                return Err(Error::Config(format!(
                    "[sampler] clip_length/frame_size ({}, {}) disagree with [model] ({}, {})",
                    s.clip_length, s.frame_size, self.model.clip_length, self.model.frame_size
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn recipe(&self) -> Recipe {
        Recipe {
            model: self.model.clone(),
            train: self.train.clone(),
            objective: self.objective,
        }
    }

    /// Sampler for `mode`, consistent with the model.
    pub fn sampler(&self, mode: SampleMode) -> SamplerConfig {
        SamplerConfig {
            clip_length: self.model.clip_length,
            mode,
            rng_seed: self.sampler.map_or(self.train.seed, |s| s.rng_seed),
            frame_size: self.model.frame_size,
        }
    }

    /// Output root: explicit argument, then `FINGERDIFF_OUT`, then
    /// `[paths] out_dir`, then `runs`.
    pub fn out_root(&self, explicit: Option<&Path>) -> PathBuf {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .or_else(|| self.paths.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn manifest_path(&self, out_root: &Path) -> PathBuf {
        self.paths
            .manifest
            .clone()
            .unwrap_or_else(|| self.data_dir(out_root).join(crate::dataset::synth::MANIFEST_FILE))
    }

    pub fn data_dir(&self, out_root: &Path) -> PathBuf {
        self.paths.data_dir.clone().unwrap_or_else(|| out_root.join("data"))
    }
}

/// Applies `section.key=value`. The value is parsed as a TOML literal,
/// falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("invalid override key `{key}`")));
    }
    let value = parse_value(raw.trim());
    let (last, sections) = parts.split_last().expect("non-empty key");
    let mut current = table;
    for s in sections {
        let entry = current
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{s}` is not a section")))?;
    }
    current.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Condition;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_apply_and_unknown_keys_fail() {
        let cfg = RunConfig::resolve(
            None,
            &[
                "model.condition=static".into(),
                "model.clip_length=16".into(),
                "train.base_lr=0.01".into(),
                "synth.style_tags=[\"x\", \"y\"]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.model.condition, Condition::Static);
        assert_eq!(cfg.model.clip_length, 16);
        assert_eq!(cfg.train.base_lr, 0.01);
        assert_eq!(cfg.synth.style_tags, vec!["x", "y"]);
        for bad in ["model.nonexistent=1", "bogus.key=2", "model.clip_length=abc", "noequals"] {
            let err = RunConfig::resolve(None, &[bad.into()]).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{bad}: {err:?}");
        }
    }

    #[test]
    fn sampler_must_agree_with_model() {
        let err = RunConfig::resolve(None, &["sampler.clip_length=32".into()]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let ok = RunConfig::resolve(
            None,
            &["sampler.clip_length=32".into(), "model.clip_length=32".into(), "sampler.rng_seed=5".into()],
        )
        .unwrap();
        assert_eq!(ok.sampler(SampleMode::TrainRandom).rng_seed, 5);
    }
}
