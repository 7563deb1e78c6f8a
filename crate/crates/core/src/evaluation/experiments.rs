//! Multi-run experiments: cross-generator matrices and ablations.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{evaluate, EvalConfig, EvalReport};
use crate::dataset::{Manifest, Split};
use crate::error::{Error, Result};
use crate::model::{Condition, Model, ModelConfig};
use crate::objective::SupConConfig;
use crate::training::{load_checkpoint, train, TrainConfig};

/// Everything needed to train one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub objective: SupConConfig,
}

impl Recipe {
    /// Trains on `manifest` and returns the selected model in eval mode.
    pub fn fit(&self, manifest: &Manifest, out_dir: &Path) -> Result<Model<f32>> {
        let outcome = train(manifest, &self.model, &self.train, &self.objective, out_dir)?;
        let mut model = match &outcome.best_checkpoint {
            Some(best) => load_checkpoint(best, Some(&self.model))?.0,
            None => outcome.model,
        };
        model.set_train(false);
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossGenMatrix {
    /// Row labels.
    pub train_generators: Vec<String>,
    /// Column labels.
    pub test_generators: Vec<String>,
    /// `auc[row][col]`.
    pub auc: Vec<Vec<f64>>,
}

impl CrossGenMatrix {
    pub fn diagonal_mean(&self) -> f64 {
        let n = self.auc.len().min(self.test_generators.len());
        (0..n).map(|i| self.auc[i][i]).sum::<f64>() / n as f64
    }

    pub fn off_diagonal_mean(&self) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for (i, row) in self.auc.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if i != j {
                    sum += v;
                    n += 1;
                }
            }
        }
        sum / n as f64
    }
}

/// Trains one model per generator tag and evaluates it on the test split of
/// every tag.
pub fn cross_generator_matrix(
    manifest: &Manifest,
    recipe: &Recipe,
    out_dir: &Path,
) -> Result<CrossGenMatrix> {
    let tags: Vec<String> = manifest.generators().into_iter().map(String::from).collect();
    if tags.len() < 2 {
        return Err(Error::Data(format!(
            "cross-generator evaluation needs at least 2 generators, found {}",
            tags.len()
        )));
    }
    let per_tag: Vec<Manifest> = tags
        .iter()
        .map(|t| manifest.filter(|r| &r.generator == t))
        .collect();
    let mut auc = Vec::with_capacity(tags.len());
    for (tag, sub) in tags.iter().zip(&per_tag) {
        log::info!("cross-gen: training on {tag}");
        let mut model = recipe.fit(sub, &out_dir.join(format!("train_{tag}")))?;
        let row = per_tag
            .iter()
            .map(|test| Ok(evaluate(test, &mut model, &EvalConfig { split: Split::Test, per_generator: false })?.mean_auc))
            .collect::<Result<Vec<_>>>()?;
        auc.push(row);
    }
    Ok(CrossGenMatrix {
        train_generators: tags.clone(),
        test_generators: tags,
        auc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Condition,
    ClipLength,
}

impl AblationAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::Condition => "condition",
            AblationAxis::ClipLength => "clip_length",
        }
    }

    /// Default settings: all four input conditions, or `T ∈ {16, 32, 64, 128}`.
    pub fn default_settings(self, base: &Recipe) -> Vec<(String, Recipe)> {
        match self {
            AblationAxis::Condition => Condition::ALL
                .iter()
                .map(|&c| {
                    let mut r = base.clone();
                    r.model.condition = c;
                    (c.to_string(), r)
                })
                .collect(),
            AblationAxis::ClipLength => [16, 32, 64, 128]
                .iter()
                .map(|&t| {
                    let mut r = base.clone();
                    r.model.clip_length = t;
                    (t.to_string(), r)
                })
                .collect(),
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "condition" => Ok(AblationAxis::Condition),
            "clip_length" => Ok(AblationAxis::ClipLength),
            other => Err(Error::Config(format!(
                "unknown ablation axis `{other}` (expected condition or clip_length)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub mean_auc: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Tab-separated `setting  mean_auc` lines under a header.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{}\tmean_auc\n", self.axis);
        for r in &self.rows {
            out.push_str(&format!("{}\t{:.4}\n", r.setting, r.mean_auc));
        }
        out
    }

    pub fn auc_of(&self, setting: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.setting == setting).map(|r| r.mean_auc)
    }
}

/// Trains and evaluates each labelled recipe on the same data.
pub fn run_settings(
    manifest: &Manifest,
    settings: &[(String, Recipe)],
    eval: &EvalConfig,
    out_dir: &Path,
) -> Result<Vec<AblationRow>> {
    settings
        .iter()
        .map(|(label, recipe)| {
            log::info!("setting {label}: training");
            let mut model = recipe.fit(manifest, &out_dir.join(label))?;
            let report = evaluate(manifest, &mut model, eval)?;
            log::info!("setting {label}: mean AUC {:.4}", report.mean_auc);
            Ok(AblationRow {
                setting: label.clone(),
                mean_auc: report.mean_auc,
                report,
            })
        })
        .collect()
}

/// Varies one axis of `base` with everything else fixed.
pub fn run_ablation(
    manifest: &Manifest,
    base: &Recipe,
    axis: AblationAxis,
    out_dir: &Path,
) -> Result<AblationTable> {
    let settings = axis.default_settings(base);
    let rows = run_settings(manifest, &settings, &EvalConfig::default(), out_dir)?;
    Ok(AblationTable { axis, rows })
}
