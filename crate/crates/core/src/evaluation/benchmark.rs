//! A small synthetic benchmark that trains in minutes on a CPU: 10
//! identities at 32×32, 8 of them for training and 2 held out as test
//! targets and drivers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate, EvalConfig, EvalReport, Recipe};
use crate::dataset::{generate_synthetic_dataset, load_manifest, Manifest, SynthConfig, MANIFEST_FILE};
use crate::error::Result;
use crate::model::{Condition, ModelConfig};
use crate::objective::SupConConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticBenchmark {
    pub condition: Condition,
    pub clip_length: usize,
    /// Side length of the rendered frames and of the model input.
    pub frame_size: usize,
    pub seed: u64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
}

impl Default for SyntheticBenchmark {
    fn default() -> Self {
        Self {
            condition: Condition::FeatDiff,
            clip_length: 16,
            frame_size: 32,
            seed: 0,
            epochs: 16,
            steps_per_epoch: 75,
        }
    }
}

impl SyntheticBenchmark {
    /// The dataset depends only on the frame size, so runs that differ in
    /// seed, condition or clip length share one rendering.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_identities: 10,
            videos_per_pair: 6,
            frame_count_range: [48, 64],
            frame_size: self.frame_size,
            motion_seed: 7,
            style_tags: vec!["style_a".into()],
            val_identities: 0,
            test_identities: 2,
            fps: 25.0,
        }
    }

    pub fn recipe(&self) -> Recipe {
        Recipe {
            model: ModelConfig {
                condition: self.condition,
                clip_length: self.clip_length,
                ccc_k: 4,
                dropout: 0.1,
                embed_dim: 64,
                convstack_channels: [8, 16, 32, 32],
                frame_size: self.frame_size,
                head_channels: [32, 32],
                mlp_hidden: 64,
                meta_kernel_len: 32,
            },
            train: TrainConfig {
                n_identities_per_batch: 8,
                clips_per_identity: 4,
                epochs: self.epochs,
                steps_per_epoch: self.steps_per_epoch,
                base_lr: 3e-3,
                warmup_epochs: 1,
                seed: self.seed,
                ..TrainConfig::default()
            },
            objective: SupConConfig {
                temperature: 0.1,
                ..SupConConfig::default()
            },
        }
    }

    /// Loads the dataset from `data_dir`, rendering it first if the
    /// manifest is missing.
    pub fn dataset(&self, data_dir: &Path) -> Result<Manifest> {
        let path = data_dir.join(MANIFEST_FILE);
        if path.exists() {
            load_manifest(&path)
        } else {
            generate_synthetic_dataset(&self.synth_config(), data_dir)
        }
    }

    /// Trains under `run_dir` and evaluates on the test split.
    pub fn run(&self, manifest: &Manifest, run_dir: &Path) -> Result<EvalReport> {
        let mut model = self.recipe().fit(manifest, run_dir)?;
        evaluate(manifest, &mut model, &EvalConfig::default())
    }
}
