//! Per-target verification AUC: for each target identity, positives are
//! pairs of its self-reenactments and negatives pair a self-reenactment with
//! a cross-reenactment rendered on the same face.

mod benchmark;
mod experiments;
mod figures;
mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Manifest, Split, VideoRecord};
use crate::error::{Error, Result};
use crate::model::{Condition, Embedding, Model, ModelConfig};
use crate::sampling::{make_clip, SampleMode, SamplerConfig};

pub use experiments::{
    cross_generator_matrix, run_ablation, run_settings, AblationAxis, AblationRow, AblationTable,
    CrossGenMatrix, Recipe,
};
pub use benchmark::SyntheticBenchmark;
pub use figures::{condition_bars_svg, heatmap_svg};
pub use report::{emit_report, load_report, ReportArtifacts, ReportFile, REPORT_FILE};

/// A scored comparison between two videos of one target's pair set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub score: f64,
    pub is_positive: bool,
    pub target_id: String,
    /// Manifest record indices of the two videos.
    pub videos: [usize; 2],
}

/// An unscored pair of manifest record indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSpec {
    pub first: usize,
    pub second: usize,
    pub is_positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedTarget {
    pub target_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_target_auc: BTreeMap<String, f64>,
    pub mean_auc: f64,
    pub per_generator_auc: BTreeMap<String, f64>,
    pub condition: Condition,
    pub clip_length: usize,
    pub config_hash: String,
    pub skipped_targets: Vec<SkippedTarget>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub split: Split,
    pub per_generator: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: Split::Test,
            per_generator: true,
        }
    }
}

/// Mann–Whitney statistic: the fraction of (positive, negative) pairs where
/// the positive scores higher, ties counting one half.
pub fn auc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Data("auc needs at least one positive and one negative".into()));
    }
    if positives.iter().chain(negatives).any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite verification score".into()));
    }
    // Sort negatives once; each positive then contributes via two binary
    // searches. Counts stay integral until the final division.
    let mut neg = negatives.to_vec();
    neg.sort_by(f64::total_cmp);
    let mut twice_wins: u128 = 0;
    for &p in positives {
        let below = neg.partition_point(|&n| n < p);
        let not_above = neg.partition_point(|&n| n <= p);
        twice_wins += 2 * below as u128 + (not_above - below) as u128;
    }
    let total = 2 * positives.len() as u128 * negatives.len() as u128;
    Ok(twice_wins as f64 / total as f64)
}

/// Positive and negative pairs for one target among `indices` (records of
/// the manifest), or the reason the target cannot be evaluated.
pub fn pair_specs(
    records: &[VideoRecord],
    indices: &[usize],
    target_id: &str,
) -> std::result::Result<Vec<PairSpec>, String> {
    let (mut own, mut cross) = (Vec::new(), Vec::new());
    for &i in indices {
        let r = &records[i];
        if r.target_id != target_id {
            continue;
        }
        if r.is_self_reenactment() {
            own.push(i);
        } else {
            cross.push(i);
        }
    }
    if own.len() < 2 {
        return Err(format!("{} self-reenactment video(s), need 2", own.len()));
    }
    if cross.is_empty() {
        return Err("no cross-reenactment videos".into());
    }
    let mut pairs = Vec::with_capacity(own.len() * (own.len() - 1) / 2 + own.len() * cross.len());
    for (a, &i) in own.iter().enumerate() {
        for &j in &own[a + 1..] {
            pairs.push(PairSpec {
                first: i,
                second: j,
                is_positive: true,
            });
        }
    }
    for &i in &own {
        for &j in &cross {
            pairs.push(PairSpec {
                first: i,
                second: j,
                is_positive: false,
            });
        }
    }
    Ok(pairs)
}

/// Cosine-scored pairs for `target_id` over the whole manifest.
/// `embeddings[i]` belongs to `manifest.records()[i]`.
pub fn build_pairs(
    manifest: &Manifest,
    target_id: &str,
    embeddings: &[Embedding],
) -> Result<Vec<ScoredPair>> {
    let all: Vec<usize> = (0..manifest.len()).collect();
    let specs = pair_specs(manifest.records(), &all, target_id)
        .map_err(|reason| Error::Data(format!("target {target_id}: {reason}")))?;
    Ok(score_pairs(&specs, target_id, embeddings))
}

fn score_pairs(specs: &[PairSpec], target_id: &str, embeddings: &[Embedding]) -> Vec<ScoredPair> {
    specs
        .iter()
        .map(|p| ScoredPair {
            score: embeddings[p.first].cosine(&embeddings[p.second]),
            is_positive: p.is_positive,
            target_id: target_id.to_string(),
            videos: [p.first, p.second],
        })
        .collect()
}

fn pairs_auc(pairs: &[ScoredPair]) -> Result<f64> {
    let (pos, neg): (Vec<_>, Vec<_>) = pairs.iter().partition(|p| p.is_positive);
    auc(
        &pos.iter().map(|p| p.score).collect::<Vec<_>>(),
        &neg.iter().map(|p| p.score).collect::<Vec<_>>(),
    )
}

/// Per-target results over a subset of records.
fn target_aucs(
    manifest: &Manifest,
    indices: &[usize],
    embeddings: &[Embedding],
) -> Result<(BTreeMap<String, f64>, Vec<SkippedTarget>)> {
    let records = manifest.records();
    let mut targets: Vec<&str> = indices.iter().map(|&i| records[i].target_id.as_str()).collect();
    targets.sort_unstable();
    targets.dedup();
    let mut aucs = BTreeMap::new();
    let mut skipped = Vec::new();
    for t in targets {
        match pair_specs(records, indices, t) {
            Ok(specs) => {
                aucs.insert(t.to_string(), pairs_auc(&score_pairs(&specs, t, embeddings))?);
            }
            Err(reason) => skipped.push(SkippedTarget {
                target_id: t.to_string(),
                reason,
            }),
        }
    }
    Ok((aucs, skipped))
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Builds the report from precomputed embeddings (`embeddings[i]` for
/// record `i`; entries outside the split are ignored).
pub fn evaluate_embeddings(
    manifest: &Manifest,
    embeddings: &[Embedding],
    cfg: &EvalConfig,
    model_cfg: &ModelConfig,
) -> Result<EvalReport> {
    if embeddings.len() != manifest.len() {
        return Err(Error::Shape(format!(
            "{} embeddings for {} records",
            embeddings.len(),
            manifest.len()
        )));
    }
    let records = manifest.records();
    let in_split: Vec<usize> = (0..records.len()).filter(|&i| records[i].split == cfg.split).collect();
    if in_split.is_empty() {
        return Err(Error::Data(format!("{} split is empty", cfg.split)));
    }
    let (per_target_auc, skipped_targets) = target_aucs(manifest, &in_split, embeddings)?;
    if per_target_auc.is_empty() {
        return Err(Error::Data(format!(
            "no evaluable targets in the {} split",
            cfg.split
        )));
    }
    let mut per_generator_auc = BTreeMap::new();
    if cfg.per_generator {
        for g in manifest.generators() {
            let subset: Vec<usize> =
                in_split.iter().copied().filter(|&i| records[i].generator == g).collect();
            let (aucs, _) = target_aucs(manifest, &subset, embeddings)?;
            if !aucs.is_empty() {
                per_generator_auc.insert(g.to_string(), mean(aucs.values().copied()));
            }
        }
    }
    for s in &skipped_targets {
        log::warn!("skipped target {}: {}", s.target_id, s.reason);
    }
    Ok(EvalReport {
        mean_auc: mean(per_target_auc.values().copied()),
        per_target_auc,
        per_generator_auc,
        condition: model_cfg.condition,
        clip_length: model_cfg.clip_length,
        config_hash: config_hash(model_cfg),
        skipped_targets,
    })
}

/// Short stable digest of a model configuration.
pub fn config_hash(cfg: &ModelConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serialises");
    hex::encode(Sha256::digest(text.as_bytes()))[..16].to_string()
}

/// Eval-mode embedding of the centre clip of a video.
pub fn embed_video(record: &VideoRecord, model: &mut Model<f32>) -> Result<Embedding> {
    let cfg = model.config();
    let sampler = SamplerConfig {
        clip_length: cfg.clip_length,
        mode: SampleMode::EvalCenter,
        rng_seed: 0,
        frame_size: cfg.frame_size,
    };
    let clip = make_clip(record, &sampler)?;
    model.embed(clip.view())
}

/// Embeds the records of `split`; other slots hold an empty embedding.
pub fn embed_split(manifest: &Manifest, split: Split, model: &mut Model<f32>) -> Result<Vec<Embedding>> {
    manifest
        .records()
        .iter()
        .map(|r| {
            if r.split == split {
                embed_video(r, model)
            } else {
                Ok(Embedding(Vec::new()))
            }
        })
        .collect()
}

/// Embeds the chosen split and computes its report.
pub fn evaluate(manifest: &Manifest, model: &mut Model<f32>, cfg: &EvalConfig) -> Result<EvalReport> {
    let embeddings = embed_split(manifest, cfg.split, model)?;
    let model_cfg = model.config().clone();
    evaluate_embeddings(manifest, &embeddings, cfg, &model_cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8], &[0.7, 0.1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.8], &[0.8]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.4], &[0.6, 0.2]).unwrap(), 0.75);
        assert!(auc(&[], &[0.1]).is_err());
        assert!(auc(&[f64::NAN], &[0.1]).is_err());
    }

    fn record(i: usize, target: &str, driver: &str, generator: &str) -> VideoRecord {
        VideoRecord {
            video_path: PathBuf::from(format!("v{i}")),
            target_id: target.into(),
            driver_id: driver.into(),
            generator: generator.into(),
            split: Split::Test,
            num_frames: 4,
            fps: 25.0,
        }
    }

    #[test]
    fn pair_counts_and_skips() {
        let records = vec![
            record(0, "A", "A", "g"),
            record(1, "A", "A", "g"),
            record(2, "A", "A", "g"),
            record(3, "A", "B", "g"),
            record(4, "A", "B", "g"),
            record(5, "B", "B", "g"),
        ];
        let idx: Vec<usize> = (0..records.len()).collect();
        let pairs = pair_specs(&records, &idx, "A").unwrap();
        assert_eq!(pairs.iter().filter(|p| p.is_positive).count(), 3);
        assert_eq!(pairs.iter().filter(|p| !p.is_positive).count(), 6);
        assert!(pair_specs(&records, &idx, "B").is_err());
        assert!(pair_specs(&records[..3], &[0, 1, 2], "A").is_err());
    }

    #[test]
    fn constant_embeddings_give_chance() {
        let records: Vec<_> = [("A", "A"), ("A", "A"), ("A", "B"), ("B", "B"), ("B", "B"), ("B", "A")]
            .iter()
            .enumerate()
            .map(|(i, (t, d))| record(i, t, d, if i % 2 == 0 { "x" } else { "y" }))
            .collect();
        let m = Manifest::from_records(records).unwrap();
        let e = vec![Embedding(vec![0.6, 0.8]); m.len()];
        let r = evaluate_embeddings(&m, &e, &EvalConfig::default(), &ModelConfig::default()).unwrap();
        assert_eq!(r.per_target_auc.len(), 2);
        assert!(r.per_target_auc.values().all(|&a| a == 0.5));
        assert_eq!(r.mean_auc, 0.5);
    }
}
