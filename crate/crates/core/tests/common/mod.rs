#![allow(dead_code)]

use std::path::{Path, PathBuf};

use fingerdiff::dataset::{Manifest, Split, SynthConfig, VideoRecord};
use fingerdiff::model::{Condition, ModelConfig};
use fingerdiff::training::TrainConfig;

/// A network small enough for many training runs inside a test.
pub fn tiny_model(condition: Condition, clip_length: usize) -> ModelConfig {
    ModelConfig {
        condition,
        clip_length,
        ccc_k: 2,
        dropout: 0.1,
        embed_dim: 16,
        convstack_channels: [4, 8, 8, 8],
        frame_size: 32,
        head_channels: [8, 8],
        mlp_hidden: 16,
        meta_kernel_len: 32,
    }
}

pub fn tiny_train(n: usize, m: usize, epochs: usize, steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        n_identities_per_batch: n,
        clips_per_identity: m,
        epochs,
        steps_per_epoch: steps,
        warmup_epochs: 0,
        seed,
        ..TrainConfig::default()
    }
}

pub fn tiny_synth(n_identities: usize, test_identities: usize) -> SynthConfig {
    SynthConfig {
        n_identities,
        videos_per_pair: 2,
        frame_count_range: [10, 14],
        frame_size: 32,
        motion_seed: 5,
        style_tags: vec!["style_a".into()],
        val_identities: 0,
        test_identities,
        fps: 25.0,
    }
}

/// In-memory record; the path need not exist.
pub fn record(path: &str, target: &str, driver: &str, generator: &str, split: Split) -> VideoRecord {
    VideoRecord {
        video_path: PathBuf::from(path),
        target_id: target.into(),
        driver_id: driver.into(),
        generator: generator.into(),
        split,
        num_frames: 20,
        fps: 25.0,
    }
}

pub fn manifest_lines(m: &Manifest) -> Vec<String> {
    m.records().iter().map(|r| serde_json::to_string(r).unwrap()).collect()
}

/// Writes `n` constant grayscale frames of value `v` into `dir`.
pub fn write_constant_frames(dir: &Path, n: usize, size: u32, v: u8) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        image::GrayImage::from_pixel(size, size, image::Luma([v]))
            .save(dir.join(format!("frame_{i:05}.png")))
            .unwrap();
    }
}

/// Writes frames whose value encodes the frame index.
pub fn write_indexed_frames(dir: &Path, n: usize, size: u32) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        image::GrayImage::from_pixel(size, size, image::Luma([(i * 3) as u8]))
            .save(dir.join(format!("frame_{i:05}.png")))
            .unwrap();
    }
}
