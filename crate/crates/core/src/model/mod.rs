//! The per-frame backbone (ConvStack → FCC → CCC), the four input
//! representations fed to the temporal head, and the head itself.

mod ccc;
mod convstack;
mod fcc;
mod head;

pub use ccc::{cosine_knn, cosine_similarity_matrix, Ccc};
pub use convstack::{spatial_trace, ConvStack};
pub use fcc::{Direction, DirectionalConv, Fcc};
pub use head::{TemporalHead, POOL_GRID};

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, Array3, Array4, Array5, ArrayView4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, Module, Real, Visitor};

/// Which representation of the clip reaches the temporal head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Backbone per frame, then consecutive feature maps subtracted.
    FeatDiff,
    /// Frames subtracted in pixel space, then the backbone.
    PixelDiff,
    /// Backbone features stacked over time without differencing.
    RawFeat,
    /// A single center frame.
    Static,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::FeatDiff,
        Condition::PixelDiff,
        Condition::RawFeat,
        Condition::Static,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::FeatDiff => "feat_diff",
            Condition::PixelDiff => "pixel_diff",
            Condition::RawFeat => "raw_feat",
            Condition::Static => "static",
        }
    }

    /// Temporal extent of the head input for a clip of `frames` frames.
    pub fn temporal_extent(self, frames: usize) -> usize {
        match self {
            Condition::FeatDiff | Condition::PixelDiff => frames.saturating_sub(1),
            Condition::RawFeat => frames,
            Condition::Static => 1,
        }
    }

    fn min_frames(self) -> usize {
        match self {
            Condition::FeatDiff | Condition::PixelDiff => 2,
            Condition::RawFeat | Condition::Static => 1,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown condition `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub condition: Condition,
    pub clip_length: usize,
    pub ccc_k: usize,
    pub dropout: f64,
    pub embed_dim: usize,
    pub convstack_channels: [usize; 4],
    /// Side length frames are resized to before the backbone.
    pub frame_size: usize,
    pub head_channels: [usize; 2],
    pub mlp_hidden: usize,
    pub meta_kernel_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            condition: Condition::FeatDiff,
            clip_length: 64,
            ccc_k: 4,
            dropout: 0.3,
            embed_dim: 256,
            convstack_channels: [16, 32, 64, 128],
            frame_size: 128,
            head_channels: [64, 32],
            mlp_hidden: 256,
            meta_kernel_len: 32,
        }
    }
}

impl ModelConfig {
    pub fn feature_extent(&self) -> usize {
        spatial_trace(self.frame_size)[3]
    }

    pub fn feature_channels(&self) -> usize {
        self.convstack_channels[3]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.frame_size < 16 {
            return bad(format!("frame_size {} is below 16", self.frame_size));
        }
        if self.clip_length < self.condition.min_frames() {
            return bad(format!(
                "clip_length {} too short for {}",
                self.clip_length, self.condition
            ));
        }
        if self.convstack_channels.contains(&0) || self.head_channels.contains(&0) {
            return bad("channel widths must be positive".into());
        }
        if self.feature_channels() % 2 != 0 {
            return bad("the last ConvStack width must be even".into());
        }
        let extent = self.feature_extent();
        let positions = extent * extent;
        if self.ccc_k == 0 || self.ccc_k >= positions {
            return bad(format!(
                "ccc_k {} must be in [1, {positions})",
                self.ccc_k
            ));
        }
        if extent > self.meta_kernel_len {
            return bad(format!(
                "feature extent {extent} exceeds meta_kernel_len {}",
                self.meta_kernel_len
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.embed_dim == 0 || self.mlp_hidden == 0 {
            return bad("embed_dim and mlp_hidden must be positive".into());
        }
        Ok(())
    }
}

/// A per-frame backbone output, `C × H × W`.
pub type FeatureMap<F> = Array3<F>;

/// Stacked consecutive feature differences, `C × H × W × (T−1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionTensor<F>(pub Array4<F>);

impl<F: Real> MotionTensor<F> {
    pub fn shape(&self) -> &[usize] {
        self.0.shape()
    }

    pub fn data(&self) -> &Array4<F> {
        &self.0
    }
}

/// Maps `[0, 1]` pixels to `[−1, 1]` before the backbone.
fn centered<F: Real>(clip: &ArrayView4<'_, F>) -> Array4<F> {
    let half = F::of(0.5);
    let two = F::of(2.0);
    clip.mapv(|v| (v - half) * two)
}

/// `d_t = f_{t+1} − f_t`, stacked along a trailing time axis.
pub fn build_motion_tensor<F: Real>(maps: &[FeatureMap<F>]) -> Result<MotionTensor<F>> {
    if maps.len() < 2 {
        return Err(Error::Shape(format!(
            "motion tensor needs at least 2 feature maps, got {}",
            maps.len()
        )));
    }
    let dim = maps[0].dim();
    if let Some(m) = maps.iter().find(|m| m.dim() != dim) {
        return Err(Error::Shape(format!(
            "feature map {:?} differs from {:?}",
            m.dim(),
            dim
        )));
    }
    let slices = maps
        .windows(2)
        .map(|w| (&w[1] - &w[0]).insert_axis(Axis(3)))
        .collect::<Vec<_>>();
    let views = slices.iter().map(|a| a.view()).collect::<Vec<_>>();
    Ok(MotionTensor(
        concatenate(Axis(3), &views).expect("uniform slices"),
    ))
}

/// An ℓ2-normalised clip fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f32>);

impl Embedding {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
    }

    /// Cosine similarity, clamped to `[-1, 1]`.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        let dot: f64 = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            (dot / denom).clamp(-1.0, 1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub backbone: usize,
    pub head: usize,
    pub total: usize,
}

/// Exact learnable-parameter counts for a configuration.
pub fn count_parameters(cfg: &ModelConfig) -> Result<ParameterCount> {
    let mut model = Model::<f32>::new(cfg.clone(), 0)?;
    Ok(model.parameter_count())
}

#[derive(Debug, Clone, Copy)]
struct Trace {
    condition: Condition,
    batch: usize,
    time: usize,
}

/// The full fingerprinting network.
#[derive(Debug, Clone)]
pub struct Model<F> {
    cfg: ModelConfig,
    pub convstack: ConvStack<F>,
    pub fcc: Fcc<F>,
    pub ccc: Ccc<F>,
    pub head: TemporalHead<F>,
    train: bool,
    trace: Option<Trace>,
}

impl<F: Real> Model<F> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
        dropout_rng.set_stream(1);
        let c = cfg.feature_channels();
        let convstack = ConvStack::new(cfg.convstack_channels, &mut rng);
        let fcc = Fcc::new(c, cfg.meta_kernel_len, &mut rng);
        let ccc = Ccc::new(c, cfg.ccc_k, &mut rng);
        let head = TemporalHead::new(
            c,
            cfg.head_channels,
            cfg.mlp_hidden,
            cfg.embed_dim,
            cfg.dropout,
            dropout_rng,
            &mut rng,
        );
        Ok(Self {
            cfg,
            convstack,
            fcc,
            ccc,
            head,
            train: false,
            trace: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn set_train(&mut self, train: bool) {
        self.train = train;
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Restarts the dropout stream, e.g. per training step.
    pub fn reseed_dropout(&mut self, seed: u64) {
        self.head.reseed_dropout(ChaCha8Rng::seed_from_u64(seed));
    }

    pub fn parameter_count(&mut self) -> ParameterCount {
        let backbone =
            self.convstack.num_params() + self.fcc.num_params() + self.ccc.num_params();
        let head = self.head.num_params();
        ParameterCount {
            backbone,
            head,
            total: backbone + head,
        }
    }

    /// ConvStack → FCC → CCC on a `(N, 1, S, S, 1)` frame batch, with shared
    /// weights across frames. Returns `(N, C, h, w, 1)`.
    pub fn backbone_forward(&mut self, frames: Array5<F>) -> Array5<F> {
        let x = self.convstack.forward(frames, self.train);
        let x = self.fcc.forward(x);
        self.ccc.forward(x)
    }

    fn backbone_backward(&mut self, dy: Array5<F>) -> Array5<F> {
        let g = self.ccc.backward(dy);
        let g = self.fcc.backward(g);
        self.convstack.backward(g)
    }

    /// Backbone output for each frame of one `(T, 1, S, S)` clip.
    pub fn feature_maps(&mut self, clip: ArrayView4<'_, F>) -> Result<Vec<FeatureMap<F>>> {
        self.check_clip(&clip)?;
        let feats = self.backbone_forward(centered(&clip).insert_axis(Axis(4)));
        Ok(feats
            .outer_iter()
            .map(|f| f.index_axis(Axis(3), 0).to_owned())
            .collect())
    }

    fn check_clip(&self, clip: &ArrayView4<'_, F>) -> Result<()> {
        let (_, c, h, w) = clip.dim();
        let s = self.cfg.frame_size;
        if c != 1 || h != s || w != s {
            return Err(Error::Shape(format!(
                "clip frames are {c}×{h}×{w}, expected 1×{s}×{s}"
            )));
        }
        Ok(())
    }

    /// Builds the head input `(B, C, h, w, T')` for a batch of clips under
    /// the configured condition.
    pub fn condition_forward(&mut self, clips: &[ArrayView4<'_, F>]) -> Result<Array5<F>> {
        let condition = self.cfg.condition;
        let Some(first) = clips.first() else {
            return Err(Error::Shape("empty clip batch".into()));
        };
        let t = first.dim().0;
        for clip in clips {
            self.check_clip(clip)?;
            if clip.dim().0 != t {
                return Err(Error::Shape("clips in a batch differ in length".into()));
            }
        }
        if t < condition.min_frames() {
            return Err(Error::Shape(format!(
                "{condition} needs at least {} frames, got {t}",
                condition.min_frames()
            )));
        }
        let b = clips.len();
        let frames: Vec<Array4<F>> = match condition {
            Condition::FeatDiff | Condition::RawFeat => clips.iter().map(centered).collect(),
            Condition::PixelDiff => clips
                .iter()
                .map(|c| {
                    let c = centered(c);
                    &c.slice(s![1.., .., .., ..]) - &c.slice(s![..t - 1, .., .., ..])
                })
                .collect(),
            Condition::Static => clips
                .iter()
                .map(|c| centered(&c.slice(s![t / 2..t / 2 + 1, .., .., ..])))
                .collect(),
        };
        let per_clip = frames[0].dim().0;
        let views = frames.iter().map(|f| f.view()).collect::<Vec<_>>();
        let batch = concatenate(Axis(0), &views)
            .expect("uniform frames")
            .insert_axis(Axis(4));
        let feats = self.backbone_forward(batch);
        let stacked = stack_time(feats, b, per_clip);
        let out = match condition {
            Condition::FeatDiff => diff_time(&stacked),
            _ => stacked,
        };
        self.trace = Some(Trace {
            condition,
            batch: b,
            time: per_clip,
        });
        Ok(out)
    }

    pub fn head_forward(&mut self, x: Array5<F>) -> Array2<F> {
        self.head.forward(x, self.train)
    }

    /// Embeddings `(B, D)` for a batch of clips.
    pub fn forward(&mut self, clips: &[ArrayView4<'_, F>]) -> Result<Array2<F>> {
        let x = self.condition_forward(clips)?;
        Ok(self.head_forward(x))
    }

    /// Back-propagates `∂L/∂embedding` through the whole network, accumulating
    /// parameter gradients.
    pub fn backward(&mut self, d_embedding: Array2<F>) {
        let trace = self.trace.take().expect("forward before backward");
        let dh = self.head.backward(d_embedding);
        let dstack = match trace.condition {
            Condition::FeatDiff => undiff_time(&dh),
            _ => dh,
        };
        debug_assert_eq!(dstack.dim().4, trace.time);
        let dfeats = unstack_time(dstack, trace.batch, trace.time);
        self.backbone_backward(dfeats);
    }

    /// Eval-mode embedding of a single `(T, 1, S, S)` clip.
    pub fn embed(&mut self, clip: ArrayView4<'_, F>) -> Result<Embedding> {
        let was_train = self.train;
        self.train = false;
        let out = self.forward(&[clip]);
        self.train = was_train;
        self.trace = None;
        let e = out?;
        Ok(Embedding(e.row(0).iter().map(|v| v.as_f64() as f32).collect()))
    }
}

impl<F: Real> Module<F> for Model<F> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<F>) {
        self.convstack.visit(&join(prefix, "backbone.convstack"), v);
        self.fcc.visit(&join(prefix, "backbone.fcc"), v);
        self.ccc.visit(&join(prefix, "backbone.ccc"), v);
        self.head.visit(&join(prefix, "head"), v);
    }
}

/// `(B·T, C, h, w, 1)` → `(B, C, h, w, T)`.
fn stack_time<F: Real>(feats: Array5<F>, b: usize, t: usize) -> Array5<F> {
    let (_, c, h, w, _) = feats.dim();
    feats
        .into_shape_with_order((b, t, c, h, w))
        .expect("standard layout")
        .permuted_axes([0, 2, 3, 4, 1])
        .as_standard_layout()
        .into_owned()
}

fn unstack_time<F: Real>(x: Array5<F>, b: usize, t: usize) -> Array5<F> {
    let (_, c, h, w, _) = x.dim();
    x.permuted_axes([0, 4, 1, 2, 3])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((b * t, c, h, w, 1))
        .expect("standard layout")
}

fn diff_time<F: Real>(x: &Array5<F>) -> Array5<F> {
    &x.slice(s![.., .., .., .., 1..]) - &x.slice(s![.., .., .., .., ..-1])
}

fn undiff_time<F: Real>(d: &Array5<F>) -> Array5<F> {
    let (b, c, h, w, t) = d.dim();
    let mut out = Array5::zeros((b, c, h, w, t + 1));
    out.slice_mut(s![.., .., .., .., 1..]).assign(d);
    let mut head = out.slice_mut(s![.., .., .., .., ..t]);
    head -= d;
    out
}
