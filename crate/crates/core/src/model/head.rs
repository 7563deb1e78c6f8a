use ndarray::{Array2, Array5};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{
    join, AdaptiveAvgPool3d, BatchNorm, Conv3d, Dropout, L2Normalize, Linear, Module, Real, Relu,
    Visitor,
};

/// Pooled spatial grid (H, W); the temporal axis always collapses to 1.
pub const POOL_GRID: [usize; 2] = [4, 4];

/// Temporal identity head: two strided 3-D convolutions over
/// `(B, C, H, W, T)`, adaptive pooling, a two-layer perceptron and ℓ2
/// normalisation.
#[derive(Debug, Clone)]
pub struct TemporalHead<F> {
    conv1: Conv3d<F>,
    bn1: BatchNorm<F>,
    relu1: Relu,
    conv2: Conv3d<F>,
    bn2: BatchNorm<F>,
    relu2: Relu,
    pool: AdaptiveAvgPool3d,
    fc1: Linear<F>,
    relu3: Relu,
    dropout: Dropout<F>,
    fc2: Linear<F>,
    norm: L2Normalize<F>,
    pooled_dims: Option<(usize, usize, usize, usize, usize)>,
    stage_shapes: Vec<Vec<usize>>,
}

impl<F: Real> TemporalHead<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        channels: [usize; 2],
        hidden: usize,
        embed_dim: usize,
        dropout: f64,
        dropout_rng: ChaCha8Rng,
        rng: &mut R,
    ) -> Self {
        // kernel 3 with padding 1 on every axis; stride 2 on H only
        let k = [3, 3, 3];
        let s = [2, 1, 1];
        let p = [1, 1, 1];
        let flat = channels[1] * POOL_GRID[0] * POOL_GRID[1];
        Self {
            conv1: Conv3d::new(in_channels, channels[0], k, s, p, false, rng),
            bn1: BatchNorm::new(channels[0]),
            relu1: Relu::default(),
            conv2: Conv3d::new(channels[0], channels[1], k, s, p, false, rng),
            bn2: BatchNorm::new(channels[1]),
            relu2: Relu::default(),
            pool: AdaptiveAvgPool3d::new([POOL_GRID[0], POOL_GRID[1], 1]),
            fc1: Linear::new(flat, hidden, rng),
            relu3: Relu::default(),
            dropout: Dropout::new(dropout, dropout_rng),
            fc2: Linear::new(hidden, embed_dim, rng),
            norm: L2Normalize::new(),
            pooled_dims: None,
            stage_shapes: Vec::new(),
        }
    }

    /// `(H, W, T)` after each convolution stage for a head input with
    /// spatial-temporal extent `dims`.
    pub fn shape_trace(&self, dims: [usize; 3]) -> [[usize; 3]; 2] {
        let a = self.conv1.out_dims(dims);
        [a, self.conv2.out_dims(a)]
    }

    /// Tensor shapes seen by the most recent forward pass: input, after each
    /// convolution block, pooled, flattened and embedded.
    pub fn last_stage_shapes(&self) -> &[Vec<usize>] {
        &self.stage_shapes
    }

    pub fn reseed_dropout(&mut self, rng: ChaCha8Rng) {
        self.dropout.reseed(rng);
    }

    pub fn forward(&mut self, x: Array5<F>, train: bool) -> Array2<F> {
        self.stage_shapes.clear();
        self.stage_shapes.push(x.shape().to_vec());
        let x = self.conv1.forward(x);
        let x = self.bn1.forward(x, train);
        let x = self.relu1.forward(x);
        self.stage_shapes.push(x.shape().to_vec());
        let x = self.conv2.forward(x);
        let x = self.bn2.forward(x, train);
        let x = self.relu2.forward(x);
        self.stage_shapes.push(x.shape().to_vec());
        let pooled = self.pool.forward(&x);
        self.stage_shapes.push(pooled.shape().to_vec());
        let dims = pooled.dim();
        self.pooled_dims = Some(dims);
        let flat = pooled
            .into_shape_with_order((dims.0, dims.1 * dims.2 * dims.3 * dims.4))
            .expect("standard layout");
        self.stage_shapes.push(flat.shape().to_vec());
        let h = self.fc1.forward(flat);
        let h = self.relu3.forward(h);
        let h = self.dropout.forward(h, train);
        let e = self.fc2.forward(h);
        let out = self.norm.forward(e);
        self.stage_shapes.push(out.shape().to_vec());
        out
    }

    pub fn backward(&mut self, dy: Array2<F>) -> Array5<F> {
        let g = self.norm.backward(dy);
        let g = self.fc2.backward(g);
        let g = self.dropout.backward(g);
        let g = self.relu3.backward(g);
        let g = self.fc1.backward(g);
        let dims = self.pooled_dims.take().expect("forward before backward");
        let g = g.into_shape_with_order(dims).expect("pooled shape");
        let g = self.pool.backward(&g);
        let g = self.relu2.backward(g);
        let g = self.bn2.backward(g);
        let g = self.conv2.backward(g);
        let g = self.relu1.backward(g);
        let g = self.bn1.backward(g);
        self.conv1.backward(g)
    }
}

impl<F: Real> Module<F> for TemporalHead<F> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<F>) {
        self.conv1.visit(&join(prefix, "conv1"), v);
        self.bn1.visit(&join(prefix, "bn1"), v);
        self.conv2.visit(&join(prefix, "conv2"), v);
        self.bn2.visit(&join(prefix, "bn2"), v);
        self.fc1.visit(&join(prefix, "fc1"), v);
        self.fc2.visit(&join(prefix, "fc2"), v);
    }
}
