use ndarray::Array5;
use rand::Rng;

use crate::nn::{join, BatchNorm, Conv3d, Module, Real, Relu, Visitor};

pub(crate) const KERNELS: [usize; 4] = [4, 3, 2, 1];
pub(crate) const STRIDES: [usize; 4] = [2, 2, 2, 1];
pub(crate) const PADDINGS: [usize; 4] = [1, 1, 0, 0];

/// Spatial side length after each ConvStack layer for a square input.
pub fn spatial_trace(frame_size: usize) -> [usize; 4] {
    let mut out = [0; 4];
    let mut side = frame_size;
    for i in 0..4 {
        side = (side + 2 * PADDINGS[i]).saturating_sub(KERNELS[i]) / STRIDES[i] + 1;
        out[i] = side;
    }
    out
}

/// Four conv → batch-norm → ReLU stages mapping `1×S×S` frames to
/// `C×S/8×S/8` feature maps.
#[derive(Debug, Clone)]
pub struct ConvStack<F> {
    convs: Vec<Conv3d<F>>,
    norms: Vec<BatchNorm<F>>,
    relus: Vec<Relu>,
}

impl<F: Real> ConvStack<F> {
    pub fn new<R: Rng + ?Sized>(channels: [usize; 4], rng: &mut R) -> Self {
        let mut convs = Vec::with_capacity(4);
        let mut inputs = 1;
        for (i, &out) in channels.iter().enumerate() {
            let (k, s, p) = (KERNELS[i], STRIDES[i], PADDINGS[i]);
            // no bias: every conv is immediately followed by batch norm
            convs.push(Conv3d::new(inputs, out, [k, k, 1], [s, s, 1], [p, p, 0], false, rng));
            inputs = out;
        }
        Self {
            convs,
            norms: channels.iter().map(|&c| BatchNorm::new(c)).collect(),
            relus: vec![Relu::default(); 4],
        }
    }

    /// `(N, 1, S, S, 1)` frames to `(N, C, S/8, S/8, 1)` features.
    pub fn forward(&mut self, mut x: Array5<F>, train: bool) -> Array5<F> {
        for i in 0..4 {
            x = self.convs[i].forward(x);
            x = self.norms[i].forward(x, train);
            x = self.relus[i].forward(x);
        }
        x
    }

    pub fn backward(&mut self, mut dy: Array5<F>) -> Array5<F> {
        for i in (0..4).rev() {
            dy = self.relus[i].backward(dy);
            dy = self.norms[i].backward(dy);
            dy = self.convs[i].backward(dy);
        }
        dy
    }
}

impl<F: Real> Module<F> for ConvStack<F> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<F>) {
        for (i, (conv, norm)) in self.convs.iter_mut().zip(&mut self.norms).enumerate() {
            conv.visit(&join(prefix, &format!("conv{i}")), v);
            norm.visit(&join(prefix, &format!("bn{i}")), v);
        }
    }
}
