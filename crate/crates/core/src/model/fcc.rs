//! Fully-connected convolution: directional circular 1-D convolutions whose
//! kernels span the whole feature-map extent, so every output location sees
//! its complete row or column.

use ndarray::{concatenate, s, Array5, Axis};
use rand::Rng;

use crate::nn::{join, Conv3d, Module, Param, Real, Visitor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Height,
    Width,
}

/// Depthwise circular convolution along one spatial axis.
///
/// The learnable meta-kernel has a fixed length; at runtime it is
/// center-cropped to the extent of the axis it slides over.
#[derive(Debug, Clone)]
pub struct DirectionalConv<F> {
    pub kernel: Param<F>,
    pub bias: Param<F>,
    direction: Direction,
    meta_len: usize,
    input: Option<Array5<F>>,
}

impl<F: Real> DirectionalConv<F> {
    pub fn new<R: Rng + ?Sized>(
        channels: usize,
        meta_len: usize,
        direction: Direction,
        rng: &mut R,
    ) -> Self {
        // Unit-gain taps for the nominal runtime extent of half the meta-kernel.
        let bound = (3.0 / (meta_len / 2).max(1) as f64).sqrt();
        Self {
            kernel: Param::uniform(&[channels, meta_len], bound, rng),
            bias: Param::zeros(&[channels]),
            direction,
            meta_len,
            input: None,
        }
    }

    fn crop_start(&self, extent: usize) -> usize {
        assert!(
            extent <= self.meta_len,
            "feature extent {extent} exceeds meta-kernel length {}",
            self.meta_len
        );
        (self.meta_len - extent) / 2
    }

    /// Source index feeding output `i` through tap `m` on an axis of length `e`.
    #[inline]
    fn src(i: usize, m: usize, e: usize) -> usize {
        (i + m + e - e / 2) % e
    }

    pub fn forward(&mut self, x: Array5<F>) -> Array5<F> {
        let x = x.as_standard_layout().into_owned();
        let (n, c, h, w, d) = x.dim();
        assert_eq!(d, 1, "directional conv expects a unit trailing axis");
        let extent = match self.direction {
            Direction::Height => h,
            Direction::Width => w,
        };
        let start = self.crop_start(extent);
        let mut y = Array5::<F>::zeros(x.raw_dim());
        let xs = x.as_slice().expect("standard layout");
        let ys = y.as_slice_mut().expect("standard layout");
        let plane = h * w;
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                let xp = &xs[off..off + plane];
                let yp = &mut ys[off..off + plane];
                let taps = self.kernel.value.slice(s![ch, start..start + extent]);
                yp.fill(self.bias.value[ch]);
                match self.direction {
                    Direction::Height => {
                        for i in 0..h {
                            let yr = &mut yp[i * w..(i + 1) * w];
                            for (m, &k) in taps.iter().enumerate() {
                                let sr = Self::src(i, m, h);
                                let xr = &xp[sr * w..(sr + 1) * w];
                                for (yv, &xv) in yr.iter_mut().zip(xr) {
                                    *yv += k * xv;
                                }
                            }
                        }
                    }
                    Direction::Width => {
                        for i in 0..h {
                            let xr = &xp[i * w..(i + 1) * w];
                            for j in 0..w {
                                let mut acc = F::zero();
                                for (m, &k) in taps.iter().enumerate() {
                                    acc += k * xr[Self::src(j, m, w)];
                                }
                                yp[i * w + j] += acc;
                            }
                        }
                    }
                }
            }
        }
        self.input = Some(x);
        y
    }

    pub fn backward(&mut self, dy: Array5<F>) -> Array5<F> {
        let x = self.input.take().expect("forward before backward");
        let dy = dy.as_standard_layout().into_owned();
        let (n, c, h, w, _) = x.dim();
        let extent = match self.direction {
            Direction::Height => h,
            Direction::Width => w,
        };
        let start = self.crop_start(extent);
        let mut dx = Array5::<F>::zeros(x.raw_dim());
        let xs = x.as_slice().expect("standard layout");
        let gs = dy.as_slice().expect("standard layout");
        let dxs = dx.as_slice_mut().expect("standard layout");
        let plane = h * w;
        for ch in 0..c {
            let taps: Vec<F> = self
                .kernel
                .value
                .slice(s![ch, start..start + extent])
                .to_vec();
            let mut dk = vec![F::zero(); extent];
            let mut db = F::zero();
            for b in 0..n {
                let off = (b * c + ch) * plane;
                let xp = &xs[off..off + plane];
                let gp = &gs[off..off + plane];
                let dp = &mut dxs[off..off + plane];
                db += gp.iter().copied().sum::<F>();
                match self.direction {
                    Direction::Height => {
                        for i in 0..h {
                            let gr = &gp[i * w..(i + 1) * w];
                            for m in 0..extent {
                                let sr = Self::src(i, m, h);
                                let xr = &xp[sr * w..(sr + 1) * w];
                                let mut acc = F::zero();
                                for (&g, &xv) in gr.iter().zip(xr) {
                                    acc += g * xv;
                                }
                                dk[m] += acc;
                                let dr = &mut dp[sr * w..(sr + 1) * w];
                                for (dv, &g) in dr.iter_mut().zip(gr) {
                                    *dv += taps[m] * g;
                                }
                            }
                        }
                    }
                    Direction::Width => {
                        for i in 0..h {
                            for j in 0..w {
                                let g = gp[i * w + j];
                                for m in 0..extent {
                                    let sj = i * w + Self::src(j, m, w);
                                    dk[m] += g * xp[sj];
                                    dp[sj] += taps[m] * g;
                                }
                            }
                        }
                    }
                }
            }
            for (m, v) in dk.into_iter().enumerate() {
                self.kernel.grad[[ch, start + m]] += v;
            }
            self.bias.grad[ch] += db;
        }
        dx
    }
}

impl<F: Real> Module<F> for DirectionalConv<F> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<F>) {
        v.param(&join(prefix, "kernel"), &mut self.kernel);
        v.param(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Two asymmetric branches (height-then-width and width-then-height) over the
/// two channel halves, concatenated and fused by a 1×1 convolution.
#[derive(Debug, Clone)]
pub struct Fcc<F> {
    pub hw_first: DirectionalConv<F>,
    pub hw_second: DirectionalConv<F>,
    pub wh_first: DirectionalConv<F>,
    pub wh_second: DirectionalConv<F>,
    pub fuse: Conv3d<F>,
    half: usize,
}

impl<F: Real> Fcc<F> {
    pub fn new<R: Rng + ?Sized>(channels: usize, meta_len: usize, rng: &mut R) -> Self {
        assert!(channels % 2 == 0, "FCC needs an even channel count");
        let half = channels / 2;
        Self {
            hw_first: DirectionalConv::new(half, meta_len, Direction::Height, rng),
            hw_second: DirectionalConv::new(half, meta_len, Direction::Width, rng),
            wh_first: DirectionalConv::new(half, meta_len, Direction::Width, rng),
            wh_second: DirectionalConv::new(half, meta_len, Direction::Height, rng),
            fuse: Conv3d::new(channels, channels, [1, 1, 1], [1, 1, 1], [0, 0, 0], true, rng),
            half,
        }
    }

    /// Runs only the height-then-width branch on a half-width input.
    pub fn hw_branch(&mut self, x: Array5<F>) -> Array5<F> {
        let a = self.hw_first.forward(x);
        self.hw_second.forward(a)
    }

    pub fn forward(&mut self, x: Array5<F>) -> Array5<F> {
        let a = x.slice(s![.., ..self.half, .., .., ..]).to_owned();
        let b = x.slice(s![.., self.half.., .., .., ..]).to_owned();
        let a = self.hw_branch(a);
        let b = self.wh_first.forward(b);
        let b = self.wh_second.forward(b);
        let cat = concatenate(Axis(1), &[a.view(), b.view()]).expect("matching halves");
        self.fuse.forward(cat)
    }

    pub fn backward(&mut self, dy: Array5<F>) -> Array5<F> {
        let dcat = self.fuse.backward(dy);
        let da = dcat.slice(s![.., ..self.half, .., .., ..]).to_owned();
        let db = dcat.slice(s![.., self.half.., .., .., ..]).to_owned();
        let da = self.hw_first.backward(self.hw_second.backward(da));
        let db = self.wh_first.backward(self.wh_second.backward(db));
        concatenate(Axis(1), &[da.view(), db.view()]).expect("matching halves")
    }
}

impl<F: Real> Module<F> for Fcc<F> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<F>) {
        self.hw_first.visit(&join(prefix, "hw.h"), v);
        self.hw_second.visit(&join(prefix, "hw.w"), v);
        self.wh_first.visit(&join(prefix, "wh.w"), v);
        self.wh_second.visit(&join(prefix, "wh.h"), v);
        self.fuse.visit(&join(prefix, "fuse"), v);
    }
}
