use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array5, ArrayView2, Axis};
use rand::Rng;

use super::{he_bound, join, Module, Param, Real, Visitor};

/// Dense 3-D convolution over `(N, C, D0, D1, D2)` tensors, lowered to GEMM
/// through im2col. Two-dimensional convolutions use a trailing unit axis.
#[derive(Debug, Clone)]
pub struct Conv3d<F> {
    pub weight: Param<F>,
    pub bias: Option<Param<F>>,
    in_channels: usize,
    out_channels: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    input: Option<Array5<F>>,
}

impl<F: Real> Conv3d<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel.iter().product::<usize>();
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Param::uniform(
            &[out_channels, in_channels, kernel[0], kernel[1], kernel[2]],
            he_bound(fan_in),
            rng,
        );
        let bias = bias.then(|| Param::uniform(&[out_channels], bound, rng));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            input: None,
        }
    }

    pub fn out_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        let mut out = [0; 3];
        for a in 0..3 {
            out[a] = (dims[a] + 2 * self.pad[a] - self.kernel[a]) / self.stride[a] + 1;
        }
        out
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    fn weight_matrix(&self) -> ArrayView2<'_, F> {
        let k = self.in_channels * self.kernel.iter().product::<usize>();
        self.weight
            .value
            .view()
            .into_shape_with_order((self.out_channels, k))
            .expect("weight is contiguous")
    }

    pub fn forward(&mut self, x: Array5<F>) -> Array5<F> {
        let x = x.as_standard_layout().into_owned();
        let (n, c, d0, d1, d2) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let o = self.out_dims([d0, d1, d2]);
        let p = o[0] * o[1] * o[2];
        let k = self.in_channels * self.kernel.iter().product::<usize>();
        let mut out = Array5::<F>::zeros((n, self.out_channels, o[0], o[1], o[2]));
        let mut cols = Array2::<F>::zeros((k, p));
        let w = self.weight_matrix();
        for s in 0..n {
            let xs = x.index_axis(Axis(0), s);
            let xs = xs.as_slice().expect("contiguous sample");
            let mut os = out
                .index_axis_mut(Axis(0), s)
                .into_shape_with_order((self.out_channels, p))
                .expect("contiguous output");
            if self.is_pointwise() {
                let xv = ArrayView2::from_shape((k, p), xs).expect("pointwise view");
                general_mat_mul(F::one(), &w, &xv, F::zero(), &mut os);
            } else {
                self.im2col(xs, [d0, d1, d2], o, &mut cols);
                general_mat_mul(F::one(), &w, &cols, F::zero(), &mut os);
            }
            if let Some(b) = &self.bias {
                for (mut row, &bv) in os.outer_iter_mut().zip(b.value.iter()) {
                    row.mapv_inplace(|v| v + bv);
                }
            }
        }
        self.input = Some(x);
        out
    }

    pub fn backward(&mut self, dy: Array5<F>) -> Array5<F> {
        let x = self.input.take().expect("forward before backward");
        let dy = dy.as_standard_layout().into_owned();
        let (n, _, d0, d1, d2) = x.dim();
        let o = self.out_dims([d0, d1, d2]);
        let p = o[0] * o[1] * o[2];
        let k = self.in_channels * self.kernel.iter().product::<usize>();
        let mut dx = Array5::<F>::zeros(x.raw_dim());
        let mut dw = Array2::<F>::zeros((self.out_channels, k));
        let mut cols = Array2::<F>::zeros((k, p));
        let mut dcols = Array2::<F>::zeros((k, p));
        let pointwise = self.is_pointwise();
        let w = self.weight_matrix().to_owned();
        for s in 0..n {
            let xs = x.index_axis(Axis(0), s);
            let xs = xs.as_slice().expect("contiguous sample");
            let dys = dy
                .index_axis(Axis(0), s)
                .into_shape_with_order((self.out_channels, p))
                .expect("contiguous grad");
            if pointwise {
                let xv = ArrayView2::from_shape((k, p), xs).expect("pointwise view");
                general_mat_mul(F::one(), &dys, &xv.t(), F::one(), &mut dw);
                let mut dxs = dx
                    .index_axis_mut(Axis(0), s)
                    .into_shape_with_order((k, p))
                    .expect("contiguous dx");
                general_mat_mul(F::one(), &w.t(), &dys, F::zero(), &mut dxs);
            } else {
                self.im2col(xs, [d0, d1, d2], o, &mut cols);
                general_mat_mul(F::one(), &dys, &cols.t(), F::one(), &mut dw);
                general_mat_mul(F::one(), &w.t(), &dys, F::zero(), &mut dcols);
                let mut dxs = dx.index_axis_mut(Axis(0), s);
                let dxs = dxs.as_slice_mut().expect("contiguous dx");
                self.col2im(&dcols, [d0, d1, d2], o, dxs);
            }
        }
        let wshape = self.weight.grad.raw_dim();
        let dw = dw.into_shape_with_order(wshape).expect("weight grad shape");
        self.weight.grad += &dw;
        if let Some(b) = &mut self.bias {
            let summed = dy
                .view()
                .into_shape_with_order((n, self.out_channels, p))
                .expect("contiguous grad")
                .sum_axis(Axis(2))
                .sum_axis(Axis(0));
            b.grad += &summed.into_dyn();
        }
        dx
    }

    fn im2col(&self, x: &[F], d: [usize; 3], o: [usize; 3], cols: &mut Array2<F>) {
        let [k0, k1, k2] = self.kernel;
        let [s0, s1, s2] = self.stride;
        let [p0, p1, p2] = self.pad.map(|v| v as isize);
        let plane = d[1] * d[2];
        let vol = d[0] * plane;
        let cols = cols.as_slice_mut().expect("cols contiguous");
        let p = o[0] * o[1] * o[2];
        let mut row = 0;
        for ci in 0..self.in_channels {
            let xc = &x[ci * vol..(ci + 1) * vol];
            for a in 0..k0 {
                for b in 0..k1 {
                    for e in 0..k2 {
                        let dst = &mut cols[row * p..(row + 1) * p];
                        let mut idx = 0;
                        for q0 in 0..o[0] {
                            let i0 = (q0 * s0 + a) as isize - p0;
                            if i0 < 0 || i0 >= d[0] as isize {
                                dst[idx..idx + o[1] * o[2]].fill(F::zero());
                                idx += o[1] * o[2];
                                continue;
                            }
                            let base0 = i0 as usize * plane;
                            for q1 in 0..o[1] {
                                let i1 = (q1 * s1 + b) as isize - p1;
                                if i1 < 0 || i1 >= d[1] as isize {
                                    dst[idx..idx + o[2]].fill(F::zero());
                                    idx += o[2];
                                    continue;
                                }
                                let base1 = base0 + i1 as usize * d[2];
                                for q2 in 0..o[2] {
                                    let i2 = (q2 * s2 + e) as isize - p2;
                                    dst[idx] = if i2 < 0 || i2 >= d[2] as isize {
                                        F::zero()
                                    } else {
                                        xc[base1 + i2 as usize]
                                    };
                                    idx += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &Array2<F>, d: [usize; 3], o: [usize; 3], dx: &mut [F]) {
        let [k0, k1, k2] = self.kernel;
        let [s0, s1, s2] = self.stride;
        let [p0, p1, p2] = self.pad.map(|v| v as isize);
        let plane = d[1] * d[2];
        let vol = d[0] * plane;
        let cols = cols.as_slice().expect("cols contiguous");
        let p = o[0] * o[1] * o[2];
        let mut row = 0;
        for ci in 0..self.in_channels {
            let dxc = &mut dx[ci * vol..(ci + 1) * vol];
            for a in 0..k0 {
                for b in 0..k1 {
                    for e in 0..k2 {
                        let src = &cols[row * p..(row + 1) * p];
                        let mut idx = 0;
                        for q0 in 0..o[0] {
                            let i0 = (q0 * s0 + a) as isize - p0;
                            if i0 < 0 || i0 >= d[0] as isize {
                                idx += o[1] * o[2];
                                continue;
                            }
                            let base0 = i0 as usize * plane;
                            for q1 in 0..o[1] {
                                let i1 = (q1 * s1 + b) as isize - p1;
                                if i1 < 0 || i1 >= d[1] as isize {
                                    idx += o[2];
                                    continue;
                                }
                                let base1 = base0 + i1 as usize * d[2];
                                for q2 in 0..o[2] {
                                    let i2 = (q2 * s2 + e) as isize - p2;
                                    if i2 >= 0 && i2 < d[2] as isize {
                                        dxc[base1 + i2 as usize] += src[idx];
                                    }
                                    idx += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

impl<F: Real> Module<F> for Conv3d<F> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<F>) {
        v.param(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            v.param(&join(prefix, "bias"), b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array5;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive(conv: &Conv3d<f64>, x: &Array5<f64>) -> Array5<f64> {
        let (n, c, d0, d1, d2) = x.dim();
        let o = conv.out_dims([d0, d1, d2]);
        let w = conv.weight.value.view().into_dimensionality::<ndarray::Ix5>().unwrap();
        let mut out = Array5::zeros((n, conv.out_channels, o[0], o[1], o[2]));
        for s in 0..n {
            for co in 0..conv.out_channels {
                for q0 in 0..o[0] {
                    for q1 in 0..o[1] {
                        for q2 in 0..o[2] {
                            let mut acc = conv.bias.as_ref().map_or(0.0, |b| b.value[[co]]);
                            for ci in 0..c {
                                for a in 0..conv.kernel[0] {
                                    for b in 0..conv.kernel[1] {
                                        for e in 0..conv.kernel[2] {
                                            let i0 = (q0 * conv.stride[0] + a) as isize - conv.pad[0] as isize;
                                            let i1 = (q1 * conv.stride[1] + b) as isize - conv.pad[1] as isize;
                                            let i2 = (q2 * conv.stride[2] + e) as isize - conv.pad[2] as isize;
                                            if i0 < 0 || i1 < 0 || i2 < 0 {
                                                continue;
                                            }
                                            let (i0, i1, i2) = (i0 as usize, i1 as usize, i2 as usize);
                                            if i0 >= d0 || i1 >= d1 || i2 >= d2 {
                                                continue;
                                            }
                                            acc += w[[co, ci, a, b, e]] * x[[s, ci, i0, i1, i2]];
                                        }
                                    }
                                }
                            }
                            out[[s, co, q0, q1, q2]] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    fn random(shape: (usize, usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Array5<f64> {
        Array5::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cases = [
            ([4, 4, 1], [2, 2, 1], [1, 1, 0], true),
            ([3, 3, 3], [2, 1, 1], [1, 1, 1], false),
            ([1, 1, 1], [1, 1, 1], [0, 0, 0], true),
            ([2, 2, 1], [2, 2, 1], [0, 0, 0], false),
        ];
        for (k, s, p, bias) in cases {
            let mut conv = Conv3d::<f64>::new(3, 5, k, s, p, bias, &mut rng);
            let x = random((2, 3, 8, 6, 5), &mut rng);
            let got = conv.forward(x.clone());
            let want = naive(&conv, &x);
            assert_eq!(got.dim(), want.dim());
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut conv = Conv3d::<f64>::new(2, 3, [3, 3, 1], [2, 1, 1], [1, 1, 0], true, &mut rng);
        let x = random((2, 2, 5, 4, 1), &mut rng);
        let y = conv.forward(x.clone());
        let g = random(y.dim(), &mut rng);
        let dx = conv.backward(g.clone());
        let loss = |c: &mut Conv3d<f64>, x: &Array5<f64>| (c.forward(x.clone()) * &g).sum();
        let h = 1e-6;
        for idx in [[0, 0, 0, 0, 0], [1, 1, 4, 3, 0], [0, 1, 2, 1, 0]] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (loss(&mut conv, &xp) - loss(&mut conv, &xm)) / (2.0 * h);
            assert!((fd - dx[idx]).abs() < 1e-6, "{fd} vs {}", dx[idx]);
        }
        let analytic = conv.weight.grad.clone();
        for i in [0usize, 7, 20, 53] {
            let orig = conv.weight.value.as_slice().unwrap()[i];
            conv.weight.value.as_slice_mut().unwrap()[i] = orig + h;
            let lp = loss(&mut conv, &x);
            conv.weight.value.as_slice_mut().unwrap()[i] = orig - h;
            let lm = loss(&mut conv, &x);
            conv.weight.value.as_slice_mut().unwrap()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - analytic.as_slice().unwrap()[i]).abs() < 1e-6);
        }
    }
}
