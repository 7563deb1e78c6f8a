use ndarray::{Array5, ArrayD, IxDyn};

use super::{join, Module, Param, Real, Visitor};

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

/// Per-channel batch normalisation over axis 1 of a `(N, C, ...)` tensor.
///
/// Training mode normalises with batch statistics and updates running
/// averages; evaluation mode uses the running averages only.
#[derive(Debug, Clone)]
pub struct BatchNorm<F> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: ArrayD<F>,
    pub running_var: ArrayD<F>,
    channels: usize,
    cache: Option<Cache<F>>,
}

#[derive(Debug, Clone)]
struct Cache<F> {
    xhat: Array5<F>,
    inv_std: Vec<F>,
    batch_stats: bool,
}

impl<F: Real> BatchNorm<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(&[channels], F::one()),
            beta: Param::zeros(&[channels]),
            running_mean: ArrayD::zeros(IxDyn(&[channels])),
            running_var: ArrayD::from_elem(IxDyn(&[channels]), F::one()),
            channels,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: Array5<F>, train: bool) -> Array5<F> {
        let mut x = x.as_standard_layout().into_owned();
        let dim = x.dim();
        let (n, c) = (dim.0, dim.1);
        assert_eq!(c, self.channels, "batch-norm channels");
        let s = dim.2 * dim.3 * dim.4;
        let count = (n * s) as f64;
        let eps = F::of(EPS);
        let mut inv_std = vec![F::zero(); c];
        {
            let data = x.as_slice_mut().expect("standard layout");
            for ch in 0..c {
                let (mean, var) = if train {
                    let mut sum = 0.0;
                    for b in 0..n {
                        let off = (b * c + ch) * s;
                        sum += data[off..off + s].iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                    let mean = sum / count;
                    let mut sq = 0.0;
                    for b in 0..n {
                        let off = (b * c + ch) * s;
                        sq += data[off..off + s]
                            .iter()
                            .map(|v| (v.as_f64() - mean).powi(2))
                            .sum::<f64>();
                    }
                    let var = sq / count;
                    let m = F::of(MOMENTUM);
                    let unbiased = if count > 1.0 { sq / (count - 1.0) } else { var };
                    self.running_mean[ch] =
                        (F::one() - m) * self.running_mean[ch] + m * F::of(mean);
                    self.running_var[ch] =
                        (F::one() - m) * self.running_var[ch] + m * F::of(unbiased);
                    (F::of(mean), F::of(var))
                } else {
                    (self.running_mean[ch], self.running_var[ch])
                };
                let istd = F::one() / (var + eps).sqrt();
                inv_std[ch] = istd;
                for b in 0..n {
                    let off = (b * c + ch) * s;
                    for v in &mut data[off..off + s] {
                        *v = (*v - mean) * istd;
                    }
                }
            }
        }
        let xhat = x.clone();
        {
            let data = x.as_slice_mut().expect("standard layout");
            for ch in 0..c {
                let (g, bt) = (self.gamma.value[ch], self.beta.value[ch]);
                for b in 0..n {
                    let off = (b * c + ch) * s;
                    for v in &mut data[off..off + s] {
                        *v = *v * g + bt;
                    }
                }
            }
        }
        self.cache = Some(Cache {
            xhat,
            inv_std,
            batch_stats: train,
        });
        x
    }

    pub fn backward(&mut self, dy: Array5<F>) -> Array5<F> {
        let Cache {
            xhat,
            inv_std,
            batch_stats,
        } = self.cache.take().expect("forward before backward");
        let mut dy = dy.as_standard_layout().into_owned();
        let dim = dy.dim();
        let (n, c) = (dim.0, dim.1);
        let s = dim.2 * dim.3 * dim.4;
        let m = F::of((n * s) as f64);
        let xh = xhat.as_slice().expect("standard layout");
        let data = dy.as_slice_mut().expect("standard layout");
        for ch in 0..c {
            let mut dbeta = F::zero();
            let mut dgamma = F::zero();
            for b in 0..n {
                let off = (b * c + ch) * s;
                for i in off..off + s {
                    dbeta += data[i];
                    dgamma += data[i] * xh[i];
                }
            }
            self.beta.grad[ch] += dbeta;
            self.gamma.grad[ch] += dgamma;
            let scale = self.gamma.value[ch] * inv_std[ch];
            for b in 0..n {
                let off = (b * c + ch) * s;
                for i in off..off + s {
                    data[i] = if batch_stats {
                        scale / m * (m * data[i] - dbeta - xh[i] * dgamma)
                    } else {
                        scale * data[i]
                    };
                }
            }
        }
        dy
    }
}

impl<F: Real> Module<F> for BatchNorm<F> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<F>) {
        v.param(&join(prefix, "weight"), &mut self.gamma);
        v.param(&join(prefix, "bias"), &mut self.beta);
        v.buffer(&join(prefix, "running_mean"), &mut self.running_mean);
        v.buffer(&join(prefix, "running_var"), &mut self.running_var);
    }
}
