use ndarray::linalg::general_mat_mul;
use ndarray::{Array, Array2, Axis, Dimension, Ix2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{join, Module, Param, Real, Visitor};

/// Fully connected layer `y = x Wᵀ + b` on `(B, in)` inputs.
#[derive(Debug, Clone)]
pub struct Linear<F> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    input: Option<Array2<F>>,
}

impl<F: Real> Linear<F> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            weight: Param::uniform(&[outputs, inputs], bound, rng),
            bias: Param::uniform(&[outputs], bound, rng),
            input: None,
        }
    }

    fn w(&self) -> ndarray::ArrayView2<'_, F> {
        self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d weight")
    }

    pub fn forward(&mut self, x: Array2<F>) -> Array2<F> {
        let mut y = x.dot(&self.w().t());
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().expect("1-d bias");
        y += &b;
        self.input = Some(x);
        y
    }

    pub fn backward(&mut self, dy: Array2<F>) -> Array2<F> {
        let x = self.input.take().expect("forward before backward");
        {
            let mut dw = self
                .weight
                .grad
                .view_mut()
                .into_dimensionality::<Ix2>()
                .expect("2-d weight");
            general_mat_mul(F::one(), &dy.t(), &x, F::one(), &mut dw);
        }
        self.bias.grad += &dy.sum_axis(Axis(0)).into_dyn();
        dy.dot(&self.w())
    }
}

impl<F: Real> Module<F> for Linear<F> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<F>) {
        v.param(&join(prefix, "weight"), &mut self.weight);
        v.param(&join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn forward<F: Real, D: Dimension>(&mut self, mut x: Array<F, D>) -> Array<F, D> {
        self.mask.clear();
        self.mask.reserve(x.len());
        for v in x.iter_mut() {
            let on = *v > F::zero();
            if !on {
                *v = F::zero();
            }
            self.mask.push(on);
        }
        x
    }

    pub fn backward<F: Real, D: Dimension>(&mut self, mut dy: Array<F, D>) -> Array<F, D> {
        assert_eq!(dy.len(), self.mask.len(), "relu backward shape");
        for (g, &on) in dy.iter_mut().zip(&self.mask) {
            if !on {
                *g = F::zero();
            }
        }
        dy
    }
}

/// Inverted dropout with its own deterministic stream.
#[derive(Debug, Clone)]
pub struct Dropout<F> {
    rate: f64,
    rng: ChaCha8Rng,
    mask: Option<Array2<F>>,
}

impl<F: Real> Dropout<F> {
    pub fn new(rate: f64, rng: ChaCha8Rng) -> Self {
        Self {
            rate,
            rng,
            mask: None,
        }
    }

    pub fn reseed(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }

    pub fn forward(&mut self, x: Array2<F>, train: bool) -> Array2<F> {
        if !train || self.rate <= 0.0 {
            self.mask = None;
            return x;
        }
        let keep = 1.0 - self.rate;
        let scale = F::of(1.0 / keep);
        let rng = &mut self.rng;
        let mask = Array2::from_shape_simple_fn(x.raw_dim(), || {
            if rng.random::<f64>() < keep {
                scale
            } else {
                F::zero()
            }
        });
        let y = &x * &mask;
        self.mask = Some(mask);
        y
    }

    pub fn backward(&mut self, dy: Array2<F>) -> Array2<F> {
        match self.mask.take() {
            Some(m) => dy * &m,
            None => dy,
        }
    }
}

/// Row-wise ℓ2 normalisation.
#[derive(Debug, Clone, Default)]
pub struct L2Normalize<F> {
    cache: Option<(Array2<F>, Vec<F>)>,
}

const NORM_FLOOR: f64 = 1e-12;

impl<F: Real> L2Normalize<F> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    pub fn forward(&mut self, mut x: Array2<F>) -> Array2<F> {
        let floor = F::of(NORM_FLOOR);
        let mut norms = Vec::with_capacity(x.nrows());
        for mut row in x.outer_iter_mut() {
            let n = row.iter().map(|v| *v * *v).sum::<F>().sqrt().max(floor);
            row.mapv_inplace(|v| v / n);
            norms.push(n);
        }
        self.cache = Some((x.clone(), norms));
        x
    }

    pub fn backward(&mut self, mut dy: Array2<F>) -> Array2<F> {
        let (y, norms) = self.cache.take().expect("forward before backward");
        for ((mut g, yr), n) in dy.outer_iter_mut().zip(y.outer_iter()).zip(norms) {
            let proj = g.dot(&yr);
            g.zip_mut_with(&yr, |gv, &yv| *gv = (*gv - yv * proj) / n);
        }
        dy
    }
}
