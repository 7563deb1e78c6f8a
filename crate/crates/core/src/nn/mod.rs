//! Minimal layer library with explicit forward/backward passes.
//!
//! Every layer caches what it needs during `forward` and consumes that cache
//! in `backward`, accumulating parameter gradients into [`Param::grad`].
//! Layers are generic over [`Real`] so the same network can run in `f32` for
//! training and in `f64` for finite-difference checks.

mod conv;
mod linear;
mod norm;
mod pool;

pub use conv::Conv3d;
pub use linear::{Dropout, L2Normalize, Linear, Relu};
pub use norm::BatchNorm;
pub use pool::AdaptiveAvgPool3d;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{ArrayD, IxDyn, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

/// Floating-point element type usable by every layer.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// A learnable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<F> {
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
}

impl<F: Real> Param<F> {
    pub fn new(value: ArrayD<F>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn filled(shape: &[usize], v: F) -> Self {
        Self::new(ArrayD::from_elem(IxDyn(shape), v))
    }

    /// Uniform initialisation in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| F::of(rng.random_range(-bound..=bound)))
            .collect::<Vec<_>>();
        Self::new(ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches length"))
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }
}

/// He-uniform bound: keeps activation variance roughly constant through
/// ReLU layers, so an untrained network in eval mode still passes its input
/// through rather than collapsing onto its biases.
pub fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in.max(1) as f64).sqrt()
}

/// Walks the named parameters and buffers of a module tree.
pub trait Visitor<F> {
    fn param(&mut self, name: &str, param: &mut Param<F>);

    /// Non-learnable state such as batch-norm running statistics.
    fn buffer(&mut self, _name: &str, _buffer: &mut ArrayD<F>) {}
}

/// Anything that owns parameters.
pub trait Module<F: Real> {
    fn visit(&mut self, prefix: &str, visitor: &mut dyn Visitor<F>);

    fn num_params(&mut self) -> usize {
        struct Count(usize);
        impl<F: Real> Visitor<F> for Count {
            fn param(&mut self, _: &str, p: &mut Param<F>) {
                self.0 += p.numel();
            }
        }
        let mut c = Count(0);
        self.visit("", &mut c);
        c.0
    }

    fn zero_grad(&mut self) {
        struct Zero;
        impl<F: Real> Visitor<F> for Zero {
            fn param(&mut self, _: &str, p: &mut Param<F>) {
                p.zero_grad();
            }
        }
        self.visit("", &mut Zero);
    }

    /// Calls `f` on every parameter in a fixed traversal order.
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        struct Each<'a, F>(&'a mut dyn FnMut(&str, &mut Param<F>));
        impl<F: Real> Visitor<F> for Each<'_, F> {
            fn param(&mut self, name: &str, p: &mut Param<F>) {
                (self.0)(name, p);
            }
        }
        self.visit("", &mut Each(f));
    }

    /// Calls `f` on every buffer in a fixed traversal order.
    fn for_each_buffer(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<F>)) {
        struct Each<'a, F>(&'a mut dyn FnMut(&str, &mut ArrayD<F>));
        impl<F: Real> Visitor<F> for Each<'_, F> {
            fn param(&mut self, _: &str, _: &mut Param<F>) {}
            fn buffer(&mut self, name: &str, b: &mut ArrayD<F>) {
                (self.0)(name, b);
            }
        }
        self.visit("", &mut Each(f));
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
