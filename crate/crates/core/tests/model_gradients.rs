//! End-to-end analytic gradients of the full network against central finite
//! differences, in double precision, for every input condition.

use fingerdiff::model::{Condition, Model, ModelConfig};
use fingerdiff::nn::{Module, Param};
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(condition: Condition) -> ModelConfig {
    ModelConfig {
        condition,
        clip_length: 4,
        ccc_k: 2,
        dropout: 0.0,
        embed_dim: 6,
        convstack_channels: [2, 3, 3, 4],
        frame_size: 16,
        head_channels: [3, 2],
        mlp_hidden: 5,
        meta_kernel_len: 32,
    }
}

fn objective(model: &mut Model<f64>, clips: &[Array4<f64>], probe: &Array2<f64>) -> f64 {
    let views: Vec<_> = clips.iter().map(|c| c.view()).collect();
    (model.forward(&views).unwrap() * probe).sum()
}

fn check(condition: Condition) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut model = Model::<f64>::new(tiny(condition), 3).unwrap();
    model.set_train(true);
    let clips: Vec<Array4<f64>> = (0..2)
        .map(|_| Array4::from_shape_simple_fn((4, 1, 16, 16), || rng.random_range(0.0..1.0)))
        .collect();
    let probe = Array2::from_shape_simple_fn((2, 6), || rng.random_range(-1.0..1.0));

    objective(&mut model, &clips, &probe);
    model.zero_grad();
    model.backward(probe.clone());
    let mut analytic = Vec::new();
    model.for_each_param(&mut |name, p: &mut Param<f64>| {
        analytic.push((name.to_string(), p.grad.clone()));
    });

    let h = 1e-5;
    let mut worst = (0.0f64, String::new());
    for (k, (name, grad)) in analytic.iter().enumerate() {
        // A handful of coordinates per tensor keeps the run short.
        let n = grad.len();
        let picks: Vec<usize> = (0..n.min(6)).map(|i| i * n / n.min(6)).collect();
        for &flat in &picks {
            let nudge = |delta: f64, model: &mut Model<f64>| {
                let mut idx = 0;
                model.for_each_param(&mut |_, p: &mut Param<f64>| {
                    if idx == k {
                        let v = p.value.as_slice_mut().unwrap();
                        v[flat] += delta;
                    }
                    idx += 1;
                });
            };
            nudge(h, &mut model);
            let up = objective(&mut model, &clips, &probe);
            nudge(-2.0 * h, &mut model);
            let down = objective(&mut model, &clips, &probe);
            nudge(h, &mut model);
            let numeric = (up - down) / (2.0 * h);
            let a = grad.as_slice().unwrap()[flat];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{flat}]: analytic {a:e} numeric {numeric:e}"));
            }
        }
    }
    assert!(worst.0 < 1e-3, "{condition}: worst relative error {} at {}", worst.0, worst.1);
}

#[test]
fn feat_diff_gradients() {
    check(Condition::FeatDiff);
}

#[test]
fn pixel_diff_gradients() {
    check(Condition::PixelDiff);
}

#[test]
fn raw_feat_gradients() {
    check(Condition::RawFeat);
}

#[test]
fn static_gradients() {
    check(Condition::Static);
}
