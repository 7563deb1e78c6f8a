//! Structural properties of the network on small configurations.

use fingerdiff::model::{
    build_motion_tensor, cosine_knn, count_parameters, Ccc, Condition, DirectionalConv, Direction, Fcc, Model,
    ModelConfig,
};
use fingerdiff::nn::{Module, Param};
use ndarray::{s, Array2, Array3, Array4, Array5, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(condition: Condition, clip_length: usize) -> ModelConfig {
    ModelConfig {
        condition,
        clip_length,
        ccc_k: 3,
        dropout: 0.3,
        embed_dim: 24,
        convstack_channels: [4, 8, 8, 16],
        frame_size: 32,
        head_channels: [8, 8],
        mlp_hidden: 32,
        meta_kernel_len: 32,
    }
}

fn random_clip(t: usize, size: usize, seed: u64) -> Array4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_simple_fn((t, 1, size, size), || rng.random::<f64>())
}

#[test]
fn head_input_extent_follows_the_condition() {
    for (condition, extent) in [
        (Condition::FeatDiff, 7),
        (Condition::PixelDiff, 7),
        (Condition::RawFeat, 8),
        (Condition::Static, 1),
    ] {
        let mut m = Model::<f64>::new(small(condition, 8), 0).unwrap();
        let clip = random_clip(8, 32, 1);
        let x = m.condition_forward(&[clip.view(), clip.view()]).unwrap();
        assert_eq!(x.shape(), &[2, 16, 4, 4, extent], "{condition}");
        let e = m.head_forward(x);
        assert_eq!(m.head.last_stage_shapes().last().unwrap(), &vec![2, 24]);
        for row in e.outer_iter() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn constant_clips_cancel_under_feature_differencing() {
    let mut m = Model::<f64>::new(small(Condition::FeatDiff, 6), 2).unwrap();
    m.set_train(false);
    let a = Array4::from_elem((6, 1, 32, 32), 0.2);
    let b = random_clip(1, 32, 9).broadcast((6, 1, 32, 32)).unwrap().to_owned();
    assert!(m.condition_forward(&[b.view()]).unwrap().iter().all(|&v| v == 0.0));
    let (ea, eb) = (m.embed(a.view()).unwrap(), m.embed(b.view()).unwrap());
    assert_eq!(ea, eb);
    // A zero head input still gives a well-defined unit vector.
    assert!((ea.norm() - 1.0).abs() < 1e-6);
}

#[test]
fn pixel_differences_remove_a_global_drift() {
    let mut m = Model::<f64>::new(small(Condition::PixelDiff, 5), 0).unwrap();
    m.set_train(false);
    let base = random_clip(1, 32, 4).index_axis(Axis(0), 0).to_owned();
    let clip = Array4::from_shape_fn((5, 1, 32, 32), |(t, c, y, x)| 0.1 * base[[c, y, x]] + 0.15 * t as f64);
    let x = m.condition_forward(&[clip.view()]).unwrap();
    for t in 1..4 {
        let d = (&x.slice(s![.., .., .., .., t]) - &x.slice(s![.., .., .., .., 0])).mapv(f64::abs);
        assert!(d.iter().all(|&v| v < 1e-12));
    }
}

#[test]
fn frames_are_processed_independently() {
    let mut m = Model::<f64>::new(small(Condition::RawFeat, 5), 3).unwrap();
    m.set_train(false);
    let clip = random_clip(5, 32, 5);
    let forward = m.feature_maps(clip.view()).unwrap();
    let mut reversed = clip.clone();
    reversed.invert_axis(Axis(0));
    let backward = m.feature_maps(reversed.view()).unwrap();
    for (f, b) in forward.iter().zip(backward.iter().rev()) {
        assert_eq!(f, b);
    }
    let repeated = clip.slice(s![2..3, .., .., ..]).broadcast((4, 1, 32, 32)).unwrap().to_owned();
    let maps = m.feature_maps(repeated.view()).unwrap();
    assert!(maps.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(maps[0], forward[2]);
}

#[test]
fn eval_mode_is_pure_and_dropout_only_acts_in_training() {
    let mut m = Model::<f64>::new(small(Condition::FeatDiff, 4), 6).unwrap();
    let clip = random_clip(4, 32, 6);
    let e1 = m.embed(clip.view()).unwrap();
    let e2 = m.embed(clip.view()).unwrap();
    assert_eq!(e1, e2);
    m.set_train(true);
    m.reseed_dropout(1);
    let t1 = m.forward(&[clip.view(), clip.view()]).unwrap();
    m.reseed_dropout(1);
    let t2 = m.forward(&[clip.view(), clip.view()]).unwrap();
    assert_eq!(t1, t2);
    assert_ne!(t1.row(0), t1.row(1), "dropout masks differ between samples");
}

#[test]
fn fcc_gives_every_location_its_full_row_and_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut branch = Fcc::<f64>::new(2, 32, &mut rng);
    let mut impulse = Array5::<f64>::zeros((1, 1, 16, 16, 1));
    impulse[[0, 0, 5, 9, 0]] = 1.0;
    let mut first = DirectionalConv::<f64>::new(1, 32, Direction::Height, &mut rng);
    first.kernel = Param::new(first.kernel.value.mapv(|v| v.abs() + 0.1));
    let column = first.forward(impulse.clone());
    for y in 0..16 {
        for x in 0..16 {
            let v = column[[0, 0, y, x, 0]] - first.bias.value[0];
            assert_eq!(v != 0.0, x == 9, "height pass at ({y}, {x})");
        }
    }
    let both = branch.hw_branch(impulse);
    assert_eq!(both.shape(), &[1, 1, 16, 16, 1]);
    let x = Array5::from_shape_fn((1, 2, 16, 16, 1), |_| rng.random::<f64>());
    assert_eq!(branch.forward(x).shape(), &[1, 2, 16, 16, 1]);
}

#[test]
fn ccc_with_identical_channel_vectors_is_the_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ccc = Ccc::<f64>::new(3, 2, &mut rng);
    let x = Array5::from_shape_fn((1, 3, 4, 4, 1), |(_, c, _, _, _)| [0.3, -0.2, 0.9][c]);
    assert_eq!(ccc.forward(x.clone()), x);
}

#[test]
fn default_head_perceptron_count_is_closed_form() {
    let p = count_parameters(&ModelConfig::default()).unwrap();
    let mut m = Model::<f32>::new(ModelConfig::default(), 0).unwrap();
    let mut mlp = 0;
    m.for_each_param(&mut |name, param| {
        if name.starts_with("head.fc") {
            mlp += param.numel();
        }
    });
    assert_eq!(mlp, 512 * 256 + 256 + 256 * 256 + 256);
    assert_eq!(p.total, m.num_params());
}

fn knn_brute(x: &Array2<f64>, k: usize) -> Vec<usize> {
    let p = x.ncols();
    let norm = |a: usize| x.column(a).dot(&x.column(a)).sqrt();
    let cos = |a: usize, b: usize| {
        let d = norm(a) * norm(b);
        if d == 0.0 { 0.0 } else { x.column(a).dot(&x.column(b)) / d }
    };
    (0..p)
        .flat_map(|a| {
            let mut c: Vec<(f64, usize)> = (0..p).filter(|&b| b != a).map(|b| (cos(a, b), b)).collect();
            c.sort_by(|l, r| r.0.total_cmp(&l.0).then(l.1.cmp(&r.1)));
            c.into_iter().take(k).map(|(_, b)| b).collect::<Vec<_>>()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_matches_brute_force(
        c in 1usize..6,
        p in 3usize..20,
        k_frac in 0.0f64..1.0,
        seed in any::<u64>(),
        duplicate in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 1 + ((p - 2) as f64 * k_frac) as usize;
        let mut x = Array2::from_shape_simple_fn((c, p), || rng.random_range(-1.0..1.0));
        // Copied columns give bitwise-identical similarities, so ties are exact.
        if duplicate {
            for b in 1..p {
                if rng.random_bool(0.4) {
                    let src = x.column(rng.random_range(0..b)).to_owned();
                    x.column_mut(b).assign(&src);
                }
            }
        }
        prop_assert_eq!(cosine_knn(x.view(), k), knn_brute(&x, k));
    }

    #[test]
    fn motion_tensor_ignores_static_offsets(
        t in 2usize..7,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grid = || rng.random_range(-64i32..64) as f64 / 32.0;
        let maps: Vec<Array3<f64>> = (0..t).map(|_| Array3::from_shape_simple_fn((2, 3, 3), &mut grid)).collect();
        let offset = Array3::from_shape_simple_fn((2, 3, 3), &mut grid);
        let shifted: Vec<_> = maps.iter().map(|m| m + &offset).collect();
        prop_assert_eq!(build_motion_tensor(&maps).unwrap(), build_motion_tensor(&shifted).unwrap());
        let ramp: Vec<_> = (0..t).map(|i| offset.mapv(|v| v * i as f64)).collect();
        let d = build_motion_tensor(&ramp).unwrap();
        for i in 0..t - 1 {
            prop_assert_eq!(d.data().index_axis(Axis(3), i), offset.view());
        }
    }

    #[test]
    fn embeddings_are_unit_vectors(seed in any::<u64>(), scale in 0.0f64..1.0) {
        let mut m = Model::<f64>::new(small(Condition::FeatDiff, 3), seed).unwrap();
        let clip = random_clip(3, 32, seed).mapv(|v| v * scale);
        let e = m.embed(clip.view()).unwrap();
        prop_assert!((e.norm() - 1.0).abs() < 1e-5);
    }
}
