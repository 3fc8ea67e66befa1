use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use clinker_core::gbdt::{Features, GbdtModel, GbdtParams};
use clinker_core::mow::{build_dataset, split_samples, SplitTag, WindowSpec};
use clinker_core::{LabelMap, PhaseLabel, RasterImage};

fn toy(seed: u64, n: usize) -> (Vec<Vec<f32>>, Vec<PhaseLabel>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let class = rng.gen_range(0..3);
        let row: Vec<f32> = (0..4).map(|f| (rng.gen_range(0..20) + if f == class { 12 } else { 0 }) as f32).collect();
        rows.push(row);
        labels.push(PhaseLabel::ALL[class]);
    }
    (rows, labels)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dataset_size_identity(
        sides in proptest::collection::vec(1usize..20, 1..6),
        p in prop_oneof![Just(1usize), Just(3), Just(5)],
        rgb in any::<bool>(),
    ) {
        let c = if rgb { 3 } else { 1 };
        let img = RasterImage::filled(40, 30, &vec![7u8; c]).unwrap();
        let labels = LabelMap::filled(40, 30, PhaseLabel::Other);
        let windows: Vec<WindowSpec> = sides.iter().enumerate().map(|(k, &n)| WindowSpec { x: (3 * k) % (40 - n), y: 0, n }).collect();
        let ds = build_dataset(&img, &labels, &windows, p).unwrap();
        prop_assert_eq!(ds.len(), sides.iter().map(|n| n * n).sum::<usize>());
        prop_assert_eq!(ds.feature_width(), c * p * p);
    }

    #[test]
    fn split_parts_within_one(n in 3usize..2000, seed in any::<u64>()) {
        let img = RasterImage::filled(n, 1, &[0]).unwrap();
        let labels = LabelMap::filled(n, 1, PhaseLabel::Other);
        let windows: Vec<WindowSpec> = (0..n).map(|x| WindowSpec { x, y: 0, n: 1 }).collect();
        let ds = split_samples(build_dataset(&img, &labels, &windows, 1).unwrap(), &[0.70, 0.15, 0.15], seed).unwrap();
        for (tag, frac) in [(SplitTag::Train, 0.70), (SplitTag::Val, 0.15), (SplitTag::Test, 0.15)] {
            let got = ds.rows_tagged(tag).len() as f64;
            prop_assert!((got - frac * n as f64).abs() <= 1.0, "{tag:?}: {got} of {n}");
        }
    }

    #[test]
    fn training_loss_never_rises(seed in any::<u64>(), depth in 1usize..5, lr in 0.05f64..0.5) {
        let (rows, labels) = toy(seed, 150);
        let f = Features::from_rows(&rows).unwrap();
        let all: Vec<usize> = (0..rows.len()).collect();
        let params = GbdtParams { n_trees: 15, max_depth: depth, learning_rate: lr, ..GbdtParams::default() };
        let (_, trace) = GbdtModel::fit(&f, &labels, &all, &params).unwrap();
        for loss in &trace.loss {
            for w in loss.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn row_order_does_not_change_the_model(seed in any::<u64>()) {
        let (rows, labels) = toy(seed, 120);
        let params = GbdtParams { n_trees: 10, max_depth: 3, ..GbdtParams::default() };
        let all: Vec<usize> = (0..rows.len()).collect();
        let (a, _) = GbdtModel::fit(&Features::from_rows(&rows).unwrap(), &labels, &all, &params).unwrap();
        let mut perm = all.clone();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let rows2: Vec<Vec<f32>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let labels2: Vec<PhaseLabel> = perm.iter().map(|&i| labels[i]).collect();
        let (b, _) = GbdtModel::fit(&Features::from_rows(&rows2).unwrap(), &labels2, &all, &params).unwrap();
        let (probe, _) = toy(seed ^ 2, 60);
        // Leaf sums run in row order, so scores may differ in the last bits.
        for r in &probe {
            prop_assert_eq!(a.predict(r), b.predict(r));
            for (x, y) in a.scores(r).iter().zip(b.scores(r)) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
        let c = GbdtModel::from_json(&a.to_json().unwrap()).unwrap();
        for r in &probe {
            prop_assert_eq!(a.scores(r), c.scores(r));
        }
    }
}
