//! Cross-module property tests on seeded random inputs.

use std::collections::{BTreeSet, HashMap};

use activeloop::acquisition::{select, tcrb_select, AcquisitionParams, CrbParams, FrameScoreRecord, SelectionInput};
use activeloop::acquisition::Strategy;
use activeloop::interface::dataset::{read_dataset, write_dataset, FrameFormat};
use activeloop::surrogate::{loss_and_gradient, train_samples, ModelState, TrainParams, TrainingSample, AUGMENTED_DIM, FEATURE_DIM};
use activeloop::synthetic::{generate_dataset, SceneConfig};
use activeloop::surrogate::Detection;
use activeloop::geometry::Box3D;
use proptest::prelude::*;
use proptest::strategy::Strategy as _;

fn scene(seed: u64, sequences: usize, frames: usize) -> SceneConfig {
    SceneConfig {
        num_sequences: sequences,
        frames_per_sequence: frames,
        clutter_points: 40,
        seed,
        ..SceneConfig::default()
    }
}

fn detection(class: usize, probs: Vec<f64>, distance: f64, grad: Vec<f64>) -> Detection {
    let fg = probs[..probs.len() - 1].iter().copied().fold(0.0, f64::max);
    Detection {
        bbox: Box3D::new([distance, 0.0, 0.0], [4.0, 2.0, 1.5], 0.0, class),
        objectness: 1.0 - probs[probs.len() - 1],
        score: fg,
        probs,
        embedding: vec![distance / 10.0, class as f64],
        grad_embedding: grad,
        point_count: 20,
        distance,
    }
}

fn arb_sequence_records() -> impl proptest::strategy::Strategy<Value = Vec<FrameScoreRecord>> {
    (1usize..5, 2usize..9).prop_flat_map(|(seqs, len)| {
        proptest::collection::vec((0.05f64..0.9, 0.0f64..1.0, 1.0f64..40.0), seqs * len).prop_map(move |vals| {
            vals.iter()
                .enumerate()
                .map(|(i, &(p0, g, d))| {
                    let (seq, idx) = ((i / len) as u64, (i % len) as u64);
                    let rest = 1.0 - p0;
                    let probs = vec![p0, rest * 0.6, rest * 0.4];
                    let class = if p0 >= rest * 0.6 { 0 } else { 1 };
                    let det = detection(class, probs, d, vec![g, 1.0 - g, g * d / 40.0]);
                    FrameScoreRecord::new(seq * 100 + idx, seq, idx, vec![det], None, 2, 3)
                })
                .collect()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generation_is_a_function_of_config_and_seed(seed in 0u64..1000) {
        let cfg = scene(seed, 2, 3);
        prop_assert_eq!(generate_dataset(&cfg).unwrap(), generate_dataset(&cfg).unwrap());
    }

    #[test]
    fn tracked_objects_move_at_constant_velocity(seed in 0u64..1000) {
        let cfg = scene(seed, 2, 5);
        let frames = generate_dataset(&cfg).unwrap();
        for seq in frames.chunks(5) {
            let mut velocity: HashMap<u64, [f64; 2]> = HashMap::new();
            for pair in seq.windows(2) {
                for (i, id) in pair[1].track_ids.iter().enumerate() {
                    if let Some(j) = pair[0].track_ids.iter().position(|x| x == id) {
                        let (a, b) = (pair[0].gt_boxes[j], pair[1].gt_boxes[i]);
                        let d = [b.center[0] - a.center[0], b.center[1] - a.center[1]];
                        let v = *velocity.entry(*id).or_insert(d);
                        prop_assert!((v[0] - d[0]).abs() < 1e-9 && (v[1] - d[1]).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn jsonl_dataset_round_trips_exactly(seed in 0u64..1000) {
        let cfg = scene(seed, 2, 2);
        let frames = generate_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &frames, &cfg.class_names(), Some(&cfg), FrameFormat::Jsonl).unwrap();
        let (meta, back) = read_dataset(dir.path()).unwrap();
        prop_assert_eq!(meta.num_classes, cfg.num_classes());
        prop_assert_eq!(back, frames);
    }

    #[test]
    fn gradient_matches_central_differences(
        seed in 0u64..10_000,
        outputs in 2usize..5,
        n in 1usize..6,
        l2 in 0.0f64..0.05,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..outputs * AUGMENTED_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xs: Vec<[f64; AUGMENTED_DIM]> = (0..n)
            .map(|_| {
                let mut x: [f64; AUGMENTED_DIM] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
                x[FEATURE_DIM] = 1.0;
                x
            })
            .collect();
        let ys: Vec<usize> = (0..n).map(|_| rng.random_range(0..outputs)).collect();
        let (_, g) = loss_and_gradient(&w, outputs, &xs, &ys, l2);
        let h = 1e-5;
        let mut diff = 0.0;
        for j in 0..w.len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[j] += h;
            wm[j] -= h;
            let num = (loss_and_gradient(&wp, outputs, &xs, &ys, l2).0 - loss_and_gradient(&wm, outputs, &xs, &ys, l2).0) / (2.0 * h);
            diff += (num - g[j]).powi(2);
        }
        let scale = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        prop_assert!(diff.sqrt() / scale < 1e-4);
    }

    #[test]
    fn small_learning_rate_never_raises_the_loss(seed in 0u64..10_000, n in 10usize..80) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<TrainingSample> = (0..n)
            .map(|_| TrainingSample {
                feature: std::array::from_fn(|_| rng.random_range(-3.0..3.0)),
                label: rng.random_range(0..3),
            })
            .collect();
        // Convexity bounds full-batch steps; mini-batch noise can overshoot.
        let params = TrainParams { epochs: 50, lr: 0.01, batch_size: n, ..TrainParams::default() };
        let out = train_samples(&ModelState::new(2, seed), &samples, &params).unwrap();
        for pair in out.epoch_losses.windows(2) {
            prop_assert!(pair[1] <= pair[0]);
        }
    }

    #[test]
    fn selection_is_pure(records in arb_sequence_records(), b in 1usize..6, seed in 0u64..100) {
        let hist = vec![3, 1];
        let embeddings = vec![vec![0.0, 0.0]];
        let input = SelectionInput { records: &records, labeled_embeddings: &embeddings, labeled_hist: &hist, num_classes: 2 };
        let params = AcquisitionParams { tcrb_window: 1, ..AcquisitionParams::default() };
        let b = b.min(records.len());
        for s in Strategy::ALL.into_iter().filter(|s| *s != Strategy::MonteCarlo) {
            let first = select(s, &input, b, seed, 1, &params).unwrap();
            let second = select(s, &input, b, seed, 1, &params).unwrap();
            prop_assert_eq!(&first, &second);
        }
    }

    #[test]
    fn tcrb_windows_are_contiguous_runs(records in arb_sequence_records(), window in 1usize..4, k in 1usize..4) {
        let by_id: HashMap<u64, (u64, u64)> = records.iter().map(|r| (r.frame_id, (r.sequence_id, r.index_in_sequence))).collect();
        let longest = records.iter().map(|r| r.index_in_sequence as usize + 1).max().unwrap();
        prop_assume!(window <= longest);
        let b = (window * k).min(records.len());
        prop_assume!(b >= window);
        let r = tcrb_select(&records, &[2, 2], 2, b, window, &CrbParams::default()).unwrap();
        prop_assert_eq!(r.selected.len(), b);
        let distinct: BTreeSet<u64> = r.selected.iter().copied().collect();
        prop_assert_eq!(distinct.len(), b);
        // Every selected frame belongs to a maximal run; at least one run of
        // full window length exists when windows were chosen.
        let mut keys: Vec<(u64, u64)> = r.selected.iter().map(|id| by_id[id]).collect();
        let sorted = { let mut s = keys.clone(); s.sort(); s };
        prop_assert_eq!(&keys, &sorted);
        keys.dedup();
        let mut runs = Vec::new();
        let mut len = 1;
        for pair in keys.windows(2) {
            if pair[1].0 == pair[0].0 && pair[1].1 == pair[0].1 + 1 {
                len += 1;
            } else {
                runs.push(len);
                len = 1;
            }
        }
        runs.push(len);
        prop_assert!(runs.iter().any(|&l| l >= window));
    }
}
