//! Property tests for the retrieval, decoding, metric and pretraining
//! invariants.

use nnscene_core::bank::{build_bank, SamplerConfig};
use nnscene_core::decode::{attention_weights, decode_patch};
use nnscene_core::feature::patchify_labels;
use nnscene_core::index::{AnnIndex, IndexParams, KeySet, SearchParams};
use nnscene_core::metrics::{mean_iou, rmse_depth, SquaredError};
use nnscene_core::pretrain::ops::{contextualize, contrastive_loss};
use nnscene_core::pretrain::params::{Linear, ValueHead};
use nnscene_core::pretrain::{ema_update, Matrix, ModelParams, ModelShape, PretrainBank};
use nnscene_core::pretrain::ops::MemoryVars;
use nnscene_core::pretrain::tape::Tape;
use nnscene_core::rng::stream;
use nnscene_core::synth::{generate_synthetic_scene_set, SceneConfig};
use nnscene_core::{PixelLabels, Task, IGNORE_ID, PATCH_SIZE};
use proptest::prelude::*;

fn nonzero_rows(rows: usize, dim: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0f32..1.0, rows * dim).prop_map(move |mut v| {
        for r in v.chunks_mut(dim) {
            if r.iter().all(|x| x.abs() < 1e-3) {
                r[0] = 1.0;
            }
        }
        v
    })
}

fn naive_cosines(keys: &[f32], dim: usize, query: &[f32]) -> Vec<f64> {
    let qn = query.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    keys.chunks(dim)
        .map(|k| {
            let kn = k.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            k.iter().zip(query).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() / (kn * qn)
        })
        .collect()
}

/// Unit-normalized copy of the rows, as the bank stores them.
fn unit_rows(data: &[f32], dim: usize) -> Vec<f32> {
    let mut out = data.to_vec();
    for r in out.chunks_mut(dim) {
        let n = r.iter().map(|x| x * x).sum::<f32>().sqrt();
        r.iter_mut().for_each(|x| *x /= n);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn patch_histograms_sum_to_one(
        h in 1usize..3,
        w in 1usize..3,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = stream(seed, &[]);
        let pixels = h * w * PATCH_SIZE * PATCH_SIZE;
        let classes: Vec<u16> = (0..pixels)
            .map(|_| if rng.random::<f32>() < 0.2 { IGNORE_ID } else { rng.random_range(0..5) })
            .collect();
        let labels = PixelLabels::Segmentation { height: h * PATCH_SIZE, width: w * PATCH_SIZE, classes };
        let grid = patchify_labels(&labels, Task::Segmentation { num_classes: 5 }, h, w).unwrap();
        for row in grid.rows() {
            let total: f32 = row.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn exact_index_matches_full_scan(
        keys in nonzero_rows(60, 8),
        query in nonzero_rows(1, 8),
        k in 1usize..20,
    ) {
        let unit = unit_rows(&keys, 8);
        let set = KeySet::new(&unit, 8).unwrap();
        let index = AnnIndex::build_exact(set).unwrap();
        let hits = index.search(set, &query, k, &SearchParams::default()).unwrap();
        let oracle = naive_cosines(&keys, 8, &query);
        prop_assert_eq!(hits.len(), k);
        for hit in &hits {
            prop_assert!((hit.score as f64 - oracle[hit.row as usize]).abs() < 1e-6);
        }
        let kth = hits.last().unwrap().score as f64;
        for (row, &s) in oracle.iter().enumerate() {
            if !hits.iter().any(|h| h.row as usize == row) {
                prop_assert!(s <= kth + 1e-6);
            }
        }
    }

    #[test]
    fn single_leaf_full_reorder_equals_exact(
        keys in nonzero_rows(48, 8),
        query in nonzero_rows(1, 8),
        seed in any::<u64>(),
    ) {
        let unit = unit_rows(&keys, 8);
        let set = KeySet::new(&unit, 8).unwrap();
        let params = IndexParams {
            num_leaves: 1,
            leaves_to_search: 1,
            reorder_n: 48,
            seed,
            ..IndexParams::default()
        };
        let quantized = AnnIndex::build_quantized(set, &params).unwrap();
        let exact = AnnIndex::build_exact(set).unwrap();
        let a = quantized.search(set, &query, 10, &params.search_params()).unwrap();
        let b = exact.search(set, &query, 10, &SearchParams::default()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn attention_weights_are_a_distribution(
        scores in prop::collection::vec(-1.0f32..1.0, 1..40),
        beta in 1e-3f64..2.0,
    ) {
        let w = attention_weights(&scores, beta);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn decode_ignores_neighbor_order(
        scores in prop::collection::vec(-1.0f32..1.0, 2..12),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::Rng;
        let mut rng = stream(seed, &[]);
        let task = Task::Segmentation { num_classes: 3 };
        let labels: Vec<Vec<f32>> = scores
            .iter()
            .map(|_| {
                let a: f32 = rng.random();
                let b: f32 = rng.random::<f32>() * (1.0 - a);
                vec![a, b, 1.0 - a - b, 0.0]
            })
            .collect();
        let mut neighbors: Vec<(f32, &[f32])> =
            scores.iter().zip(&labels).map(|(&s, l)| (s, l.as_slice())).collect();
        let before = decode_patch(task, &neighbors, 0.05).unwrap();
        neighbors.shuffle(&mut rng);
        let after = decode_patch(task, &neighbors, 0.05).unwrap();
        for (x, y) in before.values.iter().zip(&after.values) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn small_temperature_selects_nearest(
        mut scores in prop::collection::vec(-1.0f32..0.9, 1..12),
        top in 0.92f32..1.0,
        at in any::<prop::sample::Index>(),
    ) {
        let i = at.index(scores.len() + 1);
        scores.insert(i, top);
        let labels: Vec<Vec<f32>> = (0..scores.len())
            .map(|j| if j == i { vec![0.0, 1.0, 0.0] } else { vec![1.0, 0.0, 0.0] })
            .collect();
        let neighbors: Vec<(f32, &[f32])> =
            scores.iter().zip(&labels).map(|(&s, l)| (s, l.as_slice())).collect();
        let out = decode_patch(Task::Segmentation { num_classes: 2 }, &neighbors, 1e-4).unwrap();
        prop_assert!((out.values[1] - 1.0).abs() < 1e-3);
        prop_assert!(out.values[0].abs() < 1e-3);
    }

    #[test]
    fn miou_invariant_under_relabeling(
        pairs in prop::collection::vec((0u16..4, 0u16..4), 1..200),
        perm in Just(vec![0u16, 1, 2, 3]).prop_shuffle(),
    ) {
        let pred: Vec<u16> = pairs.iter().map(|p| p.0).collect();
        let gt: Vec<u16> = pairs.iter().map(|p| p.1).collect();
        let base = mean_iou(&[&pred], &[&gt], 4, IGNORE_ID).unwrap().miou.unwrap();
        let pred2: Vec<u16> = pred.iter().map(|&c| perm[c as usize]).collect();
        let gt2: Vec<u16> = gt.iter().map(|&c| perm[c as usize]).collect();
        let relabeled = mean_iou(&[&pred2], &[&gt2], 4, IGNORE_ID).unwrap().miou.unwrap();
        prop_assert!((base - relabeled).abs() < 1e-12);
    }

    #[test]
    fn rmse_invariant_under_shift_and_pooling(
        a in prop::collection::vec((0.5f32..10.0, 0.5f32..10.0, any::<bool>()), 1..50),
        b in prop::collection::vec((0.5f32..10.0, 0.5f32..10.0, any::<bool>()), 1..50),
        shift in -0.25f32..0.25,
    ) {
        prop_assume!(a.iter().chain(&b).any(|t| t.2));
        let split = |v: &[(f32, f32, bool)]| -> (Vec<f32>, Vec<f32>, Vec<bool>) {
            (v.iter().map(|t| t.0).collect(), v.iter().map(|t| t.1).collect(), v.iter().map(|t| t.2).collect())
        };
        let (pa, ga, va) = split(&a);
        let (pb, gb, vb) = split(&b);
        let pooled = rmse_depth(&[&pa, &pb], &[&ga, &gb], &[&va, &vb]).unwrap().rmse.unwrap();
        let all: Vec<_> = a.iter().chain(&b).copied().collect();
        let (p, g, v) = split(&all);
        let mut acc = SquaredError::default();
        acc.add(&p, &g, &v).unwrap();
        let concatenated = acc.report().unwrap().rmse.unwrap();
        prop_assert!((pooled - concatenated).abs() < 1e-9);

        // Shifting both maps changes only f32 rounding of each value.
        let ps: Vec<f32> = p.iter().map(|x| x + shift).collect();
        let gs: Vec<f32> = g.iter().map(|x| x + shift).collect();
        let shifted = rmse_depth(&[&ps], &[&gs], &[&v]).unwrap().rmse.unwrap();
        prop_assert!((shifted - concatenated).abs() < 1e-5);
    }

    #[test]
    fn contextualize_ignores_feature_scale(
        feats in prop::collection::vec(0.1f64..1.0, 12),
        scale in 0.01f64..100.0,
        row in 0usize..3,
        lambda in prop::sample::select(vec![0.0, 0.2, 1.0]),
        seed in any::<u64>(),
    ) {
        let mut bank = PretrainBank::new(8, 4);
        let memory: Vec<Matrix> = (0..3)
            .map(|i| Matrix::from_vec(2, 4, (0..8).map(|j| ((i * 8 + j) as f64 * 0.37).sin()).collect()))
            .collect();
        let mut rng = stream(seed, &[]);
        bank.push(&memory, &ValueHead::random(4, 6, false, &mut rng), None).unwrap();
        let snapshot = bank.snapshot();
        let mixer = Linear::random(4, 4, &mut rng);
        let run = |q: Matrix| {
            let mut tape = Tape::new();
            let mem = MemoryVars::new(&mut tape, &snapshot, None).unwrap();
            let mix = mixer.leaves(&mut tape);
            let qv = tape.leaf(q);
            let c = contextualize(&mut tape, qv, Some(&mem), lambda, 1.0, &mix).unwrap();
            tape.value(c).clone()
        };
        let q = Matrix::from_vec(3, 4, feats);
        let mut scaled = q.clone();
        scaled.row_mut(row).iter_mut().for_each(|x| *x *= scale);
        let (a, b) = (run(q), run(scaled));
        for (x, y) in a.data.iter().zip(&b.data) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn contrastive_loss_is_permutation_equivariant(
        preds in prop::collection::vec(-3.0f64..3.0, 12),
        targets in prop::collection::vec(-3.0f64..3.0, 12),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        // Four items of dimension 3, identity pairing.
        let loss = |p: &Matrix, t: &Matrix, pairing: &[usize]| {
            let mut tape = Tape::new();
            let pv = tape.leaf(p.clone());
            let tv = tape.leaf(t.clone());
            let l = contrastive_loss(&mut tape, pv, tv, pairing).unwrap();
            tape.scalar(l)
        };
        let p = Matrix::from_vec(4, 3, preds);
        let t = Matrix::from_vec(4, 3, targets);
        let base = loss(&p, &t, &[0, 1, 2, 3]);
        let mut pp = Matrix::zeros(4, 3);
        let mut tp = Matrix::zeros(4, 3);
        for (new, &old) in perm.iter().enumerate() {
            pp.row_mut(new).copy_from_slice(p.row(old));
            tp.row_mut(new).copy_from_slice(t.row(old));
        }
        prop_assert!((loss(&pp, &tp, &[0, 1, 2, 3]) - base).abs() < 1e-9);
        // Permuting only the targets, with the pairing following them.
        let mut pairing = [0usize; 4];
        for (new, &old) in perm.iter().enumerate() {
            pairing[old] = new;
        }
        prop_assert!((loss(&p, &tp, &pairing) - base).abs() < 1e-9);
    }
}

#[test]
fn ema_distance_shrinks_by_decay() {
    let shape = ModelShape {
        patch_dim: 3,
        dim: 4,
        value_hidden: 5,
        proj_dim: 2,
        batch_norm: true,
    };
    let theta = ModelParams::random(&shape, &mut stream(1, &[]));
    let mut xi = ModelParams::random(&shape, &mut stream(2, &[]));
    let distance = |xi: &ModelParams| {
        xi.flatten()
            .iter()
            .zip(theta.flatten())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut d = distance(&xi);
    for _ in 0..50 {
        ema_update(&theta, &mut xi, 0.99).unwrap();
        let next = distance(&xi);
        assert!((next / d - 0.99).abs() < 1e-9, "ratio {}", next / d);
        d = next;
    }
}

#[test]
fn more_search_effort_never_lowers_mean_recall() {
    use nnscene_core::index::recall_at_k;
    use nnscene_core::synth::clustered_unit_vectors;
    let dim = 16;
    let keys = clustered_unit_vectors(4000, dim, 40, 0.3, 5);
    let queries = clustered_unit_vectors(100, dim, 40, 0.3, 6);
    let set = KeySet::new(&keys, dim).unwrap();
    let params = IndexParams {
        num_leaves: 32,
        leaves_to_search: 1,
        reorder_n: 10,
        ..IndexParams::default()
    };
    let quantized = AnnIndex::build_quantized(set, &params).unwrap();
    let exact = AnnIndex::build_exact(set).unwrap();
    let mean_recall = |search: SearchParams| {
        queries
            .chunks(dim)
            .map(|q| {
                let a = quantized.search(set, q, 10, &search).unwrap();
                let e = exact.search(set, q, 10, &SearchParams::default()).unwrap();
                recall_at_k(&a, &e, 10).unwrap()
            })
            .sum::<f64>()
            / 100.0
    };
    let mut last = 0.0;
    for leaves in [1, 2, 4, 8, 16, 32] {
        // A reorder budget covering every candidate makes the searched
        // set a superset as leaves grow.
        let r = mean_recall(SearchParams { leaves_to_search: leaves, reorder_n: 4000 });
        assert!(r >= last, "leaves {leaves}: {r} < {last}");
        last = r;
    }
    let mut last = 0.0;
    for reorder in [10, 20, 40, 80, 160] {
        let r = mean_recall(SearchParams { leaves_to_search: 4, reorder_n: reorder });
        assert!(r >= last, "reorder {reorder}: {r} < {last}");
        last = r;
    }
    assert!(last > 0.5);
}

#[test]
fn bank_invariants_on_synthetic_scenes() {
    let set = generate_synthetic_scene_set(&SceneConfig {
        num_images: 6,
        height: 6,
        width: 6,
        dim: 16,
        epochs: 2,
        ..SceneConfig::default()
    })
    .unwrap();
    let cfg = SamplerConfig {
        capacity: 6 * 2 * 10,
        aug_epochs: 2,
        downsample: true,
        seed: 3,
    };
    let built = build_bank(&set, &cfg).unwrap();
    assert_eq!(built.per_image, 10);
    assert_eq!(built.bank.len(), 120);
    for row in 0..built.bank.len() {
        let n: f32 = built.bank.key(row).iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((n - 1.0).abs() < 1e-5);
    }
    let mut counts = std::collections::BTreeMap::new();
    for p in &built.bank.provenance {
        *counts.entry((p.image_id, p.epoch)).or_insert(0) += 1;
    }
    assert_eq!(counts.len(), 12);
    assert!(counts.values().all(|&c| c == 10));
    assert_eq!(build_bank(&set, &cfg).unwrap(), built);
}
