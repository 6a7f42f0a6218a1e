//! Acceptance suite: every criterion prints one PASS line with the measured
//! numbers so a failed run points straight at the offending gate.

mod common;

use mononext::eval::{average_precision, evaluate, Protocol};
use mononext::geometry::{bev_iou, BoxSpec};
use mononext::grid::{cell_index, decode, encode, GridSpec, GridTensor};
use mononext::kitti::{flip_frame, Difficulty, Frame};
use mononext::loss::{total_loss, total_loss_grad, LossWeights};
use mononext::network::{BackboneKind, MonoNext, NetworkConfig, Task};
use mononext::pipeline::{
    generate_synthetic_dataset, ground_truth_map, predict_frames, train, SplitChoice, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::time::Instant;

fn random_scene(rng: &mut ChaCha8Rng, g: &GridSpec<f64>) -> Vec<BoxSpec<f64>> {
    let mut used = std::collections::BTreeSet::new();
    let mut boxes = Vec::new();
    for _ in 0..rng.random_range(1..=10) {
        for _ in 0..30 {
            let b = BoxSpec::new(
                [
                    rng.random_range(-54.9..54.9),
                    rng.random_range(-1.9..12.9),
                    rng.random_range(0.1..84.9),
                ],
                [
                    rng.random_range(0.2..3.9),
                    rng.random_range(0.2..3.9),
                    rng.random_range(0.2..7.9),
                ],
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                0,
            );
            let cell = cell_index(b.center[0], b.center[2], g).unwrap();
            if used.insert(cell) {
                boxes.push(b);
                break;
            }
        }
    }
    boxes
}

#[test]
fn criterion_1_codec_round_trip() {
    let start = Instant::now();
    let g = GridSpec::<f64>::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut max_pos = 0.0f64;
    let mut max_dim = 0.0f64;
    let mut max_yaw = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..1000 {
        let scene = random_scene(&mut rng, &g);
        let tensor = encode(&scene, &g);
        let decoded = decode(&tensor, 0.5, &g, None);
        assert_eq!(decoded.len(), scene.len());
        for b in &scene {
            let cell = cell_index(b.center[0], b.center[2], &g).unwrap();
            let d = decoded
                .iter()
                .find(|d| cell_index(d.center[0], d.center[2], &g).unwrap() == cell)
                .expect("decoded box in the same cell");
            for k in 0..3 {
                max_pos = max_pos.max((d.center[k] - b.center[k]).abs());
                max_dim = max_dim.max((d.dims[k] - b.dims[k]).abs());
            }
            let dy = (d.yaw - b.yaw).abs();
            max_yaw = max_yaw.max(dy.min(2.0 * std::f64::consts::PI - dy));
            assert_eq!(d.class_id, b.class_id);
            checked += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(max_pos < 1e-6, "position error {max_pos}");
    assert!(max_dim < 1e-6, "dimension error {max_dim}");
    assert!(max_yaw < 1e-6, "yaw error {max_yaw}");
    assert!(elapsed < 10.0, "codec round trip took {elapsed:.1}s");
    println!(
        "PASS criterion 1: codec round trip on {checked} boxes, max err pos {max_pos:.2e} dim {max_dim:.2e} yaw {max_yaw:.2e} ({elapsed:.2}s)"
    );
}

#[test]
fn criterion_2_loss_zero_and_gradient() {
    let start = Instant::now();
    let w = LossWeights::<f64>::default();

    // Zero at ground truth for 100 random targets.
    let g = GridSpec::<f64>::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    for _ in 0..100 {
        let target = encode(&random_scene(&mut rng, &g), &g);
        let b = total_loss(&target.clone(), &target, &g, &w);
        assert_eq!(b.total, 0.0, "loss at ground truth must be exactly zero");
    }

    // Finite-difference agreement on 20 random 3×3 grids.
    let mut g3 = GridSpec::<f64>::default();
    g3.s = 3;
    let step = 1e-5;
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut target = GridTensor::<f64>::zeros(3, 1);
        for _ in 0..rng.random_range(1..3) {
            let (r, c) = (rng.random_range(0..3), rng.random_range(0..3));
            target.data[[r, c, 0]] = 1.0;
            target.data[[r, c, 1]] = 1.0;
            for ch in 2..9 {
                target.data[[r, c, ch]] = rng.random_range(0.2..0.8);
            }
        }
        let mut pred = GridTensor::<f64>::zeros(3, 1);
        for v in pred.data.iter_mut() {
            *v = rng.random_range(0.05..0.95);
        }
        let (_, grad) = total_loss_grad(&pred, &target, &g3, &w);
        let loss_at = |pred: &GridTensor<f64>, idx: (usize, usize, usize), v: f64| {
            let mut p = pred.clone();
            p.data[[idx.0, idx.1, idx.2]] = v;
            total_loss(&p, &target, &g3, &w).total
        };
        for r in 0..3 {
            for c in 0..3 {
                for ch in 0..9 {
                    let v = pred.data[[r, c, ch]];
                    let lp = loss_at(&pred, (r, c, ch), v + step);
                    let lm = loss_at(&pred, (r, c, ch), v - step);
                    let fd = (lp - lm) / (2.0 * step);
                    let an = grad.data[[r, c, ch]];
                    // Skip kink neighborhoods, where the two-sided
                    // difference is meaningless.
                    let l0 = loss_at(&pred, (r, c, ch), v);
                    let l2 = loss_at(&pred, (r, c, ch), v + 2.0 * step);
                    if ((l2 - 2.0 * lp + l0) / (step * step)).abs() > 1e4 {
                        continue;
                    }
                    let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                    worst = worst.max(rel);
                    assert!(rel < 1e-4, "rel err {rel} at ({r},{c},{ch}): {an} vs {fd}");
                    checked += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "loss checks took {elapsed:.1}s");
    println!(
        "PASS criterion 2: loss zero-at-truth (100 targets) and {checked} gradient checks, worst rel err {worst:.2e} ({elapsed:.2}s)"
    );
}

#[test]
fn criterion_3_loss_fixtures() {
    use mononext::loss::{box_loss, class_loss, confidence_loss};
    let w = LossWeights::<f64>::default();
    assert_eq!(w.obj, 5.0);
    assert_eq!(w.noobj, 1.0);
    assert_eq!(w.class, 1.0);
    assert_eq!(w.iou, 10.0);
    assert_eq!(w.yaw, 1.0);

    let g = GridSpec::<f64>::default();
    let obj = BoxSpec::new([0.0, 1.0, 42.5], [1.6, 1.5, 4.0], 0.0, 0);
    let target = encode(std::slice::from_ref(&obj), &g);

    // Missed object: 5·1² = 5.0.
    let zero_pred = GridTensor::<f64>::zeros(g.s, 1);
    let v1 = confidence_loss(&zero_pred, &target, &w);
    assert!((v1 - 5.0).abs() < 1e-9);

    // Empty target, conf 0.1 everywhere: 225·0.01 = 2.25.
    let empty = GridTensor::<f64>::zeros(g.s, 1);
    let mut noisy = GridTensor::<f64>::zeros(g.s, 1);
    for r in 0..g.s {
        for c in 0..g.s {
            noisy.data[[r, c, 0]] = 0.1;
        }
    }
    let v2 = confidence_loss(&noisy, &empty, &w);
    assert!((v2 - 2.25).abs() < 1e-9);

    // C=2 class fixture: (0.4² + 0.4²) = 0.32.
    let mut g2 = GridSpec::<f64>::default();
    g2.num_classes = 2;
    let target2 = encode(std::slice::from_ref(&obj), &g2);
    let mut pred2 = target2.clone();
    pred2.data[[7, 7, 1]] = 0.6;
    pred2.data[[7, 7, 2]] = 0.4;
    let v3 = class_loss(&pred2, &target2, &w);
    assert!((v3 - 0.32).abs() < 1e-9);

    // Yaw channel off by 0.1: 1·0.01.
    let mut pred = target.clone();
    pred.data[[7, 7, 8]] += 0.1;
    let v4 = box_loss(&pred, &target, &g, &w);
    assert!((v4 - 0.01).abs() < 1e-9);

    // Decoded IoU 0.5: 10·0.25 = 2.5.
    let mut pred = target.clone();
    pred.data[[7, 7, 7]] = target.data[[7, 7, 7]] / 2.0;
    let v5 = box_loss(&pred, &target, &g, &w);
    assert!((v5 - 2.5).abs() < 1e-9);

    println!("PASS criterion 3: loss fixtures ({v1}, {v2}, {v3}, {v4}, {v5}) = (5.0, 2.25, 0.32, 0.01, 2.5)");
}

#[test]
fn criterion_4_rotated_iou_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let a = common::random_box(&mut rng);
        let b = common::random_box(&mut rng);
        let exact = bev_iou(&a, &b);
        let mc = common::mc_bev_iou(&a, &b, 1_000_000, 9000 + i);
        worst = worst.max((exact - mc).abs());
        assert!(
            (exact - mc).abs() < 5e-3,
            "pair {i}: exact {exact} vs MC {mc}"
        );
    }

    // Unit square vs itself rotated 45°: IoU = 1/√2.
    let sq = BoxSpec::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0, 0);
    let rot = BoxSpec::new(
        [0.0, 0.0, 0.0],
        [1.0, 1.0, 1.0],
        std::f64::consts::FRAC_PI_4,
        0,
    );
    let iou = bev_iou(&sq, &rot);
    assert!((iou - 0.7071).abs() < 5e-3);

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "MC oracle took {elapsed:.1}s");
    println!(
        "PASS criterion 4: 100 MC comparisons, worst |Δ| {worst:.2e}; 45° square IoU {iou:.5} ({elapsed:.1}s)"
    );
}

#[test]
fn criterion_5_ap_oracle_and_matched_corpus() {
    // R11 fixture [TP, FP, TP] over 2 gts = 28/33.
    let pooled = vec![(0.9f64, true), (0.8, false), (0.7, true)];
    let ap = average_precision(&pooled, 2, Protocol::R11).unwrap();
    assert!((ap - 28.0 / 33.0).abs() < 1e-6, "R11 fixture AP {ap}");

    // Hand-matched 3-frame corpus: 5 gts, 6 dets, axis-aligned 2 m cubes.
    let cube = |x: f64, z: f64| BoxSpec::new([x, 0.0, z], [2.0, 2.0, 2.0], 0.0, 0);
    let mut ground_truth: BTreeMap<String, Vec<(BoxSpec<f64>, Difficulty)>> = BTreeMap::new();
    let mut predictions: BTreeMap<String, Vec<BoxSpec<f64>>> = BTreeMap::new();

    ground_truth.insert(
        "a".into(),
        vec![
            (cube(0.0, 10.0), Difficulty::Easy),
            (cube(10.0, 10.0), Difficulty::Easy),
        ],
    );
    predictions.insert(
        "a".into(),
        vec![
            cube(0.0, 10.0).with_score(0.95), // IoU 1.0 with G1
            cube(0.5, 10.0).with_score(0.90), // IoU 0.6 with G1 (already claimed)
        ],
    );
    ground_truth.insert("b".into(), vec![(cube(0.0, 20.0), Difficulty::Easy)]);
    predictions.insert(
        "b".into(),
        vec![
            cube(0.2, 20.0).with_score(0.80), // IoU 9/11 with G3
            cube(5.0, 20.0).with_score(0.70), // IoU 0
        ],
    );
    ground_truth.insert(
        "c".into(),
        vec![
            (cube(0.0, 30.0), Difficulty::Easy),
            (cube(8.0, 30.0), Difficulty::Easy),
        ],
    );
    predictions.insert(
        "c".into(),
        vec![
            {
                let mut b = cube(0.0, 31.0).with_score(0.60); // IoU 1/3 with G4
                b.center[2] = 31.0;
                b
            },
            cube(8.9, 30.0).with_score(0.50), // IoU 11/29 with G5
        ],
    );

    let report = evaluate(&predictions, &ground_truth, Protocol::R11);
    // Hand computation: at 0.7 and 0.5 the ranked pool is
    // [TP, FP, TP, FP, FP, FP] over 5 gts → AP = (3·1 + 2·(2/3))/11 = 13/33.
    // Mean IoU over the two TPs at 0.5: (1 + 9/11)/2 = 10/11.
    // Recognition at IoU > 0.1: G1, G3, G4 (1/3), G5 (11/29) → 4/5.
    for level in &report.levels {
        assert!((level.ap_07.unwrap() - 13.0 / 33.0).abs() < 1e-12);
        assert!((level.ap_05.unwrap() - 13.0 / 33.0).abs() < 1e-12);
        assert!((level.mean_iou.unwrap() - 10.0 / 11.0).abs() < 1e-12);
        assert!((level.recognition.unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(level.gt_count, 5);
    }
    println!(
        "PASS criterion 5: R11 fixture AP {ap:.6} = 28/33; 3-frame corpus reproduces (13/33, 13/33, 10/11, 0.8)"
    );
}

#[test]
fn criterion_6_shape_suite() {
    // Tiny backbone at full input size, C = 1.
    let mut tiny = MonoNext::<f32>::new(NetworkConfig::with_tiny_backbone(), 15, 3).unwrap();
    let img = ndarray::Array3::<f32>::from_elem((480, 480, 3), 0.5);
    let features = tiny.feature_extractor_forward(&img);
    assert_eq!(features.dim(), (15, 15, 128));
    for (task, width) in [
        (Task::Conf, 1),
        (Task::Class, 1),
        (Task::Pos, 3),
        (Task::Dim, 3),
        (Task::Yaw, 1),
    ] {
        assert_eq!(tiny.head_forward(&features, task).dim(), (15, 15, width));
    }
    let pred = tiny.forward(&img);
    assert_eq!(pred.data.dim(), (15, 15, 9));
    assert!(pred.data.iter().all(|v| (0.0..=1.0).contains(v)));

    // Full backbone (stride 32), C = 3 for the softmax sum check.
    let mut cfg = NetworkConfig::default();
    cfg.num_classes = 3;
    assert_eq!(cfg.backbone, BackboneKind::MobilenetV2Like);
    let mut full = MonoNext::<f32>::new(cfg, 15, 4).unwrap();
    let pred3 = full.forward(&img);
    assert_eq!(pred3.data.dim(), (15, 15, 11));
    let mut worst: f32 = 0.0;
    for r in 0..15 {
        for c in 0..15 {
            let sum: f32 = (1..4).map(|ch| pred3.data[[r, c, ch]]).sum();
            worst = worst.max((sum - 1.0).abs());
        }
    }
    assert!(worst < 1e-6, "class channels sum off by {worst}");
    println!(
        "PASS criterion 6: tiny and full forward shapes OK, 9 channels at C=1, class sums within {worst:.1e}"
    );
}

fn overfit_config(data_root: &std::path::Path, out_dir: &std::path::Path) -> TrainConfig<f32> {
    let mut cfg = TrainConfig::<f32>::default();
    cfg.data_root = data_root.to_path_buf();
    cfg.out_dir = out_dir.to_path_buf();
    cfg.split = SplitChoice::All;
    cfg.network = NetworkConfig::tiny();
    cfg.epochs = 300;
    cfg.batch_size = 8;
    cfg.learning_rate = 2e-3;
    cfg.augment = false;
    cfg.checkpoint_every = 0;
    cfg.eval_every = 0;
    cfg.seed = 1;
    cfg
}

#[test]
fn criterion_7_overfit_smoke() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data_root = dir.path().join("data");
    generate_synthetic_dataset(&data_root, 16, 0, &GridSpec::default()).unwrap();

    let cfg = overfit_config(&data_root, &dir.path().join("run"));
    let output = train(&cfg).unwrap();

    let dataset = mononext::kitti::KittiDataset::new(&cfg.data_root);
    let ids = dataset.frame_ids().unwrap();
    let mut model =
        mononext::network::load_checkpoint::<f32>(&output.checkpoint, &cfg.network, &cfg.grid)
            .unwrap();
    let preds = predict_frames(&mut model, &dataset, &ids, &cfg, None).unwrap();
    let gts = ground_truth_map::<f32>(&dataset, &ids, &cfg.classes).unwrap();
    let report = evaluate(&preds, &gts, Protocol::R11);

    let recognition = report.levels[2].recognition.unwrap();
    let ap05 = report.levels[2].ap_05.unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        recognition >= 0.9,
        "training-set recognition {recognition:.3} < 0.9"
    );
    assert!(ap05 >= 0.5, "training-set AP@0.5 {ap05:.3} < 0.5");
    assert!(elapsed <= 1800.0, "overfit run took {elapsed:.0}s");
    println!(
        "PASS criterion 7: overfit recognition {recognition:.3}, AP@0.5 {ap05:.3} over {} frames ({elapsed:.0}s)",
        ids.len()
    );
}

#[test]
fn criterion_8_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data_root = dir.path().join("data");
    generate_synthetic_dataset(&data_root, 8, 3, &GridSpec::default()).unwrap();

    // Two same-seed 5-step runs → bitwise identical loss sequences.
    let mut cfg = overfit_config(&data_root, &dir.path().join("runA"));
    cfg.epochs = 5;
    cfg.batch_size = 8; // 8 frames → 1 step per epoch → 5 steps
    let a = train(&cfg).unwrap();
    cfg.out_dir = dir.path().join("runB");
    let b = train(&cfg).unwrap();
    assert_eq!(a.log.steps.len(), 5);
    let seq_a: Vec<f64> = a.log.steps.iter().map(|s| s.total).collect();
    let seq_b: Vec<f64> = b.log.steps.iter().map(|s| s.total).collect();
    assert_eq!(seq_a, seq_b, "same-seed loss sequences differ");

    // Checkpoint round trip → bitwise identical predictions.
    let dataset = mononext::kitti::KittiDataset::new(&cfg.data_root);
    let ids = dataset.frame_ids().unwrap();
    let mut m1 =
        mononext::network::load_checkpoint::<f32>(&a.checkpoint, &cfg.network, &cfg.grid).unwrap();
    let mut m2 =
        mononext::network::load_checkpoint::<f32>(&b.checkpoint, &cfg.network, &cfg.grid).unwrap();
    cfg.threshold = 0.0; // keep every cell so the comparison sees raw scores
    cfg.nms_iou = None;
    let p1 = predict_frames(&mut m1, &dataset, &ids, &cfg, None).unwrap();
    let p2 = predict_frames(&mut m2, &dataset, &ids, &cfg, None).unwrap();
    for id in &ids {
        let (b1, b2) = (&p1[id], &p2[id]);
        assert_eq!(b1.len(), b2.len());
        for (x, y) in b1.iter().zip(b2.iter()) {
            assert_eq!(x.center, y.center);
            assert_eq!(x.dims, y.dims);
            assert_eq!(x.yaw, y.yaw);
            assert_eq!(x.score, y.score);
        }
    }
    println!(
        "PASS criterion 8: identical 5-step loss sequences and bitwise-identical reloaded predictions"
    );
}

#[test]
fn criterion_9_augmentation_invariants() {
    // Flip involution on a synthetic frame.
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic_dataset(dir.path(), 2, 11, &GridSpec::default()).unwrap();
    let dataset = mononext::kitti::KittiDataset::new(dir.path());
    for id in dataset.frame_ids().unwrap() {
        let frame: Frame<f64> = dataset.load_frame(&id).unwrap();
        let back = flip_frame(&flip_frame(&frame));
        assert_eq!(back.image, frame.image);
        for (a, b) in frame.labels.iter().zip(back.labels.iter()) {
            assert!((a.location[0] - b.location[0]).abs() < 1e-9);
            assert!((a.rotation_y - b.rotation_y).abs() < 1e-9);
            for k in 0..4 {
                assert!((a.bbox2d[k] - b.bbox2d[k]).abs() < 1e-9);
            }
        }
    }

    // Encode/flip equivariance on 200 random scenes.
    let g = GridSpec::<f64>::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1009);
    let mut scenes = 0usize;
    while scenes < 200 {
        let scene = random_scene(&mut rng, &g);
        // Exclude boundary cases where clamping differs between the two
        // sides: grid-line proximity in x and dims at the normalizer edge.
        let s = g.s as f64;
        let boundary = scene.iter().any(|b| {
            let u = (b.center[0] + 55.0) / 110.0 * s;
            (u - u.round()).abs() < 1e-3
                || b.dims[0] > 3.99
                || b.dims[1] > 3.99
                || b.dims[2] > 7.99
                || (b.center[1] - (-2.0)).abs() < 1e-3
                || (13.0 - b.center[1]).abs() < 1e-3
        });
        if boundary {
            continue;
        }
        // Mirror collisions: two objects may share a column after flipping
        // only if they also shared it before (z rule handles both sides the
        // same way), so no extra exclusion is needed.
        let flipped: Vec<BoxSpec<f64>> = scene
            .iter()
            .map(|b| {
                let mut f = b.clone();
                f.center[0] = -b.center[0];
                f.yaw = mononext::geometry::normalize_angle(std::f64::consts::PI - b.yaw);
                f
            })
            .collect();
        let enc = encode(&scene, &g);
        let enc_flip = encode(&flipped, &g);

        for row in 0..g.s {
            for col in 0..g.s {
                let mirror_col = g.s - 1 - col;
                for ch in 0..enc.channels() {
                    let got = enc_flip.data[[row, mirror_col, ch]];
                    let want = match ch {
                        2 => {
                            // tx mirrors to 1 − tx on occupied cells.
                            if enc.data[[row, col, 0]] == 1.0 {
                                1.0 - enc.data[[row, col, ch]]
                            } else {
                                0.0
                            }
                        }
                        8 => {
                            if enc.data[[row, col, 0]] == 1.0 {
                                let theta = enc.data[[row, col, ch]] * 2.0 * std::f64::consts::PI
                                    - std::f64::consts::PI;
                                let m = mononext::geometry::normalize_angle(
                                    std::f64::consts::PI - theta,
                                );
                                (m + std::f64::consts::PI) / (2.0 * std::f64::consts::PI)
                            } else {
                                0.0
                            }
                        }
                        _ => enc.data[[row, col, ch]],
                    };
                    assert!(
                        (got - want).abs() < 1e-9,
                        "scene {scenes} cell ({row},{col}) ch {ch}: {got} vs {want}"
                    );
                }
            }
        }
        scenes += 1;
    }
    println!("PASS criterion 9: flip involution and encode/flip equivariance on {scenes} scenes");
}
