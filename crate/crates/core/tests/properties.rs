use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sesgcn_core::collision::{
    capsule_clearance, detect_collision, segment_distance, Capsule, ClearanceMode, CobotTrajectory, CollisionConfig,
};
use sesgcn_core::data::{
    make_split, synth_generate, window_sequences, MotionParams, MotionSequence, Poses, SkeletonTopology,
    SplitFractions,
};
use sesgcn_core::math::{self, Vec3};
use sesgcn_core::metrics::{evaluate, mpjpe_at_frame, sequence_loss, ZeroVelocity};
use sesgcn_core::model::{Adjacency, Mode, ModelConfig, SesGcnModel, Variant};
use sesgcn_core::numerics::{BatchNormMode, Tape, Tensor};
use sesgcn_core::sparsify::{build_student, derive_masks, threshold_mask, SparsifyConfig};
use sesgcn_core::training::{train, TrainConfig};

fn rand_poses(rng: &mut ChaCha8Rng, frames: usize, joints: usize) -> Poses {
    let data = (0..frames * joints * 3).map(|_| rng.random_range(-500.0..500.0)).collect();
    Poses::new(frames, joints, data).unwrap()
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|x| x.to_bits()).collect()
}

fn grads_of(model: &SesGcnModel) -> Vec<Option<Vec<u64>>> {
    model.store().entries().iter().map(|e| e.tensor.grad.as_ref().map(bits)).collect()
}

fn tiny_config(variant: Variant, v: usize, t: usize, k: usize) -> ModelConfig {
    ModelConfig {
        joints: v,
        observed_frames: t,
        forecast_frames: k,
        channels: vec![3, 4, 4],
        gcn_layers: 2,
        tcn_layers: 2,
        variant,
        ..ModelConfig::default()
    }
}

fn variant_strategy() -> impl Strategy<Value = Variant> {
    prop_oneof![
        Just(Variant::Vanilla),
        Just(Variant::Sts),
        Just(Variant::StsDw),
        Just(Variant::Ses),
    ]
}

fn small_corpus(seed: u64, sequences: usize, length: usize) -> (SkeletonTopology, Vec<MotionSequence>) {
    let topo = SkeletonTopology::default_15();
    let params = MotionParams {
        subjects: sequences.min(6),
        ..MotionParams::default()
    };
    let seqs = synth_generate(&topo, sequences, length, 25.0, &params, seed).unwrap();
    (topo, seqs)
}

fn vec3() -> impl Strategy<Value = Vec3> {
    [-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0]
}

fn rotation(angles: Vec3) -> [[f64; 3]; 3] {
    math::euler_xyz(angles[0], angles[1], angles[2])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_and_gradients_are_deterministic(seed in any::<u64>(), variant in variant_strategy()) {
        let run = || {
            let model = SesGcnModel::new(tiny_config(variant, 4, 3, 3), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
            let obs = [rand_poses(&mut rng, 3, 4), rand_poses(&mut rng, 3, 4)];
            let refs: Vec<&Poses> = obs.iter().collect();
            let mut f = model.forward(&refs, Mode::Train).unwrap();
            let root = f.tape.sum(f.prediction).unwrap();
            let g = f.tape.backward(root).unwrap();
            let value = bits(f.tape.value(f.prediction));
            let grads: Vec<Vec<u64>> = model
                .store()
                .entries()
                .iter()
                .filter_map(|e| g.get(f.bound.var(model.store().find(&e.name).unwrap())).map(bits))
                .collect();
            (value, grads)
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn backward_twice_with_reset_equals_backward_once(seed in any::<u64>()) {
        let mut model = SesGcnModel::new(tiny_config(Variant::StsDw, 3, 4, 3), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = rand_poses(&mut rng, 4, 3);
        let mut f = model.forward(&[&obs], Mode::Train).unwrap();
        let root = f.tape.mean(f.prediction).unwrap();

        let once = f.tape.backward(root).unwrap();
        model.store_mut().accumulate(&once, &f.bound).unwrap();
        let first = grads_of(&model);

        model.store_mut().zero_grad();
        let _ = f.tape.backward(root).unwrap();
        model.store_mut().zero_grad();
        let again = f.tape.backward(root).unwrap();
        model.store_mut().accumulate(&again, &f.bound).unwrap();
        let second = grads_of(&model);
        prop_assert_eq!(first, second);
    }

    #[test]
    fn batch_norm_standardizes_each_channel(seed in any::<u64>(), n in 1usize..4, c in 1usize..5, v in 1usize..5, t in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift: Vec<f64> = (0..c).map(|_| rng.random_range(-50.0..50.0)).collect();
        let spread: Vec<f64> = (0..c).map(|_| rng.random_range(0.1..20.0)).collect();
        let x = Tensor::from_fn(&[n, c, v, t], |i| {
            let ch = (i / (v * t)) % c;
            shift[ch] + spread[ch] * rng.random_range(-1.0..1.0)
        })
        .unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let gamma = tape.constant(Tensor::full(&[c], 1.0));
        let beta = tape.constant(Tensor::zeros(&[c]));
        let (y, _) = tape.batch_norm(xv, gamma, beta, 1e-12, BatchNormMode::Train).unwrap();
        let count = (n * v * t) as f64;
        let moments = |data: &[f64], ch: usize| {
            let vals: Vec<f64> = (0..n)
                .flat_map(|b| (0..v * t).map(move |j| (b, j)))
                .map(|(b, j)| data[(b * c + ch) * v * t + j])
                .collect();
            let mean = vals.iter().sum::<f64>() / count;
            let var = vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / count;
            (mean, var)
        };
        for ch in 0..c {
            let (_, raw) = moments(tape.value(xv).data(), ch);
            let (mean, var) = moments(tape.value(y).data(), ch);
            prop_assert!(mean.abs() < 1e-6, "channel {} mean {}", ch, mean);
            // The epsilon only matters for near-constant channels.
            prop_assert!((var - raw / (raw + 1e-12)).abs() < 1e-6, "channel {} variance {}", ch, var);
            if raw > 1e-3 {
                prop_assert!((var - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn output_shape_matches_config(
        seed in any::<u64>(),
        variant in variant_strategy(),
        v in 1usize..6,
        t in 2usize..6,
        k in 3usize..8,
        layers in 1usize..4,
        width in 1usize..6,
        tcn in 1usize..4,
        n in 1usize..3,
    ) {
        let mut cfg = ModelConfig {
            joints: v,
            observed_frames: t,
            forecast_frames: k,
            tcn_layers: tcn,
            variant,
            ..ModelConfig::default()
        }
        .with_width(layers, width);
        cfg.alpha = Some(1);
        let model = SesGcnModel::new(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs: Vec<Poses> = (0..n).map(|_| rand_poses(&mut rng, t, v)).collect();
        let refs: Vec<&Poses> = obs.iter().collect();
        let f = model.forward(&refs, Mode::Eval).unwrap();
        prop_assert_eq!(f.tape.value(f.prediction).shape(), &[n, 3, v, k][..]);
        for p in model.predict(&refs).unwrap() {
            prop_assert_eq!((p.frames(), p.joints()), (k, v));
        }
    }

    #[test]
    fn thresholds_are_monotone(seed in any::<u64>(), e1 in 0.0f64..1.0, e2 in 0.0f64..1.0) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::from_fn(&[4, 4, 3], |_| rng.random_range(-3.0..3.0)).unwrap();
        let m_lo = threshold_mask(&a, lo);
        let m_hi = threshold_mask(&a, hi);
        for (l, h) in m_lo.data().iter().zip(m_hi.data()) {
            prop_assert!(l >= h);
        }
    }

    #[test]
    fn rederiving_after_zeroing_never_densifies(seed in any::<u64>(), epsilon in 0.05f64..0.6) {
        let cfg = SparsifyConfig { epsilon, target_sparsity: None, per_matrix: true };
        let mut teacher = SesGcnModel::new(tiny_config(Variant::StsDw, 4, 3, 3), seed).unwrap();
        let first = derive_masks(&teacher, &cfg).unwrap();
        for (l, m) in first.iter().enumerate() {
            let Adjacency::Factored { spatial, temporal } = teacher.adjacency(l) else { unreachable!() };
            for (id, mask) in [(spatial, &m.spatial), (temporal, &m.temporal)] {
                let value = &mut teacher.store_mut().get_mut(id).value;
                for (x, keep) in value.data_mut().iter_mut().zip(mask.data()) {
                    if *keep == 0.0 {
                        *x = 0.0;
                    }
                }
            }
        }
        let second = derive_masks(&teacher, &cfg).unwrap();
        for (a, b) in first.iter().zip(&second) {
            for (x, y) in a.spatial.data().iter().zip(b.spatial.data()).chain(a.temporal.data().iter().zip(b.temporal.data())) {
                prop_assert!(y <= x);
            }
        }
    }

    #[test]
    fn windows_cover_every_start_once(seed in any::<u64>(), t in 1usize..6, k in 1usize..6, stride in 1usize..5, lens in prop::collection::vec(1usize..30, 1..4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seqs: Vec<MotionSequence> = lens
            .iter()
            .enumerate()
            .map(|(i, &len)| MotionSequence::new(format!("s{i}"), 25.0, "p", "a", rand_poses(&mut rng, len, 2), vec![]).unwrap())
            .collect();
        let windows = window_sequences(&seqs, t, k, stride, false).unwrap();
        for seq in &seqs {
            let expected: Vec<usize> = if seq.frames() >= t + k {
                (0..=seq.frames() - t - k).step_by(stride).collect()
            } else {
                vec![]
            };
            let got: Vec<usize> = windows.iter().filter(|w| w.sequence_id == seq.id).map(|w| w.start_frame).collect();
            prop_assert_eq!(&got, &expected);
            for w in windows.iter().filter(|w| w.sequence_id == seq.id) {
                prop_assert_eq!(&w.input, &seq.poses.slice(w.start_frame, t).unwrap());
                prop_assert_eq!(&w.target, &seq.poses.slice(w.start_frame + t, k).unwrap());
            }
        }
    }

    #[test]
    fn splits_never_share_a_subject(seed in any::<u64>(), n in 3usize..40, subjects in 3usize..12, train in 0.1f64..0.8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus: Vec<MotionSequence> = (0..n)
            .map(|i| {
                let subject = format!("p{}", rng.random_range(0..subjects));
                MotionSequence::new(format!("s{i}"), 25.0, subject, "a", Poses::zeros(2, 1), vec![]).unwrap()
            })
            .collect();
        let distinct: std::collections::BTreeSet<&str> = corpus.iter().map(|s| s.subject_id.as_str()).collect();
        prop_assume!(distinct.len() >= 3);
        let rest = 1.0 - train;
        let fractions = SplitFractions { train, validation: rest / 2.0, test: rest / 2.0 };
        let split = make_split(&corpus, fractions, seed).unwrap();
        let subjects_of = |ids: &[String]| -> std::collections::BTreeSet<String> {
            ids.iter().map(|id| corpus.iter().find(|s| &s.id == id).unwrap().subject_id.clone()).collect()
        };
        let (a, b, c) = (subjects_of(&split.train), subjects_of(&split.validation), subjects_of(&split.test));
        prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        let mut all: Vec<&String> = split.train.iter().chain(&split.validation).chain(&split.test).collect();
        all.sort();
        let mut ids: Vec<&String> = corpus.iter().map(|s| &s.id).collect();
        ids.sort();
        prop_assert_eq!(all, ids);
    }

    #[test]
    fn mpjpe_behaves_like_a_metric(seed in any::<u64>(), offset in vec3()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = rand_poses(&mut rng, 5, 4);
        let truth = rand_poses(&mut rng, 5, 4);
        let shift = |p: &Poses| {
            let d = p.data().iter().enumerate().map(|(i, x)| x + offset[i % 3] * 1000.0).collect();
            Poses::new(p.frames(), p.joints(), d).unwrap()
        };
        let (ps, ts) = (shift(&pred), shift(&truth));
        for t in 0..5 {
            let e = mpjpe_at_frame(&pred, &truth, t).unwrap();
            prop_assert!(e > 0.0);
            prop_assert_eq!(mpjpe_at_frame(&pred, &pred, t).unwrap(), 0.0);
            prop_assert!((mpjpe_at_frame(&ps, &ts, t).unwrap() - e).abs() < 1e-9 * e.max(1.0));
        }
    }

    #[test]
    fn sequence_loss_is_mean_of_frame_errors(seed in any::<u64>(), frames in 1usize..12, joints in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = rand_poses(&mut rng, frames, joints);
        let truth = rand_poses(&mut rng, frames, joints);
        let mean = (0..frames).map(|t| mpjpe_at_frame(&pred, &truth, t).unwrap()).sum::<f64>() / frames as f64;
        prop_assert!((sequence_loss(&pred, &truth).unwrap() - mean).abs() < 1e-12 * mean.max(1.0));
    }

    #[test]
    fn segment_distance_symmetry_and_invariance(p1 in vec3(), q1 in vec3(), p2 in vec3(), q2 in vec3(), shift in vec3(), angles in vec3()) {
        let d = segment_distance(p1, q1, p2, q2);
        prop_assert_eq!(d.to_bits(), segment_distance(p2, q2, p1, q1).to_bits());
        let tr = |p: Vec3| math::add3(p, shift);
        prop_assert!((segment_distance(tr(p1), tr(q1), tr(p2), tr(q2)) - d).abs() < 1e-12);
        let r = rotation(angles);
        let rot = |p: Vec3| math::matvec3(&r, p);
        prop_assert!((segment_distance(rot(p1), rot(q1), rot(p2), rot(q2)) - d).abs() < 1e-12);
    }

    #[test]
    fn analytic_distance_never_exceeds_a_sample(p1 in vec3(), q1 in vec3(), p2 in vec3(), q2 in vec3(), s in 0.0f64..=1.0, u in 0.0f64..=1.0) {
        let d = segment_distance(p1, q1, p2, q2);
        let at = |a: Vec3, b: Vec3, w: f64| math::add3(a, math::scale3(math::sub3(b, a), w));
        let sampled = math::norm3(math::sub3(at(p1, q1, s), at(p2, q2, u)));
        prop_assert!(d <= sampled + 1e-12);
        prop_assert!(d >= 0.0);
    }

    #[test]
    fn clearance_never_grows_with_radius(a in vec3(), b in vec3(), c in vec3(), d in vec3(), r1 in 0.01f64..0.5, r2 in 0.01f64..0.5, grow in 0.0f64..0.5) {
        let h = Capsule::new(a, b, r1).unwrap();
        let l = Capsule::new(c, d, r2).unwrap();
        let base = capsule_clearance(&h, &l, ClearanceMode::SurfaceDistance);
        let h2 = Capsule::new(a, b, r1 + grow).unwrap();
        let l2 = Capsule::new(c, d, r2 + grow).unwrap();
        prop_assert!(capsule_clearance(&h2, &l, ClearanceMode::SurfaceDistance) <= base);
        prop_assert!(capsule_clearance(&h, &l2, ClearanceMode::SurfaceDistance) <= base);
    }

    #[test]
    fn larger_threshold_keeps_positives(seed in any::<u64>(), t1 in 0.01f64..1.0, t2 in 0.01f64..1.0, mode in prop_oneof![Just(ClearanceMode::SurfaceDistance), Just(ClearanceMode::AxisDistance)]) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let topo = SkeletonTopology::default_15();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let poses = rand_poses(&mut rng, 4, topo.joints());
        let frames: Vec<Vec<Capsule>> = (0..4)
            .map(|_| {
                let mut p = || [rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)];
                vec![Capsule::new(p(), p(), 0.05).unwrap()]
            })
            .collect();
        let cobot = CobotTrajectory::new(25.0, frames).unwrap();
        let small = detect_collision(&poses, &topo, &cobot, &CollisionConfig { threshold_m: lo, clearance_mode: mode }).unwrap();
        let large = detect_collision(&poses, &topo, &cobot, &CollisionConfig { threshold_m: hi, clearance_mode: mode }).unwrap();
        prop_assert!(!small.flag || large.flag);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn synthetic_joints_respect_the_speed_bound(seed in any::<u64>()) {
        let topo = SkeletonTopology::default_15();
        let params = MotionParams::default();
        let fps = 25.0;
        let bound = params.speed_bound_mm_per_frame(&topo, fps).unwrap();
        let seqs = synth_generate(&topo, 6, 80, fps, &params, seed).unwrap();
        for s in &seqs {
            for f in 1..s.frames() {
                for j in 0..s.joints() {
                    let step = math::norm3(math::sub3(s.poses.point(f, j), s.poses.point(f - 1, j)));
                    prop_assert!(step <= bound, "{} frame {} joint {}: {} > {}", s.id, f, j, step, bound);
                }
            }
        }
    }

    #[test]
    fn evaluation_is_pure(seed in any::<u64>()) {
        let (_, seqs) = small_corpus(seed, 3, 40);
        let windows = window_sequences(&seqs, 4, 3, 5, false).unwrap();
        let model = SesGcnModel::new(tiny_config(Variant::Sts, 15, 4, 3), seed).unwrap();
        let before = model.clone();
        let a = evaluate(&model, &windows, &[1, 3], 4).unwrap();
        let b = evaluate(&model, &windows, &[1, 3], 7).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&model, &before);
        prop_assert_eq!(&evaluate(&ZeroVelocity, &windows, &[2], 3).unwrap(), &evaluate(&ZeroVelocity, &windows, &[2], 3).unwrap());
    }

    #[test]
    fn masked_entries_stay_zero_and_history_is_finite(seed in any::<u64>(), epochs in 1usize..4) {
        let (_, seqs) = small_corpus(seed, 4, 30);
        let windows = window_sequences(&seqs, 4, 3, 3, false).unwrap();
        let (tr, va) = windows.split_at(windows.len() - 3);
        let cfg = tiny_config(Variant::StsDw, 15, 4, 3);
        let teacher = SesGcnModel::new(cfg.clone(), seed).unwrap();
        let masks = derive_masks(&teacher, &SparsifyConfig::default()).unwrap();
        let mut student = build_student(&cfg, masks.clone(), seed + 1).unwrap();
        let tc = TrainConfig { epochs, batch_size: 5, base_lr: 0.05, decay_epochs: vec![], seed, ..TrainConfig::default() };
        let outcome = train(&mut student, tr, va, &tc).unwrap();
        prop_assert_eq!(outcome.history.len(), epochs);
        for r in &outcome.history {
            prop_assert!(r.train_loss_mm.is_finite() && r.val_loss_mm.is_finite());
        }
        for model in [&student, &outcome.best] {
            for (l, m) in masks.iter().enumerate() {
                let Adjacency::Factored { spatial, temporal } = model.adjacency(l) else { unreachable!() };
                for (id, mask) in [(spatial, &m.spatial), (temporal, &m.temporal)] {
                    for (x, keep) in model.store().get(id).value.data().iter().zip(mask.data()) {
                        if *keep == 0.0 {
                            prop_assert_eq!(x.to_bits(), 0u64);
                        }
                    }
                }
            }
        }
    }
}
