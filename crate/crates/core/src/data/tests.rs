use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::math::{norm3, sub3};
use crate::Error;

fn line_sequence(id: &str, subject: &str, frames: usize) -> MotionSequence {
    let data = (0..frames).flat_map(|f| [f as f64, 0.0, 0.0]).collect();
    MotionSequence::new(id, 25.0, subject, "walk", Poses::new(frames, 1, data).unwrap(), vec![]).unwrap()
}

#[test]
fn default_topology_is_a_tree() {
    let t = SkeletonTopology::default_15();
    t.validate().unwrap();
    assert_eq!(t.joints(), 15);
    assert_eq!(t.bones.len(), 14);
    assert_eq!(t.root(), 0);
    let order = t.order();
    assert_eq!(order.len(), 15);
    for b in &t.bones {
        let pi = order.iter().position(|&j| j == b.parent).unwrap();
        let ci = order.iter().position(|&j| j == b.child).unwrap();
        assert!(pi < ci);
    }
}

#[test]
fn topology_rejects_cycles_and_bad_radii() {
    let mut t = SkeletonTopology::default_15();
    t.bones[1].radius_m = 0.0;
    assert!(matches!(t.validate(), Err(Error::Config(_))));

    let mut t = SkeletonTopology::default_15();
    t.bones.pop();
    assert!(t.validate().is_err());

    // Right leg closes a loop and the head is cut off.
    let mut t = SkeletonTopology::default_15();
    t.bones[7] = Bone {
        parent: 3,
        child: 1,
        radius_m: 0.1,
        rest_offset_mm: None,
    };
    assert!(t.validate().is_err());
}

#[test]
fn poses_reject_non_finite_values_with_position() {
    let mut data = vec![0.0; 2 * 3 * 3];
    data[10] = f64::NAN;
    match Poses::new(2, 3, data) {
        Err(Error::Contract(msg)) => assert!(msg.contains("frame 1 joint 0"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn sequence_validates_collision_frames() {
    let p = Poses::zeros(5, 1);
    assert!(MotionSequence::new("a", 25.0, "s", "x", p.clone(), vec![5]).is_err());
    let s = MotionSequence::new("a", 25.0, "s", "x", p, vec![3, 1, 3]).unwrap();
    assert_eq!(s.collision_frames, vec![1, 3]);
}

#[test]
fn windows_of_a_45_frame_sequence() {
    let s = line_sequence("a", "s", 45);
    let w = window_sequences([&s], 10, 25, 10, false).unwrap();
    let starts: Vec<usize> = w.iter().map(|e| e.start_frame).collect();
    assert_eq!(starts, vec![0, 10]);
    assert_eq!(w[1].input.point(0, 0)[0], 10.0);
    assert_eq!(w[1].target.point(0, 0)[0], 20.0);
    assert_eq!(w[1].target.frames(), 25);
}

#[test]
fn stride_equal_to_length_gives_at_most_one_window() {
    let s = line_sequence("a", "s", 40);
    assert_eq!(window_sequences([&s], 10, 25, 40, false).unwrap().len(), 1);
    let short = line_sequence("b", "s", 30);
    assert!(window_sequences([&short], 10, 25, 30, false).unwrap().is_empty());
}

#[test]
fn collision_guard_drops_overlapping_windows() {
    let mut s = line_sequence("a", "s", 120);
    s.collision_frames = vec![12];
    let t = 5;
    let k = 5;
    let all = window_sequences([&s], t, k, 1, false).unwrap();
    let kept = window_sequences([&s], t, k, 1, true).unwrap();
    for w in &all {
        let end = w.start_frame + t + k - 1;
        let overlaps = w.start_frame <= 12 + 25 && 12 <= end;
        let present = kept.iter().any(|x| x.start_frame == w.start_frame);
        assert_eq!(present, !overlaps, "start {}", w.start_frame);
    }
    assert!(kept.iter().any(|w| w.start_frame == 38));
    assert!(!kept.iter().any(|w| w.start_frame == 37));
}

#[test]
fn zero_stride_is_rejected() {
    let s = line_sequence("a", "s", 40);
    assert!(window_sequences([&s], 10, 25, 0, false).is_err());
}

fn corpus_with_subjects(n: usize) -> Vec<MotionSequence> {
    (0..n * 2)
        .map(|i| line_sequence(&alloc::format!("q{i}"), &alloc::format!("S{}", i % n), 3))
        .collect()
}

#[test]
fn split_of_20_subjects() {
    let corpus = corpus_with_subjects(20);
    let split = make_split(&corpus, SplitFractions::default(), 3).unwrap();
    let subjects = |ids: &[alloc::string::String]| {
        let mut s: Vec<_> = DatasetSplit::select(&corpus, ids)
            .iter()
            .map(|q| q.subject_id.clone())
            .collect();
        s.sort();
        s.dedup();
        s.len()
    };
    assert_eq!(subjects(&split.train), 14);
    assert_eq!(subjects(&split.validation), 2);
    assert_eq!(subjects(&split.test), 4);
    assert_eq!(split.train.len() + split.validation.len() + split.test.len(), 40);
    assert_eq!(make_split(&corpus, SplitFractions::default(), 3).unwrap(), split);
}

#[test]
fn split_needs_enough_subjects() {
    let corpus = corpus_with_subjects(1);
    assert!(matches!(
        make_split(&corpus, SplitFractions::default(), 0),
        Err(Error::Config(_))
    ));
    let bad = SplitFractions {
        train: 0.5,
        validation: 0.1,
        test: 0.1,
    };
    assert!(make_split(&corpus_with_subjects(5), bad, 0).is_err());
}

#[test]
fn synth_is_deterministic() {
    let t = SkeletonTopology::default_15();
    let p = MotionParams::default();
    let a = synth_generate(&t, 4, 40, 25.0, &p, 7).unwrap();
    let b = synth_generate(&t, 4, 40, 25.0, &p, 7).unwrap();
    assert_eq!(a, b);
    let c = synth_generate(&t, 4, 40, 25.0, &p, 8).unwrap();
    assert_ne!(a[0].poses, c[0].poses);
    // Prefix stability: generating more sequences leaves earlier ones alone.
    let d = synth_generate(&t, 6, 40, 25.0, &p, 7).unwrap();
    assert_eq!(&d[..4], &a[..]);
}

#[test]
fn synth_assigns_subjects_and_actions() {
    let t = SkeletonTopology::default_15();
    let p = MotionParams::default();
    let c = synth_generate(&t, 60, 5, 25.0, &p, 1).unwrap();
    let mut subjects: Vec<_> = c.iter().map(|s| s.subject_id.clone()).collect();
    subjects.sort();
    subjects.dedup();
    assert_eq!(subjects.len(), 20);
    for s in &subjects {
        let mut actions: Vec<_> = c
            .iter()
            .filter(|q| &q.subject_id == s)
            .map(|q| q.action_label.clone())
            .collect();
        actions.sort();
        assert_eq!(actions, vec!["assemble", "hammer", "lift"]);
    }
}

#[test]
fn still_params_give_a_constant_pose() {
    let t = SkeletonTopology::default_15();
    let c = synth_generate(&t, 2, 30, 25.0, &MotionParams::still(), 5).unwrap();
    for s in &c {
        for f in 1..s.frames() {
            assert_eq!(s.poses.frame(f), s.poses.frame(0));
        }
    }
}

#[test]
fn bone_lengths_are_constant() {
    let t = SkeletonTopology::default_15();
    let c = synth_generate(&t, 3, 80, 25.0, &MotionParams::default(), 11).unwrap();
    for s in &c {
        for b in &t.bones {
            let l0 = norm3(sub3(s.poses.point(0, b.child), s.poses.point(0, b.parent)));
            for f in 0..s.frames() {
                let l = norm3(sub3(s.poses.point(f, b.child), s.poses.point(f, b.parent)));
                assert!((l - l0).abs() <= 1e-9 * l0, "{} vs {}", l, l0);
            }
        }
    }
}

#[test]
fn feet_start_near_the_floor() {
    let t = SkeletonTopology::default_15();
    let c = synth_generate(&t, 1, 1, 25.0, &MotionParams::still(), 2).unwrap();
    let z = c[0].poses.point(0, 3)[2];
    assert!(z.abs() < 1e-9, "{z}");
}

#[test]
fn reach_event_brings_joint_to_target() {
    let t = SkeletonTopology::default_15();
    let target = [600.0, 700.0, 1100.0];
    let p = MotionParams {
        reach: Some(ReachEvent {
            joint: 11,
            target_mm: target,
            duration_frames: 20,
            max_shift_mm: 5000.0,
            events_per_sequence: 1,
        }),
        ..MotionParams::still()
    };
    let c = synth_generate(&t, 1, 41, 25.0, &p, 3).unwrap();
    let d = norm3(sub3(c[0].poses.point(20, 11), target));
    assert!(d < 1e-9, "{d}");
    let away = norm3(sub3(c[0].poses.point(0, 11), target));
    assert!(away > 100.0);
}

#[test]
fn negative_amplitude_is_a_config_error() {
    let t = SkeletonTopology::default_15();
    let p = MotionParams {
        amplitude_rad: [-0.1, 0.2],
        ..MotionParams::default()
    };
    assert!(matches!(
        synth_generate(&t, 1, 10, 25.0, &p, 0),
        Err(Error::Config(_))
    ));
    let mut t2 = t.clone();
    t2.bones[0].rest_offset_mm = None;
    assert!(synth_generate(&t2, 1, 10, 25.0, &MotionParams::default(), 0).is_err());
    let _ = "x".to_string();
}
