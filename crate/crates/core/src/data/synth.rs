//! Forward-kinematics motion generator.
//!
//! Every joint carries three sinusoidal Euler angles. Positions follow from
//! the bone tree, so bone lengths are constant by construction. On top of the
//! articulated motion the root drifts at a constant velocity and may be
//! translated toward a target by raised-cosine reach events.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MotionSequence, Poses, SkeletonTopology};
use crate::math::{self, add3, euler_xyz, matmul3, matvec3, norm3, scale3, sub3, Mat3, Vec3};
use crate::{Error, Result};

const SUBJECT_STREAM: u64 = 1 << 32;

/// Per-body-part amplitude gains and a frequency gain for one action label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionProfile {
    pub name: String,
    pub arm_gain: f64,
    pub leg_gain: f64,
    pub torso_gain: f64,
    pub frequency_gain: f64,
}

impl ActionProfile {
    fn new(name: &str, arm: f64, leg: f64, torso: f64, freq: f64) -> Self {
        Self {
            name: name.to_string(),
            arm_gain: arm,
            leg_gain: leg,
            torso_gain: torso,
            frequency_gain: freq,
        }
    }
}

/// Root translation that brings `joint` toward `target_mm` and back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReachEvent {
    pub joint: usize,
    pub target_mm: Vec3,
    pub duration_frames: usize,
    /// Cap on the translation length.
    pub max_shift_mm: f64,
    /// Evenly spaced events per sequence.
    pub events_per_sequence: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionParams {
    pub subjects: usize,
    /// Range of per-axis joint angle amplitudes, radians.
    pub amplitude_rad: [f64; 2],
    pub frequency_hz: [f64; 2],
    /// Amplitude multiplier for the root orientation.
    pub root_gain: f64,
    /// Upper bound on the constant root drift speed.
    pub drift_mm_per_s: f64,
    /// Range of the per-subject uniform bone scale.
    pub bone_scale: [f64; 2],
    /// Half-width of the random horizontal placement of the root.
    pub placement_mm: f64,
    pub actions: Vec<ActionProfile>,
    pub reach: Option<ReachEvent>,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            subjects: 20,
            amplitude_rad: [0.05, 0.45],
            frequency_hz: [0.2, 0.7],
            root_gain: 0.15,
            drift_mm_per_s: 120.0,
            bone_scale: [0.9, 1.1],
            placement_mm: 300.0,
            actions: vec![
                ActionProfile::new("assemble", 1.0, 0.25, 0.5, 1.0),
                ActionProfile::new("lift", 0.7, 0.8, 0.6, 0.8),
                ActionProfile::new("hammer", 1.3, 0.15, 0.3, 1.6),
            ],
            reach: None,
        }
    }
}

impl MotionParams {
    /// All amplitudes and drift zero: every sequence holds one pose.
    pub fn still() -> Self {
        Self {
            amplitude_rad: [0.0, 0.0],
            drift_mm_per_s: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self, topology: &SkeletonTopology) -> Result<()> {
        let range = |name: &str, r: [f64; 2], min: f64| -> Result<()> {
            if r.iter().any(|x| !x.is_finite()) || r[0] < min || r[0] > r[1] {
                return Err(Error::config(format!(
                    "{name} range [{}, {}] is invalid",
                    r[0], r[1]
                )));
            }
            Ok(())
        };
        if self.subjects == 0 {
            return Err(Error::config("at least one subject is required"));
        }
        range("amplitude_rad", self.amplitude_rad, 0.0)?;
        range("frequency_hz", self.frequency_hz, 0.0)?;
        range("bone_scale", self.bone_scale, f64::MIN_POSITIVE)?;
        for (name, v) in [
            ("root_gain", self.root_gain),
            ("drift_mm_per_s", self.drift_mm_per_s),
            ("placement_mm", self.placement_mm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be non-negative")));
            }
        }
        if self.actions.is_empty() {
            return Err(Error::config("at least one action profile is required"));
        }
        for a in &self.actions {
            let gains = [a.arm_gain, a.leg_gain, a.torso_gain, a.frequency_gain];
            if gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
                return Err(Error::config(format!("action {} has a negative gain", a.name)));
            }
        }
        if let Some(r) = &self.reach {
            if r.joint >= topology.joints() {
                return Err(Error::config("reach joint out of range"));
            }
            if r.duration_frames == 0 || !(r.max_shift_mm.is_finite() && r.max_shift_mm >= 0.0) {
                return Err(Error::config("reach needs a positive duration and shift cap"));
            }
            if r.target_mm.iter().any(|x| !x.is_finite()) {
                return Err(Error::config("reach target not finite"));
            }
        }
        if topology.rest_lengths_mm().is_none() {
            return Err(Error::config("topology lacks rest offsets for forward kinematics"));
        }
        Ok(())
    }

    fn gain(&self, topology: &SkeletonTopology, joint: usize, action: &ActionProfile) -> f64 {
        if topology.parent_of(joint).is_none() {
            return self.root_gain;
        }
        let name = topology.joint_names[joint].as_str();
        if ["shoulder", "elbow", "wrist"].iter().any(|p| name.contains(p)) {
            action.arm_gain
        } else if ["hip", "knee", "ankle"].iter().any(|p| name.contains(p)) {
            action.leg_gain
        } else {
            action.torso_gain
        }
    }

    /// Upper bound on any joint's displacement between consecutive frames.
    ///
    /// A joint moves through the root translation plus the rotation of each
    /// ancestor about its own position. An Euler triple changes orientation at
    /// an angular rate of at most the sum of its axis rates, and each axis rate
    /// is at most `amplitude * 2π * frequency`.
    pub fn speed_bound_mm_per_frame(&self, topology: &SkeletonTopology, fps: f64) -> Result<f64> {
        self.validate(topology)?;
        let lengths = topology.rest_lengths_mm().unwrap_or_default();
        let scale = self.bone_scale[1];
        let freq_gain = self.actions.iter().map(|a| a.frequency_gain).fold(0.0, f64::max);
        let omega: Vec<f64> = (0..topology.joints())
            .map(|j| {
                let g = self
                    .actions
                    .iter()
                    .map(|a| self.gain(topology, j, a))
                    .fold(0.0, f64::max);
                3.0 * self.amplitude_rad[1] * g * 2.0 * PI * self.frequency_hz[1] * freq_gain
            })
            .collect();
        let mut translation = self.drift_mm_per_s;
        if let Some(r) = &self.reach {
            translation += r.events_per_sequence as f64 * r.max_shift_mm * PI / r.duration_frames as f64 * fps;
        }
        let mut worst: f64 = 0.0;
        for j in 0..topology.joints() {
            let mut speed = translation;
            let mut path = 0.0;
            let mut node = j;
            while let Some(p) = topology.parent_of(node) {
                let bone = topology.bones.iter().position(|b| b.child == node).unwrap_or(0);
                path += lengths[bone] * scale;
                speed += omega[p] * path;
                node = p;
            }
            worst = worst.max(speed);
        }
        Ok(worst / fps)
    }
}

struct JointWave {
    amplitude: Vec3,
    angular_freq: Vec3,
    phase: Vec3,
}

struct SequencePlan {
    waves: Vec<JointWave>,
    yaw: Mat3,
    base: Vec3,
    drift: Vec3,
    scale: f64,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn pose_at(topology: &SkeletonTopology, order: &[usize], plan: &SequencePlan, time_s: f64, shift: Vec3) -> Vec<Vec3> {
    let v = topology.joints();
    let mut rot = vec![[[0.0; 3]; 3]; v];
    let mut pos = vec![[0.0; 3]; v];
    let local = |j: usize| {
        let w = &plan.waves[j];
        let a: [f64; 3] = core::array::from_fn(|k| w.amplitude[k] * math::sin(w.angular_freq[k] * time_s + w.phase[k]));
        euler_xyz(a[0], a[1], a[2])
    };
    let root = order[0];
    rot[root] = matmul3(&plan.yaw, &local(root));
    pos[root] = add3(add3(plan.base, scale3(plan.drift, time_s)), shift);
    for &j in &order[1..] {
        let bone = topology.bones.iter().find(|b| b.child == j).expect("validated tree");
        let offset = scale3(bone.rest_offset_mm.unwrap_or([0.0; 3]), plan.scale);
        pos[j] = add3(pos[bone.parent], matvec3(&rot[bone.parent], offset));
        rot[j] = matmul3(&rot[bone.parent], &local(j));
    }
    pos
}

/// Generates `n_sequences` sequences of `length` frames.
///
/// Sequence `i` belongs to subject `i % subjects` and performs action
/// `(i / subjects) % actions`. Subject traits and sequence motion come from
/// separate streams of one seeded generator, so adding sequences never
/// changes the ones already generated.
pub fn synth_generate(
    topology: &SkeletonTopology,
    n_sequences: usize,
    length: usize,
    fps: f64,
    params: &MotionParams,
    seed: u64,
) -> Result<Vec<MotionSequence>> {
    topology.validate()?;
    params.validate(topology)?;
    if length == 0 || !(fps.is_finite() && fps > 0.0) {
        return Err(Error::config("length and fps must be positive"));
    }
    let order = topology.order();
    let v = topology.joints();
    let rest = pose_at(
        topology,
        &order,
        &SequencePlan {
            waves: (0..v)
                .map(|_| JointWave {
                    amplitude: [0.0; 3],
                    angular_freq: [0.0; 3],
                    phase: [0.0; 3],
                })
                .collect(),
            yaw: math::IDENTITY3,
            base: [0.0; 3],
            drift: [0.0; 3],
            scale: 1.0,
        },
        0.0,
        [0.0; 3],
    );
    let floor = rest.iter().map(|p| p[2]).fold(0.0, f64::min);

    let mut out = Vec::with_capacity(n_sequences);
    for i in 0..n_sequences {
        let subject = i % params.subjects;
        let action = &params.actions[(i / params.subjects) % params.actions.len()];

        let mut srng = ChaCha8Rng::seed_from_u64(seed);
        srng.set_stream(SUBJECT_STREAM + subject as u64);
        let scale = uniform(&mut srng, params.bone_scale);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let waves = (0..v)
            .map(|j| {
                let gain = params.gain(topology, j, action);
                let mut wave = JointWave {
                    amplitude: [0.0; 3],
                    angular_freq: [0.0; 3],
                    phase: [0.0; 3],
                };
                for k in 0..3 {
                    wave.amplitude[k] = uniform(&mut rng, params.amplitude_rad) * gain;
                    wave.angular_freq[k] =
                        2.0 * PI * uniform(&mut rng, params.frequency_hz) * action.frequency_gain;
                    wave.phase[k] = uniform(&mut rng, [0.0, 2.0 * PI]);
                }
                wave
            })
            .collect();
        let yaw_angle = uniform(&mut rng, [-0.3, 0.3]);
        let heading = uniform(&mut rng, [0.0, 2.0 * PI]);
        let speed = uniform(&mut rng, [0.0, params.drift_mm_per_s]);
        let base = [
            uniform(&mut rng, [-params.placement_mm, params.placement_mm]),
            uniform(&mut rng, [-params.placement_mm, params.placement_mm]),
            -floor * scale,
        ];
        let plan = SequencePlan {
            waves,
            yaw: euler_xyz(0.0, 0.0, yaw_angle),
            base,
            drift: [speed * math::cos(heading), speed * math::sin(heading), 0.0],
            scale,
        };

        let events: Vec<(f64, f64, Vec3)> = match &params.reach {
            Some(r) if r.events_per_sequence > 0 => (0..r.events_per_sequence)
                .map(|e| {
                    let centre = math::round(
                        (e + 1) as f64 * (length - 1) as f64 / (r.events_per_sequence + 1) as f64,
                    );
                    let start = centre - r.duration_frames as f64 / 2.0;
                    let unreached = pose_at(topology, &order, &plan, centre / fps, [0.0; 3]);
                    let mut delta = sub3(r.target_mm, unreached[r.joint]);
                    let d = norm3(delta);
                    if d > r.max_shift_mm {
                        delta = scale3(delta, r.max_shift_mm / d);
                    }
                    (start, r.duration_frames as f64, delta)
                })
                .collect(),
            _ => Vec::new(),
        };

        let mut data = Vec::with_capacity(length * v * 3);
        for f in 0..length {
            let mut shift = [0.0; 3];
            for &(start, duration, delta) in &events {
                let u = (f as f64 - start) / duration;
                if (0.0..=1.0).contains(&u) {
                    let w = 0.5 * (1.0 - math::cos(2.0 * PI * u));
                    shift = add3(shift, scale3(delta, w));
                }
            }
            for p in pose_at(topology, &order, &plan, f as f64 / fps, shift) {
                data.extend_from_slice(&p);
            }
        }
        out.push(MotionSequence::new(
            format!("seq{i:03}"),
            fps,
            format!("S{subject:02}"),
            action.name.clone(),
            Poses::new(length, v, data)?,
            Vec::new(),
        )?);
    }
    Ok(out)
}
