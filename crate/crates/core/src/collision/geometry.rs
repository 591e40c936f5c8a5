use core::cmp::Ordering;

use alloc::format;
use serde::{Deserialize, Serialize};

use crate::math::{add3, dot3, norm3, scale3, sub3, Vec3};
use crate::{Error, Result};

/// A segment swept by a sphere. Coordinates and radius in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

impl Capsule {
    /// `a == b` is allowed and gives a sphere.
    pub fn new(a: Vec3, b: Vec3, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::config(format!("capsule radius must be > 0, got {radius}")));
        }
        if a.iter().chain(&b).any(|x| !x.is_finite()) {
            return Err(Error::config("capsule endpoints must be finite"));
        }
        Ok(Self { a, b, radius })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClearanceMode {
    /// Distance between the capsule axes.
    #[serde(alias = "axis")]
    AxisDistance,
    /// Axis distance minus both radii; negative when the capsules overlap.
    #[default]
    #[serde(alias = "surface")]
    SurfaceDistance,
}

impl core::str::FromStr for ClearanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "axis" | "axis_distance" => Ok(Self::AxisDistance),
            "surface" | "surface_distance" => Ok(Self::SurfaceDistance),
            _ => Err(Error::config(format!(
                "unknown clearance mode `{s}` (expected axis or surface)"
            ))),
        }
    }
}

const PARALLEL_EPS: f64 = 1e-18;

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

fn point_segment(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let d = sub3(b, a);
    let len2 = dot3(d, d);
    let s = if len2 > PARALLEL_EPS {
        clamp01(dot3(sub3(p, a), d) / len2)
    } else {
        0.0
    };
    norm3(sub3(p, add3(a, scale3(d, s))))
}

/// Closest-point parameters for two segments (Ericson, Real-Time Collision
/// Detection, 5.1.9), returned as the distance between those points.
fn closest_points(p1: Vec3, q1: Vec3, p2: Vec3, q2: Vec3) -> f64 {
    let d1 = sub3(q1, p1);
    let d2 = sub3(q2, p2);
    let r = sub3(p1, p2);
    let a = dot3(d1, d1);
    let e = dot3(d2, d2);
    let f = dot3(d2, r);
    let (s, t);
    if a <= PARALLEL_EPS && e <= PARALLEL_EPS {
        return norm3(r);
    }
    if a <= PARALLEL_EPS {
        s = 0.0;
        t = clamp01(f / e);
    } else {
        let c = dot3(d1, r);
        if e <= PARALLEL_EPS {
            t = 0.0;
            s = clamp01(-c / a);
        } else {
            let b = dot3(d1, d2);
            let denom = a * e - b * b;
            let s0 = if denom > 0.0 { clamp01((b * f - c * e) / denom) } else { 0.0 };
            let t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t = 0.0;
                s = clamp01(-c / a);
            } else if t0 > 1.0 {
                t = 1.0;
                s = clamp01((b - c) / a);
            } else {
                t = t0;
                s = s0;
            }
        }
    }
    norm3(sub3(add3(p1, scale3(d1, s)), add3(p2, scale3(d2, t))))
}

fn lex(a: &[Vec3; 2], b: &[Vec3; 2]) -> Ordering {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Minimum Euclidean distance between the closed segments `p1q1` and `p2q2`.
///
/// The pair is put in a canonical order first, so swapping the arguments
/// gives the same bits. The closest-point solution is cross-checked against
/// the four endpoint-to-segment distances, which guards the nearly parallel
/// case.
pub fn segment_distance(p1: Vec3, q1: Vec3, p2: Vec3, q2: Vec3) -> f64 {
    let (s1, s2) = ([p1, q1], [p2, q2]);
    let ([p1, q1], [p2, q2]) = if lex(&s1, &s2) == Ordering::Greater {
        (s2, s1)
    } else {
        (s1, s2)
    };
    let candidates = [
        closest_points(p1, q1, p2, q2),
        point_segment(p1, p2, q2),
        point_segment(q1, p2, q2),
        point_segment(p2, p1, q1),
        point_segment(q2, p1, q1),
    ];
    candidates.into_iter().fold(f64::INFINITY, f64::min)
}

pub fn capsule_clearance(c1: &Capsule, c2: &Capsule, mode: ClearanceMode) -> f64 {
    let d = segment_distance(c1.a, c1.b, c2.a, c2.b);
    match mode {
        ClearanceMode::AxisDistance => d,
        ClearanceMode::SurfaceDistance => d - (c1.radius + c2.radius),
    }
}
