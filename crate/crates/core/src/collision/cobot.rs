use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Capsule;
use crate::math::{self, add3, scale3, sub3, Vec3};
use crate::{Error, Result};

/// Default link radius: an 8 cm diameter.
pub const COBOT_LINK_RADIUS_M: f64 = 0.04;

fn default_radius() -> f64 {
    COBOT_LINK_RADIUS_M
}

/// Pose of one link chain at time `t_s`; `points` are joint positions in
/// meters, consecutive pairs forming the links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t_s: f64,
    pub points: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainScript {
    #[serde(default = "default_radius")]
    pub radius_m: f64,
    pub waypoints: Vec<Waypoint>,
}

/// Per-frame link capsules of a scripted cobot, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct CobotTrajectory {
    fps: f64,
    frames: Vec<Vec<Capsule>>,
}

impl CobotTrajectory {
    pub fn new(fps: f64, frames: Vec<Vec<Capsule>>) -> Result<Self> {
        if !(fps > 0.0) || !fps.is_finite() {
            return Err(Error::config(format!("cobot fps must be > 0, got {fps}")));
        }
        let Some(first) = frames.first() else {
            return Err(Error::config("cobot trajectory has no frames"));
        };
        let links = first.len();
        if links == 0 {
            return Err(Error::config("cobot trajectory has no links"));
        }
        for (f, caps) in frames.iter().enumerate() {
            if caps.len() != links {
                return Err(Error::config(format!(
                    "cobot frame {f} has {} links, frame 0 has {links}",
                    caps.len()
                )));
            }
            for c in caps {
                Capsule::new(c.a, c.b, c.radius)?;
            }
        }
        Ok(Self { fps, frames })
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> usize {
        self.frames.len()
    }

    pub fn links(&self) -> usize {
        self.frames[0].len()
    }

    pub fn links_at(&self, frame: usize) -> &[Capsule] {
        &self.frames[frame]
    }

    /// Frames `start .. start + len`.
    pub fn window(&self, start: usize, len: usize) -> Result<CobotTrajectory> {
        if len == 0 || start + len > self.frames.len() {
            return Err(Error::contract(format!(
                "cobot window {start}..{} outside {} frames",
                start + len,
                self.frames.len()
            )));
        }
        Ok(Self {
            fps: self.fps,
            frames: self.frames[start..start + len].to_vec(),
        })
    }
}

fn chain_at(w: &[Waypoint], t: f64) -> Vec<Vec3> {
    if t <= w[0].t_s {
        return w[0].points.clone();
    }
    for pair in w.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if t <= b.t_s {
            let alpha = (t - a.t_s) / (b.t_s - a.t_s);
            return a
                .points
                .iter()
                .zip(&b.points)
                .map(|(p, q)| add3(*p, scale3(sub3(*q, *p), alpha)))
                .collect();
        }
    }
    w[w.len() - 1].points.clone()
}

/// Samples piecewise-linear link chains at `fps`.
///
/// Frame `f` is time `f / fps`. The trajectory spans the latest waypoint
/// time, `round(duration * fps) + 1` frames; a chain that ends earlier holds
/// its last pose.
pub fn script_cobot(chains: &[ChainScript], fps: f64) -> Result<CobotTrajectory> {
    if !(fps > 0.0) || !fps.is_finite() {
        return Err(Error::config(format!("cobot fps must be > 0, got {fps}")));
    }
    if chains.is_empty() {
        return Err(Error::config("cobot script has no link chains"));
    }
    let mut duration: f64 = 0.0;
    for (ci, chain) in chains.iter().enumerate() {
        let w = &chain.waypoints;
        if w.len() < 2 {
            return Err(Error::config(format!("chain {ci} needs at least 2 waypoints")));
        }
        let n = w[0].points.len();
        if n < 2 {
            return Err(Error::config(format!("chain {ci} needs at least 2 points per waypoint")));
        }
        for (wi, p) in w.iter().enumerate() {
            if p.points.len() != n {
                return Err(Error::config(format!(
                    "chain {ci} waypoint {wi} has {} points, waypoint 0 has {n}",
                    p.points.len()
                )));
            }
            if !p.t_s.is_finite() || p.t_s < 0.0 || (wi > 0 && p.t_s <= w[wi - 1].t_s) {
                return Err(Error::config(format!(
                    "chain {ci} waypoint times must be non-negative and strictly increasing"
                )));
            }
        }
        duration = duration.max(w[w.len() - 1].t_s);
    }
    let frames = math::round(duration * fps) as usize + 1;
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let t = f as f64 / fps;
        let mut caps = Vec::new();
        for chain in chains {
            let pts = chain_at(&chain.waypoints, t);
            for link in pts.windows(2) {
                caps.push(Capsule::new(link[0], link[1], chain.radius_m)?);
            }
        }
        out.push(caps);
    }
    CobotTrajectory::new(fps, out)
}
