//! Capsule approximations of limbs and cobot links, clearance, and
//! forecast-based collision scoring.

mod cobot;
mod detect;
mod geometry;

pub use cobot::{script_cobot, ChainScript, CobotTrajectory, Waypoint, COBOT_LINK_RADIUS_M};
pub use detect::{
    detect_collision, evaluate_collisions, human_capsules, label_collisions, scores,
    CollisionConfig, CollisionReport, CollisionWindows, Detection, WindowLog,
};
pub use geometry::{capsule_clearance, segment_distance, Capsule, ClearanceMode};
