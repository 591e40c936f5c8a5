//! Skeletons, motion sequences, windowing, synthetic motion and splits.

mod sequence;
mod split;
mod synth;
mod topology;
mod window;

pub use sequence::{MotionSequence, Poses};
pub use split::{make_split, DatasetSplit, SplitFractions};
pub use synth::{synth_generate, ActionProfile, MotionParams, ReachEvent};
pub use topology::{Bone, SkeletonTopology};
pub use window::{window_sequences, WindowedExample};

#[cfg(test)]
mod tests;
