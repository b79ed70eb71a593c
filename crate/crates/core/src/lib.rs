//! Volumetric Gaussian hand model and generative depth-fitting energy.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only computation:
//!
//! 1. [`skeleton`] – 21-keypoint kinematic hand, affine bone-length model,
//!    forward kinematics and its analytic Jacobian.
//! 2. [`surface`] – isotropic 3D Gaussians attached to bones and their
//!    projection to image-space Gaussians with a depth value.
//! 3. [`depth`] – cube cropping of depth frames and quadtree summarization
//!    into image Gaussians.
//! 4. [`energy`] – the data, collision, bone, joint-limit and joint
//!    supervision terms with analytic gradients.
//! 5. [`fitter`] – multi-start adaptive-moment descent on the total energy.
//! 6. [`synth`] – ray-cast depth rendering of the Gaussian model.
//! 7. [`metrics`] – per-joint error, PCF curves, MDPC and bone-length
//!    clustering F1.
//!
//! File formats and the command-line driver live in the `gausshand` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod depth;
pub mod energy;
pub mod error;
pub mod fitter;
pub mod math;
pub mod metrics;
pub mod model;
pub mod skeleton;
pub mod surface;
pub mod synth;

pub use error::{Error, Result};
pub use model::HandModel;

/// Keypoints in the skeleton: wrist + 5 fingers × 4.
pub const NUM_JOINTS: usize = 21;
/// Bones (one per non-root keypoint).
pub const NUM_BONES: usize = 20;
/// Articulation angles.
pub const NUM_ARTICULATION_DOF: usize = 20;
/// Articulation + 3 global rotation + 3 global translation.
pub const NUM_POSE_DOF: usize = 26;
/// Coefficients of the bone-length model.
pub const NUM_SHAPE_PARAMS: usize = 20;
/// Length of the stacked `(theta, beta)` parameter vector.
pub const NUM_PARAMS: usize = NUM_POSE_DOF + NUM_SHAPE_PARAMS;

/// First index of the global Euler angles inside `theta`.
pub const GLOBAL_ROTATION: usize = 20;
/// First index of the global translation inside `theta`.
pub const GLOBAL_TRANSLATION: usize = 23;
