//! Ray-cast depth rendering of the blob model, for ground truth and tests.

use alloc::vec::Vec;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::depth::DepthImage;
use crate::math::Vec3;
use crate::model::HandModel;
use crate::skeleton::{decode_bones, BoneCoeffs, PoseParams};
use crate::surface::{place_blobs, CameraIntrinsics};
use crate::{Error, Result, NUM_BONES, NUM_JOINTS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub camera: CameraIntrinsics,
    pub width: usize,
    pub height: usize,
    /// Value written where no ray hits the model.
    #[serde(default)]
    pub background: f64,
    /// Sphere radius in units of the blob sigma.
    #[serde(default = "iso_default")]
    pub iso_level: f64,
}

fn iso_default() -> f64 {
    1.0
}

impl RenderSpec {
    pub fn new(camera: CameraIntrinsics, width: usize, height: usize) -> Self {
        Self {
            camera,
            width,
            height,
            background: 0.0,
            iso_level: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.width == 0 || self.height == 0 {
            return Err(Error::validation("render.size", "image must be at least 1x1"));
        }
        if !(self.iso_level.is_finite() && self.iso_level > 0.0) {
            return Err(Error::validation("render.iso_level", "must be positive"));
        }
        if self.background.is_finite() && self.background > 0.0 {
            return Err(Error::validation("render.background", "must not be a valid depth"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub depth: DepthImage,
    pub joints: [Vec3; NUM_JOINTS],
    pub bone_lengths: [f64; NUM_BONES],
    pub pose: PoseParams,
    pub beta: BoneCoeffs,
}

/// Render the model in `pose` with bone coefficients `beta`.
pub fn render_depth(
    model: &HandModel,
    pose: &PoseParams,
    beta: &BoneCoeffs,
    spec: &RenderSpec,
) -> Result<RenderedFrame> {
    let lengths = decode_bones(&model.bones, beta)?;
    let fk = model.topology.forward(pose, &lengths);
    let spheres = place_blobs(&fk.positions, &model.topology, &model.blobs);
    let depth = render_spheres(&spheres, spec)?;
    Ok(RenderedFrame {
        depth,
        joints: fk.positions,
        bone_lengths: lengths,
        pose: *pose,
        beta: *beta,
    })
}

/// Nearest-hit depth of `(center, sigma)` spheres scaled by the iso level.
pub fn render_spheres(spheres: &[(Vec3, f64)], spec: &RenderSpec) -> Result<DepthImage> {
    spec.validate()?;
    if let Some((c, _)) = spheres.iter().find(|(c, _)| !(c.z > 0.0)) {
        return Err(Error::BehindCamera { z: c.z });
    }
    let radii: Vec<(Vec3, f64, f64)> = spheres
        .iter()
        .map(|(c, s)| {
            let r = s * spec.iso_level;
            (*c, r * r, c.norm_squared())
        })
        .collect();
    let mut data = Vec::with_capacity(spec.width * spec.height);
    for v in 0..spec.height {
        for u in 0..spec.width {
            let d = spec.camera.ray([u as f64, v as f64]);
            let a = d.norm_squared();
            let mut best = f64::INFINITY;
            for (c, r2, c2) in &radii {
                if let Some(t) = ray_sphere(&d, a, c, *r2, *c2) {
                    best = best.min(t);
                }
            }
            data.push(if best.is_finite() { best } else { spec.background });
        }
    }
    DepthImage::new(spec.width, spec.height, data)
}

/// Smallest positive `t` with `|t·d − c| = r`; depth equals `t` since `d.z = 1`.
fn ray_sphere(d: &Vec3, a: f64, c: &Vec3, r2: f64, c2: f64) -> Option<f64> {
    let b = d.dot(c);
    let disc = b * b - a * (c2 - r2);
    if disc < 0.0 {
        return None;
    }
    let root = libm::sqrt(disc);
    let near = (b - root) / a;
    if near > 0.0 {
        return Some(near);
    }
    let far = (b + root) / a;
    (far > 0.0).then_some(far)
}

/// Add zero-mean Gaussian noise (std in mm) to every valid pixel.
pub fn add_depth_noise<R: RngCore>(image: &mut DepthImage, std_mm: f64, rng: &mut R) -> Result<()> {
    if !(std_mm.is_finite() && std_mm >= 0.0) {
        return Err(Error::validation("noise_mm", "must be finite and nonnegative"));
    }
    for d in image.data.iter_mut() {
        if d.is_finite() && *d > 0.0 {
            *d += std_mm * standard_normal(rng);
        }
    }
    Ok(())
}

fn standard_normal<R: RngCore>(rng: &mut R) -> f64 {
    // Box-Muller; u1 in (0, 1] keeps the log finite.
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}
