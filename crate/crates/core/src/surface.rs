//! Gaussians attached to bones and their projection into the image.
//!
//! A model blob is an isotropic 3D Gaussian riding on a bone. Projection is
//! a pinhole projection of its center; the image standard deviation is
//! `f̄·σ/z` with `f̄ = (fx + fy) / 2` and the associated depth is the
//! camera-facing surface `z − σ`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::Vec3;
use crate::skeleton::{FkJacobian, FkState, PoseParams, SkeletonTopology};
use crate::{Error, Result, NUM_BONES, NUM_JOINTS, NUM_PARAMS};

/// Isotropic 3D Gaussian attached to a bone at fraction `t` from its parent joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob3D {
    pub bone_index: usize,
    pub t: f64,
    #[serde(rename = "sigma_mm")]
    pub sigma: f64,
}

impl Blob3D {
    pub fn new(bone_index: usize, t: f64, sigma: f64) -> Result<Self> {
        let blob = Self { bone_index, t, sigma };
        blob.validate()?;
        Ok(blob)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bone_index >= NUM_BONES {
            return Err(Error::validation("blob.bone_index", "must be < 20"));
        }
        if !(0.0..=1.0).contains(&self.t) {
            return Err(Error::validation("blob.t", "must lie in [0, 1]"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::validation("blob.sigma_mm", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Pinhole intrinsics; pixel `i` has its center at coordinate `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx.is_finite() && self.fx > 0.0) {
            return Err(Error::validation("camera.fx", "must be finite and > 0"));
        }
        if !(self.fy.is_finite() && self.fy > 0.0) {
            return Err(Error::validation("camera.fy", "must be finite and > 0"));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::validation("camera.cx/cy", "must be finite"));
        }
        Ok(())
    }

    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    pub fn project(&self, p: &Vec3) -> Result<[f64; 2]> {
        if !(p.z > 0.0) {
            return Err(Error::BehindCamera { z: p.z });
        }
        Ok([self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy])
    }

    pub fn unproject(&self, pixel: [f64; 2], depth: f64) -> Vec3 {
        Vec3::new(
            (pixel[0] - self.cx) / self.fx * depth,
            (pixel[1] - self.cy) / self.fy * depth,
            depth,
        )
    }

    /// Direction of the viewing ray through `pixel`, scaled so that `z = 1`.
    pub fn ray(&self, pixel: [f64; 2]) -> Vec3 {
        self.unproject(pixel, 1.0)
    }
}

/// Image-space Gaussian rendered from a model blob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedBlob {
    pub mu: [f64; 2],
    pub sigma: f64,
    pub z: f64,
    /// Index of the originating [`Blob3D`].
    pub source: usize,
}

/// 3D centers and sigmas of the model blobs for the given FK result.
pub fn place_blobs(positions: &[Vec3; NUM_JOINTS], topo: &SkeletonTopology, blobs: &[Blob3D]) -> Vec<(Vec3, f64)> {
    blobs
        .iter()
        .map(|b| {
            let bone = &topo.bones()[b.bone_index];
            let (p, c) = (positions[bone.parent], positions[bone.child]);
            (p + (c - p) * b.t, b.sigma)
        })
        .collect()
}

/// Convenience form running FK first.
pub fn place_blobs_for_pose(
    topo: &SkeletonTopology,
    pose: &PoseParams,
    lengths: &[f64; NUM_BONES],
    blobs: &[Blob3D],
) -> Vec<(Vec3, f64)> {
    place_blobs(&topo.forward(pose, lengths).positions, topo, blobs)
}

pub fn project_blob(cam: &CameraIntrinsics, center: &Vec3, sigma: f64, source: usize) -> Result<ProjectedBlob> {
    let mu = cam.project(center)?;
    Ok(ProjectedBlob {
        mu,
        sigma: cam.mean_focal() * sigma / center.z,
        z: center.z - sigma,
        source,
    })
}

/// Rows of `∂(mu.x, mu.y, sigma_p, z_p)/∂center` for a blob at `center`.
pub fn projection_jacobian(cam: &CameraIntrinsics, center: &Vec3, sigma: f64) -> [Vec3; 4] {
    let iz = 1.0 / center.z;
    let iz2 = iz * iz;
    [
        Vec3::new(cam.fx * iz, 0.0, -cam.fx * center.x * iz2),
        Vec3::new(0.0, cam.fy * iz, -cam.fy * center.y * iz2),
        Vec3::new(0.0, 0.0, -cam.mean_focal() * sigma * iz2),
        Vec3::new(0.0, 0.0, 1.0),
    ]
}

/// `∂center/∂param` for every parameter, from the FK Jacobian.
pub fn center_jacobian(jac: &FkJacobian, topo: &SkeletonTopology, blob: &Blob3D) -> [Vec3; NUM_PARAMS] {
    let bone = &topo.bones()[blob.bone_index];
    let (jp, jc) = (jac.joint(bone.parent), jac.joint(bone.child));
    let mut out = [Vec3::zeros(); NUM_PARAMS];
    for (o, (a, b)) in out.iter_mut().zip(jp.iter().zip(jc)) {
        *o = a * (1.0 - blob.t) + b * blob.t;
    }
    out
}

/// Jacobian of one projected blob: rows `mu.x, mu.y, sigma_p, z_p`,
/// columns `(theta, beta)`.
#[derive(Debug, Clone)]
pub struct ProjectedBlobJacobian {
    pub rows: [[f64; NUM_PARAMS]; 4],
}

/// Chain rule through blob placement, FK and projection.
pub fn blob_pairs_jacobian(
    cam: &CameraIntrinsics,
    topo: &SkeletonTopology,
    fk: &FkState,
    jac: &FkJacobian,
    blobs: &[Blob3D],
) -> Result<Vec<(ProjectedBlob, ProjectedBlobJacobian)>> {
    let centers = place_blobs(&fk.positions, topo, blobs);
    centers
        .iter()
        .zip(blobs)
        .enumerate()
        .map(|(h, ((center, sigma), blob))| {
            let proj = project_blob(cam, center, *sigma, h)?;
            let dproj = projection_jacobian(cam, center, *sigma);
            let dcenter = center_jacobian(jac, topo, blob);
            let mut rows = [[0.0; NUM_PARAMS]; 4];
            for (row, dp) in rows.iter_mut().zip(&dproj) {
                for (r, dc) in row.iter_mut().zip(&dcenter) {
                    *r = dp.dot(dc);
                }
            }
            Ok((proj, ProjectedBlobJacobian { rows }))
        })
        .collect()
}
