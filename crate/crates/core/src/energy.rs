//! Generative fitting energy and its analytic gradient.
//!
//! ```text
//! E = λ_dissim·E_dissim + λ_collision·E_collision + λ_bone·E_bone
//!   + λ_lim·E_lim + λ_joint·E_joint
//! ```
//!
//! `e_total` is accumulated left to right in exactly this order, so the
//! per-term fields of an [`EnergyReport`] recompose to it bit for bit.
//!
//! Gaussians are unnormalized (unit peak), so overlaps are in px² (2D) or
//! mm³ (3D).

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::depth::ImageBlob;
use crate::math::{sq, vec3, Vec3};
use crate::model::HandModel;
use crate::skeleton::{decode_bones, jacobian_from_state, BoneCoeffs, JointLimitTable, PoseParams};
use crate::surface::{place_blobs, project_blob, projection_jacobian, CameraIntrinsics, ProjectedBlob};
use crate::{Error, Result, NUM_ARTICULATION_DOF, NUM_JOINTS, NUM_POSE_DOF};

/// Missing fields take their default values when deserializing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyWeights {
    #[serde(rename = "lambda_dissim")]
    pub dissim: f64,
    #[serde(rename = "lambda_collision")]
    pub collision: f64,
    #[serde(rename = "lambda_bone")]
    pub bone: f64,
    #[serde(rename = "lambda_lim")]
    pub limits: f64,
    /// Per mm².
    #[serde(rename = "lambda_joint")]
    pub joint: f64,
    /// Dead zone of the joint supervision term (mm).
    pub slack_mm: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self {
            dissim: 1.0,
            collision: 1e-7,
            bone: 1e-2,
            limits: 1.0,
            joint: 1e-2,
            slack_mm: 0.0,
        }
    }
}

impl EnergyWeights {
    /// Only `E_dissim`, with unit weight.
    pub fn dissim_only() -> Self {
        Self {
            dissim: 1.0,
            collision: 0.0,
            bone: 0.0,
            limits: 0.0,
            joint: 0.0,
            slack_mm: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_dissim", self.dissim),
            ("lambda_collision", self.collision),
            ("lambda_bone", self.bone),
            ("lambda_lim", self.limits),
            ("lambda_joint", self.joint),
            ("slack_mm", self.slack_mm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(name, "must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

/// Annotated keypoint location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value")]
pub enum TargetValue {
    /// Pixel in the image the camera intrinsics refer to.
    #[serde(rename = "2d")]
    Pixel([f64; 2]),
    /// Camera-frame position in mm.
    #[serde(rename = "3d")]
    Point([f64; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointTarget {
    pub joint_index: usize,
    #[serde(flatten)]
    pub value: TargetValue,
    #[serde(default = "visible_default")]
    pub visible: bool,
}

fn visible_default() -> bool {
    true
}

impl JointTarget {
    pub fn point(joint_index: usize, p: [f64; 3]) -> Self {
        Self {
            joint_index,
            value: TargetValue::Point(p),
            visible: true,
        }
    }

    pub fn pixel(joint_index: usize, uv: [f64; 2]) -> Self {
        Self {
            joint_index,
            value: TargetValue::Pixel(uv),
            visible: true,
        }
    }
}

/// Per-term energies and the gradient with respect to `(theta, beta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub e_total: f64,
    pub e_dissim: f64,
    pub e_collision: f64,
    pub e_bone: f64,
    pub e_lim: f64,
    pub e_joint: f64,
    /// 46 entries: 26 pose DOF followed by 20 shape coefficients.
    pub grad: Vec<f64>,
}

impl EnergyReport {
    /// Weighted sum in the documented accumulation order.
    pub fn recompose(&self, w: &EnergyWeights) -> f64 {
        weighted_total(
            w,
            [self.e_dissim, self.e_collision, self.e_bone, self.e_lim, self.e_joint],
        )
    }
}

fn weighted_total(w: &EnergyWeights, e: [f64; 5]) -> f64 {
    w.dissim * e[0] + w.collision * e[1] + w.bone * e[2] + w.limits * e[3] + w.joint * e[4]
}

/// `∫ g_a g_b` over the plane for unit-peak isotropic Gaussians.
pub fn overlap_2d(mu_a: [f64; 2], sigma_a: f64, mu_b: [f64; 2], sigma_b: f64) -> f64 {
    let (va, vb) = (sigma_a * sigma_a, sigma_b * sigma_b);
    let s = va + vb;
    let d2 = sq(mu_a[0] - mu_b[0]) + sq(mu_a[1] - mu_b[1]);
    2.0 * PI * va * vb / s * libm::exp(-d2 / (2.0 * s))
}

/// `∫ g_a g_b` over space for unit-peak isotropic Gaussians.
pub fn overlap_3d(mu_a: &Vec3, sigma_a: f64, mu_b: &Vec3, sigma_b: f64) -> f64 {
    let (va, vb) = (sigma_a * sigma_a, sigma_b * sigma_b);
    let s = va + vb;
    let amp = 2.0 * PI * va * vb / s;
    amp * libm::sqrt(amp) * libm::exp(-(mu_a - mu_b).norm_squared() / (2.0 * s))
}

/// Linear falloff of the depth agreement, zero beyond `2σ_h`.
pub fn depth_weight(z_i: f64, z_p: f64, sigma_h: f64) -> f64 {
    let d = (z_i - z_p).abs();
    if d >= 2.0 * sigma_h {
        0.0
    } else {
        1.0 - d / (2.0 * sigma_h)
    }
}

fn depth_weight_dzp(z_i: f64, z_p: f64, sigma_h: f64) -> f64 {
    let diff = z_i - z_p;
    if diff.abs() >= 2.0 * sigma_h || diff == 0.0 {
        0.0
    } else {
        if diff > 0.0 {
            1.0 / (2.0 * sigma_h)
        } else {
            -1.0 / (2.0 * sigma_h)
        }
    }
}

/// Image blobs with their cached self-similarity (all ordered pairs).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEvidence {
    blobs: Vec<ImageBlob>,
    self_similarity: f64,
}

impl ImageEvidence {
    pub fn new(blobs: Vec<ImageBlob>) -> Self {
        let mut self_similarity = 0.0;
        for a in &blobs {
            for b in &blobs {
                self_similarity += overlap_2d(a.mu, a.sigma, b.mu, b.sigma);
            }
        }
        Self { blobs, self_similarity }
    }

    pub fn blobs(&self) -> &[ImageBlob] {
        &self.blobs
    }

    pub fn self_similarity(&self) -> f64 {
        self.self_similarity
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }
}

/// `−S_sim`: depth-weighted model/image overlap normalized by the image
/// self-similarity. `model` pairs each projected blob with its 3D sigma.
pub fn dissimilarity(image: &[ImageBlob], model: &[(ProjectedBlob, f64)]) -> Result<f64> {
    if image.is_empty() {
        return Err(Error::EmptyImage);
    }
    let evidence = ImageEvidence::new(image.to_vec());
    Ok(-similarity_numerator(&evidence, model) / evidence.self_similarity)
}

fn similarity_numerator(image: &ImageEvidence, model: &[(ProjectedBlob, f64)]) -> f64 {
    let mut num = 0.0;
    for i in &image.blobs {
        for (p, sigma_h) in model {
            let w = depth_weight(i.z, p.z, *sigma_h);
            if w > 0.0 {
                num += w * overlap_2d(i.mu, i.sigma, p.mu, p.sigma);
            }
        }
    }
    num
}

/// Sum of 3D overlaps over the given unordered pairs.
pub fn collision(centers: &[(Vec3, f64)], pairs: &[(usize, usize)]) -> f64 {
    pairs
        .iter()
        .map(|&(j, k)| overlap_3d(&centers[j].0, centers[j].1, &centers[k].0, centers[k].1))
        .sum()
}

pub fn bone_prior(beta: &BoneCoeffs) -> f64 {
    beta.beta.iter().map(|b| b * b).sum()
}

/// Quadratic penalty outside `[lo, hi]` on the articulation DOF.
pub fn joint_limits(pose: &PoseParams, limits: &JointLimitTable) -> f64 {
    let (lo, hi) = (limits.lower(), limits.upper());
    let mut e = 0.0;
    for j in 0..NUM_ARTICULATION_DOF {
        let t = pose.theta[j];
        if t < lo[j] {
            e += (lo[j] - t) * (lo[j] - t);
        } else if t > hi[j] {
            e += (t - hi[j]) * (t - hi[j]);
        }
    }
    e
}

/// Residual vector `v` with `Φ = |v|` for one target; `None` if invisible.
fn target_residual(
    positions: &[Vec3; NUM_JOINTS],
    target: &JointTarget,
    cam: Option<&CameraIntrinsics>,
) -> Result<Option<(usize, Vec3)>> {
    if target.joint_index >= NUM_JOINTS {
        return Err(Error::validation("joint_index", "must be < 21"));
    }
    if !target.visible {
        return Ok(None);
    }
    let f = positions[target.joint_index];
    let v = match target.value {
        TargetValue::Point(p) => f - vec3(p),
        TargetValue::Pixel(uv) => {
            let cam = cam.ok_or(Error::MissingIntrinsics {
                joint: target.joint_index,
            })?;
            let ray = cam.ray(uv).normalize();
            f - ray * f.dot(&ray)
        }
    };
    Ok(Some((target.joint_index, v)))
}

/// Slack-radius joint supervision: `Σ max(0, Φ − s)²`.
pub fn joint_supervision(
    positions: &[Vec3; NUM_JOINTS],
    targets: &[JointTarget],
    cam: Option<&CameraIntrinsics>,
    slack_mm: f64,
) -> Result<f64> {
    let mut e = 0.0;
    for target in targets {
        if let Some((_, v)) = target_residual(positions, target, cam)? {
            let phi = v.norm();
            if phi > slack_mm {
                e += (phi - slack_mm) * (phi - slack_mm);
            }
        }
    }
    Ok(e)
}

/// Everything the energy needs besides the parameters.
#[derive(Debug, Clone, Copy)]
pub struct Scene<'a> {
    pub model: &'a HandModel,
    pub image: &'a ImageEvidence,
    /// Intrinsics of the encoded frame.
    pub camera: CameraIntrinsics,
    pub targets: &'a [JointTarget],
    /// Intrinsics for 2D targets.
    pub target_camera: Option<CameraIntrinsics>,
}

/// Evaluate all terms and the full gradient.
///
/// An empty image contributes `E_dissim = 0`.
pub fn total_energy(
    scene: &Scene<'_>,
    pose: &PoseParams,
    beta: &BoneCoeffs,
    weights: &EnergyWeights,
) -> Result<EnergyReport> {
    let model = scene.model;
    let topo = &model.topology;
    let lengths = decode_bones(&model.bones, beta)?;
    let fk = topo.forward(pose, &lengths);
    let centers = place_blobs(&fk.positions, topo, &model.blobs);

    // Weighted gradient with respect to every joint position.
    let mut g_joint = [Vec3::zeros(); NUM_JOINTS];
    let mut g_center = vec![Vec3::zeros(); centers.len()];

    let mut e_dissim = 0.0;
    if !scene.image.is_empty() {
        let projected = centers
            .iter()
            .enumerate()
            .map(|(h, (c, s))| project_blob(&scene.camera, c, *s, h))
            .collect::<Result<Vec<_>>>()?;
        let norm = 1.0 / scene.image.self_similarity;
        let mut num = 0.0;
        for (h, (p, (center, sigma_h))) in projected.iter().zip(&centers).enumerate() {
            // d(numerator)/d(mu.x, mu.y, sigma_p, z_p)
            let mut d = [0.0; 4];
            let vp = p.sigma * p.sigma;
            for i in &scene.image.blobs {
                let w = depth_weight(i.z, p.z, *sigma_h);
                let dw = depth_weight_dzp(i.z, p.z, *sigma_h);
                if w == 0.0 && dw == 0.0 {
                    continue;
                }
                let s = overlap_2d(i.mu, i.sigma, p.mu, p.sigma);
                num += w * s;
                let var = i.sigma * i.sigma + vp;
                let (dx, dy) = (i.mu[0] - p.mu[0], i.mu[1] - p.mu[1]);
                let d2 = dx * dx + dy * dy;
                let ws = w * s;
                d[0] += ws * dx / var;
                d[1] += ws * dy / var;
                d[2] += ws * (2.0 / p.sigma - 2.0 * p.sigma / var + d2 * p.sigma / (var * var));
                d[3] += dw * s;
            }
            if weights.dissim != 0.0 {
                let rows = projection_jacobian(&scene.camera, center, *sigma_h);
                let scale = -weights.dissim * norm;
                for (row, dv) in rows.iter().zip(d) {
                    g_center[h] += row * (scale * dv);
                }
            }
        }
        e_dissim = -num / scene.image.self_similarity;
    }

    let mut e_collision = 0.0;
    for &(j, k) in model.collision_pairs() {
        let ((cj, sj), (ck, sk)) = (centers[j], centers[k]);
        let s = overlap_3d(&cj, sj, &ck, sk);
        e_collision += s;
        if weights.collision != 0.0 {
            let g = (cj - ck) * (-weights.collision * s / (sj * sj + sk * sk));
            g_center[j] += g;
            g_center[k] -= g;
        }
    }

    for (blob, g) in model.blobs.iter().zip(&g_center) {
        let bone = &topo.bones()[blob.bone_index];
        g_joint[bone.parent] += g * (1.0 - blob.t);
        g_joint[bone.child] += g * blob.t;
    }

    let mut e_joint = 0.0;
    for target in scene.targets {
        if let Some((j, v)) = target_residual(&fk.positions, target, scene.target_camera.as_ref())? {
            let phi = v.norm();
            if phi > weights.slack_mm {
                let excess = phi - weights.slack_mm;
                e_joint += excess * excess;
                g_joint[j] += v * (weights.joint * 2.0 * excess / phi);
            }
        }
    }

    let e_bone = bone_prior(beta);
    let e_lim = joint_limits(pose, &model.limits);

    let jac = jacobian_from_state(topo, pose, &model.bones, &fk);
    let mut grad = jac.pullback(&g_joint);
    if weights.limits != 0.0 {
        let (lo, hi) = (model.limits.lower(), model.limits.upper());
        for j in 0..NUM_ARTICULATION_DOF {
            let t = pose.theta[j];
            if t < lo[j] {
                grad[j] += weights.limits * 2.0 * (t - lo[j]);
            } else if t > hi[j] {
                grad[j] += weights.limits * 2.0 * (t - hi[j]);
            }
        }
    }
    if weights.bone != 0.0 {
        for (g, b) in grad[NUM_POSE_DOF..].iter_mut().zip(&beta.beta) {
            *g += weights.bone * 2.0 * b;
        }
    }

    let terms = [e_dissim, e_collision, e_bone, e_lim, e_joint];
    Ok(EnergyReport {
        e_total: weighted_total(weights, terms),
        e_dissim,
        e_collision,
        e_bone,
        e_lim,
        e_joint,
        grad: grad.to_vec(),
    })
}
