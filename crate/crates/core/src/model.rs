//! The complete hand model: skeleton, bone-length model, limits and blobs.

use alloc::vec::Vec;

use crate::math::Vec3;
use crate::skeleton::{decode_bones, BoneCoeffs, BoneLengthModel, JointLimitTable, PoseParams, SkeletonTopology};
use crate::surface::Blob3D;
use crate::{Error, Result, NUM_BONES, NUM_JOINTS};

#[derive(Debug, Clone, PartialEq)]
pub struct HandModel {
    pub topology: SkeletonTopology,
    pub bones: BoneLengthModel,
    pub limits: JointLimitTable,
    pub blobs: Vec<Blob3D>,
    collision_pairs: Vec<(usize, usize)>,
}

impl HandModel {
    pub fn new(
        topology: SkeletonTopology,
        bones: BoneLengthModel,
        limits: JointLimitTable,
        blobs: Vec<Blob3D>,
    ) -> Result<Self> {
        if blobs.is_empty() {
            return Err(Error::validation("blobs", "the model needs at least one blob"));
        }
        for (h, blob) in blobs.iter().enumerate() {
            blob.validate().map_err(|e| match e {
                Error::Validation { field, reason } => {
                    Error::validation(alloc::format!("blobs[{h}].{}", &field[5..]), reason)
                }
                other => other,
            })?;
        }
        let collision_pairs = collision_pairs(&topology, &blobs);
        Ok(Self {
            topology,
            bones,
            limits,
            blobs,
            collision_pairs,
        })
    }

    /// Unordered blob pairs that take part in the collision term.
    pub fn collision_pairs(&self) -> &[(usize, usize)] {
        &self.collision_pairs
    }

    /// Keypoint positions for `(pose, beta)`.
    pub fn joints(&self, pose: &PoseParams, beta: &BoneCoeffs) -> Result<[Vec3; NUM_JOINTS]> {
        let lengths = decode_bones(&self.bones, beta)?;
        Ok(self.topology.forward(pose, &lengths).positions)
    }

    pub fn default_hand() -> Self {
        Self::new(
            SkeletonTopology::default_hand(),
            BoneLengthModel::default_hand(),
            JointLimitTable::default_hand(),
            default_blobs(),
        )
        .expect("built-in model is valid")
    }
}

/// Blobs on the same bone or on bones sharing a joint never collide.
fn collision_pairs(topo: &SkeletonTopology, blobs: &[Blob3D]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for j in 0..blobs.len() {
        for k in j + 1..blobs.len() {
            let (a, b) = (blobs[j].bone_index, blobs[k].bone_index);
            if a != b && !topo.bones_adjacent(a, b) {
                pairs.push((j, k));
            }
        }
    }
    pairs
}

/// Per-bone blob sigma (mm), wrist-to-tip within each finger.
const BONE_SIGMA: [f64; NUM_BONES] = [
    15.0, 13.0, 12.0, 11.0, // thumb
    16.0, 12.0, 11.0, 10.0, // index
    16.0, 12.5, 11.5, 10.5, // middle
    15.0, 12.0, 11.0, 10.0, // ring
    14.0, 11.0, 10.0, 9.0, // pinky
];

/// Blobs per bone, spread evenly along it.
const BLOBS_PER_BONE: usize = 3;

/// Three overlapping blobs per bone plus a wide wrist blob (61 total).
pub fn default_blobs() -> Vec<Blob3D> {
    let mut blobs = Vec::with_capacity(NUM_BONES * BLOBS_PER_BONE + 1);
    for (bone_index, &sigma) in BONE_SIGMA.iter().enumerate() {
        for k in 0..BLOBS_PER_BONE {
            blobs.push(Blob3D {
                bone_index,
                t: (k as f64 + 0.5) / BLOBS_PER_BONE as f64,
                sigma,
            });
        }
    }
    blobs.push(Blob3D {
        bone_index: 8,
        t: 0.0,
        sigma: 24.0,
    });
    blobs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_shape() {
        let model = HandModel::default_hand();
        assert_eq!(model.blobs.len(), 61);
        assert!(model.blobs.iter().all(|b| b.sigma > 0.0));
        // Adjacent fingers' proximal phalanges collide; a phalanx and its
        // own metacarpal do not.
        let idx = |bone, t: f64| {
            model
                .blobs
                .iter()
                .position(|b| b.bone_index == bone && b.t == t)
                .unwrap()
        };
        let (ip, mp) = (idx(5, 0.5), idx(9, 0.5));
        assert!(model.collision_pairs().contains(&(ip.min(mp), ip.max(mp))));
        let mc = idx(4, 5.0 / 6.0);
        assert!(!model.collision_pairs().contains(&(mc.min(ip), mc.max(ip))));
    }

    #[test]
    fn blob_validation_names_the_field() {
        let mut blobs = default_blobs();
        blobs[3].sigma = -1.0;
        let err = HandModel::new(
            SkeletonTopology::default_hand(),
            BoneLengthModel::default_hand(),
            JointLimitTable::default_hand(),
            blobs,
        )
        .unwrap_err();
        assert_eq!(
            err,
            Error::Validation {
                field: "blobs[3].sigma_mm".into(),
                reason: "must be finite and > 0".into()
            }
        );
    }
}
