//! Kinematic hand skeleton.
//!
//! Keypoint order is fixed: wrist first, then thumb to pinky, each finger
//! proximal to distal (thumb: CMC, MCP, IP, TIP; fingers: MCP, PIP, DIP,
//! TIP). Bone `j - 1` ends at keypoint `j`.
//!
//! Every joint frame coincides with the hand frame in the rest pose, so
//! bone directions and DOF axes are all given in hand coordinates. The
//! local rotation of a joint is the product of its DOF rotations in
//! ascending DOF order.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::math::{axis_angle, euler_zyx, euler_zyx_partials, is_finite_slice, vec3, Mat3, Vec3};
use crate::{
    Error, Result, GLOBAL_ROTATION, GLOBAL_TRANSLATION, NUM_ARTICULATION_DOF, NUM_BONES, NUM_JOINTS, NUM_PARAMS,
    NUM_POSE_DOF, NUM_SHAPE_PARAMS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDef {
    pub name: String,
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneDef {
    pub parent: usize,
    pub child: usize,
    /// Direction of the bone in the rest pose; normalized on construction.
    pub rest_direction: [f64; 3],
}

/// One articulation degree of freedom: a revolute axis at a joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DofDef {
    pub name: String,
    pub joint: usize,
    pub axis: [f64; 3],
}

/// Validated skeleton topology with cached traversal data.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTopology {
    joints: Vec<JointDef>,
    bones: Vec<BoneDef>,
    dofs: Vec<DofDef>,
    bone_into: [usize; NUM_JOINTS],
    descendants: [u32; NUM_JOINTS],
    directions: [Vec3; NUM_BONES],
    axes: [Vec3; NUM_ARTICULATION_DOF],
    joint_dofs: Vec<Vec<usize>>,
}

impl SkeletonTopology {
    /// Joints must be listed parents-first with the wrist at index 0.
    pub fn new(joints: Vec<JointDef>, bones: Vec<BoneDef>, dofs: Vec<DofDef>) -> Result<Self> {
        if joints.len() != NUM_JOINTS {
            return Err(Error::validation(
                "joints",
                alloc::format!("expected {NUM_JOINTS} joints, found {}", joints.len()),
            ));
        }
        if bones.len() != NUM_BONES {
            return Err(Error::validation(
                "bones",
                alloc::format!("expected {NUM_BONES} bones, found {}", bones.len()),
            ));
        }
        if dofs.len() != NUM_ARTICULATION_DOF {
            return Err(Error::validation(
                "dofs",
                alloc::format!("expected {NUM_ARTICULATION_DOF} articulation DOF, found {}", dofs.len()),
            ));
        }
        if joints[0].parent.is_some() {
            return Err(Error::validation("joints[0].parent", "the wrist must be the root"));
        }
        for (j, joint) in joints.iter().enumerate().skip(1) {
            match joint.parent {
                None => {
                    return Err(Error::validation(
                        alloc::format!("joints[{j}].parent"),
                        "only the wrist may be a root",
                    ))
                }
                Some(p) if p >= j => {
                    return Err(Error::validation(
                        alloc::format!("joints[{j}].parent"),
                        "parents must precede their children",
                    ))
                }
                Some(_) => {}
            }
        }

        let mut bone_into = [usize::MAX; NUM_JOINTS];
        let mut directions = [Vec3::zeros(); NUM_BONES];
        for (b, bone) in bones.iter().enumerate() {
            let field = alloc::format!("bones[{b}]");
            if bone.child == 0 || bone.child >= NUM_JOINTS {
                return Err(Error::validation(field, "child must be a non-root joint"));
            }
            if joints[bone.child].parent != Some(bone.parent) {
                return Err(Error::validation(field, "parent does not match the joint tree"));
            }
            if bone_into[bone.child] != usize::MAX {
                return Err(Error::validation(field, "joint already has an incoming bone"));
            }
            let d = vec3(bone.rest_direction);
            let n = d.norm();
            if !n.is_finite() || n < 1e-12 {
                return Err(Error::validation(
                    alloc::format!("{field}.rest_direction"),
                    "must be a finite nonzero vector",
                ));
            }
            bone_into[bone.child] = b;
            directions[b] = d / n;
        }

        let mut axes = [Vec3::zeros(); NUM_ARTICULATION_DOF];
        let mut joint_dofs = vec![Vec::new(); NUM_JOINTS];
        let mut children = [0usize; NUM_JOINTS];
        for joint in joints.iter().skip(1) {
            children[joint.parent.unwrap()] += 1;
        }
        for (k, dof) in dofs.iter().enumerate() {
            let field = alloc::format!("dofs[{k}]");
            if dof.joint == 0 || dof.joint >= NUM_JOINTS {
                return Err(Error::validation(
                    field,
                    "articulation DOF must sit on a non-root joint",
                ));
            }
            if children[dof.joint] == 0 {
                return Err(Error::validation(field, "DOF on a leaf joint moves nothing"));
            }
            let a = vec3(dof.axis);
            let n = a.norm();
            if !n.is_finite() || n < 1e-12 {
                return Err(Error::validation(
                    alloc::format!("{field}.axis"),
                    "must be a finite nonzero vector",
                ));
            }
            axes[k] = a / n;
            joint_dofs[dof.joint].push(k);
        }

        let mut descendants = [0u32; NUM_JOINTS];
        for j in (1..NUM_JOINTS).rev() {
            let p = joints[j].parent.unwrap();
            descendants[p] |= descendants[j] | (1 << j);
        }

        Ok(Self {
            joints,
            bones,
            dofs,
            bone_into,
            descendants,
            directions,
            axes,
            joint_dofs,
        })
    }

    pub fn joints(&self) -> &[JointDef] {
        &self.joints
    }

    pub fn bones(&self) -> &[BoneDef] {
        &self.bones
    }

    pub fn dofs(&self) -> &[DofDef] {
        &self.dofs
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.joints[joint].parent
    }

    /// Index of the bone that ends at `joint` (`None` for the wrist).
    pub fn bone_into(&self, joint: usize) -> Option<usize> {
        let b = self.bone_into[joint];
        (b != usize::MAX).then_some(b)
    }

    /// Whether `joint` lies strictly below `ancestor` in the tree.
    pub fn is_descendant(&self, joint: usize, ancestor: usize) -> bool {
        self.descendants[ancestor] & (1 << joint) != 0
    }

    /// Unit rest direction of bone `b`.
    pub fn direction(&self, b: usize) -> Vec3 {
        self.directions[b]
    }

    /// Unit axis of articulation DOF `k`.
    pub fn axis(&self, k: usize) -> Vec3 {
        self.axes[k]
    }

    pub fn dofs_of(&self, joint: usize) -> &[usize] {
        &self.joint_dofs[joint]
    }

    /// Total number of pose DOF (articulation + 6 global).
    pub fn total_dof(&self) -> usize {
        self.dofs.len() + 6
    }

    /// Two bones are adjacent when they share an endpoint joint.
    pub fn bones_adjacent(&self, a: usize, b: usize) -> bool {
        let (ba, bb) = (&self.bones[a], &self.bones[b]);
        ba.parent == bb.parent || ba.parent == bb.child || ba.child == bb.parent || ba.child == bb.child
    }

    /// Forward kinematics with the intermediate frames kept around.
    pub fn forward(&self, pose: &PoseParams, lengths: &[f64; NUM_BONES]) -> FkState {
        let theta = &pose.theta;
        let rg = euler_zyx(
            theta[GLOBAL_ROTATION],
            theta[GLOBAL_ROTATION + 1],
            theta[GLOBAL_ROTATION + 2],
        );
        let mut positions = [Vec3::zeros(); NUM_JOINTS];
        let mut frames = [Mat3::identity(); NUM_JOINTS];
        let mut dof_axes = [Vec3::zeros(); NUM_ARTICULATION_DOF];
        positions[0] = Vec3::new(
            theta[GLOBAL_TRANSLATION],
            theta[GLOBAL_TRANSLATION + 1],
            theta[GLOBAL_TRANSLATION + 2],
        );
        frames[0] = rg;
        for j in 1..NUM_JOINTS {
            let p = self.joints[j].parent.unwrap();
            let b = self.bone_into[j];
            positions[j] = positions[p] + frames[p] * (self.directions[b] * lengths[b]);
            let mut frame = frames[p];
            for &k in &self.joint_dofs[j] {
                dof_axes[k] = frame * self.axes[k];
                frame *= axis_angle(&self.axes[k], theta[k]);
            }
            frames[j] = frame;
        }
        FkState {
            positions,
            frames,
            dof_axes,
            global_rotation: rg,
        }
    }

    /// The built-in flat right hand, palm facing the camera, fingers along -y.
    pub fn default_hand() -> Self {
        const FINGERS: [&str; 5] = ["thumb", "index", "middle", "ring", "pinky"];
        const THUMB_JOINTS: [&str; 4] = ["cmc", "mcp", "ip", "tip"];
        const FINGER_JOINTS: [&str; 4] = ["mcp", "pip", "dip", "tip"];
        // In-palm angle of each bone away from -y toward the thumb side, degrees.
        const SPLAY_DEG: [[f64; 4]; 5] = [
            [50.0, 40.0, 30.0, 25.0],
            [16.0, 6.0, 6.0, 6.0],
            [2.0, 0.0, 0.0, 0.0],
            [-11.0, -6.0, -6.0, -6.0],
            [-24.0, -12.0, -12.0, -12.0],
        ];
        let dir = |deg: f64| {
            let a = deg.to_radians();
            [libm::sin(a), -libm::cos(a), 0.0]
        };
        // Flexion curls a bone toward the palm normal (-z); the axis is the
        // in-plane perpendicular of the bone it moves.
        let flex_axis = |deg: f64| {
            let a = deg.to_radians();
            [libm::cos(a), libm::sin(a), 0.0]
        };

        let mut joints = vec![JointDef {
            name: "wrist".to_string(),
            parent: None,
        }];
        let mut bones = Vec::new();
        let mut dofs = Vec::new();
        for (f, finger) in FINGERS.iter().enumerate() {
            let names = if f == 0 { THUMB_JOINTS } else { FINGER_JOINTS };
            let base = 1 + 4 * f;
            for (s, seg) in names.iter().enumerate() {
                let j = base + s;
                let parent = if s == 0 { 0 } else { j - 1 };
                joints.push(JointDef {
                    name: alloc::format!("{finger}_{seg}"),
                    parent: Some(parent),
                });
                bones.push(BoneDef {
                    parent,
                    child: j,
                    rest_direction: dir(SPLAY_DEG[f][s]),
                });
            }
            dofs.push(DofDef {
                name: alloc::format!("{finger}_{}_abduct", names[0]),
                joint: base,
                axis: [0.0, 0.0, 1.0],
            });
            for s in 0..3 {
                dofs.push(DofDef {
                    name: alloc::format!("{finger}_{}_flex", names[s]),
                    joint: base + s,
                    axis: flex_axis(SPLAY_DEG[f][s + 1]),
                });
            }
        }
        Self::new(joints, bones, dofs).expect("built-in topology is valid")
    }
}

/// Output of [`SkeletonTopology::forward`].
#[derive(Debug, Clone)]
pub struct FkState {
    /// Keypoint positions in camera coordinates (mm).
    pub positions: [Vec3; NUM_JOINTS],
    /// World orientation of each joint frame after its own DOF.
    pub frames: [Mat3; NUM_JOINTS],
    /// World-space axis of each articulation DOF.
    pub dof_axes: [Vec3; NUM_ARTICULATION_DOF],
    pub global_rotation: Mat3,
}

/// `theta`: 20 articulation angles (rad), Z-Y-X Euler angles (rad),
/// translation of the wrist (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoseParams {
    pub theta: [f64; NUM_POSE_DOF],
}

impl Default for PoseParams {
    fn default() -> Self {
        Self {
            theta: [0.0; NUM_POSE_DOF],
        }
    }
}

impl PoseParams {
    pub fn new(theta: [f64; NUM_POSE_DOF]) -> Result<Self> {
        if !is_finite_slice(&theta) {
            return Err(Error::validation("theta", "values must be finite"));
        }
        Ok(Self { theta })
    }

    pub fn at(translation: [f64; 3]) -> Self {
        let mut p = Self::default();
        p.set_translation(translation);
        p
    }

    pub fn translation(&self) -> [f64; 3] {
        let t = &self.theta[GLOBAL_TRANSLATION..];
        [t[0], t[1], t[2]]
    }

    pub fn set_translation(&mut self, t: [f64; 3]) {
        self.theta[GLOBAL_TRANSLATION..].copy_from_slice(&t);
    }

    pub fn global_rotation(&self) -> [f64; 3] {
        let r = &self.theta[GLOBAL_ROTATION..GLOBAL_TRANSLATION];
        [r[0], r[1], r[2]]
    }

    pub fn is_finite(&self) -> bool {
        is_finite_slice(&self.theta)
    }
}

/// Coefficients of the bone-length model, standard-normal scaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoneCoeffs {
    pub beta: [f64; NUM_SHAPE_PARAMS],
}

impl Default for BoneCoeffs {
    fn default() -> Self {
        Self {
            beta: [0.0; NUM_SHAPE_PARAMS],
        }
    }
}

impl BoneCoeffs {
    pub fn new(beta: [f64; NUM_SHAPE_PARAMS]) -> Result<Self> {
        if !is_finite_slice(&beta) {
            return Err(Error::validation("beta", "values must be finite"));
        }
        Ok(Self { beta })
    }

    pub fn is_finite(&self) -> bool {
        is_finite_slice(&self.beta)
    }
}

/// Affine bone-length model `b = mean + basis * beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneLengthModel {
    /// Average bone lengths (mm).
    mean: [f64; NUM_BONES],
    /// `basis[bone][coeff]`, mm per unit coefficient.
    basis: [[f64; NUM_SHAPE_PARAMS]; NUM_BONES],
}

impl BoneLengthModel {
    pub fn new(mean: [f64; NUM_BONES], basis: [[f64; NUM_SHAPE_PARAMS]; NUM_BONES]) -> Result<Self> {
        for (b, &m) in mean.iter().enumerate() {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::validation(
                    alloc::format!("bone_model.mean_mm[{b}]"),
                    "average bone length must be finite and > 0",
                ));
            }
        }
        if !basis.iter().all(|row| is_finite_slice(row)) {
            return Err(Error::validation("bone_model.basis_mm", "entries must be finite"));
        }
        Ok(Self { mean, basis })
    }

    /// Diagonal basis: bone `b` varies independently with std `std_mm[b]`.
    pub fn diagonal(mean: [f64; NUM_BONES], std_mm: [f64; NUM_BONES]) -> Result<Self> {
        let mut basis = [[0.0; NUM_SHAPE_PARAMS]; NUM_BONES];
        for b in 0..NUM_BONES {
            basis[b][b] = std_mm[b];
        }
        Self::new(mean, basis)
    }

    pub fn mean(&self) -> &[f64; NUM_BONES] {
        &self.mean
    }

    pub fn basis(&self) -> &[[f64; NUM_SHAPE_PARAMS]; NUM_BONES] {
        &self.basis
    }

    /// Lengths without the positivity check.
    pub fn decode_unchecked(&self, beta: &BoneCoeffs) -> [f64; NUM_BONES] {
        let mut out = self.mean;
        for (b, row) in self.basis.iter().enumerate() {
            out[b] += row.iter().zip(&beta.beta).map(|(m, x)| m * x).sum::<f64>();
        }
        out
    }

    /// Anthropometric adult averages with per-bone deviations of 3–6 mm.
    pub fn default_hand() -> Self {
        let mean = [
            32.0, 42.0, 32.0, 27.0, // thumb
            78.0, 42.0, 25.0, 22.0, // index
            76.0, 46.0, 28.0, 24.0, // middle
            72.0, 42.0, 27.0, 23.0, // ring
            68.0, 33.0, 19.0, 20.0, // pinky
        ];
        let std = [
            5.0, 5.0, 4.0, 3.0, //
            6.0, 4.0, 3.0, 3.0, //
            6.0, 4.0, 3.0, 3.0, //
            6.0, 4.0, 3.0, 3.0, //
            5.0, 4.0, 3.0, 3.0, //
        ];
        Self::diagonal(mean, std).expect("built-in bone model is valid")
    }
}

/// Decode `beta` into bone lengths, rejecting non-positive results.
pub fn decode_bones(model: &BoneLengthModel, beta: &BoneCoeffs) -> Result<[f64; NUM_BONES]> {
    let lengths = model.decode_unchecked(beta);
    for (bone, &length) in lengths.iter().enumerate() {
        if !(length > 0.0) {
            return Err(Error::NonPositiveBoneLength { bone, length });
        }
    }
    Ok(lengths)
}

/// Per-DOF articulation bounds (rad). Global DOF are unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLimitTable {
    lower: [f64; NUM_ARTICULATION_DOF],
    upper: [f64; NUM_ARTICULATION_DOF],
}

impl JointLimitTable {
    pub fn new(lower: [f64; NUM_ARTICULATION_DOF], upper: [f64; NUM_ARTICULATION_DOF]) -> Result<Self> {
        for j in 0..NUM_ARTICULATION_DOF {
            if !(lower[j].is_finite() && upper[j].is_finite() && lower[j] < upper[j]) {
                return Err(Error::validation(
                    alloc::format!("joint_limits[{j}]"),
                    "lower bound must be finite and strictly below the upper bound",
                ));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> &[f64; NUM_ARTICULATION_DOF] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64; NUM_ARTICULATION_DOF] {
        &self.upper
    }

    pub fn contains(&self, dof: usize, angle: f64) -> bool {
        self.lower[dof] <= angle && angle <= self.upper[dof]
    }

    /// Degrees, per finger: [abduct, flex, flex, flex].
    pub fn default_hand() -> Self {
        const THUMB: [(f64, f64); 4] = [(-20.0, 45.0), (-20.0, 60.0), (-10.0, 70.0), (-15.0, 85.0)];
        const FINGER: [(f64, f64); 4] = [(-20.0, 20.0), (-30.0, 90.0), (-5.0, 110.0), (-5.0, 90.0)];
        let mut lower = [0.0; NUM_ARTICULATION_DOF];
        let mut upper = [0.0; NUM_ARTICULATION_DOF];
        for f in 0..5 {
            let table = if f == 0 { THUMB } else { FINGER };
            for (s, (lo, hi)) in table.iter().enumerate() {
                lower[4 * f + s] = lo.to_radians();
                upper[4 * f + s] = hi.to_radians();
            }
        }
        Self::new(lower, upper).expect("built-in limits are valid")
    }
}

/// Keypoint positions for the given pose and bone lengths.
pub fn forward_kinematics(
    topo: &SkeletonTopology,
    pose: &PoseParams,
    lengths: &[f64; NUM_BONES],
) -> [Vec3; NUM_JOINTS] {
    topo.forward(pose, lengths).positions
}

/// Jacobian of all keypoint positions with respect to `(theta, beta)`.
///
/// Stored joint-major: `d(joint, param)` is the derivative of the 3D
/// position of `joint` with respect to parameter `param` (theta first).
#[derive(Debug, Clone)]
pub struct FkJacobian {
    cols: Vec<Vec3>,
}

impl FkJacobian {
    pub fn d(&self, joint: usize, param: usize) -> Vec3 {
        self.cols[joint * NUM_PARAMS + param]
    }

    pub fn joint(&self, joint: usize) -> &[Vec3] {
        &self.cols[joint * NUM_PARAMS..(joint + 1) * NUM_PARAMS]
    }

    /// Dense 63×46 matrix, rows `3 * joint + axis`.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(3 * NUM_JOINTS, NUM_PARAMS, |r, c| self.d(r / 3, c)[r % 3])
    }

    /// `sum_j J_jᵀ g_j` for per-joint position gradients `g`.
    pub fn pullback(&self, joint_grads: &[Vec3; NUM_JOINTS]) -> [f64; NUM_PARAMS] {
        let mut out = [0.0; NUM_PARAMS];
        for (j, g) in joint_grads.iter().enumerate() {
            if g.x == 0.0 && g.y == 0.0 && g.z == 0.0 {
                continue;
            }
            for (o, d) in out.iter_mut().zip(self.joint(j)) {
                *o += d.dot(g);
            }
        }
        out
    }
}

/// Analytic FK Jacobian. Also returns the FK state it was built from.
pub fn fk_jacobian(
    topo: &SkeletonTopology,
    pose: &PoseParams,
    model: &BoneLengthModel,
    beta: &BoneCoeffs,
) -> Result<(FkState, FkJacobian)> {
    let lengths = decode_bones(model, beta)?;
    let fk = topo.forward(pose, &lengths);
    let jac = jacobian_from_state(topo, pose, model, &fk);
    Ok((fk, jac))
}

pub(crate) fn jacobian_from_state(
    topo: &SkeletonTopology,
    pose: &PoseParams,
    model: &BoneLengthModel,
    fk: &FkState,
) -> FkJacobian {
    let mut cols = vec![Vec3::zeros(); NUM_JOINTS * NUM_PARAMS];
    let theta = &pose.theta;
    let root = fk.positions[0];
    let partials = euler_zyx_partials(
        theta[GLOBAL_ROTATION],
        theta[GLOBAL_ROTATION + 1],
        theta[GLOBAL_ROTATION + 2],
    );

    for j in 0..NUM_JOINTS {
        let row = &mut cols[j * NUM_PARAMS..(j + 1) * NUM_PARAMS];
        for a in 0..3 {
            row[GLOBAL_TRANSLATION + a][a] = 1.0;
        }
        let local = fk.global_rotation.transpose() * (fk.positions[j] - root);
        for (a, dr) in partials.iter().enumerate() {
            row[GLOBAL_ROTATION + a] = dr * local;
        }
    }

    for (k, dof) in topo.dofs().iter().enumerate() {
        let pivot = fk.positions[dof.joint];
        let w = fk.dof_axes[k];
        for d in dof.joint + 1..NUM_JOINTS {
            if topo.is_descendant(d, dof.joint) {
                cols[d * NUM_PARAMS + k] = w.cross(&(fk.positions[d] - pivot));
            }
        }
    }

    let basis = model.basis();
    for d in 1..NUM_JOINTS {
        let p = topo.parent(d).unwrap();
        let b = topo.bone_into(d).unwrap();
        let u = fk.frames[p] * topo.direction(b);
        for m in 0..NUM_SHAPE_PARAMS {
            let inherited = cols[p * NUM_PARAMS + NUM_POSE_DOF + m];
            cols[d * NUM_PARAMS + NUM_POSE_DOF + m] = inherited + u * basis[b][m];
        }
    }

    FkJacobian { cols }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> PoseParams {
        let mut theta = [0.0; NUM_POSE_DOF];
        for t in theta.iter_mut().take(GLOBAL_TRANSLATION) {
            *t = rng.random_range(-1.0..1.0);
        }
        theta[GLOBAL_TRANSLATION] = rng.random_range(-50.0..50.0);
        theta[GLOBAL_TRANSLATION + 1] = rng.random_range(-50.0..50.0);
        theta[GLOBAL_TRANSLATION + 2] = rng.random_range(300.0..600.0);
        PoseParams { theta }
    }

    fn random_beta(rng: &mut ChaCha8Rng) -> BoneCoeffs {
        let mut beta = [0.0; NUM_SHAPE_PARAMS];
        for b in beta.iter_mut() {
            *b = rng.random_range(-2.0..2.0);
        }
        BoneCoeffs { beta }
    }

    #[test]
    fn default_topology_counts() {
        let topo = SkeletonTopology::default_hand();
        assert_eq!(topo.joints().len(), 21);
        assert_eq!(topo.bones().len(), 20);
        assert_eq!(topo.total_dof(), 26);
        assert_eq!(topo.joints()[0].name, "wrist");
        assert_eq!(topo.joints()[4].name, "thumb_tip");
        assert_eq!(topo.joints()[20].name, "pinky_tip");
        let articulating = (0..NUM_JOINTS).filter(|&j| !topo.dofs_of(j).is_empty()).count();
        assert_eq!(articulating, 15);
        let two_dof = (0..NUM_JOINTS).filter(|&j| topo.dofs_of(j).len() == 2).count();
        assert_eq!(two_dof, 5);
    }

    #[test]
    fn topology_rejects_wrong_parent_order() {
        let topo = SkeletonTopology::default_hand();
        let mut joints = topo.joints().to_vec();
        joints[2].parent = Some(3);
        let err = SkeletonTopology::new(joints, topo.bones().to_vec(), topo.dofs().to_vec());
        assert!(matches!(err, Err(Error::Validation { .. })));
    }

    #[test]
    fn topology_rejects_dof_on_fingertip() {
        let topo = SkeletonTopology::default_hand();
        let mut dofs = topo.dofs().to_vec();
        dofs[3].joint = 4;
        assert!(SkeletonTopology::new(topo.joints().to_vec(), topo.bones().to_vec(), dofs).is_err());
    }

    #[test]
    fn decode_zero_beta_is_mean() {
        let model = BoneLengthModel::default_hand();
        let b = decode_bones(&model, &BoneCoeffs::default()).unwrap();
        assert_eq!(&b, model.mean());
    }

    #[test]
    fn decode_identity_basis_unit_vector() {
        let mean = *BoneLengthModel::default_hand().mean();
        let model = BoneLengthModel::diagonal(mean, [1.0; NUM_BONES]).unwrap();
        for k in 0..NUM_BONES {
            let mut beta = BoneCoeffs::default();
            beta.beta[k] = 1.0;
            let b = decode_bones(&model, &beta).unwrap();
            for j in 0..NUM_BONES {
                let expect = if j == k { mean[j] + 1.0 } else { mean[j] };
                assert_eq!(b[j], expect);
            }
        }
    }

    #[test]
    fn decode_matches_scalar_matvec() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut basis = [[0.0; NUM_SHAPE_PARAMS]; NUM_BONES];
        for row in basis.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.random_range(-2.0..2.0);
            }
        }
        let model = BoneLengthModel::new([60.0; NUM_BONES], basis).unwrap();
        for _ in 0..20 {
            let beta = random_beta(&mut rng);
            let got = decode_bones(&model, &beta).unwrap();
            for i in 0..NUM_BONES {
                let mut acc = 60.0;
                for j in 0..NUM_SHAPE_PARAMS {
                    acc += basis[i][j] * beta.beta[j];
                }
                assert!((got[i] - acc).abs() <= 1e-12 * acc.abs());
            }
        }
    }

    #[test]
    fn decode_rejects_non_positive_lengths() {
        let model = BoneLengthModel::default_hand();
        let mut beta = BoneCoeffs::default();
        beta.beta[6] = -20.0; // 25 mm - 20 * 3 mm
        assert!(matches!(
            decode_bones(&model, &beta),
            Err(Error::NonPositiveBoneLength { bone: 6, .. })
        ));
    }

    #[test]
    fn joint_limits_reject_inverted_bounds() {
        let mut lo = [-1.0; NUM_ARTICULATION_DOF];
        let hi = [1.0; NUM_ARTICULATION_DOF];
        lo[5] = 1.0;
        assert!(JointLimitTable::new(lo, hi).is_err());
        assert!(JointLimitTable::default_hand().contains(1, 0.0));
    }

    #[test]
    fn rest_pose_is_translated_layout() {
        let topo = SkeletonTopology::default_hand();
        let lengths = *BoneLengthModel::default_hand().mean();
        let rest = forward_kinematics(&topo, &PoseParams::default(), &lengths);
        let t = [12.0, -7.0, 450.0];
        let moved = forward_kinematics(&topo, &PoseParams::at(t), &lengths);
        for j in 0..NUM_JOINTS {
            assert!((moved[j] - rest[j] - vec3(t)).norm() < 1e-12);
        }
        // Flat hand: every keypoint lies in the palm plane.
        assert!(rest.iter().all(|p| p.z == 0.0));
    }

    #[test]
    fn fk_preserves_bone_lengths() {
        let topo = SkeletonTopology::default_hand();
        let model = BoneLengthModel::default_hand();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let lengths = decode_bones(&model, &random_beta(&mut rng)).unwrap();
            let p = forward_kinematics(&topo, &pose, &lengths);
            for bone in topo.bones() {
                let b = topo.bone_into(bone.child).unwrap();
                let d = (p[bone.child] - p[bone.parent]).norm();
                assert!((d - lengths[b]).abs() <= 1e-9 * lengths[b]);
            }
        }
    }

    #[test]
    fn single_knuckle_flexion_rotates_descendants() {
        let topo = SkeletonTopology::default_hand();
        let lengths = *BoneLengthModel::default_hand().mean();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = random_pose(&mut rng);
        let before = forward_kinematics(&topo, &base, &lengths);
        // Index MCP flexion: DOF 5 at joint 5.
        let k = 5;
        let knuckle = topo.dofs()[k].joint;
        let delta = 0.3;
        let mut bent = base;
        bent.theta[k] += delta;
        let after = forward_kinematics(&topo, &bent, &lengths);

        // Oracle: world axis of the DOF composed explicitly from the chain.
        let fk = topo.forward(&base, &lengths);
        let parent = topo.parent(knuckle).unwrap();
        let mut frame = fk.frames[parent];
        for &m in topo.dofs_of(knuckle) {
            if m == k {
                break;
            }
            frame *= axis_angle(&topo.axis(m), base.theta[m]);
        }
        let axis = frame * topo.axis(k);
        let rot = axis_angle(&axis, delta);
        for j in 0..NUM_JOINTS {
            let expect = if topo.is_descendant(j, knuckle) {
                before[knuckle] + rot * (before[j] - before[knuckle])
            } else {
                before[j]
            };
            assert!((after[j] - expect).norm() < 1e-9, "joint {j}");
        }
    }

    fn central_difference(
        topo: &SkeletonTopology,
        model: &BoneLengthModel,
        pose: &PoseParams,
        beta: &BoneCoeffs,
        param: usize,
        h: f64,
    ) -> [Vec3; NUM_JOINTS] {
        let eval = |s: f64| {
            let mut p = *pose;
            let mut b = *beta;
            if param < NUM_POSE_DOF {
                p.theta[param] += s;
            } else {
                b.beta[param - NUM_POSE_DOF] += s;
            }
            forward_kinematics(topo, &p, &decode_bones(model, &b).unwrap())
        };
        let (plus, minus) = (eval(h), eval(-h));
        let mut out = [Vec3::zeros(); NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            out[j] = (plus[j] - minus[j]) / (2.0 * h);
        }
        out
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let topo = SkeletonTopology::default_hand();
        let model = BoneLengthModel::default_hand();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let pose = random_pose(&mut rng);
            let beta = random_beta(&mut rng);
            let (_, jac) = fk_jacobian(&topo, &pose, &model, &beta).unwrap();
            for param in 0..NUM_PARAMS {
                let fd = central_difference(&topo, &model, &pose, &beta, param, 1e-5);
                for (j, fdj) in fd.iter().enumerate() {
                    let a = jac.d(j, param);
                    let scale = a.norm().max(fdj.norm()).max(1e-3);
                    worst = worst.max((a - fdj).norm() / scale);
                }
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn translation_columns_are_identity_blocks() {
        let topo = SkeletonTopology::default_hand();
        let model = BoneLengthModel::default_hand();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, jac) = fk_jacobian(&topo, &random_pose(&mut rng), &model, &random_beta(&mut rng)).unwrap();
        for j in 0..NUM_JOINTS {
            assert_eq!(jac.d(j, GLOBAL_TRANSLATION + 2), Vec3::z());
            assert_eq!(jac.d(j, GLOBAL_TRANSLATION), Vec3::x());
        }
        let m = jac.to_matrix();
        assert_eq!(m.shape(), (63, 46));
    }

    #[test]
    fn finger_dofs_do_not_move_other_fingers() {
        let topo = SkeletonTopology::default_hand();
        let model = BoneLengthModel::default_hand();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, jac) = fk_jacobian(&topo, &random_pose(&mut rng), &model, &random_beta(&mut rng)).unwrap();
        let finger_of = |j: usize| (j - 1) / 4;
        for k in 0..NUM_ARTICULATION_DOF {
            let f = k / 4;
            for j in 1..NUM_JOINTS {
                if finger_of(j) != f {
                    assert_eq!(jac.d(j, k), Vec3::zeros(), "dof {k} joint {j}");
                }
            }
            assert_eq!(jac.d(0, k), Vec3::zeros());
        }
    }
}
