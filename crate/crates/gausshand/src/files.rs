//! JSON file schemas, validating loaders and atomic writers.

use std::fs;
use std::io::Write;
use std::path::Path;

use gausshand_core::energy::{EnergyReport, JointTarget, TargetValue};
use gausshand_core::fitter::{centered, FitResult};
use gausshand_core::math::arr3;
use gausshand_core::skeleton::{
    decode_bones, BoneCoeffs, BoneDef, BoneLengthModel, DofDef, JointDef, JointLimitTable, PoseParams, SkeletonTopology,
};
use gausshand_core::surface::{Blob3D, CameraIntrinsics};
use gausshand_core::{Error as CoreError, HandModel, NUM_BONES, NUM_JOINTS, NUM_SHAPE_PARAMS};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Write via a temporary file in the target directory and rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(Error::io(path))?;
    tmp.write_all(bytes).map_err(Error::io(path))?;
    tmp.as_file().sync_all().map_err(Error::io(path))?;
    tmp.persist(path).map_err(|e| Error::io(path)(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("file types serialize");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Parse `text`, reporting line, column and the dotted field path on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        json_error(path, e.into_inner(), Some(&field))
    })?;
    de.end().map_err(|e| json_error(path, e, None))?;
    Ok(value)
}

fn json_error(path: &Path, e: serde_json::Error, field: Option<&str>) -> Error {
    let (line, column) = (e.line(), e.column());
    let full = e.to_string();
    let suffix = format!(" at line {line} column {column}");
    let message = full.strip_suffix(&suffix).unwrap_or(&full).to_string();
    let mut location = format!("line {line}, column {column}");
    if let Some(f) = field.filter(|f| !f.is_empty() && *f != ".") {
        location.push_str(&format!(", field `{f}`"));
    }
    Error::parse(path, location, message)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    parse_json(&text, path)
}

fn exact<const N: usize>(v: &[f64], field: &str) -> std::result::Result<[f64; N], CoreError> {
    v.try_into().map_err(|_| CoreError::Validation {
        field: field.into(),
        reason: format!("expected {N} values, found {}", v.len()),
    })
}

fn finite(v: &[f64], field: &str) -> std::result::Result<(), CoreError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(CoreError::Validation {
            field: field.into(),
            reason: "values must be finite".into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoneModelFile {
    pub mean_mm: Vec<f64>,
    /// Row per bone, column per coefficient.
    pub basis_mm: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointLimitsFile {
    pub lower_rad: Vec<f64>,
    pub upper_rad: Vec<f64>,
}

/// Skeleton definition: topology, bone-length model, limits and blob layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonFile {
    pub joints: Vec<JointDef>,
    pub bones: Vec<BoneDef>,
    pub dofs: Vec<DofDef>,
    pub bone_model: BoneModelFile,
    pub joint_limits: JointLimitsFile,
    pub blobs: Vec<Blob3D>,
}

impl SkeletonFile {
    pub fn from_model(model: &HandModel) -> Self {
        Self {
            joints: model.topology.joints().to_vec(),
            bones: model.topology.bones().to_vec(),
            dofs: model.topology.dofs().to_vec(),
            bone_model: BoneModelFile {
                mean_mm: model.bones.mean().to_vec(),
                basis_mm: model.bones.basis().iter().map(|r| r.to_vec()).collect(),
            },
            joint_limits: JointLimitsFile {
                lower_rad: model.limits.lower().to_vec(),
                upper_rad: model.limits.upper().to_vec(),
            },
            blobs: model.blobs.clone(),
        }
    }

    pub fn into_model(self) -> std::result::Result<HandModel, CoreError> {
        let topology = SkeletonTopology::new(self.joints, self.bones, self.dofs)?;
        let mean = exact::<NUM_BONES>(&self.bone_model.mean_mm, "bone_model.mean_mm")?;
        if self.bone_model.basis_mm.len() != NUM_BONES {
            return Err(CoreError::Validation {
                field: "bone_model.basis_mm".into(),
                reason: format!("expected {NUM_BONES} rows, found {}", self.bone_model.basis_mm.len()),
            });
        }
        let mut basis = [[0.0; NUM_SHAPE_PARAMS]; NUM_BONES];
        for (b, row) in self.bone_model.basis_mm.iter().enumerate() {
            basis[b] = exact(row, &format!("bone_model.basis_mm[{b}]"))?;
        }
        let bones = BoneLengthModel::new(mean, basis)?;
        let limits = JointLimitTable::new(
            exact(&self.joint_limits.lower_rad, "joint_limits.lower_rad")?,
            exact(&self.joint_limits.upper_rad, "joint_limits.upper_rad")?,
        )?;
        HandModel::new(topology, bones, limits, self.blobs)
    }
}

pub fn load_skeleton(path: &Path) -> Result<HandModel> {
    read_json::<SkeletonFile>(path)?
        .into_model()
        .map_err(Error::invalid(path))
}

/// Pinhole intrinsics plus the image size used when rendering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
}

impl CameraFile {
    pub fn intrinsics(&self) -> std::result::Result<CameraIntrinsics, CoreError> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy)
    }

    fn validate(&self) -> std::result::Result<(), CoreError> {
        self.intrinsics()?;
        for (name, v) in [("width", self.width), ("height", self.height)] {
            if v == Some(0) {
                return Err(CoreError::Validation {
                    field: name.into(),
                    reason: "must be at least 1".into(),
                });
            }
        }
        Ok(())
    }
}

pub fn load_camera(path: &Path) -> Result<CameraFile> {
    let cam: CameraFile = read_json(path)?;
    cam.validate().map_err(Error::invalid(path))?;
    Ok(cam)
}

/// One pose to render or evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub theta: PoseParams,
    #[serde(default)]
    pub beta: BoneCoeffs,
    /// When set, the translation in `theta` is replaced so the joint
    /// centroid lands here (mm).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

impl PoseEntry {
    /// Pose with `center` applied.
    pub fn resolve(&self, model: &HandModel) -> std::result::Result<PoseParams, CoreError> {
        match self.center {
            Some(c) => centered(model, &self.theta, &self.beta, c),
            None => Ok(self.theta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSet {
    pub poses: Vec<PoseEntry>,
}

impl PoseSet {
    fn validate(&self, model: &HandModel) -> std::result::Result<(), CoreError> {
        if self.poses.is_empty() {
            return Err(CoreError::Validation {
                field: "poses".into(),
                reason: "need at least one pose".into(),
            });
        }
        for (i, p) in self.poses.iter().enumerate() {
            let field = format!("poses[{i}]");
            finite(&p.theta.theta, &format!("{field}.theta"))?;
            finite(&p.beta.beta, &format!("{field}.beta"))?;
            if let Some(c) = p.center {
                finite(&c, &format!("{field}.center"))?;
            }
            decode_bones(&model.bones, &p.beta)?;
        }
        Ok(())
    }
}

pub fn load_poses(path: &Path, model: &HandModel) -> Result<PoseSet> {
    let set: PoseSet = read_json(path)?;
    set.validate(model).map_err(Error::invalid(path))?;
    Ok(set)
}

/// Ground truth written next to each rendered frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub frame: String,
    pub theta: PoseParams,
    pub beta: BoneCoeffs,
    pub joints: Vec<[f64; 3]>,
    pub bone_lengths: [f64; NUM_BONES],
    /// Joint centroid (mm), usable as the crop center.
    pub crop_center: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

fn check_joints(joints: &[[f64; 3]], field: &str) -> std::result::Result<(), CoreError> {
    if joints.len() != NUM_JOINTS {
        return Err(CoreError::Validation {
            field: field.into(),
            reason: format!("expected {NUM_JOINTS} keypoints, found {}", joints.len()),
        });
    }
    finite(joints.as_flattened(), field)
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    let gt: GroundTruth = read_json(path)?;
    check_joints(&gt.joints, "joints").map_err(Error::invalid(path))?;
    Ok(gt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedFrame {
    /// Depth file name this entry belongs to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_center: Option<[f64; 3]>,
    #[serde(default)]
    pub targets: Vec<JointTarget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotations {
    pub frames: Vec<AnnotatedFrame>,
}

impl Annotations {
    fn validate(&self) -> std::result::Result<(), CoreError> {
        for (i, f) in self.frames.iter().enumerate() {
            if let Some(c) = f.crop_center {
                finite(&c, &format!("frames[{i}].crop_center"))?;
                if !(c[2] > 0.0) {
                    return Err(CoreError::Validation {
                        field: format!("frames[{i}].crop_center"),
                        reason: "depth must be positive".into(),
                    });
                }
            }
            for (k, t) in f.targets.iter().enumerate() {
                let field = format!("frames[{i}].targets[{k}]");
                if t.joint_index >= NUM_JOINTS {
                    return Err(CoreError::Validation {
                        field: format!("{field}.joint_index"),
                        reason: format!("must be < {NUM_JOINTS}"),
                    });
                }
                match t.value {
                    TargetValue::Pixel(v) => finite(&v, &format!("{field}.value"))?,
                    TargetValue::Point(v) => finite(&v, &format!("{field}.value"))?,
                }
            }
        }
        Ok(())
    }

    /// Entry for `frame`, or the only entry when it names no frame.
    pub fn for_frame(&self, frame: &str) -> Option<&AnnotatedFrame> {
        self.frames
            .iter()
            .find(|f| f.frame.as_deref() == Some(frame))
            .or_else(|| match self.frames.as_slice() {
                [only] if only.frame.is_none() => Some(only),
                _ => None,
            })
    }
}

pub fn load_annotations(path: &Path) -> Result<Annotations> {
    let a: Annotations = read_json(path)?;
    a.validate().map_err(Error::invalid(path))?;
    Ok(a)
}

/// A fitted frame as written by `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
    pub crop_center: [f64; 3],
    pub theta: PoseParams,
    pub beta: BoneCoeffs,
    pub joints: Vec<[f64; 3]>,
    pub bone_lengths: [f64; NUM_BONES],
    pub report: EnergyReport,
    pub iterations: usize,
    pub seed_index: usize,
    pub seed_energy: f64,
}

impl FitRecord {
    pub fn new(
        frame: Option<String>,
        crop_center: [f64; 3],
        fit: FitResult,
        model: &HandModel,
    ) -> std::result::Result<Self, CoreError> {
        let joints = model.joints(&fit.theta, &fit.beta)?;
        Ok(Self {
            frame,
            crop_center,
            theta: fit.theta,
            beta: fit.beta,
            joints: joints.iter().map(arr3).collect(),
            bone_lengths: decode_bones(&model.bones, &fit.beta)?,
            report: fit.report,
            iterations: fit.iterations,
            seed_index: fit.seed_index,
            seed_energy: fit.seed_energy,
        })
    }
}

pub fn load_fit(path: &Path) -> Result<FitRecord> {
    let r: FitRecord = read_json(path)?;
    check_joints(&r.joints, "joints").map_err(Error::invalid(path))?;
    if r.report.grad.len() != gausshand_core::NUM_PARAMS {
        return Err(Error::invalid(path)(CoreError::Validation {
            field: "report.grad".into(),
            reason: format!("expected {} entries", gausshand_core::NUM_PARAMS),
        }));
    }
    Ok(r)
}
