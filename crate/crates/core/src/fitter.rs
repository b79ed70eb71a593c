//! Per-frame pose and shape recovery by direct energy minimization.
//!
//! Each run is Adam on scaled coordinates with step halving: a step that
//! does not lower the energy is retried at half the rate, so accepted
//! iterates are strictly decreasing.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::energy::{total_energy, EnergyReport, EnergyWeights, Scene};
use crate::model::HandModel;
use crate::skeleton::{decode_bones, BoneCoeffs, PoseParams};
use crate::{Error, Result, GLOBAL_ROTATION, NUM_JOINTS, NUM_PARAMS, NUM_POSE_DOF};

/// Energy terms switched on in a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermMask {
    pub dissim: bool,
    pub collision: bool,
    pub bone: bool,
    pub lim: bool,
    pub joint: bool,
}

impl TermMask {
    pub const ALL: Self = Self {
        dissim: true,
        collision: true,
        bone: true,
        lim: true,
        joint: true,
    };

    pub fn apply(&self, w: &EnergyWeights) -> EnergyWeights {
        let pick = |on: bool, v: f64| if on { v } else { 0.0 };
        EnergyWeights {
            dissim: pick(self.dissim, w.dissim),
            collision: pick(self.collision, w.collision),
            bone: pick(self.bone, w.bone),
            limits: pick(self.lim, w.limits),
            joint: pick(self.joint, w.joint),
            slack_mm: w.slack_mm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DofSet {
    /// Global rotation and translation only.
    Global,
    /// Every pose DOF and the shape coefficients.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub terms: TermMask,
    pub dofs: DofSet,
    /// Iteration budget; `None` uses `FitConfig::max_iters`.
    #[serde(default)]
    pub max_iters: Option<usize>,
}

/// How seed translations are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPlacement {
    /// Move each seed so its joint centroid sits at the crop center.
    CropCenter,
    /// Use seed translations unchanged.
    AsGiven,
}

/// Missing fields take their default values when deserializing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_iters: usize,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Relative energy decrease below which an iteration counts as stalled.
    pub tolerance: f64,
    /// Consecutive stalled iterations that end a stage.
    pub patience: usize,
    /// Millimetres of translation per unit step.
    pub translation_scale_mm: f64,
    /// Shape-coefficient units per unit step.
    pub shape_scale: f64,
    /// Retries at half the rate before a stage gives up.
    pub max_halvings: usize,
    pub seeds: Vec<PoseParams>,
    pub seed_placement: SeedPlacement,
    pub stages: Vec<Stage>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 800,
            step_size: 0.02,
            beta1: 0.9,
            beta2: 0.999,
            tolerance: 1e-7,
            patience: 5,
            translation_scale_mm: 10.0,
            shape_scale: 1.0,
            max_halvings: 20,
            seeds: canonical_poses().to_vec(),
            seed_placement: SeedPlacement::CropCenter,
            stages: default_stages(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::validation("max_iters", "must be at least 1"));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::validation("step_size", "must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::validation(name, "must lie in [0, 1)"));
            }
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(Error::validation("tolerance", "must be finite and nonnegative"));
        }
        if !(self.translation_scale_mm.is_finite() && self.translation_scale_mm > 0.0) {
            return Err(Error::validation("translation_scale_mm", "must be positive"));
        }
        if !(self.shape_scale.is_finite() && self.shape_scale > 0.0) {
            return Err(Error::validation("shape_scale", "must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::validation("seeds", "need at least one seed pose"));
        }
        if self.seeds.iter().any(|s| !s.is_finite()) {
            return Err(Error::validation("seeds", "seed poses must be finite"));
        }
        if self.stages.is_empty() {
            return Err(Error::validation("stages", "need at least one stage"));
        }
        if self.stages.iter().any(|s| s.max_iters == Some(0)) {
            return Err(Error::validation("stages.max_iters", "must be at least 1"));
        }
        Ok(())
    }
}

/// Global alignment on the data and joint terms, then everything.
pub fn default_stages() -> Vec<Stage> {
    vec![
        Stage {
            terms: TermMask {
                dissim: true,
                collision: false,
                bone: false,
                lim: false,
                joint: true,
            },
            dofs: DofSet::Global,
            max_iters: Some(100),
        },
        Stage {
            terms: TermMask::ALL,
            dofs: DofSet::All,
            max_iters: None,
        },
    ]
}

fn articulation(thumb: [f64; 4], index: [f64; 4], middle: [f64; 4], ring: [f64; 4], pinky: [f64; 4]) -> PoseParams {
    let mut pose = PoseParams::default();
    for (f, v) in [thumb, index, middle, ring, pinky].iter().enumerate() {
        pose.theta[4 * f..4 * f + 4].copy_from_slice(v);
    }
    pose
}

/// Flat hand, half curl, fist, pinch and spread, at the origin.
pub fn canonical_poses() -> [PoseParams; 5] {
    let curl = |a: f64| [0.0, 0.6 * a, 0.7 * a, 0.5 * a];
    [
        PoseParams::default(),
        articulation([0.0, 0.3, 0.3, 0.3], curl(1.0), curl(1.0), curl(1.0), curl(1.0)),
        articulation(
            [0.3, 0.5, 0.6, 0.8],
            [0.0, 1.4, 1.6, 1.1],
            [0.0, 1.4, 1.6, 1.1],
            [0.0, 1.4, 1.6, 1.1],
            [0.0, 1.4, 1.6, 1.1],
        ),
        articulation(
            [0.5, 0.7, 0.4, 0.4],
            [0.0, 0.6, 0.8, 0.5],
            curl(0.5),
            curl(0.7),
            curl(0.9),
        ),
        articulation(
            [0.5, 0.0, 0.0, 0.0],
            [0.3, 0.0, 0.0, 0.0],
            [0.0; 4],
            [-0.25, 0.0, 0.0, 0.0],
            [-0.35, 0.0, 0.0, 0.0],
        ),
    ]
}

/// Copy of `pose` translated so that its joint centroid lands on `center`.
pub fn centered(model: &HandModel, pose: &PoseParams, beta: &BoneCoeffs, center: [f64; 3]) -> Result<PoseParams> {
    let lengths = decode_bones(&model.bones, beta)?;
    let fk = model.topology.forward(pose, &lengths);
    let mean = fk.positions.iter().sum::<crate::math::Vec3>() / NUM_JOINTS as f64;
    let t = pose.translation();
    let mut out = *pose;
    out.set_translation([
        t[0] + center[0] - mean.x,
        t[1] + center[1] - mean.y,
        t[2] + center[2] - mean.z,
    ]);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: PoseParams,
    pub beta: BoneCoeffs,
    pub report: EnergyReport,
    pub iterations: usize,
    pub seed_index: usize,
    /// Total energy of the chosen seed before optimization.
    pub seed_energy: f64,
}

/// Fit one frame from every seed and keep the lowest final energy.
///
/// Ties are broken by seed index; runs whose shape decodes to a
/// nonpositive bone are discarded.
pub fn fit_frame(
    scene: &Scene<'_>,
    crop_center: [f64; 3],
    weights: &EnergyWeights,
    config: &FitConfig,
) -> Result<FitResult> {
    weights.validate()?;
    config.validate()?;
    if scene.image.is_empty() && !scene.targets.iter().any(|t| t.visible) {
        return Err(Error::NoSignal);
    }
    let mut best: Option<FitResult> = None;
    let mut first_err = None;
    for (index, seed) in config.seeds.iter().enumerate() {
        let run = fit_from_seed(scene, crop_center, weights, config, seed, index);
        match run {
            Ok(r) => {
                if best.as_ref().map_or(true, |b| r.report.e_total < b.report.e_total) {
                    best = Some(r);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.unwrap_or(Error::NoSignal))
}

/// One optimization run from a single seed.
pub fn fit_from_seed(
    scene: &Scene<'_>,
    crop_center: [f64; 3],
    weights: &EnergyWeights,
    config: &FitConfig,
    seed: &PoseParams,
    seed_index: usize,
) -> Result<FitResult> {
    let beta = BoneCoeffs::default();
    let pose = match config.seed_placement {
        SeedPlacement::CropCenter => centered(scene.model, seed, &beta, crop_center)?,
        SeedPlacement::AsGiven => *seed,
    };
    let start = pack(&pose, &beta);
    let seed_report = evaluate(scene, &start, weights)?;

    let mut x = start;
    let mut iterations = 0;
    for stage in &config.stages {
        let w = stage.terms.apply(weights);
        let budget = stage.max_iters.unwrap_or(config.max_iters);
        let (nx, used) = run_stage(scene, &w, config, stage.dofs, budget, x, None)?;
        x = nx;
        iterations += used;
    }

    let mut report = evaluate(scene, &x, weights)?;
    // Partial-term stages can raise the full energy; never return worse than the seed.
    if !(report.e_total <= seed_report.e_total) {
        x = start;
        report = seed_report.clone();
    }
    let (theta, beta) = unpack(&x);
    Ok(FitResult {
        theta,
        beta,
        report,
        iterations,
        seed_index,
        seed_energy: seed_report.e_total,
    })
}

fn pack(pose: &PoseParams, beta: &BoneCoeffs) -> [f64; NUM_PARAMS] {
    let mut x = [0.0; NUM_PARAMS];
    x[..NUM_POSE_DOF].copy_from_slice(&pose.theta);
    x[NUM_POSE_DOF..].copy_from_slice(&beta.beta);
    x
}

fn unpack(x: &[f64; NUM_PARAMS]) -> (PoseParams, BoneCoeffs) {
    let mut pose = PoseParams::default();
    let mut beta = BoneCoeffs::default();
    pose.theta.copy_from_slice(&x[..NUM_POSE_DOF]);
    beta.beta.copy_from_slice(&x[NUM_POSE_DOF..]);
    (pose, beta)
}

fn evaluate(scene: &Scene<'_>, x: &[f64; NUM_PARAMS], w: &EnergyWeights) -> Result<EnergyReport> {
    let (pose, beta) = unpack(x);
    total_energy(scene, &pose, &beta, w)
}

struct Moments {
    m: [f64; NUM_PARAMS],
    v: [f64; NUM_PARAMS],
    b1t: f64,
    b2t: f64,
    beta1: f64,
    beta2: f64,
}

impl Moments {
    fn new(config: &FitConfig) -> Self {
        Self {
            m: [0.0; NUM_PARAMS],
            v: [0.0; NUM_PARAMS],
            b1t: 1.0,
            b2t: 1.0,
            beta1: config.beta1,
            beta2: config.beta2,
        }
    }

    fn is_fresh(&self) -> bool {
        self.b1t == self.beta1
    }

    /// Update with `grad` and return the step direction in parameter units.
    fn direction(&mut self, grad: &[f64], scale: &[f64; NUM_PARAMS]) -> [f64; NUM_PARAMS] {
        self.b1t *= self.beta1;
        self.b2t *= self.beta2;
        let mut dir = [0.0; NUM_PARAMS];
        for i in 0..NUM_PARAMS {
            // Moments live in scaled coordinates: y = x / scale.
            let g = grad[i] * scale[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / (1.0 - self.b1t);
            let vh = self.v[i] / (1.0 - self.b2t);
            dir[i] = scale[i] * mh / (libm::sqrt(vh) + 1e-12);
        }
        dir
    }
}

/// Halve `lr` until a step along `-dir` lowers the energy.
fn line_search(
    scene: &Scene<'_>,
    w: &EnergyWeights,
    config: &FitConfig,
    x: &[f64; NUM_PARAMS],
    dir: &[f64; NUM_PARAMS],
    energy: f64,
    lr: &mut f64,
) -> Option<([f64; NUM_PARAMS], EnergyReport)> {
    for _ in 0..=config.max_halvings {
        let mut trial = *x;
        for i in 0..NUM_PARAMS {
            trial[i] -= *lr * dir[i];
        }
        if let Ok(r) = evaluate(scene, &trial, w) {
            if r.e_total < energy {
                return Some((trial, r));
            }
        }
        *lr *= 0.5;
    }
    None
}

fn run_stage(
    scene: &Scene<'_>,
    w: &EnergyWeights,
    config: &FitConfig,
    dofs: DofSet,
    budget: usize,
    mut x: [f64; NUM_PARAMS],
    mut trace: Option<&mut Vec<f64>>,
) -> Result<([f64; NUM_PARAMS], usize)> {
    let mut scale = [0.0; NUM_PARAMS];
    for (i, s) in scale.iter_mut().enumerate() {
        let active = match dofs {
            DofSet::Global => (GLOBAL_ROTATION..NUM_POSE_DOF).contains(&i),
            DofSet::All => true,
        };
        *s = if !active {
            0.0
        } else if (NUM_POSE_DOF - 3..NUM_POSE_DOF).contains(&i) {
            config.translation_scale_mm
        } else if i >= NUM_POSE_DOF {
            config.shape_scale
        } else {
            1.0
        };
    }

    let mut current = evaluate(scene, &x, w)?;
    if let Some(t) = trace.as_deref_mut() {
        t.push(current.e_total);
    }
    let mut adam = Moments::new(config);
    let mut lr = config.step_size;
    let mut stalled = 0;
    let mut used = 0;
    while used < budget {
        used += 1;
        let mut dir = adam.direction(&current.grad, &scale);
        let mut accepted = line_search(scene, w, config, &x, &dir, current.e_total, &mut lr);
        if accepted.is_none() && !adam.is_fresh() {
            // Stale momentum need not point downhill; restart from the gradient.
            adam = Moments::new(config);
            lr = config.step_size;
            dir = adam.direction(&current.grad, &scale);
            accepted = line_search(scene, w, config, &x, &dir, current.e_total, &mut lr);
        }
        let Some((nx, next)) = accepted else {
            break;
        };
        let decrease = (current.e_total - next.e_total) / current.e_total.abs().max(1e-12);
        x = nx;
        current = next;
        if let Some(t) = trace.as_deref_mut() {
            t.push(current.e_total);
        }
        if decrease < config.tolerance {
            stalled += 1;
            if stalled >= config.patience {
                break;
            }
        } else {
            stalled = 0;
        }
        lr = (lr * 1.25).min(config.step_size);
    }
    Ok((x, used))
}
