//! Run configuration.
//!
//! Precedence, lowest first: built-in defaults, the config file (from
//! `--config` or `$GAUSSHAND_CONFIG`), then command-line flags. Inside the
//! config file an explicit `weights_file` replaces the inline `energy` block.

use std::path::{Path, PathBuf};

use gausshand_core::depth::{CropConfig, DEFAULT_CROP_SIDE_MM, DEFAULT_FRAME_SIZE, DEFAULT_QUADTREE_THRESHOLD_MM};
use gausshand_core::energy::EnergyWeights;
use gausshand_core::fitter::FitConfig;
use gausshand_core::{Error as CoreError, HandModel};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files::{load_camera, load_skeleton, read_json, CameraFile};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "GAUSSHAND_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Skeleton file; the built-in hand when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub camera: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights_file: Option<PathBuf>,
    pub energy: EnergyWeights,
    pub fit: FitConfig,
    pub quadtree_threshold_mm: f64,
    pub crop_side_mm: f64,
    pub image_size: usize,
    /// Worker threads; all cores when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            skeleton: None,
            camera: None,
            weights_file: None,
            energy: EnergyWeights::default(),
            fit: FitConfig::default(),
            quadtree_threshold_mm: DEFAULT_QUADTREE_THRESHOLD_MM,
            crop_side_mm: DEFAULT_CROP_SIDE_MM,
            image_size: DEFAULT_FRAME_SIZE,
            threads: None,
        }
    }
}

fn invalid(field: &str, reason: &str) -> CoreError {
    CoreError::Validation {
        field: field.into(),
        reason: reason.into(),
    }
}

impl RunConfig {
    /// Numeric range checks; referenced files are checked by [`RunConfig::resolve`].
    pub fn validate(&self) -> std::result::Result<(), CoreError> {
        self.energy.validate()?;
        self.fit.validate()?;
        if !(self.quadtree_threshold_mm.is_finite() && self.quadtree_threshold_mm > 0.0) {
            return Err(invalid("quadtree_threshold_mm", "must be positive"));
        }
        if !(self.crop_side_mm.is_finite() && self.crop_side_mm > 0.0) {
            return Err(invalid("crop_side_mm", "must be positive"));
        }
        if self.image_size == 0 {
            return Err(invalid("image_size", "must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(invalid("threads", "must be at least 1"));
        }
        Ok(())
    }

    pub fn crop(&self) -> CropConfig {
        CropConfig {
            side_mm: self.crop_side_mm,
            size: self.image_size,
        }
    }

    /// Load the referenced files and validate everything.
    pub fn resolve(&self) -> Result<Resolved> {
        self.validate().map_err(Error::Core)?;
        let model = match &self.skeleton {
            Some(p) => load_skeleton(p)?,
            None => HandModel::default_hand(),
        };
        let camera = self.camera.as_deref().map(load_camera).transpose()?;
        let weights = match &self.weights_file {
            Some(p) => load_weights(p)?,
            None => self.energy,
        };
        Ok(Resolved {
            model,
            camera,
            weights,
            config: self.clone(),
        })
    }
}

/// A config with its files loaded.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: HandModel,
    pub camera: Option<CameraFile>,
    pub weights: EnergyWeights,
    pub config: RunConfig,
}

pub fn load_weights(path: &Path) -> Result<EnergyWeights> {
    let w: EnergyWeights = read_json(path)?;
    w.validate().map_err(Error::invalid(path))?;
    Ok(w)
}

/// Load a config file; relative paths inside it are taken from its directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let mut cfg: RunConfig = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut cfg.skeleton, &mut cfg.camera, &mut cfg.weights_file]
        .into_iter()
        .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    cfg.validate().map_err(Error::invalid(path))?;
    Ok(cfg)
}

/// Config from `explicit`, else `$GAUSSHAND_CONFIG`, else defaults.
pub fn discover(explicit: Option<&Path>) -> Result<RunConfig> {
    match explicit {
        Some(p) => load_config(p),
        None => match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => load_config(Path::new(&p)),
            _ => Ok(RunConfig::default()),
        },
    }
}
