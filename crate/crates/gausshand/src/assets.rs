//! Files shipped in `assets/`, embedded at build time.

use std::path::Path;

use crate::config::RunConfig;
use crate::files::{parse_json, CameraFile, PoseSet, SkeletonFile};

pub const SKELETON_JSON: &str = include_str!("../assets/skeleton.json");
pub const CAMERA_JSON: &str = include_str!("../assets/camera.json");
pub const POSES_JSON: &str = include_str!("../assets/poses.json");
pub const CONFIG_JSON: &str = include_str!("../assets/config.json");

fn parse<T: serde::de::DeserializeOwned>(text: &str, name: &str) -> T {
    parse_json(text, Path::new(name)).unwrap_or_else(|e| panic!("shipped asset is malformed: {e}"))
}

pub fn skeleton() -> SkeletonFile {
    parse(SKELETON_JSON, "assets/skeleton.json")
}

/// Intrinsics used by `render` when no camera is given.
pub fn camera() -> CameraFile {
    parse(CAMERA_JSON, "assets/camera.json")
}

/// The default synthetic pose set.
pub fn poses() -> PoseSet {
    parse(POSES_JSON, "assets/poses.json")
}

pub fn config() -> RunConfig {
    parse(CONFIG_JSON, "assets/config.json")
}
