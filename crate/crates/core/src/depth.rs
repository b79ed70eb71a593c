//! Depth-frame cropping and quadtree encoding.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::Vec3;
use crate::surface::CameraIntrinsics;
use crate::{Error, Result};

/// Default edge length of the crop cube (mm).
pub const DEFAULT_CROP_SIDE_MM: f64 = 300.0;
/// Default side of the resampled frame (px).
pub const DEFAULT_FRAME_SIZE: usize = 128;
/// Default quadtree depth-homogeneity threshold (mm).
pub const DEFAULT_QUADTREE_THRESHOLD_MM: f64 = 20.0;

/// Row-major depth grid in millimetres. Zero or non-finite means no measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation("depth", "image must be at least 1x1"));
        }
        if data.len() != width * height {
            return Err(Error::validation(
                "depth",
                alloc::format!("expected {} samples, found {}", width * height, data.len()),
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn is_valid_at(&self, x: usize, y: usize) -> bool {
        is_measurement(self.get(x, y))
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| is_measurement(**d)).count()
    }
}

fn is_measurement(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropConfig {
    pub side_mm: f64,
    pub size: usize,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            side_mm: DEFAULT_CROP_SIDE_MM,
            size: DEFAULT_FRAME_SIZE,
        }
    }
}

/// Cropped, resampled and normalized depth frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    /// Depth in mm; invalid pixels hold 0.
    pub image: DepthImage,
    pub valid_mask: Vec<bool>,
    /// `(d − center.z) / (side / 2)` for valid pixels, 1 elsewhere.
    pub normalized: Vec<f32>,
    /// Crop center after re-centering on the average depth.
    pub crop_center: [f64; 3],
    pub crop_side: f64,
    /// Intrinsics of the resampled frame.
    pub camera: CameraIntrinsics,
}

impl DepthFrame {
    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|v| **v).count()
    }

    /// Back-projection of every valid pixel.
    pub fn point_cloud(&self) -> Vec<Vec3> {
        let w = self.width();
        self.valid_mask
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(|(i, _)| {
                self.camera
                    .unproject([(i % w) as f64, (i / w) as f64], self.image.data[i])
            })
            .collect()
    }

    pub fn encode(&self, threshold_mm: f64) -> Vec<ImageBlob> {
        quadtree_encode(&self.image, threshold_mm)
    }
}

struct CropWindow {
    left: f64,
    top: f64,
    step_x: f64,
    step_y: f64,
}

impl CropWindow {
    fn sample(&self, raw: &DepthImage, u: usize, v: usize) -> Option<f64> {
        let x = libm::floor(self.left + (u as f64 + 0.5) * self.step_x);
        let y = libm::floor(self.top + (v as f64 + 0.5) * self.step_y);
        if x < 0.0 || y < 0.0 || x >= raw.width as f64 || y >= raw.height as f64 {
            return None;
        }
        let d = raw.get(x as usize, y as usize);
        is_measurement(d).then_some(d)
    }
}

/// Crop a cube around `crop_center`, re-center it on the average depth and
/// resample to `cfg.size`² with nearest-neighbour lookup.
///
/// The pixel window is the projection of the cube at the given center and
/// stays fixed; re-centering moves the accepted depth range only.
pub fn preprocess(
    raw: &DepthImage,
    cam: &CameraIntrinsics,
    crop_center: [f64; 3],
    cfg: &CropConfig,
) -> Result<DepthFrame> {
    let [x, y, z] = crop_center;
    if !(z > 0.0) {
        return Err(Error::BehindCamera { z });
    }
    if !(cfg.side_mm > 0.0) || cfg.size == 0 {
        return Err(Error::validation("crop", "side and size must be positive"));
    }
    let half = 0.5 * cfg.side_mm;
    let n = cfg.size;
    let width_px = cam.fx * cfg.side_mm / z;
    let height_px = cam.fy * cfg.side_mm / z;
    let center = cam.project(&Vec3::new(x, y, z))?;
    // Edge coordinates: raw pixel i spans [i, i + 1).
    let window = CropWindow {
        left: center[0] + 0.5 - 0.5 * width_px,
        top: center[1] + 0.5 - 0.5 * height_px,
        step_x: width_px / n as f64,
        step_y: height_px / n as f64,
    };

    let gather = |zc: f64| {
        let mut depth = vec![0.0; n * n];
        let mut count = 0usize;
        let mut sum = 0.0;
        for v in 0..n {
            for u in 0..n {
                if let Some(d) = window.sample(raw, u, v) {
                    if (d - zc).abs() <= half {
                        depth[v * n + u] = d;
                        count += 1;
                        sum += d;
                    }
                }
            }
        }
        (depth, count, sum)
    };

    let (_, count, sum) = gather(z);
    if count == 0 {
        return Err(Error::EmptyCrop);
    }
    let z_avg = sum / count as f64;
    let (depth, count, _) = gather(z_avg);
    if count == 0 {
        return Err(Error::EmptyCrop);
    }

    let valid_mask: Vec<bool> = depth.iter().map(|d| *d > 0.0).collect();
    let normalized = depth
        .iter()
        .zip(&valid_mask)
        .map(|(d, v)| if *v { ((d - z_avg) / half) as f32 } else { 1.0 })
        .collect();
    let (sx, sy) = (1.0 / window.step_x, 1.0 / window.step_y);
    let camera = CameraIntrinsics {
        fx: cam.fx * sx,
        fy: cam.fy * sy,
        cx: (cam.cx + 0.5 - window.left) * sx - 0.5,
        cy: (cam.cy + 0.5 - window.top) * sy - 0.5,
    };
    Ok(DepthFrame {
        image: DepthImage {
            width: n,
            height: n,
            data: depth,
        },
        valid_mask,
        normalized,
        crop_center: [x, y, z_avg],
        crop_side: cfg.side_mm,
        camera,
    })
}

/// Image Gaussian summarizing one quadtree leaf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageBlob {
    pub mu: [f64; 2],
    pub sigma: f64,
    pub z: f64,
}

/// One terminal quadrant of the decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadLeaf {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub valid: usize,
    pub min_depth: f64,
    pub max_depth: f64,
    pub mean_depth: f64,
}

impl QuadLeaf {
    pub fn blob(&self) -> ImageBlob {
        ImageBlob {
            mu: [
                self.x as f64 + 0.5 * (self.width as f64 - 1.0),
                self.y as f64 + 0.5 * (self.height as f64 - 1.0),
            ],
            sigma: 0.25 * (self.width + self.height) as f64,
            z: self.mean_depth,
        }
    }
}

/// All leaves, including those without valid pixels, in NW, NE, SW, SE order.
pub fn quadtree_leaves(image: &DepthImage, threshold_mm: f64) -> Vec<QuadLeaf> {
    let mut leaves = Vec::new();
    split(image, threshold_mm, 0, 0, image.width, image.height, &mut leaves);
    leaves
}

fn split(image: &DepthImage, threshold: f64, x: usize, y: usize, w: usize, h: usize, out: &mut Vec<QuadLeaf>) {
    let mut leaf = QuadLeaf {
        x,
        y,
        width: w,
        height: h,
        valid: 0,
        min_depth: f64::INFINITY,
        max_depth: f64::NEG_INFINITY,
        mean_depth: 0.0,
    };
    let mut sum = 0.0;
    for row in y..y + h {
        for &d in &image.data[row * image.width + x..row * image.width + x + w] {
            if is_measurement(d) {
                leaf.valid += 1;
                sum += d;
                leaf.min_depth = leaf.min_depth.min(d);
                leaf.max_depth = leaf.max_depth.max(d);
            }
        }
    }
    let homogeneous = leaf.valid == 0 || leaf.max_depth - leaf.min_depth < threshold;
    if homogeneous || (w == 1 && h == 1) {
        if leaf.valid > 0 {
            leaf.mean_depth = sum / leaf.valid as f64;
        } else {
            leaf.min_depth = 0.0;
            leaf.max_depth = 0.0;
        }
        out.push(leaf);
        return;
    }
    let (wl, wr) = (w.div_ceil(2), w / 2);
    let (ht, hb) = (h.div_ceil(2), h / 2);
    for (qx, qy, qw, qh) in [
        (x, y, wl, ht),
        (x + wl, y, wr, ht),
        (x, y + ht, wl, hb),
        (x + wl, y + ht, wr, hb),
    ] {
        if qw > 0 && qh > 0 {
            split(image, threshold, qx, qy, qw, qh, out);
        }
    }
}

/// Image Gaussians for every leaf holding at least one valid pixel.
pub fn quadtree_encode(image: &DepthImage, threshold_mm: f64) -> Vec<ImageBlob> {
    quadtree_leaves(image, threshold_mm)
        .iter()
        .filter(|l| l.valid > 0)
        .map(QuadLeaf::blob)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square_camera() -> CameraIntrinsics {
        // At z = 300 mm the 300 mm cube covers exactly 128 px.
        CameraIntrinsics::new(128.0, 128.0, 63.5, 63.5).unwrap()
    }

    #[test]
    fn constant_plane_fills_crop_and_normalizes_to_zero() {
        let raw = DepthImage::filled(128, 128, 300.0);
        let frame = preprocess(&raw, &square_camera(), [0.0, 0.0, 300.0], &CropConfig::default()).unwrap();
        assert_eq!(frame.valid_count(), 128 * 128);
        assert!(frame.normalized.iter().all(|v| *v == 0.0));
        assert_eq!(frame.image, raw);
        assert_eq!(frame.camera, square_camera());
    }

    #[test]
    fn recentering_uses_average_depth_and_boundaries_map_to_unit() {
        let mut raw = DepthImage::filled(128, 128, 300.0);
        // Average stays 300: symmetric depths at the cube faces.
        raw.data[0] = 150.0;
        raw.data[1] = 450.0;
        let frame = preprocess(&raw, &square_camera(), [0.0, 0.0, 300.0], &CropConfig::default()).unwrap();
        assert_eq!(frame.crop_center[2], 300.0);
        assert_eq!(frame.normalized[0], -1.0);
        assert_eq!(frame.normalized[1], 1.0);
        raw.data[2] = 451.0;
        let frame = preprocess(&raw, &square_camera(), [0.0, 0.0, 300.0], &CropConfig::default()).unwrap();
        assert!(!frame.valid_mask[2]);
        assert_eq!(frame.normalized[2], 1.0);
    }

    #[test]
    fn empty_crop_is_an_error() {
        let raw = DepthImage::filled(64, 64, 0.0);
        assert_eq!(
            preprocess(&raw, &square_camera(), [0.0, 0.0, 300.0], &CropConfig::default()),
            Err(Error::EmptyCrop)
        );
        let far = DepthImage::filled(64, 64, 2000.0);
        assert_eq!(
            preprocess(&far, &square_camera(), [0.0, 0.0, 300.0], &CropConfig::default()),
            Err(Error::EmptyCrop)
        );
    }

    #[test]
    fn resampled_camera_sees_the_sampled_raw_pixel() {
        let cam = CameraIntrinsics::new(475.0, 470.0, 315.0, 245.0).unwrap();
        let (w, h) = (640usize, 480usize);
        // Depth encodes the raw pixel index so samples can be traced back.
        let data = (0..w * h).map(|i| 500.0 + 1e-4 * i as f64).collect();
        let raw = DepthImage::new(w, h, data).unwrap();
        let frame = preprocess(&raw, &cam, [20.0, -15.0, 500.0], &CropConfig::default()).unwrap();
        let c = frame.camera.project(&Vec3::new(20.0, -15.0, 500.0)).unwrap();
        assert!((c[0] - 63.5).abs() < 1e-9 && (c[1] - 63.5).abs() < 1e-9);
        for v in 0..128 {
            for u in 0..128 {
                let i = v * 128 + u;
                assert!(frame.valid_mask[i]);
                let index = ((frame.image.data[i] - 500.0) * 1e4).round() as usize;
                let ray = frame.camera.ray([u as f64, v as f64]);
                let [ru, rv] = cam.project(&ray).unwrap();
                assert_eq!(index % w, (ru + 0.5).floor() as usize);
                assert_eq!(index / w, (rv + 0.5).floor() as usize);
            }
        }
    }

    #[test]
    fn constant_frame_gives_one_blob() {
        let image = DepthImage::filled(128, 128, 431.0);
        let blobs = quadtree_encode(&image, 20.0);
        assert_eq!(blobs.len(), 1);
        assert_eq!(blobs[0].sigma, 64.0);
        assert_eq!(blobs[0].z, 431.0);
        assert_eq!(blobs[0].mu, [63.5, 63.5]);
    }

    #[test]
    fn split_halves_never_mix() {
        let mut image = DepthImage::filled(128, 128, 400.0);
        for y in 0..128 {
            for x in 64..128 {
                image.data[y * 128 + x] = 500.0;
            }
        }
        let blobs = quadtree_encode(&image, 20.0);
        assert_eq!(blobs.len(), 4);
        assert!(blobs.iter().all(|b| b.z == 400.0 || b.z == 500.0));
    }

    #[test]
    fn empty_frame_gives_no_blobs_but_tiles() {
        let image = DepthImage::filled(5, 3, 0.0);
        assert!(quadtree_encode(&image, 20.0).is_empty());
        assert_eq!(quadtree_leaves(&image, 20.0).len(), 1);
    }

    #[test]
    fn mixed_leaf_averages_valid_pixels_only() {
        let mut image = DepthImage::filled(2, 2, 0.0);
        image.data[0] = 400.0;
        image.data[3] = 410.0;
        let blobs = quadtree_encode(&image, 20.0);
        assert_eq!(blobs.len(), 1);
        assert_eq!(blobs[0].z, 405.0);
    }

    fn random_image() -> impl Strategy<Value = DepthImage> {
        (1usize..40, 1usize..40).prop_flat_map(|(w, h)| {
            proptest::collection::vec(prop_oneof![Just(0.0), 350.0f64..450.0, 380.0f64..395.0], w * h)
                .prop_map(move |data| DepthImage::new(w, h, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn leaves_tile_and_are_homogeneous(image in random_image(), c in 1.0f64..40.0) {
            let leaves = quadtree_leaves(&image, c);
            let mut cover = vec![0u8; image.width * image.height];
            let mut valid = 0;
            for leaf in &leaves {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for y in leaf.y..leaf.y + leaf.height {
                    for x in leaf.x..leaf.x + leaf.width {
                        cover[y * image.width + x] += 1;
                        if image.is_valid_at(x, y) {
                            lo = lo.min(image.get(x, y));
                            hi = hi.max(image.get(x, y));
                            valid += 1;
                        }
                    }
                }
                let one_px = leaf.width == 1 && leaf.height == 1;
                prop_assert!(one_px || lo > hi || hi - lo < c);
            }
            prop_assert!(cover.iter().all(|c| *c == 1));
            prop_assert_eq!(valid, image.valid_count());
            prop_assert_eq!(quadtree_leaves(&image, c), leaves);
        }
    }
}
