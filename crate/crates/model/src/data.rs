//! Loading images and ground truth into tensors.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use candle_core::{DType, Device, Tensor};
use graspreason_core::dataset::InstructionSample;
use graspreason_core::geometry::{pose_to_rect, GraspRect, DEFAULT_CENTER_FRACTION, DEFAULT_JAW_RATIO};
use graspreason_core::rasterize_gt_maps;
use image::imageops::FilterType;

use crate::error::{ModelError, Result};

/// One scene's image inputs at model resolution.
#[derive(Debug, Clone)]
pub struct SceneInput {
    /// `(3, S, S)` in `[-1, 1]`, for the language backbone.
    pub rgb: Tensor,
    /// `(C, S, S)`: RGB, plus normalised depth when the head takes four channels.
    pub head: Tensor,
    /// Scale from stored pixels to model pixels, `(sx, sy)`.
    pub scale: (f64, f64),
}

pub fn rgb_tensor(img: &image::RgbImage, size: usize, device: &Device) -> Result<(Tensor, (f64, f64))> {
    let (w, h) = img.dimensions();
    let resized;
    let img = if (w as usize, h as usize) != (size, size) {
        resized = image::imageops::resize(img, size as u32, size as u32, FilterType::Triangle);
        &resized
    } else {
        img
    };
    let data: Vec<f32> = img.as_raw().iter().map(|&v| v as f32 / 127.5 - 1.0).collect();
    let t = Tensor::from_vec(data, (size, size, 3), device)?.permute((2, 0, 1))?.contiguous()?;
    Ok((t, (size as f64 / w as f64, size as f64 / h as f64)))
}

/// Depth min-max normalised to `[0, 1]` per image, `(1, S, S)`.
pub fn depth_tensor(img: &image::ImageBuffer<image::Luma<u16>, Vec<u16>>, size: usize, device: &Device) -> Result<Tensor> {
    let img = image::imageops::resize(img, size as u32, size as u32, FilterType::Nearest);
    let raw: Vec<f32> = img.as_raw().iter().map(|&v| v as f32).collect();
    let lo = raw.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = raw.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data: Vec<f32> = raw.iter().map(|v| (v - lo) / span).collect();
    Ok(Tensor::from_vec(data, (1, size, size), device)?)
}

pub fn load_scene_input(
    root: &Path,
    image_path: &Path,
    depth_path: Option<&Path>,
    size: usize,
    use_depth: bool,
    dtype: DType,
    device: &Device,
) -> Result<SceneInput> {
    let p = root.join(image_path);
    let img = image::open(&p).map_err(|e| ModelError::io(&p, e))?.to_rgb8();
    let (rgb, scale) = rgb_tensor(&img, size, device)?;
    let head = if use_depth {
        let dp = depth_path.ok_or_else(|| ModelError::Domain(format!("{} has no depth image", image_path.display())))?;
        let dp = root.join(dp);
        let d = image::open(&dp).map_err(|e| ModelError::io(&dp, e))?.to_luma16();
        Tensor::cat(&[&rgb, &depth_tensor(&d, size, device)?], 0)?
    } else {
        rgb.clone()
    };
    Ok(SceneInput {
        rgb: rgb.to_dtype(dtype)?,
        head: head.to_dtype(dtype)?,
        scale,
    })
}

/// Rectangles rescaled into model pixels.
pub fn scale_rects(rects: &[GraspRect<f64>], scale: (f64, f64)) -> Result<Vec<GraspRect<f64>>> {
    if scale == (1.0, 1.0) {
        return Ok(rects.to_vec());
    }
    rects
        .iter()
        .map(|r| {
            let p = r.to_pose(1.0)?.affine(scale.0, scale.1, 0.5 * scale.0 - 0.5, 0.5 * scale.1 - 0.5);
            Ok(pose_to_rect(&p, DEFAULT_JAW_RATIO)?)
        })
        .collect()
}

/// Ground-truth maps `(4, S, S)` in the order Q, C, S, W.
pub fn gt_map_tensor(rects: &[GraspRect<f64>], size: usize, width_max: f64, dtype: DType, device: &Device) -> Result<Tensor> {
    let m = rasterize_gt_maps(rects, (size, size), width_max, DEFAULT_CENTER_FRACTION)?;
    let mut data = Vec::with_capacity(4 * size * size);
    for a in [&m.quality, &m.cos, &m.sin, &m.width] {
        data.extend(a.iter().map(|&v| v as f32));
    }
    Ok(Tensor::from_vec(data, (4, size, size), device)?.to_dtype(dtype)?)
}

/// Scene inputs keyed by image path; safe to share between threads.
#[derive(Debug)]
pub struct ImageCache {
    root: PathBuf,
    size: usize,
    use_depth: bool,
    dtype: DType,
    device: Device,
    map: Mutex<HashMap<PathBuf, SceneInput>>,
}

impl ImageCache {
    pub fn new(root: &Path, size: usize, use_depth: bool, dtype: DType, device: Device) -> Self {
        ImageCache {
            root: root.to_path_buf(),
            size,
            use_depth,
            dtype,
            device,
            map: Mutex::new(HashMap::new()),
        }
    }

    pub fn get(&self, image_path: &Path, depth_path: Option<&Path>) -> Result<SceneInput> {
        if let Some(s) = self.map.lock().expect("cache lock").get(image_path) {
            return Ok(s.clone());
        }
        let s = load_scene_input(&self.root, image_path, depth_path, self.size, self.use_depth, self.dtype, &self.device)?;
        self.map.lock().expect("cache lock").insert(image_path.to_path_buf(), s.clone());
        Ok(s)
    }

    pub fn for_sample(&self, s: &InstructionSample) -> Result<SceneInput> {
        self.get(&s.image_path, s.depth_path.as_deref())
    }
}
