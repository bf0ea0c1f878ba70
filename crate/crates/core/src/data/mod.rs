//! Domain types shared by every stage, plus their file formats.

mod annotations;
mod atomic;
pub mod bundle;
mod detections;
mod features_table;
mod flo;
mod raster;

pub use annotations::{
    load_frame_annotations, load_object_labels, parse_frame_annotations, write_frame_annotations,
    write_object_labels, ObjectLabel,
};
pub use atomic::write_atomic;
pub use detections::{load_detections, parse_detections, write_detections};
pub use features_table::{load_feature_table, write_feature_table, FeatureRow};
pub use flo::{decode_flo, encode_flo, load_flow_field, save_flow_field};
pub use raster::{
    decode_pgm_mask, decode_ppm, encode_pgm_mask, encode_ppm, load_class_mask, load_ppm,
    save_class_mask, save_ppm,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates. `x`, `y` may lie outside the image
/// as long as the box still overlaps it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: i64,
    pub y: i64,
    pub w: u32,
    pub h: u32,
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)` already clipped to an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }
}

impl BoundingBox {
    pub fn new(x: i64, y: i64, w: u32, h: u32) -> Result<Self> {
        if w < 1 || h < 1 {
            return Err(Error::Validation(format!(
                "bounding box extents must be >= 1, got {w}x{h}"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn right(&self) -> i64 {
        self.x + self.w as i64
    }

    pub fn bottom(&self) -> i64 {
        self.y + self.h as i64
    }

    /// Intersection with a `width x height` image, `None` when empty.
    pub fn clip(&self, width: usize, height: usize) -> Option<PixelRect> {
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = self.right().min(width as i64);
        let y1 = self.bottom().min(height as i64);
        (x0 < x1 && y0 < y1).then_some(PixelRect {
            x0: x0 as usize,
            y0: y0 as usize,
            x1: x1 as usize,
            y1: y1 as usize,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Vehicle,
    Human,
}

impl ObjectClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectClass::Vehicle => "vehicle",
            ObjectClass::Human => "human",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vehicle" => Some(ObjectClass::Vehicle),
            "human" => Some(ObjectClass::Human),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionRecord {
    pub video_id: String,
    pub frame_index: u32,
    pub object_id: u32,
    pub object_class: ObjectClass,
    pub bbox: BoundingBox,
}

/// Background classes in their fixed index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum BgClass {
    Greenery = 0,
    Road = 1,
    Construction = 2,
    Water = 3,
}

impl BgClass {
    pub const ALL: [BgClass; 4] = [
        BgClass::Greenery,
        BgClass::Road,
        BgClass::Construction,
        BgClass::Water,
    ];

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Per-pixel background labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask {
    pub width: usize,
    pub height: usize,
    labels: Vec<u8>,
}

impl ClassMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Dimension(format!(
                "mask {width}x{height} needs {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 3) {
            return Err(Error::Validation(format!(
                "mask label {bad} outside class range 0..=3"
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, class: BgClass) -> Self {
        Self {
            width,
            height,
            labels: vec![class as u8; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> BgClass {
        BgClass::from_index(self.labels[y * self.width + x]).expect("validated label")
    }

    pub fn set(&mut self, x: usize, y: usize, class: BgClass) {
        self.labels[y * self.width + x] = class as u8;
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

/// Dense displacement field, pixels per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        if u.len() != width * height || v.len() != width * height {
            return Err(Error::Dimension(format!(
                "flow {width}x{height} needs {} values per component, got u={} v={}",
                width * height,
                u.len(),
                v.len()
            )));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Validation("flow contains non-finite values".into()));
        }
        Ok(Self {
            width,
            height,
            u,
            v,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn negated(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            u: self.u.iter().map(|x| -x).collect(),
            v: self.v.iter().map(|x| -x).collect(),
        }
    }
}

/// RGB raster with intensities in `[0, 1]`, interleaved row-major (HWC).
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePatch {
    pub width: usize,
    pub height: usize,
    data: Vec<f64>,
}

impl ImagePatch {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension("image must be at least 1x1".into()));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Dimension(format!(
                "image {width}x{height}x3 needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation(
                "image intensities must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds a patch, clamping every value into `[0, 1]`.
    pub fn from_clamped(width: usize, height: usize, mut data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * 3);
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self::from_clamped(width, height, data)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        for c in 0..3 {
            self.data[i + c] = rgb[c].clamp(0.0, 1.0);
        }
    }

    /// One channel as a row-major plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    /// Luminance `0.299 R + 0.587 G + 0.114 B`.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| luminance(p[0], p[1], p[2]))
            .collect()
    }

    pub fn crop(&self, rect: PixelRect) -> ImagePatch {
        let mut data = Vec::with_capacity(rect.area() * 3);
        for y in rect.y0..rect.y1 {
            let start = (y * self.width + rect.x0) * 3;
            data.extend_from_slice(&self.data[start..start + rect.width() * 3]);
        }
        ImagePatch {
            width: rect.width(),
            height: rect.height(),
            data,
        }
    }
}

pub fn luminance(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Single-channel raster used as optical flow input.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "gray image {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_rgb(img: &ImagePatch) -> Self {
        Self {
            width: img.width,
            height: img.height,
            data: img.luminance(),
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameAnnotation {
    pub frame_index: u32,
    pub anomalous: bool,
}

pub const CONTEXT_DIMS: usize = 4;
pub const TEMPORAL_DIMS: usize = 9;
pub const APPEARANCE_DIMS: usize = 9;
pub const DESCRIPTOR_DIMS: usize = CONTEXT_DIMS + TEMPORAL_DIMS + APPEARANCE_DIMS;

/// Column names of the descriptor, in layout order: contextual histogram
/// (0..4), temporal reconstruction errors and statistics (4..13), appearance
/// errors and statistics (13..22).
pub const DESCRIPTOR_NAMES: [&str; DESCRIPTOR_DIMS] = [
    "ctx_greenery",
    "ctx_road",
    "ctx_construction",
    "ctx_water",
    "tmp_err_r",
    "tmp_err_g",
    "tmp_err_b",
    "tmp_mean",
    "tmp_variance",
    "tmp_kurtosis",
    "tmp_energy",
    "tmp_skewness",
    "tmp_entropy",
    "app_err_r",
    "app_err_g",
    "app_err_b",
    "app_mean",
    "app_variance",
    "app_kurtosis",
    "app_energy",
    "app_skewness",
    "app_entropy",
];

/// The 22-value object descriptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureDescriptor {
    values: [f64; DESCRIPTOR_DIMS],
}

impl FeatureDescriptor {
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let values: [f64; DESCRIPTOR_DIMS] = values.try_into().map_err(|_| {
            Error::Dimension(format!(
                "descriptor needs {DESCRIPTOR_DIMS} values, got {}",
                values.len()
            ))
        })?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("descriptor has non-finite entry".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64; DESCRIPTOR_DIMS] {
        &self.values
    }

    pub fn contextual(&self) -> &[f64] {
        &self.values[..CONTEXT_DIMS]
    }

    pub fn temporal(&self) -> &[f64] {
        &self.values[CONTEXT_DIMS..CONTEXT_DIMS + TEMPORAL_DIMS]
    }

    pub fn appearance(&self) -> &[f64] {
        &self.values[CONTEXT_DIMS + TEMPORAL_DIMS..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_rejects_zero_extent() {
        assert!(matches!(
            BoundingBox::new(10, 20, 0, 40),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn bbox_clip() {
        let b = BoundingBox::new(95, -3, 10, 10).unwrap();
        let r = b.clip(100, 100).unwrap();
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (95, 0, 100, 7));
        assert!(BoundingBox::new(100, 0, 5, 5).unwrap().clip(100, 100).is_none());
    }

    #[test]
    fn mask_rejects_bad_label() {
        assert!(ClassMask::new(2, 1, vec![0, 4]).is_err());
    }

    #[test]
    fn descriptor_layout() {
        let v: Vec<f64> = (0..22).map(|i| i as f64).collect();
        let d = FeatureDescriptor::from_slice(&v).unwrap();
        assert_eq!(d.contextual(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(d.temporal()[0], 4.0);
        assert_eq!(d.appearance()[0], 13.0);
        assert_eq!(d.appearance().len(), 9);
    }
}
