//! Object descriptor: contextual histogram, temporal and appearance
//! reconstruction features.

use crate::autoencoder::{reconstruction_errors, AutoencoderState};
use crate::data::{
    BoundingBox, ClassMask, DetectionRecord, FeatureDescriptor, FlowField, ImagePatch,
    APPEARANCE_DIMS, CONTEXT_DIMS, DESCRIPTOR_DIMS, TEMPORAL_DIMS,
};
use crate::error::{Error, Result};
use crate::flow::{crop_flow_patch, flow_to_rgb, FlowColorConfig};
use serde::{Deserialize, Serialize};

/// Distribution statistics of one intensity channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstOrderStats {
    pub mean: f64,
    pub variance: f64,
    /// Non-excess kurtosis; 0 when the variance is 0.
    pub kurtosis: f64,
    /// Mean of squared intensities.
    pub energy: f64,
    /// 0 when the variance is 0.
    pub skewness: f64,
    /// Shannon entropy in bits of the 256-bin histogram.
    pub entropy: f64,
}

impl FirstOrderStats {
    /// `[S1..S6]` = mean, variance, kurtosis, energy, skewness, entropy.
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.mean,
            self.variance,
            self.kurtosis,
            self.energy,
            self.skewness,
            self.entropy,
        ]
    }
}

pub const HISTOGRAM_BINS: usize = 256;

pub fn histogram_bin(x: f64) -> usize {
    ((x.clamp(0.0, 1.0) * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

pub fn first_order_stats(values: &[f64]) -> Result<FirstOrderStats> {
    if values.is_empty() {
        return Err(Error::Validation("statistics of an empty patch".into()));
    }
    let n = values.len() as f64;
    let energy = values.iter().map(|x| x * x).sum::<f64>() / n;

    let mut hist = [0usize; HISTOGRAM_BINS];
    for &x in values {
        hist[histogram_bin(x)] += 1;
    }
    let entropy = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>();

    let first = values[0];
    if values.iter().all(|&x| x == first) {
        return Ok(FirstOrderStats {
            mean: first,
            variance: 0.0,
            kurtosis: 0.0,
            energy,
            skewness: 0.0,
            entropy,
        });
    }
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in values {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    Ok(FirstOrderStats {
        mean,
        variance: m2,
        kurtosis: m4 / (m2 * m2),
        energy,
        skewness: m3 / m2.powf(1.5),
        entropy,
    })
}

/// Statistics of the reconstruction's luminance.
pub fn stats_of_reconstruction(reconstruction: &ImagePatch) -> FirstOrderStats {
    first_order_stats(&reconstruction.luminance()).expect("patches are non-empty")
}

pub const DEFAULT_RING_WIDTH: usize = 4;

/// Pixels within `width` (Chebyshev) of the box border, inside and outside,
/// clipped to the image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextRegion {
    pub pixels: Vec<(usize, usize)>,
}

pub fn contextual_region(
    bbox: &BoundingBox,
    width: usize,
    image_width: usize,
    image_height: usize,
) -> Result<ContextRegion> {
    if bbox.clip(image_width, image_height).is_none() {
        return Err(Error::Validation(format!(
            "box {bbox:?} does not intersect the {image_width}x{image_height} image"
        )));
    }
    let r = width as i64;
    let outer = BoundingBox {
        x: bbox.x - r,
        y: bbox.y - r,
        w: bbox.w + 2 * width as u32,
        h: bbox.h + 2 * width as u32,
    }
    .clip(image_width, image_height)
    .expect("dilation of an intersecting box intersects");
    // inner core that lies farther than `width` from the border
    let (ix0, iy0) = (bbox.x + r, bbox.y + r);
    let (ix1, iy1) = (bbox.right() - r, bbox.bottom() - r);
    let inside_core = |x: usize, y: usize| {
        let (x, y) = (x as i64, y as i64);
        x >= ix0 && x < ix1 && y >= iy0 && y < iy1
    };
    let mut pixels = Vec::with_capacity(outer.area());
    for y in outer.y0..outer.y1 {
        for x in outer.x0..outer.x1 {
            if !inside_core(x, y) {
                pixels.push((x, y));
            }
        }
    }
    Ok(ContextRegion { pixels })
}

/// Normalized class counts `(greenery, road, construction, water)`.
pub fn contextual_histogram(region: &ContextRegion, mask: &ClassMask) -> Result<[f64; CONTEXT_DIMS]> {
    if region.pixels.is_empty() {
        return Err(Error::Validation("empty context region".into()));
    }
    let mut counts = [0usize; CONTEXT_DIMS];
    for &(x, y) in &region.pixels {
        if x >= mask.width || y >= mask.height {
            return Err(Error::Dimension(format!(
                "context pixel ({x}, {y}) outside {}x{} mask",
                mask.width, mask.height
            )));
        }
        counts[mask.get(x, y).index()] += 1;
    }
    let n = region.pixels.len() as f64;
    Ok(counts.map(|c| c as f64 / n))
}

pub fn assemble_descriptor(contextual: &[f64], temporal: &[f64], appearance: &[f64]) -> Result<FeatureDescriptor> {
    if contextual.len() != CONTEXT_DIMS
        || temporal.len() != TEMPORAL_DIMS
        || appearance.len() != APPEARANCE_DIMS
    {
        return Err(Error::Dimension(format!(
            "descriptor parts must be {CONTEXT_DIMS}/{TEMPORAL_DIMS}/{APPEARANCE_DIMS} long, got {}/{}/{}",
            contextual.len(),
            temporal.len(),
            appearance.len()
        )));
    }
    let all: Vec<f64> = contextual
        .iter()
        .chain(temporal)
        .chain(appearance)
        .copied()
        .collect();
    FeatureDescriptor::from_slice(&all)
}

/// Reconstruction errors followed by the six statistics of the reconstruction.
pub fn reconstruction_features(ae: &AutoencoderState, patch: &ImagePatch) -> Result<[f64; 9]> {
    let rec = reconstruction_errors(ae, patch)?;
    let stats = stats_of_reconstruction(&rec.reconstruction).to_array();
    let mut out = [0.0; 9];
    out[..3].copy_from_slice(&rec.errors);
    out[3..].copy_from_slice(&stats);
    Ok(out)
}

/// Frozen models and settings needed to describe objects.
#[derive(Debug, Clone)]
pub struct Extractor<'a> {
    pub appearance: &'a AutoencoderState,
    pub temporal: &'a AutoencoderState,
    pub flow_color: FlowColorConfig,
    pub ring_width: usize,
}

/// Everything known about the frame an object was detected in. `flow` is the
/// motion into this frame, on this frame's pixel grid.
#[derive(Debug, Clone, Copy)]
pub struct FrameContext<'a> {
    pub frame: &'a ImagePatch,
    pub mask: &'a ClassMask,
    pub flow: &'a FlowField,
}

impl Extractor<'_> {
    pub fn temporal_features(&self, det: &DetectionRecord, flow: &FlowField) -> Result<[f64; 9]> {
        let patch = flow_to_rgb(&crop_flow_patch(flow, &det.bbox)?, &self.flow_color);
        reconstruction_features(self.temporal, &patch)
    }

    pub fn appearance_features(&self, det: &DetectionRecord, frame: &ImagePatch) -> Result<[f64; 9]> {
        let rect = det.bbox.clip(frame.width, frame.height).ok_or_else(|| {
            Error::Validation(format!(
                "detection {} in frame {} lies outside the image",
                det.object_id, det.frame_index
            ))
        })?;
        reconstruction_features(self.appearance, &frame.crop(rect))
    }

    pub fn contextual_features(&self, det: &DetectionRecord, mask: &ClassMask) -> Result<[f64; 4]> {
        let region = contextual_region(&det.bbox, self.ring_width, mask.width, mask.height)?;
        contextual_histogram(&region, mask)
    }

    pub fn extract(&self, det: &DetectionRecord, ctx: &FrameContext) -> Result<FeatureDescriptor> {
        if (ctx.frame.width, ctx.frame.height) != (ctx.mask.width, ctx.mask.height)
            || (ctx.frame.width, ctx.frame.height) != (ctx.flow.width, ctx.flow.height)
        {
            return Err(Error::Dimension(
                "frame, mask and flow dimensions differ".into(),
            ));
        }
        let fc = self.contextual_features(det, ctx.mask)?;
        let ft = self.temporal_features(det, ctx.flow)?;
        let fa = self.appearance_features(det, ctx.frame)?;
        assemble_descriptor(&fc, &ft, &fa)
    }
}

/// Descriptor columns fed to inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSet {
    Full,
    NoContext,
    ContextualOnly,
    TemporalOnly,
    AppearanceOnly,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 5] = [
        FeatureSet::Full,
        FeatureSet::NoContext,
        FeatureSet::ContextualOnly,
        FeatureSet::TemporalOnly,
        FeatureSet::AppearanceOnly,
    ];

    pub fn columns(self) -> Vec<usize> {
        let ctx = 0..CONTEXT_DIMS;
        let tmp = CONTEXT_DIMS..CONTEXT_DIMS + TEMPORAL_DIMS;
        let app = CONTEXT_DIMS + TEMPORAL_DIMS..DESCRIPTOR_DIMS;
        match self {
            FeatureSet::Full => (0..DESCRIPTOR_DIMS).collect(),
            FeatureSet::NoContext => tmp.chain(app).collect(),
            FeatureSet::ContextualOnly => ctx.collect(),
            FeatureSet::TemporalOnly => tmp.collect(),
            FeatureSet::AppearanceOnly => app.collect(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSet::Full => "full",
            FeatureSet::NoContext => "no-context",
            FeatureSet::ContextualOnly => "contextual-only",
            FeatureSet::TemporalOnly => "temporal-only",
            FeatureSet::AppearanceOnly => "appearance-only",
        }
    }
}

/// Picks `columns` out of a descriptor.
pub fn select_columns(d: &FeatureDescriptor, columns: &[usize]) -> Vec<f64> {
    columns.iter().map(|&c| d.values()[c]).collect()
}
