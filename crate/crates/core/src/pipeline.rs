//! Building blocks shared by the stage runner and the experiment harness:
//! flow sourcing, autoencoder training data, feature extraction, training
//! pools and frame scoring.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{ae_init, ae_train, AutoencoderSpec, AutoencoderState, TrainConfig, TrainReport};
use crate::data::{FeatureRow, FlowField, GrayImage, ImagePatch, ObjectLabel};
use crate::dataset::{Dataset, VideoData};
use crate::error::{Error, Result};
use crate::features::{select_columns, Extractor, FeatureSet, FrameContext, DEFAULT_RING_WIDTH};
use crate::flow::{compute_dense_flow, crop_flow_patch, flow_to_rgb, FlowColorConfig, HornSchunckParams};
use crate::inference::{frame_anomaly_score, InferenceModel, ObjectVerdict, ScoredFrame};
use crate::par;
use crate::rng::{self, Rng64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowSource {
    /// Horn–Schunck between consecutive frames.
    Computed,
    /// Flow fields stored with the video (synthetic ground truth or ingested `.flo`).
    Provided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSettings {
    pub source: FlowSource,
    pub smoothness: f64,
    pub iterations: usize,
    pub v_max: f64,
}

impl Default for FlowSettings {
    fn default() -> Self {
        let hs = HornSchunckParams::default();
        Self {
            source: FlowSource::Computed,
            smoothness: hs.smoothness,
            iterations: hs.iterations,
            v_max: 8.0,
        }
    }
}

impl FlowSettings {
    pub fn horn_schunck(&self) -> HornSchunckParams {
        HornSchunckParams {
            smoothness: self.smoothness,
            iterations: self.iterations,
        }
    }

    pub fn color(&self) -> Result<FlowColorConfig> {
        FlowColorConfig::new(self.v_max)
    }

    pub fn validate(&self) -> Result<()> {
        self.color()?;
        if !(self.smoothness > 0.0 && self.smoothness.is_finite()) || self.iterations == 0 {
            return Err(Error::Config("flow smoothness must be > 0 and iterations >= 1".into()));
        }
        Ok(())
    }
}

/// Motion into every frame of `video` (frame 0: motion out of it).
pub fn video_flows(video: &VideoData, settings: &FlowSettings) -> Result<Vec<FlowField>> {
    match settings.source {
        FlowSource::Provided => video.flows.clone().ok_or_else(|| {
            Error::Validation(format!(
                "video `{}` has no stored flow fields; use the computed flow source",
                video.id
            ))
        }),
        FlowSource::Computed => {
            let gray: Vec<GrayImage> = par::map(&video.frames, GrayImage::from_rgb);
            if gray.len() < 2 {
                return Ok(vec![FlowField::zeros(video.width(), video.height()); gray.len()]);
            }
            let hs = settings.horn_schunck();
            par::try_map(&(0..gray.len()).collect::<Vec<_>>(), |&t| {
                if t == 0 {
                    compute_dense_flow(&gray[0], &gray[1], &hs)
                } else {
                    Ok(compute_dense_flow(&gray[t], &gray[t - 1], &hs)?.negated())
                }
            })
        }
    }
}

fn label_map(labels: &[ObjectLabel]) -> HashMap<(&str, u32, u32), bool> {
    labels
        .iter()
        .map(|l| ((l.video_id.as_str(), l.frame_index, l.object_id), l.anomalous))
        .collect()
}

/// Anomaly flag per row; rows without a label count as normal.
pub fn row_labels(rows: &[FeatureRow], labels: &[ObjectLabel]) -> Vec<bool> {
    let map = label_map(labels);
    rows.iter()
        .map(|r| {
            map.get(&(r.video_id.as_str(), r.frame_index, r.object_id))
                .copied()
                .unwrap_or(false)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeSettings {
    pub spec: AutoencoderSpec,
    pub train: TrainConfig,
    /// Normal object patches sampled for training, per autoencoder.
    pub max_patches: usize,
}

impl Default for AeSettings {
    fn default() -> Self {
        Self {
            spec: AutoencoderSpec::default(),
            train: TrainConfig::default(),
            max_patches: 512,
        }
    }
}

/// (appearance, temporal) crops of normal training objects.
pub fn training_patches(
    videos: &[VideoData],
    flows: &[Vec<FlowField>],
    color: &FlowColorConfig,
    max_patches: usize,
    seed: u64,
) -> Result<(Vec<ImagePatch>, Vec<ImagePatch>)> {
    let mut candidates = Vec::new();
    for (vi, v) in videos.iter().enumerate() {
        let map = label_map(&v.object_labels);
        for (di, d) in v.detections.iter().enumerate() {
            let anomalous = map
                .get(&(d.video_id.as_str(), d.frame_index, d.object_id))
                .copied()
                .unwrap_or(false);
            if !anomalous {
                candidates.push((vi, di));
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::Validation("no normal objects available for autoencoder training".into()));
    }
    if candidates.len() > max_patches {
        let mut idx = Rng64::new(rng::mix(seed, 0x9A7C)).sample_indices(candidates.len(), max_patches);
        idx.sort_unstable();
        candidates = idx.into_iter().map(|i| candidates[i]).collect();
    }
    let pairs = par::try_map(&candidates, |&(vi, di)| -> Result<(ImagePatch, ImagePatch)> {
        let v = &videos[vi];
        let d = &v.detections[di];
        let frame = &v.frames[d.frame_index as usize];
        let rect = d.bbox.clip(frame.width, frame.height).ok_or_else(|| {
            Error::Validation(format!("detection {} of `{}` lies outside the frame", d.object_id, v.id))
        })?;
        let flow = crop_flow_patch(&flows[vi][d.frame_index as usize], &d.bbox)?;
        Ok((frame.crop(rect), flow_to_rgb(&flow, color)))
    })?;
    Ok(pairs.into_iter().unzip())
}

#[derive(Debug, Clone)]
pub struct TrainedAutoencoders {
    pub appearance: AutoencoderState,
    pub temporal: AutoencoderState,
    pub reports: [TrainReport; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AeRole {
    Appearance,
    Temporal,
}

impl AeRole {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "appearance" => Ok(AeRole::Appearance),
            "temporal" => Ok(AeRole::Temporal),
            other => Err(Error::Config(format!(
                "unknown autoencoder role `{other}` (expected appearance or temporal)"
            ))),
        }
    }

    fn seed_tag(self) -> u64 {
        match self {
            AeRole::Appearance => 0xA0,
            AeRole::Temporal => 0xB0,
        }
    }
}

fn train_on(patches: &[ImagePatch], role: AeRole, settings: &AeSettings, seed: u64) -> Result<(AutoencoderState, TrainReport)> {
    let tag = role.seed_tag();
    let init = ae_init(&settings.spec, rng::mix(seed, tag))?;
    let cfg = TrainConfig {
        seed: rng::mix(seed, tag + 1),
        ..settings.train.clone()
    };
    ae_train(&init, patches, &cfg)
}

/// Trains one autoencoder. Gives the same weights as the matching half of
/// [`train_autoencoders`].
pub fn train_autoencoder(
    role: AeRole,
    videos: &[VideoData],
    flows: &[Vec<FlowField>],
    settings: &AeSettings,
    color: &FlowColorConfig,
    seed: u64,
) -> Result<(AutoencoderState, TrainReport)> {
    let (app, tmp) = training_patches(videos, flows, color, settings.max_patches, seed)?;
    let patches = match role {
        AeRole::Appearance => app,
        AeRole::Temporal => tmp,
    };
    train_on(&patches, role, settings, seed)
}

pub fn train_autoencoders(
    videos: &[VideoData],
    flows: &[Vec<FlowField>],
    settings: &AeSettings,
    color: &FlowColorConfig,
    seed: u64,
) -> Result<TrainedAutoencoders> {
    let (app, tmp) = training_patches(videos, flows, color, settings.max_patches, seed)?;
    let (appearance, ra) = train_on(&app, AeRole::Appearance, settings, seed)?;
    let (temporal, rt) = train_on(&tmp, AeRole::Temporal, settings, seed)?;
    Ok(TrainedAutoencoders {
        appearance,
        temporal,
        reports: [ra, rt],
    })
}

pub fn extract_video(video: &VideoData, flows: &[FlowField], extractor: &Extractor) -> Result<Vec<FeatureRow>> {
    if flows.len() != video.frames.len() {
        return Err(Error::Validation(format!(
            "video `{}`: {} flow fields for {} frames",
            video.id,
            flows.len(),
            video.frames.len()
        )));
    }
    par::try_map(&video.detections, |d| {
        let t = d.frame_index as usize;
        let ctx = FrameContext {
            frame: &video.frames[t],
            mask: &video.mask,
            flow: &flows[t],
        };
        Ok(FeatureRow {
            video_id: video.id.clone(),
            frame_index: d.frame_index,
            object_id: d.object_id,
            descriptor: extractor.extract(d, &ctx)?,
        })
    })
}

/// Subsample of `n` items (all of them when `n >= len`), in original order.
pub fn subsample<T: Clone>(items: &[T], n: usize, seed: u64) -> Vec<T> {
    if n >= items.len() {
        return items.to_vec();
    }
    let mut idx = Rng64::new(seed).sample_indices(items.len(), n);
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPools {
    pub normal: Vec<Vec<f64>>,
    pub anomalous: Vec<Vec<f64>>,
}

/// Up to `max_normal` normal samples (M) and exactly `n_anomalous` anomalous
/// samples (N), drawn at random.
pub fn training_pools(
    rows: &[FeatureRow],
    anomalous: &[bool],
    columns: &[usize],
    max_normal: usize,
    n_anomalous: usize,
    seed: u64,
) -> Result<TrainingPools> {
    let pick = |flag: bool| -> Vec<Vec<f64>> {
        rows.iter()
            .zip(anomalous)
            .filter(|(_, &a)| a == flag)
            .map(|(r, _)| select_columns(&r.descriptor, columns))
            .collect()
    };
    let normal = pick(false);
    let abnormal = pick(true);
    if abnormal.len() < n_anomalous {
        return Err(Error::Validation(format!(
            "{n_anomalous} anomalous samples requested, {} available",
            abnormal.len()
        )));
    }
    Ok(TrainingPools {
        normal: subsample(&normal, max_normal, rng::mix(seed, 0x4D)),
        anomalous: subsample(&abnormal, n_anomalous, rng::mix(seed, 0x4E)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoScores {
    pub video_id: String,
    pub frames: Vec<ScoredFrame>,
}

/// Frame scores per video. Videos missing from `frame_counts` span up to
/// their last detected frame.
pub fn score_rows(
    model: &InferenceModel,
    columns: &[usize],
    rows: &[FeatureRow],
    frame_counts: &BTreeMap<String, usize>,
) -> Result<Vec<VideoScores>> {
    let verdicts = par::try_map(rows, |r| model.verdict(&select_columns(&r.descriptor, columns)))?;
    Ok(aggregate_frames(rows, &verdicts, frame_counts))
}

/// Groups object verdicts (aligned with `rows`) into per-video frame scores.
pub fn aggregate_frames(
    rows: &[FeatureRow],
    verdicts: &[ObjectVerdict],
    frame_counts: &BTreeMap<String, usize>,
) -> Vec<VideoScores> {
    let mut grouped: BTreeMap<&str, BTreeMap<u32, Vec<ObjectVerdict>>> = BTreeMap::new();
    for v in frame_counts.keys() {
        grouped.entry(v.as_str()).or_default();
    }
    for (r, v) in rows.iter().zip(verdicts) {
        grouped
            .entry(r.video_id.as_str())
            .or_default()
            .entry(r.frame_index)
            .or_default()
            .push(*v);
    }
    grouped
        .into_iter()
        .map(|(video, frames)| {
            let count = frame_counts
                .get(video)
                .copied()
                .unwrap_or_else(|| frames.keys().next_back().map_or(0, |&f| f as usize + 1));
            let scored = (0..count as u32)
                .map(|f| frame_anomaly_score(f, frames.get(&f).map_or(&[][..], |v| v.as_slice())))
                .collect();
            VideoScores {
                video_id: video.to_string(),
                frames: scored,
            }
        })
        .collect()
}

pub fn write_scores(mut w: impl Write, frames: &[ScoredFrame]) -> std::io::Result<()> {
    writeln!(w, "frame,score,verdict")?;
    for f in frames {
        let verdict = if f.alarm { "anomalous" } else { "normal" };
        writeln!(w, "{},{:.6},{verdict}", f.frame_index, f.score)?;
    }
    Ok(())
}

/// Reads `frame,score,verdict`; returns (frame, score, alarm).
pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<ScoredFrame>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
    if header.iter().collect::<Vec<_>>() != ["frame", "score", "verdict"] {
        return Err(Error::Format(format!(
            "{}: expected header `frame,score,verdict`",
            path.display()
        )));
    }
    let mut out: Vec<ScoredFrame> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let bad = |m: &str| Error::Parse { line, msg: m.to_string() };
        let frame_index: u32 = rec[0].trim().parse().map_err(|_| bad("frame is not an integer"))?;
        let score: f64 = rec[1].trim().parse().map_err(|_| bad("score is not a number"))?;
        let alarm = match rec[2].trim() {
            "normal" => false,
            "anomalous" => true,
            other => return Err(bad(&format!("unknown verdict `{other}`"))),
        };
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Validation(format!("line {line}: score {score} outside [0,1]")));
        }
        if out.last().is_some_and(|p| p.frame_index >= frame_index) {
            return Err(Error::Validation(format!("line {line}: frames must be strictly increasing")));
        }
        out.push(ScoredFrame {
            frame_index,
            score,
            alarm,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSettings {
    /// Normal training samples (M).
    pub max_normal: usize,
    /// Anomalous training samples (N).
    pub n_anomalous: usize,
    pub feature_set: FeatureSet,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        Self {
            max_normal: 300,
            n_anomalous: 60,
            feature_set: FeatureSet::Full,
        }
    }
}

/// Features and labels of one split, ready for inference.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub rows: Vec<FeatureRow>,
    pub anomalous: Vec<bool>,
    pub frame_counts: BTreeMap<String, usize>,
    pub frame_labels: BTreeMap<String, Vec<bool>>,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: PreparedSplit,
    pub test: PreparedSplit,
    pub autoencoders: TrainedAutoencoders,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSettings {
    pub ring_width: usize,
}

impl Default for ExtractSettings {
    fn default() -> Self {
        Self {
            ring_width: DEFAULT_RING_WIDTH,
        }
    }
}

pub fn extract_split(
    videos: &[VideoData],
    flows: &[Vec<FlowField>],
    extractor: &Extractor,
) -> Result<PreparedSplit> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (v, f) in videos.iter().zip(flows) {
        let r = extract_video(v, f, extractor)?;
        labels.extend(row_labels(&r, &v.object_labels));
        rows.extend(r);
    }
    Ok(PreparedSplit {
        rows,
        anomalous: labels,
        frame_counts: videos.iter().map(|v| (v.id.clone(), v.frames.len())).collect(),
        frame_labels: videos.iter().map(|v| (v.id.clone(), v.frame_labels())).collect(),
    })
}

pub fn split_flows(videos: &[VideoData], flow: &FlowSettings) -> Result<Vec<Vec<FlowField>>> {
    videos.iter().map(|v| video_flows(v, flow)).collect()
}

/// Describes every object of `videos` with frozen autoencoders.
pub fn describe_split(
    videos: &[VideoData],
    flow: &FlowSettings,
    appearance: &AutoencoderState,
    temporal: &AutoencoderState,
    extract: &ExtractSettings,
) -> Result<PreparedSplit> {
    flow.validate()?;
    let flows = split_flows(videos, flow)?;
    let extractor = Extractor {
        appearance,
        temporal,
        flow_color: flow.color()?,
        ring_width: extract.ring_width,
    };
    extract_split(videos, &flows, &extractor)
}

/// Trains both autoencoders on the training split and describes every
/// object of both splits.
pub fn prepare(
    dataset: &Dataset,
    flow: &FlowSettings,
    ae: &AeSettings,
    extract: &ExtractSettings,
    seed: u64,
) -> Result<Prepared> {
    flow.validate()?;
    let color = flow.color()?;
    let train_flows = split_flows(&dataset.train, flow)?;
    let autoencoders = train_autoencoders(&dataset.train, &train_flows, ae, &color, seed)?;
    let extractor = Extractor {
        appearance: &autoencoders.appearance,
        temporal: &autoencoders.temporal,
        flow_color: color,
        ring_width: extract.ring_width,
    };
    let train = extract_split(&dataset.train, &train_flows, &extractor)?;
    let test = describe_split(&dataset.test, flow, &autoencoders.appearance, &autoencoders.temporal, extract)?;
    Ok(Prepared {
        train,
        test,
        autoencoders,
    })
}
