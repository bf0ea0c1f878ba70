//! Video directories on disk.
//!
//! ```text
//! <video>/manifest.json
//! <video>/frames/000000.ppm ...
//! <video>/mask.pgm
//! <video>/flow/000000.flo ...        (optional)
//! <video>/detections.jsonl
//! <video>/annotations.csv            (optional)
//! <video>/object_labels.csv          (optional)
//! ```
//!
//! A dataset root holds `train/` and `test/`, each a set of video
//! directories.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    load_class_mask, load_detections, load_flow_field, load_frame_annotations, load_object_labels,
    load_ppm, save_class_mask, save_flow_field, save_ppm, write_atomic, write_detections,
    write_frame_annotations, write_object_labels, ClassMask, DetectionRecord, FlowField,
    FrameAnnotation, ImagePatch, ObjectLabel,
};
use crate::error::{Error, Result};
use crate::synth::AnomalySpec;

pub const TRAIN_DIR: &str = "train";
pub const TEST_DIR: &str = "test";

#[derive(Debug, Clone, PartialEq)]
pub struct VideoData {
    pub id: String,
    pub frames: Vec<ImagePatch>,
    pub mask: ClassMask,
    /// Motion into each frame, when available.
    pub flows: Option<Vec<FlowField>>,
    pub detections: Vec<DetectionRecord>,
    pub annotations: Vec<FrameAnnotation>,
    pub object_labels: Vec<ObjectLabel>,
    pub anomalies: Vec<AnomalySpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VideoManifest {
    video: String,
    width: usize,
    height: usize,
    frames: usize,
    #[serde(default)]
    anomalies: Vec<AnomalySpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<VideoData>,
    pub test: Vec<VideoData>,
}

fn frame_name(i: usize, ext: &str) -> String {
    format!("{i:06}.{ext}")
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

impl VideoData {
    pub fn width(&self) -> usize {
        self.mask.width
    }

    pub fn height(&self) -> usize {
        self.mask.height
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Validation(format!("video `{}` has no frames", self.id)));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if (f.width, f.height) != (self.width(), self.height()) {
                return Err(Error::Validation(format!(
                    "video `{}` frame {i} is {}x{}, mask is {}x{}",
                    self.id,
                    f.width,
                    f.height,
                    self.width(),
                    self.height()
                )));
            }
        }
        if let Some(flows) = &self.flows {
            if flows.len() != self.frames.len() {
                return Err(Error::Validation(format!(
                    "video `{}` has {} flow fields for {} frames",
                    self.id,
                    flows.len(),
                    self.frames.len()
                )));
            }
            if flows.iter().any(|f| (f.width, f.height) != (self.width(), self.height())) {
                return Err(Error::Validation(format!("video `{}` flow size differs from frames", self.id)));
            }
        }
        if let Some(d) = self.detections.iter().find(|d| d.frame_index as usize >= self.frames.len()) {
            return Err(Error::Validation(format!(
                "video `{}` has a detection on frame {} beyond the last frame",
                self.id, d.frame_index
            )));
        }
        Ok(())
    }

    /// Frame label lookup; frames without an annotation count as normal.
    pub fn frame_labels(&self) -> Vec<bool> {
        let mut labels = vec![false; self.frames.len()];
        for a in &self.annotations {
            if let Some(l) = labels.get_mut(a.frame_index as usize) {
                *l = a.anomalous;
            }
        }
        labels
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let dir = dir.as_ref();
        let manifest = VideoManifest {
            video: self.id.clone(),
            width: self.width(),
            height: self.height(),
            frames: self.frames.len(),
            anomalies: self.anomalies.clone(),
        };
        crate::par::try_map(&self.frames.iter().enumerate().collect::<Vec<_>>(), |(i, f)| {
            save_ppm(dir.join("frames").join(frame_name(*i, "ppm")), f)
        })?;
        if let Some(flows) = &self.flows {
            crate::par::try_map(&flows.iter().enumerate().collect::<Vec<_>>(), |(i, f)| {
                save_flow_field(dir.join("flow").join(frame_name(*i, "flo")), f)
            })?;
        }
        save_class_mask(dir.join("mask.pgm"), &self.mask)?;
        write_atomic(
            dir.join("detections.jsonl"),
            &csv_bytes(|b| write_detections(b, &self.detections)),
        )?;
        write_atomic(
            dir.join("annotations.csv"),
            &csv_bytes(|b| write_frame_annotations(b, &self.annotations)),
        )?;
        write_atomic(
            dir.join("object_labels.csv"),
            &csv_bytes(|b| write_object_labels(b, &self.object_labels)),
        )?;
        let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        json.push(b'\n');
        write_atomic(dir.join("manifest.json"), &json)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mpath = dir.join("manifest.json");
        let text = std::fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: VideoManifest = serde_json::from_slice(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", mpath.display())))?;
        let frames = crate::par::try_map(&(0..manifest.frames).collect::<Vec<_>>(), |&i| {
            load_ppm(dir.join("frames").join(frame_name(i, "ppm")))
        })?;
        let flow_dir = dir.join("flow");
        let flows = if flow_dir.is_dir() {
            Some(crate::par::try_map(&(0..manifest.frames).collect::<Vec<_>>(), |&i| {
                load_flow_field(flow_dir.join(frame_name(i, "flo")))
            })?)
        } else {
            None
        };
        let optional = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        let video = VideoData {
            id: manifest.video.clone(),
            frames,
            mask: load_class_mask(dir.join("mask.pgm"))?,
            flows,
            detections: load_detections(dir.join("detections.jsonl"))?,
            annotations: optional("annotations.csv")
                .map(load_frame_annotations)
                .transpose()?
                .unwrap_or_default(),
            object_labels: optional("object_labels.csv")
                .map(load_object_labels)
                .transpose()?
                .unwrap_or_default(),
            anomalies: manifest.anomalies,
        };
        if (video.width(), video.height()) != (manifest.width, manifest.height) {
            return Err(Error::Validation(format!(
                "video `{}`: mask is {}x{}, manifest says {}x{}",
                video.id,
                video.width(),
                video.height(),
                manifest.width,
                manifest.height
            )));
        }
        if let Some(d) = video.detections.iter().find(|d| d.video_id != video.id) {
            return Err(Error::Validation(format!(
                "detections in `{}` belong to video `{}`",
                dir.display(),
                d.video_id
            )));
        }
        video.validate()?;
        Ok(video)
    }
}

/// Video directories directly under `dir`, sorted by name.
pub fn video_dirs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.join("manifest.json").is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_split(dir: impl AsRef<Path>) -> Result<Vec<VideoData>> {
    video_dirs(dir)?.iter().map(VideoData::load).collect()
}

impl Dataset {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        Ok(Self {
            train: load_split(root.join(TRAIN_DIR))?,
            test: load_split(root.join(TEST_DIR))?,
        })
    }

    pub fn save(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        for (split, videos) in [(TRAIN_DIR, &self.train), (TEST_DIR, &self.test)] {
            for v in videos {
                v.save(root.join(split).join(&v.id))?;
            }
        }
        Ok(())
    }
}
