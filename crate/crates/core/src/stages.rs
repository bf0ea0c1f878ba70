//! Declarative pipeline configuration and the stage runner.
//!
//! Artifacts live under the configured work directory:
//!
//! ```text
//! <dataset>/train/<video>/...        synth
//! <dataset>/test/<video>/...
//! <work>/ae/                         train-ae      (appearance + temporal bundle)
//! <work>/features/<split>.csv        extract
//! <work>/features/<split>_labels.csv
//! <work>/features/<split>_frames.csv
//! <work>/model/                      train-infer   (inference bundle)
//! <work>/scores/<video>.csv          score
//! <work>/evaluation/                 evaluate      (report.json, roc.csv, roc.svg)
//! <work>/grid/report.csv             gridsearch
//! <work>/experiments/<name>/         experiment
//! <work>/run_manifest.json
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::bundle::{sha256_hex, ModelBundle, BUNDLE_VERSION, MANIFEST_FILE};
use crate::data::{
    load_feature_table, load_object_labels, write_atomic, write_feature_table, write_object_labels,
    FeatureRow, ObjectLabel,
};
use crate::dataset::{load_split, Dataset, VideoData, TEST_DIR, TRAIN_DIR};
use crate::error::{Error, Result};
use crate::eval::experiment::{run_experiment, ExperimentConfig, ExperimentName};
use crate::eval::roc::{frame_scores_and_labels, roc_auc};
use crate::eval::svg::{Chart, Mark, Series};
use crate::eval::{grid_search, GridConfig};
use crate::inference::{ensemble_fit, InferenceConfig, InferenceModel};
use crate::pipeline::{
    describe_split, load_scores, prepare, row_labels, score_rows, split_flows, train_autoencoders, training_pools,
    write_scores, AeSettings, ExtractSettings, FlowSettings, Prepared, PreparedSplit, TrainingSettings, VideoScores,
};
use crate::synth::presets::{benchmark, BenchmarkParams, Preset};
use crate::synth::synthesize;

pub const RUN_MANIFEST: &str = "run_manifest.json";
const SYNTH_MARKER: &str = "synth.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: PathBuf,
    pub work: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            dataset: "data".into(),
            work: "work".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub preset: Preset,
    pub params: BenchmarkParams,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            preset: Preset::Demo,
            params: BenchmarkParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub synth: SynthSettings,
    pub flow: FlowSettings,
    pub autoencoder: AeSettings,
    pub features: ExtractSettings,
    pub inference: InferenceConfig,
    pub training: TrainingSettings,
    pub grid: GridConfig,
    pub experiments: ExperimentConfig,
    /// Directory relative paths resolve against; the config file's directory.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths.dataset.as_os_str().is_empty() || self.paths.work.as_os_str().is_empty() {
            return Err(Error::Config("paths.dataset and paths.work must be set".into()));
        }
        if self.synth.params.frames < 2 || self.synth.params.train_videos == 0 || self.synth.params.test_videos == 0 {
            return Err(Error::Config("synth needs >= 2 frames and >= 1 train and test video".into()));
        }
        self.flow.validate()?;
        self.autoencoder.spec.validate()?;
        self.autoencoder.train.validate()?;
        if self.autoencoder.max_patches == 0 {
            return Err(Error::Config("autoencoder.max_patches must be >= 1".into()));
        }
        if self.features.ring_width == 0 {
            return Err(Error::Config("features.ring_width must be >= 1".into()));
        }
        self.inference.validate()?;
        if self.training.max_normal < self.inference.k1 {
            return Err(Error::Config("training.max_normal must be >= inference.k1".into()));
        }
        self.grid.validate()?;
        if self.experiments.seeds.is_empty() {
            return Err(Error::Config("experiments.seeds must not be empty".into()));
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.resolve(&self.paths.dataset)
    }

    pub fn work_dir(&self) -> PathBuf {
        self.resolve(&self.paths.work)
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.dataset_dir(), self.work_dir())
    }

    /// Canonical JSON echo of the configuration as written.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(&self.echo()).expect("config serializes"))
    }
}

/// Artifact paths of one pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub dataset: PathBuf,
    pub work: PathBuf,
}

impl Layout {
    pub fn new(dataset: impl Into<PathBuf>, work: impl Into<PathBuf>) -> Self {
        Self {
            dataset: dataset.into(),
            work: work.into(),
        }
    }

    pub fn split(&self, split: &str) -> PathBuf {
        self.dataset.join(split)
    }

    pub fn ae_bundle(&self) -> PathBuf {
        self.work.join("ae")
    }

    pub fn features_dir(&self) -> PathBuf {
        self.work.join("features")
    }

    pub fn split_files(&self, split: &str) -> SplitFiles {
        SplitFiles::beside(self.features_dir().join(format!("{split}.csv")))
    }

    pub fn features(&self, split: &str) -> PathBuf {
        self.split_files(split).features
    }

    pub fn object_labels(&self, split: &str) -> PathBuf {
        self.split_files(split).labels
    }

    pub fn frame_table(&self, split: &str) -> PathBuf {
        self.split_files(split).frames
    }

    pub fn model_bundle(&self) -> PathBuf {
        self.work.join("model")
    }

    pub fn scores_dir(&self) -> PathBuf {
        self.work.join("scores")
    }

    pub fn evaluation_dir(&self) -> PathBuf {
        self.work.join("evaluation")
    }

    pub fn grid_report(&self) -> PathBuf {
        self.work.join("grid").join("report.csv")
    }

    pub fn experiment_dir(&self, name: ExperimentName) -> PathBuf {
        self.work.join("experiments").join(name.as_str())
    }

    pub fn run_manifest(&self) -> PathBuf {
        self.work.join(RUN_MANIFEST)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Synth,
    TrainAe,
    Extract,
    TrainInfer,
    Score,
    Evaluate,
    Gridsearch,
    Experiment,
}

impl Stage {
    /// Every stage in dependency order.
    pub const ALL: [Stage; 8] = [
        Stage::Synth,
        Stage::TrainAe,
        Stage::Extract,
        Stage::TrainInfer,
        Stage::Score,
        Stage::Evaluate,
        Stage::Gridsearch,
        Stage::Experiment,
    ];

    /// Stages of a plain `run`: synthesis through evaluation.
    pub const DEFAULT: [Stage; 6] = [
        Stage::Synth,
        Stage::TrainAe,
        Stage::Extract,
        Stage::TrainInfer,
        Stage::Score,
        Stage::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::TrainAe => "train-ae",
            Stage::Extract => "extract",
            Stage::TrainInfer => "train-infer",
            Stage::Score => "score",
            Stage::Evaluate => "evaluate",
            Stage::Gridsearch => "gridsearch",
            Stage::Experiment => "experiment",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }

    /// Stages whose artifacts this one reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Synth | Stage::Experiment => &[],
            Stage::TrainAe => &[Stage::Synth],
            Stage::Extract => &[Stage::Synth, Stage::TrainAe],
            Stage::TrainInfer => &[Stage::Extract],
            Stage::Score => &[Stage::Extract, Stage::TrainInfer],
            Stage::Evaluate => &[Stage::Extract, Stage::Score],
            Stage::Gridsearch => &[Stage::Extract],
        }
    }

    /// Paths this stage requires before it starts.
    pub fn inputs(self, layout: &Layout) -> Vec<PathBuf> {
        match self {
            Stage::Synth | Stage::Experiment => vec![],
            Stage::TrainAe => vec![layout.split(TRAIN_DIR)],
            Stage::Extract => vec![
                layout.split(TRAIN_DIR),
                layout.split(TEST_DIR),
                layout.ae_bundle().join(MANIFEST_FILE),
            ],
            Stage::TrainInfer => vec![layout.features(TRAIN_DIR), layout.object_labels(TRAIN_DIR)],
            Stage::Score => vec![
                layout.model_bundle().join(MANIFEST_FILE),
                layout.features(TEST_DIR),
                layout.frame_table(TEST_DIR),
            ],
            Stage::Evaluate => vec![layout.scores_dir(), layout.frame_table(TEST_DIR)],
            Stage::Gridsearch => [TRAIN_DIR, TEST_DIR]
                .iter()
                .flat_map(|s| [layout.features(s), layout.object_labels(s), layout.frame_table(s)])
                .collect(),
        }
    }

    pub fn check_inputs(self, layout: &Layout) -> Result<()> {
        match self.inputs(layout).into_iter().find(|p| !p.exists()) {
            Some(path) => Err(Error::MissingArtifact {
                stage: self.as_str().into(),
                path,
            }),
            None => Ok(()),
        }
    }
}

/// `video,frame,label` rows covering every frame of every video.
pub fn write_frame_table(mut w: impl Write, labels: &BTreeMap<String, Vec<bool>>) -> std::io::Result<()> {
    writeln!(w, "video,frame,label")?;
    for (video, frames) in labels {
        for (i, &l) in frames.iter().enumerate() {
            writeln!(w, "{video},{i},{}", l as u8)?;
        }
    }
    Ok(())
}

pub fn load_frame_table(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<bool>>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
    if header.iter().collect::<Vec<_>>() != ["video", "frame", "label"] {
        return Err(Error::Format(format!("{}: expected header `video,frame,label`", path.display())));
    }
    let mut out: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let bad = |m: &str| Error::Parse { line, msg: m.to_string() };
        let frame: usize = rec[1].trim().parse().map_err(|_| bad("frame is not an integer"))?;
        let label = match rec[2].trim() {
            "0" => false,
            "1" => true,
            _ => return Err(bad("label must be 0 or 1")),
        };
        let frames = out.entry(rec[0].trim().to_string()).or_default();
        if frame != frames.len() {
            return Err(Error::Validation(format!(
                "{} line {line}: frames of `{}` must be listed 0, 1, 2, ...",
                path.display(),
                &rec[0]
            )));
        }
        frames.push(label);
    }
    Ok(out)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

fn object_labels_of(rows: &[FeatureRow], anomalous: &[bool]) -> Vec<ObjectLabel> {
    rows.iter()
        .zip(anomalous)
        .map(|(r, &a)| ObjectLabel {
            video_id: r.video_id.clone(),
            frame_index: r.frame_index,
            object_id: r.object_id,
            anomalous: a,
        })
        .collect()
}

/// Files holding one described split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitFiles {
    pub features: PathBuf,
    pub labels: PathBuf,
    pub frames: PathBuf,
}

impl SplitFiles {
    /// `<stem>.csv` with `<stem>_labels.csv` and `<stem>_frames.csv` beside it.
    pub fn beside(features: impl Into<PathBuf>) -> Self {
        let features = features.into();
        let stem = features.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        Self {
            labels: features.with_file_name(format!("{stem}_labels.csv")),
            frames: features.with_file_name(format!("{stem}_frames.csv")),
            features,
        }
    }

    pub fn all(&self) -> [PathBuf; 3] {
        [self.features.clone(), self.labels.clone(), self.frames.clone()]
    }

    pub fn save(&self, data: &PreparedSplit) -> Result<()> {
        write_atomic(&self.features, &csv_bytes(|b| write_feature_table(b, &data.rows)))?;
        let labels = object_labels_of(&data.rows, &data.anomalous);
        write_atomic(&self.labels, &csv_bytes(|b| write_object_labels(b, &labels)))?;
        write_atomic(&self.frames, &csv_bytes(|b| write_frame_table(b, &data.frame_labels)))
    }

    pub fn load(&self) -> Result<PreparedSplit> {
        let rows = load_feature_table(&self.features)?;
        let anomalous = row_labels(&rows, &load_object_labels(&self.labels)?);
        let frame_labels = load_frame_table(&self.frames)?;
        Ok(PreparedSplit {
            rows,
            anomalous,
            frame_counts: frame_labels.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
            frame_labels,
        })
    }
}

/// Synthesizes a benchmark (train and test videos) in memory.
pub fn synthesize_benchmark(preset: Preset, seed: u64, params: &BenchmarkParams) -> Result<Dataset> {
    let b = benchmark(preset, seed, params)?;
    let render = |cfgs: &[crate::synth::ScenarioConfig]| -> Result<Vec<VideoData>> {
        crate::par::try_map(cfgs, synthesize)
    };
    Ok(Dataset {
        train: render(&b.train)?,
        test: render(&b.test)?,
    })
}

/// Trains an inference model on a feature split.
pub fn train_inference(
    train: &PreparedSplit,
    inference: &InferenceConfig,
    training: &TrainingSettings,
    seed: u64,
) -> Result<InferenceModel> {
    let columns = training.feature_set.columns();
    let pools = training_pools(
        &train.rows,
        &train.anomalous,
        &columns,
        training.max_normal,
        training.n_anomalous,
        seed,
    )?;
    ensemble_fit(&pools.normal, &pools.anomalous, &InferenceConfig { seed, ..inference.clone() })
}

pub fn inference_bundle(model: InferenceModel, columns: Vec<usize>, config: serde_json::Value) -> ModelBundle {
    ModelBundle {
        config,
        inference: Some((model, columns)),
        ..Default::default()
    }
}

/// Writes one `scores/<video>.csv` per video.
pub fn save_scores(dir: impl AsRef<Path>, scores: &[VideoScores]) -> Result<()> {
    let dir = dir.as_ref();
    for v in scores {
        write_atomic(
            dir.join(format!("{}.csv", v.video_id)),
            &csv_bytes(|b| write_scores(b, &v.frames)),
        )?;
    }
    Ok(())
}

pub fn load_scores_dir(dir: impl AsRef<Path>) -> Result<Vec<VideoScores>> {
    let dir = dir.as_ref();
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e == "csv") {
            paths.push(p);
        }
    }
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let video_id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok(VideoScores {
                video_id,
                frames: load_scores(&p)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Frame AUC pooled over all videos.
    pub auc: Option<f64>,
    /// Per-video AUC; `None` when a video has a single frame class.
    pub videos: BTreeMap<String, Option<f64>>,
    pub frames: usize,
    pub anomalous_frames: usize,
}

/// Frame-level evaluation plus the pooled ROC curve.
pub fn evaluate_scores(
    scores: &[VideoScores],
    labels: &BTreeMap<String, Vec<bool>>,
) -> Result<(EvaluationReport, Option<crate::eval::RocCurve>)> {
    let (s, l) = frame_scores_and_labels(scores, labels);
    let pooled = roc_auc(&s, &l).ok();
    let mut videos = BTreeMap::new();
    for v in scores {
        let Some(lab) = labels.get(&v.video_id) else {
            return Err(Error::Validation(format!("no frame labels for video `{}`", v.video_id)));
        };
        let one: BTreeMap<String, Vec<bool>> = [(v.video_id.clone(), lab.clone())].into();
        let (vs, vl) = frame_scores_and_labels(std::slice::from_ref(v), &one);
        videos.insert(v.video_id.clone(), roc_auc(&vs, &vl).ok().map(|r| r.auc));
    }
    let report = EvaluationReport {
        auc: pooled.as_ref().map(|r| r.auc),
        videos,
        frames: l.len(),
        anomalous_frames: l.iter().filter(|&&x| x).count(),
    };
    Ok((report, pooled))
}

pub fn save_evaluation(dir: impl AsRef<Path>, report: &EvaluationReport, roc: Option<&crate::eval::RocCurve>) -> Result<()> {
    let dir = dir.as_ref();
    let mut json = serde_json::to_vec_pretty(report).expect("report serializes");
    json.push(b'\n');
    write_atomic(dir.join("report.json"), &json)?;
    if let Some(roc) = roc {
        let csv = csv_bytes(|b| {
            writeln!(b, "fpr,tpr")?;
            roc.points.iter().try_for_each(|(x, y)| writeln!(b, "{x},{y}"))
        });
        write_atomic(dir.join("roc.csv"), &csv)?;
        let mut chart = Chart::new(
            &format!("Frame ROC (AUC {:.3})", roc.auc),
            "false positive rate",
            "true positive rate",
            Mark::Line,
        );
        chart.y_range = Some((0.0, 1.0));
        chart.series.push(Series::new("ensemble", roc.points.clone()));
        write_atomic(dir.join("roc.svg"), chart.render().as_bytes())?;
    }
    Ok(())
}

/// Preset used to synthesize data for each experiment.
pub fn experiment_preset(name: ExperimentName, configured: Preset) -> Preset {
    match name {
        ExperimentName::ContextAblation => Preset::Context,
        ExperimentName::FewshotAblation => Preset::Fewshot,
        ExperimentName::BaselineComparison => configured,
    }
}

/// Synthesizes and prepares one dataset per experiment seed, then runs the
/// experiment. Results go to `out`.
pub fn run_named_experiment(cfg: &PipelineConfig, name: ExperimentName, out: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let preset = experiment_preset(name, cfg.synth.preset);
    let mut prepared: Vec<(u64, Prepared)> = Vec::new();
    for &seed in &cfg.experiments.seeds {
        log::info!("{}: preparing {} dataset for seed {seed}", name.as_str(), preset_name(preset));
        let data = synthesize_benchmark(preset, seed, &cfg.synth.params)?;
        prepared.push((seed, prepare(&data, &cfg.flow, &cfg.autoencoder, &cfg.features, seed)?));
    }
    let runs: Vec<(u64, &Prepared)> = prepared.iter().map(|(s, p)| (*s, p)).collect();
    let report = run_experiment(name, &runs, &cfg.inference, &cfg.training, &cfg.experiments)?;
    let out = out.as_ref();
    report.save(out)?;
    let mut files = vec![out.join("report.csv"), out.join("curves.csv")];
    files.extend(report.charts.iter().map(|(stem, _)| out.join(format!("{stem}.svg"))));
    Ok(files)
}

fn preset_name(p: Preset) -> &'static str {
    match p {
        Preset::Demo => "demo",
        Preset::Context => "context",
        Preset::Fewshot => "fewshot",
    }
}

fn dir_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            out.extend(dir_files(&p)?);
        } else {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Clears a previously synthesized dataset; refuses to touch anything else.
fn reset_dataset_dir(dir: &Path) -> Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    let empty = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_none();
    if empty {
        return Ok(());
    }
    if !dir.join(SYNTH_MARKER).is_file() {
        return Err(Error::Config(format!(
            "{} exists and was not produced by the synth stage; refusing to overwrite it",
            dir.display()
        )));
    }
    for split in [TRAIN_DIR, TEST_DIR] {
        let p = dir.join(split);
        if p.exists() {
            std::fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(())
}

fn run_stage(stage: Stage, cfg: &PipelineConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    stage.check_inputs(layout)?;
    let seed = cfg.seed;
    match stage {
        Stage::Synth => {
            reset_dataset_dir(&layout.dataset)?;
            let data = synthesize_benchmark(cfg.synth.preset, seed, &cfg.synth.params)?;
            data.save(&layout.dataset)?;
            let marker = serde_json::json!({
                "preset": preset_name(cfg.synth.preset),
                "seed": seed,
                "params": cfg.synth.params,
            });
            write_atomic(
                layout.dataset.join(SYNTH_MARKER),
                &serde_json::to_vec_pretty(&marker).expect("marker serializes"),
            )?;
            dir_files(&layout.dataset)
        }
        Stage::TrainAe => {
            let train = load_split(layout.split(TRAIN_DIR))?;
            let flows = split_flows(&train, &cfg.flow)?;
            let ae = train_autoencoders(&train, &flows, &cfg.autoencoder, &cfg.flow.color()?, seed)?;
            for (role, r) in ["appearance", "temporal"].iter().zip(&ae.reports) {
                log::info!(
                    "{role} autoencoder: {} samples, final loss {:.5}",
                    r.samples,
                    r.epoch_losses.last().copied().unwrap_or(f64::NAN)
                );
            }
            let bundle = ModelBundle {
                config: cfg.echo(),
                appearance: Some(ae.appearance),
                temporal: Some(ae.temporal),
                inference: None,
            };
            bundle.save(layout.ae_bundle())?;
            dir_files(&layout.ae_bundle())
        }
        Stage::Extract => {
            let bundle = ModelBundle::load(layout.ae_bundle())?;
            let (Some(app), Some(tmp)) = (&bundle.appearance, &bundle.temporal) else {
                return Err(Error::MissingArtifact {
                    stage: stage.as_str().into(),
                    path: layout.ae_bundle().join("<appearance and temporal weights>"),
                });
            };
            let mut out = Vec::new();
            for split in [TRAIN_DIR, TEST_DIR] {
                let videos = load_split(layout.split(split))?;
                let data = describe_split(&videos, &cfg.flow, app, tmp, &cfg.features)?;
                log::info!("extracted {} {split} objects", data.rows.len());
                let files = layout.split_files(split);
                files.save(&data)?;
                out.extend(files.all());
            }
            Ok(out)
        }
        Stage::TrainInfer => {
            let train = layout.split_files(TRAIN_DIR).load()?;
            let model = train_inference(&train, &cfg.inference, &cfg.training, seed)?;
            inference_bundle(model, cfg.training.feature_set.columns(), cfg.echo()).save(layout.model_bundle())?;
            dir_files(&layout.model_bundle())
        }
        Stage::Score => {
            let bundle = ModelBundle::load(layout.model_bundle())?;
            let Some((model, columns)) = &bundle.inference else {
                return Err(Error::MissingArtifact {
                    stage: stage.as_str().into(),
                    path: layout.model_bundle().join("<inference model>"),
                });
            };
            let test = layout.split_files(TEST_DIR).load()?;
            let scores = score_rows(model, columns, &test.rows, &test.frame_counts)?;
            save_scores(layout.scores_dir(), &scores)?;
            Ok(scores
                .iter()
                .map(|v| layout.scores_dir().join(format!("{}.csv", v.video_id)))
                .collect())
        }
        Stage::Evaluate => {
            let scores = load_scores_dir(layout.scores_dir())?;
            let labels = load_frame_table(layout.frame_table(TEST_DIR))?;
            let (report, roc) = evaluate_scores(&scores, &labels)?;
            match report.auc {
                Some(auc) => log::info!("frame AUC {auc:.4} over {} frames", report.frames),
                None => log::warn!("frame AUC undefined: test frames contain a single class"),
            }
            save_evaluation(layout.evaluation_dir(), &report, roc.as_ref())?;
            dir_files(&layout.evaluation_dir())
        }
        Stage::Gridsearch => {
            let train = layout.split_files(TRAIN_DIR).load()?;
            let test = layout.split_files(TEST_DIR).load()?;
            let report = grid_search(
                &train,
                &test,
                &cfg.training.feature_set.columns(),
                &cfg.inference,
                &cfg.grid,
                cfg.training.max_normal,
                seed,
            )?;
            if let Some(best) = report.selected_row() {
                log::info!(
                    "grid selection: K1={} K2={} N={} mu={} eta={} AUC {:.4}",
                    best.k1,
                    best.k2,
                    best.n,
                    best.mu,
                    best.eta,
                    best.auc
                );
            }
            write_atomic(layout.grid_report(), &csv_bytes(|b| report.write_csv(b)))?;
            Ok(vec![layout.grid_report()])
        }
        Stage::Experiment => {
            let mut out = Vec::new();
            for name in ExperimentName::ALL {
                out.extend(run_named_experiment(cfg, name, layout.experiment_dir(name))?);
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub bundle_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub stages: Vec<Stage>,
    /// Artifact path (relative to the work or dataset directory) to SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub config: serde_json::Value,
}

fn artifact_key(layout: &Layout, p: &Path) -> String {
    let rel = p
        .strip_prefix(&layout.work)
        .map(|r| PathBuf::from("work").join(r))
        .or_else(|_| p.strip_prefix(&layout.dataset).map(|r| PathBuf::from("dataset").join(r)))
        .unwrap_or_else(|_| p.to_path_buf());
    rel.to_string_lossy().replace('\\', "/")
}

/// Runs `stages` in dependency order and writes the run manifest.
/// Failures name the stage that raised them.
pub fn run_pipeline(cfg: &PipelineConfig, stages: &[Stage]) -> Result<RunManifest> {
    cfg.validate()?;
    let layout = cfg.layout();
    let mut ordered: Vec<Stage> = stages.to_vec();
    ordered.sort_unstable();
    ordered.dedup();
    let mut artifacts = BTreeMap::new();
    for &stage in &ordered {
        log::info!("stage {}", stage.as_str());
        let files = run_stage(stage, cfg, &layout).map_err(|e| match e {
            e @ Error::MissingArtifact { .. } => e,
            e => Error::Stage {
                stage: stage.as_str().into(),
                cause: Box::new(e),
            },
        })?;
        for f in files {
            let bytes = std::fs::read(&f).map_err(|e| Error::io(&f, e))?;
            artifacts.insert(artifact_key(&layout, &f), sha256_hex(&bytes));
        }
    }
    let manifest = RunManifest {
        tool: "ctxvad".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        bundle_version: BUNDLE_VERSION.into(),
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        stages: ordered,
        artifacts,
        config: cfg.echo(),
    };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write_atomic(layout.run_manifest(), &json)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_graph_is_acyclic_and_ordered() {
        for s in Stage::ALL {
            for &u in s.upstream() {
                assert!(u < s, "{} must come after {}", s.as_str(), u.as_str());
            }
            assert_eq!(Stage::parse(s.as_str()).unwrap(), s);
        }
    }

    #[test]
    fn frame_table_round_trip() {
        let labels: BTreeMap<String, Vec<bool>> =
            [("a".to_string(), vec![false, true]), ("b".to_string(), vec![true])].into();
        let dir = std::env::temp_dir().join(format!("ctxvad-ft-{}", std::process::id()));
        let p = dir.join("f.csv");
        write_atomic(&p, &csv_bytes(|b| write_frame_table(b, &labels))).unwrap();
        assert_eq!(load_frame_table(&p).unwrap(), labels);
        std::fs::write(&p, "video,frame,label\na,1,0\n").unwrap();
        assert!(matches!(load_frame_table(&p), Err(Error::Validation(_))));
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn config_defaults_parse_and_paths_resolve() {
        let cfg = PipelineConfig::from_toml("seed = 3\n[paths]\nwork = \"out\"\n", "/tmp/x").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.work_dir(), PathBuf::from("/tmp/x/out"));
        assert_eq!(cfg.dataset_dir(), PathBuf::from("/tmp/x/data"));
        assert!(PipelineConfig::from_toml("bogus = 1\n", ".").is_err());
        assert!(PipelineConfig::from_toml("[inference]\nk1 = 0\n", ".").is_err());
    }

    #[test]
    fn missing_input_names_the_artifact() {
        let layout = Layout::new("/nonexistent/d", "/nonexistent/w");
        match Stage::Score.check_inputs(&layout) {
            Err(Error::MissingArtifact { stage, path }) => {
                assert_eq!(stage, "score");
                assert_eq!(path, PathBuf::from("/nonexistent/w/model/manifest.json"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
