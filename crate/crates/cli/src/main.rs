use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ctxvad::data::bundle::ModelBundle;
use ctxvad::data::{load_feature_table, load_frame_annotations, load_object_labels, write_atomic};
use ctxvad::dataset::{load_split, VideoData, TRAIN_DIR};
use ctxvad::eval::ExperimentName;
use ctxvad::features::FeatureSet;
use ctxvad::inference::KernelKind;
use ctxvad::pipeline::{
    describe_split, load_scores, row_labels, score_rows, split_flows, train_autoencoder, write_scores, AeRole,
    PreparedSplit, VideoScores,
};
use ctxvad::stages::{
    evaluate_scores, inference_bundle, load_frame_table, load_scores_dir, run_named_experiment, run_pipeline,
    save_evaluation, save_scores, synthesize_benchmark, train_inference, PipelineConfig, SplitFiles, Stage,
};
use ctxvad::synth::presets::{BenchmarkParams, Preset};
use ctxvad::synth::{synthesize, ScenarioConfig};

#[derive(Parser)]
#[command(name = "ctxvad", version, about = "Object-centric, context-aware video anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: one video from a scenario file, or a
    /// train/test benchmark from a preset.
    Synth {
        /// Scenario file (TOML). Writes a single video directory.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// demo, context or fewshot. Writes `train/` and `test/`.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        frames: Option<u32>,
        #[arg(long)]
        train_videos: Option<usize>,
        #[arg(long)]
        test_videos: Option<usize>,
    },
    /// Train one autoencoder on the normal objects of a dataset.
    TrainAe {
        #[command(flatten)]
        common: Common,
        /// appearance or temporal
        #[arg(long)]
        role: String,
        /// Dataset root, split directory or video directory.
        #[arg(long)]
        data: PathBuf,
        /// Bundle directory; an existing bundle keeps its other weights.
        #[arg(long)]
        out: PathBuf,
    },
    /// Describe every detected object of a split with a trained bundle.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        /// Split directory or video directory.
        #[arg(long)]
        data: PathBuf,
        /// Feature table; `<stem>_labels.csv` and `<stem>_frames.csv` are
        /// written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the clustered SVM ensemble on a feature table.
    TrainInfer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: PathBuf,
        /// Object labels (`video,frame,id,label`).
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        k1: Option<usize>,
        #[arg(long)]
        k2: Option<usize>,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
        /// linear or rbf
        #[arg(long)]
        kernel: Option<String>,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        max_normal: Option<usize>,
        #[arg(long)]
        n_anomalous: Option<usize>,
        /// full, no-context, contextual-only, temporal-only or appearance-only
        #[arg(long)]
        feature_set: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score frames with a trained inference bundle.
    Score {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Frame table giving each video's frame count; defaults to the
        /// `_frames.csv` sidecar of the feature table when present.
        #[arg(long)]
        frames: Option<PathBuf>,
        /// A `.csv` file for a single video, otherwise a directory of
        /// `<video>.csv` files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Frame-level ROC/AUC of scores against annotations.
    Evaluate {
        /// Scores file or directory of `<video>.csv` files.
        #[arg(long)]
        scores: PathBuf,
        /// `frame,label` annotations (single video) or a `video,frame,label`
        /// frame table.
        #[arg(long)]
        labels: PathBuf,
        /// Directory for report.json, roc.csv and roc.svg.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep K1, K2, N, mu and eta over the features of a pipeline run.
    Gridsearch {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run context-ablation, fewshot-ablation or baseline-comparison on
    /// freshly synthesized data.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        name: String,
        /// Comma-separated dataset seeds; overrides the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run pipeline stages from a config file.
    Run {
        #[command(flatten)]
        common: Common,
        /// Comma-separated stages; defaults to synth through evaluate.
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<String>>,
    },
}

/// Videos under `dir`: one video directory, a split, or a dataset root
/// (its training split).
fn load_videos(dir: &Path) -> Result<Vec<VideoData>> {
    if dir.join("manifest.json").is_file() {
        return Ok(vec![VideoData::load(dir)?]);
    }
    let split = if dir.join(TRAIN_DIR).is_dir() { dir.join(TRAIN_DIR) } else { dir.to_path_buf() };
    let videos = load_split(&split)?;
    if videos.is_empty() {
        bail!("no video directories found under {}", split.display());
    }
    Ok(videos)
}

fn synth(
    config: Option<PathBuf>,
    preset: Option<String>,
    seed: u64,
    out: &Path,
    frames: Option<u32>,
    train_videos: Option<usize>,
    test_videos: Option<usize>,
) -> Result<()> {
    if let Some(path) = config {
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = ScenarioConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        cfg.seed = seed;
        if let Some(f) = frames {
            cfg.frames = f;
        }
        let video = synthesize(&cfg)?;
        video.save(out)?;
        log::info!("wrote video `{}` ({} frames) to {}", video.id, video.frames.len(), out.display());
        return Ok(());
    }
    let preset = Preset::parse(preset.as_deref().unwrap_or("demo"))?;
    let mut params = BenchmarkParams::default();
    if let Some(f) = frames {
        params.frames = f;
    }
    if let Some(n) = train_videos {
        params.train_videos = n;
    }
    if let Some(n) = test_videos {
        params.test_videos = n;
    }
    let data = synthesize_benchmark(preset, seed, &params)?;
    data.save(out)?;
    log::info!(
        "wrote {} training and {} test videos to {}",
        data.train.len(),
        data.test.len(),
        out.display()
    );
    Ok(())
}

fn train_ae(common: &Common, role: &str, data: &Path, out: &Path) -> Result<()> {
    let cfg = common.load()?;
    let role = AeRole::parse(role)?;
    let videos = load_videos(data)?;
    let flows = split_flows(&videos, &cfg.flow)?;
    let (state, report) = train_autoencoder(role, &videos, &flows, &cfg.autoencoder, &cfg.flow.color()?, cfg.seed)?;
    log::info!(
        "trained on {} samples, final loss {:.5}",
        report.samples,
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    let mut bundle = if out.join("manifest.json").is_file() {
        ModelBundle::load(out).with_context(|| format!("updating bundle {}", out.display()))?
    } else {
        ModelBundle::default()
    };
    bundle.config = cfg.echo();
    match role {
        AeRole::Appearance => bundle.appearance = Some(state),
        AeRole::Temporal => bundle.temporal = Some(state),
    }
    bundle.save(out)?;
    Ok(())
}

fn extract(common: &Common, bundle_dir: &Path, data: &Path, out: &Path) -> Result<()> {
    let cfg = common.load()?;
    let bundle = ModelBundle::load(bundle_dir).with_context(|| format!("loading bundle {}", bundle_dir.display()))?;
    let (Some(app), Some(tmp)) = (&bundle.appearance, &bundle.temporal) else {
        bail!(
            "bundle {} needs both appearance and temporal weights (run train-ae for each role)",
            bundle_dir.display()
        );
    };
    if data.join(TRAIN_DIR).is_dir() {
        bail!("{} is a dataset root; pass its train/ or test/ directory", data.display());
    }
    let videos = load_videos(data)?;
    let split = describe_split(&videos, &cfg.flow, app, tmp, &cfg.features)?;
    SplitFiles::beside(out).save(&split)?;
    log::info!("described {} objects in {} videos", split.rows.len(), videos.len());
    Ok(())
}

struct InferArgs {
    features: PathBuf,
    labels: PathBuf,
    k1: Option<usize>,
    k2: Option<usize>,
    mu: Option<f64>,
    eta: Option<f64>,
    kernel: Option<String>,
    c: Option<f64>,
    max_normal: Option<usize>,
    n_anomalous: Option<usize>,
    feature_set: Option<String>,
    out: PathBuf,
}

fn train_infer(common: &Common, a: InferArgs) -> Result<()> {
    let mut cfg = common.load()?;
    let inf = &mut cfg.inference;
    inf.k1 = a.k1.unwrap_or(inf.k1);
    inf.k2 = a.k2.unwrap_or(inf.k2);
    inf.mu = a.mu.unwrap_or(inf.mu);
    inf.eta = a.eta.unwrap_or(inf.eta);
    inf.c = a.c.unwrap_or(inf.c);
    if let Some(k) = a.kernel.as_deref() {
        inf.kernel = match k {
            "linear" => KernelKind::Linear,
            "rbf" => KernelKind::Rbf,
            other => bail!("unknown kernel `{other}` (expected linear or rbf)"),
        };
    }
    let tr = &mut cfg.training;
    tr.max_normal = a.max_normal.unwrap_or(tr.max_normal);
    tr.n_anomalous = a.n_anomalous.unwrap_or(tr.n_anomalous);
    if let Some(fs) = a.feature_set.as_deref() {
        tr.feature_set = FeatureSet::ALL
            .into_iter()
            .find(|s| s.as_str() == fs)
            .with_context(|| format!("unknown feature set `{fs}`"))?;
    }
    cfg.validate()?;
    let rows = load_feature_table(&a.features)?;
    let anomalous = row_labels(&rows, &load_object_labels(&a.labels)?);
    let split = PreparedSplit {
        rows,
        anomalous,
        frame_counts: BTreeMap::new(),
        frame_labels: BTreeMap::new(),
    };
    let model = train_inference(&split, &cfg.inference, &cfg.training, cfg.seed)?;
    log::info!(
        "fitted {} normal and {} anomaly-cluster classifiers on {} dims",
        model.k1(),
        model.k2(),
        model.dims()
    );
    inference_bundle(model, cfg.training.feature_set.columns(), cfg.echo()).save(&a.out)?;
    Ok(())
}

fn score(bundle_dir: &Path, features: &Path, frames: Option<PathBuf>, out: &Path) -> Result<()> {
    if !bundle_dir.join("manifest.json").is_file() {
        bail!("no trained bundle at {} (run train-infer first)", bundle_dir.display());
    }
    let bundle = ModelBundle::load(bundle_dir)?;
    let Some((model, columns)) = &bundle.inference else {
        bail!("bundle {} holds no inference model", bundle_dir.display());
    };
    let rows = load_feature_table(features)?;
    let frames = frames.or_else(|| Some(SplitFiles::beside(features).frames).filter(|p| p.is_file()));
    let counts = match &frames {
        Some(p) => load_frame_table(p)?.into_iter().map(|(k, v)| (k, v.len())).collect(),
        None => BTreeMap::new(),
    };
    let scores = score_rows(model, columns, &rows, &counts)?;
    if out.extension().is_some_and(|e| e == "csv") {
        let [single] = scores.as_slice() else {
            bail!(
                "features cover {} videos; pass a directory to --out",
                scores.len()
            );
        };
        let mut buf = Vec::new();
        write_scores(&mut buf, &single.frames)?;
        write_atomic(out, &buf)?;
    } else {
        save_scores(out, &scores)?;
    }
    log::info!("scored {} frames", scores.iter().map(|v| v.frames.len()).sum::<usize>());
    Ok(())
}

fn first_line(path: &Path) -> Result<String> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut line = String::new();
    std::io::BufReader::new(file).read_line(&mut line)?;
    Ok(line.trim().to_string())
}

fn evaluate(scores: &Path, labels: &Path, out: Option<PathBuf>) -> Result<()> {
    let scores: Vec<VideoScores> = if scores.is_dir() {
        load_scores_dir(scores)?
    } else {
        vec![VideoScores {
            video_id: scores.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
            frames: load_scores(scores)?,
        }]
    };
    let labels: BTreeMap<String, Vec<bool>> = if first_line(labels)? == "frame,label" {
        let [single] = scores.as_slice() else {
            bail!("`frame,label` annotations describe one video, but {} score files were given", scores.len());
        };
        let ann = load_frame_annotations(labels)?;
        let n = ann.last().map_or(0, |a| a.frame_index as usize + 1);
        let mut flags = vec![false; n];
        for a in ann {
            flags[a.frame_index as usize] = a.anomalous;
        }
        [(single.video_id.clone(), flags)].into()
    } else {
        let mut table = load_frame_table(labels)?;
        if let ([single], 1) = (scores.as_slice(), table.len()) {
            // a lone score file is matched to a lone labelled video by position
            let flags = table.pop_first().expect("one entry").1;
            [(single.video_id.clone(), flags)].into()
        } else {
            table
        }
    };
    let (report, roc) = evaluate_scores(&scores, &labels)?;
    match report.auc {
        Some(auc) => println!("frame AUC {auc:.6} ({} frames, {} anomalous)", report.frames, report.anomalous_frames),
        None => println!("frame AUC undefined: all {} frames share one label", report.frames),
    }
    for (video, auc) in &report.videos {
        match auc {
            Some(a) => println!("  {video}: {a:.6}"),
            None => println!("  {video}: undefined"),
        }
    }
    if let Some(dir) = out {
        save_evaluation(dir, &report, roc.as_ref())?;
    }
    Ok(())
}

fn gridsearch(common: &Common, out: &Path) -> Result<()> {
    let cfg = common.load()?;
    let layout = cfg.layout();
    for p in Stage::Gridsearch.inputs(&layout) {
        if !p.exists() {
            bail!("missing {} (run the extract stage first: `ctxvad run --stages synth,train-ae,extract`)", p.display());
        }
    }
    let train = layout.split_files(ctxvad::dataset::TRAIN_DIR).load()?;
    let test = layout.split_files(ctxvad::dataset::TEST_DIR).load()?;
    let report = ctxvad::eval::grid_search(
        &train,
        &test,
        &cfg.training.feature_set.columns(),
        &cfg.inference,
        &cfg.grid,
        cfg.training.max_normal,
        cfg.seed,
    )?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_atomic(out, &buf)?;
    match report.selected_row() {
        Some(r) => println!(
            "selected K1={} K2={} N={} mu={} eta={}: AUC {:.6} ({} rows, {} skipped cells)",
            r.k1,
            r.k2,
            r.n,
            r.mu,
            r.eta,
            r.auc,
            report.rows.len(),
            report.skipped.len()
        ),
        None => println!("no feasible grid cell ({} skipped)", report.skipped.len()),
    }
    Ok(())
}

fn experiment(common: &Common, name: &str, seeds: Option<Vec<u64>>, out: &Path) -> Result<()> {
    let mut cfg = common.load()?;
    if let Some(s) = seeds {
        cfg.experiments.seeds = s;
    }
    cfg.validate()?;
    let name = ExperimentName::parse(name)?;
    let files = run_named_experiment(&cfg, name, out)?;
    let report = std::fs::read_to_string(&files[0])?;
    for line in report.lines().filter(|l| l.contains(",mean,")) {
        println!("{line}");
    }
    Ok(())
}

fn run(common: &Common, stages: Option<Vec<String>>) -> Result<()> {
    let cfg = common.load()?;
    let stages: Vec<Stage> = match stages {
        Some(list) => list.iter().map(|s| Stage::parse(s.trim())).collect::<Result<_, _>>()?,
        None => Stage::DEFAULT.to_vec(),
    };
    let manifest = run_pipeline(&cfg, &stages)?;
    println!(
        "completed {} stage(s); {} artifacts recorded in {}",
        manifest.stages.len(),
        manifest.artifacts.len(),
        cfg.layout().run_manifest().display()
    );
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            config,
            preset,
            seed,
            out,
            frames,
            train_videos,
            test_videos,
        } => synth(config, preset, seed, &out, frames, train_videos, test_videos),
        Command::TrainAe { common, role, data, out } => train_ae(&common, &role, &data, &out),
        Command::Extract {
            common,
            bundle,
            data,
            out,
        } => extract(&common, &bundle, &data, &out),
        Command::TrainInfer {
            common,
            features,
            labels,
            k1,
            k2,
            mu,
            eta,
            kernel,
            c,
            max_normal,
            n_anomalous,
            feature_set,
            out,
        } => train_infer(
            &common,
            InferArgs {
                features,
                labels,
                k1,
                k2,
                mu,
                eta,
                kernel,
                c,
                max_normal,
                n_anomalous,
                feature_set,
                out,
            },
        ),
        Command::Score {
            bundle,
            features,
            frames,
            out,
        } => score(&bundle, &features, frames, &out),
        Command::Evaluate { scores, labels, out } => evaluate(&scores, &labels, out),
        Command::Gridsearch { common, out } => gridsearch(&common, &out),
        Command::Experiment {
            common,
            name,
            seeds,
            out,
        } => experiment(&common, &name, seeds, &out),
        Command::Run { common, stages } => run(&common, stages),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
