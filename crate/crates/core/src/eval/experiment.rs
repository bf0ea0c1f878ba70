use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pca::pca_project_2d;
use super::roc::{frame_scores_and_labels, roc_auc};
use super::svg::{Chart, Mark, Series};
use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::features::{select_columns, FeatureSet};
use crate::inference::{baseline_normal_only, ensemble_fit, InferenceConfig, InferenceModel, Standardizer};
use crate::pipeline::{score_rows, subsample, training_pools, Prepared, TrainingSettings, VideoScores};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    ContextAblation,
    FewshotAblation,
    BaselineComparison,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 3] = [
        ExperimentName::ContextAblation,
        ExperimentName::FewshotAblation,
        ExperimentName::BaselineComparison,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown experiment `{s}` (expected context-ablation, fewshot-ablation or baseline-comparison)"
                ))
            })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::ContextAblation => "context-ablation",
            ExperimentName::FewshotAblation => "fewshot-ablation",
            ExperimentName::BaselineComparison => "baseline-comparison",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// One synthetic dataset per seed.
    pub seeds: Vec<u64>,
    pub fewshot_n: Vec<usize>,
    pub baseline_k: usize,
    /// Samples per class in the PCA scatter.
    pub pca_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            fewshot_n: vec![0, 20, 40, 60, 80, 100],
            baseline_k: 5,
            pca_samples: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub setting: String,
    pub seed: u64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub series: String,
    pub seed: u64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub name: ExperimentName,
    pub rows: Vec<ExperimentRow>,
    pub curves: Vec<CurveRow>,
    /// (file stem, SVG document)
    pub charts: Vec<(String, String)>,
}

impl ExperimentReport {
    /// Settings in first-seen order.
    pub fn settings(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.setting.as_str()) {
                seen.push(&r.setting);
            }
        }
        seen
    }

    pub fn mean_auc(&self, setting: &str) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.setting == setting).map(|r| r.auc).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn write_report_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "experiment,setting,seed,auc")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{:.6}", self.name.as_str(), r.setting, r.seed, r.auc)?;
        }
        for s in self.settings() {
            writeln!(w, "{},{s},mean,{:.6}", self.name.as_str(), self.mean_auc(s).unwrap())?;
        }
        Ok(())
    }

    pub fn write_curves_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "experiment,series,seed,x,y")?;
        for c in &self.curves {
            writeln!(w, "{},{},{},{},{}", self.name.as_str(), c.series, c.seed, c.x, c.y)?;
        }
        Ok(())
    }

    /// Writes `report.csv`, `curves.csv` and one SVG per chart.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut buf = Vec::new();
        self.write_report_csv(&mut buf).expect("in-memory write");
        write_atomic(dir.join("report.csv"), &buf)?;
        buf.clear();
        self.write_curves_csv(&mut buf).expect("in-memory write");
        write_atomic(dir.join("curves.csv"), &buf)?;
        for (stem, svg) in &self.charts {
            write_atomic(dir.join(format!("{stem}.svg")), svg.as_bytes())?;
        }
        Ok(())
    }
}

/// Fits on the training split and scores the test split.
pub fn fit_and_score(
    prepared: &Prepared,
    columns: &[usize],
    cfg: &InferenceConfig,
    max_normal: usize,
    n_anomalous: usize,
    seed: u64,
) -> Result<(InferenceModel, Vec<VideoScores>, f64)> {
    let pools = training_pools(
        &prepared.train.rows,
        &prepared.train.anomalous,
        columns,
        max_normal,
        n_anomalous,
        seed,
    )?;
    let model = ensemble_fit(&pools.normal, &pools.anomalous, &InferenceConfig { seed, ..cfg.clone() })?;
    score_and_auc(prepared, columns, model)
}

fn score_and_auc(prepared: &Prepared, columns: &[usize], model: InferenceModel) -> Result<(InferenceModel, Vec<VideoScores>, f64)> {
    let scores = score_rows(&model, columns, &prepared.test.rows, &prepared.test.frame_counts)?;
    let auc = super::roc::frame_auc(&scores, &prepared.test.frame_labels)?;
    Ok((model, scores, auc))
}

fn pca_chart(prepared: &Prepared, columns: &[usize], per_class: usize, seed: u64, title: &str) -> Result<(Chart, Vec<CurveRow>, String)> {
    let pick = |flag: bool, tag: u64| -> Vec<Vec<f64>> {
        let pool: Vec<Vec<f64>> = prepared
            .test
            .rows
            .iter()
            .zip(&prepared.test.anomalous)
            .filter(|(_, &a)| a == flag)
            .map(|(r, _)| select_columns(&r.descriptor, columns))
            .collect();
        subsample(&pool, per_class, rng::mix(seed, tag))
    };
    let normal = pick(false, 0x9C1);
    let anomalous = pick(true, 0x9C2);
    let all: Vec<Vec<f64>> = normal.iter().chain(&anomalous).cloned().collect();
    let st = Standardizer::fit(&all)?;
    let z: Vec<Vec<f64>> = all.iter().map(|s| st.apply(s)).collect::<Result<_>>()?;
    let pca = pca_project_2d(&z)?;
    let (pn, pa) = pca.points.split_at(normal.len());
    let to_pts = |p: &[[f64; 2]]| p.iter().map(|q| (q[0], q[1])).collect::<Vec<_>>();
    let mut chart = Chart::new(title, "PC1", "PC2", Mark::Dot);
    chart.series.push(Series::new("normal", to_pts(pn)));
    chart.series.push(Series::new("anomalous", to_pts(pa)));
    let stem = title.to_lowercase().replace(' ', "_");
    let curves = chart
        .series
        .iter()
        .flat_map(|s| {
            s.points.iter().map(|&(x, y)| CurveRow {
                series: format!("{stem}/{}", s.name),
                seed,
                x,
                y,
            })
        })
        .collect();
    Ok((chart, curves, stem))
}

/// Runs one experiment over prepared datasets, one per seed.
pub fn run_experiment(
    name: ExperimentName,
    runs: &[(u64, &Prepared)],
    inference: &InferenceConfig,
    training: &TrainingSettings,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    if runs.is_empty() {
        return Err(Error::Config("experiment needs at least one prepared dataset".into()));
    }
    let mut report = ExperimentReport {
        name,
        rows: vec![],
        curves: vec![],
        charts: vec![],
    };
    let m = training.max_normal;
    let n = training.n_anomalous;
    match name {
        ExperimentName::ContextAblation => {
            for &(seed, p) in runs {
                for set in FeatureSet::ALL {
                    let (_, _, auc) = fit_and_score(p, &set.columns(), inference, m, n, seed)?;
                    log::info!("context-ablation seed {seed} {}: AUC {auc:.4}", set.as_str());
                    report.rows.push(ExperimentRow {
                        setting: set.as_str().into(),
                        seed,
                        auc,
                    });
                }
            }
            let (seed, p) = runs[0];
            for (set, title) in [(FeatureSet::Full, "PCA with context"), (FeatureSet::NoContext, "PCA without context")] {
                let (chart, curves, stem) = pca_chart(p, &set.columns(), cfg.pca_samples, seed, title)?;
                report.curves.extend(curves);
                report.charts.push((stem, chart.render()));
            }
            let mut chart = Chart::new("AUC by feature set", "seed", "frame AUC", Mark::Dot);
            for set in FeatureSet::ALL {
                let pts = report
                    .rows
                    .iter()
                    .filter(|r| r.setting == set.as_str())
                    .map(|r| (r.seed as f64, r.auc))
                    .collect();
                chart.series.push(Series::new(set.as_str(), pts));
            }
            chart.y_range = Some((0.0, 1.0));
            report.charts.push(("auc_by_feature_set".into(), chart.render()));
        }
        ExperimentName::FewshotAblation => {
            let columns = training.feature_set.columns();
            for &(seed, p) in runs {
                for &nv in &cfg.fewshot_n {
                    let icfg = if nv == 0 {
                        InferenceConfig { k2: 0, ..inference.clone() }
                    } else {
                        inference.clone()
                    };
                    match fit_and_score(p, &columns, &icfg, m, nv, seed) {
                        Ok((_, _, auc)) => {
                            log::info!("fewshot-ablation seed {seed} N={nv}: AUC {auc:.4}");
                            report.rows.push(ExperimentRow {
                                setting: format!("N={nv}"),
                                seed,
                                auc,
                            });
                        }
                        Err(e) => log::warn!("fewshot-ablation seed {seed} N={nv} skipped: {e}"),
                    }
                }
            }
            let mut chart = Chart::new("Few-shot ablation", "N (anomalous training samples)", "mean frame AUC", Mark::Line);
            let pts: Vec<(f64, f64)> = cfg
                .fewshot_n
                .iter()
                .filter_map(|&nv| report.mean_auc(&format!("N={nv}")).map(|a| (nv as f64, a)))
                .collect();
            report.curves.extend(pts.iter().map(|&(x, y)| CurveRow {
                series: "mean-auc".into(),
                seed: runs[0].0,
                x,
                y,
            }));
            chart.series.push(Series::new("ensemble", pts));
            report.charts.push(("fewshot_auc".into(), chart.render()));
        }
        ExperimentName::BaselineComparison => {
            let columns = training.feature_set.columns();
            let mut first: Option<Vec<(String, Vec<VideoScores>)>> = None;
            for &(seed, p) in runs {
                let pools = training_pools(&p.train.rows, &p.train.anomalous, &columns, m, 0, seed)?;
                let base = baseline_normal_only(&pools.normal, cfg.baseline_k, &InferenceConfig { seed, ..inference.clone() })?;
                let (_, bs, b_auc) = score_and_auc(p, &columns, base)?;
                let (_, es, e_auc) = fit_and_score(p, &columns, inference, m, n, seed)?;
                log::info!("baseline-comparison seed {seed}: baseline {b_auc:.4}, ensemble {e_auc:.4}");
                report.rows.push(ExperimentRow { setting: "baseline".into(), seed, auc: b_auc });
                report.rows.push(ExperimentRow { setting: "ensemble".into(), seed, auc: e_auc });
                if first.is_none() {
                    first = Some(vec![("baseline".into(), bs), ("ensemble".into(), es)]);
                }
            }
            let (seed, p) = runs[0];
            let series = first.expect("at least one run");
            let mut roc_chart = Chart::new("ROC", "false positive rate", "true positive rate", Mark::Line);
            roc_chart.y_range = Some((0.0, 1.0));
            for (name, scores) in &series {
                let (s, l) = frame_scores_and_labels(scores, &p.test.frame_labels);
                let roc = roc_auc(&s, &l)?;
                report.curves.extend(roc.points.iter().map(|&(x, y)| CurveRow {
                    series: format!("roc/{name}"),
                    seed,
                    x,
                    y,
                }));
                roc_chart.series.push(Series::new(name.clone(), roc.points));
            }
            report.charts.push(("roc".into(), roc_chart.render()));
            // frame-score timeline of the first test video
            if let Some((video, labels)) = p.test.frame_labels.iter().next() {
                let mut chart = Chart::new(&format!("Frame scores: {video}"), "frame", "anomaly score", Mark::Line);
                chart.y_range = Some((0.0, 1.0));
                chart.bands = label_bands(labels);
                for (name, scores) in &series {
                    if let Some(v) = scores.iter().find(|v| &v.video_id == video) {
                        let pts: Vec<(f64, f64)> = v.frames.iter().map(|f| (f.frame_index as f64, f.score)).collect();
                        report.curves.extend(pts.iter().map(|&(x, y)| CurveRow {
                            series: format!("timeline/{name}"),
                            seed,
                            x,
                            y,
                        }));
                        chart.series.push(Series::new(name.clone(), pts));
                    }
                }
                report.charts.push(("timeline".into(), chart.render()));
            }
        }
    }
    Ok(report)
}

/// Maximal runs of anomalous frames as [start, end + 1) intervals.
pub fn label_bands(labels: &[bool]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &l) in labels.iter().chain(std::iter::once(&false)).enumerate() {
        match (l, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s as f64, i as f64));
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Mean AUC per setting, in first-seen order.
pub fn summary(report: &ExperimentReport) -> BTreeMap<String, f64> {
    report
        .settings()
        .into_iter()
        .map(|s| (s.to_string(), report.mean_auc(s).unwrap()))
        .collect()
}
