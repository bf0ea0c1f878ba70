//! Two-pool clustered SVM ensemble: cluster normal and anomalous training
//! descriptors separately, train one calibrated one-vs-rest classifier per
//! cluster, and score objects by the best normal and best anomalous match.

pub mod kmeans;
pub mod standardize;
pub mod svm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{NamedTensor, TensorMap};

pub use kmeans::{kmeans_fit, kmeans_fit_with, ClusterModel, KMeansConfig, KMeansFit};
pub use standardize::Standardizer;
pub use svm::{
    smo_solve, svm_train, CalibratedSvm, DualSolution, Kernel, KernelMatrix, Platt, SolverParams,
    SvmModel, SvmParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Rbf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub k1: usize,
    pub k2: usize,
    pub mu: f64,
    pub eta: f64,
    pub kernel: KernelKind,
    pub c: f64,
    /// rbf width; `None` uses 1 / (d · variance of the standardized data).
    pub gamma: Option<f64>,
    pub kmeans_restarts: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            k1: 4,
            k2: 3,
            mu: 0.5,
            eta: 0.5,
            kernel: KernelKind::Rbf,
            c: 1.0,
            gamma: None,
            kmeans_restarts: 10,
            tol: 1e-3,
            seed: 0,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k1 == 0 {
            return Err(Error::Config("K1 must be at least 1".into()));
        }
        if self.k1 + self.k2 < 2 {
            return Err(Error::Config(
                "one-vs-rest training needs at least two clusters in total".into(),
            ));
        }
        for (name, v) in [("mu", self.mu), ("eta", self.eta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("C must be > 0, got {}", self.c)));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gamma must be > 0, got {g}")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("solver tolerance must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// score = (1 + β − α) / 2
    Ensemble,
    /// score = 1 − α
    NormalOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Normal,
    Anomalous,
    Unknown,
}

impl Verdict {
    /// Anomalous and unknown objects both raise an alarm.
    pub fn is_alarm(self) -> bool {
        self != Verdict::Normal
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Normal => "normal",
            Verdict::Anomalous => "anomalous",
            Verdict::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectVerdict {
    pub alpha: f64,
    pub beta: f64,
    pub label: Verdict,
    pub score: f64,
}

pub fn classify_object(alpha: f64, beta: f64, mu: f64, eta: f64) -> ObjectVerdict {
    let label = if alpha > beta && alpha > mu {
        Verdict::Normal
    } else if alpha < beta && beta > eta {
        Verdict::Anomalous
    } else {
        Verdict::Unknown
    };
    ObjectVerdict {
        alpha,
        beta,
        label,
        score: ((1.0 + beta - alpha) / 2.0).clamp(0.0, 1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredFrame {
    pub frame_index: u32,
    pub score: f64,
    pub alarm: bool,
}

pub fn frame_anomaly_score(frame_index: u32, objects: &[ObjectVerdict]) -> ScoredFrame {
    ScoredFrame {
        frame_index,
        score: objects.iter().map(|o| o.score).fold(0.0, f64::max),
        alarm: objects.iter().any(|o| o.label.is_alarm()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleScores {
    pub alpha: f64,
    pub beta: f64,
    pub normal: Vec<f64>,
    pub anomalous: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceModel {
    pub config: InferenceConfig,
    pub mode: ScoreMode,
    pub standardizer: Standardizer,
    pub normal_clusters: ClusterModel,
    pub anomaly_clusters: ClusterModel,
    /// K1 normal-cluster classifiers followed by K2 anomaly-cluster ones.
    pub classifiers: Vec<CalibratedSvm>,
}

fn check_pool(pool: &[Vec<f64>], dims: usize, what: &str) -> Result<()> {
    for (i, s) in pool.iter().enumerate() {
        if s.len() != dims {
            return Err(Error::Dimension(format!(
                "{what} sample {i} has {} values, expected {dims}",
                s.len()
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("{what} sample {i} is not finite")));
        }
    }
    Ok(())
}

fn fit_pool(pool: &[Vec<f64>], k: usize, cfg: &InferenceConfig, tag: u64) -> Result<(ClusterModel, Vec<usize>)> {
    if k == 0 {
        return Ok((ClusterModel { centers: vec![] }, vec![]));
    }
    let fit = kmeans_fit_with(
        pool,
        &KMeansConfig {
            restarts: cfg.kmeans_restarts,
            ..KMeansConfig::new(k, crate::rng::mix(cfg.seed, tag))
        },
    )?;
    let mut counts = vec![0usize; k];
    fit.assignments.iter().for_each(|&a| counts[a] += 1);
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Validation(format!(
            "cluster {empty} of {k} is empty; the pool has too few distinct samples"
        )));
    }
    let mut model = fit.model;
    model.quantize();
    Ok((model, fit.assignments))
}

/// Fits the ensemble. With `k2 == 0` the model scores as the normal-only
/// baseline.
pub fn ensemble_fit(
    normal: &[Vec<f64>],
    anomalous: &[Vec<f64>],
    cfg: &InferenceConfig,
) -> Result<InferenceModel> {
    cfg.validate()?;
    if normal.len() < cfg.k1 {
        return Err(Error::Validation(format!(
            "{} normal samples cannot fill K1 = {} clusters",
            normal.len(),
            cfg.k1
        )));
    }
    if anomalous.len() < cfg.k2 {
        return Err(Error::Validation(format!(
            "{} anomalous samples cannot fill K2 = {} clusters",
            anomalous.len(),
            cfg.k2
        )));
    }
    let dims = normal[0].len();
    check_pool(normal, dims, "normal")?;
    // anomalous samples are ignored entirely when K2 = 0
    let anomalous = if cfg.k2 == 0 { &[][..] } else { anomalous };
    check_pool(anomalous, dims, "anomalous")?;

    let all: Vec<Vec<f64>> = normal.iter().chain(anomalous).cloned().collect();
    let standardizer = Standardizer::fit(&all)?;
    let z: Vec<Vec<f64>> = all
        .iter()
        .map(|s| standardizer.apply(s))
        .collect::<Result<_>>()?;
    let (zn, za) = z.split_at(normal.len());

    let (normal_clusters, an) = fit_pool(zn, cfg.k1, cfg, 1)?;
    let (anomaly_clusters, aa) = fit_pool(za, cfg.k2, cfg, 2)?;
    let cluster_of: Vec<usize> = an.iter().copied().chain(aa.iter().map(|a| a + cfg.k1)).collect();

    let kernel = match cfg.kernel {
        KernelKind::Linear => Kernel::Linear,
        KernelKind::Rbf => Kernel::Rbf {
            gamma: cfg.gamma.unwrap_or_else(|| default_gamma(&z)),
        },
    };
    let params = SvmParams {
        kernel,
        c: cfg.c,
        tol: cfg.tol,
    };
    let gram = KernelMatrix::compute(&kernel, &z);
    let clusters: Vec<usize> = (0..cfg.k1 + cfg.k2).collect();
    let classifiers = crate::par::try_map(&clusters, |&c| {
        let labels: Vec<bool> = cluster_of.iter().map(|&a| a == c).collect();
        svm::svm_train_with_matrix(&z, &labels, &gram, &params)
    })?;
    Ok(InferenceModel {
        config: cfg.clone(),
        mode: if cfg.k2 == 0 {
            ScoreMode::NormalOnly
        } else {
            ScoreMode::Ensemble
        },
        standardizer,
        normal_clusters,
        anomaly_clusters,
        classifiers,
    })
}

/// 1 / (d · variance over all entries of the standardized data).
pub fn default_gamma(z: &[Vec<f64>]) -> f64 {
    let d = z.first().map_or(1, |s| s.len()).max(1) as f64;
    let n = z.iter().map(|s| s.len()).sum::<usize>() as f64;
    let mean = z.iter().flatten().sum::<f64>() / n;
    let var = z.iter().flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var > 1e-12 {
        1.0 / (d * var)
    } else {
        1.0 / d
    }
}

/// Ionescu-style baseline: k normal clusters, no anomalous supervision.
pub fn baseline_normal_only(normal: &[Vec<f64>], k: usize, cfg: &InferenceConfig) -> Result<InferenceModel> {
    ensemble_fit(
        normal,
        &[],
        &InferenceConfig {
            k1: k,
            k2: 0,
            ..cfg.clone()
        },
    )
}

impl InferenceModel {
    pub fn dims(&self) -> usize {
        self.standardizer.dims()
    }

    pub fn k1(&self) -> usize {
        self.normal_clusters.k()
    }

    pub fn k2(&self) -> usize {
        self.anomaly_clusters.k()
    }

    pub fn scores(&self, x: &[f64]) -> Result<EnsembleScores> {
        let z = self.standardizer.apply(x)?;
        let probs: Vec<f64> = self.classifiers.iter().map(|c| c.probability(&z)).collect();
        let (normal, anomalous) = probs.split_at(self.k1());
        Ok(EnsembleScores {
            alpha: normal.iter().copied().fold(0.0, f64::max),
            beta: anomalous.iter().copied().fold(0.0, f64::max),
            normal: normal.to_vec(),
            anomalous: anomalous.to_vec(),
        })
    }

    pub fn verdict(&self, x: &[f64]) -> Result<ObjectVerdict> {
        let s = self.scores(x)?;
        let mut v = classify_object(s.alpha, s.beta, self.config.mu, self.config.eta);
        if self.mode == ScoreMode::NormalOnly {
            v.score = 1.0 - s.alpha;
        }
        Ok(v)
    }

    /// Same model with different thresholds.
    pub fn with_thresholds(&self, mu: f64, eta: f64) -> Self {
        let mut m = self.clone();
        m.config.mu = mu;
        m.config.eta = eta;
        m
    }

    pub fn to_tensors(&self, prefix: &str) -> Vec<NamedTensor> {
        let d = self.dims();
        let mut out = vec![
            NamedTensor::from_f64(format!("{prefix}.standardize.mean"), vec![d], &self.standardizer.mean),
            NamedTensor::from_f64(format!("{prefix}.standardize.scale"), vec![d], &self.standardizer.scale),
            NamedTensor::scalar(
                format!("{prefix}.mode"),
                match self.mode {
                    ScoreMode::Ensemble => 0.0,
                    ScoreMode::NormalOnly => 1.0,
                },
            ),
        ];
        for (name, cm) in [("normal_centers", &self.normal_clusters), ("anomaly_centers", &self.anomaly_clusters)] {
            out.push(NamedTensor::from_f64(
                format!("{prefix}.{name}"),
                vec![cm.k(), d],
                &cm.centers.concat(),
            ));
        }
        for (i, c) in self.classifiers.iter().enumerate() {
            let p = format!("{prefix}.svm{i}");
            let (kind, gamma) = match c.svm.kernel {
                Kernel::Linear => (0.0, 0.0),
                Kernel::Rbf { gamma } => (1.0, gamma),
            };
            out.push(NamedTensor::from_f64(
                format!("{p}.support"),
                vec![c.svm.support.len(), d],
                &c.svm.support.concat(),
            ));
            out.push(NamedTensor::from_f64(format!("{p}.coef"), vec![c.svm.coef.len()], &c.svm.coef));
            out.push(NamedTensor::from_f64(
                format!("{p}.params"),
                vec![5],
                &[c.svm.bias, c.platt.a, c.platt.b, kind, gamma],
            ));
        }
        out
    }

    pub fn from_tensors(config: &InferenceConfig, prefix: &str, map: &TensorMap) -> Result<Self> {
        let (shape, mean) = map.vec(&format!("{prefix}.standardize.mean"))?;
        if shape.len() != 1 {
            return Err(Error::Format("standardization mean must be 1-D".into()));
        }
        let d = shape[0];
        let scale = map.array1(&format!("{prefix}.standardize.scale"), d)?.to_vec();
        let mode = match map.scalar(&format!("{prefix}.mode"))? {
            m if m == 0.0 => ScoreMode::Ensemble,
            m if m == 1.0 => ScoreMode::NormalOnly,
            m => return Err(Error::Format(format!("unknown score mode {m}"))),
        };
        let centers = |name: &str, k: usize| -> Result<ClusterModel> {
            let a = map.array2(&format!("{prefix}.{name}"), (k, d))?;
            Ok(ClusterModel {
                centers: a.outer_iter().map(|r| r.to_vec()).collect(),
            })
        };
        let normal_clusters = centers("normal_centers", config.k1)?;
        let anomaly_clusters = centers("anomaly_centers", config.k2)?;
        let mut classifiers = Vec::with_capacity(config.k1 + config.k2);
        for i in 0..config.k1 + config.k2 {
            let p = format!("{prefix}.svm{i}");
            let (cshape, coef) = map.vec(&format!("{p}.coef"))?;
            if cshape.len() != 1 {
                return Err(Error::Format(format!("{p}.coef must be 1-D")));
            }
            let support = map.array2(&format!("{p}.support"), (coef.len(), d))?;
            let params = map.array1(&format!("{p}.params"), 5)?;
            let kernel = match params[3] {
                k if k == 0.0 => Kernel::Linear,
                k if k == 1.0 => Kernel::Rbf { gamma: params[4] },
                k => return Err(Error::Format(format!("unknown kernel code {k}"))),
            };
            classifiers.push(CalibratedSvm {
                svm: SvmModel {
                    kernel,
                    support: support.outer_iter().map(|r| r.to_vec()).collect(),
                    coef,
                    bias: params[0],
                },
                platt: Platt {
                    a: params[1],
                    b: params[2],
                },
            });
        }
        Ok(Self {
            config: config.clone(),
            mode,
            standardizer: Standardizer { mean, scale },
            normal_clusters,
            anomaly_clusters,
            classifiers,
        })
    }
}
