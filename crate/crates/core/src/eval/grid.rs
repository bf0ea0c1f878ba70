use std::io::Write;

use serde::{Deserialize, Serialize};

use super::roc::{align_frames, frame_auc};
use crate::error::{Error, Result};
use crate::inference::{classify_object, ensemble_fit, EnsembleScores, InferenceConfig, ScoreMode};
use crate::features::select_columns;
use crate::par;
use crate::pipeline::{aggregate_frames, training_pools, PreparedSplit};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub k1: Vec<usize>,
    pub k2: Vec<usize>,
    pub n: Vec<usize>,
    pub mu: Vec<f64>,
    pub eta: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            k1: vec![2, 4, 6, 8],
            k2: vec![2, 3, 4],
            n: vec![0, 20, 40, 60, 80, 100],
            mu: vec![0.4, 0.5, 0.6, 0.7, 0.8],
            eta: vec![0.5, 0.6, 0.7, 0.8],
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.k1.len(), self.k2.len(), self.n.len(), self.mu.len(), self.eta.len()].contains(&0) {
            return Err(Error::Config("every grid axis needs at least one value".into()));
        }
        if self.k1.contains(&0) {
            return Err(Error::Config("K1 grid values must be >= 1".into()));
        }
        if self.mu.iter().chain(&self.eta).any(|v| !(*v > 0.0 && *v < 1.0)) {
            return Err(Error::Config("threshold grid values must lie in (0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub k1: usize,
    pub k2: usize,
    pub n: usize,
    pub mu: f64,
    pub eta: f64,
    /// Frame AUC of the continuous score; independent of μ and η.
    pub auc: f64,
    /// Share of anomalous frames that raise an alarm at (μ, η).
    pub alarm_tpr: f64,
    /// Share of normal frames that raise an alarm at (μ, η).
    pub alarm_fpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedCell {
    pub k1: usize,
    pub k2: usize,
    pub n: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchReport {
    pub rows: Vec<GridRow>,
    pub skipped: Vec<SkippedCell>,
    pub selected: Option<usize>,
    pub seed: u64,
}

/// Index of the best row: highest AUC, then smallest K1+K2, then smallest
/// (μ, η), then table order.
pub fn select_best(rows: &[GridRow]) -> Option<usize> {
    (0..rows.len()).min_by(|&a, &b| {
        let (x, y) = (&rows[a], &rows[b]);
        y.auc
            .total_cmp(&x.auc)
            .then((x.k1 + x.k2).cmp(&(y.k1 + y.k2)))
            .then(x.mu.total_cmp(&y.mu))
            .then(x.eta.total_cmp(&y.eta))
            .then(a.cmp(&b))
    })
}

/// Fits once per (K1, K2, N) cell and sweeps μ, η on the stored α, β.
/// A zero N forces K2 = 0.
pub fn grid_search(
    train: &PreparedSplit,
    test: &PreparedSplit,
    columns: &[usize],
    base: &InferenceConfig,
    grid: &GridConfig,
    max_normal: usize,
    seed: u64,
) -> Result<GridSearchReport> {
    grid.validate()?;
    let mut cells = Vec::new();
    for &k1 in &grid.k1 {
        for &n in &grid.n {
            if n == 0 {
                cells.push((k1, 0, 0));
            } else {
                cells.extend(grid.k2.iter().map(|&k2| (k1, k2, n)));
            }
        }
    }
    cells.sort_unstable();
    cells.dedup();

    let test_x: Vec<Vec<f64>> = test.rows.iter().map(|r| select_columns(&r.descriptor, columns)).collect();
    let outcomes = par::map(&cells, |&(k1, k2, n)| -> Result<Vec<GridRow>> {
        let pools = training_pools(&train.rows, &train.anomalous, columns, max_normal, n, rng::mix(seed, n as u64))?;
        let cfg = InferenceConfig {
            k1,
            k2,
            seed,
            ..base.clone()
        };
        let model = ensemble_fit(&pools.normal, &pools.anomalous, &cfg)?;
        let scores: Vec<EnsembleScores> = test_x.iter().map(|x| model.scores(x)).collect::<Result<_>>()?;
        let mut rows = Vec::new();
        let mut auc = None;
        for &mu in &grid.mu {
            for &eta in &grid.eta {
                let verdicts: Vec<_> = scores
                    .iter()
                    .map(|s| {
                        let mut v = classify_object(s.alpha, s.beta, mu, eta);
                        if model.mode == ScoreMode::NormalOnly {
                            v.score = 1.0 - s.alpha;
                        }
                        v
                    })
                    .collect();
                let frames = aggregate_frames(&test.rows, &verdicts, &test.frame_counts);
                let auc = match auc {
                    Some(a) => a,
                    None => *auc.insert(frame_auc(&frames, &test.frame_labels)?),
                };
                let aligned = align_frames(&frames, &test.frame_labels);
                let rate = |want: bool| {
                    let total = aligned.iter().filter(|f| f.label == want).count();
                    let hits = aligned.iter().filter(|f| f.label == want && f.alarm).count();
                    if total == 0 {
                        0.0
                    } else {
                        hits as f64 / total as f64
                    }
                };
                rows.push(GridRow {
                    k1,
                    k2,
                    n,
                    mu,
                    eta,
                    auc,
                    alarm_tpr: rate(true),
                    alarm_fpr: rate(false),
                });
            }
        }
        Ok(rows)
    });
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (&(k1, k2, n), out) in cells.iter().zip(outcomes) {
        match out {
            Ok(r) => rows.extend(r),
            Err(e) => skipped.push(SkippedCell {
                k1,
                k2,
                n,
                reason: e.to_string(),
            }),
        }
    }
    Ok(GridSearchReport {
        selected: select_best(&rows),
        rows,
        skipped,
        seed,
    })
}

impl GridSearchReport {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "k1,k2,n,mu,eta,auc,alarm_tpr,alarm_fpr,selected")?;
        for (i, r) in self.rows.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{:.6},{:.6},{:.6},{}",
                r.k1,
                r.k2,
                r.n,
                r.mu,
                r.eta,
                r.auc,
                r.alarm_tpr,
                r.alarm_fpr,
                u8::from(self.selected == Some(i))
            )?;
        }
        Ok(())
    }

    pub fn selected_row(&self) -> Option<&GridRow> {
        self.selected.map(|i| &self.rows[i])
    }
}
