//! Frame-level ROC/AUC, PCA projection, grid search and experiment runs.

pub mod experiment;
pub mod grid;
pub mod pca;
pub mod roc;
pub mod svg;

pub use experiment::{fit_and_score, run_experiment, ExperimentConfig, ExperimentName, ExperimentReport};
pub use grid::{grid_search, GridConfig, GridRow, GridSearchReport};
pub use pca::{pca_project_2d, Pca2d};
pub use roc::{auc_pairwise_oracle, frame_auc, roc_auc, RocCurve};
