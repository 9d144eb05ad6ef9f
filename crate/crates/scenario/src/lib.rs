//! Scenario machinery around a trained generator: autoregressive projection
//! into trajectory ensembles, per-pixel evaluation metrics, and permutation
//! importance.

mod error;
pub mod evaluation;
pub mod explain;
pub mod projection;

pub use error::{Result, ScenarioError};
pub use evaluation::{compute_metrics, series_metrics, summarize, MetricRaster, SummaryRow};
pub use explain::{
    covariate_importance, covariate_importance_with_perms, spatial_importance, CovariateScore,
    ImportanceReport, ImportanceRequest,
};
pub use projection::{project, project_traced, ProjectionRequest, StepTrace, TrajectoryEnsemble};
