//! Basis-expanded group-lasso regression for exposure mixtures, with
//! false-discovery-rate controlled selection of exposures and pairwise
//! interactions by a debiased group lasso or by group knockoffs.

pub mod basis;
pub mod debias;
pub mod error;
pub mod grouplasso;
pub mod inference;
pub mod knockoff;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod sim;

pub use basis::{build_design, BasisTransform, ExpandedDesign, Group, GroupKind, RawData};
pub use debias::{select_dbl, DblConfig, NodewiseConfig, NodewiseLambda};
pub use error::{Error, Result};
pub use grouplasso::{CvConfig, CvRule, GroupLassoFit, SolverOptions};
pub use inference::{interaction_surface, predict_f, response_curve, MixturePrediction};
pub use knockoff::{run_kfull, run_ksplit, KnockoffConfig};
pub use metrics::{ReplicateMetrics, TruthSpec};
pub use pipeline::{run_method, AnalysisConfig};
pub use report::{Method, SelectionReport, SplitPlan};
pub use sim::{generate, run_experiment, ScenarioId, ScenarioSpec};
