//! Metrics, experiment orchestration and result serialization.

mod experiment;
mod metrics;

pub use experiment::{
    evaluate_config, load_summary, reference_cotrain, reference_learners, run_experiment, Ablation,
    AblationRow, DatasetSource, EvalResult, GzslSetting, LearnerAcc, OodSummary, Pipeline,
    RunConfig, ALPHA_GRID, OUT_DIR_ENV, VERSION,
};

pub use metrics::{gzsl_scores, harmonic_mean, per_class_acc, ClassAccuracy, GzslScores};
