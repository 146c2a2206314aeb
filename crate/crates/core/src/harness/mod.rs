//! Synthetic data generation and experiment orchestration.

pub mod experiment;
pub mod synth;

pub use experiment::{
    ablation_on, evaluate_matches, evaluate_samples, load_matches, prematch_on, run_ablation,
    run_experiment, run_prematch, AblationReport, BundleEvaluation, DataSource, EvalReport,
    ExperimentConfig, ModelBundle, ModelEntry,
};
pub use synth::{bayes_accuracy, synth_generate, BayesEstimate, Player, SynthConfig};
