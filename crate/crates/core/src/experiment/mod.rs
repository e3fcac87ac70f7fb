//! Config-driven orchestration of the full study, plus reports and figures.

mod config;
mod figures;
mod report;
mod run;

pub use config::{DataSpec, EvalSpec, ExperimentConfig, MaskSource};
pub use figures::{emit_figures, render_figure_from_data};
pub use report::{
    attack_result_text, curve_table, parse_attack_records, roc_table, runs_table, CurvePoint, Report,
    Versions,
};
pub use run::{
    evaluate_checkpoint, prepare_run_data, run_experiment, run_experiment_with, synthesize_population,
    EvalContext, RunData,
};

use thiserror::Error;

/// Stage-tagged failure: every pipeline error names the stage it came from.
#[derive(Debug, Error)]
#[error("stage {stage}: {message}")]
pub struct ExperimentError {
    pub stage: &'static str,
    pub message: String,
}

impl ExperimentError {
    pub fn stage(stage: &'static str, message: impl Into<String>) -> Self {
        Self { stage, message: message.into() }
    }
}
