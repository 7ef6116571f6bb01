//! Training with early stopping, experiment grids over seeds, and method comparison.

mod experiment;
mod toys;
mod train;

pub use experiment::{
    compare_methods, run_experiment, CellResult, Comparison, DataSpec, ExperimentSpec, ExperimentSummary, Grid, MethodSpec,
};
pub use toys::{toy_corr, toy_mmd, ToyCorrResult, ToyMmdConfig, ToyMmdResult};
pub use train::{evaluate, train, train_with_provider, PsiConfig, RunRecord, TrainConfig};
