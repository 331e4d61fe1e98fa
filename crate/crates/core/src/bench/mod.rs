//! Baselines, synthetic data and the experiment matrix.

mod baselines;
mod matrix;
mod synth;

pub use baselines::{
    hst, hst_mpc, kmeanspp_baseline, kmedianpp_baseline, private_lloyd, random_in_ball, HstParams,
    LloydParams, LloydRun,
};
pub use matrix::{
    run_matrix, Aggregate, Algorithm, DatasetRef, ExperimentSpec, Failure, RunReport, RunRow,
};
pub use synth::{gen_synthetic, SyntheticData, SyntheticKind, SyntheticParams};
