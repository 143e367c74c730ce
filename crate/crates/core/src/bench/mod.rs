//! Analytic companding baselines and rate-distortion evaluation harnesses.

pub mod compand;
pub mod experiments;
pub mod special;

pub use compand::{chunk_values, eval_companding, Companding, CompandingCodec, SampleSource};
pub use experiments::{
    paired_csv, paired_level_eval, rd_csv, rd_curve, toy_csv, toy_experiment, DistortionKind,
    RdPoint, ToyRow,
};
pub use special::{erf, erfc, normal_cdf, normal_quantile};
