use thiserror::Error;

use crate::eval::EvalError;
use crate::features::FeatureError;
use crate::format::FormatError;
use crate::ftrl::ModelError;
use crate::policy::PolicyError;
use crate::synth::SynthError;

/// Any failure of the pipeline, wrapping the error of the stage that raised it.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
