//! Learning ad-placement policies from logged bandit feedback.
//!
//! The pipeline reads candidate sets in the pipe-delimited counterfactual log
//! format ([`format`]), turns every candidate into a sparse binary vector
//! ([`features`]), trains FTRL-Proximal logistic models on the logged
//! candidates ([`ftrl`], [`train`]), averages an ensemble of such models and
//! post-processes the scores into a peaked policy ([`policy`]), and finally
//! estimates the click rate of that policy with inverse propensity scoring
//! ([`eval`]). [`synth`] generates logs with a known ground truth so every
//! stage can be checked end to end.

pub mod eval;
pub mod features;
pub mod format;
pub mod ftrl;
pub mod math;
pub mod policy;
pub mod synth;
pub mod train;

mod error;

pub use error::Error;
pub use eval::{ips_evaluate, softmax, split_assign, Denominator, EvalConfig, EvalReport, SplitPart};
pub use features::{FeatureMode, FeatureVector, FeaturizerConfig};
pub use format::{open_input, Candidate, CandidateSet, Feedback, SetReader};
pub use ftrl::{FtrlModel, FtrlParams};
pub use policy::{post_process, Ensemble, PolicyConfig, ScoreSpace, ScoredSet};
pub use synth::{ClickModel, LoggingPolicy, SynthConfig};
pub use train::{train_parallel, Example, TrainConfig, TrainStats};

pub type Result<T, E = Error> = std::result::Result<T, E>;
