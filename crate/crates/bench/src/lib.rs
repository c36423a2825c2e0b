//! Shared inputs for the benchmarks.

use adplace_core::format::{serialize_set, CandidateSet};
use adplace_core::{Example, FeaturizerConfig, SynthConfig};

/// Synthetic log with `n_sets` sets of 10 candidates over 8 one-hot fields.
pub fn synthetic_sets(n_sets: u64, seed: u64) -> Vec<CandidateSet> {
    SynthConfig::with_random_clicks(n_sets, 10, 8, 64, 1.0, -3.0, seed)
        .generate()
        .expect("valid config")
        .map(|s| s.expect("uniform logging never degenerates"))
        .collect()
}

/// The same log rendered to its text format.
pub fn synthetic_log(n_sets: u64, seed: u64) -> String {
    synthetic_sets(n_sets, seed).iter().map(serialize_set).collect()
}

/// Logged candidates of a synthetic log as training examples.
pub fn synthetic_examples(n_sets: u64, seed: u64, features: &FeaturizerConfig) -> Vec<Example> {
    synthetic_sets(n_sets, seed)
        .iter()
        .map(|s| Example::from_set(s, features).expect("ids fit the feature space"))
        .collect()
}
