//! Ensemble scoring and score post-processing.
//!
//! The ensemble averages the click probabilities of K models. The
//! post-processing then maps every score `s` of a candidate set to
//! `sigmoid(s) * C` and adds `M` to the largest result, which makes the
//! softmax taken by the metric put almost all mass on the top candidate while
//! near-ties stay smooth.
//!
//! Scores fed to the post-processing are probabilities by default, so the
//! sigmoid is applied on top of an already squashed value. This compresses
//! the range but never changes the ranking. `ScoreSpace::Margin` averages
//! raw margins instead and feeds those.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::features::FeaturizerConfig;
use crate::format::CandidateSet;
use crate::ftrl::{FtrlModel, ModelError};
use crate::math::{argmax_first, sigmoid};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("an ensemble needs at least one model")]
    EmptyEnsemble,
    #[error("ensemble models disagree on dimension ({0} vs {1})")]
    MixedDimensions(u32, u32),
    #[error("cannot post-process an empty score list")]
    EmptyScores,
    #[error("score {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("invalid policy configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed prediction line {0:?}")]
    BadPredictionLine(String),
    #[error("unknown score space {0:?} (expected prob or margin)")]
    UnknownScoreSpace(String),
}

/// Which ensemble output is passed to the post-processing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreSpace {
    /// Mean of the per-model probabilities.
    #[default]
    Probability,
    /// Mean of the per-model margins.
    Margin,
}

impl FromStr for ScoreSpace {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prob" => Ok(Self::Probability),
            "margin" => Ok(Self::Margin),
            other => Err(PolicyError::UnknownScoreSpace(other.to_string())),
        }
    }
}

impl fmt::Display for ScoreSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Probability => "prob",
            Self::Margin => "margin",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig {
    pub scale_c: f64,
    pub boost_m: f64,
    pub ensemble_k: usize,
    pub score_space: ScoreSpace,
}

impl Default for PolicyConfig {
    /// `C = 850100, M = 15, K = 10`, probability space.
    fn default() -> Self {
        Self {
            scale_c: 850_100.0,
            boost_m: 15.0,
            ensemble_k: 10,
            score_space: ScoreSpace::Probability,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.scale_c.is_finite() && self.scale_c > 0.0) {
            return Err(PolicyError::InvalidConfig(format!(
                "C must be > 0, got {}",
                self.scale_c
            )));
        }
        if !(self.boost_m.is_finite() && self.boost_m >= 0.0) {
            return Err(PolicyError::InvalidConfig(format!(
                "M must be >= 0, got {}",
                self.boost_m
            )));
        }
        if self.ensemble_k == 0 {
            return Err(PolicyError::InvalidConfig("K must be >= 1".into()));
        }
        Ok(())
    }
}

/// Sigmoid, scale by `C`, then add `M` to the first maximum.
pub fn post_process(scores: &[f64], config: &PolicyConfig) -> Result<Vec<f64>, PolicyError> {
    if scores.is_empty() {
        return Err(PolicyError::EmptyScores);
    }
    if let Some((index, &value)) = scores.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(PolicyError::NonFinite { index, value });
    }
    // Argmax of the raw scores: sigmoid can saturate distinct scores to one value.
    let best = argmax_first(scores).expect("non-empty");
    let mut out: Vec<f64> = scores.iter().map(|&s| sigmoid(s) * config.scale_c).collect();
    out[best] += config.boost_m;
    Ok(out)
}

/// Mean probability of `models` on `x`.
pub fn average_predict(models: &[FtrlModel], x: &crate::FeatureVector) -> Result<f64, Error> {
    if models.is_empty() {
        return Err(PolicyError::EmptyEnsemble.into());
    }
    let mut sum = 0.0;
    for m in models {
        sum += m.predict(x)?;
    }
    Ok(sum / models.len() as f64)
}

/// K models sharing one dimension.
#[derive(Debug, Clone)]
pub struct Ensemble {
    models: Vec<FtrlModel>,
}

impl Ensemble {
    pub fn new(models: Vec<FtrlModel>) -> Result<Self, PolicyError> {
        let first = models.first().ok_or(PolicyError::EmptyEnsemble)?.dimension();
        if let Some(m) = models.iter().find(|m| m.dimension() != first) {
            return Err(PolicyError::MixedDimensions(first, m.dimension()));
        }
        Ok(Self { models })
    }

    pub fn models(&self) -> &[FtrlModel] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn dimension(&self) -> u32 {
        self.models[0].dimension()
    }

    pub fn average_predict(&self, x: &crate::FeatureVector) -> Result<f64, Error> {
        average_predict(&self.models, x)
    }

    pub fn average_margin(&self, x: &crate::FeatureVector) -> Result<f64, ModelError> {
        let mut sum = 0.0;
        for m in &self.models {
            sum += m.margin(x)?;
        }
        Ok(sum / self.models.len() as f64)
    }

    /// Raw ensemble score of `x` in the requested space.
    pub fn score(&self, x: &crate::FeatureVector, space: ScoreSpace) -> Result<f64, Error> {
        match space {
            ScoreSpace::Probability => self.average_predict(x),
            ScoreSpace::Margin => Ok(self.average_margin(x)?),
        }
    }

    /// Raw ensemble scores of every candidate, in candidate order.
    pub fn raw_scores(
        &self,
        set: &CandidateSet,
        features: &FeaturizerConfig,
        space: ScoreSpace,
    ) -> Result<Vec<f64>, Error> {
        set.candidates()
            .iter()
            .map(|c| self.score(&features.featurize(c)?, space))
            .collect()
    }

    /// Featurize, average, post-process.
    pub fn score_set(
        &self,
        set: &CandidateSet,
        features: &FeaturizerConfig,
        policy: &PolicyConfig,
    ) -> Result<ScoredSet, Error> {
        let raw = self.raw_scores(set, features, policy.score_space)?;
        Ok(ScoredSet {
            set_id: set.id(),
            scores: post_process(&raw, policy)?,
        })
    }
}

/// Final policy scores of one candidate set.
///
/// Text form: `set_id;score_0,score_1,...` with shortest round-trip floats.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub set_id: u64,
    pub scores: Vec<f64>,
}

impl fmt::Display for ScoredSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{};", self.set_id)?;
        for (i, s) in self.scores.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

impl FromStr for ScoredSet {
    type Err = PolicyError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let bad = || PolicyError::BadPredictionLine(line.to_string());
        let (id, scores) = line.trim().split_once(';').ok_or_else(bad)?;
        let set_id = id.trim().parse().map_err(|_| bad())?;
        let scores = scores
            .split(',')
            .map(|s| match s.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(bad()),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ScoredSet { set_id, scores })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;
    use crate::format::{Candidate, Feedback};
    use crate::ftrl::FtrlParams;

    fn cfg(c: f64, m: f64) -> PolicyConfig {
        PolicyConfig {
            scale_c: c,
            boost_m: m,
            ..PolicyConfig::default()
        }
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-6)
    }

    #[test]
    fn single_candidate() {
        assert_eq!(post_process(&[0.0], &cfg(10.0, 2.0)).unwrap(), vec![7.0]);
    }

    #[test]
    fn two_candidates() {
        let out = post_process(&[0.0, 1.0], &cfg(10.0, 2.0)).unwrap();
        assert!(close(&out, &[5.0, 9.310586]), "{out:?}");
    }

    #[test]
    fn tie_goes_to_first() {
        let out = post_process(&[3.0, 3.0], &cfg(1.0, 1.0)).unwrap();
        assert!(close(&out, &[1.952574, 0.952574]), "{out:?}");
    }

    #[test]
    fn boost_follows_raw_scores_under_saturation() {
        let raw = [40.0, 40.5];
        assert_eq!(sigmoid(raw[0]), sigmoid(raw[1]));
        let out = post_process(&raw, &cfg(850_100.0, 15.0)).unwrap();
        assert!(out[1] > out[0]);
    }

    #[test]
    fn rejects_bad_scores() {
        assert_eq!(post_process(&[], &cfg(1.0, 1.0)), Err(PolicyError::EmptyScores));
        assert!(matches!(
            post_process(&[0.0, f64::NAN], &cfg(1.0, 1.0)),
            Err(PolicyError::NonFinite { index: 1, .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(PolicyConfig::default().validate().is_ok());
        assert!(cfg(0.0, 1.0).validate().is_err());
        assert!(cfg(1.0, -1.0).validate().is_err());
        let k0 = PolicyConfig {
            ensemble_k: 0,
            ..PolicyConfig::default()
        };
        assert!(k0.validate().is_err());
    }

    fn model_with_weight(index: u32, z: f32, dim: u32) -> FtrlModel {
        let params = FtrlParams::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let mut zs = vec![0.0; dim as usize];
        zs[index as usize] = z;
        FtrlModel::from_parts(params, zs, vec![0.0; dim as usize]).unwrap()
    }

    #[test]
    fn average_of_probabilities() {
        // weight = -z / beta with alpha = beta = 1, n = 0
        let x = FeatureVector::new(vec![0], 2).unwrap();
        let a = model_with_weight(0, -(0.2f64 / 0.8).ln() as f32, 2);
        let b = model_with_weight(0, -(0.8f64 / 0.2).ln() as f32, 2);
        assert!((a.predict(&x).unwrap() - 0.2).abs() < 1e-6);
        let avg = average_predict(&[a.clone(), b], &x).unwrap();
        assert!((avg - 0.5).abs() < 1e-6);
        assert_eq!(
            average_predict(std::slice::from_ref(&a), &x).unwrap(),
            a.predict(&x).unwrap()
        );
        let fresh: Vec<_> = (0..10)
            .map(|_| FtrlModel::new(FtrlParams::default(), 2).unwrap())
            .collect();
        assert_eq!(average_predict(&fresh, &x).unwrap(), 0.5);
    }

    #[test]
    fn average_errors() {
        let x = FeatureVector::new(vec![0], 2).unwrap();
        assert!(matches!(
            average_predict(&[], &x),
            Err(Error::Policy(PolicyError::EmptyEnsemble))
        ));
        let m = FtrlModel::new(FtrlParams::default(), 3).unwrap();
        assert!(matches!(average_predict(&[m], &x), Err(Error::Model(_))));
        let a = FtrlModel::new(FtrlParams::default(), 3).unwrap();
        let b = FtrlModel::new(FtrlParams::default(), 4).unwrap();
        assert_eq!(
            Ensemble::new(vec![a, b]).unwrap_err(),
            PolicyError::MixedDimensions(3, 4)
        );
        assert_eq!(Ensemble::new(vec![]).unwrap_err(), PolicyError::EmptyEnsemble);
    }

    fn set_of(features: &[&[u32]]) -> CandidateSet {
        let candidates = features
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let fb = (i == 0).then(|| Feedback::clicked(2.0).unwrap());
                Candidate::new(f.iter().map(|&id| (id, 1.0)).collect(), fb).unwrap()
            })
            .collect();
        CandidateSet::new(9, candidates).unwrap()
    }

    #[test]
    fn score_set_single_candidate() {
        let ens = Ensemble::new(vec![FtrlModel::new(FtrlParams::default(), 8).unwrap()]).unwrap();
        let scored = ens
            .score_set(&set_of(&[&[1]]), &FeaturizerConfig::binary(8), &PolicyConfig::default())
            .unwrap();
        assert_eq!(scored.set_id, 9);
        assert_eq!(scored.scores, vec![sigmoid(0.5) * 850_100.0 + 15.0]);
    }

    #[test]
    fn score_set_equal_margins_boosts_first() {
        let ens = Ensemble::new(vec![FtrlModel::new(FtrlParams::default(), 8).unwrap(); 3]).unwrap();
        let scored = ens
            .score_set(
                &set_of(&[&[1], &[2], &[3]]),
                &FeaturizerConfig::binary(8),
                &PolicyConfig::default(),
            )
            .unwrap();
        assert!(scored.scores[0] > scored.scores[1]);
        assert_eq!(scored.scores[1], scored.scores[2]);
    }

    #[test]
    fn margin_space_uses_margins() {
        let m = model_with_weight(1, -1.0, 4);
        let ens = Ensemble::new(vec![m]).unwrap();
        let x = FeatureVector::new(vec![1], 4).unwrap();
        assert!((ens.score(&x, ScoreSpace::Margin).unwrap() - 1.0).abs() < 1e-12);
        assert!((ens.score(&x, ScoreSpace::Probability).unwrap() - sigmoid(1.0)).abs() < 1e-12);
    }

    #[test]
    fn scored_set_text_round_trip() {
        let s = ScoredSet {
            set_id: 17,
            scores: vec![425050.0, 850115.0, 0.1, 1e-7],
        };
        let text = s.to_string();
        assert!(text.starts_with("17;425050,850115,0.1,"));
        assert_eq!(text.parse::<ScoredSet>().unwrap(), s);
        assert!("17".parse::<ScoredSet>().is_err());
        assert!("17;1,x".parse::<ScoredSet>().is_err());
        assert!("x;1".parse::<ScoredSet>().is_err());
        assert!("17;".parse::<ScoredSet>().is_err());
    }

    #[test]
    fn score_space_parse() {
        assert_eq!("prob".parse::<ScoreSpace>().unwrap(), ScoreSpace::Probability);
        assert_eq!("margin".parse::<ScoreSpace>().unwrap(), ScoreSpace::Margin);
        assert!("logit".parse::<ScoreSpace>().is_err());
    }
}
