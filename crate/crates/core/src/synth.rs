//! Synthetic logged bandit feedback with a known ground truth.
//!
//! Candidates are one-hot over `n_fields` categorical fields of
//! `field_cardinality` values each, so the feature space has
//! `n_fields * field_cardinality` coordinates and every candidate has exactly
//! `n_fields` active features. The click probability of a candidate is
//! `sigmoid(bias + sum of its feature weights)`. One candidate per set is
//! drawn from the logging policy, its propensity is recorded as the inverse
//! of its logging probability, and its click is sampled.
//!
//! Because candidates are i.i.d. draws from a finite set of feature
//! combinations, the expected click rate of the policy that always picks the
//! candidate with the highest linear score has a closed form (see
//! [`SynthConfig::argmax_policy_value`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::format::{Candidate, CandidateSet, Feedback};
use crate::math::sigmoid;

/// Feature combinations enumerated by [`SynthConfig::argmax_policy_value`].
const MAX_ENUMERATION: u64 = 1 << 22;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
    #[error("set {set_id}: logging policy gives candidate {arm} probability {probability}")]
    DegenerateLogging { set_id: u64, arm: usize, probability: f64 },
    #[error("{0} feature combinations are too many to enumerate")]
    TooManyCombinations(u64),
}

/// Distribution the logging system drew the displayed candidate from.
#[derive(Debug, Clone, PartialEq)]
pub enum LoggingPolicy {
    Uniform,
    /// Fixed probability per candidate position.
    Positional(Vec<f64>),
    /// Softmax over `weights . x / temperature`.
    Softmax {
        weights: Vec<f64>,
        temperature: f64,
    },
}

impl LoggingPolicy {
    fn probabilities(&self, candidates: &[Candidate], out: &mut Vec<f64>) {
        out.clear();
        let k = candidates.len();
        match self {
            Self::Uniform => out.extend(std::iter::repeat_n(1.0 / k as f64, k)),
            Self::Positional(p) => out.extend_from_slice(p),
            Self::Softmax { weights, temperature } => {
                out.extend(candidates.iter().map(|c| linear_score(weights, c) / temperature));
                let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for s in out.iter_mut() {
                    *s = (*s - max).exp();
                }
                let total: f64 = out.iter().sum();
                for s in out.iter_mut() {
                    *s /= total;
                }
            }
        }
    }
}

fn linear_score(weights: &[f64], candidate: &Candidate) -> f64 {
    candidate
        .features()
        .iter()
        .map(|&(id, v)| weights.get(id as usize).copied().unwrap_or(0.0) * v)
        .sum()
}

/// Logistic click model, linear in the features.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickModel {
    pub bias: f64,
    pub weights: Vec<f64>,
}

impl ClickModel {
    /// Weights uniform in `[-spread, spread]`.
    pub fn random(dimension: usize, spread: f64, bias: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..dimension).map(|_| rng.random_range(-spread..=spread)).collect();
        Self { bias, weights }
    }

    /// `weights . x`, without the bias. Ranking candidates by this score is
    /// ranking them by click probability.
    pub fn score(&self, candidate: &Candidate) -> f64 {
        linear_score(&self.weights, candidate)
    }

    pub fn click_probability(&self, candidate: &Candidate) -> f64 {
        sigmoid(self.bias + self.score(candidate))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_sets: u64,
    pub candidates_per_set: usize,
    pub n_fields: u32,
    pub field_cardinality: u32,
    pub seed: u64,
    pub logging: LoggingPolicy,
    pub click_model: ClickModel,
}

impl SynthConfig {
    /// Uniform logging and a random click model with the given bias.
    pub fn with_random_clicks(
        n_sets: u64,
        candidates_per_set: usize,
        n_fields: u32,
        field_cardinality: u32,
        spread: f64,
        bias: f64,
        seed: u64,
    ) -> Self {
        let dimension = n_fields as usize * field_cardinality as usize;
        Self {
            n_sets,
            candidates_per_set,
            n_fields,
            field_cardinality,
            seed,
            logging: LoggingPolicy::Uniform,
            click_model: ClickModel::random(dimension, spread, bias, seed ^ 0x5eed_c11c),
        }
    }

    pub fn dimension(&self) -> u32 {
        self.n_fields * self.field_cardinality
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let invalid = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_sets == 0 || self.candidates_per_set == 0 || self.n_fields == 0 || self.field_cardinality == 0 {
            return invalid("set count, candidates per set, fields and cardinality must be positive".into());
        }
        if self.n_fields.checked_mul(self.field_cardinality).is_none() {
            return invalid("dimension overflows u32".into());
        }
        if self.click_model.weights.len() != self.dimension() as usize {
            return invalid(format!(
                "click model has {} weights for dimension {}",
                self.click_model.weights.len(),
                self.dimension()
            ));
        }
        match &self.logging {
            LoggingPolicy::Uniform => {}
            LoggingPolicy::Positional(p) => {
                if p.len() != self.candidates_per_set {
                    return invalid(format!(
                        "{} positional probabilities for {} candidates",
                        p.len(),
                        self.candidates_per_set
                    ));
                }
                if (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 || p.iter().any(|v| v.is_nan() || *v < 0.0) {
                    return invalid("positional probabilities must be >= 0 and sum to 1".into());
                }
            }
            LoggingPolicy::Softmax { weights, temperature } => {
                if weights.len() != self.dimension() as usize {
                    return invalid("softmax logging weights must match the dimension".into());
                }
                if !(*temperature > 0.0 && temperature.is_finite()) {
                    return invalid("softmax temperature must be > 0".into());
                }
            }
        }
        Ok(())
    }

    /// Streams the synthetic candidate sets. Ids increase with random gaps.
    pub fn generate(&self) -> Result<SynthSets<'_>, SynthError> {
        self.validate()?;
        Ok(SynthSets {
            config: self,
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            emitted: 0,
            next_id: 0,
            probs: Vec::with_capacity(self.candidates_per_set),
            failed: false,
        })
    }

    /// Expected click rate of the policy that picks the candidate with the
    /// highest click-model score (first one on ties).
    ///
    /// With `F` the distribution of a candidate's score, the chosen score is
    /// the maximum of `k` i.i.d. draws, so
    /// `V = sum_s click(s) * (F(<= s)^k - F(< s)^k)` over distinct scores `s`.
    /// Equal scores share a click probability, which makes ties irrelevant.
    pub fn argmax_policy_value(&self) -> Result<f64, SynthError> {
        self.validate()?;
        let card = self.field_cardinality as u64;
        let combos = card
            .checked_pow(self.n_fields)
            .filter(|&c| c <= MAX_ENUMERATION)
            .ok_or(SynthError::TooManyCombinations(card.saturating_pow(self.n_fields)))?;

        // Distribution of the score, built field by field.
        let mut scores = vec![0.0f64];
        for f in 0..self.n_fields as usize {
            let base = f * card as usize;
            let field = &self.click_model.weights[base..base + card as usize];
            scores = scores.iter().flat_map(|s| field.iter().map(move |w| s + w)).collect();
        }
        debug_assert_eq!(scores.len() as u64, combos);
        scores.sort_by(f64::total_cmp);

        let k = self.candidates_per_set as i32;
        let mass = 1.0 / combos as f64;
        let mut value = 0.0;
        let mut below = 0usize;
        while below < scores.len() {
            let s = scores[below];
            let mut upto = below;
            while upto < scores.len() && scores[upto] == s {
                upto += 1;
            }
            let f_lo = below as f64 * mass;
            let f_hi = upto as f64 * mass;
            value += sigmoid(self.click_model.bias + s) * (f_hi.powi(k) - f_lo.powi(k));
            below = upto;
        }
        Ok(value)
    }
}

/// Iterator over generated candidate sets.
pub struct SynthSets<'a> {
    config: &'a SynthConfig,
    rng: ChaCha8Rng,
    emitted: u64,
    next_id: u64,
    probs: Vec<f64>,
    failed: bool,
}

impl SynthSets<'_> {
    fn make_set(&mut self) -> Result<CandidateSet, SynthError> {
        let cfg = self.config;
        let set_id = self.next_id;
        self.next_id += 1 + self.rng.random_range(0..3u64);

        let mut candidates: Vec<Candidate> = (0..cfg.candidates_per_set)
            .map(|_| {
                let features = (0..cfg.n_fields)
                    .map(|f| {
                        (
                            f * cfg.field_cardinality + self.rng.random_range(0..cfg.field_cardinality),
                            1.0,
                        )
                    })
                    .collect();
                Candidate::new(features, None).expect("one feature per field is unique")
            })
            .collect();

        cfg.logging.probabilities(&candidates, &mut self.probs);
        if let Some((arm, &probability)) = self
            .probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(**p > 0.0 && p.is_finite()))
        {
            return Err(SynthError::DegenerateLogging {
                set_id,
                arm,
                probability,
            });
        }
        let u: f64 = self.rng.random();
        let mut cumulative = 0.0;
        let mut logged = self.probs.len() - 1;
        for (i, p) in self.probs.iter().enumerate() {
            cumulative += p;
            if u < cumulative {
                logged = i;
                break;
            }
        }
        let click = self.rng.random::<f64>() < cfg.click_model.click_probability(&candidates[logged]);
        let propensity = 1.0 / self.probs[logged];
        let feedback = if click {
            Feedback::clicked(propensity)
        } else {
            Feedback::not_clicked(propensity)
        }
        .expect("propensity is positive and finite");
        let features = candidates[logged].features().to_vec();
        candidates[logged] = Candidate::new(features, Some(feedback)).expect("features already validated");
        Ok(CandidateSet::new(set_id, candidates).expect("exactly one logged candidate"))
    }
}

impl Iterator for SynthSets<'_> {
    type Item = Result<CandidateSet, SynthError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.emitted >= self.config.n_sets {
            return None;
        }
        self.emitted += 1;
        let set = self.make_set();
        self.failed = set.is_err();
        Some(set)
    }
}
