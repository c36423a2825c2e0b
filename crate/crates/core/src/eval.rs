//! Inverse propensity scoring of a policy against logged feedback, and the
//! id-based train/validation split.
//!
//! For every candidate set the policy's scores are turned into a
//! distribution with a softmax. A clicked set contributes
//! `propensity * softmax(scores)[logged]`; a set without a click contributes
//! exactly zero. The estimate is `scale * sum / n` where `n` counts every set
//! by default ([`Denominator::All`]) and `scale` is 10000.
//!
//! The logged propensity is used as an importance weight, i.e. as the inverse
//! of the logging probability.

use std::borrow::Borrow;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::format::CandidateSet;
use crate::math::CompensatedSum;
use crate::policy::ScoredSet;

pub const DEFAULT_SCALE: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("softmax of an empty score list")]
    EmptyScores,
    #[error("score {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("prediction for set {predicted} does not line up with gold set {gold}")]
    Alignment { gold: u64, predicted: u64 },
    #[error("set {set_id}: {expected} candidates but {got} scores")]
    LengthMismatch { set_id: u64, expected: usize, got: usize },
    #[error("gold has {gold} sets but predictions end after {predicted}")]
    MissingPredictions { gold: u64, predicted: u64 },
    #[error("predictions continue past the last gold set (extra set {0})")]
    ExtraPredictions(u64),
    #[error("unknown denominator {0:?} (expected all or clicked)")]
    UnknownDenominator(String),
    #[error("invalid evaluation configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed report: {0}")]
    BadReport(String),
}

/// Max-subtracted softmax. Sums to one within a few ulps.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    if let Some((index, &value)) = scores.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(EvalError::NonFinite { index, value });
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: CompensatedSum = out.iter().copied().collect();
    let total = total.value();
    for p in &mut out {
        *p /= total;
    }
    Ok(out)
}

/// Which sets the IPS sum is averaged over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Denominator {
    #[default]
    All,
    Clicked,
}

impl FromStr for Denominator {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Self::All),
            "clicked" => Ok(Self::Clicked),
            other => Err(EvalError::UnknownDenominator(other.to_string())),
        }
    }
}

impl fmt::Display for Denominator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::All => "all",
            Self::Clicked => "clicked",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub scale: f64,
    pub denominator: Denominator,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            scale: DEFAULT_SCALE,
            denominator: Denominator::All,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(EvalError::InvalidConfig(format!(
                "scale must be > 0, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

/// IPS estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub ips: f64,
    pub std_err: f64,
    pub n_sets: u64,
    pub n_clicked_sets: u64,
    pub scale: f64,
}

impl EvalReport {
    /// Machine-readable form: one `key=value` per line.
    pub fn to_key_values(&self) -> String {
        format!(
            "ips={}\nstd_err={}\nn_sets={}\nn_clicked_sets={}\nscale={}\n",
            self.ips, self.std_err, self.n_sets, self.n_clicked_sets, self.scale
        )
    }

    pub fn from_key_values(text: &str) -> Result<Self, EvalError> {
        let mut ips = None;
        let mut std_err = None;
        let mut n_sets = None;
        let mut n_clicked_sets = None;
        let mut scale = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| EvalError::BadReport(line.to_string()))?;
            let bad = || EvalError::BadReport(line.to_string());
            match key.trim() {
                "ips" => ips = Some(value.trim().parse().map_err(|_| bad())?),
                "std_err" => std_err = Some(value.trim().parse().map_err(|_| bad())?),
                "n_sets" => n_sets = Some(value.trim().parse().map_err(|_| bad())?),
                "n_clicked_sets" => n_clicked_sets = Some(value.trim().parse().map_err(|_| bad())?),
                "scale" => scale = Some(value.trim().parse().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        let missing = |k: &str| EvalError::BadReport(format!("missing {k}"));
        Ok(Self {
            ips: ips.ok_or_else(|| missing("ips"))?,
            std_err: std_err.ok_or_else(|| missing("std_err"))?,
            n_sets: n_sets.ok_or_else(|| missing("n_sets"))?,
            n_clicked_sets: n_clicked_sets.ok_or_else(|| missing("n_clicked_sets"))?,
            scale: scale.ok_or_else(|| missing("scale"))?,
        })
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "IPS            {:.4}", self.ips)?;
        writeln!(f, "std err        {:.4}", self.std_err)?;
        writeln!(f, "sets           {}", self.n_sets)?;
        writeln!(f, "clicked sets   {}", self.n_clicked_sets)?;
        write!(f, "scale          {}", self.scale)
    }
}

/// Contribution of one set to the IPS sum.
///
/// Sets without a click return exactly 0 without looking at the scores
/// beyond their alignment.
pub fn contribution(gold: &CandidateSet, predicted: &ScoredSet) -> Result<f64, EvalError> {
    if gold.id() != predicted.set_id {
        return Err(EvalError::Alignment {
            gold: gold.id(),
            predicted: predicted.set_id,
        });
    }
    if gold.len() != predicted.scores.len() {
        return Err(EvalError::LengthMismatch {
            set_id: gold.id(),
            expected: gold.len(),
            got: predicted.scores.len(),
        });
    }
    let feedback = gold.feedback();
    if !feedback.is_click() {
        return Ok(0.0);
    }
    let probs = softmax(&predicted.scores)?;
    Ok(feedback.propensity() * probs[gold.logged_index()])
}

/// Running IPS sums. Partial accumulators over disjoint chunks can be merged
/// in any order with compensated summation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IpsAccumulator {
    n_sets: u64,
    n_clicked: u64,
    sum: CompensatedSum,
    sum_sq: CompensatedSum,
}

impl IpsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, gold: &CandidateSet, predicted: &ScoredSet) -> Result<f64, EvalError> {
        let u = contribution(gold, predicted)?;
        self.n_sets += 1;
        if gold.feedback().is_click() {
            self.n_clicked += 1;
            self.sum.add(u);
            self.sum_sq.add(u * u);
        }
        Ok(u)
    }

    pub fn merge(&mut self, other: &IpsAccumulator) {
        self.n_sets += other.n_sets;
        self.n_clicked += other.n_clicked;
        self.sum.merge(&other.sum);
        self.sum_sq.merge(&other.sum_sq);
    }

    /// Unscaled sum of contributions.
    pub fn numerator(&self) -> f64 {
        self.sum.value()
    }

    pub fn n_sets(&self) -> u64 {
        self.n_sets
    }

    pub fn report(&self, config: &EvalConfig) -> EvalReport {
        let n = match config.denominator {
            Denominator::All => self.n_sets,
            Denominator::Clicked => self.n_clicked,
        };
        let (ips, std_err) = if n == 0 {
            (0.0, 0.0)
        } else {
            let nf = n as f64;
            let mean = self.sum.value() / nf;
            let var = if n > 1 {
                ((self.sum_sq.value() - nf * mean * mean) / (nf - 1.0)).max(0.0)
            } else {
                0.0
            };
            (config.scale * mean, config.scale * (var / nf).sqrt())
        };
        EvalReport {
            ips,
            std_err,
            n_sets: self.n_sets,
            n_clicked_sets: self.n_clicked,
            scale: config.scale,
        }
    }
}

/// Evaluates aligned gold sets and predictions, both in file order.
pub fn ips_evaluate<G, P>(gold: G, predictions: P, config: &EvalConfig) -> Result<EvalReport, EvalError>
where
    G: IntoIterator,
    G::Item: Borrow<CandidateSet>,
    P: IntoIterator,
    P::Item: Borrow<ScoredSet>,
{
    config.validate()?;
    let mut acc = IpsAccumulator::new();
    let mut predictions = predictions.into_iter();
    for g in gold {
        let g = g.borrow();
        match predictions.next() {
            Some(p) => {
                acc.add(g, p.borrow())?;
            }
            None => {
                return Err(EvalError::MissingPredictions {
                    gold: acc.n_sets + 1,
                    predicted: acc.n_sets,
                })
            }
        }
    }
    if let Some(extra) = predictions.next() {
        return Err(EvalError::ExtraPredictions(extra.borrow().set_id));
    }
    Ok(acc.report(config))
}

/// Same as [`ips_evaluate`] over in-memory slices, fanned out over `workers`
/// threads. Agrees with the sequential result to within rounding of the
/// compensated sums.
pub fn ips_evaluate_parallel(
    gold: &[CandidateSet],
    predictions: &[ScoredSet],
    config: &EvalConfig,
    workers: usize,
) -> Result<EvalReport, EvalError> {
    config.validate()?;
    if gold.len() != predictions.len() {
        return Err(match predictions.get(gold.len()) {
            Some(extra) => EvalError::ExtraPredictions(extra.set_id),
            None => EvalError::MissingPredictions {
                gold: gold.len() as u64,
                predicted: predictions.len() as u64,
            },
        });
    }
    let workers = workers.max(1);
    let chunk = gold.len().div_ceil(workers).max(1);
    let partials: Vec<Result<IpsAccumulator, EvalError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = gold
            .chunks(chunk)
            .zip(predictions.chunks(chunk))
            .map(|(g, p)| {
                scope.spawn(move || {
                    let mut acc = IpsAccumulator::new();
                    for (g, p) in g.iter().zip(p) {
                        acc.add(g, p)?;
                    }
                    Ok(acc)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut total = IpsAccumulator::new();
    for part in partials {
        total.merge(&part?);
    }
    Ok(total.report(config))
}

/// One of the four id-based parts; parts 0-2 train, part 3 validates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SplitPart(u8);

impl SplitPart {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_validation(self) -> bool {
        self.0 == 3
    }

    pub fn is_training(self) -> bool {
        !self.is_validation()
    }
}

pub fn split_assign(set_id: u64) -> SplitPart {
    SplitPart((set_id % 4) as u8)
}
