//! Training drivers: sequential passes, lock-free parallel passes, and the
//! seeded shuffle buffer used to decorrelate ensemble members.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::{FeatureVector, FeaturizerConfig};
use crate::format::CandidateSet;
use crate::ftrl::{FtrlModel, FtrlParams, ModelError};
use crate::math::log_loss;
use crate::Error;

/// Examples handed to a worker at a time.
const BATCH: usize = 256;

/// Shuffle buffer used for ensemble members when none is configured, so the
/// members see different example orders.
pub const DEFAULT_ENSEMBLE_SHUFFLE: usize = 10_000;

/// A labeled training example: the logged candidate and whether it was clicked.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: FeatureVector,
    pub y: bool,
}

impl Example {
    pub fn new(x: FeatureVector, y: bool) -> Self {
        Self { x, y }
    }

    /// The logged candidate of `set`, labeled by its click.
    pub fn from_set(set: &CandidateSet, features: &FeaturizerConfig) -> Result<Self, Error> {
        Ok(Self {
            x: features.featurize(set.logged())?,
            y: set.feedback().is_click(),
        })
    }
}

/// Progressive-validation statistics of a training pass.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrainStats {
    pub examples: u64,
    pub positives: u64,
    pub loss_sum: f64,
}

impl TrainStats {
    fn record(&mut self, p: f64, y: bool) {
        self.examples += 1;
        self.positives += y as u64;
        self.loss_sum += log_loss(p, y);
    }

    pub fn merge(&mut self, other: &TrainStats) {
        self.examples += other.examples;
        self.positives += other.positives;
        self.loss_sum += other.loss_sum;
    }

    /// Mean log-loss of the predictions made just before each update.
    pub fn mean_log_loss(&self) -> f64 {
        if self.examples == 0 {
            0.0
        } else {
            self.loss_sum / self.examples as f64
        }
    }
}

/// Trains `model` on `examples` with `workers` threads.
///
/// With one worker this is exactly a loop of [`FtrlModel::fit_one`]. With
/// more, workers pull batches from a bounded queue and update the shared
/// accumulators without locks; concurrent updates of the same coordinate may
/// be lost.
pub fn train_parallel<I>(model: &mut FtrlModel, examples: I, workers: usize) -> Result<TrainStats, ModelError>
where
    I: IntoIterator<Item = Example>,
{
    try_train_parallel(model, examples.into_iter().map(Ok::<_, ModelError>), workers)
}

/// Like [`train_parallel`] over a fallible stream; stops at the first error.
pub fn try_train_parallel<I, E>(model: &mut FtrlModel, examples: I, workers: usize) -> Result<TrainStats, E>
where
    I: IntoIterator<Item = Result<Example, E>>,
    E: From<ModelError>,
{
    let workers = workers.max(1);
    let mut stats = TrainStats::default();
    if workers == 1 {
        for ex in examples {
            let ex = ex?;
            let p = model.fit_one(&ex.x, ex.y)?;
            stats.record(p, ex.y);
        }
        return Ok(stats);
    }

    let dimension = model.dimension();
    let shared: &FtrlModel = model;
    let (tx, rx) = crossbeam_channel::bounded::<Vec<Example>>(workers * 4);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                let rx = rx.clone();
                scope.spawn(move || {
                    let mut local = TrainStats::default();
                    for batch in rx {
                        for ex in batch {
                            let p = shared.update_shared(&ex.x, ex.y);
                            local.record(p, ex.y);
                        }
                    }
                    local
                })
            })
            .collect();
        drop(rx);

        let mut outcome = Ok(());
        let mut batch = Vec::with_capacity(BATCH);
        for ex in examples {
            let ex = match ex {
                Ok(ex) if ex.x.dimension() != dimension => Err(ModelError::DimensionMismatch {
                    model: dimension,
                    input: ex.x.dimension(),
                }
                .into()),
                other => other,
            };
            match ex {
                Ok(ex) => {
                    batch.push(ex);
                    if batch.len() == BATCH {
                        let full = std::mem::replace(&mut batch, Vec::with_capacity(BATCH));
                        // Workers only exit once the channel is closed.
                        tx.send(full).expect("workers alive while sender is open");
                    }
                }
                Err(e) => {
                    outcome = Err(e);
                    break;
                }
            }
        }
        if outcome.is_ok() && !batch.is_empty() {
            tx.send(batch).expect("workers alive while sender is open");
        }
        drop(tx);
        for h in handles {
            stats.merge(&h.join().expect("training worker panicked"));
        }
        outcome
    })?;
    Ok(stats)
}

/// Bounded random reordering of a stream.
///
/// Holds up to `capacity` items; each output is drawn uniformly from the
/// buffer and its slot refilled from the source. Capacity 0 passes items
/// through unchanged.
pub struct ShuffleBuffer<I: Iterator> {
    source: I,
    buffer: Vec<I::Item>,
    capacity: usize,
    rng: ChaCha8Rng,
}

impl<I: Iterator> ShuffleBuffer<I> {
    pub fn new(source: I, capacity: usize, seed: u64) -> Self {
        Self {
            source,
            buffer: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl<I: Iterator> Iterator for ShuffleBuffer<I> {
    type Item = I::Item;

    fn next(&mut self) -> Option<I::Item> {
        if self.capacity == 0 {
            return self.source.next();
        }
        while self.buffer.len() < self.capacity {
            match self.source.next() {
                Some(item) => self.buffer.push(item),
                None => break,
            }
        }
        if self.buffer.is_empty() {
            return None;
        }
        let j = self.rng.random_range(0..self.buffer.len());
        Some(self.buffer.swap_remove(j))
    }
}

/// Everything needed to train one model from a re-openable example stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub params: FtrlParams,
    pub workers: usize,
    pub epochs: usize,
    pub shuffle_buffer: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            params: FtrlParams::default(),
            workers: 1,
            epochs: 1,
            shuffle_buffer: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Configuration of member `k` of an ensemble of `ensemble_k` models:
    /// seed `seed + k`, and a shuffle buffer whenever there is more than one
    /// member.
    pub fn member(&self, k: usize, ensemble_k: usize) -> TrainConfig {
        let shuffle_buffer = if ensemble_k > 1 && self.shuffle_buffer == 0 {
            DEFAULT_ENSEMBLE_SHUFFLE
        } else {
            self.shuffle_buffer
        };
        TrainConfig {
            seed: self.seed.wrapping_add(k as u64),
            shuffle_buffer,
            ..*self
        }
    }

    fn epoch_seed(&self, epoch: usize) -> u64 {
        // splitmix64 finalizer over (seed, epoch)
        let mut x = self.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x ^ (x >> 31)
    }

    /// Trains a fresh model of `dimension` for `epochs` passes. `open` is
    /// called once per epoch and must return the example stream from the start.
    pub fn train<F, I, E>(&self, dimension: u32, mut open: F) -> Result<(FtrlModel, TrainStats), E>
    where
        F: FnMut(usize) -> Result<I, E>,
        I: Iterator<Item = Result<Example, E>>,
        E: From<ModelError>,
    {
        let mut model = FtrlModel::new(self.params, dimension)?;
        let mut stats = TrainStats::default();
        for epoch in 0..self.epochs.max(1) {
            let source = open(epoch)?;
            let shuffled = ShuffleBuffer::new(source, self.shuffle_buffer, self.epoch_seed(epoch));
            stats = try_train_parallel(&mut model, shuffled, self.workers)?;
        }
        Ok((model, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(indices: &[u32], dim: u32) -> FeatureVector {
        FeatureVector::new(indices.to_vec(), dim).unwrap()
    }

    fn toy_examples(n: usize, dim: u32, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let idx: Vec<u32> = (0..4).map(|_| rng.random_range(0..dim)).collect();
                let y = idx.iter().filter(|&&i| i % 2 == 0).count() >= 2;
                Example::new(fv(&idx, dim), y)
            })
            .collect()
    }

    #[test]
    fn one_worker_matches_fit_one() {
        let params = FtrlParams::new(0.2, 1.0, 0.5, 0.1).unwrap();
        let data = toy_examples(3, 16, 1);
        let mut seq = FtrlModel::new(params, 16).unwrap();
        for ex in &data {
            seq.fit_one(&ex.x, ex.y).unwrap();
        }
        let mut par = FtrlModel::new(params, 16).unwrap();
        let stats = train_parallel(&mut par, data.clone(), 1).unwrap();
        assert_eq!(par, seq);
        assert_eq!(stats.examples, 3);
    }

    #[test]
    fn parallel_empty_stream_is_noop() {
        let mut m = FtrlModel::new(FtrlParams::default(), 8).unwrap();
        let before = m.clone();
        let stats = train_parallel(&mut m, Vec::new(), 4).unwrap();
        assert_eq!(m, before);
        assert_eq!(stats.examples, 0);
    }

    #[test]
    fn parallel_sees_every_example() {
        let params = FtrlParams::new(0.2, 1.0, 0.1, 0.1).unwrap();
        let mut m = FtrlModel::new(params, 64).unwrap();
        let stats = train_parallel(&mut m, toy_examples(5_000, 64, 2), 4).unwrap();
        assert_eq!(stats.examples, 5_000);
        assert!(m.nnz_weights() > 0);
    }

    #[test]
    fn parallel_rejects_dimension_mismatch() {
        let mut m = FtrlModel::new(FtrlParams::default(), 8).unwrap();
        let data = vec![Example::new(fv(&[1], 9), true)];
        assert!(matches!(
            train_parallel(&mut m, data, 3),
            Err(ModelError::DimensionMismatch { model: 8, input: 9 })
        ));
    }

    #[test]
    fn parallel_stops_on_stream_error() {
        let mut m = FtrlModel::new(FtrlParams::default(), 8).unwrap();
        let stream = vec![
            Ok(Example::new(fv(&[1], 8), true)),
            Err(Error::Io(std::io::Error::other("boom"))),
            Ok(Example::new(fv(&[2], 8), true)),
        ];
        assert!(matches!(try_train_parallel(&mut m, stream, 2), Err(Error::Io(_))));
    }

    #[test]
    fn shuffle_buffer_is_a_seeded_permutation() {
        let a: Vec<u32> = ShuffleBuffer::new(0..1000u32, 64, 7).collect();
        let b: Vec<u32> = ShuffleBuffer::new(0..1000u32, 64, 7).collect();
        let c: Vec<u32> = ShuffleBuffer::new(0..1000u32, 64, 8).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..1000).collect::<Vec<_>>());
        assert_ne!(a, (0..1000).collect::<Vec<_>>());
        let passthrough: Vec<u32> = ShuffleBuffer::new(0..10u32, 0, 1).collect();
        assert_eq!(passthrough, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn ensemble_members_get_distinct_seeds_and_shuffle() {
        let base = TrainConfig::default();
        let m3 = base.member(3, 10);
        assert_eq!(m3.seed, 3);
        assert_eq!(m3.shuffle_buffer, DEFAULT_ENSEMBLE_SHUFFLE);
        assert_eq!(base.member(0, 1).shuffle_buffer, 0);
        let custom = TrainConfig {
            shuffle_buffer: 5,
            ..base
        };
        assert_eq!(custom.member(2, 10).shuffle_buffer, 5);
    }

    #[test]
    fn multi_epoch_reopens_source() {
        let data = toy_examples(200, 16, 3);
        let cfg = TrainConfig {
            params: FtrlParams::new(0.2, 1.0, 0.1, 0.1).unwrap(),
            epochs: 3,
            ..TrainConfig::default()
        };
        let mut opened = Vec::new();
        let (model, stats) = cfg
            .train(16, |epoch| {
                opened.push(epoch);
                Ok::<_, ModelError>(data.clone().into_iter().map(Ok))
            })
            .unwrap();
        assert_eq!(opened, vec![0, 1, 2]);
        assert_eq!(stats.examples, 200);

        let mut manual = FtrlModel::new(cfg.params, 16).unwrap();
        for _ in 0..3 {
            for ex in &data {
                manual.fit_one(&ex.x, ex.y).unwrap();
            }
        }
        assert_eq!(model, manual);
    }
}
