//! Sparse binary featurization of candidates.
//!
//! Two modes are supported. Binary mode keeps the raw feature id and drops
//! the value. Hashed mode hashes the `id:value` token with MurmurHash3
//! (x86, 32-bit, seed 0) into `2^hash_bits` buckets so that every distinct
//! value of a feature becomes its own one-hot indicator. Reference vectors
//! for the hash: `"test"` → 3127628307, `"0:300"` → 11915443.

use std::fmt;
use std::io::Cursor;
use std::str::FromStr;

use thiserror::Error;

use crate::format::Candidate;

pub const DEFAULT_RAW_DIMENSION: u32 = 74_000;
pub const DEFAULT_HASH_BITS: u32 = 20;
pub const MIN_HASH_BITS: u32 = 16;
pub const MAX_HASH_BITS: u32 = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("feature id {id} is out of range for dimension {dimension}")]
    OutOfRange { id: u32, dimension: u32 },
    #[error("hash bits must be in [{MIN_HASH_BITS}, {MAX_HASH_BITS}], got {0}")]
    HashBits(u32),
    #[error("raw dimension must be positive")]
    ZeroDimension,
    #[error("unknown featurization mode {0:?} (expected binary or hashed)")]
    UnknownMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureMode {
    #[default]
    Binary,
    Hashed,
}

impl FromStr for FeatureMode {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(Self::Binary),
            "hashed" => Ok(Self::Hashed),
            other => Err(FeatureError::UnknownMode(other.to_string())),
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Binary => "binary",
            Self::Hashed => "hashed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeaturizerConfig {
    pub mode: FeatureMode,
    pub hash_bits: u32,
    pub raw_dimension: u32,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            mode: FeatureMode::Binary,
            hash_bits: DEFAULT_HASH_BITS,
            raw_dimension: DEFAULT_RAW_DIMENSION,
        }
    }
}

impl FeaturizerConfig {
    pub fn binary(raw_dimension: u32) -> Self {
        Self {
            mode: FeatureMode::Binary,
            raw_dimension,
            ..Self::default()
        }
    }

    pub fn hashed(hash_bits: u32) -> Self {
        Self {
            mode: FeatureMode::Hashed,
            hash_bits,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.raw_dimension == 0 {
            return Err(FeatureError::ZeroDimension);
        }
        if self.mode == FeatureMode::Hashed && !(MIN_HASH_BITS..=MAX_HASH_BITS).contains(&self.hash_bits) {
            return Err(FeatureError::HashBits(self.hash_bits));
        }
        Ok(())
    }

    /// Size of the index space produced by this configuration.
    pub fn dimension(&self) -> u32 {
        match self.mode {
            FeatureMode::Binary => self.raw_dimension,
            FeatureMode::Hashed => 1 << self.hash_bits,
        }
    }

    pub fn featurize(&self, candidate: &Candidate) -> Result<FeatureVector, FeatureError> {
        self.validate()?;
        match self.mode {
            FeatureMode::Binary => featurize_binary(candidate, self.raw_dimension),
            FeatureMode::Hashed => Ok(featurize_hashed(candidate, self.hash_bits)),
        }
    }
}

/// Sorted, duplicate-free indices of the active (value 1) coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVector {
    indices: Vec<u32>,
    dimension: u32,
}

impl FeatureVector {
    /// Sorts and deduplicates `indices`; fails if any index is out of range.
    pub fn new(mut indices: Vec<u32>, dimension: u32) -> Result<Self, FeatureError> {
        if let Some(&id) = indices.iter().find(|&&i| i >= dimension) {
            return Err(FeatureError::OutOfRange { id, dimension });
        }
        indices.sort_unstable();
        indices.dedup();
        Ok(Self { indices, dimension })
    }

    pub fn empty(dimension: u32) -> Self {
        Self {
            indices: Vec::new(),
            dimension,
        }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn dimension(&self) -> u32 {
        self.dimension
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Every present feature id becomes an active index, whatever its value.
pub fn featurize_binary(candidate: &Candidate, raw_dimension: u32) -> Result<FeatureVector, FeatureError> {
    let indices = candidate.features().iter().map(|&(id, _)| id).collect();
    FeatureVector::new(indices, raw_dimension)
}

pub fn featurize_hashed(candidate: &Candidate, hash_bits: u32) -> FeatureVector {
    let mask = (1u32 << hash_bits) - 1;
    let mut token = String::with_capacity(24);
    let mut indices: Vec<u32> = candidate
        .features()
        .iter()
        .map(|&(id, value)| {
            token.clear();
            push_token(&mut token, id, value);
            hash_token(&token) & mask
        })
        .collect();
    indices.sort_unstable();
    indices.dedup();
    FeatureVector {
        indices,
        dimension: 1 << hash_bits,
    }
}

/// Canonical `id:value` token: integral values have no decimal point, other
/// values use the shortest round-trip representation.
pub fn feature_token(id: u32, value: f64) -> String {
    let mut s = String::new();
    push_token(&mut s, id, value);
    s
}

fn push_token(out: &mut String, id: u32, value: f64) {
    use std::fmt::Write;
    // Integral values print the same through i64, which is much faster than
    // f64 Display. This also maps -0 to 0.
    if value.fract() == 0.0 && value.abs() < 9.0e15 {
        write!(out, "{id}:{}", value as i64)
    } else {
        write!(out, "{id}:{value}")
    }
    .expect("writing to a String cannot fail");
}

/// MurmurHash3 x86_32 with seed 0.
pub fn hash_token(token: &str) -> u32 {
    murmur3::murmur3_32(&mut Cursor::new(token.as_bytes()), 0).expect("reading from memory cannot fail")
}
