//! FTRL-Proximal logistic regression over sparse binary vectors.
//!
//! Each coordinate keeps two accumulators: `z`, the adjusted sum of
//! gradients, and `n`, the sum of squared gradients. Weights are never
//! stored; they are derived on demand from `(z, n)`:
//!
//! ```text
//! w = 0                                               if |z| <= l1
//! w = -(z - sign(z) * l1) / ((beta + sqrt(n)) / alpha + l2)   otherwise
//! ```
//!
//! which is the minimizer of `z*w + l1*|w| + 0.5*(l2 + (beta + sqrt(n))/alpha)*w^2`.
//!
//! Accumulators are 32-bit floats held in atomics so the same model can be
//! updated from several threads without locks (see [`crate::train`]).
//! Relaxed loads and stores compile to plain moves, so the sequential path
//! pays nothing for this.

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU32, Ordering};

use thiserror::Error;

use crate::features::FeatureVector;
use crate::math::sigmoid;

const MAGIC: &[u8; 8] = b"ADPFTRL\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid hyperparameters: {0}")]
    InvalidParams(String),
    #[error("dimension must be positive")]
    ZeroDimension,
    #[error("coordinate {index} is out of range for dimension {dimension}")]
    OutOfRange { index: u32, dimension: u32 },
    #[error("feature vector dimension {input} does not match model dimension {model}")]
    DimensionMismatch { model: u32, input: u32 },
    #[error("accumulator arrays are inconsistent: {0}")]
    BadAccumulators(String),
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model file version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("model file is truncated")]
    Truncated,
    #[error("model file is corrupt: {0}")]
    Corrupt(String),
    #[error("model i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Learning-rate and regularization settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtrlParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for FtrlParams {
    /// `alpha = 0.1, beta = 1, l1 = 75, l2 = 25`.
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 1.0,
            lambda1: 75.0,
            lambda2: 25.0,
        }
    }
}

impl FtrlParams {
    pub fn new(alpha: f64, beta: f64, lambda1: f64, lambda2: f64) -> Result<Self, ModelError> {
        let p = Self {
            alpha,
            beta,
            lambda1,
            lambda2,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(ModelError::InvalidParams(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        for (name, v) in [("beta", self.beta), ("l1", self.lambda1), ("l2", self.lambda2)] {
            if !ok(v) {
                return Err(ModelError::InvalidParams(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Closed-form weight for accumulator values `(z, n)`.
    #[inline]
    pub fn weight(&self, z: f64, n: f64) -> f64 {
        if z.abs() <= self.lambda1 {
            0.0
        } else {
            -(z - z.signum() * self.lambda1) / ((self.beta + n.sqrt()) / self.alpha + self.lambda2)
        }
    }
}

#[repr(transparent)]
struct AtomicF32(AtomicU32);

impl AtomicF32 {
    fn new(v: f32) -> Self {
        Self(AtomicU32::new(v.to_bits()))
    }

    #[inline]
    fn load(&self) -> f32 {
        f32::from_bits(self.0.load(Ordering::Relaxed))
    }

    #[inline]
    fn store(&self, v: f32) {
        self.0.store(v.to_bits(), Ordering::Relaxed)
    }
}

struct Slot {
    z: AtomicF32,
    n: AtomicF32,
}

impl Slot {
    fn new(z: f32, n: f32) -> Self {
        Self {
            z: AtomicF32::new(z),
            n: AtomicF32::new(n),
        }
    }

    #[inline]
    fn get(&self) -> (f32, f32) {
        (self.z.load(), self.n.load())
    }
}

/// Per-coordinate FTRL-Proximal state over a fixed dimension.
pub struct FtrlModel {
    params: FtrlParams,
    slots: Box<[Slot]>,
}

impl FtrlModel {
    /// A fresh model with all accumulators at zero.
    pub fn new(params: FtrlParams, dimension: u32) -> Result<Self, ModelError> {
        params.validate()?;
        if dimension == 0 {
            return Err(ModelError::ZeroDimension);
        }
        let slots = (0..dimension).map(|_| Slot::new(0.0, 0.0)).collect();
        Ok(Self { params, slots })
    }

    /// Builds a model from explicit accumulator arrays.
    pub fn from_parts(params: FtrlParams, z: Vec<f32>, n: Vec<f32>) -> Result<Self, ModelError> {
        params.validate()?;
        if z.len() != n.len() {
            return Err(ModelError::BadAccumulators(format!(
                "z has {} entries, n has {}",
                z.len(),
                n.len()
            )));
        }
        if z.is_empty() {
            return Err(ModelError::ZeroDimension);
        }
        if u32::try_from(z.len()).is_err() {
            return Err(ModelError::BadAccumulators(format!(
                "dimension {} exceeds u32",
                z.len()
            )));
        }
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::BadAccumulators(format!("z[{i}] is not finite")));
        }
        if let Some(i) = n.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(ModelError::BadAccumulators(format!("n[{i}] is negative or not finite")));
        }
        let slots = z.into_iter().zip(n).map(|(z, n)| Slot::new(z, n)).collect();
        Ok(Self { params, slots })
    }

    pub fn params(&self) -> &FtrlParams {
        &self.params
    }

    pub fn dimension(&self) -> u32 {
        self.slots.len() as u32
    }

    fn slot(&self, index: u32) -> Result<&Slot, ModelError> {
        self.slots.get(index as usize).ok_or(ModelError::OutOfRange {
            index,
            dimension: self.dimension(),
        })
    }

    /// Current `(z, n)` of a coordinate.
    pub fn accumulators(&self, index: u32) -> Result<(f32, f32), ModelError> {
        self.slot(index).map(Slot::get)
    }

    pub fn weight(&self, index: u32) -> Result<f64, ModelError> {
        let (z, n) = self.slot(index)?.get();
        Ok(self.params.weight(z as f64, n as f64))
    }

    /// Coordinates that have received at least one non-zero gradient.
    pub fn touched(&self) -> impl Iterator<Item = u32> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.n.load() > 0.0 || s.z.load() != 0.0)
            .map(|(i, _)| i as u32)
    }

    /// Number of coordinates with a non-zero weight.
    pub fn nnz_weights(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| s.z.load().abs() as f64 > self.params.lambda1)
            .count()
    }

    fn check_dimension(&self, x: &FeatureVector) -> Result<(), ModelError> {
        if x.dimension() != self.dimension() {
            return Err(ModelError::DimensionMismatch {
                model: self.dimension(),
                input: x.dimension(),
            });
        }
        Ok(())
    }

    #[inline]
    fn margin_unchecked(&self, x: &FeatureVector) -> f64 {
        x.indices()
            .iter()
            .map(|&i| {
                let (z, n) = self.slots[i as usize].get();
                self.params.weight(z as f64, n as f64)
            })
            .sum()
    }

    /// Raw linear score `sum_i w_i` over the active coordinates.
    pub fn margin(&self, x: &FeatureVector) -> Result<f64, ModelError> {
        self.check_dimension(x)?;
        Ok(self.margin_unchecked(x))
    }

    /// Click probability `sigmoid(margin)`.
    pub fn predict(&self, x: &FeatureVector) -> Result<f64, ModelError> {
        self.margin(x).map(sigmoid)
    }

    /// One online step on `(x, y)`. Returns the prediction made before the
    /// update, which is what progressive validation loss is computed from.
    pub fn fit_one(&mut self, x: &FeatureVector, y: bool) -> Result<f64, ModelError> {
        self.check_dimension(x)?;
        Ok(self.update_shared(x, y))
    }

    /// Update through a shared reference. Concurrent callers may interleave
    /// their read-modify-write sequences on the same coordinate; each
    /// individual load and store stays whole.
    pub(crate) fn update_shared(&self, x: &FeatureVector, y: bool) -> f64 {
        let p = sigmoid(self.margin_unchecked(x));
        let g = p - if y { 1.0 } else { 0.0 };
        let g2 = g * g;
        for &i in x.indices() {
            let slot = &self.slots[i as usize];
            let (z, n) = slot.get();
            let (z, n) = (z as f64, n as f64);
            let w = self.params.weight(z, n);
            let sigma = ((n + g2).sqrt() - n.sqrt()) / self.params.alpha;
            slot.z.store((z + g - sigma * w) as f32);
            slot.n.store((n + g2) as f32);
        }
        p
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Layout (little endian): 8-byte magic, u32 version, alpha/beta/l1/l2 as
    /// f64, u64 dimension, `dimension` f32 z values, `dimension` f32 n values.
    pub fn write_to<W: Write>(&self, out: &mut W) -> io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for v in [
            self.params.alpha,
            self.params.beta,
            self.params.lambda1,
            self.params.lambda2,
        ] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&(self.slots.len() as u64).to_le_bytes())?;
        for s in self.slots.iter() {
            out.write_all(&s.z.load().to_le_bytes())?;
        }
        for s in self.slots.iter() {
            out.write_all(&s.n.load().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self, ModelError> {
        fn fill<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<(), ModelError> {
            input.read_exact(buf).map_err(|e| match e.kind() {
                io::ErrorKind::UnexpectedEof => ModelError::Truncated,
                _ => ModelError::Io(e),
            })
        }
        fn f64_le<R: Read>(input: &mut R) -> Result<f64, ModelError> {
            let mut b = [0u8; 8];
            fill(input, &mut b)?;
            Ok(f64::from_le_bytes(b))
        }
        fn f32_array<R: Read>(input: &mut R, len: usize) -> Result<Vec<f32>, ModelError> {
            let mut bytes = vec![0u8; len * 4];
            fill(input, &mut bytes)?;
            Ok(bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect())
        }

        let mut magic = [0u8; 8];
        fill(input, &mut magic)?;
        if &magic != MAGIC {
            return Err(ModelError::BadMagic);
        }
        let mut version = [0u8; 4];
        fill(input, &mut version)?;
        let version = u32::from_le_bytes(version);
        if version != FORMAT_VERSION {
            return Err(ModelError::UnsupportedVersion(version));
        }
        let params = FtrlParams {
            alpha: f64_le(input)?,
            beta: f64_le(input)?,
            lambda1: f64_le(input)?,
            lambda2: f64_le(input)?,
        };
        params.validate().map_err(|e| ModelError::Corrupt(e.to_string()))?;
        let mut dim = [0u8; 8];
        fill(input, &mut dim)?;
        let dim = u64::from_le_bytes(dim);
        let dim = u32::try_from(dim)
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| ModelError::Corrupt(format!("dimension {dim}")))? as usize;
        let z = f32_array(input, dim)?;
        let n = f32_array(input, dim)?;
        let mut extra = [0u8; 1];
        if input.read(&mut extra)? != 0 {
            return Err(ModelError::Corrupt("trailing bytes after accumulators".into()));
        }
        Self::from_parts(params, z, n).map_err(|e| ModelError::Corrupt(e.to_string()))
    }
}

impl Clone for FtrlModel {
    fn clone(&self) -> Self {
        Self {
            params: self.params,
            slots: self
                .slots
                .iter()
                .map(|s| {
                    let (z, n) = s.get();
                    Slot::new(z, n)
                })
                .collect(),
        }
    }
}

/// Equality is bitwise on the accumulators.
impl PartialEq for FtrlModel {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
            && self.slots.len() == other.slots.len()
            && self.slots.iter().zip(other.slots.iter()).all(|(a, b)| {
                let (az, an) = a.get();
                let (bz, bn) = b.get();
                az.to_bits() == bz.to_bits() && an.to_bits() == bn.to_bits()
            })
    }
}

impl fmt::Debug for FtrlModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FtrlModel")
            .field("params", &self.params)
            .field("dimension", &self.dimension())
            .field("nnz_weights", &self.nnz_weights())
            .finish()
    }
}
