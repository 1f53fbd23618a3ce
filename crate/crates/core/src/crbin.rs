//! Compression-rate clipping and bin quantization.
//!
//! The interval `(0, 1]` is divided into `ceil(1/delta)` equal-width bins.
//! Bin `b` covers `[(b-1)*delta, b*delta)`; the last bin is closed on the
//! right so that a rate of exactly 1.0 is representable. Rates above 1.0
//! (long MT targets) are clipped to 1.0 before quantization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BinError {
    #[error("compression rate must be positive, got {0}")]
    InvalidGamma(f64),
    #[error("bin width must lie in (0, 1], got {0}")]
    InvalidDelta(f64),
    #[error("bin index {index} out of range 1..={num_bins}")]
    InvalidBin { index: usize, num_bins: usize },
}

/// Bin width and the derived bin count; the quantization contract shared by
/// the data pipeline and the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinConfig {
    delta: f64,
    num_bins: usize,
}

impl BinConfig {
    pub fn new(delta: f64) -> Result<Self, BinError> {
        if !(delta > 0.0 && delta <= 1.0) || !delta.is_finite() {
            return Err(BinError::InvalidDelta(delta));
        }
        let num_bins = (1.0 / delta).ceil() as usize;
        Ok(BinConfig { delta, num_bins })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    /// Bin index for a compression rate, clipping rates above 1.0.
    ///
    /// Returns `b` such that gamma falls in `[(b-1)*delta, b*delta)`, with the
    /// last bin closed at 1.0.
    pub fn quantize(&self, gamma: f64) -> Result<BinIndex, BinError> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(BinError::InvalidGamma(gamma));
        }
        let g = clip_gamma(gamma)?;
        let mut b = ((g / self.delta).floor() as usize + 1).min(self.num_bins);
        // Division can round across a boundary that the interval arithmetic
        // (multiplication) places on the other side; snap to the intervals
        // so quantize and bin_interval always agree.
        if b > 1 && g < (b - 1) as f64 * self.delta {
            b -= 1;
        } else if b < self.num_bins && g >= b as f64 * self.delta {
            b += 1;
        }
        Ok(BinIndex(b))
    }

    /// The half-open (or, for the last bin, closed) interval whose
    /// quantize-image is exactly `{b}`, plus its midpoint for fixed-mode
    /// inference.
    pub fn bin_interval(&self, b: BinIndex) -> Result<BinInterval, BinError> {
        if b.0 < 1 || b.0 > self.num_bins {
            return Err(BinError::InvalidBin {
                index: b.0,
                num_bins: self.num_bins,
            });
        }
        let lo = (b.0 - 1) as f64 * self.delta;
        let hi = (b.0 as f64 * self.delta).min(1.0).max(lo);
        let hi_inclusive = b.0 == self.num_bins;
        Ok(BinInterval {
            lo,
            hi: if b.0 == self.num_bins { 1.0 } else { hi },
            hi_inclusive,
        })
    }

    /// Midpoint of a bin's effective interval, used as the representative
    /// rate in fixed-mode inference.
    pub fn midpoint(&self, b: BinIndex) -> Result<f64, BinError> {
        let iv = self.bin_interval(b)?;
        Ok((iv.lo + iv.hi.min(1.0)) / 2.0)
    }

    pub fn bins(&self) -> impl Iterator<Item = BinIndex> {
        (1..=self.num_bins).map(BinIndex)
    }
}

/// 1-based bin index, valid under a particular [`BinConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BinIndex(pub usize);

impl BinIndex {
    pub fn value(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinInterval {
    pub lo: f64,
    pub hi: f64,
    pub hi_inclusive: bool,
}

impl BinInterval {
    pub fn contains(&self, gamma: f64) -> bool {
        gamma >= self.lo && (gamma < self.hi || (self.hi_inclusive && gamma <= self.hi))
    }
}

/// Clip a compression rate to `(0, 1]`. MT pairs whose target is longer than
/// the source occasionally exceed 1; they are treated as rate 1.0.
pub fn clip_gamma(gamma: f64) -> Result<f64, BinError> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(BinError::InvalidGamma(gamma));
    }
    Ok(gamma.min(1.0))
}
