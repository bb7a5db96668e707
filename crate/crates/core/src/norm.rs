//! Channel-wise normalization statistics computed from the training split.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Dataset;

/// Lower bound applied to every standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

/// Neumaier-compensated running sum with a fixed reduction order.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Mean and (floored, population) standard deviation of one channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Two-pass statistics over a replayable iterator.
    pub fn from_values<I>(values: impl Fn() -> I) -> Self
    where
        I: Iterator<Item = f64>,
    {
        let mut sum = CompensatedSum::default();
        let mut n = 0usize;
        for v in values() {
            sum.add(v);
            n += 1;
        }
        let mean = sum.value() / n as f64;
        let mut sq = CompensatedSum::default();
        for v in values() {
            let d = v - mean;
            sq.add(d * d);
        }
        let std = (sq.value() / n as f64).sqrt().max(STD_FLOOR);
        Self { mean, std }
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Real and imaginary channel statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexStats {
    pub re: MeanStd,
    pub im: MeanStd,
}

impl ComplexStats {
    pub fn normalize(&self, z: Complex64) -> [f64; 2] {
        [self.re.normalize(z.re), self.im.normalize(z.im)]
    }

    pub fn denormalize(&self, v: [f64; 2]) -> Complex64 {
        Complex64::new(self.re.denormalize(v[0]), self.im.denormalize(v[1]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub input: ComplexStats,
    pub output: ComplexStats,
    pub descriptor: Vec<MeanStd>,
}

impl NormStats {
    /// Normalized sensor vector: real channel first, then imaginary.
    pub fn normalize_sensor(&self, field: &[Complex64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * field.len());
        out.extend(field.iter().map(|z| self.input.re.normalize(z.re)));
        out.extend(field.iter().map(|z| self.input.im.normalize(z.im)));
        out
    }

    pub fn standardize(&self, phi: &[f64]) -> Vec<f64> {
        phi.iter()
            .zip(&self.descriptor)
            .map(|(&v, s)| s.normalize(v))
            .collect()
    }

    pub fn unstandardize(&self, phi: &[f64]) -> Vec<f64> {
        phi.iter()
            .zip(&self.descriptor)
            .map(|(&v, s)| s.denormalize(v))
            .collect()
    }
}

/// Normalize a field channel-wise with the given statistics.
pub fn normalize_field(field: &[Complex64], stats: &ComplexStats) -> Vec<[f64; 2]> {
    field.iter().map(|&z| stats.normalize(z)).collect()
}

/// Exact inverse of [`normalize_field`].
pub fn denormalize_field(values: &[[f64; 2]], stats: &ComplexStats) -> Vec<Complex64> {
    values.iter().map(|&v| stats.denormalize(v)).collect()
}

/// Statistics over the training split only: input channels pooled over all
/// initial-condition samples, output channels over every stored frame, and
/// one (mean, std) per descriptor dimension.
pub fn compute_norm_stats(train: &Dataset, descriptors: &[Vec<f64>]) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::EmptySplit);
    }
    if descriptors.len() != train.len() {
        return Err(Error::Shape(format!(
            "{} descriptor rows for {} trajectories",
            descriptors.len(),
            train.len()
        )));
    }
    let n_f = descriptors[0].len();
    if descriptors.iter().any(|d| d.len() != n_f) {
        return Err(Error::Shape("ragged descriptor matrix".into()));
    }

    let initial = || train.trajectories.iter().flat_map(|t| t.initial().data().iter());
    let frames = || {
        train
            .trajectories
            .iter()
            .flat_map(|t| t.frames.iter().flat_map(|f| f.data().iter()))
    };

    let input = ComplexStats {
        re: MeanStd::from_values(|| initial().map(|z| z.re)),
        im: MeanStd::from_values(|| initial().map(|z| z.im)),
    };
    let output = ComplexStats {
        re: MeanStd::from_values(|| frames().map(|z| z.re)),
        im: MeanStd::from_values(|| frames().map(|z| z.im)),
    };
    let descriptor = (0..n_f)
        .map(|i| MeanStd::from_values(|| descriptors.iter().map(move |d| d[i])))
        .collect();

    Ok(NormStats {
        input,
        output,
        descriptor,
    })
}
