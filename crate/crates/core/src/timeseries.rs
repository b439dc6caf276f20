//! Timestamped sample containers shared by every stage of the pipeline.
//!
//! A [`TimeSeries`] is a strictly-increasing time axis plus D-dimensional
//! samples stored row-major, with the physical unit carried as metadata.
//! Everything downstream (sensor streams, estimator output, metric inputs)
//! is built on top of it. Series are immutable after construction and safe
//! to share across threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Physical unit of the samples in a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "m")]
    Meters,
    #[serde(rename = "m/s")]
    MetersPerSecond,
    #[serde(rename = "m/s^2")]
    MetersPerSecondSquared,
    #[serde(rename = "rad")]
    Radians,
    #[serde(rename = "rad/s")]
    RadiansPerSecond,
    #[serde(rename = "1")]
    Dimensionless,
}

#[derive(Debug, Error, PartialEq)]
pub enum TimeSeriesError {
    #[error("timestamps must be strictly increasing (violation at index {0})")]
    NonMonotonicTimestamps(usize),
    #[error("timestamp/value length mismatch: {timestamps} timestamps, {samples} samples")]
    LengthMismatch { timestamps: usize, samples: usize },
    #[error("sample dimension must be >= 1")]
    ZeroDimension,
    #[error("data length {data} is not a multiple of dimension {dim}")]
    RaggedData { data: usize, dim: usize },
    #[error("non-finite value at sample {0}")]
    NonFinite(usize),
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("speed magnitude requires dimension >= 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("aligned pair requires identical timestamp arrays")]
    TimestampMismatch,
    #[error("insufficient overlap between series after trimming")]
    InsufficientOverlap,
}

/// Uniformly or irregularly timestamped D-dimensional samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    timestamps: Vec<f64>,
    /// Row-major sample data, `timestamps.len() * dim` entries.
    data: Vec<f64>,
    dim: usize,
    unit: Unit,
}

impl TimeSeries {
    /// Build a series from a time axis and row-major data, validating the
    /// container invariants (strictly increasing time, matching lengths,
    /// finite values).
    pub fn new(
        timestamps: Vec<f64>,
        data: Vec<f64>,
        dim: usize,
        unit: Unit,
    ) -> Result<Self, TimeSeriesError> {
        if dim == 0 {
            return Err(TimeSeriesError::ZeroDimension);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(TimeSeriesError::RaggedData {
                data: data.len(),
                dim,
            });
        }
        if data.len() / dim != timestamps.len() {
            return Err(TimeSeriesError::LengthMismatch {
                timestamps: timestamps.len(),
                samples: data.len() / dim,
            });
        }
        for (i, w) in timestamps.windows(2).enumerate() {
            let increasing = w[1] > w[0];
            if !increasing {
                return Err(TimeSeriesError::NonMonotonicTimestamps(i + 1));
            }
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TimeSeriesError::NonFinite(i / dim));
        }
        if let Some(i) = timestamps.iter().position(|t| !t.is_finite()) {
            return Err(TimeSeriesError::NonFinite(i));
        }
        Ok(Self {
            timestamps,
            data,
            dim,
            unit,
        })
    }

    /// Convenience constructor for 1-D series.
    pub fn scalar(timestamps: Vec<f64>, values: Vec<f64>, unit: Unit) -> Result<Self, TimeSeriesError> {
        Self::new(timestamps, values, 1, unit)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    /// The i-th sample as a D-length slice.
    pub fn sample(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// All values of a 1-D series.
    pub fn values(&self) -> &[f64] {
        debug_assert_eq!(self.dim, 1);
        &self.data
    }

    pub fn first_time(&self) -> Option<f64> {
        self.timestamps.first().copied()
    }

    pub fn last_time(&self) -> Option<f64> {
        self.timestamps.last().copied()
    }
}

/// Linearly resample a series onto `target_timestamps`.
///
/// Targets outside the source span are dropped, so the output may be shorter
/// than the target list. Targets that coincide exactly with a source
/// timestamp reproduce the source sample bitwise.
pub fn resample_linear(
    series: &TimeSeries,
    target_timestamps: &[f64],
) -> Result<TimeSeries, TimeSeriesError> {
    if series.len() < 2 {
        return Err(TimeSeriesError::InsufficientSamples {
            needed: 2,
            got: series.len(),
        });
    }
    for (i, w) in target_timestamps.windows(2).enumerate() {
        let increasing = w[1] > w[0];
        if !increasing {
            return Err(TimeSeriesError::NonMonotonicTimestamps(i + 1));
        }
    }
    let ts = series.timestamps();
    let (t_first, t_last) = (ts[0], ts[ts.len() - 1]);
    let dim = series.dim();
    let mut out_t = Vec::new();
    let mut out_v = Vec::new();
    for &t in target_timestamps {
        if t < t_first || t > t_last {
            continue;
        }
        // Index of the first source timestamp >= t.
        let idx = ts.partition_point(|&s| s < t);
        if ts[idx] == t {
            out_t.push(t);
            out_v.extend_from_slice(series.sample(idx));
            continue;
        }
        let (i0, i1) = (idx - 1, idx);
        let w = (t - ts[i0]) / (ts[i1] - ts[i0]);
        let (a, b) = (series.sample(i0), series.sample(i1));
        out_t.push(t);
        out_v.extend((0..dim).map(|d| a[d] + (b[d] - a[d]) * w));
    }
    TimeSeries::new(out_t, out_v, dim, series.unit())
}

/// Horizontal ground-speed magnitude of a velocity series.
///
/// Uses the first two components only; any vertical component is ignored.
pub fn speed_magnitude(vel: &TimeSeries) -> Result<TimeSeries, TimeSeriesError> {
    if vel.dim() < 2 {
        return Err(TimeSeriesError::DimensionTooSmall(vel.dim()));
    }
    let values = (0..vel.len())
        .map(|i| {
            let s = vel.sample(i);
            s[0].hypot(s[1])
        })
        .collect();
    TimeSeries::scalar(vel.timestamps().to_vec(), values, Unit::MetersPerSecond)
}

/// An estimate/ground-truth pair of 1-D speed traces on the same clock.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    estimate: TimeSeries,
    ground_truth: TimeSeries,
}

impl AlignedPair {
    /// Pair two 1-D series that already share a timestamp array (length >= 2).
    pub fn new(estimate: TimeSeries, ground_truth: TimeSeries) -> Result<Self, TimeSeriesError> {
        if estimate.dim() != 1 || ground_truth.dim() != 1 {
            return Err(TimeSeriesError::DimensionTooSmall(1));
        }
        if estimate.timestamps() != ground_truth.timestamps() {
            return Err(TimeSeriesError::TimestampMismatch);
        }
        if estimate.len() < 2 {
            return Err(TimeSeriesError::InsufficientSamples {
                needed: 2,
                got: estimate.len(),
            });
        }
        Ok(Self {
            estimate,
            ground_truth,
        })
    }

    /// Align a ground-truth trace onto the estimate clock.
    ///
    /// The estimate timestamps are authoritative: the pair keeps only the
    /// window where both series exist, skips `warmup_s` seconds from the
    /// start of that window, and resamples the ground truth onto the
    /// surviving estimate timestamps.
    pub fn align(
        estimate: &TimeSeries,
        ground_truth: &TimeSeries,
        warmup_s: f64,
    ) -> Result<Self, TimeSeriesError> {
        if estimate.dim() != 1 || ground_truth.dim() != 1 {
            return Err(TimeSeriesError::DimensionTooSmall(1));
        }
        if estimate.len() < 2 || ground_truth.len() < 2 {
            return Err(TimeSeriesError::InsufficientOverlap);
        }
        let start = estimate.first_time().unwrap().max(ground_truth.first_time().unwrap()) + warmup_s;
        let end = estimate.last_time().unwrap().min(ground_truth.last_time().unwrap());
        let kept: Vec<f64> = estimate
            .timestamps()
            .iter()
            .copied()
            .filter(|&t| t >= start && t <= end)
            .collect();
        if kept.len() < 2 {
            return Err(TimeSeriesError::InsufficientOverlap);
        }
        let est = resample_linear(estimate, &kept)?;
        let gt = resample_linear(ground_truth, &kept)?;
        Self::new(est, gt)
    }

    pub fn estimate(&self) -> &TimeSeries {
        &self.estimate
    }

    pub fn ground_truth(&self) -> &TimeSeries {
        &self.ground_truth
    }

    pub fn len(&self) -> usize {
        self.estimate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimate.is_empty()
    }
}
