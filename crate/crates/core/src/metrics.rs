//! Per-run error signatures and the VEPD population metric.
//!
//! Each run is reduced to two numbers: the speed RMSE against ground truth
//! and the absolute difference between the Wiener entropies (spectral
//! flatness) of the estimated and ground-truth speed traces. Two
//! populations of runs are compared with exact 1-D Wasserstein distances
//! over each component, and the final score is their average:
//!
//! ```text
//! VEPD = (W1(rmse_real, rmse_sim) + W2(entropy_real, entropy_sim)) / 2
//! ```
//!
//! Flatness is computed on the mean-removed signal with the DC bin
//! excluded; a nonzero mean would otherwise swamp the ratio and hide the
//! noise structure. `wiener_entropy_literal` keeps the raw signal and all
//! bins for comparison. Zero bins (relative to the largest) force the
//! flatness to 0, the tonal extreme; spectra that are flat to within 1e-9
//! relative report exactly 1.0, the noise extreme.

use crate::timeseries::{AlignedPair, TimeSeries};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("series must be 1-D for spectral analysis")]
    NotScalar,
    #[error("need at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("degenerate spectrum: signal has no energy")]
    DegenerateSpectrum,
    #[error("populations must have equal size (left {left}, right {right})")]
    SizeMismatch { left: usize, right: usize },
    #[error("population must not be empty")]
    EmptyPopulation,
    #[error("non-finite value in population")]
    NonFinite,
    #[error("run score out of range: rmse {rmse}, entropy_diff {entropy_diff}")]
    ScoreOutOfRange { rmse: f64, entropy_diff: f64 },
}

/// Root-mean-square error between the paired speed traces, m/s.
pub fn rmse(pair: &AlignedPair) -> f64 {
    let e = pair.estimate().values();
    let g = pair.ground_truth().values();
    let sum_sq: f64 = e.iter().zip(g).map(|(a, b)| (a - b).powi(2)).sum();
    (sum_sq / e.len() as f64).sqrt()
}

/// Relative spread below which a spectrum counts as flat and reports 1.0.
const FLATNESS_SNAP: f64 = 1e-9;
/// Bins below `ZERO_BIN_EPS * max` force the flatness to 0.
const ZERO_BIN_EPS: f64 = 1e-12;

fn spectral_flatness(values: &[f64], remove_mean: bool) -> Result<f64, MetricsError> {
    let n = values.len();
    if n < 2 {
        return Err(MetricsError::TooShort(n));
    }
    let mean = if remove_mean {
        values.iter().sum::<f64>() / n as f64
    } else {
        0.0
    };
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    // The DC bin carries only the (removed) mean; keep it in literal mode.
    let first_bin = if remove_mean { 1 } else { 0 };
    let magnitudes: Vec<f64> = buf[first_bin..].iter().map(|c| c.norm()).collect();

    let max = magnitudes.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(MetricsError::DegenerateSpectrum);
    }
    let min = magnitudes.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < ZERO_BIN_EPS * max {
        return Ok(0.0);
    }
    if min >= max * (1.0 - FLATNESS_SNAP) {
        return Ok(1.0);
    }

    let arith = magnitudes.iter().sum::<f64>() / magnitudes.len() as f64;
    // geo/arith computed as exp(mean(ln(m / arith))) for conditioning.
    let log_mean = magnitudes.iter().map(|&m| (m / arith).ln()).sum::<f64>() / magnitudes.len() as f64;
    Ok(log_mean.exp().min(1.0))
}

/// Wiener entropy (spectral flatness) of a 1-D series: the ratio of the
/// geometric to the arithmetic mean of the DFT magnitude spectrum of the
/// mean-removed signal. 1 = flat/noise-like, 0 = tonal.
pub fn wiener_entropy(series: &TimeSeries) -> Result<f64, MetricsError> {
    if series.dim() != 1 {
        return Err(MetricsError::NotScalar);
    }
    spectral_flatness(series.values(), true)
}

/// Flatness of the raw signal over all DFT bins including DC.
pub fn wiener_entropy_literal(series: &TimeSeries) -> Result<f64, MetricsError> {
    if series.dim() != 1 {
        return Err(MetricsError::NotScalar);
    }
    spectral_flatness(series.values(), false)
}

/// Absolute difference between the entropies of the two traces.
pub fn entropy_diff(estimate: &TimeSeries, ground_truth: &TimeSeries) -> Result<f64, MetricsError> {
    Ok((wiener_entropy(estimate)? - wiener_entropy(ground_truth)?).abs())
}

/// Exact 1-D Wasserstein distance between two equal-size point sets:
/// the mean absolute difference of the sorted values, which realizes the
/// optimal transport cost for equal-weight empirical distributions.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptyPopulation);
    }
    if a.len() != b.len() {
        return Err(MetricsError::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap());
    let total: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum();
    Ok(total / a.len() as f64)
}

/// Error signature of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    /// Speed RMSE against ground truth, m/s.
    pub rmse: f64,
    /// |S(estimate) - S(ground truth)|, dimensionless in [0, 1].
    pub entropy_diff: f64,
}

/// K per-run scores forming one empirical distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPopulation {
    pub label: String,
    pub scores: Vec<RunScore>,
}

impl RunPopulation {
    pub fn new(label: impl Into<String>, scores: Vec<RunScore>) -> Result<Self, MetricsError> {
        if scores.is_empty() {
            return Err(MetricsError::EmptyPopulation);
        }
        for s in &scores {
            if !s.rmse.is_finite() || !s.entropy_diff.is_finite() {
                return Err(MetricsError::NonFinite);
            }
            if s.rmse < 0.0 || !(0.0..=1.0).contains(&s.entropy_diff) {
                return Err(MetricsError::ScoreOutOfRange {
                    rmse: s.rmse,
                    entropy_diff: s.entropy_diff,
                });
            }
        }
        Ok(Self {
            label: label.into(),
            scores,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn rmse_values(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.rmse).collect()
    }

    pub fn entropy_values(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.entropy_diff).collect()
    }
}

/// The two Wasserstein components and their average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VepdReport {
    /// Wasserstein distance over per-run RMSE values, m/s.
    pub w1: f64,
    /// Wasserstein distance over per-run entropy differences.
    pub w2: f64,
    /// (w1 + w2) / 2.
    pub vepd: f64,
}

impl VepdReport {
    /// Compose a report from the two component distances.
    pub fn from_components(w1: f64, w2: f64) -> Self {
        Self {
            w1,
            w2,
            vepd: (w1 + w2) / 2.0,
        }
    }
}

/// Compare two run populations: W1 over RMSE values, W2 over entropy
/// differences, VEPD their average.
pub fn vepd(real: &RunPopulation, sim: &RunPopulation) -> Result<VepdReport, MetricsError> {
    let w1 = wasserstein_1d(&real.rmse_values(), &sim.rmse_values())?;
    let w2 = wasserstein_1d(&real.entropy_values(), &sim.entropy_values())?;
    Ok(VepdReport::from_components(w1, w2))
}

/// Equal-width histogram counts for report/plot data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// bins + 1 edges; values equal to the last edge land in the last bin.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Histogram {
    let bins = bins.max(1);
    let hi = if hi > lo { hi } else { lo + 1.0 };
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        if v < lo || v > hi {
            continue;
        }
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Histogram { edges, counts }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::Unit;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn pair(e: &[f64], g: &[f64]) -> AlignedPair {
        let ts: Vec<f64> = (0..e.len()).map(|i| i as f64).collect();
        AlignedPair::new(
            TimeSeries::scalar(ts.clone(), e.to_vec(), Unit::MetersPerSecond).unwrap(),
            TimeSeries::scalar(ts, g.to_vec(), Unit::MetersPerSecond).unwrap(),
        )
        .unwrap()
    }

    fn scalar(values: Vec<f64>) -> TimeSeries {
        let ts: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
        TimeSeries::scalar(ts, values, Unit::MetersPerSecond).unwrap()
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&pair(&[1.0, 2.0], &[1.0, 2.0])), 0.0);
        let offset = rmse(&pair(&[1.5, 2.5, 3.5], &[1.0, 2.0, 3.0]));
        assert!((offset - 0.5).abs() < 1e-12);
        let hand = rmse(&pair(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]));
        assert!((hand - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn wiener_entropy_of_impulse_is_exactly_one() {
        let mut values = vec![0.0; 256];
        values[0] = 1.0;
        assert_eq!(wiener_entropy(&scalar(values)).unwrap(), 1.0);
    }

    #[test]
    fn wiener_entropy_of_integer_bin_sinusoid_is_zero() {
        let n = 256;
        let values: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 8.0 * i as f64 / n as f64).sin())
            .collect();
        assert_eq!(wiener_entropy(&scalar(values)).unwrap(), 0.0);
    }

    #[test]
    fn wiener_entropy_rejects_degenerate_signals() {
        assert_eq!(
            wiener_entropy(&scalar(vec![0.0; 64])).unwrap_err(),
            MetricsError::DegenerateSpectrum
        );
        // constant signal degenerates once the mean is removed
        assert_eq!(
            wiener_entropy(&scalar(vec![2.0; 64])).unwrap_err(),
            MetricsError::DegenerateSpectrum
        );
        // but the literal mode sees a pure DC spectrum: tonal, S = 0
        assert_eq!(wiener_entropy_literal(&scalar(vec![2.0; 64])).unwrap(), 0.0);
    }

    #[test]
    fn white_noise_flatness_matches_rayleigh_constant() {
        // For complex-Gaussian spectra the expected flatness is
        // (2/sqrt(pi)) * exp(-gamma/2) = 0.8455; check the ensemble mean.
        let expected = 2.0 / std::f64::consts::PI.sqrt() * (-0.577_215_664_901_532_9f64 / 2.0).exp();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let runs = 100;
        let mut total = 0.0;
        for _ in 0..runs {
            let values: Vec<f64> = (0..1024).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            total += wiener_entropy(&scalar(values)).unwrap();
        }
        let mean = total / runs as f64;
        assert!(
            (mean - expected).abs() / expected < 0.02,
            "mean {mean}, expected {expected}"
        );
    }

    #[test]
    fn entropy_diff_is_symmetric_and_zero_on_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = scalar((0..128).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
        let b = scalar((0..128).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
        assert_eq!(entropy_diff(&a, &a).unwrap(), 0.0);
        assert_eq!(entropy_diff(&a, &b).unwrap(), entropy_diff(&b, &a).unwrap());
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(wasserstein_1d(&[3.0, 1.0, 2.0], &[2.0, 3.0, 1.0]).unwrap(), 0.0);
        assert!((wasserstein_1d(&[0.0, 1.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((wasserstein_1d(&[0.0, 4.0], &[1.0, 2.0]).unwrap() - 1.5).abs() < 1e-12);
        // distances are reported unclamped; they exceed 1 for spread inputs
        assert_eq!(wasserstein_1d(&[0.0], &[2.5]).unwrap(), 2.5);
    }

    #[test]
    fn wasserstein_rejects_bad_inputs() {
        assert_eq!(
            wasserstein_1d(&[], &[]).unwrap_err(),
            MetricsError::EmptyPopulation
        );
        assert!(matches!(
            wasserstein_1d(&[1.0], &[1.0, 2.0]).unwrap_err(),
            MetricsError::SizeMismatch { .. }
        ));
    }

    /// Brute-force minimum transport cost over all bijections (K <= 6).
    fn brute_force_wasserstein(a: &[f64], b: &[f64]) -> f64 {
        fn permutations(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
            if k <= 1 {
                out.push(items.clone());
                return;
            }
            for i in 0..k {
                permutations(items, k - 1, out);
                if k.is_multiple_of(2) {
                    items.swap(i, k - 1);
                } else {
                    items.swap(0, k - 1);
                }
            }
        }
        let mut idx: Vec<usize> = (0..a.len()).collect();
        let mut perms = Vec::new();
        permutations(&mut idx, a.len(), &mut perms);
        perms
            .iter()
            .map(|p| {
                a.iter()
                    .zip(p.iter().map(|&j| b[j]))
                    .map(|(x, y)| (x - y).abs())
                    .sum::<f64>()
                    / a.len() as f64
            })
            .fold(f64::INFINITY, f64::min)
    }

    proptest! {
        #[test]
        fn sorted_matching_equals_brute_force(
            a in proptest::collection::vec(-10.0f64..10.0, 1..=6),
            b_seed in proptest::collection::vec(-10.0f64..10.0, 6),
        ) {
            let b = &b_seed[..a.len()];
            let fast = wasserstein_1d(&a, b).unwrap();
            let brute = brute_force_wasserstein(&a, b);
            prop_assert!((fast - brute).abs() < 1e-12);
        }

        #[test]
        fn wasserstein_metric_axioms(
            a in proptest::collection::vec(-5.0f64..5.0, 4),
            b in proptest::collection::vec(-5.0f64..5.0, 4),
            c in proptest::collection::vec(-5.0f64..5.0, 4),
        ) {
            let dab = wasserstein_1d(&a, &b).unwrap();
            let dba = wasserstein_1d(&b, &a).unwrap();
            let daa = wasserstein_1d(&a, &a).unwrap();
            let dac = wasserstein_1d(&a, &c).unwrap();
            let dcb = wasserstein_1d(&c, &b).unwrap();
            prop_assert_eq!(daa, 0.0);
            prop_assert!((dab - dba).abs() < 1e-12);
            prop_assert!(dab <= dac + dcb + 1e-12);
        }

        #[test]
        fn rmse_symmetry_identity_linearity(
            e in proptest::collection::vec(-10.0f64..10.0, 3..20),
            g_seed in proptest::collection::vec(-10.0f64..10.0, 20),
            c in -5.0f64..5.0,
        ) {
            let g = &g_seed[..e.len()];
            let forward = rmse(&pair(&e, g));
            let backward = rmse(&pair(g, &e));
            prop_assert!((forward - backward).abs() < 1e-12);
            prop_assert_eq!(rmse(&pair(&e, &e)), 0.0);
            let ce: Vec<f64> = e.iter().map(|v| c * v).collect();
            let cg: Vec<f64> = g.iter().map(|v| c * v).collect();
            let scaled = rmse(&pair(&ce, &cg));
            prop_assert!((scaled - c.abs() * forward).abs() < 1e-9);
        }

        #[test]
        fn flatness_is_bounded_and_scale_invariant(
            seed in 0u64..1000,
            scale in prop_oneof![Just(-3.0f64), Just(0.5f64), Just(7.0f64)],
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f64> = (0..128).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let s = wiener_entropy(&scalar(values.clone())).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
            let s2 = wiener_entropy(&scalar(scaled)).unwrap();
            prop_assert!((s - s2).abs() < 1e-12);
        }
    }

    #[test]
    fn vepd_of_identical_populations_is_zero() {
        let scores = vec![
            RunScore {
                rmse: 0.2,
                entropy_diff: 0.03,
            },
            RunScore {
                rmse: 0.1,
                entropy_diff: 0.01,
            },
        ];
        let a = RunPopulation::new("real", scores.clone()).unwrap();
        let b = RunPopulation::new("sim", scores).unwrap();
        let r = vepd(&a, &b).unwrap();
        assert_eq!((r.w1, r.w2, r.vepd), (0.0, 0.0, 0.0));
    }

    #[test]
    fn vepd_is_symmetric() {
        let a = RunPopulation::new(
            "a",
            vec![
                RunScore {
                    rmse: 0.3,
                    entropy_diff: 0.05,
                },
                RunScore {
                    rmse: 0.7,
                    entropy_diff: 0.2,
                },
            ],
        )
        .unwrap();
        let b = RunPopulation::new(
            "b",
            vec![
                RunScore {
                    rmse: 0.1,
                    entropy_diff: 0.0,
                },
                RunScore {
                    rmse: 0.4,
                    entropy_diff: 0.6,
                },
            ],
        )
        .unwrap();
        assert_eq!(vepd(&a, &b).unwrap(), vepd(&b, &a).unwrap());
    }

    #[test]
    fn vepd_composition_halves_w1_when_w2_zero() {
        let r = VepdReport::from_components(
            wasserstein_1d(&[0.0, 4.0], &[1.0, 2.0]).unwrap(),
            0.0,
        );
        assert_eq!(r.vepd, r.w1 / 2.0);
        assert_eq!(r.w1, 1.5);
    }

    #[test]
    fn population_validates_scores() {
        assert!(RunPopulation::new("x", vec![]).is_err());
        assert!(RunPopulation::new(
            "x",
            vec![RunScore {
                rmse: -0.1,
                entropy_diff: 0.0
            }]
        )
        .is_err());
        assert!(RunPopulation::new(
            "x",
            vec![RunScore {
                rmse: 0.1,
                entropy_diff: 1.2
            }]
        )
        .is_err());
    }

    #[test]
    fn histogram_bins_values() {
        let h = histogram(&[0.0, 0.1, 0.5, 1.0], 0.0, 1.0, 2);
        assert_eq!(h.edges, vec![0.0, 0.5, 1.0]);
        assert_eq!(h.counts, vec![2, 2]); // 0.5 lands in the upper bin, 1.0 clamps in
    }
}
