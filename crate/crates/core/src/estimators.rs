//! Statistics of measured or simulated count histograms.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::{ExpectedHistogram, Histogram, JointHistogram};
use crate::math::KahanSum;
use crate::rng::{stream_rng, Stage};

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMethod {
    Propagation,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithError {
    pub value: f64,
    pub std_err: f64,
    pub method: ErrorMethod,
}

/// Number of pairwise coincidences `sum C(k,2) N_k` and of counts `sum k N_k`.
pub fn coincidences_and_total(hist: &impl Histogram) -> (f64, f64) {
    let mut pairs = KahanSum::default();
    let mut total = KahanSum::default();
    for k in 0..hist.len() {
        let n = hist.count(k);
        let kf = k as f64;
        pairs.add(0.5 * kf * (kf - 1.0) * n);
        total.add(kf * n);
    }
    (pairs.total(), total.total())
}

/// Single-detector g2 from a count histogram: `2 T sum C(k,2) N_k / (sum k N_k)^2`.
///
/// The error treats every bin as an independent Poisson variable and propagates it
/// to first order.
pub fn g2_from_histogram(hist: &impl Histogram) -> Result<EstimateWithError> {
    let trials = hist.trials();
    let (pairs, total) = coincidences_and_total(hist);
    if total <= 0.0 {
        return Err(Error::undefined("g2 of a histogram without counts"));
    }
    let value = 2.0 * trials * pairs / (total * total);
    let mut var = KahanSum::default();
    for k in 1..hist.len() {
        let n = hist.count(k);
        if n == 0.0 {
            continue;
        }
        let kf = k as f64;
        let d = 2.0
            * trials
            * (0.5 * kf * (kf - 1.0) / (total * total) - 2.0 * kf * pairs / total.powi(3));
        var.add(d * d * n);
    }
    Ok(EstimateWithError {
        value,
        std_err: var.total().max(0.0).sqrt(),
        method: ErrorMethod::Propagation,
    })
}

/// Mean counts per pulse, `sum k N_k / T`.
pub fn mean_counts_per_pulse(hist: &impl Histogram) -> f64 {
    coincidences_and_total(hist).1 / hist.trials()
}

/// Resampling settings for the joint-histogram estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bootstrap {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for Bootstrap {
    fn default() -> Self {
        Self {
            resamples: DEFAULT_BOOTSTRAP_RESAMPLES,
            seed: 0,
        }
    }
}

impl Bootstrap {
    /// Default resample count, seeded from the histogram's `seed` annotation when present.
    pub fn for_histogram(hist: &impl JointHistogram) -> Self {
        let seed = hist
            .meta()
            .get("seed")
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Standard deviation of `stat` over multinomial resamples of the histogram cells.
    fn std_err<F>(&self, cells: &[(usize, usize, f64)], trials: f64, stat: F) -> f64
    where
        F: Fn(&[(usize, usize, f64)], f64) -> Option<f64> + Sync,
    {
        let n = trials.round().max(1.0) as u64;
        let weight: f64 = cells.iter().map(|c| c.2).sum();
        let values: Vec<f64> = (0..self.resamples as u64)
            .into_par_iter()
            .filter_map(|r| {
                let mut rng = stream_rng(self.seed, Stage::Bootstrap, r);
                let resampled = multinomial_resample(cells, weight, n, &mut rng);
                stat(&resampled, n as f64)
            })
            .collect();
        sample_std(&values)
    }
}

fn multinomial_resample<R: Rng>(
    cells: &[(usize, usize, f64)],
    weight: f64,
    trials: u64,
    rng: &mut R,
) -> Vec<(usize, usize, f64)> {
    let mut remaining = trials;
    let mut mass_left = weight;
    let mut out = Vec::with_capacity(cells.len());
    for (idx, &(a, b, w)) in cells.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let drawn = if idx + 1 == cells.len() || w >= mass_left {
            remaining
        } else {
            let p = (w / mass_left).clamp(0.0, 1.0);
            Binomial::new(remaining, p)
                .expect("probability clamped to [0, 1]")
                .sample(rng)
        };
        mass_left -= w;
        remaining -= drawn;
        if drawn > 0 {
            out.push((a, b, drawn as f64));
        }
    }
    out
}

fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (n - 1.0)).sqrt()
}

fn g2_cross_of_cells(cells: &[(usize, usize, f64)], trials: f64) -> Option<f64> {
    let (mut s, mut i, mut si) = (0.0, 0.0, 0.0);
    for &(a, b, c) in cells {
        s += a as f64 * c;
        i += b as f64 * c;
        si += (a * b) as f64 * c;
    }
    if s <= 0.0 || i <= 0.0 {
        return None;
    }
    Some(si * trials / (s * i))
}

fn nrf_of_cells(cells: &[(usize, usize, f64)], trials: f64) -> Option<f64> {
    let (mut d1, mut d2, mut sum) = (
        KahanSum::default(),
        KahanSum::default(),
        KahanSum::default(),
    );
    for &(a, b, c) in cells {
        let d = a as f64 - b as f64;
        d1.add(d * c);
        d2.add(d * d * c);
        sum.add((a + b) as f64 * c);
    }
    let mean_sum = sum.total() / trials;
    if mean_sum <= 0.0 || trials < 2.0 {
        return None;
    }
    let var = (d2.total() - d1.total() * d1.total() / trials) / (trials - 1.0);
    Some(var / mean_sum)
}

/// Two-detector correlation `<N_s N_i> / (<N_s><N_i>)` with a bootstrap error.
pub fn g2_cross_from_joint(joint: &impl JointHistogram) -> Result<EstimateWithError> {
    g2_cross_from_joint_with(joint, &Bootstrap::for_histogram(joint))
}

pub fn g2_cross_from_joint_with(
    joint: &impl JointHistogram,
    bootstrap: &Bootstrap,
) -> Result<EstimateWithError> {
    let cells = joint.cells();
    let trials = joint.trials();
    let value = g2_cross_of_cells(&cells, trials)
        .ok_or_else(|| Error::undefined("g2 across arms with a zero marginal mean"))?;
    Ok(EstimateWithError {
        value,
        std_err: bootstrap.std_err(&cells, trials, g2_cross_of_cells),
        method: ErrorMethod::Bootstrap,
    })
}

/// Noise reduction factor: unbiased sample variance of `N_s - N_i` over the mean of
/// `N_s + N_i`, with a bootstrap error.
pub fn nrf_from_joint(joint: &impl JointHistogram) -> Result<EstimateWithError> {
    nrf_from_joint_with(joint, &Bootstrap::for_histogram(joint))
}

pub fn nrf_from_joint_with(
    joint: &impl JointHistogram,
    bootstrap: &Bootstrap,
) -> Result<EstimateWithError> {
    let trials = joint.trials();
    if trials < 2.0 {
        return Err(Error::undefined("NRF needs at least two trials"));
    }
    let cells = joint.cells();
    let value = nrf_of_cells(&cells, trials)
        .ok_or_else(|| Error::undefined("NRF with zero mean photocount"))?;
    Ok(EstimateWithError {
        value,
        std_err: bootstrap.std_err(&cells, trials, nrf_of_cells),
        method: ErrorMethod::Bootstrap,
    })
}

/// Outcome of subtracting a dark (beam-blocked) histogram from a signal histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct DarkCorrected {
    pub histogram: ExpectedHistogram,
    /// Signal mean minus dark mean, floored at zero.
    pub corrected_mean: f64,
    /// Bins where the scaled dark count exceeded the signal and were set to zero.
    pub clamped_bins: Vec<usize>,
    /// Dark mean exceeded the signal mean.
    pub mean_clamped: bool,
}

impl DarkCorrected {
    pub fn has_warning(&self) -> bool {
        self.mean_clamped || !self.clamped_bins.is_empty()
    }
}

/// Bin-wise subtraction of the dark histogram scaled to the signal's trial count.
///
/// Bins `k >= 1` are reduced by `dark_k T_signal / T_dark` and floored at zero; bin 0
/// absorbs the removed events so the trial count is unchanged.
pub fn subtract_dark(signal: &impl Histogram, dark: &impl Histogram) -> Result<DarkCorrected> {
    let t_signal = signal.trials();
    let scale = t_signal / dark.trials();
    let len = signal.len().max(dark.len()).max(1);
    let mut counts = vec![0.0; len];
    let mut clamped_bins = Vec::new();
    for (k, slot) in counts.iter_mut().enumerate().skip(1) {
        let diff = signal.count(k) - scale * dark.count(k);
        if diff < 0.0 {
            clamped_bins.push(k);
        }
        *slot = diff.max(0.0);
    }
    let kept: f64 = counts.iter().sum();
    counts[0] = (t_signal - kept).max(0.0);

    let signal_mean = mean_counts_per_pulse(signal);
    let dark_mean = mean_counts_per_pulse(dark);
    let mean_clamped = dark_mean > signal_mean;
    if mean_clamped {
        log::warn!("dark mean {dark_mean} exceeds signal mean {signal_mean}; clamping to zero");
    }
    if !clamped_bins.is_empty() {
        log::warn!("dark counts exceed the signal in bins {clamped_bins:?}; clamped to zero");
    }
    let corrected_mean = (signal_mean - dark_mean).max(0.0);

    let mut histogram = ExpectedHistogram::new(t_signal, counts)?;
    let meta = histogram.meta_mut();
    meta.extend(signal.meta().iter().map(|(k, v)| (k.clone(), v.clone())));
    meta.insert("dark_subtraction".into(), "bin-wise expected counts".into());
    meta.insert("dark_mean_per_pulse".into(), format!("{dark_mean}"));
    meta.insert("dark_scale".into(), format!("{scale}"));
    if !clamped_bins.is_empty() || mean_clamped {
        meta.insert("dark_warning".into(), "clamped".into());
    }
    Ok(DarkCorrected {
        histogram,
        corrected_mean,
        clamped_bins,
        mean_clamped,
    })
}
