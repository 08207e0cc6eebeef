//! Per-pulse count histograms for one detector and joint histograms for two.
//!
//! Integer histograms come from measurements or simulation. Expected-count
//! histograms hold decimal bin values: analytic fixtures, dark-subtracted data,
//! and crosstalk-transformed histograms.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::detector::JointPhotocountDistribution;
use crate::error::{Error, Result};
use crate::sources::PhotonNumberDistribution;

/// Free-form annotations (source, detector settings, seed, temperature, corrections).
pub type Meta = BTreeMap<String, String>;

/// Read access shared by integer and expected-count histograms.
pub trait Histogram {
    fn trials(&self) -> f64;
    /// Number of bins, including bin 0.
    fn len(&self) -> usize;
    fn count(&self, k: usize) -> f64;
    fn meta(&self) -> &Meta;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn counts_f64(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.count(k)).collect()
    }
}

/// Read access shared by integer and expected-count joint histograms.
pub trait JointHistogram {
    fn trials(&self) -> f64;
    /// (signal bins, idler bins)
    fn dims(&self) -> (usize, usize);
    fn count(&self, signal: usize, idler: usize) -> f64;
    fn meta(&self) -> &Meta;

    /// Non-empty cells as `(N_s, N_i, count)`.
    fn cells(&self) -> Vec<(usize, usize, f64)> {
        let (rows, cols) = self.dims();
        let mut out = Vec::new();
        for a in 0..rows {
            for b in 0..cols {
                let c = self.count(a, b);
                if c > 0.0 {
                    out.push((a, b, c));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountHistogram {
    trials: u64,
    counts: Vec<u64>,
    #[serde(default)]
    meta: Meta,
}

impl CountHistogram {
    /// `counts[k]` is the number of pulses with `k` counts; bin 0 included, so the bins
    /// must add up to `trials`.
    pub fn new(trials: u64, counts: Vec<u64>) -> Result<Self> {
        if trials == 0 {
            return Err(Error::domain("histogram needs at least one trial"));
        }
        if counts.is_empty() {
            return Err(Error::domain("histogram needs at least one bin"));
        }
        let total: u64 = counts.iter().sum();
        if total != trials {
            return Err(Error::domain(format!(
                "bins add up to {total} but trials = {trials}"
            )));
        }
        Ok(Self {
            trials,
            counts,
            meta: Meta::new(),
        })
    }

    /// Build from bins `k = 1, 2, ...`; bin 0 is synthesized as `trials - sum`.
    pub fn from_signal_bins(trials: u64, signal: &[u64]) -> Result<Self> {
        let total: u64 = signal.iter().sum();
        if total > trials {
            return Err(Error::domain(format!(
                "signal bins add up to {total}, more than {trials} trials"
            )));
        }
        let mut counts = Vec::with_capacity(signal.len() + 1);
        counts.push(trials - total);
        counts.extend_from_slice(signal);
        Self::new(trials, counts)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn trial_count(&self) -> u64 {
        self.trials
    }

    pub fn meta_mut(&mut self) -> &mut Meta {
        &mut self.meta
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.insert(key.into(), value.to_string());
        self
    }

    /// Sum of two histograms over the same pulses' kind; bins are padded as needed.
    pub fn merge(&self, other: &CountHistogram) -> CountHistogram {
        let len = self.counts.len().max(other.counts.len());
        let counts = (0..len)
            .map(|k| self.counts.get(k).unwrap_or(&0) + other.counts.get(k).unwrap_or(&0))
            .collect();
        CountHistogram {
            trials: self.trials + other.trials,
            counts,
            meta: self.meta.clone(),
        }
    }

    /// Multiply every bin and the trial count by `factor`.
    pub fn scaled(&self, factor: u64) -> CountHistogram {
        CountHistogram {
            trials: self.trials * factor,
            counts: self.counts.iter().map(|c| c * factor).collect(),
            meta: self.meta.clone(),
        }
    }
}

impl Histogram for CountHistogram {
    fn trials(&self) -> f64 {
        self.trials as f64
    }

    fn len(&self) -> usize {
        self.counts.len()
    }

    fn count(&self, k: usize) -> f64 {
        self.counts.get(k).map_or(0.0, |&c| c as f64)
    }

    fn meta(&self) -> &Meta {
        &self.meta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedHistogram {
    trials: f64,
    counts: Vec<f64>,
    #[serde(default)]
    meta: Meta,
}

impl ExpectedHistogram {
    pub fn new(trials: f64, counts: Vec<f64>) -> Result<Self> {
        if trials.is_nan() || trials <= 0.0 {
            return Err(Error::domain("histogram needs a positive trial count"));
        }
        if counts.is_empty() {
            return Err(Error::domain("histogram needs at least one bin"));
        }
        if counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::domain("expected counts must be finite and >= 0"));
        }
        Ok(Self {
            trials,
            counts,
            meta: Meta::new(),
        })
    }

    /// Model output whose bins may be negative (the truncated crosstalk expansion at
    /// large `k p`). Values must still be finite.
    pub(crate) fn new_signed(trials: f64, counts: Vec<f64>) -> Result<Self> {
        if trials.is_nan() || trials <= 0.0 || counts.is_empty() || counts.iter().any(|c| !c.is_finite()) {
            return Err(Error::domain(
                "signed histogram needs positive trials and finite bins",
            ));
        }
        Ok(Self {
            trials,
            counts,
            meta: Meta::new(),
        })
    }

    /// `N_k = T P(k)`.
    pub fn from_distribution(dist: &PhotonNumberDistribution, trials: f64) -> Result<Self> {
        Self::new(trials, dist.probs().iter().map(|p| p * trials).collect())
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn meta_mut(&mut self) -> &mut Meta {
        &mut self.meta
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.insert(key.into(), value.to_string());
        self
    }
}

impl From<&CountHistogram> for ExpectedHistogram {
    fn from(h: &CountHistogram) -> Self {
        Self {
            trials: h.trials as f64,
            counts: h.counts.iter().map(|&c| c as f64).collect(),
            meta: h.meta.clone(),
        }
    }
}

impl Histogram for ExpectedHistogram {
    fn trials(&self) -> f64 {
        self.trials
    }

    fn len(&self) -> usize {
        self.counts.len()
    }

    fn count(&self, k: usize) -> f64 {
        self.counts.get(k).copied().unwrap_or(0.0)
    }

    fn meta(&self) -> &Meta {
        &self.meta
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointCountHistogram {
    trials: u64,
    counts: Array2<u64>,
    meta: Meta,
}

impl JointCountHistogram {
    /// Rows are signal counts `N_s`, columns idler counts `N_i`; the matrix sums to `trials`.
    pub fn new(trials: u64, counts: Array2<u64>) -> Result<Self> {
        if trials == 0 {
            return Err(Error::domain("joint histogram needs at least one trial"));
        }
        if counts.is_empty() {
            return Err(Error::domain("joint histogram needs at least one cell"));
        }
        let total: u64 = counts.iter().sum();
        if total != trials {
            return Err(Error::domain(format!(
                "cells add up to {total} but trials = {trials}"
            )));
        }
        Ok(Self {
            trials,
            counts,
            meta: Meta::new(),
        })
    }

    /// Histogram of a list of `(N_s, N_i)` events.
    pub fn from_events(events: &[(usize, usize)]) -> Result<Self> {
        let rows = events.iter().map(|e| e.0).max().unwrap_or(0) + 1;
        let cols = events.iter().map(|e| e.1).max().unwrap_or(0) + 1;
        let mut counts = Array2::<u64>::zeros((rows, cols));
        for &(a, b) in events {
            counts[[a, b]] += 1;
        }
        Self::new(events.len() as u64, counts)
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn trial_count(&self) -> u64 {
        self.trials
    }

    pub fn meta_mut(&mut self) -> &mut Meta {
        &mut self.meta
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.insert(key.into(), value.to_string());
        self
    }

    /// Histogram of the signal arm alone.
    pub fn signal_marginal(&self) -> CountHistogram {
        let counts = self.counts.rows().into_iter().map(|r| r.sum()).collect();
        CountHistogram {
            trials: self.trials,
            counts,
            meta: self.meta.clone(),
        }
    }

    pub fn idler_marginal(&self) -> CountHistogram {
        let counts = self.counts.columns().into_iter().map(|c| c.sum()).collect();
        CountHistogram {
            trials: self.trials,
            counts,
            meta: self.meta.clone(),
        }
    }
}

impl JointHistogram for JointCountHistogram {
    fn trials(&self) -> f64 {
        self.trials as f64
    }

    fn dims(&self) -> (usize, usize) {
        self.counts.dim()
    }

    fn count(&self, signal: usize, idler: usize) -> f64 {
        self.counts.get([signal, idler]).map_or(0.0, |&c| c as f64)
    }

    fn meta(&self) -> &Meta {
        &self.meta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedJointHistogram {
    trials: f64,
    counts: Array2<f64>,
    meta: Meta,
}

impl ExpectedJointHistogram {
    pub fn new(trials: f64, counts: Array2<f64>) -> Result<Self> {
        if trials.is_nan() || trials <= 0.0 {
            return Err(Error::domain(
                "joint histogram needs a positive trial count",
            ));
        }
        if counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::domain("expected counts must be finite and >= 0"));
        }
        Ok(Self {
            trials,
            counts,
            meta: Meta::new(),
        })
    }

    pub fn from_distribution(joint: &JointPhotocountDistribution, trials: f64) -> Result<Self> {
        Self::new(trials, joint.probs().mapv(|p| p * trials))
    }

    pub fn counts(&self) -> &Array2<f64> {
        &self.counts
    }

    pub fn meta_mut(&mut self) -> &mut Meta {
        &mut self.meta
    }
}

impl JointHistogram for ExpectedJointHistogram {
    fn trials(&self) -> f64 {
        self.trials
    }

    fn dims(&self) -> (usize, usize) {
        self.counts.dim()
    }

    fn count(&self, signal: usize, idler: usize) -> f64 {
        self.counts.get([signal, idler]).copied().unwrap_or(0.0)
    }

    fn meta(&self) -> &Meta {
        &self.meta
    }
}
