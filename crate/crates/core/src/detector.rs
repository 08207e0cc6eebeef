//! Analytic response of a multipixel photon counter.
//!
//! Incident photons are detected independently with efficiency `eta`; every
//! detected avalanche fires at most one neighbouring pixel with probability
//! `p_xt`; the recorded count is clamped at the saturation level `n_max`.
//! Dark avalanches (Poisson, mean `dark_mean`) join the detected avalanches
//! before crosstalk, and the clamp acts last.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{binomial_pmf, poisson_pmf_until, KahanSum};
use crate::sources::{PhotonNumberDistribution, SourceSpec, TAIL_TOLERANCE};

pub const DEFAULT_PIXEL_COUNT: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    /// Detection efficiency including optical losses.
    pub eta: f64,
    /// Crosstalk probability per fired pixel.
    pub p_xt: f64,
    /// Saturation level: largest count the detector can report.
    pub n_max: usize,
    /// Mean number of dark avalanches per pulse.
    pub dark_mean: f64,
    /// Number of pixels (metadata).
    pub pixel_count: usize,
}

impl DetectorParams {
    pub fn new(eta: f64, p_xt: f64, n_max: usize) -> Result<Self> {
        let params = Self {
            eta,
            p_xt,
            n_max,
            dark_mean: 0.0,
            pixel_count: DEFAULT_PIXEL_COUNT.max(n_max),
        };
        params.validate()?;
        Ok(params)
    }

    /// Unit efficiency, no crosstalk, no dark counts.
    pub fn ideal(n_max: usize) -> Self {
        Self {
            eta: 1.0,
            p_xt: 0.0,
            n_max,
            dark_mean: 0.0,
            pixel_count: DEFAULT_PIXEL_COUNT.max(n_max),
        }
    }

    pub fn with_dark(mut self, dark_mean: f64) -> Result<Self> {
        self.dark_mean = dark_mean;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::domain(format!("eta = {} outside [0, 1]", self.eta)));
        }
        check_xt(self.p_xt)?;
        if self.n_max < 1 {
            return Err(Error::domain("n_max must be >= 1"));
        }
        if !self.dark_mean.is_finite() || self.dark_mean < 0.0 {
            return Err(Error::domain(format!(
                "dark mean {} must be >= 0",
                self.dark_mean
            )));
        }
        if self.n_max > self.pixel_count {
            return Err(Error::domain(format!(
                "n_max = {} exceeds pixel count {}",
                self.n_max, self.pixel_count
            )));
        }
        Ok(())
    }

    /// Crosstalk-inflated efficiency `(1 + p) eta`.
    pub fn effective_efficiency(&self) -> f64 {
        (1.0 + self.p_xt) * self.eta
    }
}

fn check_xt(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::domain(format!(
            "crosstalk probability {p} outside [0, 1)"
        )));
    }
    Ok(())
}

/// Probability that `n` primary avalanches produce `m` counts, at most one crosstalk each.
pub fn xt_kernel(n: usize, m: usize, p: f64) -> Result<f64> {
    check_xt(p)?;
    if m < n || m > 2 * n {
        return Ok(0.0);
    }
    Ok(binomial_pmf(n as u64, (m - n) as u64, p))
}

/// Probability that `n` of `k` incident photons are detected.
pub fn qe_kernel(k: usize, n: usize, eta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::domain(format!("eta = {eta} outside [0, 1]")));
    }
    Ok(binomial_pmf(k as u64, n as u64, eta))
}

/// Response probabilities `Q(N|k)`: rows are counts `N = 0..=n_max`, columns photon
/// numbers `k = 0..=k_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct PovmMatrix {
    q: Array2<f64>,
    params: DetectorParams,
}

impl PovmMatrix {
    pub fn q(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn get(&self, count: usize, photons: usize) -> f64 {
        self.q[[count, photons]]
    }

    pub fn params(&self) -> &DetectorParams {
        &self.params
    }

    pub fn k_max(&self) -> usize {
        self.q.ncols() - 1
    }

    pub fn n_max(&self) -> usize {
        self.q.nrows() - 1
    }

    pub fn column(&self, photons: usize) -> Array1<f64> {
        self.q.column(photons).to_owned()
    }

    /// Largest deviation of a column sum from one.
    pub fn completeness_error(&self) -> f64 {
        self.q
            .sum_axis(Axis(0))
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Contract with a photon-number distribution: `P(N) = sum_k P(k) Q(N|k)`.
    pub fn apply(&self, dist: &PhotonNumberDistribution) -> Result<Vec<f64>> {
        if dist.k_max() > self.k_max() {
            return Err(Error::domain(format!(
                "distribution reaches k = {} but the matrix stops at {}",
                dist.k_max(),
                self.k_max()
            )));
        }
        let mut out = vec![0.0; self.n_max() + 1];
        for (k, &pk) in dist.probs().iter().enumerate() {
            if pk == 0.0 {
                continue;
            }
            for (slot, q) in out.iter_mut().zip(self.q.column(k)) {
                *slot += pk * q;
            }
        }
        Ok(out)
    }
}

/// Loss, crosstalk and saturation POVM without dark counts.
///
/// For `N < n_max`, `Q(N|k) = sum_{n=ceil(N/2)}^{N} B^XT(n, N) B^QE(k, n)`; the saturation
/// row is the completeness complement. `dark_mean` is ignored here; see [`build_response`].
pub fn build_povm(params: &DetectorParams, k_max: usize) -> Result<PovmMatrix> {
    params.validate()?;
    let n_max = params.n_max;
    let mut q = Array2::<f64>::zeros((n_max + 1, k_max + 1));
    for k in 0..=k_max {
        let qe: Vec<f64> = (0..=k)
            .map(|n| binomial_pmf(k as u64, n as u64, params.eta))
            .collect();
        let mut below = KahanSum::default();
        for count in 0..n_max.min(2 * k + 1) {
            let lo = count.div_ceil(2);
            let hi = count.min(k);
            let mut s = 0.0;
            for (n, qe_n) in qe.iter().enumerate().take(hi + 1).skip(lo) {
                s += binomial_pmf(n as u64, (count - n) as u64, params.p_xt) * qe_n;
            }
            q[[count, k]] = s;
            below.add(s);
        }
        q[[n_max, k]] = (1.0 - below.total()).max(0.0);
    }
    Ok(PovmMatrix { q, params: *params })
}

/// Response matrix including Poisson dark avalanches that crosstalk like photon avalanches.
/// Identical to [`build_povm`] when `dark_mean == 0`.
pub fn build_response(params: &DetectorParams, k_max: usize) -> Result<PovmMatrix> {
    params.validate()?;
    let dark = dark_pmf(params.dark_mean);
    let mut q = Array2::<f64>::zeros((params.n_max + 1, k_max + 1));
    for k in 0..=k_max {
        let detected: Vec<f64> = (0..=k)
            .map(|n| binomial_pmf(k as u64, n as u64, params.eta))
            .collect();
        let column = avalanches_to_counts(&convolve(&detected, &dark), params);
        q.column_mut(k).assign(&Array1::from(column));
    }
    Ok(PovmMatrix { q, params: *params })
}

fn dark_pmf(dark_mean: f64) -> Vec<f64> {
    if dark_mean == 0.0 {
        vec![1.0]
    } else {
        poisson_pmf_until(dark_mean, 1, TAIL_TOLERANCE).0
    }
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if b.len() == 1 {
        return a.iter().map(|x| x * b[0]).collect();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Push a distribution of primary avalanches through crosstalk and the saturation clamp.
fn avalanches_to_counts(avalanches: &[f64], params: &DetectorParams) -> Vec<f64> {
    let n_max = params.n_max;
    let total: KahanSum = avalanches.iter().copied().collect();
    let mut out = vec![0.0; n_max + 1];
    let mut below = KahanSum::default();
    for (count, slot) in out.iter_mut().enumerate().take(n_max) {
        let lo = count.div_ceil(2);
        let hi = count.min(avalanches.len().saturating_sub(1));
        let mut s = 0.0;
        for (n, &a) in avalanches.iter().enumerate().take(hi + 1).skip(lo) {
            if a != 0.0 {
                s += a * binomial_pmf(n as u64, (count - n) as u64, params.p_xt);
            }
        }
        *slot = s;
        below.add(s);
    }
    out[n_max] = (total.total() - below.total()).max(0.0);
    out
}

/// Photocount distribution `P(N)`, `N = 0..=n_max`, for a diagonal input state.
pub fn apply_channel(
    dist: &PhotonNumberDistribution,
    params: &DetectorParams,
) -> Result<PhotonNumberDistribution> {
    params.validate()?;
    let detected = dist.thinned(params.eta)?;
    let dark = dark_pmf(params.dark_mean);
    let dark_tail = 1.0 - dark.iter().sum::<f64>();
    let counts = avalanches_to_counts(&convolve(detected.probs(), &dark), params);
    let mut out = PhotonNumberDistribution::from_probs(counts)?;
    out.set_tail_bound(dist.tail_bound() + dark_tail.max(0.0));
    Ok(out)
}

/// `<N^order>` of the photocount distribution, order 1 or 2.
pub fn photocount_moment(
    dist: &PhotonNumberDistribution,
    params: &DetectorParams,
    order: u32,
) -> Result<f64> {
    if !(1..=2).contains(&order) {
        return Err(Error::domain(format!(
            "photocount moment order {order} not in 1..=2"
        )));
    }
    let counts = apply_channel(dist, params)?;
    let s: KahanSum = counts
        .probs()
        .iter()
        .enumerate()
        .map(|(n, p)| (n as f64).powi(order as i32) * p)
        .collect();
    Ok(s.total())
}

/// Source intensity that produces `target` mean counts per pulse, by bisection on the
/// (monotone) first photocount moment.
pub fn source_mean_for_counts(
    source: &SourceSpec,
    params: &DetectorParams,
    target: f64,
) -> Result<f64> {
    let counts_at = |mean: f64| -> Result<f64> {
        photocount_moment(&source.with_mean(mean).distribution()?, params, 1)
    };
    let floor = counts_at(0.0)?;
    if target < floor {
        return Err(Error::domain(format!(
            "target {target} counts/pulse below the dark floor {floor}"
        )));
    }
    if target >= params.n_max as f64 {
        return Err(Error::domain(format!(
            "target {target} counts/pulse unreachable with n_max = {}",
            params.n_max
        )));
    }
    let mut hi = (target / params.effective_efficiency().max(1e-12)).max(1e-6);
    while counts_at(hi)? < target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::domain("target count rate unreachable"));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if counts_at(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Joint probabilities of the two photocounts, rows `N_s`, columns `N_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPhotocountDistribution {
    probs: Array2<f64>,
}

impl JointPhotocountDistribution {
    pub fn from_matrix(probs: Array2<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(0.0..=1.0 + 1e-12).contains(p)) {
            return Err(Error::domain("joint probabilities must lie in [0, 1]"));
        }
        let total = probs.sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::domain(format!("joint probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn get(&self, signal: usize, idler: usize) -> f64 {
        self.probs.get([signal, idler]).copied().unwrap_or(0.0)
    }

    pub fn marginal_signal(&self) -> Vec<f64> {
        self.probs.sum_axis(Axis(1)).to_vec()
    }

    pub fn marginal_idler(&self) -> Vec<f64> {
        self.probs.sum_axis(Axis(0)).to_vec()
    }

    fn expectation(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let s: KahanSum = self
            .probs
            .indexed_iter()
            .map(|((a, b), p)| f(a as f64, b as f64) * p)
            .collect();
        s.total()
    }

    pub fn mean_signal(&self) -> f64 {
        self.expectation(|s, _| s)
    }

    pub fn mean_idler(&self) -> f64 {
        self.expectation(|_, i| i)
    }

    /// Two-detector correlation `<N_s N_i> / (<N_s><N_i>)`.
    pub fn g2_cross(&self) -> Result<f64> {
        let (ms, mi) = (self.mean_signal(), self.mean_idler());
        if ms <= 0.0 || mi <= 0.0 {
            return Err(Error::undefined("g2 across arms with a zero marginal mean"));
        }
        Ok(self.expectation(|s, i| s * i) / (ms * mi))
    }
}

/// Both arms see the same pair number `n`; the two channels act independently given `n`.
pub fn joint_photocount(
    pair_dist: &PhotonNumberDistribution,
    params_s: &DetectorParams,
    params_i: &DetectorParams,
) -> Result<JointPhotocountDistribution> {
    let k_max = pair_dist.k_max();
    let qs = build_response(params_s, k_max)?;
    let qi = build_response(params_i, k_max)?;
    let mut probs = Array2::<f64>::zeros((params_s.n_max + 1, params_i.n_max + 1));
    for (n, &pn) in pair_dist.probs().iter().enumerate() {
        if pn == 0.0 {
            continue;
        }
        let col_s = qs.q.column(n);
        let col_i = qi.q.column(n);
        for (a, &qa) in col_s.iter().enumerate() {
            if qa == 0.0 {
                continue;
            }
            let w = pn * qa;
            for (b, &qb) in col_i.iter().enumerate() {
                probs[[a, b]] += w * qb;
            }
        }
    }
    Ok(JointPhotocountDistribution { probs })
}

/// Independent sources in the two arms: the joint distribution is the product of marginals.
pub fn joint_independent(
    dist_s: &PhotonNumberDistribution,
    dist_i: &PhotonNumberDistribution,
    params_s: &DetectorParams,
    params_i: &DetectorParams,
) -> Result<JointPhotocountDistribution> {
    let ps = apply_channel(dist_s, params_s)?;
    let pi = apply_channel(dist_i, params_i)?;
    let probs = Array2::from_shape_fn((ps.probs().len(), pi.probs().len()), |(a, b)| {
        ps.probs()[a] * pi.probs()[b]
    });
    Ok(JointPhotocountDistribution { probs })
}

/// Noise reduction factor `Var(N_s - N_i) / <N_s + N_i>`, with the variance assembled
/// from its six moment terms.
pub fn nrf_analytic(joint: &JointPhotocountDistribution) -> Result<f64> {
    let ms = joint.mean_signal();
    let mi = joint.mean_idler();
    let denom = ms + mi;
    if denom <= 0.0 {
        return Err(Error::undefined("NRF with zero mean photocount"));
    }
    let ss = joint.expectation(|s, _| s * s);
    let ii = joint.expectation(|_, i| i * i);
    let si = joint.expectation(|s, i| s * i);
    let var_diff = ss - ms * ms + ii - mi * mi - 2.0 * si + 2.0 * ms * mi;
    Ok(var_diff / denom)
}

/// Low-intensity NRF of two independent coherent beams: `(1 + 3p) / (1 + p)`.
pub fn nrf_limit_coherent(p: f64) -> Result<f64> {
    check_xt(p)?;
    Ok((1.0 + 3.0 * p) / (1.0 + p))
}

/// Low-intensity NRF of a twin beam: the coherent limit minus `(1 + p) eta`.
pub fn nrf_limit_sv(p: f64, eta: f64) -> Result<f64> {
    check_xt(p)?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::domain(format!("eta = {eta} outside [0, 1]")));
    }
    Ok(nrf_limit_coherent(p)? - (1.0 + p) * eta)
}
