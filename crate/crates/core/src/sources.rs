//! Photon-number distributions of the light sources: coherent, single-mode squeezed
//! vacuum (even Fock components), thermal, and twin-beam pair-number statistics.
//!
//! All distributions are diagonal in the Fock basis and truncated where the
//! remaining tail mass drops below [`TAIL_TOLERANCE`]; the residual is carried
//! along as `tail_bound`.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::math::{binomial_pmf, collect_until, poisson_pmf_until, KahanSum};

/// Probability mass left beyond the truncation point of every constructor.
pub const TAIL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonNumberDistribution {
    probs: Vec<f64>,
    tail_bound: f64,
    mean_hint: Option<f64>,
}

impl PhotonNumberDistribution {
    /// Build from explicit probabilities. The tail bound is whatever mass is missing.
    pub fn from_probs(mut probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::domain("distribution needs at least one bin"));
        }
        if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0 + 1e-12).contains(*p)) {
            return Err(Error::domain(format!("probability {bad} outside [0, 1]")));
        }
        let total: KahanSum = probs.iter().copied().collect();
        let total = total.total();
        if total > 1.0 + 1e-12 {
            return Err(Error::domain(format!("probabilities sum to {total} > 1")));
        }
        if probs.len() < 2 {
            probs.push(0.0);
        }
        Ok(Self {
            probs,
            tail_bound: (1.0 - total).max(0.0),
            mean_hint: None,
        })
    }

    fn from_parts(mut probs: Vec<f64>, tail_bound: f64, mean_hint: Option<f64>) -> Self {
        if probs.len() < 2 {
            probs.resize(2, 0.0);
        }
        Self {
            probs,
            tail_bound,
            mean_hint,
        }
    }

    pub(crate) fn set_tail_bound(&mut self, tail_bound: f64) {
        self.tail_bound = tail_bound;
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, k: usize) -> f64 {
        self.probs.get(k).copied().unwrap_or(0.0)
    }

    /// Largest represented photon number.
    pub fn k_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    /// Analytic mean, when the constructor knows it.
    pub fn mean_hint(&self) -> Option<f64> {
        self.mean_hint
    }

    pub fn mean(&self) -> f64 {
        self.raw_moment(1)
    }

    fn raw_moment(&self, order: i32) -> f64 {
        let s: KahanSum = self
            .probs
            .iter()
            .enumerate()
            .map(|(k, p)| (k as f64).powi(order) * p)
            .collect();
        s.total()
    }

    /// Binomial thinning: each photon survives independently with probability `eta`.
    pub fn thinned(&self, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::domain(format!("efficiency {eta} outside [0, 1]")));
        }
        let mut out = vec![0.0; self.probs.len()];
        for (k, &pk) in self.probs.iter().enumerate() {
            if pk == 0.0 {
                continue;
            }
            for (n, slot) in out.iter_mut().enumerate().take(k + 1) {
                *slot += pk * binomial_pmf(k as u64, n as u64, eta);
            }
        }
        Ok(Self::from_parts(
            out,
            self.tail_bound,
            self.mean_hint.map(|m| m * eta),
        ))
    }
}

fn check_mean(mean: f64) -> Result<()> {
    if !mean.is_finite() || mean < 0.0 {
        return Err(Error::domain(format!(
            "mean photon number {mean} must be >= 0"
        )));
    }
    Ok(())
}

fn vacuum(k_max: usize) -> PhotonNumberDistribution {
    let mut probs = vec![0.0; k_max.max(1) + 1];
    probs[0] = 1.0;
    PhotonNumberDistribution::from_parts(probs, 0.0, Some(0.0))
}

/// Poisson photon statistics of a coherent state.
pub fn pmf_coherent(mean: f64, k_max: usize) -> Result<PhotonNumberDistribution> {
    check_mean(mean)?;
    if mean == 0.0 {
        return Ok(vacuum(k_max));
    }
    let (probs, tail) = poisson_pmf_until(mean, k_max + 1, TAIL_TOLERANCE);
    Ok(PhotonNumberDistribution::from_parts(
        probs,
        tail,
        Some(mean),
    ))
}

/// Single-mode squeezed vacuum: Poisson(`mean`) weights on even photon numbers only,
/// renormalized by `(1 + e^{-2 mean}) / 2`.
pub fn pmf_even_poisson(mean: f64, k_max: usize) -> Result<PhotonNumberDistribution> {
    check_mean(mean)?;
    if mean == 0.0 {
        return Ok(vacuum(k_max));
    }
    let norm = 0.5 * (1.0 + (-2.0 * mean).exp());
    let ln_mean = mean.ln();
    let pmf = |k: u64| {
        if k % 2 == 1 {
            0.0
        } else {
            (k as f64 * ln_mean - mean - ln_factorial(k)).exp() / norm
        }
    };
    let (probs, tail) = collect_until(pmf, mean, k_max + 1, TAIL_TOLERANCE);
    Ok(PhotonNumberDistribution::from_parts(
        probs,
        tail,
        Some(mean * mean.tanh()),
    ))
}

/// Single-mode thermal (geometric) statistics.
pub fn pmf_thermal(mean: f64, k_max: usize) -> Result<PhotonNumberDistribution> {
    check_mean(mean)?;
    if mean == 0.0 {
        return Ok(vacuum(k_max));
    }
    let ln_ratio = (mean / (1.0 + mean)).ln();
    let ln_norm = -(1.0 + mean).ln();
    let pmf = |n: u64| (ln_norm + n as f64 * ln_ratio).exp();
    let (probs, tail) = collect_until(pmf, mean, k_max + 1, TAIL_TOLERANCE);
    Ok(PhotonNumberDistribution::from_parts(
        probs,
        tail,
        Some(mean),
    ))
}

/// Pair-number distribution of a multimode twin beam: the sum of `modes` thermal modes
/// sharing `mean` equally (negative binomial). `modes = 1` is exactly [`pmf_thermal`].
pub fn pmf_twin_multimode(mean: f64, modes: f64, k_max: usize) -> Result<PhotonNumberDistribution> {
    check_mean(mean)?;
    if !modes.is_finite() || modes < 1.0 {
        return Err(Error::domain(format!("mode number {modes} must be >= 1")));
    }
    if mean == 0.0 {
        return Ok(vacuum(k_max));
    }
    let per_mode = mean / modes;
    let ln_success = -(1.0 + per_mode).ln();
    let ln_fail = (per_mode / (1.0 + per_mode)).ln();
    let ln_gamma_modes = ln_gamma(modes);
    let pmf = |n: u64| {
        (ln_gamma(n as f64 + modes) - ln_gamma_modes - ln_factorial(n)
            + modes * ln_success
            + n as f64 * ln_fail)
            .exp()
    };
    let (probs, tail) = collect_until(pmf, mean, k_max + 1, TAIL_TOLERANCE);
    Ok(PhotonNumberDistribution::from_parts(
        probs,
        tail,
        Some(mean),
    ))
}

/// Exactly `n` photons.
pub fn pmf_fock(n: usize, k_max: usize) -> PhotonNumberDistribution {
    let mut probs = vec![0.0; k_max.max(n).max(1) + 1];
    probs[n] = 1.0;
    PhotonNumberDistribution::from_parts(probs, 0.0, Some(n as f64))
}

/// Normalized second-order correlation at zero delay, `<k(k-1)> / <k>^2`.
pub fn true_g2_of_dist(dist: &PhotonNumberDistribution) -> Result<f64> {
    let mean = dist.mean();
    if mean <= 0.0 {
        return Err(Error::undefined("g2 of a distribution with zero mean"));
    }
    let factorial: KahanSum = dist
        .probs
        .iter()
        .enumerate()
        .map(|(k, p)| (k as f64) * (k as f64 - 1.0) * p)
        .collect();
    Ok(factorial.total() / (mean * mean))
}

/// Raw moment `sum k^order P(k)` for order 1..=4.
pub fn moments_of_dist(dist: &PhotonNumberDistribution, order: u32) -> Result<f64> {
    if !(1..=4).contains(&order) {
        return Err(Error::domain(format!("moment order {order} not in 1..=4")));
    }
    Ok(dist.raw_moment(order as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Coherent,
    EvenPoisson,
    Fock,
    Thermal,
    TwinThermal,
    TwinMultimode,
    /// Exactly `fock_n` photon pairs, one Fock state per arm.
    TwinFock,
}

impl SourceKind {
    /// Twin kinds describe the pair number shared by the signal and idler arms.
    pub fn is_twin(self) -> bool {
        matches!(
            self,
            SourceKind::TwinThermal | SourceKind::TwinMultimode | SourceKind::TwinFock
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            SourceKind::Coherent => "coherent",
            SourceKind::EvenPoisson => "even-poisson",
            SourceKind::Fock => "fock",
            SourceKind::Thermal => "thermal",
            SourceKind::TwinThermal => "twin-thermal",
            SourceKind::TwinMultimode => "twin-multimode",
            SourceKind::TwinFock => "twin-fock",
        }
    }
}

impl std::str::FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.replace('_', "-").as_str() {
            "coherent" => SourceKind::Coherent,
            "even-poisson" => SourceKind::EvenPoisson,
            "fock" => SourceKind::Fock,
            "thermal" => SourceKind::Thermal,
            "twin-thermal" => SourceKind::TwinThermal,
            "twin-multimode" => SourceKind::TwinMultimode,
            "twin-fock" => SourceKind::TwinFock,
            other => return Err(Error::domain(format!("unknown source kind '{other}'"))),
        };
        Ok(kind)
    }
}

impl std::fmt::Display for SourceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub kind: SourceKind,
    /// Mean photon number; for `EvenPoisson` the Poisson parameter of the even weights.
    pub mean: f64,
    /// Number of modes, used by `TwinMultimode` only.
    pub modes: f64,
    /// Photon (pair) number, used by `Fock` and `TwinFock` only.
    pub fock_n: usize,
}

impl SourceSpec {
    pub fn new(kind: SourceKind, mean: f64) -> Self {
        Self {
            kind,
            mean,
            modes: 1.0,
            fock_n: 0,
        }
    }

    pub fn coherent(mean: f64) -> Self {
        Self::new(SourceKind::Coherent, mean)
    }

    pub fn fock(n: usize) -> Self {
        Self {
            fock_n: n,
            ..Self::new(SourceKind::Fock, n as f64)
        }
    }

    pub fn twin_thermal(mean: f64) -> Self {
        Self::new(SourceKind::TwinThermal, mean)
    }

    pub fn with_modes(mut self, modes: f64) -> Self {
        self.modes = modes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_mean(self.mean)?;
        if !self.modes.is_finite() || self.modes < 1.0 {
            return Err(Error::domain(format!("modes {} must be >= 1", self.modes)));
        }
        Ok(())
    }

    /// Same source with a different intensity.
    pub fn with_mean(mut self, mean: f64) -> Self {
        self.mean = mean;
        self
    }

    /// Photon-number (or pair-number) distribution at default truncation.
    pub fn distribution(&self) -> Result<PhotonNumberDistribution> {
        self.validate()?;
        match self.kind {
            SourceKind::Coherent => pmf_coherent(self.mean, 1),
            SourceKind::EvenPoisson => pmf_even_poisson(self.mean, 1),
            SourceKind::Thermal | SourceKind::TwinThermal => pmf_thermal(self.mean, 1),
            SourceKind::TwinMultimode => pmf_twin_multimode(self.mean, self.modes, 1),
            SourceKind::Fock | SourceKind::TwinFock => Ok(pmf_fock(self.fock_n, 1)),
        }
    }
}
