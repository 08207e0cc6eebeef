//! Histogram-level second-order crosstalk model.
//!
//! Each detected photon fires one extra pixel with probability `p` and two extra
//! pixels with probability `p^2`; higher orders are dropped. The model is only
//! meaningful while `p + 2p^2` dominates `3p^3`, so `p` is capped at 0.6.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::coincidences_and_total;
use crate::histogram::{ExpectedHistogram, Histogram};

/// Hard upper limit on the crosstalk probability accepted by the model.
pub const MAX_MODEL_XT: f64 = 0.6;
/// Above this value the neglected third-order terms are no longer small.
pub const XT_WARNING_LEVEL: f64 = 0.3;

fn check_model_xt(p: f64) -> Result<()> {
    if !p.is_finite() || !(0.0..=MAX_MODEL_XT).contains(&p) {
        return Err(Error::domain(format!(
            "crosstalk probability {p} outside [0, {MAX_MODEL_XT}]"
        )));
    }
    if p > XT_WARNING_LEVEL {
        log::warn!(
            "crosstalk probability {p} > {XT_WARNING_LEVEL}: third-order terms are not negligible"
        );
    }
    Ok(())
}

/// Coefficients of the measured-g2 law `g2 = A g0 + B / n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2ModelCoefficients {
    pub a_coef: f64,
    pub b_coef: f64,
    pub p: f64,
}

impl G2ModelCoefficients {
    pub fn from_p(p: f64) -> Result<Self> {
        check_model_xt(p)?;
        let (a_coef, b_coef) = coefficients(p);
        Ok(Self { a_coef, b_coef, p })
    }
}

/// `(A, B)` without range checks, for inner loops that validate `p` themselves.
pub(crate) fn coefficients(p: f64) -> (f64, f64) {
    let growth = 1.0 + p + 2.0 * p * p;
    (
        (1.0 + 2.0 * p + 4.0 * p * p) / (growth * growth),
        2.0 * p * (1.0 + 3.0 * p) / growth,
    )
}

/// Mean number of counts per detected photon, `1 + p + 2p^2`.
pub fn count_multiplier(p: f64) -> f64 {
    1.0 + p + 2.0 * p * p
}

/// Crosstalk-perturbed bins in exact rational arithmetic.
///
/// The output is two bins longer than the input. Every term that leaves one bin
/// enters another, so the total number of events is preserved exactly.
pub fn transform_counts_exact(counts: &[BigRational], p: &BigRational) -> Vec<BigRational> {
    let p2 = p * p;
    let len = counts.len() + 2;
    let at = |k: usize| counts.get(k).cloned().unwrap_or_else(BigRational::zero);
    let int = |k: usize| BigRational::from_integer(BigInt::from(k));
    let mut out = Vec::with_capacity(len);
    for k in 0..len {
        let nk = at(k);
        let value = match k {
            0 => nk,
            1 => &nk - p * &nk - &p2 * &nk,
            2 => &nk - int(2) * p * &nk + p * at(1) - int(2) * &p2 * &nk,
            _ => {
                &nk - int(k) * p * &nk + int(k - 1) * p * at(k - 1) + int(k - 2) * &p2 * at(k - 2)
                    - int(k) * &p2 * &nk
            }
        };
        out.push(value);
    }
    out
}

fn to_rational(x: f64) -> Result<BigRational> {
    BigRational::from_float(x).ok_or_else(|| Error::domain(format!("{x} is not a finite number")))
}

/// Expected crosstalk-perturbed histogram. Bin 0 is unchanged and the total event
/// count equals the input's.
///
/// Bins where `k (p + p^2) > 1` can come out negative; they are kept as is so the
/// aggregate identities hold, and a warning is logged.
pub fn transform_histogram_eq4(hist: &impl Histogram, p: f64) -> Result<ExpectedHistogram> {
    check_model_xt(p)?;
    let exact_p = to_rational(p)?;
    let counts = hist
        .counts_f64()
        .into_iter()
        .map(to_rational)
        .collect::<Result<Vec<_>>>()?;
    let transformed = transform_counts_exact(&counts, &exact_p);
    let values: Vec<f64> = transformed
        .iter()
        .map(|v| v.to_f64().unwrap_or(f64::NAN))
        .collect();
    if values.iter().any(|&v| v < 0.0) {
        log::warn!("crosstalk transform at p = {p} produced negative expected bins");
    }
    let mut out = ExpectedHistogram::new_signed(hist.trials(), values)?;
    let meta = out.meta_mut();
    meta.extend(hist.meta().iter().map(|(k, v)| (k.clone(), v.clone())));
    meta.insert("crosstalk_transform_p".into(), format!("{p}"));
    Ok(out)
}

/// Pairwise coincidences after crosstalk:
/// `(1+2p+4p^2) sum C(k,2) N_k + p(1+3p) sum k N_k`.
pub fn coincidences_eq5a(hist: &impl Histogram, p: f64) -> Result<f64> {
    check_model_xt(p)?;
    let (pairs, total) = coincidences_and_total(hist);
    Ok((1.0 + 2.0 * p + 4.0 * p * p) * pairs + p * (1.0 + 3.0 * p) * total)
}

/// Total counts after crosstalk: `(1+p+2p^2) sum k N_k`.
pub fn total_eq5b(hist: &impl Histogram, p: f64) -> Result<f64> {
    check_model_xt(p)?;
    Ok(count_multiplier(p) * coincidences_and_total(hist).1)
}

/// Measured g2 for initial correlation `g0` at `n_total_per_pulse` counts per pulse.
pub fn g2_model_eq6(p: f64, g0: f64, n_total_per_pulse: f64) -> Result<f64> {
    check_counts(n_total_per_pulse)?;
    let c = G2ModelCoefficients::from_p(p)?;
    Ok(c.a_coef * g0 + c.b_coef / n_total_per_pulse)
}

/// Initial g2 recovered from a measured value: `(g2 - B/n) / A`.
pub fn invert_g2(g2_measured: f64, n_total_per_pulse: f64, p: f64) -> Result<f64> {
    check_counts(n_total_per_pulse)?;
    let c = G2ModelCoefficients::from_p(p)?;
    if c.a_coef <= 0.0 {
        return Err(Error::domain("model coefficient A is not positive"));
    }
    Ok((g2_measured - c.b_coef / n_total_per_pulse) / c.a_coef)
}

fn check_counts(n: f64) -> Result<()> {
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::domain(format!(
            "mean counts per pulse must be positive, got {n}"
        )));
    }
    Ok(())
}
