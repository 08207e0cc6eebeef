//! Crosstalk calibration: least-squares fit of the g2 law to an intensity sweep, and
//! the dark-count baseline method.

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::crosstalk::{coefficients, count_multiplier, MAX_MODEL_XT, XT_WARNING_LEVEL};
use crate::detector::{source_mean_for_counts, DetectorParams};
use crate::error::{Error, Result};
use crate::histogram::{Histogram, Meta};
use crate::montecarlo::{geometric_grid, simulate_single, sweep_single, SimulationConfig};
use crate::rng::{derive_seed, Stage};
use crate::sources::SourceSpec;

/// Golden-section stopping width in `p`.
pub const FIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Mean counts per pulse.
    pub n_total: f64,
    pub g2: f64,
    pub g2_err: f64,
}

/// Measured g2 against mean counts per pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSeries {
    points: Vec<SweepPoint>,
    #[serde(default)]
    meta: Meta,
}

impl SweepSeries {
    pub fn new(points: Vec<SweepPoint>) -> Result<Self> {
        let s = Self {
            points,
            meta: Meta::new(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 3 {
            return Err(Error::domain(format!(
                "sweep needs at least 3 points, got {}",
                self.points.len()
            )));
        }
        for p in &self.points {
            if !(p.n_total.is_finite() && p.n_total > 0.0) {
                return Err(Error::domain(format!(
                    "mean counts {} must be positive",
                    p.n_total
                )));
            }
            if p.g2_err.is_nan() || p.g2_err <= 0.0 || !p.g2.is_finite() {
                return Err(Error::domain(format!(
                    "g2 = {} with error {}: errors must be positive",
                    p.g2, p.g2_err
                )));
            }
        }
        Ok(())
    }

    pub fn points(&self) -> &[SweepPoint] {
        &self.points
    }

    pub fn meta(&self) -> &Meta {
        &self.meta
    }

    pub fn with_metadata(mut self, meta: Meta) -> Self {
        self.meta = meta;
        self
    }

    /// Noiseless series from the g2 law at the given count rates, with equal errors.
    pub fn from_model(p: f64, g0: f64, n_totals: &[f64], g2_err: f64) -> Result<Self> {
        let points = n_totals
            .iter()
            .map(|&n| {
                Ok(SweepPoint {
                    n_total: n,
                    g2: crate::crosstalk::g2_model_eq6(p, g0, n)?,
                    g2_err,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    G2Fit,
    DarkNoise,
}

fn six_digits(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

fn ser_six<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(six_digits(*x))
}

fn ser_six_vec<S: Serializer>(xs: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(xs.iter().map(|&x| six_digits(x)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    #[serde(serialize_with = "ser_six")]
    pub p_hat: f64,
    #[serde(serialize_with = "ser_six")]
    pub p_err: f64,
    #[serde(serialize_with = "ser_six")]
    pub a_coef: f64,
    #[serde(serialize_with = "ser_six")]
    pub b_coef: f64,
    /// Coefficient of determination; not defined (NaN) for the dark-noise method.
    #[serde(serialize_with = "ser_six")]
    pub cod: f64,
    #[serde(serialize_with = "ser_six_vec")]
    pub residuals: Vec<f64>,
    pub method: CalibrationMethod,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl CalibrationResult {
    /// Mean extra counts per detected photon, `p + 2p^2`, as tabulated for devices.
    pub fn total_crosstalk(&self) -> f64 {
        count_multiplier(self.p_hat) - 1.0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn with_p(p_hat: f64, p_err: f64, method: CalibrationMethod) -> Self {
        let (a_coef, b_coef) = coefficients(p_hat);
        Self {
            p_hat,
            p_err,
            a_coef,
            b_coef,
            cod: f64::NAN,
            residuals: Vec::new(),
            method,
            warnings: Vec::new(),
        }
    }

    fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.warnings.push(message);
    }
}

/// Weighted sum of squared deviations of the sweep from `A(p) g0 + B(p) / n`.
pub fn fit_objective(sweep: &SweepSeries, g0: f64, p: f64) -> f64 {
    let (a, b) = coefficients(p);
    sweep
        .points
        .iter()
        .map(|pt| {
            let r = pt.g2 - a * g0 - b / pt.n_total;
            r * r / (pt.g2_err * pt.g2_err)
        })
        .sum()
}

fn golden_section(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Second derivative by a three-point stencil kept inside `[lo, hi]`.
fn curvature(f: impl Fn(f64) -> f64, x: f64, lo: f64, hi: f64) -> f64 {
    let h = 1e-4;
    let centre = x.clamp(lo + h, hi - h);
    (f(centre + h) - 2.0 * f(centre) + f(centre - h)) / (h * h)
}

/// Single-parameter fit of the crosstalk probability to a g2 sweep with known `g0`.
///
/// Minimizes the error-weighted squared residuals over `p` in `[0, 0.6]` by golden
/// section; `p_err` follows from the curvature of the objective (chi2 + 1 rule).
pub fn fit_crosstalk(sweep: &SweepSeries, g0: f64) -> Result<CalibrationResult> {
    sweep.validate()?;
    let first = sweep.points[0].n_total;
    if sweep.points.iter().all(|p| p.n_total == first) {
        return Err(Error::IllConditioned(
            "all sweep points have the same mean counts".into(),
        ));
    }
    let objective = |p: f64| fit_objective(sweep, g0, p);
    let interior = golden_section(objective, 0.0, MAX_MODEL_XT, FIT_TOLERANCE);
    let p_hat = [0.0, interior, MAX_MODEL_XT]
        .into_iter()
        .min_by(|a, b| objective(*a).total_cmp(&objective(*b)))
        .unwrap_or(interior);

    let chi2_curv = curvature(objective, p_hat, 0.0, MAX_MODEL_XT);
    let p_err = if chi2_curv > 0.0 {
        (2.0 / chi2_curv).sqrt()
    } else {
        f64::INFINITY
    };
    let mut result = CalibrationResult::with_p(p_hat, p_err, CalibrationMethod::G2Fit);
    result.residuals = sweep
        .points
        .iter()
        .map(|pt| pt.g2 - result.a_coef * g0 - result.b_coef / pt.n_total)
        .collect();
    result.cod = coefficient_of_determination(sweep, &result.residuals);

    // At p = 0 a minimum is interior only if the objective starts out flat.
    let pushing_below_zero =
        p_hat == 0.0 && (objective(1e-6) - objective(0.0)) / 1e-6 > 1e-4 * chi2_curv.abs();
    if p_hat == MAX_MODEL_XT || pushing_below_zero {
        result.warn(format!("fit minimum on the boundary p = {p_hat}"));
    }
    if p_hat > XT_WARNING_LEVEL {
        result.warn(format!(
            "fitted p = {p_hat:.4} exceeds {XT_WARNING_LEVEL}; third-order crosstalk is not negligible"
        ));
    }
    if !p_err.is_finite() {
        result.warn("objective has no positive curvature at the minimum".into());
    }
    Ok(result)
}

/// `1 - SS_res / SS_tot` with unweighted sums; 1 for a perfect fit of a flat series.
pub fn coefficient_of_determination(sweep: &SweepSeries, residuals: &[f64]) -> f64 {
    let n = sweep.points.len() as f64;
    let mean = sweep.points.iter().map(|p| p.g2).sum::<f64>() / n;
    let ss_tot: f64 = sweep.points.iter().map(|p| (p.g2 - mean).powi(2)).sum();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    if ss_res == 0.0 {
        1.0
    } else if ss_tot == 0.0 {
        0.0
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Crosstalk from a beam-blocked histogram.
///
/// Dark avalanches are Poisson, and crosstalk never empties or fills the zero bin,
/// so `lambda = -ln(N0 / T)` is unbiased. Without crosstalk the one-count bin would
/// hold `E1 = T lambda e^-lambda`; the deficit gives `p = 1 - N1 / E1`.
pub fn dark_noise_crosstalk(dark: &impl Histogram) -> Result<CalibrationResult> {
    let trials = dark.trials();
    let n0 = dark.count(0);
    let n1 = dark.count(1);
    if n0 <= 0.0 {
        return Err(Error::CannotEstimate(
            "dark histogram has no zero-count pulses".into(),
        ));
    }
    if n0 >= trials {
        return Err(Error::CannotEstimate("dark histogram has no counts".into()));
    }
    let q0 = n0 / trials;
    let q1 = n1 / trials;
    let lambda = -q0.ln();
    let expected_single = q0 * lambda;
    let raw = 1.0 - q1 / expected_single;

    // Delta method with the multinomial covariance of (N0, N1) at fixed T.
    let d_q1 = -1.0 / expected_single;
    let d_q0 = q1 * (lambda - 1.0) / (expected_single * expected_single);
    let var = (d_q0 * d_q0 * q0 * (1.0 - q0) + d_q1 * d_q1 * q1 * (1.0 - q1)
        - 2.0 * d_q0 * d_q1 * q0 * q1)
        / trials;

    let p_hat = raw.clamp(0.0, MAX_MODEL_XT);
    let mut result =
        CalibrationResult::with_p(p_hat, var.max(0.0).sqrt(), CalibrationMethod::DarkNoise);
    if raw < 0.0 {
        result.warn(format!(
            "more single counts than expected; estimate {raw:.4} clamped to 0"
        ));
    } else if raw > MAX_MODEL_XT {
        result.warn(format!("estimate {raw:.4} clamped to {MAX_MODEL_XT}"));
    }
    Ok(result)
}

/// Settings for comparing the two calibration routes on simulated data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonConfig {
    pub p_truth: f64,
    pub eta: f64,
    pub n_max: usize,
    /// Dark avalanches per pulse with the beam blocked.
    pub dark_rate: f64,
    /// Total pulses over the whole sweep, split evenly between its points.
    pub sweep_trials: u64,
    pub dark_trials: u64,
    pub points: usize,
    /// Lowest and highest mean counts per pulse of the sweep.
    pub counts_range: (f64, f64),
    pub replicates: usize,
    pub seed: u64,
}

impl ComparisonConfig {
    pub fn new(p_truth: f64, dark_trials: u64, sweep_trials: u64, replicates: usize) -> Self {
        Self {
            p_truth,
            eta: 0.2,
            n_max: 100,
            dark_rate: 0.002,
            sweep_trials,
            dark_trials,
            points: 10,
            counts_range: (0.01, 2.0),
            replicates,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodComparison {
    pub p_truth: f64,
    pub g2_fit_estimates: Vec<f64>,
    pub dark_estimates: Vec<f64>,
    pub g2_fit_mean: f64,
    pub g2_fit_spread: f64,
    pub dark_mean: f64,
    pub dark_spread: f64,
    pub lower_spread: CalibrationMethod,
}

fn mean_and_spread(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Replicated calibration by both routes on simulated data; reports the spread of
/// each estimator across replicates.
pub fn compare_methods(cfg: &ComparisonConfig) -> Result<MethodComparison> {
    if cfg.replicates < 50 {
        return Err(Error::domain(format!(
            "method comparison needs >= 50 replicates, got {}",
            cfg.replicates
        )));
    }
    let detector = DetectorParams::new(cfg.eta, cfg.p_truth, cfg.n_max)?;
    let source = SourceSpec::coherent(1.0);
    let targets = geometric_grid(cfg.counts_range.0, cfg.counts_range.1, cfg.points)?;
    let means = targets
        .iter()
        .map(|&t| source_mean_for_counts(&source, &detector, t))
        .collect::<Result<Vec<_>>>()?;
    let per_point = (cfg.sweep_trials / cfg.points as u64).max(1);
    let dark_detector = detector.with_dark(cfg.dark_rate)?;

    let estimates = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| -> Result<(f64, f64)> {
            let rep_seed = derive_seed(cfg.seed, Stage::Replicate, r);
            let template = SimulationConfig::new(source, detector, per_point, rep_seed);
            let fit = fit_crosstalk(&sweep_single(&template, &means)?, 1.0)?;
            let dark_cfg = SimulationConfig::new(
                SourceSpec::coherent(0.0),
                dark_detector,
                cfg.dark_trials,
                derive_seed(rep_seed, Stage::Source, 0),
            );
            let dark = dark_noise_crosstalk(&simulate_single(&dark_cfg)?)?;
            Ok((fit.p_hat, dark.p_hat))
        })
        .collect::<Result<Vec<_>>>()?;
    let (g2_fit_estimates, dark_estimates): (Vec<f64>, Vec<f64>) = estimates.into_iter().unzip();
    let (g2_fit_mean, g2_fit_spread) = mean_and_spread(&g2_fit_estimates);
    let (dark_mean, dark_spread) = mean_and_spread(&dark_estimates);
    Ok(MethodComparison {
        p_truth: cfg.p_truth,
        g2_fit_estimates,
        dark_estimates,
        g2_fit_mean,
        g2_fit_spread,
        dark_mean,
        dark_spread,
        lower_spread: if g2_fit_spread <= dark_spread {
            CalibrationMethod::G2Fit
        } else {
            CalibrationMethod::DarkNoise
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histogram::{CountHistogram, ExpectedHistogram};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn noiseless(p: f64) -> SweepSeries {
        let grid = geometric_grid(0.01, 2.0, 10).unwrap();
        SweepSeries::from_model(p, 1.0, &grid, 1e-3).unwrap()
    }

    #[test]
    fn noiseless_round_trip() {
        for p in [0.0, 0.05, 0.1, 0.177, 0.3] {
            let fit = fit_crosstalk(&noiseless(p), 1.0).unwrap();
            assert!((fit.p_hat - p).abs() < 1e-5, "p={p}: {}", fit.p_hat);
            assert!(fit.cod > 0.999_999);
        }
        let fit = fit_crosstalk(&noiseless(0.0), 1.0).unwrap();
        assert!(fit.p_hat < 1e-6);
        assert_eq!(fit.cod, 1.0);
        assert!(fit.warnings.is_empty());
    }

    #[test]
    fn coefficients_follow_p_hat() {
        let fit = fit_crosstalk(&noiseless(0.177), 1.0).unwrap();
        let (a, b) = coefficients(fit.p_hat);
        assert_eq!((fit.a_coef, fit.b_coef), (a, b));
        assert_abs_diff_eq!(
            fit.total_crosstalk(),
            fit.p_hat + 2.0 * fit.p_hat.powi(2),
            epsilon = 1e-15
        );
    }

    #[test]
    fn curvature_error_matches_linearized_least_squares() {
        // Independent oracle: sigma^2 = 1 / sum w (dmodel/dp)^2 at the true p.
        let sweep = noiseless(0.1);
        let fit = fit_crosstalk(&sweep, 1.0).unwrap();
        let h = 1e-6;
        let info: f64 = sweep
            .points()
            .iter()
            .map(|pt| {
                let m = |p: f64| {
                    let (a, b) = coefficients(p);
                    a + b / pt.n_total
                };
                let d = (m(0.1 + h) - m(0.1 - h)) / (2.0 * h);
                d * d / (pt.g2_err * pt.g2_err)
            })
            .sum();
        assert_abs_diff_eq!(
            fit.p_err,
            info.recip().sqrt(),
            epsilon = 1e-3 * info.recip().sqrt()
        );
    }

    #[test]
    fn degenerate_sweeps() {
        let flat = vec![
            SweepPoint {
                n_total: 0.5,
                g2: 1.3,
                g2_err: 0.01
            };
            4
        ];
        let s = SweepSeries::new(flat).unwrap();
        assert!(matches!(
            fit_crosstalk(&s, 1.0),
            Err(Error::IllConditioned(_))
        ));
        let two = vec![
            SweepPoint {
                n_total: 0.5,
                g2: 1.3,
                g2_err: 0.01
            };
            2
        ];
        assert!(SweepSeries::new(two).is_err());
    }

    #[test]
    fn boundary_minimum_warns() {
        let grid = [0.1, 0.5, 1.0, 2.0];
        let points = grid
            .iter()
            .map(|&n| SweepPoint {
                n_total: n,
                g2: 0.8,
                g2_err: 0.01,
            })
            .collect();
        let fit = fit_crosstalk(&SweepSeries::new(points).unwrap(), 1.0).unwrap();
        assert_eq!(fit.p_hat, 0.0);
        assert!(!fit.warnings.is_empty());
    }

    #[test]
    fn cod_recomputed_from_residuals() {
        let points: Vec<SweepPoint> = [
            (0.02, 13.0),
            (0.1, 3.4),
            (0.5, 1.8),
            (1.0, 1.31),
            (2.0, 1.2),
        ]
        .iter()
        .map(|&(n, g)| SweepPoint {
            n_total: n,
            g2: g,
            g2_err: 0.05 * g,
        })
        .collect();
        let s = SweepSeries::new(points.clone()).unwrap();
        let fit = fit_crosstalk(&s, 1.0).unwrap();
        let mean = points.iter().map(|p| p.g2).sum::<f64>() / points.len() as f64;
        let ss_tot: f64 = points.iter().map(|p| (p.g2 - mean).powi(2)).sum();
        let (a, b) = coefficients(fit.p_hat);
        let ss_res: f64 = points
            .iter()
            .map(|p| (p.g2 - a - b / p.n_total).powi(2))
            .sum();
        assert_abs_diff_eq!(fit.cod, 1.0 - ss_res / ss_tot, epsilon = 1e-12);
        assert!(fit.cod <= 1.0);
    }

    #[test]
    fn json_has_six_significant_digits() {
        let fit = fit_crosstalk(&noiseless(0.177), 1.0).unwrap();
        let json = fit.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["method"], "g2_fit");
        assert_eq!(v["a_coef"].as_f64().unwrap(), 0.962625);
        assert!(v.get("warnings").is_none());
        assert_eq!(v["residuals"].as_array().unwrap().len(), 10);
    }

    fn dark_fixture(lambda: f64, p: f64, trials: f64) -> ExpectedHistogram {
        let n0 = trials * (-lambda).exp();
        let n1 = (1.0 - p) * trials * lambda * (-lambda).exp();
        ExpectedHistogram::new(trials, vec![n0, n1, trials - n0 - n1]).unwrap()
    }

    #[test]
    fn dark_noise_examples() {
        let r = dark_noise_crosstalk(&dark_fixture(0.02, 0.1, 1e6)).unwrap();
        assert_abs_diff_eq!(r.p_hat, 0.1, epsilon = 1e-12);
        assert_eq!(r.method, CalibrationMethod::DarkNoise);
        let r = dark_noise_crosstalk(&dark_fixture(0.02, 0.0, 1e6)).unwrap();
        assert_abs_diff_eq!(r.p_hat, 0.0, epsilon = 1e-12);

        let empty_zero = CountHistogram::new(10, vec![0, 6, 4]).unwrap();
        assert!(matches!(
            dark_noise_crosstalk(&empty_zero),
            Err(Error::CannotEstimate(_))
        ));

        let excess = dark_fixture(0.02, -0.01, 1e6);
        let r = dark_noise_crosstalk(&excess).unwrap();
        assert_eq!(r.p_hat, 0.0);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn dark_error_matches_finite_differences() {
        // Oracle: propagate the multinomial covariance through numerical derivatives.
        let t = 1.4e6;
        let h = dark_fixture(0.002, 0.1, t);
        let r = dark_noise_crosstalk(&h).unwrap();
        let p_of = |q0: f64, q1: f64| 1.0 - q1 / (q0 * -q0.ln());
        let (q0, q1) = (h.count(0) / t, h.count(1) / t);
        let e = 1e-9;
        let g0 = (p_of(q0 + e, q1) - p_of(q0 - e, q1)) / (2.0 * e);
        let g1 = (p_of(q0, q1 + e) - p_of(q0, q1 - e)) / (2.0 * e);
        let var =
            (g0 * g0 * q0 * (1.0 - q0) + g1 * g1 * q1 * (1.0 - q1) - 2.0 * g0 * g1 * q0 * q1) / t;
        assert_abs_diff_eq!(r.p_err, var.sqrt(), epsilon = 1e-4 * var.sqrt());
        // Low dark rate leaves the baseline method far less precise than a g2 sweep.
        let fit = fit_crosstalk(&noiseless(0.1), 1.0).unwrap();
        assert!(r.p_err > 5.0 * fit.p_err);
    }

    #[test]
    fn comparison_needs_replicates() {
        assert!(compare_methods(&ComparisonConfig::new(0.1, 1400, 1000, 10)).is_err());
    }

    #[test]
    fn null_crosstalk_comparison_centres_on_zero() {
        let mut cfg = ComparisonConfig::new(0.0, 140_000, 100_000, 50);
        cfg.seed = 3;
        let report = compare_methods(&cfg).unwrap();
        assert!(report.g2_fit_mean.abs() < 0.01, "{}", report.g2_fit_mean);
        assert!(report.dark_mean < 0.1, "{}", report.dark_mean);
        assert_eq!(report.g2_fit_estimates.len(), 50);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn objective_is_unimodal(p in 0.0f64..0.6, lo in 0.005f64..0.05, span in 5.0f64..200.0) {
            let grid = geometric_grid(lo, lo * span, 8).unwrap();
            let sweep = SweepSeries::from_model(p, 1.0, &grid, 1e-2).unwrap();
            let values: Vec<f64> = (0..=600).map(|i| fit_objective(&sweep, 1.0, i as f64 * 1e-3)).collect();
            let slopes: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
            let sign_changes = slopes
                .windows(2)
                .filter(|w| w[0] < 0.0 && w[1] > 0.0 || w[0] > 0.0 && w[1] < 0.0)
                .count();
            prop_assert!(sign_changes <= 1);
        }
    }
}
