//! Small numeric helpers shared by the distribution and kernel code.

use statrs::function::factorial::ln_factorial;

/// Above this many trials binomial coefficients are evaluated in the log domain.
const EXACT_BINOMIAL_LIMIT: u64 = 30;

/// Binomial coefficient C(n, k) as a float. Exact integer arithmetic up to n = 30.
pub(crate) fn binomial_coefficient(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    if n <= EXACT_BINOMIAL_LIMIT {
        let mut c: u64 = 1;
        for i in 0..k {
            c = c * (n - i) / (i + 1);
        }
        c as f64
    } else {
        ln_binomial(n, k).exp()
    }
}

pub(crate) fn ln_binomial(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Probability of `successes` out of `trials` Bernoulli(prob) draws.
///
/// `0^0` is taken as 1, so degenerate probabilities give exact 0/1 masses.
pub(crate) fn binomial_pmf(trials: u64, successes: u64, prob: f64) -> f64 {
    if successes > trials {
        return 0.0;
    }
    let failures = trials - successes;
    if prob <= 0.0 {
        return if successes == 0 { 1.0 } else { 0.0 };
    }
    if prob >= 1.0 {
        return if failures == 0 { 1.0 } else { 0.0 };
    }
    if trials <= EXACT_BINOMIAL_LIMIT {
        binomial_coefficient(trials, successes)
            * prob.powi(successes as i32)
            * (1.0 - prob).powi(failures as i32)
    } else {
        (ln_binomial(trials, successes)
            + successes as f64 * prob.ln()
            + failures as f64 * (-prob).ln_1p())
        .exp()
    }
}

/// Poisson probabilities P(0..) up to the point where the remaining tail is below `tail_tol`.
/// Returns the probabilities and the residual tail mass.
pub(crate) fn poisson_pmf_until(mean: f64, min_len: usize, tail_tol: f64) -> (Vec<f64>, f64) {
    if mean == 0.0 {
        let mut probs = vec![0.0; min_len.max(1)];
        probs[0] = 1.0;
        return (probs, 0.0);
    }
    let ln_mean = mean.ln();
    let pmf = |k: u64| (k as f64 * ln_mean - mean - ln_factorial(k)).exp();
    collect_until(pmf, mean, min_len, tail_tol)
}

/// Collect `pmf(0), pmf(1), ...` until past `mode_hint` and the uncovered mass drops below
/// `tail_tol`. Collection also continues while the terms still matter for moments up to
/// fourth order relative to the squared mean, so low-intensity g2 stays accurate.
pub(crate) fn collect_until(
    pmf: impl Fn(u64) -> f64,
    mode_hint: f64,
    min_len: usize,
    tail_tol: f64,
) -> (Vec<f64>, f64) {
    let mut probs = Vec::with_capacity(min_len.max(16));
    let mut sum = KahanSum::default();
    let scale = mode_hint.clamp(1e-6, 1.0);
    let moment_tol = 1e-17 * scale * scale;
    let mut k: u64 = 0;
    loop {
        let p = pmf(k);
        probs.push(p);
        sum.add(p);
        k += 1;
        let tail = 1.0 - sum.total();
        let moment_term = p * (k as f64).powi(4);
        if probs.len() >= min_len
            && (k as f64) > mode_hint
            && tail < tail_tol
            && moment_term < moment_tol
        {
            return (probs, tail.max(0.0));
        }
    }
}

/// Compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub(crate) fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub(crate) fn total(&self) -> f64 {
        self.sum
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}
