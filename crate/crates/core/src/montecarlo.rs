//! Seeded pulse-by-pulse simulation: source, loss, dark counts, crosstalk, saturation.
//!
//! Each pulse draws from its own keyed stream (see [`crate::rng`]), so histograms
//! are bit-identical however the pulses are distributed over threads.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{SweepPoint, SweepSeries};
use crate::detector::DetectorParams;
use crate::error::{Error, Result};
use crate::estimators::{coincidences_and_total, g2_from_histogram, mean_counts_per_pulse};
use crate::histogram::{CountHistogram, Histogram, JointCountHistogram, Meta};
use crate::rng::{derive_seed, Stage, StreamFamily};
use crate::sources::SourceSpec;

/// How avalanches trigger neighbouring pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrosstalkMode {
    /// Each primary avalanche fires at most one neighbour (the analytic response).
    #[default]
    Binomial,
    /// Every crosstalk avalanche may fire another, until no new ones appear.
    Cascade,
}

impl std::str::FromStr for CrosstalkMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binomial" => Ok(Self::Binomial),
            "cascade" => Ok(Self::Cascade),
            other => Err(Error::domain(format!("unknown crosstalk mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for CrosstalkMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Binomial => "binomial",
            Self::Cascade => "cascade",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub source: SourceSpec,
    pub detector_s: DetectorParams,
    /// Second arm; required for twin and independent two-arm runs.
    pub detector_i: Option<DetectorParams>,
    pub trials: u64,
    pub seed: u64,
    #[serde(default)]
    pub crosstalk_mode: CrosstalkMode,
}

impl SimulationConfig {
    pub fn new(source: SourceSpec, detector: DetectorParams, trials: u64, seed: u64) -> Self {
        Self {
            source,
            detector_s: detector,
            detector_i: None,
            trials,
            seed,
            crosstalk_mode: CrosstalkMode::Binomial,
        }
    }

    pub fn with_idler(mut self, detector: DetectorParams) -> Self {
        self.detector_i = Some(detector);
        self
    }

    pub fn with_mode(mut self, mode: CrosstalkMode) -> Self {
        self.crosstalk_mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_source(mut self, source: SourceSpec) -> Self {
        self.source = source;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::domain("trials must be >= 1"));
        }
        self.source.validate()?;
        self.detector_s.validate()?;
        if let Some(d) = &self.detector_i {
            d.validate()?;
        } else if self.source.kind.is_twin() {
            return Err(Error::domain("twin sources need a second detector"));
        }
        Ok(())
    }

    fn idler(&self) -> Result<DetectorParams> {
        self.detector_i
            .ok_or_else(|| Error::domain("two-arm simulation needs a second detector"))
    }

    fn meta(&self) -> Meta {
        let mut m = Meta::new();
        m.insert("source".into(), self.source.kind.to_string());
        m.insert("mean".into(), self.source.mean.to_string());
        if self.source.kind.name().contains("fock") {
            m.insert("fock_n".into(), self.source.fock_n.to_string());
        }
        if self.source.modes != 1.0 {
            m.insert("modes".into(), self.source.modes.to_string());
        }
        let mut arm = |suffix: &str, d: &DetectorParams| {
            m.insert(format!("eta{suffix}"), d.eta.to_string());
            m.insert(format!("xt{suffix}"), d.p_xt.to_string());
            m.insert(format!("nmax{suffix}"), d.n_max.to_string());
            m.insert(format!("dark{suffix}"), d.dark_mean.to_string());
        };
        arm("", &self.detector_s);
        if let Some(d) = &self.detector_i {
            arm("2", d);
        }
        m.insert("xt_mode".into(), self.crosstalk_mode.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("trials".into(), self.trials.to_string());
        m
    }
}

/// Counts recorded for one pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub pulse_index: u64,
    pub counts_s: usize,
    pub counts_i: Option<usize>,
}

/// Inverse-CDF sampler over a truncated photon-number table.
struct SourceSampler {
    cdf: Vec<f64>,
}

impl SourceSampler {
    fn new(source: &SourceSpec) -> Result<Self> {
        let dist = source.distribution()?;
        let mut acc = 0.0;
        let cdf = dist
            .probs()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self { cdf })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        let k = self.cdf.partition_point(|&c| c <= u);
        k.min(self.cdf.len() - 1) as u64
    }
}

struct ArmChannel {
    eta: f64,
    p: f64,
    n_max: usize,
    dark: Option<Poisson<f64>>,
    mode: CrosstalkMode,
}

impl ArmChannel {
    fn new(d: &DetectorParams, mode: CrosstalkMode) -> Result<Self> {
        let dark = if d.dark_mean > 0.0 {
            Some(Poisson::new(d.dark_mean).map_err(|e| Error::domain(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            eta: d.eta,
            p: d.p_xt,
            n_max: d.n_max,
            dark,
            mode,
        })
    }

    fn count<R: Rng>(&self, photons: u64, rng: &mut R) -> usize {
        let mut n = binomial(photons, self.eta, rng);
        if let Some(dark) = &self.dark {
            n += dark.sample(rng) as u64;
        }
        if self.p > 0.0 && n > 0 {
            match self.mode {
                CrosstalkMode::Binomial => n += binomial(n, self.p, rng),
                CrosstalkMode::Cascade => {
                    let mut fresh = n;
                    while fresh > 0 {
                        fresh = binomial(fresh, self.p, rng);
                        n += fresh;
                    }
                }
            }
        }
        (n as usize).min(self.n_max)
    }
}

fn binomial<R: Rng>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p)
            .expect("probability in (0, 1)")
            .sample(rng)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Arms {
    Single,
    Twin,
    Independent,
}

struct Simulator {
    sampler: SourceSampler,
    arm_s: ArmChannel,
    arm_i: Option<ArmChannel>,
    arms: Arms,
    source_rng: StreamFamily,
    idler_source_rng: StreamFamily,
    signal_rng: StreamFamily,
    idler_rng: StreamFamily,
}

impl Simulator {
    fn new(cfg: &SimulationConfig, arms: Arms) -> Result<Self> {
        cfg.validate()?;
        let arm_i = match arms {
            Arms::Single => None,
            _ => Some(ArmChannel::new(&cfg.idler()?, cfg.crosstalk_mode)?),
        };
        Ok(Self {
            sampler: SourceSampler::new(&cfg.source)?,
            arm_s: ArmChannel::new(&cfg.detector_s, cfg.crosstalk_mode)?,
            arm_i,
            arms,
            source_rng: StreamFamily::new(cfg.seed, Stage::Source),
            idler_source_rng: StreamFamily::new(cfg.seed, Stage::IdlerSource),
            signal_rng: StreamFamily::new(cfg.seed, Stage::SignalArm),
            idler_rng: StreamFamily::new(cfg.seed, Stage::IdlerArm),
        })
    }

    fn draw(&self, family: &StreamFamily, pulse: u64) -> (u64, ChaCha8Rng) {
        let mut rng = family.at(pulse);
        (self.sampler.sample(&mut rng), rng)
    }

    fn pulse(&self, pulse: u64) -> EventRecord {
        let (photons_s, _) = self.draw(&self.source_rng, pulse);
        let counts_s = self.arm_s.count(photons_s, &mut self.signal_rng.at(pulse));
        let counts_i = self.arm_i.as_ref().map(|arm| {
            let photons_i = match self.arms {
                Arms::Independent => self.draw(&self.idler_source_rng, pulse).0,
                _ => photons_s,
            };
            arm.count(photons_i, &mut self.idler_rng.at(pulse))
        });
        EventRecord {
            pulse_index: pulse,
            counts_s,
            counts_i,
        }
    }
}

fn arms_for(cfg: &SimulationConfig) -> Arms {
    if cfg.source.kind.is_twin() {
        Arms::Twin
    } else if cfg.detector_i.is_some() {
        Arms::Independent
    } else {
        Arms::Single
    }
}

/// Single-detector histogram over `cfg.trials` pulses, bin 0 included.
pub fn simulate_single(cfg: &SimulationConfig) -> Result<CountHistogram> {
    let sim = Simulator::new(cfg, Arms::Single)?;
    let bins = cfg.detector_s.n_max + 1;
    let counts = (0..cfg.trials)
        .into_par_iter()
        .fold(
            || vec![0u64; bins],
            |mut acc, pulse| {
                acc[sim.pulse(pulse).counts_s] += 1;
                acc
            },
        )
        .reduce(|| vec![0u64; bins], add_bins);
    let mut meta = cfg.meta();
    meta.retain(|k, _| !k.ends_with('2'));
    Ok(CountHistogram::new(cfg.trials, counts)?.with_metadata(meta))
}

fn add_bins(mut a: Vec<u64>, b: Vec<u64>) -> Vec<u64> {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

fn simulate_joint(cfg: &SimulationConfig, arms: Arms) -> Result<JointCountHistogram> {
    let sim = Simulator::new(cfg, arms)?;
    let rows = cfg.detector_s.n_max + 1;
    let cols = cfg.idler()?.n_max + 1;
    let flat = (0..cfg.trials)
        .into_par_iter()
        .fold(
            || vec![0u64; rows * cols],
            |mut acc, pulse| {
                let e = sim.pulse(pulse);
                acc[e.counts_s * cols + e.counts_i.unwrap_or(0)] += 1;
                acc
            },
        )
        .reduce(|| vec![0u64; rows * cols], add_bins);
    let counts = Array2::from_shape_vec((rows, cols), flat).expect("shape matches buffer");
    let mut meta = cfg.meta();
    meta.insert(
        "arms".into(),
        if arms == Arms::Twin {
            "twin"
        } else {
            "independent"
        }
        .into(),
    );
    Ok(JointCountHistogram::new(cfg.trials, counts)?.with_metadata(meta))
}

/// Both arms see the same pair number each pulse; the channels act independently.
pub fn simulate_twin(cfg: &SimulationConfig) -> Result<JointCountHistogram> {
    if !cfg.source.kind.is_twin() {
        return Err(Error::domain(format!(
            "source '{}' is not a twin source",
            cfg.source.kind
        )));
    }
    simulate_joint(cfg, Arms::Twin)
}

/// Two arms, each with its own independent draw from the source.
pub fn simulate_independent(cfg: &SimulationConfig) -> Result<JointCountHistogram> {
    if cfg.source.kind.is_twin() {
        return Err(Error::domain("independent arms need a single-beam source"));
    }
    simulate_joint(cfg, Arms::Independent)
}

/// Per-pulse records, in pulse order. Twin sources and configurations with a second
/// detector produce two-arm records.
pub fn simulate_events(cfg: &SimulationConfig) -> Result<Vec<EventRecord>> {
    let sim = Simulator::new(cfg, arms_for(cfg))?;
    Ok((0..cfg.trials)
        .into_par_iter()
        .map(|pulse| sim.pulse(pulse))
        .collect())
}

/// `points` values spaced geometrically from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && points >= 2) {
        return Err(Error::domain(format!(
            "geometric grid needs 0 < lo < hi and >= 2 points, got [{lo}, {hi}] x {points}"
        )));
    }
    let ratio = (hi / lo).powf(1.0 / (points - 1) as f64);
    let mut grid: Vec<f64> = (0..points).map(|i| lo * ratio.powi(i as i32)).collect();
    grid[points - 1] = hi;
    Ok(grid)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 3 {
        return Err(Error::domain("sweep needs at least 3 intensities"));
    }
    if grid.iter().any(|&m| !(m.is_finite() && m > 0.0)) {
        return Err(Error::domain("sweep intensities must be positive"));
    }
    Ok(())
}

fn point_config(template: &SimulationConfig, index: usize, mean: f64) -> SimulationConfig {
    template
        .clone()
        .with_source(template.source.with_mean(mean))
        .with_seed(derive_seed(template.seed, Stage::Sweep, index as u64))
}

/// One single-detector histogram per source intensity in `grid`.
pub fn sweep_histograms(template: &SimulationConfig, grid: &[f64]) -> Result<Vec<CountHistogram>> {
    check_grid(grid)?;
    grid.iter()
        .enumerate()
        .map(|(i, &mean)| simulate_single(&point_config(template, i, mean)))
        .collect()
}

/// g2 against mean counts per pulse, one point per source intensity.
pub fn sweep_single(template: &SimulationConfig, grid: &[f64]) -> Result<SweepSeries> {
    let histograms = sweep_histograms(template, grid)?;
    series_from_histograms(&histograms)
}

/// Sweep series from single-detector histograms, sorted by mean counts per pulse.
///
/// A histogram without any coincidence has zero propagated error; such points get
/// the error that a single pair would have contributed instead.
pub fn series_from_histograms<H: Histogram>(histograms: &[H]) -> Result<SweepSeries> {
    let mut points = histograms
        .iter()
        .map(|h| {
            let g2 = g2_from_histogram(h)?;
            let one_pair = 2.0 * h.trials() / coincidences_and_total(h).1.powi(2);
            Ok(SweepPoint {
                n_total: mean_counts_per_pulse(h),
                g2: g2.value,
                g2_err: if g2.std_err > 0.0 {
                    g2.std_err
                } else {
                    one_pair
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| a.n_total.total_cmp(&b.n_total));
    let mut meta = histograms
        .first()
        .map(|h| h.meta().clone())
        .unwrap_or_default();
    meta.remove("mean");
    meta.remove("seed");
    SweepSeries::new(points).map(|s| s.with_metadata(meta))
}

/// One joint histogram per intensity: shared pairs for twin sources, independent
/// draws otherwise.
pub fn sweep_joint(template: &SimulationConfig, grid: &[f64]) -> Result<Vec<JointCountHistogram>> {
    check_grid(grid)?;
    let arms = if template.source.kind.is_twin() {
        Arms::Twin
    } else {
        Arms::Independent
    };
    grid.iter()
        .enumerate()
        .map(|(i, &mean)| simulate_joint(&point_config(template, i, mean), arms))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepOutput {
    Single(SweepSeries),
    Joint(Vec<JointCountHistogram>),
}

/// Single-arm configurations give a g2 series; two-arm ones give joint histograms.
pub fn sweep(template: &SimulationConfig, grid: &[f64]) -> Result<SweepOutput> {
    if template.detector_i.is_some() || template.source.kind.is_twin() {
        sweep_joint(template, grid).map(SweepOutput::Joint)
    } else {
        sweep_single(template, grid).map(SweepOutput::Single)
    }
}

trait WithMetadata {
    fn with_metadata(self, meta: Meta) -> Self;
}

impl WithMetadata for CountHistogram {
    fn with_metadata(mut self, meta: Meta) -> Self {
        *self.meta_mut() = meta;
        self
    }
}

impl WithMetadata for JointCountHistogram {
    fn with_metadata(mut self, meta: Meta) -> Self {
        *self.meta_mut() = meta;
        self
    }
}
