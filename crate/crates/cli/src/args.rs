use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mppc_core::montecarlo::CrosstalkMode;
use mppc_core::sources::SourceKind;

#[derive(Debug, Parser)]
#[command(
    name = "mppc",
    version,
    about = "Photon statistics and crosstalk calibration for multipixel photon counters"
)]
pub struct Cli {
    /// Suppress the one-line summaries on standard output.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate pulses through the detector and write a histogram file.
    Simulate(SimulateArgs),
    /// Estimate g2 from a histogram file.
    G2(G2Args),
    /// Fit the crosstalk probability to a g2 sweep.
    Calibrate(CalibrateArgs),
    /// Noise reduction factor of joint histograms.
    Nrf(NrfArgs),
    /// Export the detector response matrix Q(N|k).
    Povm(PovmArgs),
    /// Run a scripted figure reproduction at desk scale.
    Reproduce(ReproduceArgs),
}

/// Detector settings tabulated for three pixel sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    #[value(name = "mppc-25um")]
    Mppc25um,
    #[value(name = "mppc-50um")]
    Mppc50um,
    #[value(name = "mppc-100um")]
    Mppc100um,
}

impl Preset {
    /// Crosstalk probability solving `p + 2p^2` = 0.07, 0.21, 0.87.
    pub fn crosstalk(self) -> f64 {
        match self {
            Preset::Mppc25um => 0.0622,
            Preset::Mppc50um => 0.1593,
            Preset::Mppc100um => 0.4553,
        }
    }

    pub fn dark_rate(self) -> f64 {
        match self {
            Preset::Mppc25um => 0.002,
            Preset::Mppc50um => 0.008,
            Preset::Mppc100um => 0.021,
        }
    }

    pub fn pixels(self) -> usize {
        match self {
            Preset::Mppc25um => 1600,
            Preset::Mppc50um => 400,
            Preset::Mppc100um => 100,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Mppc25um => "mppc-25um",
            Preset::Mppc50um => "mppc-50um",
            Preset::Mppc100um => "mppc-100um",
        }
    }

    pub const ALL: [Preset; 3] = [Preset::Mppc25um, Preset::Mppc50um, Preset::Mppc100um];
}

#[derive(Debug, Clone, Args)]
pub struct DetectorArgs {
    /// Detection efficiency.
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    /// Crosstalk probability (default 0, or the preset's value).
    #[arg(long)]
    pub xt: Option<f64>,
    /// Saturation level (default: pixel count).
    #[arg(long)]
    pub nmax: Option<usize>,
    /// Mean dark avalanches per pulse (default 0, or the preset's value).
    #[arg(long)]
    pub dark: Option<f64>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_source)]
    pub source: SourceKind,
    /// Mean photon (pair) number per pulse.
    #[arg(long, conflicts_with = "target_counts")]
    pub mean: Option<f64>,
    /// Tune the source so the first arm records this many counts per pulse.
    #[arg(long)]
    pub target_counts: Option<f64>,
    /// Number of modes for twin-multimode sources.
    #[arg(long)]
    pub modes: Option<f64>,
    /// Photon number for fock and twin-fock sources.
    #[arg(long)]
    pub fock_n: Option<usize>,
    #[command(flatten)]
    pub detector: DetectorArgs,
    /// Second-arm efficiency (default: same as the first arm).
    #[arg(long)]
    pub eta2: Option<f64>,
    #[arg(long)]
    pub xt2: Option<f64>,
    #[arg(long)]
    pub nmax2: Option<usize>,
    #[arg(long)]
    pub dark2: Option<f64>,
    #[arg(long)]
    pub trials: u64,
    #[arg(long, env = "MPPC_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = XtMode::Binomial)]
    pub xt_mode: XtMode,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write every pulse as `pulse,counts_s,counts_i`.
    #[arg(long)]
    pub events: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum XtMode {
    Binomial,
    Cascade,
}

impl From<XtMode> for CrosstalkMode {
    fn from(m: XtMode) -> Self {
        match m {
            XtMode::Binomial => CrosstalkMode::Binomial,
            XtMode::Cascade => CrosstalkMode::Cascade,
        }
    }
}

fn parse_source(s: &str) -> Result<SourceKind, String> {
    s.parse().map_err(|e: mppc_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct G2Args {
    /// Histogram file (mppc-hist/1).
    pub input: PathBuf,
    /// Beam-blocked histogram to subtract first.
    #[arg(long)]
    pub dark: Option<PathBuf>,
    /// Write the estimate as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Histogram files, one per intensity.
    #[arg(required_unless_present_any = ["sweep", "dark_noise"])]
    pub histograms: Vec<PathBuf>,
    /// Sweep CSV with header mean_counts_per_pulse,g2,g2_err.
    #[arg(long, conflicts_with = "histograms")]
    pub sweep: Option<PathBuf>,
    /// Beam-blocked histogram for the dark-count method instead of a g2 fit.
    #[arg(long, conflicts_with_all = ["histograms", "sweep"])]
    pub dark_noise: Option<PathBuf>,
    /// Known g2 of the reference source.
    #[arg(long, default_value_t = 1.0)]
    pub g0: f64,
    /// Write the result JSON here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the fitted curve as a sweep CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NrfArgs {
    /// Joint histogram files (mppc-joint/1).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Detector efficiency, for converting counts to photons and for the limits.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Crosstalk probability, for converting counts to photons and for the limits.
    #[arg(long)]
    pub xt: Option<f64>,
    /// Sweep CSV output (mean_photons,nrf,nrf_err).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PovmArgs {
    #[arg(long)]
    pub eta: f64,
    #[arg(long)]
    pub xt: f64,
    #[arg(long)]
    pub nmax: usize,
    #[arg(long)]
    pub kmax: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    #[value(name = "3a")]
    Fig3a,
    #[value(name = "5")]
    Fig5,
    #[value(name = "8a")]
    Fig8a,
    #[value(name = "8b")]
    Fig8b,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Desk,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(long, value_enum)]
    pub figure: Figure,
    #[arg(long, value_enum, default_value_t = Scale::Desk)]
    pub scale: Scale,
    /// Output directory (default: reproduce-<figure>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "MPPC_SEED", default_value_t = 0)]
    pub seed: u64,
}
