use std::path::Path;

use mppc_core::calibration::{dark_noise_crosstalk, fit_crosstalk, CalibrationResult, SweepSeries};
use mppc_core::detector::{
    build_povm, nrf_limit_coherent, nrf_limit_sv, source_mean_for_counts, DetectorParams,
    DEFAULT_PIXEL_COUNT,
};
use mppc_core::estimators::{
    g2_from_histogram, mean_counts_per_pulse, nrf_from_joint, subtract_dark,
};
use mppc_core::histogram::{Histogram, JointHistogram};
use mppc_core::io::{
    povm_to_csv, read_histogram, read_joint_histogram, read_sweep_csv, write_atomic,
    write_events_csv, write_histogram, write_joint_histogram, write_nrf_sweep_csv, NrfPoint,
};
use mppc_core::montecarlo::{
    series_from_histograms, simulate_events, simulate_independent, simulate_single, simulate_twin,
    SimulationConfig,
};
use mppc_core::sources::{SourceKind, SourceSpec};
use serde_json::json;

use crate::args::{CalibrateArgs, DetectorArgs, G2Args, NrfArgs, PovmArgs, SimulateArgs};
use crate::{usage, CliResult};

pub struct Output {
    pub quiet: bool,
}

impl Output {
    pub fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

fn require(ok: bool, msg: &str) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        usage(msg)
    }
}

fn check_eta(flag: &str, eta: f64) -> CliResult<()> {
    require(
        (0.0..=1.0).contains(&eta),
        &format!("{flag} must lie in [0, 1], got {eta}"),
    )
}

fn check_xt(flag: &str, xt: f64) -> CliResult<()> {
    require(
        (0.0..1.0).contains(&xt),
        &format!("{flag} must lie in [0, 1), got {xt}"),
    )
}

fn check_dark(flag: &str, dark: f64) -> CliResult<()> {
    require(
        dark.is_finite() && dark >= 0.0,
        &format!("{flag} must be >= 0, got {dark}"),
    )
}

fn check_nmax(flag: &str, nmax: usize, pixels: usize) -> CliResult<()> {
    require(nmax >= 1, &format!("{flag} must be >= 1"))?;
    require(
        nmax <= pixels,
        &format!("{flag} = {nmax} exceeds the preset's {pixels} pixels"),
    )
}

/// First-arm detector from flags, filling gaps from the preset.
pub fn detector_from_args(d: &DetectorArgs) -> CliResult<DetectorParams> {
    let preset = d.preset;
    let xt = d.xt.or(preset.map(|p| p.crosstalk())).unwrap_or(0.0);
    let dark = d.dark.or(preset.map(|p| p.dark_rate())).unwrap_or(0.0);
    let n_max = d
        .nmax
        .unwrap_or(preset.map_or(DEFAULT_PIXEL_COUNT, |p| p.pixels()));
    let pixel_count = preset.map_or(DEFAULT_PIXEL_COUNT.max(n_max), |p| p.pixels());
    check_eta("--eta", d.eta)?;
    check_xt("--xt", xt)?;
    check_dark("--dark", dark)?;
    check_nmax("--nmax", n_max, pixel_count)?;
    Ok(DetectorParams {
        eta: d.eta,
        p_xt: xt,
        n_max,
        dark_mean: dark,
        pixel_count,
    })
}

fn source_from_args(a: &SimulateArgs) -> CliResult<SourceSpec> {
    let kind = a.source;
    let is_fock = matches!(kind, SourceKind::Fock | SourceKind::TwinFock);
    let mut spec = if is_fock {
        require(
            a.mean.is_none(),
            "--mean does not apply to fock sources; use --fock-n",
        )?;
        require(
            a.target_counts.is_none(),
            "--target-counts does not apply to fock sources",
        )?;
        let Some(n) = a.fock_n else {
            return usage(format!("--fock-n is required for --source {kind}"));
        };
        SourceSpec {
            fock_n: n,
            ..SourceSpec::new(kind, n as f64)
        }
    } else {
        require(a.fock_n.is_none(), "--fock-n applies to fock sources only")?;
        require(
            a.mean.is_some() || a.target_counts.is_some(),
            &format!("--mean or --target-counts is required for --source {kind}"),
        )?;
        let mean = a.mean.unwrap_or(0.0);
        require(
            mean.is_finite() && mean >= 0.0,
            &format!("--mean must be >= 0, got {mean}"),
        )?;
        SourceSpec::new(kind, mean)
    };
    if let Some(m) = a.modes {
        require(
            kind == SourceKind::TwinMultimode,
            "--modes applies to --source twin-multimode only",
        )?;
        require(
            m.is_finite() && m >= 1.0,
            &format!("--modes must be >= 1, got {m}"),
        )?;
        spec = spec.with_modes(m);
    }
    Ok(spec)
}

pub fn simulate(a: &SimulateArgs, out: &Output) -> CliResult<()> {
    require(a.trials >= 1, "--trials must be >= 1")?;
    let det_s = detector_from_args(&a.detector)?;
    let mut source = source_from_args(a)?;
    if let Some(target) = a.target_counts {
        require(
            target.is_finite() && target > 0.0,
            &format!("--target-counts must be > 0, got {target}"),
        )?;
        source = source.with_mean(source_mean_for_counts(&source, &det_s, target)?);
        log::info!("source mean {} for {target} counts/pulse", source.mean);
    }

    let second_arm_flags =
        a.eta2.is_some() || a.xt2.is_some() || a.nmax2.is_some() || a.dark2.is_some();
    let two_arms = source.kind.is_twin() || second_arm_flags;
    let mut cfg =
        SimulationConfig::new(source, det_s, a.trials, a.seed).with_mode(a.xt_mode.into());
    if two_arms {
        let det_i = DetectorParams {
            eta: a.eta2.unwrap_or(det_s.eta),
            p_xt: a.xt2.unwrap_or(det_s.p_xt),
            n_max: a.nmax2.unwrap_or(det_s.n_max),
            dark_mean: a.dark2.unwrap_or(det_s.dark_mean),
            pixel_count: det_s.pixel_count.max(a.nmax2.unwrap_or(0)),
        };
        check_eta("--eta2", det_i.eta)?;
        check_xt("--xt2", det_i.p_xt)?;
        check_dark("--dark2", det_i.dark_mean)?;
        check_nmax("--nmax2", det_i.n_max, det_i.pixel_count)?;
        cfg = cfg.with_idler(det_i);
    }

    if two_arms {
        let joint = if source.kind.is_twin() {
            simulate_twin(&cfg)?
        } else {
            simulate_independent(&cfg)?
        };
        write_joint_histogram(&a.out, &joint)?;
        let (ms, mi) = marginal_means(&joint);
        out.say(format!(
            "mean_s={ms:.6} mean_i={mi:.6} counts/pulse over {} pulses -> {}",
            a.trials,
            a.out.display()
        ));
    } else {
        let hist = simulate_single(&cfg)?;
        write_histogram(&a.out, &hist)?;
        out.say(format!(
            "mean={:.6} counts/pulse over {} pulses -> {}",
            mean_counts_per_pulse(&hist),
            a.trials,
            a.out.display()
        ));
    }
    if let Some(path) = &a.events {
        write_events_csv(path, &simulate_events(&cfg)?)?;
    }
    Ok(())
}

pub fn marginal_means(joint: &impl JointHistogram) -> (f64, f64) {
    let (mut s, mut i) = (0.0, 0.0);
    for (a, b, c) in joint.cells() {
        s += a as f64 * c;
        i += b as f64 * c;
    }
    let t = joint.trials();
    (s / t, i / t)
}

pub fn g2(a: &G2Args, out: &Output) -> CliResult<()> {
    let hist = read_histogram(&a.input)?;
    let (est, mean, dark_note) = match &a.dark {
        Some(dark_path) => {
            let dark = read_histogram(dark_path)?;
            let corrected = subtract_dark(&hist, &dark)?;
            if corrected.has_warning() {
                log::warn!("dark subtraction clamped bins {:?}", corrected.clamped_bins);
            }
            (
                g2_from_histogram(&corrected.histogram)?,
                corrected.corrected_mean,
                Some(dark_path.display().to_string()),
            )
        }
        None => (
            g2_from_histogram(&hist)?,
            mean_counts_per_pulse(&hist),
            None,
        ),
    };
    out.say(format!(
        "g2={:.6} err={:.6} mean={:.6}",
        est.value, est.std_err, mean
    ));
    if let Some(path) = &a.json {
        let doc = json!({
            "g2": est.value,
            "g2_err": est.std_err,
            "method": est.method,
            "mean_counts_per_pulse": mean,
            "trials": hist.trials(),
            "input": a.input.display().to_string(),
            "dark": dark_note,
        });
        write_json(path, &doc)?;
    }
    Ok(())
}

fn write_json(path: &Path, doc: &serde_json::Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(doc).map_err(mppc_core::Error::from)?;
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

fn load_sweep(a: &CalibrateArgs) -> CliResult<SweepSeries> {
    if let Some(path) = &a.sweep {
        return Ok(read_sweep_csv(path)?);
    }
    require(
        a.histograms.len() >= 3,
        &format!(
            "a g2 fit needs at least 3 histogram files, got {}",
            a.histograms.len()
        ),
    )?;
    let hists = a
        .histograms
        .iter()
        .map(|p| read_histogram(p))
        .collect::<mppc_core::Result<Vec<_>>>()?;
    Ok(series_from_histograms(&hists)?)
}

pub fn calibrate(a: &CalibrateArgs, out: &Output) -> CliResult<()> {
    require(
        a.g0.is_finite() && a.g0 >= 0.0,
        &format!("--g0 must be >= 0, got {}", a.g0),
    )?;
    let result: CalibrationResult = match &a.dark_noise {
        Some(path) => dark_noise_crosstalk(&read_histogram(path)?)?,
        None => fit_crosstalk(&load_sweep(a)?, a.g0)?,
    };
    let cod = if result.cod.is_nan() {
        "n/a".to_string()
    } else {
        format!("{:.4}", result.cod)
    };
    out.say(format!(
        "p={:.6} ± {:.6} COD={cod}",
        result.p_hat, result.p_err
    ));
    out.say(format!("p+2p^2={:.4}", result.total_crosstalk()));
    let mut text = result.to_json()?;
    text.push('\n');
    match &a.out {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn nrf(a: &NrfArgs, out: &Output) -> CliResult<()> {
    let eff = match (a.eta, a.xt) {
        (Some(eta), Some(xt)) => {
            check_eta("--eta", eta)?;
            check_xt("--xt", xt)?;
            Some((1.0 + xt) * eta)
        }
        (None, None) => None,
        _ => return usage("--eta and --xt must be given together"),
    };
    if eff == Some(0.0) {
        return usage("--eta must be > 0 to convert counts to photons");
    }
    let mut points = Vec::with_capacity(a.inputs.len());
    for path in &a.inputs {
        let joint = read_joint_histogram(path)?;
        let est = nrf_from_joint(&joint)?;
        let (ms, mi) = marginal_means(&joint);
        let counts = 0.5 * (ms + mi);
        let mean_photons = eff.map_or(counts, |e| counts / e);
        out.say(format!(
            "{}: nrf={:.6} err={:.6} mean_photons={:.6}",
            path.display(),
            est.value,
            est.std_err,
            mean_photons
        ));
        points.push(NrfPoint {
            mean_photons,
            nrf: est.value,
            nrf_err: est.std_err,
        });
    }
    if let (Some(eta), Some(xt)) = (a.eta, a.xt) {
        out.say(format!("nrf_limit_coherent={:.5}", nrf_limit_coherent(xt)?));
        out.say(format!("nrf_limit_sv={:.5}", nrf_limit_sv(xt, eta)?));
    }
    if let Some(path) = &a.out {
        write_nrf_sweep_csv(path, &points)?;
    }
    Ok(())
}

pub fn povm(a: &PovmArgs, out: &Output) -> CliResult<()> {
    check_eta("--eta", a.eta)?;
    check_xt("--xt", a.xt)?;
    require(a.nmax >= 1, "--nmax must be >= 1")?;
    let params = DetectorParams::new(a.eta, a.xt, a.nmax)?;
    let matrix = build_povm(&params, a.kmax)?;
    let csv = povm_to_csv(&matrix);
    match &a.out {
        Some(path) => {
            write_atomic(path, csv.as_bytes())?;
            out.say(format!(
                "Q(N|k) for N <= {}, k <= {} -> {}",
                a.nmax,
                a.kmax,
                path.display()
            ));
        }
        None => print!("{csv}"),
    }
    Ok(())
}
