//! File formats: schema-tagged JSON histograms, CSV sweeps, response matrices and
//! event streams. Every writer goes through a temporary file and an atomic rename.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::calibration::{SweepPoint, SweepSeries};
use crate::detector::PovmMatrix;
use crate::error::{Error, Result};
use crate::histogram::{
    CountHistogram, ExpectedHistogram, ExpectedJointHistogram, Histogram, JointCountHistogram,
    JointHistogram, Meta,
};
use crate::montecarlo::EventRecord;

pub const HISTOGRAM_SCHEMA: &str = "mppc-hist/1";
pub const JOINT_SCHEMA: &str = "mppc-joint/1";
pub const SWEEP_HEADER: &str = "mean_counts_per_pulse,g2,g2_err";
pub const NRF_SWEEP_HEADER: &str = "mean_photons,nrf,nrf_err";
pub const EVENTS_HEADER: &str = "pulse,counts_s,counts_i";

/// Write `contents` next to `path` and rename it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// On-disk single-detector histogram. Counts are integers for measured or simulated
/// data and decimals for expected-count data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramFile {
    pub schema: String,
    pub trials: Value,
    pub counts: Vec<Value>,
    #[serde(default)]
    pub meta: Meta,
}

/// Joint histogram; rows are signal counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointHistogramFile {
    pub schema: String,
    pub trials: Value,
    pub counts: Vec<Vec<Value>>,
    #[serde(default)]
    pub meta: Meta,
}

/// A histogram read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedHistogram {
    Counts(CountHistogram),
    Expected(ExpectedHistogram),
}

impl Histogram for LoadedHistogram {
    fn trials(&self) -> f64 {
        match self {
            Self::Counts(h) => h.trials(),
            Self::Expected(h) => h.trials(),
        }
    }

    fn len(&self) -> usize {
        match self {
            Self::Counts(h) => h.len(),
            Self::Expected(h) => h.len(),
        }
    }

    fn count(&self, k: usize) -> f64 {
        match self {
            Self::Counts(h) => h.count(k),
            Self::Expected(h) => h.count(k),
        }
    }

    fn meta(&self) -> &Meta {
        match self {
            Self::Counts(h) => h.meta(),
            Self::Expected(h) => h.meta(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadedJointHistogram {
    Counts(JointCountHistogram),
    Expected(ExpectedJointHistogram),
}

impl JointHistogram for LoadedJointHistogram {
    fn trials(&self) -> f64 {
        match self {
            Self::Counts(h) => h.trials(),
            Self::Expected(h) => h.trials(),
        }
    }

    fn dims(&self) -> (usize, usize) {
        match self {
            Self::Counts(h) => h.dims(),
            Self::Expected(h) => h.dims(),
        }
    }

    fn count(&self, signal: usize, idler: usize) -> f64 {
        match self {
            Self::Counts(h) => h.count(signal, idler),
            Self::Expected(h) => h.count(signal, idler),
        }
    }

    fn meta(&self) -> &Meta {
        match self {
            Self::Counts(h) => h.meta(),
            Self::Expected(h) => h.meta(),
        }
    }
}

fn integer(v: &Value) -> Option<u64> {
    v.as_u64()
}

fn decimal(v: &Value) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::Schema(format!("expected a number, found {v}")))
}

fn check_schema(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Schema(format!(
            "schema '{found}' where '{expected}' was expected"
        )));
    }
    Ok(())
}

fn totals_match(total: f64, trials: f64) -> bool {
    (total - trials).abs() <= 1e-9 * trials.max(1.0)
}

impl HistogramFile {
    pub fn from_counts(h: &CountHistogram) -> Self {
        Self {
            schema: HISTOGRAM_SCHEMA.into(),
            trials: h.trial_count().into(),
            counts: h.counts().iter().map(|&c| c.into()).collect(),
            meta: h.meta().clone(),
        }
    }

    pub fn from_expected(h: &ExpectedHistogram) -> Self {
        Self {
            schema: HISTOGRAM_SCHEMA.into(),
            trials: h.trials().into(),
            counts: h.counts().iter().map(|&c| c.into()).collect(),
            meta: h.meta().clone(),
        }
    }

    pub fn into_histogram(self) -> Result<LoadedHistogram> {
        check_schema(&self.schema, HISTOGRAM_SCHEMA)?;
        if self.counts.is_empty() {
            return Err(Error::Schema("counts must include bin 0".into()));
        }
        let ints: Option<Vec<u64>> = self.counts.iter().map(integer).collect();
        if let (Some(trials), Some(counts)) = (integer(&self.trials), ints) {
            let mut h = CountHistogram::new(trials, counts).map_err(schema_error)?;
            *h.meta_mut() = self.meta;
            return Ok(LoadedHistogram::Counts(h));
        }
        let trials = decimal(&self.trials)?;
        let counts = self
            .counts
            .iter()
            .map(decimal)
            .collect::<Result<Vec<_>>>()?;
        if !totals_match(counts.iter().sum(), trials) {
            return Err(Error::Schema("bins do not add up to trials".into()));
        }
        let mut h = ExpectedHistogram::new(trials, counts).map_err(schema_error)?;
        *h.meta_mut() = self.meta;
        Ok(LoadedHistogram::Expected(h))
    }
}

impl JointHistogramFile {
    pub fn from_counts(h: &JointCountHistogram) -> Self {
        Self {
            schema: JOINT_SCHEMA.into(),
            trials: h.trial_count().into(),
            counts: h
                .counts()
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|&c| c.into()).collect())
                .collect(),
            meta: h.meta().clone(),
        }
    }

    pub fn from_expected(h: &ExpectedJointHistogram) -> Self {
        Self {
            schema: JOINT_SCHEMA.into(),
            trials: h.trials().into(),
            counts: h
                .counts()
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|&c| c.into()).collect())
                .collect(),
            meta: h.meta().clone(),
        }
    }

    pub fn into_histogram(self) -> Result<LoadedJointHistogram> {
        check_schema(&self.schema, JOINT_SCHEMA)?;
        let rows = self.counts.len();
        let cols = self.counts.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 || self.counts.iter().any(|r| r.len() != cols) {
            return Err(Error::Schema(
                "counts must be a non-empty rectangular matrix".into(),
            ));
        }
        let flat: Vec<&Value> = self.counts.iter().flatten().collect();
        let ints: Option<Vec<u64>> = flat.iter().map(|v| integer(v)).collect();
        if let (Some(trials), Some(ints)) = (integer(&self.trials), ints) {
            let matrix = Array2::from_shape_vec((rows, cols), ints).expect("rectangular");
            let mut h = JointCountHistogram::new(trials, matrix).map_err(schema_error)?;
            *h.meta_mut() = self.meta;
            return Ok(LoadedJointHistogram::Counts(h));
        }
        let trials = decimal(&self.trials)?;
        let values = flat.into_iter().map(decimal).collect::<Result<Vec<_>>>()?;
        if !totals_match(values.iter().sum(), trials) {
            return Err(Error::Schema("cells do not add up to trials".into()));
        }
        let matrix = Array2::from_shape_vec((rows, cols), values).expect("rectangular");
        let mut h = ExpectedJointHistogram::new(trials, matrix).map_err(schema_error)?;
        *h.meta_mut() = self.meta;
        Ok(LoadedJointHistogram::Expected(h))
    }
}

fn schema_error(e: Error) -> Error {
    match e {
        Error::Domain(msg) => Error::Schema(msg),
        other => other,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_histogram(path: &Path, h: &CountHistogram) -> Result<()> {
    write_json(path, &HistogramFile::from_counts(h))
}

pub fn write_expected_histogram(path: &Path, h: &ExpectedHistogram) -> Result<()> {
    write_json(path, &HistogramFile::from_expected(h))
}

pub fn read_histogram(path: &Path) -> Result<LoadedHistogram> {
    let text = fs::read_to_string(path)?;
    let file: HistogramFile = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    file.into_histogram()
}

pub fn write_joint_histogram(path: &Path, h: &JointCountHistogram) -> Result<()> {
    write_json(path, &JointHistogramFile::from_counts(h))
}

pub fn write_expected_joint_histogram(path: &Path, h: &ExpectedJointHistogram) -> Result<()> {
    write_json(path, &JointHistogramFile::from_expected(h))
}

pub fn read_joint_histogram(path: &Path) -> Result<LoadedJointHistogram> {
    let text = fs::read_to_string(path)?;
    let file: JointHistogramFile = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    file.into_histogram()
}

/// One row of an NRF sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrfPoint {
    pub mean_photons: f64,
    pub nrf: f64,
    pub nrf_err: f64,
}

fn three_column_csv(header: &str, mut rows: Vec<[f64; 3]>) -> String {
    rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut out = String::from(header);
    out.push('\n');
    for [a, b, c] in rows {
        out.push_str(&format!("{a},{b},{c}\n"));
    }
    out
}

fn parse_three_columns(text: &str, header: &str) -> Result<Vec<[f64; 3]>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let found = reader
        .headers()
        .map_err(|e| Error::Schema(e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if found != header {
        return Err(Error::Schema(format!(
            "CSV header '{found}' where '{header}' was expected"
        )));
    }
    reader
        .deserialize::<(f64, f64, f64)>()
        .map(|row| {
            row.map(|(a, b, c)| [a, b, c])
                .map_err(|e| Error::Schema(e.to_string()))
        })
        .collect()
}

pub fn sweep_to_csv(series: &SweepSeries) -> String {
    let rows = series
        .points()
        .iter()
        .map(|p| [p.n_total, p.g2, p.g2_err])
        .collect();
    three_column_csv(SWEEP_HEADER, rows)
}

pub fn write_sweep_csv(path: &Path, series: &SweepSeries) -> Result<()> {
    write_atomic(path, sweep_to_csv(series).as_bytes())
}

pub fn read_sweep_csv(path: &Path) -> Result<SweepSeries> {
    let rows = parse_three_columns(&fs::read_to_string(path)?, SWEEP_HEADER)?;
    SweepSeries::new(
        rows.into_iter()
            .map(|[n_total, g2, g2_err]| SweepPoint {
                n_total,
                g2,
                g2_err,
            })
            .collect(),
    )
}

pub fn nrf_sweep_to_csv(points: &[NrfPoint]) -> String {
    let rows = points
        .iter()
        .map(|p| [p.mean_photons, p.nrf, p.nrf_err])
        .collect();
    three_column_csv(NRF_SWEEP_HEADER, rows)
}

pub fn write_nrf_sweep_csv(path: &Path, points: &[NrfPoint]) -> Result<()> {
    write_atomic(path, nrf_sweep_to_csv(points).as_bytes())
}

pub fn read_nrf_sweep_csv(path: &Path) -> Result<Vec<NrfPoint>> {
    let rows = parse_three_columns(&fs::read_to_string(path)?, NRF_SWEEP_HEADER)?;
    Ok(rows
        .into_iter()
        .map(|[mean_photons, nrf, nrf_err]| NrfPoint {
            mean_photons,
            nrf,
            nrf_err,
        })
        .collect())
}

/// Response matrix as CSV: one row per count `N`, one column per photon number `k`,
/// 12 significant digits.
pub fn povm_to_csv(povm: &PovmMatrix) -> String {
    let q = povm.q();
    let mut out = String::from("N");
    for k in 0..q.ncols() {
        out.push_str(&format!(",k{k}"));
    }
    out.push('\n');
    for (n, row) in q.rows().into_iter().enumerate() {
        out.push_str(&n.to_string());
        for v in row {
            out.push_str(&format!(",{v:.11e}"));
        }
        out.push('\n');
    }
    out
}

pub fn write_povm_csv(path: &Path, povm: &PovmMatrix) -> Result<()> {
    write_atomic(path, povm_to_csv(povm).as_bytes())
}

/// Raw per-pulse records; the idler column is empty for single-arm runs.
pub fn write_events_csv(path: &Path, events: &[EventRecord]) -> Result<()> {
    let mut out = String::with_capacity(16 * events.len() + 32);
    out.push_str(EVENTS_HEADER);
    out.push('\n');
    for e in events {
        match e.counts_i {
            Some(i) => out.push_str(&format!("{},{},{}\n", e.pulse_index, e.counts_s, i)),
            None => out.push_str(&format!("{},{},\n", e.pulse_index, e.counts_s)),
        }
    }
    write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{build_povm, DetectorParams};
    use crate::montecarlo::{simulate_events, SimulationConfig};
    use crate::sources::{pmf_coherent, SourceSpec};

    #[test]
    fn histogram_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.json");
        let h = CountHistogram::from_signal_bins(10, &[4, 3, 1])
            .unwrap()
            .with_meta("source", "coherent");
        write_histogram(&path, &h).unwrap();
        assert_eq!(read_histogram(&path).unwrap(), LoadedHistogram::Counts(h));

        let e = ExpectedHistogram::from_distribution(&pmf_coherent(0.37, 1).unwrap(), 1e6).unwrap();
        write_expected_histogram(&path, &e).unwrap();
        assert_eq!(read_histogram(&path).unwrap(), LoadedHistogram::Expected(e));
    }

    #[test]
    fn joint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.json");
        let j = JointCountHistogram::from_events(&[(0, 1), (1, 0), (1, 1), (2, 2)])
            .unwrap()
            .with_meta("seed", 4);
        write_joint_histogram(&path, &j).unwrap();
        assert_eq!(
            read_joint_histogram(&path).unwrap(),
            LoadedJointHistogram::Counts(j)
        );
    }

    #[test]
    fn schema_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(
            &path,
            r#"{"schema":"mppc-hist/2","trials":1,"counts":[1],"meta":{}}"#,
        )
        .unwrap();
        assert!(matches!(read_histogram(&path), Err(Error::Schema(_))));
        fs::write(
            &path,
            r#"{"schema":"mppc-hist/1","trials":3,"counts":[1],"meta":{}}"#,
        )
        .unwrap();
        assert!(matches!(read_histogram(&path), Err(Error::Schema(_))));
        fs::write(
            &path,
            r#"{"schema":"mppc-hist/1","trials":1,"counts":[1],"meta":{}}"#,
        )
        .unwrap();
        assert!(matches!(read_joint_histogram(&path), Err(Error::Schema(_))));
    }

    #[test]
    fn sweep_round_trip_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let series = SweepSeries::new(vec![
            SweepPoint {
                n_total: 0.5,
                g2: 1.8370179,
                g2_err: 0.01,
            },
            SweepPoint {
                n_total: 0.1,
                g2: 5.3,
                g2_err: 0.1,
            },
            SweepPoint {
                n_total: 1.0 / 3.0,
                g2: 2.2,
                g2_err: 0.02,
            },
        ])
        .unwrap();
        write_sweep_csv(&path, &series).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("mean_counts_per_pulse,g2,g2_err\n0.1,"));
        let back = read_sweep_csv(&path).unwrap();
        let mut sorted = series.points().to_vec();
        sorted.sort_by(|a, b| a.n_total.total_cmp(&b.n_total));
        assert_eq!(back.points(), sorted.as_slice());

        let nrf = vec![NrfPoint {
            mean_photons: 0.3,
            nrf: 1.2,
            nrf_err: 0.01,
        }];
        write_nrf_sweep_csv(&path, &nrf).unwrap();
        assert_eq!(read_nrf_sweep_csv(&path).unwrap(), nrf);
        assert!(read_sweep_csv(&path).is_err());
    }

    #[test]
    fn povm_csv_columns_sum_to_one() {
        let povm = build_povm(&DetectorParams::new(0.5, 0.2, 6).unwrap(), 5).unwrap();
        let csv = povm_to_csv(&povm);
        let rows: Vec<Vec<f64>> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
            .collect();
        for k in 0..=5 {
            let s: f64 = rows.iter().map(|r| r[k]).sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
        assert!((rows[1][1] - 0.4).abs() < 1e-12 && (rows[2][1] - 0.1).abs() < 1e-12);
        assert!(csv.lines().nth(1).unwrap().contains("e"));
    }

    #[test]
    fn events_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ev.csv");
        let det = DetectorParams::ideal(3);
        let events =
            simulate_events(&SimulationConfig::new(SourceSpec::coherent(1.0), det, 5, 1)).unwrap();
        write_events_csv(&path, &events).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().nth(1).unwrap().starts_with("0,"));
        assert!(text.lines().nth(1).unwrap().ends_with(','));
    }
}
