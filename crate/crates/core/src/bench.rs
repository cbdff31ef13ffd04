//! Work-precision harness: fixed-step error scans on the Kepler problem,
//! convergence-order fits, adaptive tolerance sweeps, and the CSV layer the
//! CLI emits.

use crate::problems::{
    kepler_energy, kepler_exact, kepler_flows, kepler_init, KeplerState, ProblemError,
};
use crate::schemes::{find_method, EmbeddedMethod};
use crate::stepper::{
    combined_error, integrate_adaptive, integrate_fixed, ControllerConfig, FixedRun, StepperError,
    TrajectorySink,
};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum BenchError {
    #[error("unknown method '{0}'")]
    UnknownMethod(String),
    #[error("invalid scan configuration: {0}")]
    BadConfig(&'static str),
    #[error("only {found} points fall in the fit window; need at least {need}")]
    TooFewPoints { found: usize, need: usize },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Stepper(#[from] StepperError),
    #[error("CSV I/O failed: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("unparsable CSV field '{0}'")]
    BadField(String),
}

/// Fixed-step scan over methods × eccentricities × step sizes.
#[derive(Clone, Debug)]
pub struct ScanConfig {
    pub methods: Vec<String>,
    pub eccentricities: Vec<f64>,
    pub hs: Vec<f64>,
    pub t_end: f64,
    pub out: Option<PathBuf>,
}

impl ScanConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.methods.is_empty() {
            return Err(BenchError::BadConfig("no methods given"));
        }
        if self.eccentricities.is_empty() {
            return Err(BenchError::BadConfig("no eccentricities given"));
        }
        if self.hs.is_empty() {
            return Err(BenchError::BadConfig("no step sizes given"));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(BenchError::BadConfig("t_end must be positive"));
        }
        if self
            .eccentricities
            .iter()
            .any(|&e| !(0.0..1.0).contains(&e))
        {
            return Err(BenchError::BadConfig("eccentricity outside [0, 1)"));
        }
        if self.hs.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(BenchError::BadConfig("step sizes must be positive"));
        }
        if self.hs.iter().any(|&h| h > self.t_end) {
            return Err(BenchError::BadConfig("step size exceeds t_end"));
        }
        Ok(())
    }
}

/// One scan row. Metric fields are None when the run failed or the quantity
/// does not apply (E2_low exists only for dual-estimator methods).
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub method: String,
    pub e: f64,
    pub h: f64,
    pub nsteps: Option<usize>,
    pub fevals: Option<usize>,
    pub e1_full: Option<f64>,
    pub e1_pos: Option<f64>,
    pub e2: Option<f64>,
    pub e2_low: Option<f64>,
    pub energy_drift: Option<f64>,
}

pub const CSV_HEADER: [&str; 10] = [
    "method",
    "e",
    "h",
    "nsteps",
    "fevals",
    "E1_full",
    "E1_pos",
    "E2",
    "E2_low",
    "energy_drift",
];

/// 17-significant-digit float formatting used for every CSV float field.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Max-over-trajectory distances to the exact orbit: full state and
/// positions only.
fn kepler_e1(run: &FixedRun, e: f64) -> Result<(f64, f64), ProblemError> {
    let mut full = 0.0f64;
    let mut pos = 0.0f64;
    for (t, x) in run.times.iter().zip(&run.states) {
        let exact = kepler_exact(e, *t)?.to_state();
        let mut df = 0.0;
        for i in 0..4 {
            let d = exact[i] - x[i];
            df += d * d;
        }
        let dp = {
            let d0 = exact[0] - x[0];
            let d1 = exact[1] - x[1];
            (d0 * d0 + d1 * d1).sqrt()
        };
        full = full.max(df.sqrt());
        pos = pos.max(dp);
    }
    Ok((full, pos))
}

fn max_energy_drift(run: &FixedRun, mu: f64, h0: f64) -> f64 {
    let mut drift = 0.0f64;
    for x in &run.states {
        let s = KeplerState {
            q: [x[0], x[1]],
            p: [x[2], x[3]],
            mu,
            e: 0.0,
        };
        if let Ok(h) = kepler_energy(&s) {
            drift = drift.max((h - h0).abs());
        }
    }
    drift
}

/// One fixed-step Kepler run distilled into a scan row. For dual-estimator
/// methods E2 is the max per-step combined error and E2_low the max raw
/// low-order difference; otherwise E2 is the single estimator's difference.
pub fn run_one(
    method: &EmbeddedMethod,
    e: f64,
    h: f64,
    t_end: f64,
) -> Result<RunRecord, BenchError> {
    let init = kepler_init(e)?;
    let flows = kepler_flows(init.mu)?;
    let run = integrate_fixed(method, &flows, &init.to_state(), h, 0.0, t_end, None)?;
    let (e1_full, e1_pos) = kepler_e1(&run, e)?;
    let (e2, e2_low) = if run.est_diffs.len() >= 2 {
        let combined = run.est_diffs[0]
            .iter()
            .zip(&run.est_diffs[1])
            .map(|(&hi, &lo)| combined_error(hi, lo))
            .fold(0.0f64, f64::max);
        let low = run.est_diffs[1].iter().cloned().fold(0.0f64, f64::max);
        (Some(combined), Some(low))
    } else {
        let single = run
            .est_diffs
            .first()
            .map(|d| d.iter().cloned().fold(0.0f64, f64::max));
        (single, None)
    };
    let h0 = init.energy();
    Ok(RunRecord {
        method: method.alias.to_string(),
        e,
        h,
        nsteps: Some(run.nsteps),
        fevals: Some(run.fevals),
        e1_full: Some(e1_full),
        e1_pos: Some(e1_pos),
        e2,
        e2_low,
        energy_drift: Some(max_energy_drift(&run, init.mu, h0)),
    })
}

/// Run the whole grid in configuration order. A run that blows up becomes a
/// row with empty metric fields and the scan continues. Writes the CSV when
/// the config names an output path.
pub fn run_scan(cfg: &ScanConfig) -> Result<Vec<RunRecord>, BenchError> {
    cfg.validate()?;
    let mut methods = Vec::with_capacity(cfg.methods.len());
    for name in &cfg.methods {
        methods.push(find_method(name).ok_or_else(|| BenchError::UnknownMethod(name.clone()))?);
    }
    let mut records = Vec::new();
    for method in &methods {
        for &e in &cfg.eccentricities {
            for &h in &cfg.hs {
                let record = match run_one(method, e, h, cfg.t_end) {
                    Ok(r) => r,
                    Err(BenchError::Stepper(_)) => RunRecord {
                        method: method.alias.to_string(),
                        e,
                        h,
                        nsteps: None,
                        fevals: None,
                        e1_full: None,
                        e1_pos: None,
                        e2: None,
                        e2_low: None,
                        energy_drift: None,
                    },
                    Err(other) => return Err(other),
                };
                records.push(record);
            }
        }
    }
    if let Some(path) = &cfg.out {
        write_csv(&records, path)?;
    }
    Ok(records)
}

/// Write scan rows with the fixed column set; floats at 17 significant
/// digits, empty fields for missing values. Output is byte-deterministic for
/// a given record list.
pub fn write_csv(records: &[RunRecord], path: &Path) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(&[
            r.method.clone(),
            fmt_float(r.e),
            fmt_float(r.h),
            r.nsteps.map(|v| v.to_string()).unwrap_or_default(),
            r.fevals.map(|v| v.to_string()).unwrap_or_default(),
            r.e1_full.map(fmt_float).unwrap_or_default(),
            r.e1_pos.map(fmt_float).unwrap_or_default(),
            r.e2.map(fmt_float).unwrap_or_default(),
            r.e2_low.map(fmt_float).unwrap_or_default(),
            r.energy_drift.map(fmt_float).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_opt_f64(s: &str) -> Result<Option<f64>, BenchError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| BenchError::BadField(s.to_string()))
}

fn parse_opt_usize(s: &str) -> Result<Option<usize>, BenchError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<usize>()
        .map(Some)
        .map_err(|_| BenchError::BadField(s.to_string()))
}

fn parse_f64(s: &str) -> Result<f64, BenchError> {
    s.parse::<f64>()
        .map_err(|_| BenchError::BadField(s.to_string()))
}

/// Read rows written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<RunRecord>, BenchError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        if row.len() != CSV_HEADER.len() {
            return Err(BenchError::BadField(format!(
                "row with {} fields",
                row.len()
            )));
        }
        records.push(RunRecord {
            method: row[0].to_string(),
            e: parse_f64(&row[1])?,
            h: parse_f64(&row[2])?,
            nsteps: parse_opt_usize(&row[3])?,
            fevals: parse_opt_usize(&row[4])?,
            e1_full: parse_opt_f64(&row[5])?,
            e1_pos: parse_opt_f64(&row[6])?,
            e2: parse_opt_f64(&row[7])?,
            e2_low: parse_opt_f64(&row[8])?,
            energy_drift: parse_opt_f64(&row[9])?,
        });
    }
    Ok(records)
}

/// Least-squares line through (ln x, ln y); returns (slope, intercept,
/// rms residual). Inputs must be positive.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..xs.len() {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss = 0.0;
    for i in 0..xs.len() {
        let r = ly[i] - (intercept + slope * lx[i]);
        ss += r * r;
    }
    (slope, intercept, (ss / n).sqrt())
}

/// Fit window for convergence-order estimation.
pub const FIT_WINDOW: (f64, f64) = (1e-10, 1e-3);
const FIT_MIN_POINTS: usize = 3;

#[derive(Clone, Copy, Debug)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
    pub points: usize,
}

/// Slope of log E1_full against log h over the records whose error falls in
/// the asymptotic window; the records should belong to one method and one
/// eccentricity.
pub fn fit_order(records: &[RunRecord]) -> Result<OrderFit, BenchError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in records {
        if let Some(e1) = r.e1_full {
            if e1 >= FIT_WINDOW.0 && e1 <= FIT_WINDOW.1 {
                xs.push(r.h);
                ys.push(e1);
            }
        }
    }
    if xs.len() < FIT_MIN_POINTS {
        return Err(BenchError::TooFewPoints {
            found: xs.len(),
            need: FIT_MIN_POINTS,
        });
    }
    let (slope, intercept, residual) = fit_loglog(&xs, &ys);
    Ok(OrderFit {
        slope,
        intercept,
        residual,
        points: xs.len(),
    })
}

/// `count` geometrically spaced values from `lo` to `hi` inclusive.
pub fn geometric_range(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>, BenchError> {
    if !(lo > 0.0 && hi > lo && count >= 2) {
        return Err(BenchError::BadConfig(
            "need 0 < lo < hi and at least two points",
        ));
    }
    let ratio = (hi / lo).powf(1.0 / (count - 1) as f64);
    Ok((0..count)
        .map(|i| {
            if i + 1 == count {
                hi
            } else {
                lo * ratio.powi(i as i32)
            }
        })
        .collect())
}

/// One adaptive run distilled: achieved max error against the exact orbit,
/// step counts, and work. `aborted` records a controller failure; the error
/// fields are then empty.
#[derive(Clone, Debug)]
pub struct AdaptiveRecord {
    pub method: String,
    pub e: f64,
    pub tol: f64,
    pub achieved_e1: Option<f64>,
    pub accepted: Option<usize>,
    pub rejected: Option<usize>,
    pub fevals: Option<usize>,
    pub aborted: bool,
}

/// Adaptive runs on Kepler over [0, t_end] for each tolerance in turn.
pub fn run_adaptive_sweep(
    method: &EmbeddedMethod,
    e: f64,
    tols: &[f64],
    t_end: f64,
    h_init: f64,
    exponent: Option<f64>,
) -> Result<Vec<AdaptiveRecord>, BenchError> {
    let init = kepler_init(e)?;
    let flows = kepler_flows(init.mu)?;
    let x0 = init.to_state();
    let mut out = Vec::with_capacity(tols.len());
    for &tol in tols {
        let mut cfg = ControllerConfig::new(tol, h_init);
        cfg.exponent = exponent;
        match integrate_adaptive(method, &flows, &x0, 0.0, t_end, &cfg, None) {
            Ok(run) => {
                let mut e1 = 0.0f64;
                for (t, x) in run.times.iter().zip(&run.states) {
                    let exact = kepler_exact(e, *t)?.to_state();
                    let d: f64 = exact
                        .iter()
                        .zip(x)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    e1 = e1.max(d);
                }
                out.push(AdaptiveRecord {
                    method: method.alias.to_string(),
                    e,
                    tol,
                    achieved_e1: Some(e1),
                    accepted: Some(run.accepted),
                    rejected: Some(run.rejected),
                    fevals: Some(run.fevals),
                    aborted: false,
                });
            }
            Err(StepperError::MaxRejects { .. }) | Err(StepperError::NonFiniteState { .. }) => {
                out.push(AdaptiveRecord {
                    method: method.alias.to_string(),
                    e,
                    tol,
                    achieved_e1: None,
                    accepted: None,
                    rejected: None,
                    fevals: None,
                    aborted: true,
                });
            }
            Err(other) => return Err(other.into()),
        }
    }
    Ok(out)
}

/// Streams per-step records as CSV rows t,x...,err,h.
pub struct CsvTrajectorySink<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> CsvTrajectorySink<W> {
    /// Writes the header for a `dim`-dimensional state immediately.
    pub fn new(writer: W, dim: usize) -> std::io::Result<Self> {
        let mut inner = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((0..dim).map(|i| format!("x{i}")));
        header.push("err".to_string());
        header.push("h".to_string());
        inner.write_record(&header).map_err(std::io::Error::other)?;
        Ok(CsvTrajectorySink { inner })
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

impl<W: Write> TrajectorySink for CsvTrajectorySink<W> {
    fn record(&mut self, t: f64, state: &[f64], err: f64, h: f64) -> std::io::Result<()> {
        let mut row = vec![fmt_float(t)];
        row.extend(state.iter().map(|&v| fmt_float(v)));
        row.push(fmt_float(err));
        row.push(fmt_float(h));
        self.inner.write_record(&row).map_err(std::io::Error::other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_has_17_significant_digits() {
        assert_eq!(fmt_float(0.2), "2.0000000000000001e-1");
        assert_eq!(fmt_float(1.0), "1.0000000000000000e0");
        let v = 9.950371902099892e-8;
        assert_eq!(fmt_float(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn geometric_range_endpoints() {
        let r = geometric_range(0.01, 0.1, 5).unwrap();
        assert_eq!(r.len(), 5);
        assert_eq!(r[0], 0.01);
        assert_eq!(r[4], 0.1);
        for w in r.windows(2) {
            assert!(w[1] > w[0]);
        }
        assert!(geometric_range(0.1, 0.01, 5).is_err());
    }

    #[test]
    fn fit_loglog_recovers_exact_power_law() {
        let xs = [0.1, 0.05, 0.025, 0.0125];
        let ys: Vec<f64> = xs.iter().map(|&h: &f64| 3.0 * h.powi(4)).collect();
        let (slope, intercept, residual) = fit_loglog(&xs, &ys);
        assert!((slope - 4.0).abs() < 1e-12);
        assert!((intercept - 3.0f64.ln()).abs() < 1e-12);
        assert!(residual < 1e-12);
    }

    #[test]
    fn scan_config_validation() {
        let mut cfg = ScanConfig {
            methods: vec!["SS5".into()],
            eccentricities: vec![0.2],
            hs: vec![0.1],
            t_end: 20.0,
            out: None,
        };
        assert!(cfg.validate().is_ok());
        cfg.hs = vec![25.0];
        assert!(cfg.validate().is_err()); // zero full steps
        cfg.hs = vec![-0.1];
        assert!(cfg.validate().is_err());
        cfg.hs = vec![0.1];
        cfg.eccentricities = vec![1.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fit_order_requires_enough_points_in_window() {
        let rec = |h: f64, e1: f64| RunRecord {
            method: "SS5".into(),
            e: 0.2,
            h,
            nsteps: Some(1),
            fevals: Some(1),
            e1_full: Some(e1),
            e1_pos: Some(e1),
            e2: Some(e1),
            e2_low: None,
            energy_drift: Some(0.0),
        };
        let records = vec![rec(0.1, 1e-4), rec(0.05, 1e-5)];
        assert!(matches!(
            fit_order(&records),
            Err(BenchError::TooFewPoints { found: 2, .. })
        ));
        let records = vec![
            rec(0.1, 1e-4),
            rec(0.05, 1e-5),
            rec(0.025, 1e-6),
            rec(0.4, 0.5),
        ];
        let fit = fit_order(&records).unwrap();
        assert_eq!(fit.points, 3); // the 0.5 error lies outside the window
        assert!((fit.slope - (10f64.ln() / 2f64.ln())).abs() < 1e-9);
    }
}
