//! Telemetry, action and report files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bias::TweakSet;
use crate::control::ControlAction;
use crate::error::{Error, Result};
use crate::metering::RateSample;

pub const TELEMETRY_HEADER: &str = "t_s,r_input_hz,r_signal_hz,r_noise_hz,r_noise_per_pixel_hz,r_sn,thr_tweak,bw_tweak,refr_tweak,controller_states";
pub const ACTIONS_HEADER: &str = "t_s,target,delta,resulting_tweak,trigger_rate";

/// One measurement window plus the tweaks in force after its control step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRow {
    pub sample: RateSample,
    pub tweaks: TweakSet,
    pub controller_states: String,
}

/// Confusion counts of the denoiser against event provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DenoiseQuality {
    pub signal_total: u64,
    pub signal_kept: u64,
    pub noise_total: u64,
    pub noise_rejected: u64,
    pub transient_total: u64,
}

impl DenoiseQuality {
    /// Fraction of true signal events classified as signal.
    pub fn signal_recall(&self) -> Option<f64> {
        (self.signal_total > 0).then(|| self.signal_kept as f64 / self.signal_total as f64)
    }

    /// Fraction of true noise events classified as noise.
    pub fn noise_rejection(&self) -> Option<f64> {
        (self.noise_total > 0).then(|| self.noise_rejected as f64 / self.noise_total as f64)
    }

    pub fn merge(&mut self, other: &DenoiseQuality) {
        self.signal_total += other.signal_total;
        self.signal_kept += other.signal_kept;
        self.noise_total += other.noise_total;
        self.noise_rejected += other.noise_rejected;
        self.transient_total += other.transient_total;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Where the fitted line crosses zero rate.
    pub x_intercept: f64,
    pub n: usize,
}

/// Steady-state rates at one grid point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tweak: f64,
    pub sensitivity: f64,
    pub bandwidth_hz: f64,
    pub refractory_s: f64,
    pub r_input_hz: f64,
    pub r_signal_hz: f64,
    pub r_noise_hz: f64,
    pub r_noise_per_pixel_hz: f64,
    pub r_sn: Option<f64>,
}

pub const SWEEP_HEADER: &str = "tweak,sensitivity,bandwidth_hz,refractory_s,r_input_hz,r_signal_hz,r_noise_hz,r_noise_per_pixel_hz,r_sn";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub mode: String,
    pub seed: u64,
    pub simulated_s: f64,
    pub wall_s: f64,
    pub step_us: u64,
    pub n_events: u64,
    pub n_actions: usize,
    pub warnings: Vec<String>,
    pub denoise: DenoiseQuality,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_param: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub sweep: Vec<SweepRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<LinearFit>,
    pub telemetry: Vec<TelemetryRow>,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn telemetry_line(row: &TelemetryRow) -> String {
    let s = &row.sample;
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        fmt_f(s.t),
        fmt_f(s.r_input_hz),
        fmt_f(s.r_signal_hz),
        fmt_f(s.r_noise_hz),
        fmt_f(s.r_noise_per_pixel_hz),
        s.r_sn.map(fmt_f).unwrap_or_default(),
        fmt_f(row.tweaks.threshold),
        fmt_f(row.tweaks.bandwidth),
        fmt_f(row.tweaks.refractory),
        row.controller_states
    )
}

pub fn write_telemetry(path: &Path, rows: &[TelemetryRow]) -> Result<()> {
    let mut w = create(path)?;
    let mut body = String::with_capacity(64 * (rows.len() + 1));
    body.push_str(TELEMETRY_HEADER);
    body.push('\n');
    for r in rows {
        body.push_str(&telemetry_line(r));
        body.push('\n');
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_actions(path: &Path, actions: &[ControlAction]) -> Result<()> {
    let mut w = create(path)?;
    let mut body = String::from(ACTIONS_HEADER);
    body.push('\n');
    for a in actions {
        body.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f(a.t_s),
            a.target.as_str(),
            fmt_f(a.delta),
            fmt_f(a.resulting_tweak),
            fmt_f(a.trigger_rate)
        ));
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = create(path)?;
    let mut body = String::from(SWEEP_HEADER);
    body.push('\n');
    for r in rows {
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            fmt_f(r.tweak),
            fmt_f(r.sensitivity),
            fmt_f(r.bandwidth_hz),
            fmt_f(r.refractory_s),
            fmt_f(r.r_input_hz),
            fmt_f(r.r_signal_hz),
            fmt_f(r.r_noise_hz),
            fmt_f(r.r_noise_per_pixel_hz),
            r.r_sn.map(fmt_f).unwrap_or_default()
        ));
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_report(path: &Path, report: &ExperimentReport) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, report)?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}
