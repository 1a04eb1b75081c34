//! Closed-loop runs and open-loop sweeps.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::bias::{TweakSet, TweakTarget};
use crate::control::{ControlAction, Supervisor};
use crate::error::{Error, Result};
use crate::events::{EventFormat, EventWriter};
use crate::metering::{compute_rsn, Class, Denoiser, RateMeter};
use crate::pixel::{PixelArray, Provenance};
use crate::stimulus::{Setting, Stimulus};

use super::analysis;
use super::output::{
    write_actions, write_report, write_sweep, write_telemetry, DenoiseQuality, ExperimentReport,
    SweepRow, TelemetryRow,
};
use super::scenario::ScenarioConfig;

/// Largest dot displacement per step, pixels.
const MAX_STEP_PX: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Overrides the scenario's seed.
    pub seed: Option<u64>,
    /// Where to write output files; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    pub events: EventFormat,
    /// Adds the provenance column to event files.
    pub ground_truth: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            seed: None,
            out_dir: None,
            events: EventFormat::Csv,
            ground_truth: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: ExperimentReport,
    pub actions: Vec<ControlAction>,
}

struct LoopResult {
    telemetry: Vec<TelemetryRow>,
    actions: Vec<ControlAction>,
    warnings: Vec<String>,
    quality: DenoiseQuality,
    n_events: u64,
    step_us: u64,
}

fn to_us(t: f64) -> u64 {
    (t * 1e6).round() as u64
}

/// Highest bandwidth the run can reach: the nominal point, manual bandwidth
/// tweaks and any extra candidates. The noise controller only narrows the
/// bandwidth or returns it to nominal.
fn max_bandwidth_hz(cfg: &ScenarioConfig, extra: &[f64]) -> Result<f64> {
    let manual = cfg.schedule.directives.iter().flat_map(|d| &d.settings).filter_map(|s| match s {
        Setting::Tweak(TweakTarget::Bandwidth, v) => Some(*v),
        _ => None,
    });
    let mut best: f64 = 0.0;
    for v in std::iter::once(0.0).chain(manual).chain(extra.iter().copied()) {
        let tweaks = TweakSet {
            bandwidth: v.clamp(-1.0, 1.0),
            ..TweakSet::default()
        };
        best = best.max(cfg.camera.pixel_params(&tweaks)?.bandwidth_hz);
    }
    Ok(best)
}

/// Simulation step in microseconds: the largest divisor of the window that
/// resolves the photoreceptor filter at `bandwidth_hz`, gives at least ten
/// steps per window and moves dots by at most half a pixel.
pub fn choose_step_us(cfg: &ScenarioConfig, stimulus: &Stimulus, bandwidth_hz: f64) -> u64 {
    let window_us = cfg.window_us();
    let mut limit_s = PixelArray::max_step_s(bandwidth_hz).min(cfg.window_s / 10.0);
    let speed = stimulus.max_dot_speed_px();
    if speed > 0.0 {
        limit_s = limit_s.min(MAX_STEP_PX / speed);
    }
    let mut limit_us = ((limit_s * 1e6).floor() as u64).max(1);
    if let Some(cap) = cfg.max_step_us {
        limit_us = limit_us.min(cap);
    }
    (1..=limit_us.min(window_us)).rev().find(|d| window_us.is_multiple_of(*d)).unwrap_or(1)
}

/// Runs one simulation. `extra_bandwidth_tweaks` widens the bandwidth range
/// used to pick the step, so that every point of a sweep shares one step.
fn simulate(
    cfg: &ScenarioConfig,
    sweep: Option<(TweakTarget, f64)>,
    extra_bandwidth_tweaks: &[f64],
    writer: &mut EventWriter,
) -> Result<LoopResult> {
    let geometry = cfg.geometry;
    let n = geometry.n_pixels();
    let stimulus = Stimulus::new(&cfg.schedule, geometry, cfg.layout)?;
    let step_us = choose_step_us(cfg, &stimulus, max_bandwidth_hz(cfg, extra_bandwidth_tweaks)?);
    let end_us = cfg.duration_us();
    let window_us = cfg.window_us();
    let closed_loop = sweep.is_none();

    let mut tweaks = TweakSet::default();
    let mut supervisor = Supervisor::new(cfg.controller)?;
    let mut warnings = Vec::new();
    let directives = &cfg.schedule.directives;
    let mut next = 0;

    let enable = |sup: &mut Supervisor, kind, on, warnings: &mut Vec<String>| {
        if let Some(w) = sup.set_enabled(kind, on) {
            log::warn!("{w}");
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
    };

    while next < directives.len() && to_us(directives[next].t) == 0 {
        for s in &directives[next].settings {
            match *s {
                Setting::Controller(kind, on) if closed_loop => {
                    enable(&mut supervisor, kind, on, &mut warnings)
                }
                Setting::Tweak(target, v) if sweep.is_none_or(|(t, _)| t != target) => {
                    tweaks.set(target, v);
                }
                _ => {}
            }
        }
        next += 1;
    }

    let mut pixels = PixelArray::new(geometry, cfg.camera.pixel_params(&tweaks)?, cfg.noise, cfg.seed)?;
    let mut log_field = vec![0.0; n];
    stimulus.render_log_into(0.0, &mut log_field);
    pixels.settle(&log_field)?;
    if let Some((target, v)) = sweep {
        tweaks.set(target, v);
        pixels.apply_biases(cfg.camera.pixel_params(&tweaks)?, 0.0)?;
    }

    let mut denoiser = Denoiser::new(geometry, cfg.correlation_s)?;
    let mut meter = RateMeter::new(n, 0);
    let mut quality = DenoiseQuality::default();
    let mut telemetry = Vec::new();
    let mut actions = Vec::new();
    let mut n_events = 0u64;
    let mut t_us = 0u64;
    let mut window_end = window_us.min(end_us);

    while t_us < end_us {
        let now = t_us as f64 * 1e-6;
        while next < directives.len() && to_us(directives[next].t) <= t_us {
            let mut retuned = false;
            for s in &directives[next].settings {
                match *s {
                    Setting::Controller(kind, on) if closed_loop => {
                        enable(&mut supervisor, kind, on, &mut warnings)
                    }
                    Setting::Tweak(target, v) if sweep.is_none_or(|(t, _)| t != target) => {
                        tweaks.set(target, v);
                        retuned = true;
                    }
                    _ => {}
                }
            }
            if retuned {
                pixels.apply_biases(cfg.camera.pixel_params(&tweaks)?, now)?;
                supervisor.blank_until(now + cfg.controller.t_ignore);
            }
            next += 1;
        }
        let next_directive = directives.get(next).map_or(u64::MAX, |d| to_us(d.t));
        let t_next = (t_us + step_us).min(window_end).min(next_directive).min(end_us);
        stimulus.render_log_into(t_next as f64 * 1e-6, &mut log_field);
        let events = pixels.step_log(&log_field, (t_next - t_us) as f64 * 1e-6)?;
        for e in &events {
            let class = denoiser.classify(e)?;
            meter.record(class);
            match e.provenance {
                Provenance::Signal => {
                    quality.signal_total += 1;
                    quality.signal_kept += (class == Class::Signal) as u64;
                }
                Provenance::Noise => {
                    quality.noise_total += 1;
                    quality.noise_rejected += (class == Class::Noise) as u64;
                }
                Provenance::Transient => quality.transient_total += 1,
            }
        }
        writer.write(&events)?;
        n_events += events.len() as u64;
        t_us = t_next;

        if t_us == window_end {
            let now = t_us as f64 * 1e-6;
            let sample = meter.close(t_us);
            if !sample.r_input_hz.is_finite() {
                return Err(Error::Numeric {
                    t_s: now,
                    msg: "non-finite event rate".into(),
                });
            }
            if closed_loop {
                let acted = supervisor.step(&sample, &tweaks, now);
                if !acted.is_empty() {
                    for a in &acted {
                        log::debug!("t={now:.3} {} -> {}", a.target, a.resulting_tweak);
                        tweaks.set(a.target, a.resulting_tweak);
                    }
                    pixels.apply_biases(cfg.camera.pixel_params(&tweaks)?, now)?;
                    actions.extend(acted);
                }
            }
            telemetry.push(TelemetryRow {
                sample,
                tweaks,
                controller_states: supervisor.describe(),
            });
            window_end = (window_end + window_us).min(end_us);
        }
    }

    Ok(LoopResult {
        telemetry,
        actions,
        warnings,
        quality,
        n_events,
        step_us,
    })
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn with_seed(cfg: &ScenarioConfig, seed: Option<u64>) -> ScenarioConfig {
    let mut cfg = cfg.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg
}

/// Runs the scenario closed loop and evaluates its checks.
pub fn run(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let cfg = with_seed(cfg, opts.seed);
    let started = Instant::now();
    let mut writer = match (&opts.out_dir, opts.events.file_name()) {
        (Some(dir), Some(file)) => {
            prepare_out(dir)?;
            EventWriter::create(&dir.join(file), opts.events, opts.ground_truth)?
        }
        (Some(dir), None) => {
            prepare_out(dir)?;
            EventWriter::discard()
        }
        _ => EventWriter::discard(),
    };
    let result = simulate(&cfg, None, &[], &mut writer)?;
    writer.finish()?;

    let checks: Vec<_> = cfg
        .checks
        .iter()
        .map(|c| analysis::evaluate_run(*c, &cfg, &result.telemetry, &result.actions))
        .collect();
    let report = ExperimentReport {
        scenario: cfg.name.clone(),
        mode: "run".into(),
        seed: cfg.seed,
        simulated_s: cfg.duration_s,
        wall_s: started.elapsed().as_secs_f64(),
        step_us: result.step_us,
        n_events: result.n_events,
        n_actions: result.actions.len(),
        warnings: result.warnings,
        denoise: result.quality,
        sweep_param: None,
        sweep: Vec::new(),
        fit: None,
        passed: checks.iter().all(|c| c.passed),
        checks,
        telemetry: result.telemetry,
    };
    if let Some(dir) = &opts.out_dir {
        write_telemetry(&dir.join("telemetry.csv"), &report.telemetry)?;
        write_actions(&dir.join("actions.csv"), &result.actions)?;
        write_report(&dir.join("report.json"), &report)?;
    }
    Ok(RunOutcome {
        report,
        actions: result.actions,
    })
}

/// Steady-state rates of one sweep run: windows starting before
/// `t_ignore` are dropped, the rest are pooled.
fn steady_state(cfg: &ScenarioConfig, tweaks: &TweakSet, rows: &[TelemetryRow]) -> Result<SweepRow> {
    let t_ignore = cfg.controller.t_ignore;
    let kept: Vec<_> = rows
        .iter()
        .filter(|r| r.sample.window_start() + 1e-9 >= t_ignore)
        .collect();
    let span: f64 = kept.iter().map(|r| r.sample.window_s).sum();
    let total = |f: fn(&TelemetryRow) -> u64| kept.iter().map(|r| f(r)).sum::<u64>() as f64;
    let rate = |count: f64| if span > 0.0 { count / span } else { 0.0 };
    let r_input = rate(total(|r| r.sample.n_input));
    let r_signal = rate(total(|r| r.sample.n_signal));
    let r_noise = rate(total(|r| r.sample.n_noise));
    let p = cfg.camera.pixel_params(tweaks)?;
    Ok(SweepRow {
        tweak: 0.0,
        sensitivity: p.sensitivity,
        bandwidth_hz: p.bandwidth_hz,
        refractory_s: p.refractory_s,
        r_input_hz: r_input,
        r_signal_hz: r_signal,
        r_noise_hz: r_noise,
        r_noise_per_pixel_hz: r_noise / cfg.geometry.n_pixels() as f64,
        r_sn: compute_rsn(r_signal, r_noise),
    })
}

/// Open-loop sweep of one tweak. Grid points run in parallel, each on a
/// fresh array with the same seed; controllers stay off.
pub fn sweep(cfg: &ScenarioConfig, param: TweakTarget, grid: &[f64], opts: &RunOptions) -> Result<RunOutcome> {
    let cfg = with_seed(cfg, opts.seed);
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if let Some(v) = grid.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
        return Err(Error::Range {
            what: "sweep grid value",
            value: *v,
            lo: -1.0,
            hi: 1.0,
        });
    }
    let started = Instant::now();
    let bandwidths: &[f64] = if param == TweakTarget::Bandwidth { grid } else { &[] };
    let points: Vec<(SweepRow, DenoiseQuality, u64, u64)> = grid
        .par_iter()
        .map(|&v| {
            let mut writer = EventWriter::discard();
            let result = simulate(&cfg, Some((param, v)), bandwidths, &mut writer)?;
            let tweaks = result.telemetry.last().map(|r| r.tweaks).unwrap_or_else(|| {
                let mut t = TweakSet::default();
                t.set(param, v);
                t
            });
            let mut row = steady_state(&cfg, &tweaks, &result.telemetry)?;
            row.tweak = v;
            Ok((row, result.quality, result.n_events, result.step_us))
        })
        .collect::<Result<_>>()?;

    let mut quality = DenoiseQuality::default();
    let mut n_events = 0;
    let mut step_us = u64::MAX;
    let mut rows = Vec::with_capacity(points.len());
    for (row, q, n, s) in points {
        quality.merge(&q);
        n_events += n;
        step_us = step_us.min(s);
        rows.push(row);
    }
    let mut checks = Vec::new();
    let mut fit = None;
    for c in &cfg.checks {
        let (result, f) = analysis::evaluate_sweep(*c, &cfg, param, &rows);
        fit = fit.or(f);
        checks.push(result);
    }
    if fit.is_none() && param == TweakTarget::Threshold {
        fit = analysis::sensitivity_fit(&cfg, &rows);
    }
    let report = ExperimentReport {
        scenario: cfg.name.clone(),
        mode: "sweep".into(),
        seed: cfg.seed,
        simulated_s: cfg.duration_s * grid.len() as f64,
        wall_s: started.elapsed().as_secs_f64(),
        step_us,
        n_events,
        n_actions: 0,
        warnings: Vec::new(),
        denoise: quality,
        sweep_param: Some(param.as_str().to_string()),
        sweep: rows,
        fit,
        telemetry: Vec::new(),
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    if let Some(dir) = &opts.out_dir {
        prepare_out(dir)?;
        write_sweep(&dir.join("sweep.csv"), &report.sweep)?;
        write_report(&dir.join("report.json"), &report)?;
    }
    Ok(RunOutcome {
        report,
        actions: Vec::new(),
    })
}

/// Sweep using the scenario's own `sweep.param` and `sweep.grid`.
pub fn sweep_default(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let param = cfg
        .sweep_param
        .ok_or_else(|| Error::Config(format!("scenario `{}` has no sweep.param", cfg.name)))?;
    sweep(cfg, param, &cfg.sweep_grid, opts)
}
