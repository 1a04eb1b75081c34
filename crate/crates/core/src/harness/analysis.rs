//! Pass/fail checks over telemetry and sweep tables.

use crate::bias::TweakTarget;
use crate::control::{ControlAction, ControllerKind};
use crate::stimulus::Setting;

use super::output::{CheckResult, LinearFit, SweepRow, TelemetryRow};
use super::scenario::{Check, ScenarioConfig};

const EPS: f64 = 1e-9;
/// Time allowed for refractory control to bring the rate under the bound.
pub const REFRACTORY_SETTLE_S: f64 = 5.0;
/// Action budget per segment for threshold bounding.
pub const MAX_BOUNDING_ACTIONS: usize = 30;

/// Ordinary least squares fit of `y = slope * x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
        x_intercept: -intercept / slope,
        n,
    })
}

fn result(check: Check, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: check.as_str().to_string(),
        passed,
        detail,
    }
}

/// Scene-change and control-change times, plus the run end.
fn segments(cfg: &ScenarioConfig) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> = cfg.schedule.change_times().filter(|t| *t < cfg.duration_s).collect();
    if cuts.first().is_none_or(|t| *t > 0.0) {
        cuts.insert(0, 0.0);
    }
    cuts.push(cfg.duration_s);
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

fn in_segment(row: &TelemetryRow, (s, e): (f64, f64)) -> bool {
    row.sample.window_start() + EPS >= s && row.sample.t <= e + EPS
}

pub fn evaluate_run(
    check: Check,
    cfg: &ScenarioConfig,
    telemetry: &[TelemetryRow],
    actions: &[ControlAction],
) -> CheckResult {
    match check {
        Check::Bounded => check_bounded(cfg, telemetry, actions),
        Check::RefractoryLimit => check_refractory_limit(cfg, telemetry),
        Check::NoiseRegulation => check_noise_regulation(cfg, telemetry),
        Check::LinearFit | Check::BandwidthTradeoff | Check::NonIncreasing => {
            result(check, false, "only meaningful for sweeps".into())
        }
    }
}

pub fn evaluate_sweep(
    check: Check,
    cfg: &ScenarioConfig,
    param: TweakTarget,
    rows: &[SweepRow],
) -> (CheckResult, Option<LinearFit>) {
    match check {
        Check::LinearFit => check_linear_fit(cfg, param, rows),
        Check::BandwidthTradeoff => (check_bandwidth_tradeoff(rows), None),
        Check::NonIncreasing => (check_non_increasing(rows), None),
        other => (result(other, false, "only meaningful for closed-loop runs".into()), None),
    }
}

/// Every segment must enter `[R_L, R_H]` within the action budget and then
/// stay inside `[R_L / H, R_H * H]`. The trace must visit both sides.
pub fn check_bounded(cfg: &ScenarioConfig, telemetry: &[TelemetryRow], actions: &[ControlAction]) -> CheckResult {
    let c = &cfg.controller;
    let (lo, hi) = (c.r_low, c.r_high);
    let (lo_ext, hi_ext) = (lo / c.hysteresis, hi * c.hysteresis);
    let mut notes = Vec::new();
    let mut ok = true;
    let went_high = telemetry.iter().any(|r| r.sample.r_input_hz > hi);
    let went_low = telemetry.iter().any(|r| r.sample.r_input_hz < lo);
    if !(went_high && went_low) {
        ok = false;
        notes.push(format!("stimulus never drove R above R_H ({went_high}) and below R_L ({went_low})"));
    }
    for seg in segments(cfg) {
        let rows: Vec<_> = telemetry.iter().filter(|r| in_segment(r, seg)).collect();
        if rows.is_empty() {
            continue;
        }
        let Some(entry) = rows
            .iter()
            .position(|r| (lo..=hi).contains(&r.sample.r_input_hz))
        else {
            ok = false;
            notes.push(format!("[{:.1},{:.1}) never entered the band", seg.0, seg.1));
            continue;
        };
        let t_entry = rows[entry].sample.t;
        let used = actions
            .iter()
            .filter(|a| a.controller == ControllerKind::Threshold && a.t_s + EPS >= seg.0 && a.t_s <= t_entry + EPS)
            .count();
        let escaped = rows[entry..]
            .iter()
            .find(|r| !(lo_ext..=hi_ext).contains(&r.sample.r_input_hz));
        if used > MAX_BOUNDING_ACTIONS {
            ok = false;
        }
        if let Some(r) = escaped {
            ok = false;
            notes.push(format!(
                "[{:.1},{:.1}) left the extended band at t={:.1} (R={:.0})",
                seg.0, seg.1, r.sample.t, r.sample.r_input_hz
            ));
        }
        notes.push(format!(
            "[{:.1},{:.1}) entered at t={:.1} after {used} actions",
            seg.0, seg.1, t_entry
        ));
    }
    result(Check::Bounded, ok, notes.join("; "))
}

fn enable_time(cfg: &ScenarioConfig, kind: ControllerKind) -> Option<f64> {
    cfg.schedule.directives.iter().find_map(|d| {
        d.settings.contains(&Setting::Controller(kind, true))
            .then_some(d.t)
    })
}

/// With the rate above R_H when refractory control starts, the rate must
/// drop below R_H within five seconds, and the tweak must end at 0.
pub fn check_refractory_limit(cfg: &ScenarioConfig, telemetry: &[TelemetryRow]) -> CheckResult {
    let fail = |msg: String| result(Check::RefractoryLimit, false, msg);
    let Some(t_on) = enable_time(cfg, ControllerKind::Refractory) else {
        return fail("refractory controller never enabled".into());
    };
    let hi = cfg.controller.r_high;
    let after: Vec<_> = telemetry
        .iter()
        .filter(|r| r.sample.window_start() + EPS >= t_on)
        .collect();
    let Some(first) = after.first() else {
        return fail("no samples after enabling".into());
    };
    if !(first.sample.r_input_hz > hi) {
        return fail(format!(
            "rate {:.0} Hz not above R_H={hi:.0} Hz when control started",
            first.sample.r_input_hz
        ));
    }
    let Some(below) = after.iter().find(|r| r.sample.r_input_hz < hi) else {
        return fail("rate never fell below R_H".into());
    };
    let took = below.sample.t - t_on;
    let deepest = telemetry.iter().map(|r| r.tweaks.refractory).fold(0.0, f64::min);
    let last = telemetry.last().map_or(0.0, |r| r.tweaks.refractory);
    let ok = took <= REFRACTORY_SETTLE_S + EPS && deepest < 0.0 && last.abs() < EPS;
    result(
        Check::RefractoryLimit,
        ok,
        format!(
            "R {:.0} -> below R_H={hi:.0} after {took:.1} s; deepest tweak {deepest:.2}, final {last:.2}",
            first.sample.r_input_hz
        ),
    )
}

/// Light-off must push per-pixel noise above the limit, bandwidth control
/// must bring it back under before light-on, and the tweak must end within
/// one step of 0.
pub fn check_noise_regulation(cfg: &ScenarioConfig, telemetry: &[TelemetryRow]) -> CheckResult {
    let fail = |msg: String| result(Check::NoiseRegulation, false, msg);
    let mut ambient = 1.0;
    let mut dark = None;
    let mut light = None;
    let mut scene = cfg.schedule.scene_at(0.0).ambient;
    for d in &cfg.schedule.directives {
        for s in &d.settings {
            if let Setting::Ambient(a) = *s {
                ambient = a;
            }
        }
        if d.t > 0.0 && ambient < scene && dark.is_none() {
            dark = Some(d.t);
        } else if dark.is_some() && light.is_none() && ambient > scene {
            light = Some(d.t);
        }
        scene = ambient;
    }
    let (Some(t_off), Some(t_on)) = (dark, light) else {
        return fail("scenario has no light-off / light-on pair".into());
    };
    let limit = cfg.controller.r_noise_limit;
    let dark_rows: Vec<_> = telemetry.iter().filter(|r| in_segment(r, (t_off, t_on))).collect();
    let peak = dark_rows.iter().map(|r| r.sample.r_noise_per_pixel_hz).fold(0.0, f64::max);
    let lowest = dark_rows.iter().map(|r| r.tweaks.bandwidth).fold(0.0, f64::min);
    let Some(end_dark) = dark_rows.last() else {
        return fail("no samples in the dark".into());
    };
    let last = telemetry.last().map_or(0.0, |r| r.tweaks.bandwidth);
    let ok = peak > limit
        && lowest < 0.0
        && end_dark.sample.r_noise_per_pixel_hz < limit
        && last.abs() <= cfg.controller.delta_bb + EPS;
    result(
        Check::NoiseRegulation,
        ok,
        format!(
            "dark peak {peak:.3} Hz/px, end of dark {:.3} Hz/px (limit {limit}); lowest tweak {lowest:.2}, final {last:.2}",
            end_dark.sample.r_noise_per_pixel_hz
        ),
    )
}

/// Expected zero-rate sensitivity: the reciprocal of the strongest
/// log-contrast in the scene.
pub fn expected_sigma_min(cfg: &ScenarioConfig) -> Option<f64> {
    let c = cfg.schedule.scene_at(cfg.duration_s / 2.0).max_log_contrast();
    (c > 0.0).then(|| 1.0 / c)
}

/// Linear fit of input rate against sensitivity over the configured range.
pub fn sensitivity_fit(cfg: &ScenarioConfig, rows: &[SweepRow]) -> Option<LinearFit> {
    let (lo, hi) = cfg.fit_sigma.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.sensitivity >= lo - EPS && r.sensitivity <= hi + EPS)
        .map(|r| (r.sensitivity, r.r_input_hz))
        .unzip();
    linear_fit(&xs, &ys)
}

/// Relative tolerance on the fitted zero-rate sensitivity.
pub const SIGMA_MIN_TOLERANCE: f64 = 0.10;
pub const MIN_R_SQUARED: f64 = 0.98;

pub fn check_linear_fit(cfg: &ScenarioConfig, param: TweakTarget, rows: &[SweepRow]) -> (CheckResult, Option<LinearFit>) {
    if param != TweakTarget::Threshold {
        return (result(Check::LinearFit, false, "linear fit needs a threshold sweep".into()), None);
    }
    let Some(fit) = sensitivity_fit(cfg, rows) else {
        return (result(Check::LinearFit, false, "fewer than two points in the fit range".into()), None);
    };
    let Some(expected) = expected_sigma_min(cfg) else {
        return (result(Check::LinearFit, false, "scene has no contrast".into()), Some(fit));
    };
    let rel = (fit.x_intercept - expected).abs() / expected;
    let ok = fit.r_squared >= MIN_R_SQUARED && fit.slope > 0.0 && rel <= SIGMA_MIN_TOLERANCE;
    (
        result(
            Check::LinearFit,
            ok,
            format!(
                "n={} slope={:.1} Hz R2={:.4} sigma_min={:.3} (expected {expected:.3}, off by {:.1}%)",
                fit.n,
                fit.slope,
                fit.r_squared,
                fit.x_intercept,
                rel * 100.0
            ),
        ),
        Some(fit),
    )
}

/// Signal rate interpolated at `x` on a log10-bandwidth axis.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|v| *v < x).clamp(1, xs.len() - 1);
    let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
    if x1 == x0 {
        y1
    } else {
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

/// Slopes of R_S per decade of bandwidth over the first and last decade of
/// the grid.
pub fn decade_slopes(rows: &[SweepRow]) -> Option<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.bandwidth_hz.log10(), r.r_signal_hz)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let (x0, x1) = (*xs.first()?, *xs.last()?);
    if x1 - x0 < 1.0 - EPS {
        return None;
    }
    let first = interp(&xs, &ys, x0 + 1.0) - ys[0];
    let last = ys[ys.len() - 1] - interp(&xs, &ys, x1 - 1.0);
    Some((first, last))
}

/// Fraction of the first-decade slope allowed in the last decade.
pub const SATURATION_RATIO: f64 = 0.2;

pub fn check_bandwidth_tradeoff(rows: &[SweepRow]) -> CheckResult {
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| a.bandwidth_hz.total_cmp(&b.bandwidth_hz));
    if rows.len() < 3 {
        return result(Check::BandwidthTradeoff, false, "need at least three grid points".into());
    }
    let signal_monotone = rows.windows(2).all(|w| w[1].r_signal_hz >= w[0].r_signal_hz);
    let noise_strict = rows.windows(2).all(|w| w[1].r_noise_hz > w[0].r_noise_hz);
    let slopes = decade_slopes(&rows);
    let saturating = matches!(slopes, Some((f, l)) if f > 0.0 && l < SATURATION_RATIO * f);
    let rsn: Vec<f64> = rows.iter().map(|r| r.r_sn.unwrap_or(f64::NEG_INFINITY)).collect();
    let best = rsn
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i);
    let interior = best > 0 && best + 1 < rows.len() && rsn[best] > rsn[0] && rsn[best] > rsn[rsn.len() - 1];
    let ok = signal_monotone && noise_strict && saturating && interior;
    result(
        Check::BandwidthTradeoff,
        ok,
        format!(
            "R_S non-decreasing={signal_monotone}, R_N strictly increasing={noise_strict}, decade slopes={:?}, R_S-N peak at {:.1} Hz (index {best} of {})",
            slopes.map(|(f, l)| (f.round(), l.round())),
            rows[best].bandwidth_hz,
            rows.len()
        ),
    )
}

pub fn check_non_increasing(rows: &[SweepRow]) -> CheckResult {
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| a.refractory_s.total_cmp(&b.refractory_s));
    let ok = rows.windows(2).all(|w| w[1].r_input_hz <= w[0].r_input_hz);
    let trace: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.0}us:{:.0}Hz", r.refractory_s * 1e6, r.r_input_hz))
        .collect();
    result(Check::NonIncreasing, ok, trace.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 6.0).collect();
        let f = linear_fit(&xs, &ys).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12);
        assert!((f.x_intercept - 2.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0], &[1.0]).is_none());
        assert!(linear_fit(&[1.0, 1.0], &[1.0, 2.0]).is_none());
    }

    fn row(bw: f64, s: f64, n: f64) -> SweepRow {
        SweepRow {
            tweak: 0.0,
            sensitivity: 1.0,
            bandwidth_hz: bw,
            refractory_s: 0.0,
            r_input_hz: s + n,
            r_signal_hz: s,
            r_noise_hz: n,
            r_noise_per_pixel_hz: n,
            r_sn: crate::metering::compute_rsn(s, n),
        }
    }

    #[test]
    fn tradeoff_shape() {
        let rows = vec![
            row(10.0, 10.0, 1.0),
            row(30.0, 80.0, 3.0),
            row(100.0, 100.0, 10.0),
            row(300.0, 102.0, 30.0),
            row(1000.0, 103.0, 100.0),
        ];
        let r = check_bandwidth_tradeoff(&rows);
        assert!(r.passed, "{}", r.detail);
        let mut flat_noise = rows.clone();
        flat_noise[4].r_noise_hz = 30.0;
        assert!(!check_bandwidth_tradeoff(&flat_noise).passed);
    }

    #[test]
    fn decade_slopes_interpolate() {
        let rows: Vec<_> = [10.0, 100.0, 1000.0].iter().map(|&b| row(b, b.log10() * 5.0, 1.0)).collect();
        let (f, l) = decade_slopes(&rows).unwrap();
        assert!((f - 5.0).abs() < 1e-9 && (l - 5.0).abs() < 1e-9);
        assert!(decade_slopes(&rows[..1]).is_none());
    }
}
