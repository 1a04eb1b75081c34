//! Per-pixel DVS model.
//!
//! Each pixel runs log luminance through two cascaded first-order lowpass
//! stages sharing one cutoff, compares the result against a memorized
//! reference, and emits one event per threshold crossing. After every event
//! the change amplifier is held in reset for the refractory period; changes
//! during that window are discarded and the reference re-latches to the
//! filtered value at release. Background-activity noise is an independent
//! per-pixel Poisson process, and bias changes inject bursts of transient
//! events.
//!
//! Time inside one step is continuous: crossings are placed by linear
//! interpolation of the filtered signal across the step, then floored to
//! microseconds on output.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias::{CameraConstants, PixelParams, TweakSet};
use crate::error::{Error, Result};
use crate::stimulus::{Geometry, LuminanceField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Off,
    On,
}

/// Ground-truth origin of an event. Metering never looks at it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Signal,
    Noise,
    Transient,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Signal => "signal",
            Provenance::Noise => "noise",
            Provenance::Transient => "transient",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub t_us: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
    pub provenance: Provenance,
}

/// Signal-path state of one pixel. Log quantities are in e-folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelState {
    pub lp1: f64,
    pub lp2: f64,
    pub memorized_log_intensity: f64,
    pub refractory_until: f64,
    /// Reference must re-latch when the refractory window ends.
    pub relatch_pending: bool,
}

impl PixelState {
    pub fn settled(log_intensity: f64) -> Self {
        PixelState {
            lp1: log_intensity,
            lp2: log_intensity,
            memorized_log_intensity: log_intensity,
            refractory_until: f64::NEG_INFINITY,
            relatch_pending: false,
        }
    }
}

/// Background-activity noise and bias-change transient configuration.
///
/// Per-pixel rate is
/// `base * (B / B0)^alpha * (theta0 / theta)^beta * (L0 / L)^delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub base_rate_hz: f64,
    pub bandwidth_exponent: f64,
    pub threshold_exponent: f64,
    pub luminance_exponent: f64,
    pub on_fraction: f64,
    pub reference_bandwidth_hz: f64,
    pub reference_theta: f64,
    pub reference_luminance: f64,
    /// Transient events per pixel per unit |change of log parameter|.
    pub burst_kappa: f64,
    /// Decay time constant of a transient burst, seconds.
    pub burst_time_s: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::for_camera(&CameraConstants::default())
    }
}

impl NoiseModel {
    /// Defaults referenced to the camera's nominal operating point.
    pub fn for_camera(camera: &CameraConstants) -> Self {
        let nominal = camera
            .pixel_params(&TweakSet::default())
            .expect("camera constants validated");
        NoiseModel {
            base_rate_hz: 0.1,
            bandwidth_exponent: 1.0,
            threshold_exponent: 1.0,
            luminance_exponent: 1.0,
            on_fraction: 0.5,
            reference_bandwidth_hz: nominal.bandwidth_hz,
            reference_theta: nominal.theta_on,
            reference_luminance: 1.0,
            burst_kappa: 0.5,
            burst_time_s: 0.3,
        }
    }

    pub fn silent() -> Self {
        NoiseModel {
            base_rate_hz: 0.0,
            burst_kappa: 0.0,
            ..NoiseModel::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bandwidth_exponent", self.bandwidth_exponent),
            ("threshold_exponent", self.threshold_exponent),
            ("reference_bandwidth_hz", self.reference_bandwidth_hz),
            ("reference_theta", self.reference_theta),
            ("reference_luminance", self.reference_luminance),
            ("burst_time_s", self.burst_time_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("noise {name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("base_rate_hz", self.base_rate_hz),
            ("luminance_exponent", self.luminance_exponent),
            ("burst_kappa", self.burst_kappa),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("noise {name} must be >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.on_fraction) {
            return Err(Error::Config(format!(
                "noise on_fraction must be in [0, 1], got {}",
                self.on_fraction
            )));
        }
        Ok(())
    }

    /// Per-pixel rate at the reference luminance.
    pub fn global_rate(&self, bandwidth_hz: f64, theta: f64) -> f64 {
        if self.base_rate_hz == 0.0 {
            return 0.0;
        }
        let b = if bandwidth_hz.is_finite() {
            bandwidth_hz / self.reference_bandwidth_hz
        } else {
            1.0
        };
        self.base_rate_hz
            * b.powf(self.bandwidth_exponent)
            * (self.reference_theta / theta).powf(self.threshold_exponent)
    }

    /// Per-pixel rate, Hz.
    pub fn rate(&self, bandwidth_hz: f64, theta: f64, luminance: f64) -> f64 {
        self.global_rate(bandwidth_hz, theta)
            * (self.reference_luminance / luminance).powf(self.luminance_exponent)
    }
}

/// Transient burst scheduled by a bias change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstSpec {
    pub n_events: u64,
    pub start_s: f64,
    pub decay_s: f64,
    /// No burst event lands later than `start_s + horizon_s`.
    pub horizon_s: f64,
}

/// Burst horizon in units of the decay time.
pub const BURST_HORIZON_DECAYS: f64 = 5.0;

/// Size of the burst caused by moving from `old` to `new`.
///
/// The magnitude is `kappa * n_pixels * (|d ln theta| + |d ln B|)`. Refractory
/// changes do not disturb the photoreceptor or comparator operating point
/// and contribute nothing.
pub fn burst_spec(
    old: &PixelParams,
    new: &PixelParams,
    n_pixels: usize,
    noise: &NoiseModel,
    change_time: f64,
) -> BurstSpec {
    let log_change = |a: f64, b: f64| {
        if a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0 {
            (b.ln() - a.ln()).abs()
        } else {
            0.0
        }
    };
    let magnitude =
        log_change(old.theta_on, new.theta_on) + log_change(old.bandwidth_hz, new.bandwidth_hz);
    BurstSpec {
        n_events: (noise.burst_kappa * n_pixels as f64 * magnitude).round() as u64,
        start_s: change_time,
        decay_s: noise.burst_time_s,
        horizon_s: BURST_HORIZON_DECAYS * noise.burst_time_s,
    }
}

/// Draws an offset from an exponential with mean `decay`, truncated at
/// `horizon`, by inverting its CDF.
fn truncated_exp(u: f64, decay: f64, horizon: f64) -> f64 {
    let mass = 1.0 - (-horizon / decay).exp();
    (-decay * (1.0 - u * mass).ln()).min(horizon)
}

#[derive(Debug, Clone)]
struct NoiseState {
    hazard: f64,
    threshold: f64,
    rng: ChaCha8Rng,
}

impl NoiseState {
    fn new(seed: u64, index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64 + 1);
        let threshold = rng.sample(Exp1);
        NoiseState {
            hazard: 0.0,
            threshold,
            rng,
        }
    }
}

/// Cheapest rayon granularity worth splitting on.
const PARALLEL_MIN_PIXELS: usize = 2048;

/// The simulated pixel array.
#[derive(Debug, Clone)]
pub struct PixelArray {
    geometry: Geometry,
    params: PixelParams,
    noise: NoiseModel,
    state: Vec<PixelState>,
    noise_state: Vec<NoiseState>,
    burst_rng: ChaCha8Rng,
    pending_bursts: VecDeque<(f64, Event)>,
    now_us: u64,
    initialized: bool,
}

struct StepCtx {
    params: PixelParams,
    alpha: f64,
    noise: NoiseModel,
    noise_global: f64,
    log_l0: f64,
    t0: f64,
    t1: f64,
    t0_us: u64,
    t1_us: u64,
}

impl StepCtx {
    fn to_us(&self, t: f64) -> u64 {
        let us = (t * 1e6 + 1e-6).floor();
        (us.max(self.t0_us as f64) as u64).min(self.t1_us - 1)
    }
}

impl PixelArray {
    pub fn new(geometry: Geometry, params: PixelParams, noise: NoiseModel, seed: u64) -> Result<Self> {
        params.validate()?;
        noise.validate()?;
        let n = geometry.n_pixels();
        let mut burst_rng = ChaCha8Rng::seed_from_u64(seed);
        burst_rng.set_stream(0);
        Ok(PixelArray {
            geometry,
            params,
            noise,
            state: vec![PixelState::settled(0.0); n],
            noise_state: (0..n).map(|i| NoiseState::new(seed, i)).collect(),
            burst_rng,
            pending_bursts: VecDeque::new(),
            now_us: 0,
            initialized: false,
        })
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn params(&self) -> &PixelParams {
        &self.params
    }

    pub fn noise_model(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn states(&self) -> &[PixelState] {
        &self.state
    }

    /// Current simulation time, seconds.
    pub fn now(&self) -> f64 {
        self.now_us as f64 * 1e-6
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    /// Settles every pixel onto `log_field` (filters and references equal to
    /// the input), as if the scene had been static forever.
    pub fn settle(&mut self, log_field: &[f64]) -> Result<()> {
        self.check_field(log_field)?;
        for (s, &v) in self.state.iter_mut().zip(log_field) {
            *s = PixelState::settled(v);
        }
        self.initialized = true;
        Ok(())
    }

    fn check_field(&self, log_field: &[f64]) -> Result<()> {
        if log_field.len() != self.geometry.n_pixels() {
            return Err(Error::Config(format!(
                "field has {} samples, array has {} pixels",
                log_field.len(),
                self.geometry.n_pixels()
            )));
        }
        Ok(())
    }

    /// Largest step that resolves the photoreceptor filter at `bandwidth_hz`.
    pub fn max_step_s(bandwidth_hz: f64) -> f64 {
        if bandwidth_hz.is_finite() {
            1.0 / (4.0 * bandwidth_hz)
        } else {
            f64::INFINITY
        }
    }

    /// Changes the operating point at `change_time` and schedules the
    /// resulting transient burst.
    pub fn apply_biases(&mut self, params: PixelParams, change_time: f64) -> Result<BurstSpec> {
        params.validate()?;
        let spec = burst_spec(
            &self.params,
            &params,
            self.geometry.n_pixels(),
            &self.noise,
            change_time,
        );
        self.params = params;
        self.schedule_burst(&spec);
        Ok(spec)
    }

    fn schedule_burst(&mut self, spec: &BurstSpec) {
        if spec.n_events == 0 {
            return;
        }
        let w = self.geometry.width as u64;
        let n = self.geometry.n_pixels() as u64;
        let mut fresh: Vec<(f64, Event)> = (0..spec.n_events)
            .map(|_| {
                let idx = self.burst_rng.random_range(0..n);
                let on = self.burst_rng.random::<bool>();
                let u: f64 = self.burst_rng.random();
                let t = spec.start_s + truncated_exp(u, spec.decay_s, spec.horizon_s);
                (
                    t,
                    Event {
                        t_us: 0,
                        x: (idx % w) as u16,
                        y: (idx / w) as u16,
                        polarity: if on { Polarity::On } else { Polarity::Off },
                        provenance: Provenance::Transient,
                    },
                )
            })
            .collect();
        fresh.extend(self.pending_bursts.drain(..));
        fresh.sort_by(|a, b| a.0.total_cmp(&b.0));
        self.pending_bursts = fresh.into();
    }

    /// Number of transient events scheduled but not yet emitted.
    pub fn pending_transients(&self) -> usize {
        self.pending_bursts.len()
    }

    /// Advances by `dt` seconds (rounded to whole microseconds) with the
    /// given linear luminance field.
    pub fn step(&mut self, field: &LuminanceField, dt: f64) -> Result<Vec<Event>> {
        if field.geometry != self.geometry {
            return Err(Error::Config(format!(
                "field geometry {:?} does not match array {:?}",
                field.geometry, self.geometry
            )));
        }
        if let Some(bad) = field.samples.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Numeric {
                t_s: self.now(),
                msg: format!("non-positive luminance {bad}"),
            });
        }
        self.step_log(&field.log_samples(), dt)
    }

    /// Advances by `dt` seconds using a natural-log luminance field. The
    /// field is the input value reached at the end of the step.
    pub fn step_log(&mut self, log_field: &[f64], dt: f64) -> Result<Vec<Event>> {
        self.check_field(log_field)?;
        let dt_us = (dt * 1e6).round();
        if !(dt_us >= 1.0) {
            return Err(Error::Config(format!("step {dt} s is shorter than 1 us")));
        }
        let dt_us = dt_us as u64;
        let dt = dt_us as f64 * 1e-6;
        let max_dt = Self::max_step_s(self.params.bandwidth_hz);
        if dt > max_dt * (1.0 + 1e-9) {
            return Err(Error::Config(format!(
                "step {dt} s exceeds 1/(4 B_pr) = {max_dt} s at bandwidth {} Hz",
                self.params.bandwidth_hz
            )));
        }
        if !self.initialized {
            self.settle(log_field)?;
        }
        let t0_us = self.now_us;
        let t1_us = t0_us + dt_us;
        let alpha = if self.params.bandwidth_hz.is_finite() {
            1.0 - (-std::f64::consts::TAU * self.params.bandwidth_hz * dt).exp()
        } else {
            1.0
        };
        let ctx = StepCtx {
            params: self.params,
            alpha,
            noise: self.noise,
            noise_global: self.noise.global_rate(self.params.bandwidth_hz, self.params.theta_on),
            log_l0: self.noise.reference_luminance.ln(),
            t0: t0_us as f64 * 1e-6,
            t1: t1_us as f64 * 1e-6,
            t0_us,
            t1_us,
        };
        let w = self.geometry.width as usize;
        let rows: Vec<Result<Vec<Event>>> = if self.state.len() >= PARALLEL_MIN_PIXELS {
            self.state
                .par_chunks_mut(w)
                .zip(self.noise_state.par_chunks_mut(w))
                .zip(log_field.par_chunks(w))
                .enumerate()
                .map(|(y, ((st, ns), row))| step_row(&ctx, y as u16, st, ns, row))
                .collect()
        } else {
            self.state
                .chunks_mut(w)
                .zip(self.noise_state.chunks_mut(w))
                .zip(log_field.chunks(w))
                .enumerate()
                .map(|(y, ((st, ns), row))| step_row(&ctx, y as u16, st, ns, row))
                .collect()
        };
        let mut events = Vec::new();
        for row in rows {
            events.extend(row?);
        }
        while let Some(&(t, ev)) = self.pending_bursts.front() {
            if t >= ctx.t1 {
                break;
            }
            self.pending_bursts.pop_front();
            events.push(Event {
                t_us: ctx.to_us(t),
                ..ev
            });
        }
        events.sort_by_key(|e| e.t_us);
        self.now_us = t1_us;
        Ok(events)
    }
}

fn step_row(
    ctx: &StepCtx,
    y: u16,
    states: &mut [PixelState],
    noise: &mut [NoiseState],
    log_row: &[f64],
) -> Result<Vec<Event>> {
    let mut out = Vec::new();
    let mut memo = (f64::NAN, 0.0);
    for (x, ((st, ns), &input)) in states.iter_mut().zip(noise.iter_mut()).zip(log_row).enumerate() {
        if !input.is_finite() {
            return Err(Error::Numeric {
                t_s: ctx.t0,
                msg: format!("non-finite log luminance at ({x}, {y})"),
            });
        }
        let x = x as u16;
        update_signal(st, input, ctx, |t, polarity| {
            out.push(Event {
                t_us: ctx.to_us(t),
                x,
                y,
                polarity,
                provenance: Provenance::Signal,
            })
        });
        if ctx.noise_global > 0.0 {
            if memo.0 != input {
                let factor = if ctx.noise.luminance_exponent == 0.0 {
                    1.0
                } else {
                    (-ctx.noise.luminance_exponent * (input - ctx.log_l0)).exp()
                };
                memo = (input, ctx.noise_global * factor);
            }
            update_noise(ns, memo.1, ctx, |t, polarity| {
                out.push(Event {
                    t_us: ctx.to_us(t),
                    x,
                    y,
                    polarity,
                    provenance: Provenance::Noise,
                })
            });
        }
    }
    Ok(out)
}

fn update_signal(st: &mut PixelState, input: f64, ctx: &StepCtx, mut emit: impl FnMut(f64, Polarity)) {
    let p = &ctx.params;
    let a = st.lp2;
    st.lp1 += ctx.alpha * (input - st.lp1);
    st.lp2 += ctx.alpha * (st.lp1 - st.lp2);
    let b = st.lp2;
    let (t0, t1) = (ctx.t0, ctx.t1);
    let lerp = |t: f64| a + (b - a) * ((t - t0) / (t1 - t0));

    let (mut tcur, mut vcur) = (t0, a);
    if st.relatch_pending {
        if st.refractory_until >= t1 {
            return;
        }
        tcur = st.refractory_until.max(t0);
        vcur = lerp(tcur);
        st.memorized_log_intensity = vcur;
        st.relatch_pending = false;
    }
    loop {
        let up = st.memorized_log_intensity + p.theta_on;
        let down = st.memorized_log_intensity + p.theta_off;
        let (level, polarity, immediate) = if vcur >= up {
            (up, Polarity::On, true)
        } else if vcur <= down {
            (down, Polarity::Off, true)
        } else if b >= up && b > vcur {
            (up, Polarity::On, false)
        } else if b <= down && b < vcur {
            (down, Polarity::Off, false)
        } else {
            break;
        };
        let tc = if immediate {
            tcur
        } else {
            tcur + (level - vcur) / (b - vcur) * (t1 - tcur)
        };
        emit(tc, polarity);
        st.memorized_log_intensity = level;
        if p.refractory_s > 0.0 {
            st.refractory_until = tc + p.refractory_s;
            if st.refractory_until >= t1 {
                st.relatch_pending = true;
                break;
            }
            tcur = st.refractory_until;
            vcur = lerp(tcur);
            st.memorized_log_intensity = vcur;
        } else {
            tcur = tc;
            if !immediate {
                vcur = level;
            }
        }
    }
}

fn update_noise(ns: &mut NoiseState, rate: f64, ctx: &StepCtx, mut emit: impl FnMut(f64, Polarity)) {
    let mut t = ctx.t0;
    loop {
        let need = ns.threshold - ns.hazard;
        let avail = rate * (ctx.t1 - t);
        if avail < need {
            ns.hazard += avail;
            return;
        }
        t += need / rate;
        let on = ns.rng.random::<f64>() < ctx.noise.on_fraction;
        emit(t, if on { Polarity::On } else { Polarity::Off });
        ns.hazard = 0.0;
        ns.threshold = ns.rng.sample(Exp1);
    }
}

/// One bin of an inter-event-interval density: `mass` spread uniformly over
/// `[lo, hi]` seconds (`lo == hi` is a point mass).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalBin {
    pub lo: f64,
    pub hi: f64,
    pub mass: f64,
}

/// Array event rate under a refractory period for a given distribution of
/// per-pixel inter-event intervals: `n * integral f(T) / (T + refr) dT`.
/// Each bin is integrated exactly under its uniform density.
pub fn rate_oracle_eq8(histogram: &[IntervalBin], delta_refr: f64, n_pixels: usize) -> Result<f64> {
    if !(delta_refr >= 0.0) {
        return Err(Error::Config(format!("refractory period must be >= 0, got {delta_refr}")));
    }
    let mass: f64 = histogram.iter().map(|b| b.mass).sum();
    if (mass - 1.0).abs() > 1e-9 || histogram.iter().any(|b| !(b.mass >= 0.0)) {
        return Err(Error::Histogram { mass });
    }
    let mut acc = 0.0;
    for b in histogram {
        if !(b.lo > 0.0) || !(b.hi >= b.lo) {
            return Err(Error::Config(format!(
                "interval bin [{}, {}] must satisfy 0 < lo <= hi",
                b.lo, b.hi
            )));
        }
        let term = if b.hi == b.lo {
            1.0 / (b.lo + delta_refr)
        } else {
            ((b.hi + delta_refr) / (b.lo + delta_refr)).ln() / (b.hi - b.lo)
        };
        acc += b.mass * term;
    }
    Ok(n_pixels as f64 * acc)
}
