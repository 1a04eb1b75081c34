//! Fixed-step hysteresis controllers and the supervisor that paces them.
//!
//! Each controller watches one rate and moves one tweak by a constant step.
//! Entry into a driving mode happens on a strict crossing of the bound; exit
//! happens on a strict crossing of the hysteresis-scaled bound.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bias::{TweakSet, TweakTarget};
use crate::error::{Error, Result};
use crate::metering::RateSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Threshold,
    Refractory,
    Noise,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [
        ControllerKind::Threshold,
        ControllerKind::Refractory,
        ControllerKind::Noise,
    ];

    pub fn target(self) -> TweakTarget {
        match self {
            ControllerKind::Threshold => TweakTarget::Threshold,
            ControllerKind::Refractory => TweakTarget::Refractory,
            ControllerKind::Noise => TweakTarget::Bandwidth,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            ControllerKind::Threshold => "thr",
            ControllerKind::Refractory => "refr",
            ControllerKind::Noise => "bw",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControllerKind::Threshold => "threshold",
            ControllerKind::Refractory => "refractory",
            ControllerKind::Noise => "noise",
        })
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" | "thr" => Ok(ControllerKind::Threshold),
            "refractory" | "refr" => Ok(ControllerKind::Refractory),
            "noise" | "bandwidth" | "bw" => Ok(ControllerKind::Noise),
            other => Err(Error::Config(format!("unknown controller `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub delta_bb: f64,
    pub hysteresis: f64,
    pub t_ignore: f64,
    pub t_bb: f64,
    /// Upper event-rate bound, Hz.
    pub r_high: f64,
    /// Lower event-rate bound, Hz.
    pub r_low: f64,
    /// Noise limit, Hz per pixel.
    pub r_noise_limit: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            delta_bb: 0.1,
            hysteresis: 1.5,
            t_ignore: 1.0,
            t_bb: 2.0,
            r_high: 300e3,
            r_low: 100e3,
            r_noise_limit: 0.5,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.r_low > 0.0) || !(self.r_high > self.r_low) || !self.r_high.is_finite() {
            return bad(format!(
                "need r_high > r_low > 0, got r_high={} r_low={}",
                self.r_high, self.r_low
            ));
        }
        if !(self.hysteresis > 1.0) || !self.hysteresis.is_finite() {
            return bad(format!("hysteresis must exceed 1, got {}", self.hysteresis));
        }
        if !(self.delta_bb > 0.0) || self.delta_bb > 2.0 {
            return bad(format!("delta_bb must be in (0, 2], got {}", self.delta_bb));
        }
        if !(self.t_bb > 0.0) || !self.t_bb.is_finite() {
            return bad(format!("t_bb must be positive, got {}", self.t_bb));
        }
        if !(self.t_ignore >= 0.0) || !self.t_ignore.is_finite() {
            return bad(format!("t_ignore must be non-negative, got {}", self.t_ignore));
        }
        if !(self.r_noise_limit > 0.0) || !self.r_noise_limit.is_finite() {
            return bad(format!("r_noise_limit must be positive, got {}", self.r_noise_limit));
        }
        Ok(())
    }

    /// Copy with both event-rate bounds multiplied by `factor`.
    pub fn with_rate_scale(mut self, factor: f64) -> Self {
        self.r_high *= factor;
        self.r_low *= factor;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    #[default]
    Idle,
    /// The controlled physical quantity is being increased.
    DrivingUp,
    /// The controlled physical quantity is being decreased.
    DrivingDown,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Idle => "IDLE",
            Mode::DrivingUp => "DRIVING_UP",
            Mode::DrivingDown => "DRIVING_DOWN",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub mode: Mode,
    pub last_action_t: f64,
    pub blanked_until: f64,
}

impl Default for ControllerState {
    fn default() -> Self {
        ControllerState {
            mode: Mode::Idle,
            last_action_t: f64::NEG_INFINITY,
            blanked_until: f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub t_s: f64,
    pub controller: ControllerKind,
    pub target: TweakTarget,
    pub delta: f64,
    pub resulting_tweak: f64,
    /// The rate that triggered the action (R_I, or R_N per pixel for noise).
    pub trigger_rate: f64,
}

// float slack for pacing comparisons on accumulated window times
const TIME_EPS: f64 = 1e-9;

fn snap(x: f64) -> f64 {
    let s = (x * 1e9).round() / 1e9;
    if s == 0.0 {
        0.0
    } else {
        s
    }
}

fn consumable(sample: &RateSample, state: &ControllerState) -> bool {
    sample.window_start() + TIME_EPS >= state.blanked_until
}

fn paced(state: &ControllerState, cfg: &ControllerConfig, now: f64) -> bool {
    now - state.last_action_t + TIME_EPS >= cfg.t_bb
}

fn act(
    kind: ControllerKind,
    state: &mut ControllerState,
    cfg: &ControllerConfig,
    now: f64,
    tweak: f64,
    direction: f64,
    trigger_rate: f64,
    stop_at_zero: bool,
) -> Option<ControlAction> {
    if direction > 0.0 && tweak >= 1.0 || direction < 0.0 && tweak <= -1.0 {
        return None;
    }
    if !paced(state, cfg, now) {
        return None;
    }
    let mut next = (tweak + direction * cfg.delta_bb).clamp(-1.0, 1.0);
    if stop_at_zero && (tweak < 0.0 && next > 0.0 || tweak > 0.0 && next < 0.0) {
        next = 0.0;
    }
    state.last_action_t = now;
    state.blanked_until = now + cfg.t_ignore;
    Some(ControlAction {
        t_s: now,
        controller: kind,
        target: kind.target(),
        delta: direction * cfg.delta_bb,
        resulting_tweak: snap(next),
        trigger_rate,
    })
}

/// Rate bounding: keeps R_I inside `[r_low, r_high]` by moving the threshold.
pub fn threshold_controller_step(
    sample: &RateSample,
    state: &mut ControllerState,
    cfg: &ControllerConfig,
    now: f64,
    tweak: f64,
) -> Option<ControlAction> {
    let r = sample.r_input_hz;
    if !r.is_finite() || !consumable(sample, state) {
        return None;
    }
    let h = cfg.hysteresis;
    match state.mode {
        Mode::DrivingUp if r < cfg.r_high / h => state.mode = Mode::Idle,
        Mode::DrivingDown if r > cfg.r_low * h => state.mode = Mode::Idle,
        _ => {}
    }
    if state.mode == Mode::Idle {
        if r > cfg.r_high {
            state.mode = Mode::DrivingUp;
        } else if r < cfg.r_low {
            state.mode = Mode::DrivingDown;
        }
    }
    let direction = match state.mode {
        Mode::Idle => return None,
        Mode::DrivingUp => 1.0,
        Mode::DrivingDown => -1.0,
    };
    act(ControllerKind::Threshold, state, cfg, now, tweak, direction, r, false)
}

/// Shared one-sided limiter: pushes the tweak down while `r > bound` and
/// walks it back to 0 once `r < bound / H`.
fn limiter_step(
    kind: ControllerKind,
    r: f64,
    bound: f64,
    limit_mode: Mode,
    recover_mode: Mode,
    state: &mut ControllerState,
    cfg: &ControllerConfig,
    now: f64,
    tweak: f64,
) -> Option<ControlAction> {
    let exit = bound / cfg.hysteresis;
    if r > bound {
        state.mode = limit_mode;
    } else if r < exit {
        state.mode = if tweak != 0.0 { recover_mode } else { Mode::Idle };
    } else if state.mode == recover_mode {
        state.mode = Mode::Idle;
    }
    if state.mode == limit_mode {
        act(kind, state, cfg, now, tweak, -1.0, r, false)
    } else if state.mode == recover_mode {
        let direction = if tweak < 0.0 { 1.0 } else { -1.0 };
        act(kind, state, cfg, now, tweak, direction, r, true)
    } else {
        None
    }
}

/// Rate limiting: lengthens the refractory period while R_I exceeds r_high.
pub fn refractory_controller_step(
    sample: &RateSample,
    state: &mut ControllerState,
    cfg: &ControllerConfig,
    now: f64,
    tweak: f64,
) -> Option<ControlAction> {
    let r = sample.r_input_hz;
    if !r.is_finite() || !consumable(sample, state) {
        return None;
    }
    // smaller refractory current means a longer period
    limiter_step(
        ControllerKind::Refractory,
        r,
        cfg.r_high,
        Mode::DrivingUp,
        Mode::DrivingDown,
        state,
        cfg,
        now,
        tweak,
    )
}

/// Noise regulation: narrows the bandwidth while per-pixel noise exceeds the
/// limit.
pub fn noise_controller_step(
    sample: &RateSample,
    state: &mut ControllerState,
    cfg: &ControllerConfig,
    now: f64,
    tweak: f64,
) -> Option<ControlAction> {
    let r = sample.r_noise_per_pixel_hz;
    if !r.is_finite() || !consumable(sample, state) {
        return None;
    }
    limiter_step(
        ControllerKind::Noise,
        r,
        cfg.r_noise_limit,
        Mode::DrivingDown,
        Mode::DrivingUp,
        state,
        cfg,
        now,
        tweak,
    )
}

/// Dispatches samples to the enabled controllers and applies global pacing
/// and blanking. At most one action is taken per sample.
#[derive(Debug, Clone)]
pub struct Supervisor {
    cfg: ControllerConfig,
    enabled: [bool; 3],
    states: [ControllerState; 3],
    last_action_t: f64,
    blanked_until: f64,
}

impl Supervisor {
    pub fn new(cfg: ControllerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Supervisor {
            cfg,
            enabled: [false; 3],
            states: [ControllerState::default(); 3],
            last_action_t: f64::NEG_INFINITY,
            blanked_until: f64::NEG_INFINITY,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn is_enabled(&self, kind: ControllerKind) -> bool {
        self.enabled[kind.index()]
    }

    /// Enables or disables a controller. Returns a warning if the threshold
    /// and noise controllers end up running together.
    pub fn set_enabled(&mut self, kind: ControllerKind, on: bool) -> Option<String> {
        let i = kind.index();
        if on && !self.enabled[i] {
            self.states[i] = ControllerState {
                mode: Mode::Idle,
                last_action_t: self.last_action_t,
                blanked_until: self.blanked_until,
            };
        }
        if !on {
            self.states[i].mode = Mode::Idle;
        }
        self.enabled[i] = on;
        if on
            && matches!(kind, ControllerKind::Threshold | ControllerKind::Noise)
            && self.is_enabled(ControllerKind::Threshold)
            && self.is_enabled(ControllerKind::Noise)
        {
            Some("threshold and noise controllers are both enabled; their interaction is untested".into())
        } else {
            None
        }
    }

    pub fn state(&self, kind: ControllerKind) -> &ControllerState {
        &self.states[kind.index()]
    }

    /// Mode summary such as `thr:IDLE;refr:-;bw:DRIVING_DOWN`.
    pub fn describe(&self) -> String {
        ControllerKind::ALL
            .iter()
            .map(|&k| {
                let m = if self.is_enabled(k) {
                    self.states[k.index()].mode.as_str()
                } else {
                    "-"
                };
                format!("{}:{}", k.short_name(), m)
            })
            .collect::<Vec<_>>()
            .join(";")
    }

    /// Blanks every controller until `until`, e.g. after a manual bias change.
    pub fn blank_until(&mut self, until: f64) {
        self.blanked_until = self.blanked_until.max(until);
        for s in &mut self.states {
            s.blanked_until = s.blanked_until.max(until);
        }
    }

    pub fn step(&mut self, sample: &RateSample, tweaks: &TweakSet, now: f64) -> Vec<ControlAction> {
        let mut actions = Vec::new();
        for kind in ControllerKind::ALL {
            if !self.enabled[kind.index()] {
                continue;
            }
            let st = &mut self.states[kind.index()];
            st.last_action_t = st.last_action_t.max(self.last_action_t);
            st.blanked_until = st.blanked_until.max(self.blanked_until);
            let tweak = tweaks.get(kind.target());
            let step = match kind {
                ControllerKind::Threshold => threshold_controller_step,
                ControllerKind::Refractory => refractory_controller_step,
                ControllerKind::Noise => noise_controller_step,
            };
            if let Some(a) = step(sample, st, &self.cfg, now, tweak) {
                self.last_action_t = now;
                self.blanked_until = now + self.cfg.t_ignore;
                actions.push(a);
            }
        }
        actions
    }
}
