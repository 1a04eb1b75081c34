//! Tweak/bias-current/operating-point model of a DVS pixel.
//!
//! A tweak is a dimensionless knob in `[-1, 1]` that scales a bias current
//! exponentially around its nominal value. The pixel's operating point
//! (contrast thresholds, photoreceptor bandwidth, refractory period) is a pure
//! function of the bias currents and a handful of camera constants.
//!
//! All functions here are pure and can be called from any thread.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Composite threshold gain of a DAVIS346 change amplifier, e-folds per
/// natural-log current ratio.
pub const DEFAULT_A_THETA: f64 = 1.0 / 15.5;
/// Refractory capacitor, farads.
pub const DEFAULT_C3_FARADS: f64 = 20e-15;
/// Refractory reset voltage swing, volts.
pub const DEFAULT_V_REFR_VOLTS: f64 = 0.5;
/// Exponent of the dominant-pole bandwidth approximation.
pub const BANDWIDTH_EXPONENT: f64 = 0.5;

/// Which of the three tweaks an operation acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TweakTarget {
    Threshold,
    Bandwidth,
    Refractory,
}

impl TweakTarget {
    pub const ALL: [TweakTarget; 3] = [
        TweakTarget::Threshold,
        TweakTarget::Bandwidth,
        TweakTarget::Refractory,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TweakTarget::Threshold => "threshold_tweak",
            TweakTarget::Bandwidth => "bandwidth_tweak",
            TweakTarget::Refractory => "refractory_tweak",
        }
    }
}

impl fmt::Display for TweakTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TweakTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" | "threshold_tweak" | "thr" => Ok(TweakTarget::Threshold),
            "bandwidth" | "bandwidth_tweak" | "bw" => Ok(TweakTarget::Bandwidth),
            "refractory" | "refractory_tweak" | "refr" => Ok(TweakTarget::Refractory),
            other => Err(Error::Config(format!("unknown tweak target `{other}`"))),
        }
    }
}

/// Clamp a tweak into `[-1, 1]`; the flag reports whether clamping happened.
/// NaN is treated as 0 and flagged.
pub fn clamp_tweak(tweak: f64) -> (f64, bool) {
    if tweak.is_nan() {
        (0.0, true)
    } else if tweak > 1.0 {
        (1.0, true)
    } else if tweak < -1.0 {
        (-1.0, true)
    } else {
        (tweak, false)
    }
}

/// The three dimensionless tweaks, each kept inside `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TweakSet {
    pub threshold: f64,
    pub bandwidth: f64,
    pub refractory: f64,
}

impl TweakSet {
    /// Builds a tweak set, clamping each input. The second value is true if
    /// any input had to be clamped.
    pub fn new(threshold: f64, bandwidth: f64, refractory: f64) -> (Self, bool) {
        let (threshold, a) = clamp_tweak(threshold);
        let (bandwidth, b) = clamp_tweak(bandwidth);
        let (refractory, c) = clamp_tweak(refractory);
        (
            TweakSet {
                threshold,
                bandwidth,
                refractory,
            },
            a || b || c,
        )
    }

    pub fn get(&self, target: TweakTarget) -> f64 {
        match target {
            TweakTarget::Threshold => self.threshold,
            TweakTarget::Bandwidth => self.bandwidth,
            TweakTarget::Refractory => self.refractory,
        }
    }

    /// Sets one tweak (clamped); returns true if the value was clamped.
    pub fn set(&mut self, target: TweakTarget, value: f64) -> bool {
        let (v, clamped) = clamp_tweak(value);
        match target {
            TweakTarget::Threshold => self.threshold = v,
            TweakTarget::Bandwidth => self.bandwidth = v,
            TweakTarget::Refractory => self.refractory = v,
        }
        clamped
    }
}

/// Safe current range of one tweak: `[nominal / t_min, nominal * t_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TweakRange {
    pub t_min: f64,
    pub t_max: f64,
    pub nominal_current: f64,
}

impl TweakRange {
    pub fn new(t_min: f64, t_max: f64, nominal_current: f64) -> Result<Self> {
        let range = TweakRange {
            t_min,
            t_max,
            nominal_current,
        };
        range.validate()?;
        Ok(range)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nominal_current > 0.0) || !self.nominal_current.is_finite() {
            return Err(Error::Config(format!(
                "nominal current must be positive, got {}",
                self.nominal_current
            )));
        }
        if !(self.t_min > 1.0) || !(self.t_max > 1.0) {
            return Err(Error::Config(format!(
                "tweak range factors must exceed 1, got t_min={} t_max={}",
                self.t_min, self.t_max
            )));
        }
        Ok(())
    }

    pub fn min_current(&self) -> f64 {
        self.nominal_current / self.t_min
    }

    pub fn max_current(&self) -> f64 {
        self.nominal_current * self.t_max
    }

    pub fn with_nominal(self, nominal_current: f64) -> Self {
        TweakRange {
            nominal_current,
            ..self
        }
    }
}

/// Result of mapping a tweak onto a current.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tweaked {
    pub current: f64,
    /// The input tweak was outside `[-1, 1]` and got clamped.
    pub clamped: bool,
}

/// Exponential tweak-to-current mapping around the nominal current.
pub fn tweak_to_current(tweak: f64, range: &TweakRange) -> Result<Tweaked> {
    range.validate()?;
    let (t, clamped) = clamp_tweak(tweak);
    let factor = if t >= 0.0 {
        (t * range.t_max.ln()).exp()
    } else {
        (t * range.t_min.ln()).exp()
    };
    let current = (range.nominal_current * factor).clamp(range.min_current(), range.max_current());
    Ok(Tweaked { current, clamped })
}

/// Inverse of [`tweak_to_current`].
pub fn current_to_tweak(current: f64, range: &TweakRange) -> Result<f64> {
    range.validate()?;
    let lo = range.min_current();
    let hi = range.max_current();
    // a few ulps of slack so endpoint round trips survive rounding
    let slack = 4.0 * f64::EPSILON;
    if !(current >= lo * (1.0 - slack) && current <= hi * (1.0 + slack)) {
        return Err(Error::Range {
            what: "bias current outside tweak range",
            value: current,
            lo,
            hi,
        });
    }
    let ratio = (current / range.nominal_current).ln();
    let t = if ratio >= 0.0 {
        ratio / range.t_max.ln()
    } else {
        ratio / range.t_min.ln()
    };
    Ok(t.clamp(-1.0, 1.0))
}

/// The six pixel bias currents, amperes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCurrents {
    pub i_pr: f64,
    pub i_sf: f64,
    pub i_d: f64,
    pub i_on: f64,
    pub i_off: f64,
    pub i_refr: f64,
}

impl Default for BiasCurrents {
    fn default() -> Self {
        BiasCurrents {
            i_pr: 1e-9,
            i_sf: 25e-12,
            i_d: 20e-9,
            i_on: 1.3e-6,
            i_off: 300e-12,
            i_refr: 5e-9,
        }
    }
}

impl BiasCurrents {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("i_pr", self.i_pr),
            ("i_sf", self.i_sf),
            ("i_d", self.i_d),
            ("i_on", self.i_on),
            ("i_off", self.i_off),
            ("i_refr", self.i_refr),
        ];
        for (name, v) in all {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidBias(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Physical operating point of the pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelParams {
    /// ON threshold, e-folds (> 0).
    pub theta_on: f64,
    /// OFF threshold, e-folds (< 0).
    pub theta_off: f64,
    /// Events per e-fold, `1 / theta_on`.
    pub sensitivity: f64,
    /// Photoreceptor cutoff, Hz. `f64::INFINITY` disables the lowpass.
    pub bandwidth_hz: f64,
    /// Dead time after each event, seconds.
    pub refractory_s: f64,
}

impl PixelParams {
    /// Balanced-threshold operating point built directly from physical values.
    pub fn new(theta: f64, bandwidth_hz: f64, refractory_s: f64) -> Result<Self> {
        let p = PixelParams {
            theta_on: theta,
            theta_off: -theta,
            sensitivity: 1.0 / theta,
            bandwidth_hz,
            refractory_s,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta_on > 0.0) || !(self.theta_off < 0.0) {
            return Err(Error::InvalidBias(format!(
                "thresholds must satisfy theta_on > 0 > theta_off, got {} / {}",
                self.theta_on, self.theta_off
            )));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::Config(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth_hz
            )));
        }
        if !(self.refractory_s >= 0.0) || !self.refractory_s.is_finite() {
            return Err(Error::Config(format!(
                "refractory period must be finite and >= 0, got {}",
                self.refractory_s
            )));
        }
        Ok(())
    }
}

/// Per-camera constants plus nominal biases and tweak ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraConstants {
    pub a_theta: f64,
    pub c3_farads: f64,
    pub v_refr_volts: f64,
    pub nominal: BiasCurrents,
    /// `(t_min, t_max)` of the threshold tweak.
    pub threshold_range: (f64, f64),
    pub bandwidth_range: (f64, f64),
    pub refractory_range: (f64, f64),
    /// Photoreceptor bandwidth at the nominal currents.
    pub nominal_bandwidth_hz: f64,
}

impl Default for CameraConstants {
    fn default() -> Self {
        CameraConstants {
            a_theta: DEFAULT_A_THETA,
            c3_farads: DEFAULT_C3_FARADS,
            v_refr_volts: DEFAULT_V_REFR_VOLTS,
            nominal: BiasCurrents::default(),
            threshold_range: (10.0, 10.0),
            bandwidth_range: (30.0, 30.0),
            refractory_range: (100.0, 8.0),
            nominal_bandwidth_hz: 100.0,
        }
    }
}

const CAMERA_KEYS: &[&str] = &[
    "a_theta",
    "c3_farads",
    "v_refr_volts",
    "i_pr",
    "i_sf",
    "i_d",
    "i_on",
    "i_off",
    "i_refr",
    "threshold_t_min",
    "threshold_t_max",
    "bandwidth_t_min",
    "bandwidth_t_max",
    "refractory_t_min",
    "refractory_t_max",
    "nominal_bandwidth_hz",
];

impl CameraConstants {
    /// Parses a `key = value` block. Blank lines and `#` comments are ignored;
    /// unlisted keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cam = CameraConstants::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Syntax {
                line: idx + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            cam.set(key.trim(), value.trim()).map_err(|e| Error::Syntax {
                line: idx + 1,
                msg: e.to_string(),
            })?;
        }
        cam.validate()?;
        Ok(cam)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v: f64 = value
            .parse()
            .map_err(|_| Error::Config(format!("`{key}`: not a number: `{value}`")))?;
        match key {
            "a_theta" => self.a_theta = v,
            "c3_farads" => self.c3_farads = v,
            "v_refr_volts" => self.v_refr_volts = v,
            "i_pr" => self.nominal.i_pr = v,
            "i_sf" => self.nominal.i_sf = v,
            "i_d" => self.nominal.i_d = v,
            "i_on" => self.nominal.i_on = v,
            "i_off" => self.nominal.i_off = v,
            "i_refr" => self.nominal.i_refr = v,
            "threshold_t_min" => self.threshold_range.0 = v,
            "threshold_t_max" => self.threshold_range.1 = v,
            "bandwidth_t_min" => self.bandwidth_range.0 = v,
            "bandwidth_t_max" => self.bandwidth_range.1 = v,
            "refractory_t_min" => self.refractory_range.0 = v,
            "refractory_t_max" => self.refractory_range.1 = v,
            "nominal_bandwidth_hz" => self.nominal_bandwidth_hz = v,
            other => {
                return Err(Error::Config(format!(
                    "unknown camera key `{other}` (known: {})",
                    CAMERA_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let n = &self.nominal;
        let rows: [(&str, f64); 16] = [
            ("a_theta", self.a_theta),
            ("c3_farads", self.c3_farads),
            ("v_refr_volts", self.v_refr_volts),
            ("i_pr", n.i_pr),
            ("i_sf", n.i_sf),
            ("i_d", n.i_d),
            ("i_on", n.i_on),
            ("i_off", n.i_off),
            ("i_refr", n.i_refr),
            ("threshold_t_min", self.threshold_range.0),
            ("threshold_t_max", self.threshold_range.1),
            ("bandwidth_t_min", self.bandwidth_range.0),
            ("bandwidth_t_max", self.bandwidth_range.1),
            ("refractory_t_min", self.refractory_range.0),
            ("refractory_t_max", self.refractory_range.1),
            ("nominal_bandwidth_hz", self.nominal_bandwidth_hz),
        ];
        rows.iter().map(|(k, v)| format!("{k} = {v:e}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a_theta", self.a_theta),
            ("c3_farads", self.c3_farads),
            ("v_refr_volts", self.v_refr_volts),
            ("nominal_bandwidth_hz", self.nominal_bandwidth_hz),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        self.nominal.validate()?;
        self.range(TweakTarget::Threshold, self.nominal.i_on)?;
        self.range(TweakTarget::Bandwidth, self.nominal.i_pr)?;
        self.range(TweakTarget::Refractory, self.nominal.i_refr)?;
        thresholds_from_currents(&self.nominal, self.a_theta)?;
        Ok(())
    }

    /// Tweak range for `target` around the given nominal current.
    pub fn range(&self, target: TweakTarget, nominal_current: f64) -> Result<TweakRange> {
        let (lo, hi) = match target {
            TweakTarget::Threshold => self.threshold_range,
            TweakTarget::Bandwidth => self.bandwidth_range,
            TweakTarget::Refractory => self.refractory_range,
        };
        TweakRange::new(lo, hi, nominal_current)
    }

    /// Bias currents for a tweak set.
    ///
    /// The threshold tweak scales `i_on`; `i_off` is then placed symmetrically
    /// so that `theta_off = -theta_on`. The bandwidth tweak scales `i_pr` and
    /// `i_sf` together; the refractory tweak scales `i_refr`.
    pub fn currents_for(&self, tweaks: &TweakSet) -> Result<BiasCurrents> {
        let n = self.nominal;
        let on = tweak_to_current(tweaks.threshold, &self.range(TweakTarget::Threshold, n.i_on)?)?;
        let pr = tweak_to_current(tweaks.bandwidth, &self.range(TweakTarget::Bandwidth, n.i_pr)?)?;
        let sf = tweak_to_current(tweaks.bandwidth, &self.range(TweakTarget::Bandwidth, n.i_sf)?)?;
        let refr =
            tweak_to_current(tweaks.refractory, &self.range(TweakTarget::Refractory, n.i_refr)?)?;
        let theta = self.a_theta * (on.current / n.i_d).ln();
        let (mut c, _) = currents_for_threshold(theta, &n, self)?;
        c.i_pr = pr.current;
        c.i_sf = sf.current;
        c.i_refr = refr.current;
        Ok(c)
    }

    /// Operating point for a set of currents.
    pub fn params_from_currents(&self, c: &BiasCurrents) -> Result<PixelParams> {
        let (theta_on, theta_off) = thresholds_from_currents(c, self.a_theta)?;
        Ok(PixelParams {
            theta_on,
            theta_off,
            sensitivity: 1.0 / theta_on,
            bandwidth_hz: bandwidth_from_currents(c, &self.nominal, self.nominal_bandwidth_hz)?,
            refractory_s: refractory_from_current(c.i_refr, self.c3_farads, self.v_refr_volts)?,
        })
    }

    /// Operating point for a tweak set.
    pub fn pixel_params(&self, tweaks: &TweakSet) -> Result<PixelParams> {
        self.params_from_currents(&self.currents_for(tweaks)?)
    }
}

/// ON/OFF thresholds in e-folds from the comparator and differencing-amp
/// currents: `theta = a_theta * ln(I_on,off / I_d)`.
pub fn thresholds_from_currents(c: &BiasCurrents, a_theta: f64) -> Result<(f64, f64)> {
    c.validate()?;
    if !(c.i_on > c.i_d && c.i_d > c.i_off) {
        return Err(Error::InvalidBias(format!(
            "need i_on > i_d > i_off, got {:e} / {:e} / {:e}",
            c.i_on, c.i_d, c.i_off
        )));
    }
    let on = a_theta * (c.i_on / c.i_d).ln();
    let off = a_theta * (c.i_off / c.i_d).ln();
    if !(on > 0.0) || !(off < 0.0) {
        return Err(Error::InvalidBias("zero threshold".into()));
    }
    Ok((on, off))
}

/// Currents giving the balanced thresholds `+theta / -theta`, starting from
/// `base`. `i_on` is clamped into the threshold tweak range of the camera's
/// nominal `i_on`; the flag reports clamping.
pub fn currents_for_threshold(
    theta: f64,
    base: &BiasCurrents,
    camera: &CameraConstants,
) -> Result<(BiasCurrents, bool)> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::InvalidBias(format!(
            "threshold must be positive and finite, got {theta}"
        )));
    }
    let range = camera.range(TweakTarget::Threshold, camera.nominal.i_on)?;
    let wanted_on = base.i_d * (theta / camera.a_theta).exp();
    let i_on = wanted_on.clamp(range.min_current(), range.max_current());
    let clamped = i_on != wanted_on;
    let theta = if clamped {
        camera.a_theta * (i_on / base.i_d).ln()
    } else {
        theta
    };
    if !(theta > 0.0) {
        return Err(Error::InvalidBias(
            "threshold collapses to zero inside the tweak range".into(),
        ));
    }
    let i_off = base.i_d * (-theta / camera.a_theta).exp();
    Ok((
        BiasCurrents {
            i_on,
            i_off,
            ..*base
        },
        clamped,
    ))
}

/// Refractory period `C3 / (I_refr * V_refr)`, seconds.
pub fn refractory_from_current(i_refr: f64, c3_farads: f64, v_refr_volts: f64) -> Result<f64> {
    if !(i_refr > 0.0) || !i_refr.is_finite() {
        return Err(Error::InvalidBias(format!(
            "refractory current must be positive, got {i_refr}"
        )));
    }
    Ok(c3_farads / (i_refr * v_refr_volts))
}

/// Photoreceptor bandwidth around the nominal operating point:
/// `nominal_bw * min(i_pr/i_pr0, i_sf/i_sf0)^0.5`.
pub fn bandwidth_from_currents(
    c: &BiasCurrents,
    nominal: &BiasCurrents,
    nominal_bw: f64,
) -> Result<f64> {
    for (name, v) in [
        ("i_pr", c.i_pr),
        ("i_sf", c.i_sf),
        ("nominal i_pr", nominal.i_pr),
        ("nominal i_sf", nominal.i_sf),
    ] {
        if !(v > 0.0) {
            return Err(Error::InvalidBias(format!("{name} must be positive, got {v}")));
        }
    }
    let a = c.i_pr / nominal.i_pr;
    let b = c.i_sf / nominal.i_sf;
    Ok(nominal_bw * a.min(b).powf(BANDWIDTH_EXPONENT))
}

/// Event rate predicted by the linear rate-vs-sensitivity model, floored at 0.
pub fn predicted_rate_from_sensitivity(
    sigma: f64,
    sigma_min: f64,
    sigma_0: f64,
    r_0: f64,
) -> Result<f64> {
    if !(sigma_0 > sigma_min) {
        return Err(Error::ModelParameter(format!(
            "nominal sensitivity {sigma_0} must exceed minimum sensitivity {sigma_min}"
        )));
    }
    Ok((r_0 * (sigma - sigma_min) / (sigma_0 - sigma_min)).max(0.0))
}
