//! Scenario files: header settings resolved into a typed configuration.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bias::{CameraConstants, TweakTarget};
use crate::control::ControllerConfig;
use crate::error::{Error, Result};
use crate::metering::{DEFAULT_CORRELATION_S, DEFAULT_WINDOW_S};
use crate::pixel::NoiseModel;
use crate::stimulus::{parse_schedule, DotLayout, Geometry, ScenarioSchedule};

/// Pixel count of the reference sensor (346 x 260) that the paper-scale rate
/// bounds refer to.
pub const REFERENCE_PIXELS: f64 = 346.0 * 260.0;

const BUNDLED: &[(&str, &str)] = &[
    ("threshold_sweep", include_str!("../../scenarios/threshold_sweep.scn")),
    ("bandwidth_sweep", include_str!("../../scenarios/bandwidth_sweep.scn")),
    ("refractory_sweep", include_str!("../../scenarios/refractory_sweep.scn")),
    ("rate_bounding", include_str!("../../scenarios/rate_bounding.scn")),
    ("refractory_limiting", include_str!("../../scenarios/refractory_limiting.scn")),
    ("noise_regulation", include_str!("../../scenarios/noise_regulation.scn")),
];

/// Names of the scenarios compiled into the crate.
pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

/// Text of a bundled scenario.
pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Pass/fail checks a scenario can request with `check=a,b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// Threshold control pulls R into `[R_L, R_H]` in every segment.
    Bounded,
    /// Refractory control brings R below R_H and later returns to default.
    RefractoryLimit,
    /// Bandwidth control keeps per-pixel noise under the limit in the dark.
    NoiseRegulation,
    /// Sweep: rate is linear in sensitivity with the expected intercept.
    LinearFit,
    /// Sweep: signal saturates, noise grows, R_S-N peaks inside the grid.
    BandwidthTradeoff,
    /// Sweep: input rate does not increase along the grid.
    NonIncreasing,
}

impl Check {
    pub fn as_str(self) -> &'static str {
        match self {
            Check::Bounded => "bounded",
            Check::RefractoryLimit => "refractory_limit",
            Check::NoiseRegulation => "noise_regulation",
            Check::LinearFit => "linear_fit",
            Check::BandwidthTradeoff => "bandwidth_tradeoff",
            Check::NonIncreasing => "non_increasing",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Check {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Check::Bounded,
            Check::RefractoryLimit,
            Check::NoiseRegulation,
            Check::LinearFit,
            Check::BandwidthTradeoff,
            Check::NonIncreasing,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
        .ok_or_else(|| Error::Config(format!("unknown check `{s}`")))
    }
}

/// Everything a run needs besides the schedule itself.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub name: String,
    pub duration_s: f64,
    pub geometry: Geometry,
    pub window_s: f64,
    pub seed: u64,
    pub layout: DotLayout,
    /// Factor from paper-scale event rates to this array's rates.
    pub rate_scale: f64,
    pub correlation_s: f64,
    pub camera: CameraConstants,
    pub noise: NoiseModel,
    /// Controller settings with rate bounds already rescaled.
    pub controller: ControllerConfig,
    pub checks: Vec<Check>,
    pub sweep_param: Option<TweakTarget>,
    pub sweep_grid: Vec<f64>,
    /// Sensitivity range used for the linear fit of a threshold sweep.
    pub fit_sigma: Option<(f64, f64)>,
    /// Optional cap on the simulation step, microseconds.
    pub max_step_us: Option<u64>,
    pub schedule: ScenarioSchedule,
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| num::<f64>("grid", s.trim()))
        .collect()
}

impl ScenarioConfig {
    /// Resolves header settings. `camera` replaces the built-in camera
    /// constants before any `camera.*` keys are applied.
    pub fn from_schedule(schedule: ScenarioSchedule, camera: Option<CameraConstants>) -> Result<Self> {
        schedule.validate()?;
        let mut camera = camera.unwrap_or_default();
        let mut name = "scenario".to_string();
        let mut duration_s: f64 = 0.0;
        let (mut width, mut height) = (64u16, 64u16);
        let mut window_s: f64 = DEFAULT_WINDOW_S;
        let mut seed = 0u64;
        let mut dot_radius = None;
        let mut orbit_radius = None;
        let mut rate_scale = None;
        let mut correlation_s: f64 = DEFAULT_CORRELATION_S;
        let mut ctrl = ControllerConfig::default();
        let mut noise_keys = Vec::new();
        let mut checks = Vec::new();
        let mut sweep_param = None;
        let mut sweep_grid = Vec::new();
        let (mut sigma_lo, mut sigma_hi) = (None, None);
        let mut max_step_us = None;

        for (k, v) in &schedule.header {
            let k = k.as_str();
            match k {
                "name" => name = v.clone(),
                "duration_s" => duration_s = num(k, v)?,
                "width" => width = num(k, v)?,
                "height" => height = num(k, v)?,
                "window_s" => window_s = num(k, v)?,
                "seed" => seed = num(k, v)?,
                "dot_radius_px" => dot_radius = Some(num(k, v)?),
                "orbit_radius_px" => orbit_radius = Some(num(k, v)?),
                "rate_scale" => rate_scale = Some(num(k, v)?),
                "denoise.tau_s" => correlation_s = num(k, v)?,
                "ctrl.delta_bb" => ctrl.delta_bb = num(k, v)?,
                "ctrl.hysteresis" => ctrl.hysteresis = num(k, v)?,
                "ctrl.t_ignore_s" => ctrl.t_ignore = num(k, v)?,
                "ctrl.t_bb_s" => ctrl.t_bb = num(k, v)?,
                "ctrl.r_high_hz" => ctrl.r_high = num(k, v)?,
                "ctrl.r_low_hz" => ctrl.r_low = num(k, v)?,
                "ctrl.r_noise_limit_hz" => ctrl.r_noise_limit = num(k, v)?,
                "check" => {
                    for c in v.split(',').filter(|s| !s.is_empty()) {
                        checks.push(c.parse()?);
                    }
                }
                "sweep.param" => sweep_param = Some(v.parse()?),
                "sweep.grid" => sweep_grid = parse_grid(v)?,
                "fit.sigma_min" => sigma_lo = Some(num(k, v)?),
                "fit.sigma_max" => sigma_hi = Some(num(k, v)?),
                "max_step_us" => max_step_us = Some(num(k, v)?),
                _ if k.starts_with("camera.") => camera.set(&k["camera.".len()..], v)?,
                _ if k.starts_with("noise.") => noise_keys.push((k, v.as_str())),
                _ => return Err(Error::Config(format!("unknown scenario setting `{k}`"))),
            }
        }
        camera.validate()?;

        let mut noise = NoiseModel::for_camera(&camera);
        for (k, v) in noise_keys {
            let field = match &k["noise.".len()..] {
                "base_rate_hz" => &mut noise.base_rate_hz,
                "bandwidth_exponent" => &mut noise.bandwidth_exponent,
                "threshold_exponent" => &mut noise.threshold_exponent,
                "luminance_exponent" => &mut noise.luminance_exponent,
                "on_fraction" => &mut noise.on_fraction,
                "burst_kappa" => &mut noise.burst_kappa,
                "burst_time_s" => &mut noise.burst_time_s,
                other => return Err(Error::Config(format!("unknown noise setting `{other}`"))),
            };
            *field = num(k, v)?;
        }
        noise.validate()?;

        if !(duration_s >= 0.0) || !duration_s.is_finite() {
            return Err(Error::Config(format!("duration_s must be >= 0, got {duration_s}")));
        }
        if !(window_s > 0.0) || (window_s * 1e6).round() < 1.0 {
            return Err(Error::Config(format!("window_s must be at least 1 us, got {window_s}")));
        }
        if !(correlation_s > 0.0) {
            return Err(Error::Config(format!("denoise.tau_s must be positive, got {correlation_s}")));
        }
        let geometry = Geometry::new(width, height)?;
        let default_layout = DotLayout::default_for(geometry);
        let layout = DotLayout {
            dot_radius_px: dot_radius.unwrap_or(default_layout.dot_radius_px),
            orbit_radius_px: orbit_radius.unwrap_or(default_layout.orbit_radius_px),
        };
        let rate_scale = rate_scale.unwrap_or(geometry.n_pixels() as f64 / REFERENCE_PIXELS);
        if !(rate_scale > 0.0) || !rate_scale.is_finite() {
            return Err(Error::Config(format!("rate_scale must be positive, got {rate_scale}")));
        }
        let controller = ctrl.with_rate_scale(rate_scale);
        controller.validate()?;
        let fit_sigma = match (sigma_lo, sigma_hi) {
            (Some(a), Some(b)) if a < b => Some((a, b)),
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "fit.sigma_min and fit.sigma_max must both be set, min < max".into(),
                ))
            }
        };
        if sweep_grid.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Config("sweep.grid values must lie in [-1, 1]".into()));
        }
        if max_step_us == Some(0) {
            return Err(Error::Config("max_step_us must be positive".into()));
        }

        Ok(ScenarioConfig {
            name,
            duration_s,
            geometry,
            window_s,
            seed,
            layout,
            rate_scale,
            correlation_s,
            camera,
            noise,
            controller,
            checks,
            sweep_param,
            sweep_grid,
            fit_sigma,
            max_step_us,
            schedule,
        })
    }

    pub fn parse(text: &str, camera: Option<CameraConstants>) -> Result<Self> {
        Self::from_schedule(parse_schedule(text)?, camera)
    }

    /// Loads a scenario file, or a bundled scenario when `path` names one
    /// and no such file exists.
    pub fn load(path: &Path, camera: Option<CameraConstants>) -> Result<Self> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => match path.to_str().and_then(bundled) {
                Some(t) => t.to_string(),
                None => return Err(Error::io(path, e)),
            },
        };
        Self::parse(&text, camera)
    }

    pub fn window_us(&self) -> u64 {
        (self.window_s * 1e6).round() as u64
    }

    pub fn duration_us(&self) -> u64 {
        (self.duration_s * 1e6).round() as u64
    }
}
