//! Scripted luminance stimuli: dark dots orbiting the array center on a
//! uniform background, with timed changes of speed, contrast and ambient
//! light. Stands in for a monitor or a motor-driven dot in front of a camera.
//!
//! # Scenario file grammar
//!
//! ```text
//! # comment
//! name=rate_bounding duration_s=60        <- setting line: no `t=` prefix
//! t=0 dot_count=12 dot_speed_hz=2         <- directive line
//! t=20 dot_speed_hz=0.5 threshold_ctrl=on
//! ```
//!
//! Setting lines are opaque `key=value` pairs handed to the harness.
//! Directive lines start with `t=<seconds>`; timestamps must be strictly
//! increasing. Each directive changes only the keys it names; everything else
//! keeps its previous value (or the default until the first directive).

use std::f64::consts::TAU;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bias::TweakTarget;
use crate::control::ControllerKind;
use crate::error::{Error, Result};

/// Array size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub width: u16,
    pub height: u16,
}

impl Geometry {
    pub fn new(width: u16, height: u16) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!("geometry must be positive, got {width}x{height}")));
        }
        Ok(Geometry { width, height })
    }

    pub fn n_pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn index(&self, x: u16, y: u16) -> usize {
        y as usize * self.width as usize + x as usize
    }
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            width: 64,
            height: 64,
        }
    }
}

/// Linear luminance image at one instant. Row-major, all samples > 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LuminanceField {
    pub geometry: Geometry,
    pub samples: Vec<f64>,
    pub timestamp: f64,
}

impl LuminanceField {
    pub fn uniform(geometry: Geometry, value: f64, timestamp: f64) -> Self {
        LuminanceField {
            geometry,
            samples: vec![value; geometry.n_pixels()],
            timestamp,
        }
    }

    pub fn at(&self, x: u16, y: u16) -> f64 {
        self.samples[self.geometry.index(x, y)]
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Natural log of every sample.
    pub fn log_samples(&self) -> Vec<f64> {
        self.samples.iter().map(|v| v.ln()).collect()
    }
}

/// One scripted change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Setting {
    DotCount(u32),
    /// Orbit revolutions per second.
    DotSpeedHz(f64),
    /// Weber contrast of the darkest dot, in `[0, 1)`.
    DotContrast(f64),
    /// Weber contrast of the faintest dot. When set, dot log-contrasts are
    /// spread so that their reciprocals are evenly spaced between the two.
    DotContrastMin(f64),
    /// Background luminance, linear units.
    Ambient(f64),
    Controller(ControllerKind, bool),
    Tweak(TweakTarget, f64),
}

impl Setting {
    fn key(&self) -> &'static str {
        match self {
            Setting::DotCount(_) => "dot_count",
            Setting::DotSpeedHz(_) => "dot_speed_hz",
            Setting::DotContrast(_) => "dot_contrast",
            Setting::DotContrastMin(_) => "dot_contrast_min",
            Setting::Ambient(_) => "ambient",
            Setting::Controller(ControllerKind::Threshold, _) => "threshold_ctrl",
            Setting::Controller(ControllerKind::Refractory, _) => "refractory_ctrl",
            Setting::Controller(ControllerKind::Noise, _) => "noise_ctrl",
            Setting::Tweak(TweakTarget::Threshold, _) => "thr_tweak",
            Setting::Tweak(TweakTarget::Bandwidth, _) => "bw_tweak",
            Setting::Tweak(TweakTarget::Refractory, _) => "refr_tweak",
        }
    }

    fn value_text(&self) -> String {
        match *self {
            Setting::DotCount(n) => n.to_string(),
            Setting::DotSpeedHz(v)
            | Setting::DotContrast(v)
            | Setting::DotContrastMin(v)
            | Setting::Ambient(v)
            | Setting::Tweak(_, v) => format!("{v}"),
            Setting::Controller(_, on) => if on { "on" } else { "off" }.to_string(),
        }
    }

    fn parse(key: &str, value: &str) -> std::result::Result<Setting, String> {
        let num = || -> std::result::Result<f64, String> {
            value
                .parse::<f64>()
                .map_err(|_| format!("`{key}`: not a number: `{value}`"))
        };
        let flag = || -> std::result::Result<bool, String> {
            match value {
                "on" | "true" | "1" => Ok(true),
                "off" | "false" | "0" => Ok(false),
                _ => Err(format!("`{key}`: expected on/off, got `{value}`")),
            }
        };
        Ok(match key {
            "dot_count" => Setting::DotCount(
                value
                    .parse()
                    .map_err(|_| format!("`dot_count`: not a count: `{value}`"))?,
            ),
            "dot_speed_hz" => Setting::DotSpeedHz(num()?),
            "dot_contrast" => Setting::DotContrast(num()?),
            "dot_contrast_min" => Setting::DotContrastMin(num()?),
            "ambient" | "ambient_luminance" => Setting::Ambient(num()?),
            "threshold_ctrl" => Setting::Controller(ControllerKind::Threshold, flag()?),
            "refractory_ctrl" => Setting::Controller(ControllerKind::Refractory, flag()?),
            "noise_ctrl" => Setting::Controller(ControllerKind::Noise, flag()?),
            "thr_tweak" => Setting::Tweak(TweakTarget::Threshold, num()?),
            "bw_tweak" => Setting::Tweak(TweakTarget::Bandwidth, num()?),
            "refr_tweak" => Setting::Tweak(TweakTarget::Refractory, num()?),
            other => return Err(format!("unknown directive key `{other}`")),
        })
    }

    fn check(&self) -> std::result::Result<(), String> {
        match *self {
            Setting::DotSpeedHz(v) if !v.is_finite() => Err(format!("dot speed must be finite, got {v}")),
            Setting::DotContrast(c) | Setting::DotContrastMin(c) if !(0.0..1.0).contains(&c) => {
                Err(format!("contrast must be in [0, 1), got {c}"))
            }
            Setting::Ambient(a) if !(a > 0.0) || !a.is_finite() => {
                Err(format!("ambient luminance must be positive, got {a}"))
            }
            Setting::Tweak(_, v) if !v.is_finite() => Err(format!("tweak must be finite, got {v}")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Directive {
    pub t: f64,
    pub settings: Vec<Setting>,
}

/// Parsed scenario: free-form setting lines plus timed directives.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScenarioSchedule {
    /// Setting lines in file order.
    pub header: Vec<(String, String)>,
    pub directives: Vec<Directive>,
}

impl ScenarioSchedule {
    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Serializes back into the scenario grammar.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(out, "{k}={v}");
        }
        for d in &self.directives {
            let _ = write!(out, "t={}", d.t);
            for s in &d.settings {
                let _ = write!(out, " {}={}", s.key(), s.value_text());
            }
            out.push('\n');
        }
        out
    }

    /// Validates directive ordering and value ranges.
    pub fn validate(&self) -> Result<()> {
        let mut last = f64::NEG_INFINITY;
        for (index, d) in self.directives.iter().enumerate() {
            if !(d.t >= 0.0) || !d.t.is_finite() {
                return Err(Error::Semantic {
                    index,
                    msg: format!("timestamp must be finite and >= 0, got {}", d.t),
                });
            }
            if d.t <= last {
                return Err(Error::Semantic {
                    index,
                    msg: format!("timestamp {} not after previous {}", d.t, last),
                });
            }
            last = d.t;
            for s in &d.settings {
                s.check().map_err(|msg| Error::Semantic { index, msg })?;
            }
        }
        // a faint-dot contrast above the darkest one, or zero, is meaningless
        let mut scene = SceneState::default();
        for (index, d) in self.directives.iter().enumerate() {
            scene.apply(&d.settings);
            if let Some(min) = scene.contrast_min {
                if !(min > 0.0) || min > scene.contrast {
                    return Err(Error::Semantic {
                        index,
                        msg: format!(
                            "dot_contrast_min {min} must be in (0, dot_contrast={}]",
                            scene.contrast
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    /// Scene state in force at time `t`.
    pub fn scene_at(&self, t: f64) -> SceneState {
        let mut scene = SceneState::default();
        for d in self.directives.iter().take_while(|d| d.t <= t) {
            scene.apply(&d.settings);
        }
        scene
    }

    /// Directive times, in order.
    pub fn change_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.directives.iter().map(|d| d.t)
    }
}

/// Parses scenario text. Syntax errors carry the 1-based line number;
/// semantic errors carry the 0-based directive index.
pub fn parse_schedule(text: &str) -> Result<ScenarioSchedule> {
    let mut schedule = ScenarioSchedule::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut pairs = Vec::new();
        for token in line.split_whitespace() {
            let (k, v) = token.split_once('=').ok_or_else(|| Error::Syntax {
                line: line_no,
                msg: format!("expected key=value, got `{token}`"),
            })?;
            if k.is_empty() || v.is_empty() {
                return Err(Error::Syntax {
                    line: line_no,
                    msg: format!("empty key or value in `{token}`"),
                });
            }
            pairs.push((k, v));
        }
        if pairs[0].0 == "t" {
            let t: f64 = pairs[0].1.parse().map_err(|_| Error::Syntax {
                line: line_no,
                msg: format!("bad timestamp `{}`", pairs[0].1),
            })?;
            let settings = pairs[1..]
                .iter()
                .map(|(k, v)| Setting::parse(k, v))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|msg| Error::Syntax { line: line_no, msg })?;
            schedule.directives.push(Directive { t, settings });
        } else {
            if let Some((k, _)) = pairs.iter().find(|(k, _)| *k == "t") {
                return Err(Error::Syntax {
                    line: line_no,
                    msg: format!("`{k}=` must come first on a directive line"),
                });
            }
            schedule
                .header
                .extend(pairs.into_iter().map(|(k, v)| (k.to_string(), v.to_string())));
        }
    }
    schedule.validate()?;
    Ok(schedule)
}

/// Scene variables in force between two directives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub dot_count: u32,
    pub speed_hz: f64,
    pub contrast: f64,
    pub contrast_min: Option<f64>,
    pub ambient: f64,
}

impl Default for SceneState {
    fn default() -> Self {
        SceneState {
            dot_count: 1,
            speed_hz: 0.0,
            contrast: 0.5,
            contrast_min: None,
            ambient: 1.0,
        }
    }
}

impl SceneState {
    fn apply(&mut self, settings: &[Setting]) {
        for s in settings {
            match *s {
                Setting::DotCount(n) => self.dot_count = n,
                Setting::DotSpeedHz(v) => self.speed_hz = v,
                Setting::DotContrast(c) => self.contrast = c,
                Setting::DotContrastMin(c) => self.contrast_min = Some(c),
                Setting::Ambient(a) => self.ambient = a,
                Setting::Controller(..) | Setting::Tweak(..) => {}
            }
        }
    }

    /// Weber contrast of every dot.
    pub fn dot_contrasts(&self) -> Vec<f64> {
        let n = self.dot_count as usize;
        match self.contrast_min {
            Some(min) if n > 1 && min < self.contrast && min > 0.0 => {
                let inv_hi = 1.0 / -(1.0 - self.contrast).ln();
                let inv_lo = 1.0 / -(1.0 - min).ln();
                (0..n)
                    .map(|k| {
                        let inv = inv_hi + (inv_lo - inv_hi) * k as f64 / (n - 1) as f64;
                        1.0 - (-1.0 / inv).exp()
                    })
                    .collect()
            }
            _ => vec![self.contrast; n],
        }
    }

    /// Largest log-contrast in the scene, e-folds.
    pub fn max_log_contrast(&self) -> f64 {
        if self.dot_count == 0 {
            0.0
        } else {
            -(1.0 - self.contrast).ln()
        }
    }
}

/// Dot sizes and orbit, pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DotLayout {
    pub dot_radius_px: f64,
    pub orbit_radius_px: f64,
}

impl DotLayout {
    pub fn default_for(geometry: Geometry) -> Self {
        let side = geometry.width.min(geometry.height) as f64;
        DotLayout {
            dot_radius_px: (side * 0.05).max(1.0),
            orbit_radius_px: side * 0.3,
        }
    }
}

const SUPERSAMPLE: usize = 4;

/// Precomputed renderer for one schedule.
#[derive(Debug, Clone)]
pub struct Stimulus {
    geometry: Geometry,
    layout: DotLayout,
    // (start time, orbit phase in revolutions at start, scene) per segment
    segments: Vec<(f64, f64, SceneState)>,
}

impl Stimulus {
    pub fn new(schedule: &ScenarioSchedule, geometry: Geometry, layout: DotLayout) -> Result<Self> {
        schedule.validate()?;
        if !(layout.dot_radius_px > 0.0) || !(layout.orbit_radius_px >= 0.0) {
            return Err(Error::Config(format!("bad dot layout {layout:?}")));
        }
        let mut segments = vec![(0.0, 0.0, SceneState::default())];
        for d in &schedule.directives {
            let (t0, phase0, scene) = *segments.last().expect("non-empty");
            let mut next = scene;
            next.apply(&d.settings);
            if d.t <= t0 {
                // directive at t=0 replaces the default segment
                *segments.last_mut().expect("non-empty") = (t0, phase0, next);
            } else {
                let phase = phase0 + scene.speed_hz * (d.t - t0);
                segments.push((d.t, phase, next));
            }
        }
        Ok(Stimulus {
            geometry,
            layout,
            segments,
        })
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn layout(&self) -> DotLayout {
        self.layout
    }

    fn segment(&self, t: f64) -> &(f64, f64, SceneState) {
        let i = self.segments.partition_point(|s| s.0 <= t).max(1) - 1;
        &self.segments[i]
    }

    pub fn scene_at(&self, t: f64) -> SceneState {
        self.segment(t).2
    }

    /// Orbit phase in revolutions, continuous across speed changes.
    pub fn phase_at(&self, t: f64) -> f64 {
        let (t0, p0, scene) = self.segment(t);
        p0 + scene.speed_hz * (t - t0)
    }

    /// Highest dot-center speed over the whole schedule, pixels per second.
    pub fn max_dot_speed_px(&self) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.2.dot_count > 0 && s.2.contrast > 0.0)
            .map(|s| s.2.speed_hz.abs() * TAU * self.layout.orbit_radius_px)
            .fold(0.0, f64::max)
    }

    /// Dot centers at time `t`.
    pub fn dot_centers(&self, t: f64) -> Vec<(f64, f64)> {
        let scene = self.scene_at(t);
        let phase = self.phase_at(t);
        let cx = self.geometry.width as f64 / 2.0;
        let cy = self.geometry.height as f64 / 2.0;
        let n = scene.dot_count.max(1) as f64;
        (0..scene.dot_count)
            .map(|k| {
                let a = TAU * (phase + k as f64 / n);
                (
                    cx + self.layout.orbit_radius_px * a.cos(),
                    cy + self.layout.orbit_radius_px * a.sin(),
                )
            })
            .collect()
    }

    /// Writes natural-log luminance of every pixel into `out`.
    pub fn render_log_into(&self, t: f64, out: &mut [f64]) {
        let g = self.geometry;
        assert_eq!(out.len(), g.n_pixels(), "output buffer does not match geometry");
        let scene = self.scene_at(t);
        let base = scene.ambient.ln();
        out.fill(base);
        if scene.dot_count == 0 {
            return;
        }
        let r = self.layout.dot_radius_px;
        let r2 = r * r;
        let step = 1.0 / SUPERSAMPLE as f64;
        let norm = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
        for ((dx, dy), c) in self.dot_centers(t).into_iter().zip(scene.dot_contrasts()) {
            if c <= 0.0 {
                continue;
            }
            let x0 = (dx - r).floor().max(0.0) as i64;
            let x1 = ((dx + r).ceil() as i64).min(g.width as i64 - 1);
            let y0 = (dy - r).floor().max(0.0) as i64;
            let y1 = ((dy + r).ceil() as i64).min(g.height as i64 - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let mut inside = 0usize;
                    for j in 0..SUPERSAMPLE {
                        let sy = y as f64 + (j as f64 + 0.5) * step - dy;
                        for i in 0..SUPERSAMPLE {
                            let sx = x as f64 + (i as f64 + 0.5) * step - dx;
                            if sx * sx + sy * sy <= r2 {
                                inside += 1;
                            }
                        }
                    }
                    if inside > 0 {
                        let coverage = inside as f64 * norm;
                        out[y as usize * g.width as usize + x as usize] += (1.0 - c * coverage).ln();
                    }
                }
            }
        }
    }

    pub fn render(&self, t: f64) -> LuminanceField {
        let mut log = vec![0.0; self.geometry.n_pixels()];
        self.render_log_into(t, &mut log);
        LuminanceField {
            geometry: self.geometry,
            samples: log.into_iter().map(f64::exp).collect(),
            timestamp: t,
        }
    }
}

/// One-shot render of `schedule` at time `t` with the default dot layout.
pub fn render(schedule: &ScenarioSchedule, t: f64, geometry: Geometry) -> Result<LuminanceField> {
    if !(t >= 0.0) {
        return Err(Error::Config(format!("render time must be >= 0, got {t}")));
    }
    Ok(Stimulus::new(schedule, geometry, DotLayout::default_for(geometry))?.render(t))
}
