//! Online event-stream measurements: box-filter rates, background-activity
//! denoising and the normalized signal-minus-noise statistic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pixel::Event;
use crate::stimulus::Geometry;

/// Default box-filter window, seconds.
pub const DEFAULT_WINDOW_S: f64 = 0.3;
/// Default denoiser correlation time, seconds.
pub const DEFAULT_CORRELATION_S: f64 = 0.010;

/// Rates measured over one box-filter window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSample {
    /// Window end, seconds.
    pub t: f64,
    pub window_s: f64,
    pub r_input_hz: f64,
    pub r_signal_hz: f64,
    pub r_noise_hz: f64,
    pub r_noise_per_pixel_hz: f64,
    /// Absent when the window held no events.
    pub r_sn: Option<f64>,
    pub n_input: u64,
    pub n_signal: u64,
    pub n_noise: u64,
}

impl RateSample {
    pub fn window_start(&self) -> f64 {
        self.t - self.window_s
    }
}

/// `(R_S - R_N) / (R_S + R_N)`, or `None` when both rates are zero.
pub fn compute_rsn(r_signal: f64, r_noise: f64) -> Option<f64> {
    let total = r_signal + r_noise;
    if !(r_signal >= 0.0) || !(r_noise >= 0.0) || total == 0.0 {
        return None;
    }
    Some(((r_signal - r_noise) / total).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Class {
    Signal,
    Noise,
}

const NEVER: u64 = u64::MAX;

/// Background activity filter: an event is signal iff one of its eight
/// neighbours fired within the correlation time. The event's own pixel
/// timestamp is always updated, whatever the verdict.
#[derive(Debug, Clone)]
pub struct Denoiser {
    geometry: Geometry,
    correlation_us: u64,
    last: Vec<u64>,
    last_event_us: u64,
}

impl Denoiser {
    pub fn new(geometry: Geometry, correlation_time_s: f64) -> Result<Self> {
        if !(correlation_time_s > 0.0) || !correlation_time_s.is_finite() {
            return Err(Error::Config(format!(
                "correlation time must be positive, got {correlation_time_s}"
            )));
        }
        Ok(Denoiser {
            geometry,
            correlation_us: (correlation_time_s * 1e6).round() as u64,
            last: vec![NEVER; geometry.n_pixels()],
            last_event_us: 0,
        })
    }

    pub fn correlation_time_s(&self) -> f64 {
        self.correlation_us as f64 * 1e-6
    }

    /// Last event time of pixel `(x, y)`, if it ever fired.
    pub fn last_timestamp(&self, x: u16, y: u16) -> Option<u64> {
        match self.last[self.geometry.index(x, y)] {
            NEVER => None,
            t => Some(t),
        }
    }

    pub fn classify(&mut self, ev: &Event) -> Result<Class> {
        if ev.t_us < self.last_event_us {
            return Err(Error::Ordering {
                t_us: ev.t_us,
                last_us: self.last_event_us,
            });
        }
        let (w, h) = (self.geometry.width as i32, self.geometry.height as i32);
        let (x, y) = (ev.x as i32, ev.y as i32);
        if x >= w || y >= h {
            return Err(Error::Config(format!(
                "event at ({x}, {y}) outside {w}x{h} array"
            )));
        }
        let mut class = Class::Noise;
        'scan: for ny in (y - 1).max(0)..=(y + 1).min(h - 1) {
            for nx in (x - 1).max(0)..=(x + 1).min(w - 1) {
                if nx == x && ny == y {
                    continue;
                }
                let t = self.last[(ny * w + nx) as usize];
                if t != NEVER && ev.t_us - t <= self.correlation_us {
                    class = Class::Signal;
                    break 'scan;
                }
            }
        }
        self.last[(y * w + x) as usize] = ev.t_us;
        self.last_event_us = ev.t_us;
        Ok(class)
    }
}

/// Classifies one event against the denoiser state.
pub fn denoise(event: &Event, state: &mut Denoiser) -> Result<Class> {
    state.classify(event)
}

/// Accumulates classified events and closes them into [`RateSample`]s.
#[derive(Debug, Clone)]
pub struct RateMeter {
    n_pixels: usize,
    start_us: u64,
    n_signal: u64,
    n_noise: u64,
}

impl RateMeter {
    pub fn new(n_pixels: usize, start_us: u64) -> Self {
        RateMeter {
            n_pixels,
            start_us,
            n_signal: 0,
            n_noise: 0,
        }
    }

    pub fn record(&mut self, class: Class) {
        match class {
            Class::Signal => self.n_signal += 1,
            Class::Noise => self.n_noise += 1,
        }
    }

    /// Closes the window at `end_us` and starts the next one there.
    pub fn close(&mut self, end_us: u64) -> RateSample {
        let window_s = end_us.saturating_sub(self.start_us) as f64 * 1e-6;
        let rate = |n: u64| if window_s > 0.0 { n as f64 / window_s } else { 0.0 };
        let n_input = self.n_signal + self.n_noise;
        let r_signal = rate(self.n_signal);
        let r_noise = rate(self.n_noise);
        let sample = RateSample {
            t: end_us as f64 * 1e-6,
            window_s,
            r_input_hz: rate(n_input),
            r_signal_hz: r_signal,
            r_noise_hz: r_noise,
            r_noise_per_pixel_hz: r_noise / self.n_pixels.max(1) as f64,
            r_sn: compute_rsn(r_signal, r_noise),
            n_input,
            n_signal: self.n_signal,
            n_noise: self.n_noise,
        };
        self.start_us = end_us;
        self.n_signal = 0;
        self.n_noise = 0;
        sample
    }
}

/// Offline box filter over a time-ordered stream: one sample per window of
/// `window_s`, covering `[0, duration_s)`. The final window is shortened if
/// the duration is not a whole number of windows.
pub fn rate_boxfilter(
    events: &[Event],
    window_s: f64,
    duration_s: f64,
    denoiser: &mut Denoiser,
) -> Result<Vec<RateSample>> {
    if !(window_s > 0.0) {
        return Err(Error::Config(format!("window must be positive, got {window_s}")));
    }
    let window_us = (window_s * 1e6).round() as u64;
    let end_us = (duration_s.max(0.0) * 1e6).round() as u64;
    let mut meter = RateMeter::new(denoiser.geometry.n_pixels(), 0);
    let mut out = Vec::new();
    let mut boundary = window_us.min(end_us);
    let mut events = events.iter().peekable();
    while boundary > meter.start_us || out.is_empty() && end_us > 0 {
        while let Some(ev) = events.next_if(|e| e.t_us < boundary) {
            let class = denoiser.classify(ev)?;
            meter.record(class);
        }
        out.push(meter.close(boundary));
        if boundary >= end_us {
            break;
        }
        boundary = (boundary + window_us).min(end_us);
    }
    Ok(out)
}
