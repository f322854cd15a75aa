use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::frame::{RawFrame, CHANNELS};

use super::contact::contact_footprint;
use super::script::GestureScript;

/// At-rest raw reading of every channel.
pub const BASELINE_COUNTS: f64 = 500.0;
/// Raw counts per unit of normalized response.
pub const COUNTS_PER_UNIT: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Per-sample Gaussian noise, normalized units.
    pub gaussian_sigma: f64,
    /// Largest per-channel drift slope, normalized units per second. Each
    /// channel draws its slope uniformly from `[-drift_rate, drift_rate]`.
    pub drift_rate: f64,
    pub rng_seed: u64,
}

impl NoiseModel {
    pub const DEFAULT_SIGMA: f64 = 0.02;
    pub const DEFAULT_DRIFT: f64 = 0.01;

    pub fn with_seed(rng_seed: u64) -> Self {
        Self {
            gaussian_sigma: Self::DEFAULT_SIGMA,
            drift_rate: Self::DEFAULT_DRIFT,
            rng_seed,
        }
    }

    pub fn silent() -> Self {
        Self {
            gaussian_sigma: 0.0,
            drift_rate: 0.0,
            rng_seed: 0,
        }
    }
}

/// Gesture scripts placed on a shared clock.
#[derive(Debug, Clone, Default)]
pub struct Timeline {
    pub events: Vec<(f64, GestureScript)>,
    pub duration_ms: f64,
}

impl Timeline {
    pub fn new() -> Self {
        Self::default()
    }

    /// Idle (no contact) for `ms`.
    pub fn rest(mut self, ms: f64) -> Self {
        self.duration_ms += ms;
        self
    }

    /// Appends a script right after everything placed so far.
    pub fn then(mut self, script: GestureScript) -> Self {
        let start = self.duration_ms;
        self.duration_ms += script.duration_ms;
        self.events.push((start, script));
        self
    }
}

/// Number of frames covering `duration_ms` at `fps`.
pub fn frame_count(duration_ms: f64, fps: f64) -> usize {
    (duration_ms * fps / 1000.0).round() as usize
}

/// Samples a timeline at `fps`, adding noise and drift, and converts the
/// result to raw counts.
pub fn render_timeline(timeline: &Timeline, noise: &NoiseModel, fps: f64) -> Vec<RawFrame> {
    assert!(fps > 0.0, "frame rate must be positive");
    let n = frame_count(timeline.duration_ms, fps);
    let mut rng = ChaCha8Rng::seed_from_u64(noise.rng_seed);
    let slopes: Vec<f64> = (0..CHANNELS)
        .map(|_| {
            if noise.drift_rate > 0.0 {
                rng.gen_range(-noise.drift_rate..=noise.drift_rate)
            } else {
                0.0
            }
        })
        .collect();
    let gauss = Normal::new(0.0, noise.gaussian_sigma.max(0.0)).expect("finite sigma");

    (0..n)
        .map(|k| {
            let t_s = k as f64 / fps;
            let t_ms = t_s * 1000.0;
            let contacts: Vec<_> = timeline
                .events
                .iter()
                .flat_map(|(start, s)| s.contacts_at(t_ms - start))
                .collect();
            let clean = contact_footprint(&contacts);
            let counts = clean
                .values
                .iter()
                .zip(&slopes)
                .map(|(&v, &slope)| {
                    let mut v = v + slope * t_s;
                    if noise.gaussian_sigma > 0.0 {
                        v += gauss.sample(&mut rng);
                    }
                    (BASELINE_COUNTS + COUNTS_PER_UNIT * v).round().clamp(0.0, u16::MAX as f64) as u16
                })
                .collect();
            RawFrame {
                counts,
                seq: k as u32,
                timestamp_us: (t_s * 1e6).round() as u64,
            }
        })
        .collect()
}

/// Renders a single script starting at t = 0.
pub fn render(script: &GestureScript, noise: &NoiseModel, fps: f64) -> Vec<RawFrame> {
    render_timeline(&Timeline::new().then(script.clone()), noise, fps)
}
