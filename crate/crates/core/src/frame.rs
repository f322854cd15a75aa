//! Frame data model and the calibration/filter signal chain.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Grid side length; frames are `GRID × GRID` channels.
pub const GRID: usize = 10;
/// Channels per frame.
pub const CHANNELS: usize = GRID * GRID;
/// Frames per classifier window (150 ms at 200 Hz).
pub const WINDOW_LEN: usize = 30;
/// Frames averaged for a standard calibration (500 ms at 200 Hz).
pub const CALIBRATION_FRAMES: usize = 100;
/// Default moving-average length (100 ms at 200 Hz).
pub const FILTER_WINDOW: usize = 20;

/// Normalized values are clamped into this band; 1.0 is the full-scale
/// response at 100 kPa.
pub const CLAMP_MIN: f64 = -0.25;
pub const CLAMP_MAX: f64 = 1.25;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FrameError {
    #[error("calibration needs at least {needed} frames, got {got}")]
    CalibrationInsufficient { needed: usize, got: usize },
    #[error("expected a {expected}-element frame, got {got}")]
    Shape { expected: usize, got: usize },
}

/// One readout of the sensor grid in raw counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawFrame {
    /// Row-major `v * GRID + u`.
    pub counts: Vec<u16>,
    pub seq: u32,
    pub timestamp_us: u64,
}

impl RawFrame {
    pub fn new(counts: Vec<u16>, seq: u32, timestamp_us: u64) -> Result<Self, FrameError> {
        if counts.len() != CHANNELS {
            return Err(FrameError::Shape {
                expected: CHANNELS,
                got: counts.len(),
            });
        }
        Ok(Self {
            counts,
            seq,
            timestamp_us,
        })
    }

    pub fn uniform(count: u16, seq: u32, timestamp_us: u64) -> Self {
        Self {
            counts: vec![count; CHANNELS],
            seq,
            timestamp_us,
        }
    }
}

/// Per-channel at-rest mean established during calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub mean_counts: Vec<f64>,
    pub n_frames: usize,
}

/// Baseline-subtracted, normalized capacitance deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileFrame {
    pub values: Vec<f64>,
    pub timestamp_us: u64,
}

impl TactileFrame {
    pub fn zeros(timestamp_us: u64) -> Self {
        Self {
            values: vec![0.0; CHANNELS],
            timestamp_us,
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * GRID + col]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Clamps every entry into the normalized band.
    pub fn clamped(mut self) -> Self {
        for v in &mut self.values {
            *v = v.clamp(CLAMP_MIN, CLAMP_MAX);
        }
        self
    }
}

/// Per-channel mean of the first [`CALIBRATION_FRAMES`] frames.
pub fn calibrate(frames: &[RawFrame]) -> Result<Baseline, FrameError> {
    if frames.len() < CALIBRATION_FRAMES {
        return Err(FrameError::CalibrationInsufficient {
            needed: CALIBRATION_FRAMES,
            got: frames.len(),
        });
    }
    let mut sums = vec![0.0f64; CHANNELS];
    for frame in &frames[..CALIBRATION_FRAMES] {
        if frame.counts.len() != CHANNELS {
            return Err(FrameError::Shape {
                expected: CHANNELS,
                got: frame.counts.len(),
            });
        }
        for (s, &c) in sums.iter_mut().zip(&frame.counts) {
            *s += f64::from(c);
        }
    }
    let n = CALIBRATION_FRAMES as f64;
    Ok(Baseline {
        mean_counts: sums.into_iter().map(|s| s / n).collect(),
        n_frames: CALIBRATION_FRAMES,
    })
}

/// `(counts - baseline) / scale`, clamped to the normalized band.
///
/// `scale` is the number of counts corresponding to a full-scale response and
/// must be positive.
pub fn subtract_baseline(raw: &RawFrame, base: &Baseline, scale: f64) -> TactileFrame {
    debug_assert!(scale > 0.0);
    let values = raw
        .counts
        .iter()
        .zip(&base.mean_counts)
        .map(|(&c, &m)| ((f64::from(c) - m) / scale).clamp(CLAMP_MIN, CLAMP_MAX))
        .collect();
    TactileFrame {
        values,
        timestamp_us: raw.timestamp_us,
    }
}

/// Causal per-channel moving average with explicit state.
///
/// Each output is the mean over the last `min(window, seen)` inputs.
#[derive(Debug, Clone)]
pub struct MovingAverage {
    window: usize,
    history: VecDeque<Vec<f64>>,
}

impl MovingAverage {
    pub fn new(window: usize) -> Self {
        assert!(window >= 1, "moving-average window must be at least one frame");
        Self {
            window,
            history: VecDeque::with_capacity(window),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }

    pub fn push(&mut self, frame: &TactileFrame) -> TactileFrame {
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(frame.values.clone());
        let n = self.history.len() as f64;
        let mut values = vec![0.0; frame.values.len()];
        for past in &self.history {
            for (acc, v) in values.iter_mut().zip(past) {
                *acc += v;
            }
        }
        for v in &mut values {
            *v /= n;
        }
        TactileFrame {
            values,
            timestamp_us: frame.timestamp_us,
        }
    }
}

/// Batch form of [`MovingAverage`]; output length equals input length.
pub fn moving_average(stream: &[TactileFrame], window: usize) -> Vec<TactileFrame> {
    let mut filter = MovingAverage::new(window);
    stream.iter().map(|f| filter.push(f)).collect()
}

/// Calibrates on the first [`CALIBRATION_FRAMES`] frames, then subtracts and
/// filters every frame after them.
pub fn process_stream(
    raw: &[RawFrame],
    scale: f64,
    window: usize,
) -> Result<Vec<TactileFrame>, FrameError> {
    let base = calibrate(raw)?;
    let mut filter = MovingAverage::new(window);
    Ok(raw[CALIBRATION_FRAMES..]
        .iter()
        .map(|r| filter.push(&subtract_baseline(r, &base, scale)))
        .collect())
}

/// Thirty consecutive frames flattened frame-major, the classifier's input.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureWindow {
    data: Vec<f32>,
}

impl GestureWindow {
    pub const LEN: usize = WINDOW_LEN * CHANNELS;

    pub fn from_vec(data: Vec<f32>) -> Result<Self, FrameError> {
        if data.len() != Self::LEN {
            return Err(FrameError::Shape {
                expected: Self::LEN,
                got: data.len(),
            });
        }
        Ok(Self { data })
    }

    pub fn from_frames(frames: &[TactileFrame]) -> Result<Self, FrameError> {
        if frames.len() != WINDOW_LEN {
            return Err(FrameError::Shape {
                expected: WINDOW_LEN,
                got: frames.len(),
            });
        }
        let data = frames
            .iter()
            .flat_map(|f| f.values.iter().map(|&v| v as f32))
            .collect();
        Self::from_vec(data)
    }

    pub fn zeros() -> Self {
        Self {
            data: vec![0.0; Self::LEN],
        }
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * CHANNELS..(t + 1) * CHANNELS]
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tf(v: f64) -> TactileFrame {
        TactileFrame {
            values: vec![v; CHANNELS],
            timestamp_us: 0,
        }
    }

    #[test]
    fn calibrate_constant() {
        let frames: Vec<_> = (0..100).map(|i| RawFrame::uniform(500, i, 0)).collect();
        let b = calibrate(&frames).unwrap();
        assert_eq!(b.n_frames, 100);
        assert!(b.mean_counts.iter().all(|&m| m == 500.0));
    }

    #[test]
    fn calibrate_alternating_and_only_first_hundred() {
        let mut frames: Vec<_> = (0..100)
            .map(|i| RawFrame::uniform(if i % 2 == 0 { 400 } else { 600 }, i, 0))
            .collect();
        frames.push(RawFrame::uniform(9000, 100, 0));
        let b = calibrate(&frames).unwrap();
        assert!(b.mean_counts.iter().all(|&m| m == 500.0));
    }

    #[test]
    fn calibrate_needs_hundred() {
        let frames: Vec<_> = (0..99).map(|i| RawFrame::uniform(500, i, 0)).collect();
        assert_eq!(
            calibrate(&frames),
            Err(FrameError::CalibrationInsufficient { needed: 100, got: 99 })
        );
    }

    #[test]
    fn subtract_identity_step_and_clamp() {
        let base = Baseline {
            mean_counts: vec![500.0; CHANNELS],
            n_frames: 100,
        };
        let same = RawFrame::uniform(500, 0, 42);
        let out = subtract_baseline(&same, &base, 1000.0);
        assert!(out.values.iter().all(|&v| v == 0.0));
        assert_eq!(out.timestamp_us, 42);

        let mut step = RawFrame::uniform(500, 0, 0);
        step.counts[37] = 1500;
        let out = subtract_baseline(&step, &base, 1000.0);
        assert_eq!(out.values[37], 1.0);
        assert_eq!(out.values.iter().filter(|&&v| v != 0.0).count(), 1);

        step.counts[37] = 2500;
        assert_eq!(subtract_baseline(&step, &base, 1000.0).values[37], 1.25);
        step.counts[37] = 0;
        assert_eq!(subtract_baseline(&step, &base, 1000.0).values[37], -0.25);
    }

    #[test]
    fn moving_average_fixed_point() {
        let stream: Vec<_> = (0..50).map(|_| tf(5.0)).collect();
        for f in moving_average(&stream, 20) {
            assert!(f.values.iter().all(|&v| v == 5.0));
        }
    }

    #[test]
    fn moving_average_impulse() {
        // Impulse after the history is full, so every output divides by 20.
        let mut stream: Vec<_> = (0..65).map(|_| tf(0.0)).collect();
        stream[25].values[12] = 20.0;
        let out = moving_average(&stream, 20);
        for (k, f) in out.iter().enumerate() {
            let expect = if (25..45).contains(&k) { 1.0 } else { 0.0 };
            assert_eq!(f.values[12], expect, "frame {k}");
            assert_eq!(f.values[13], 0.0);
        }
    }

    #[test]
    fn moving_average_step_settles_after_window() {
        let stream: Vec<_> = (0..60).map(|k| tf(if k >= 10 { 1.0 } else { 0.0 })).collect();
        let out = moving_average(&stream, 20);
        assert!(out[28].values[0] < 1.0);
        assert_eq!(out[29].values[0], 1.0);
        assert_eq!(out.len(), stream.len());
    }

    #[test]
    fn moving_average_warmup_uses_frames_so_far() {
        let stream = vec![tf(2.0), tf(4.0)];
        let out = moving_average(&stream, 20);
        assert_eq!(out[0].values[0], 2.0);
        assert_eq!(out[1].values[0], 3.0);
    }

    #[test]
    fn window_shape_checked() {
        let frames: Vec<_> = (0..29).map(|_| tf(0.0)).collect();
        assert!(GestureWindow::from_frames(&frames).is_err());
        let frames: Vec<_> = (0..30).map(|_| tf(0.5)).collect();
        let w = GestureWindow::from_frames(&frames).unwrap();
        assert_eq!(w.as_slice().len(), 3000);
        assert_eq!(w.frame(29)[99], 0.5);
    }
}
