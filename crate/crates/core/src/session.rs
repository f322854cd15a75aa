//! Streaming runtime: raw frames in, one [`StateEvent`] per tick out.
//!
//! The first 100 frames calibrate the baseline. Each later frame is
//! baseline-subtracted, smoothed, appended to a trailing 30-frame window
//! (zero-filled at start), classified, and fed to the state machine.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::control::{Action, AuxTarget, ControlConfig, Pose, SessionState, Twist};
use crate::frame::{calibrate, subtract_baseline, Baseline, GestureWindow, MovingAverage, RawFrame, CALIBRATION_FRAMES, CHANNELS, FILTER_WINDOW, WINDOW_LEN};
use crate::gesture::GestureClass;
use crate::model::{argmax, Model, ModelError};
use crate::dataset::derive_seed;
use crate::sim::{self, NoiseModel, Timeline, COUNTS_PER_UNIT};
use crate::FRAME_RATE_HZ;

/// Version of the [`StateEvent`] line format.
pub const EVENT_SCHEMA: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    Config(String),
    #[error("frame has {got} channels, expected {CHANNELS}")]
    FrameShape { got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Where frames come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSource {
    #[default]
    Live,
    Capture {
        path: PathBuf,
    },
    Simulator {
        /// Gesture names, performed in order with rests between them.
        gestures: Vec<String>,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub source: InputSource,
    pub weights: Option<PathBuf>,
    /// Tick rate of the pipeline.
    pub frame_rate_hz: u32,
    /// Rate frames arrive at; resampled to `frame_rate_hz` when different.
    pub input_rate_hz: u32,
    pub filter_window: usize,
    /// Raw counts per unit of normalized response.
    pub counts_per_unit: f64,
    /// Filtered response above which a cell counts as touched.
    pub contact_threshold: f64,
    /// Time constant of the baseline re-tracking applied on untouched ticks;
    /// zero keeps the calibrated baseline fixed.
    pub baseline_tracking_s: f64,
    pub control: ControlConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            source: InputSource::Live,
            weights: None,
            frame_rate_hz: FRAME_RATE_HZ,
            input_rate_hz: FRAME_RATE_HZ,
            filter_window: FILTER_WINDOW,
            counts_per_unit: COUNTS_PER_UNIT,
            contact_threshold: 0.05,
            baseline_tracking_s: 1.0,
            control: ControlConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: &str| Err(SessionError::Config(m.to_string()));
        if self.frame_rate_hz == 0 || self.input_rate_hz == 0 {
            return bad("frame rates must be positive");
        }
        if self.filter_window == 0 {
            return bad("filter window must be at least one frame");
        }
        if !(self.counts_per_unit > 0.0) {
            return bad("counts per unit must be positive");
        }
        if !(self.baseline_tracking_s >= 0.0 && self.baseline_tracking_s.is_finite()) {
            return bad("baseline tracking time constant must be finite and non-negative");
        }
        if self.control.dwell_ticks == 0 {
            return bad("dwell must be at least one tick");
        }
        if !(self.control.tick_s > 0.0) {
            return bad("tick length must be positive");
        }
        Ok(())
    }
}

/// Anything that turns a window into 15 class probabilities.
pub trait Classifier: Send {
    fn probabilities(&mut self, window: &GestureWindow) -> Result<Vec<f32>, ModelError>;
}

impl Classifier for Model<f32> {
    fn probabilities(&mut self, window: &GestureWindow) -> Result<Vec<f32>, ModelError> {
        self.classify(window)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Tick,
    /// Motion halted because the input went away.
    SafetyStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxStep {
    pub target: AuxTarget,
    pub step: usize,
    pub total: usize,
}

/// One tick of session output, serialized as a single JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEvent {
    pub v: u32,
    pub kind: EventKind,
    pub tick: u64,
    pub t_us: u64,
    pub detected: GestureClass,
    /// Class probabilities rounded to 1e-4.
    pub p: Vec<f64>,
    pub contact: bool,
    pub active: Option<GestureClass>,
    pub twist: Twist,
    pub aux: Option<AuxStep>,
    pub pose: Pose,
}

impl StateEvent {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events always serialize")
    }
}

/// Rounds to four decimals so logs do not depend on the last float bits.
fn round4(p: f32) -> f64 {
    (f64::from(p) * 1e4).round() / 1e4
}

/// Sample-and-hold rate conversion onto the tick grid.
///
/// Input frame `i` is emitted `ceil((i+1)·out/in) − ceil(i·out/in)` times,
/// and every output gets the next sequence number and grid timestamp.
#[derive(Debug, Clone)]
pub struct Resampler {
    in_hz: u64,
    out_hz: u64,
    inputs: u64,
    outputs: u64,
}

impl Resampler {
    pub fn new(in_hz: u32, out_hz: u32) -> Self {
        assert!(in_hz > 0 && out_hz > 0, "rates must be positive");
        Self {
            in_hz: in_hz.into(),
            out_hz: out_hz.into(),
            inputs: 0,
            outputs: 0,
        }
    }

    fn emitted_before(&self, i: u64) -> u64 {
        (i * self.out_hz).div_ceil(self.in_hz)
    }

    pub fn push(&mut self, frame: &RawFrame) -> Vec<RawFrame> {
        let n = self.emitted_before(self.inputs + 1) - self.emitted_before(self.inputs);
        self.inputs += 1;
        (0..n)
            .map(|_| {
                let k = self.outputs;
                self.outputs += 1;
                RawFrame {
                    counts: frame.counts.clone(),
                    seq: k as u32,
                    timestamp_us: k * 1_000_000 / self.out_hz,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStats {
    pub frames: u64,
    /// Frames missing according to sequence-number gaps.
    pub dropped: u64,
}

pub struct Session {
    cfg: SessionConfig,
    classifier: Box<dyn Classifier>,
    calibration: Vec<RawFrame>,
    baseline: Option<Baseline>,
    filter: MovingAverage,
    window: VecDeque<Vec<f32>>,
    state: SessionState,
    tick: u64,
    last_seq: Option<u32>,
    stats: SessionStats,
    last_event: Option<StateEvent>,
}

impl Session {
    pub fn new(cfg: SessionConfig, classifier: Box<dyn Classifier>) -> Result<Self, SessionError> {
        cfg.validate()?;
        let state = SessionState::new(cfg.control.clone());
        Ok(Self {
            filter: MovingAverage::new(cfg.filter_window),
            window: (0..WINDOW_LEN).map(|_| vec![0.0; CHANNELS]).collect(),
            cfg,
            classifier,
            calibration: Vec::with_capacity(CALIBRATION_FRAMES),
            baseline: None,
            state,
            tick: 0,
            last_seq: None,
            stats: SessionStats::default(),
            last_event: None,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn stats(&self) -> SessionStats {
        self.stats
    }

    pub fn is_calibrated(&self) -> bool {
        self.baseline.is_some()
    }

    /// Consumes one frame on the tick grid. Returns `None` while calibrating.
    pub fn push_raw(&mut self, raw: &RawFrame) -> Result<Option<StateEvent>, SessionError> {
        if raw.counts.len() != CHANNELS {
            return Err(SessionError::FrameShape { got: raw.counts.len() });
        }
        self.stats.frames += 1;
        if let Some(prev) = self.last_seq {
            self.stats.dropped += u64::from(raw.seq.wrapping_sub(prev).saturating_sub(1));
        }
        self.last_seq = Some(raw.seq);

        let Some(base) = &self.baseline else {
            self.calibration.push(raw.clone());
            if self.calibration.len() == CALIBRATION_FRAMES {
                let base = calibrate(&self.calibration).expect("exactly enough frames");
                // Warm the filter on the tail of the rest period so the first
                // ticks are as smooth as the rest.
                let tail = CALIBRATION_FRAMES.saturating_sub(self.cfg.filter_window);
                for f in &self.calibration[tail..] {
                    self.filter.push(&subtract_baseline(f, &base, self.cfg.counts_per_unit));
                }
                self.baseline = Some(base);
                self.calibration.clear();
            }
            return Ok(None);
        };
        let filtered = self.filter.push(&subtract_baseline(raw, base, self.cfg.counts_per_unit));
        let contact = filtered.max_value() > self.cfg.contact_threshold;
        if !contact && self.cfg.baseline_tracking_s > 0.0 {
            // Slow drift would otherwise accumulate into false contact; while
            // nothing touches the skin, the baseline follows the raw counts.
            let alpha = 1.0 / (self.cfg.baseline_tracking_s * f64::from(self.cfg.frame_rate_hz)).max(1.0);
            let base = self.baseline.as_mut().expect("calibrated above");
            for (m, &c) in base.mean_counts.iter_mut().zip(&raw.counts) {
                *m += alpha * (f64::from(c) - *m);
            }
        }
        self.window.pop_front();
        self.window.push_back(filtered.values.iter().map(|&v| v as f32).collect());
        let flat: Vec<f32> = self.window.iter().flatten().copied().collect();
        let window = GestureWindow::from_vec(flat).expect("window holds 30 full frames");
        let probs = self.classifier.probabilities(&window)?;
        let detected = GestureClass::from_index(argmax(&probs)).unwrap_or(GestureClass::Invalid);
        let action = self.state.step(detected, contact);
        let event = self.event(EventKind::Tick, raw.timestamp_us, detected, &probs, contact, action);
        self.tick += 1;
        self.last_event = Some(event.clone());
        Ok(Some(event))
    }

    fn event(
        &self,
        kind: EventKind,
        t_us: u64,
        detected: GestureClass,
        probs: &[f32],
        contact: bool,
        action: Action,
    ) -> StateEvent {
        let aux = match action {
            Action::Recover { target, step, total } => Some(AuxStep { target, step, total }),
            _ => None,
        };
        StateEvent {
            v: EVENT_SCHEMA,
            kind,
            tick: self.tick,
            t_us,
            detected,
            p: probs.iter().map(|&p| round4(p)).collect(),
            contact,
            active: self.state.active,
            twist: action.twist().unwrap_or(Twist::ZERO),
            aux,
            pose: self.state.pose,
        }
    }

    /// Safety stop: drops the active gesture and any recovery, and returns an
    /// event with a zero twist describing the halted state.
    pub fn halt(&mut self) -> StateEvent {
        self.state.halt();
        let (t_us, detected, probs) = match &self.last_event {
            Some(e) => (e.t_us, e.detected, e.p.iter().map(|&p| p as f32).collect()),
            None => (0, GestureClass::Invalid, vec![0.0; GestureClass::COUNT]),
        };
        let mut e = self.event(EventKind::SafetyStop, t_us, detected, &probs, false, Action::Idle);
        e.tick = self.tick.saturating_sub(1);
        e.p = probs.iter().map(|&p| f64::from(p)).collect();
        e
    }
}

/// One gesture of a simulated session, written `Name` or `Name:ms`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptStep {
    pub class: GestureClass,
    /// Overrides the scripted duration.
    pub duration_ms: Option<f64>,
}

impl FromStr for ScriptStep {
    type Err = SessionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, ms) = match s.split_once(':') {
            Some((n, ms)) => (n, Some(ms)),
            None => (s, None),
        };
        let class = name.trim().parse().map_err(|e: crate::gesture::UnknownClass| SessionError::Config(e.to_string()))?;
        let duration_ms = ms
            .map(|ms| {
                ms.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| *v > 0.0 && v.is_finite())
                    .ok_or_else(|| SessionError::Config(format!("bad duration in `{s}`")))
            })
            .transpose()?;
        Ok(Self { class, duration_ms })
    }
}

const SIM_LEAD_IN_MS: f64 = 750.0;
const SIM_GAP_MS: f64 = 400.0;
const SIM_TAIL_MS: f64 = 2000.0;

/// Renders a scripted session at the tick rate: a calibration rest, each
/// gesture separated by a short lift-off, then a long rest so any recovery
/// move can finish.
pub fn simulate_stream(steps: &[ScriptStep], seed: u64) -> Result<Vec<RawFrame>, SessionError> {
    let mut timeline = Timeline::new().rest(SIM_LEAD_IN_MS);
    for (i, step) in steps.iter().enumerate() {
        let s = derive_seed(seed, 100 + i as u64);
        let mut script = if step.class == GestureClass::Invalid {
            sim::invalid_script(s)
        } else {
            sim::script_for(step.class, s).map_err(|e| SessionError::Config(e.to_string()))?
        };
        if let Some(ms) = step.duration_ms {
            script = script.with_duration(ms);
        }
        timeline = timeline.then(script).rest(SIM_GAP_MS);
    }
    timeline = timeline.rest(SIM_TAIL_MS);
    Ok(sim::render_timeline(&timeline, &NoiseModel::with_seed(derive_seed(seed, 1)), FRAME_RATE_HZ as f64))
}

/// Runs a whole frame stream through a fresh session.
pub fn run_session(
    cfg: SessionConfig,
    classifier: Box<dyn Classifier>,
    frames: impl IntoIterator<Item = RawFrame>,
) -> Result<Vec<StateEvent>, SessionError> {
    let mut resampler = Resampler::new(cfg.input_rate_hz, cfg.frame_rate_hz);
    let resample = cfg.input_rate_hz != cfg.frame_rate_hz;
    let mut session = Session::new(cfg, classifier)?;
    let mut events = Vec::new();
    for f in frames {
        let ticks = if resample { resampler.push(&f) } else { vec![f] };
        for t in &ticks {
            events.extend(session.push_raw(t)?);
        }
    }
    Ok(events)
}

/// Joins events as newline-terminated JSON lines.
pub fn event_log(events: &[StateEvent]) -> String {
    events.iter().map(|e| e.to_line() + "\n").collect()
}
