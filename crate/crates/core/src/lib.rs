//! Tactile-skin gesture pipeline.
//!
//! A 10×10 capacitive grid sampled at 200 Hz is calibrated, filtered and
//! cut into 30-frame windows; a convolution–transformer classifier maps each
//! window to one of 15 gesture classes, and a dwell/preemption state machine
//! turns the detections into task-space velocity commands for a simulated
//! end effector.
//!
//! Module map:
//!
//! - [`frame`]: raw/normalized frame types, calibration, baseline subtraction, moving average
//! - [`sim`]: parametric contact model, gesture scripts, stream rendering
//! - [`wire`]: the framed serial record codec and `.skn` captures
//! - [`dataset`]: recordings, augmentation, stratified split, `.tds` files
//! - [`model`]: hybrid conv–transformer and BiLSTM classifiers, training, `.twt` files
//! - [`control`]: velocity profiles, pose integration, the gesture state machine
//! - [`session`]: the streaming runtime, resampling and event records

pub mod control;
pub mod dataset;
pub mod frame;
pub mod gesture;
pub mod model;
pub mod session;
pub mod sim;
pub mod wire;

pub use control::{Action, AuxTarget, ControlConfig, Pose, SessionState, Twist};
pub use dataset::{Dataset, Recording, Sample, Split};
pub use frame::{Baseline, GestureWindow, RawFrame, TactileFrame, GRID, WINDOW_LEN};
pub use gesture::GestureClass;
pub use model::{Arch, EvalReport, Model, ModelConfig, TrainConfig};
pub use session::{Session, SessionConfig, StateEvent};

/// Sensor frame rate in Hz.
pub const FRAME_RATE_HZ: u32 = 200;

/// Seconds per frame tick at [`FRAME_RATE_HZ`].
pub const TICK_S: f64 = 1.0 / FRAME_RATE_HZ as f64;
