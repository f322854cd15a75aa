//! Synthetic skin: contact model, gesture scripts and frame-stream rendering.

pub mod contact;
pub mod render;
pub mod script;

pub use contact::{contact_footprint, pressure_to_response, ContactPoint};
pub use render::{render, render_timeline, NoiseModel, Timeline, BASELINE_COUNTS, COUNTS_PER_UNIT};
pub use script::{invalid_script, invalid_script_of, script_for, FingerTrack, GestureScript, InvalidKind, Path};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("stress must be nonnegative, got {0} kPa")]
    NegativeStress(f64),
    #[error("the invalid class has no canonical script; use invalid_script")]
    InvalidHasNoCanonicalScript,
}
