//! Inputs shared by the pipeline benchmarks.

use tactile_core::dataset::{self, Sample};
use tactile_core::wire;
use tactile_core::RawFrame;

/// Realistic augmented windows, one recording per class.
pub fn samples(per_recording: usize, seed: u64) -> Vec<Sample> {
    let recs: Vec<_> = dataset::synthetic_recordings(1, seed)
        .iter()
        .map(|r| r.process().expect("synthetic recordings process"))
        .collect();
    dataset::build_dataset(&recs, per_recording, seed).expect("nonempty").samples
}

/// One second of raw frames from a synthetic recording.
pub fn raw_frames(seed: u64) -> Vec<RawFrame> {
    let rec = dataset::synthetic_recordings(1, seed).swap_remove(0);
    rec.raw.into_iter().take(200).collect()
}

pub fn encoded(frames: &[RawFrame]) -> Vec<u8> {
    wire::encode_wire(frames)
}
