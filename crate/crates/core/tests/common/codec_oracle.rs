//! Random frame streams and byte damage with the expected decode result.

use std::collections::BTreeSet;

use proptest::prelude::*;
use tactile_core::frame::CHANNELS;
use tactile_core::wire::RECORD_LEN;
use tactile_core::RawFrame;

pub fn frame_strategy() -> impl Strategy<Value = RawFrame> {
    (prop::collection::vec(any::<u16>(), CHANNELS), any::<u32>(), any::<u64>()).prop_map(|(counts, seq, timestamp_us)| RawFrame {
        counts,
        seq,
        timestamp_us,
    })
}

pub fn frames_strategy(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<RawFrame>> {
    prop::collection::vec(frame_strategy(), len)
}

/// A damaged byte: which record, where inside it, and the nonzero XOR mask.
pub type Hit = (prop::sample::Index, prop::sample::Index, u8);

pub fn hits_strategy(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Hit>> {
    prop::collection::vec((any::<prop::sample::Index>(), any::<prop::sample::Index>(), 1..=255u8), len)
}

/// XORs one byte into each chosen record and returns the records touched.
/// A second hit on an already damaged record is skipped: one damaged byte
/// per record is always caught by the CRC, while several could cancel.
pub fn corrupt(bytes: &mut [u8], hits: &[Hit]) -> BTreeSet<usize> {
    let mut damaged = BTreeSet::new();
    let records = bytes.len() / RECORD_LEN;
    if records == 0 {
        return damaged;
    }
    for (rec, off, mask) in hits {
        let r = rec.index(records);
        if damaged.insert(r) {
            bytes[r * RECORD_LEN + off.index(RECORD_LEN)] ^= mask;
        }
    }
    damaged
}

/// The frames a correct decoder must recover: every record left untouched.
pub fn surviving(frames: &[RawFrame], damaged: &BTreeSet<usize>) -> Vec<RawFrame> {
    frames
        .iter()
        .enumerate()
        .filter(|(i, _)| !damaged.contains(i))
        .map(|(_, f)| f.clone())
        .collect()
}
