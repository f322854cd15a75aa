//! Serial frame records and `.skn` capture files.
//!
//! Record layout, all little-endian:
//!
//! ```text
//! offset  size  field
//!      0     2  magic 0xA5 0x5A
//!      2     4  seq (u32)
//!      6     8  timestamp_us (u64)
//!     14   200  counts, 100 × u16, row-major
//!    214     2  CRC-16/CCITT-FALSE over bytes 2..214
//! ```
//!
//! A capture file is a plain concatenation of records.

use std::fs;
use std::io;
use std::path::Path;

use crc::{Crc, CRC_16_IBM_3740};

use crate::frame::{RawFrame, CHANNELS};

pub const MAGIC: [u8; 2] = [0xA5, 0x5A];
pub const PAYLOAD_LEN: usize = 4 + 8 + 2 * CHANNELS;
pub const RECORD_LEN: usize = 2 + PAYLOAD_LEN + 2;

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection.
const CCITT: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

pub fn crc16(bytes: &[u8]) -> u16 {
    CCITT.checksum(bytes)
}

/// Appends one record to `out`.
///
/// Panics if the frame does not hold exactly 100 channels.
pub fn encode_frame(frame: &RawFrame, out: &mut Vec<u8>) {
    assert_eq!(frame.counts.len(), CHANNELS, "frame must hold {CHANNELS} channels");
    out.extend_from_slice(&MAGIC);
    let start = out.len();
    out.extend_from_slice(&frame.seq.to_le_bytes());
    out.extend_from_slice(&frame.timestamp_us.to_le_bytes());
    for c in &frame.counts {
        out.extend_from_slice(&c.to_le_bytes());
    }
    let crc = crc16(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
}

pub fn encode_wire(frames: &[RawFrame]) -> Vec<u8> {
    let mut out = Vec::with_capacity(frames.len() * RECORD_LEN);
    for f in frames {
        encode_frame(f, &mut out);
    }
    out
}

/// Parses the payload of a record whose CRC already checked out.
fn parse_payload(p: &[u8]) -> RawFrame {
    let seq = u32::from_le_bytes(p[0..4].try_into().unwrap());
    let timestamp_us = u64::from_le_bytes(p[4..12].try_into().unwrap());
    let counts = p[12..]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    RawFrame {
        counts,
        seq,
        timestamp_us,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecodeStats {
    pub frames: usize,
    /// Candidate records whose checksum did not match; each was dropped.
    pub crc_failures: usize,
    /// Bytes discarded while searching for the next magic.
    pub skipped_bytes: usize,
    /// Bytes of an incomplete record left at the end of the stream.
    pub truncated_bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub frames: Vec<RawFrame>,
    pub stats: DecodeStats,
}

/// Incremental decoder that resynchronizes on the magic after corruption.
#[derive(Debug, Default)]
pub struct StreamDecoder {
    buf: Vec<u8>,
    stats: DecodeStats,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> DecodeStats {
        self.stats
    }

    /// Feeds bytes and returns every complete, checksum-valid frame.
    pub fn push(&mut self, bytes: &[u8]) -> Vec<RawFrame> {
        self.buf.extend_from_slice(bytes);
        let mut frames = Vec::new();
        let mut pos = 0;
        loop {
            let Some(rel) = self.buf[pos..].windows(2).position(|w| w == MAGIC) else {
                // Keep a trailing 0xA5 that may start the next magic.
                let keep = usize::from(self.buf.last() == Some(&MAGIC[0]));
                let end = self.buf.len() - keep;
                self.stats.skipped_bytes += end.saturating_sub(pos);
                pos = end.max(pos);
                break;
            };
            self.stats.skipped_bytes += rel;
            let at = pos + rel;
            if at + RECORD_LEN > self.buf.len() {
                pos = at;
                break;
            }
            let payload = &self.buf[at + 2..at + 2 + PAYLOAD_LEN];
            let stored = u16::from_le_bytes([self.buf[at + RECORD_LEN - 2], self.buf[at + RECORD_LEN - 1]]);
            if crc16(payload) == stored {
                frames.push(parse_payload(payload));
                self.stats.frames += 1;
                pos = at + RECORD_LEN;
            } else {
                self.stats.crc_failures += 1;
                self.stats.skipped_bytes += 1;
                pos = at + 1;
            }
        }
        self.buf.drain(..pos);
        frames
    }

    /// Ends the stream; leftover bytes count as a truncated record.
    pub fn finish(mut self) -> DecodeStats {
        self.stats.truncated_bytes = self.buf.len();
        self.stats
    }
}

/// Decodes a complete byte stream. Never fails: damage shows up in the stats.
pub fn decode_wire(bytes: &[u8]) -> Decoded {
    let mut dec = StreamDecoder::new();
    let frames = dec.push(bytes);
    Decoded {
        frames,
        stats: dec.finish(),
    }
}

pub fn write_capture(path: impl AsRef<Path>, frames: &[RawFrame]) -> io::Result<()> {
    fs::write(path, encode_wire(frames))
}

pub fn read_capture(path: impl AsRef<Path>) -> io::Result<Decoded> {
    Ok(decode_wire(&fs::read(path)?))
}
