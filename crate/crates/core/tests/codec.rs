//! Wire codec properties over random streams and random damage.

mod common;

use common::codec_oracle::{corrupt, frames_strategy, hits_strategy, surviving};
use proptest::prelude::*;
use tactile_core::wire::{decode_wire, encode_wire, StreamDecoder, RECORD_LEN};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn decode_inverts_encode(frames in frames_strategy(0..40)) {
        let bytes = encode_wire(&frames);
        prop_assert_eq!(bytes.len(), frames.len() * RECORD_LEN);
        let out = decode_wire(&bytes);
        prop_assert_eq!(out.stats.frames, frames.len());
        prop_assert_eq!(out.stats.crc_failures + out.stats.skipped_bytes + out.stats.truncated_bytes, 0);
        prop_assert_eq!(out.frames, frames);
    }

    #[test]
    fn corruption_drops_exactly_the_damaged_frames(
        frames in frames_strategy(1..30),
        hits in hits_strategy(1..12),
    ) {
        let mut bytes = encode_wire(&frames);
        let damaged = corrupt(&mut bytes, &hits);
        let out = decode_wire(&bytes);
        prop_assert_eq!(out.frames, surviving(&frames, &damaged));
    }

    #[test]
    fn chunking_never_changes_the_result(
        frames in frames_strategy(1..20),
        cuts in prop::collection::vec(1..600usize, 1..20),
        hits in hits_strategy(0..4),
    ) {
        let mut bytes = encode_wire(&frames);
        corrupt(&mut bytes, &hits);
        let whole = decode_wire(&bytes);
        let mut dec = StreamDecoder::new();
        let mut got = Vec::new();
        let mut rest = &bytes[..];
        for c in cuts.iter().cycle() {
            if rest.is_empty() {
                break;
            }
            let (head, tail) = rest.split_at((*c).min(rest.len()));
            got.extend(dec.push(head));
            rest = tail;
        }
        prop_assert_eq!(got, whole.frames);
        prop_assert_eq!(dec.finish(), whole.stats);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..2000)) {
        let out = decode_wire(&bytes);
        prop_assert!(out.stats.frames == out.frames.len());
    }

    #[test]
    fn garbage_between_records_is_skipped(
        frames in frames_strategy(1..10),
        junk in prop::collection::vec(prop::collection::vec(0u8..0xA5, 0..50), 10),
    ) {
        let mut bytes = Vec::new();
        for (f, j) in frames.iter().zip(&junk) {
            bytes.extend_from_slice(j);
            bytes.extend(encode_wire(std::slice::from_ref(f)));
        }
        let out = decode_wire(&bytes);
        prop_assert_eq!(out.stats.skipped_bytes, junk.iter().take(frames.len()).map(Vec::len).sum::<usize>());
        prop_assert_eq!(out.frames, frames);
    }
}
