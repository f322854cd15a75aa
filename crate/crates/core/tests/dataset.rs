//! Augmentation, split and `.tds` properties.

use proptest::prelude::*;
use tactile_core::dataset::{
    augment_recording, augment_recording_traced, build_dataset, load_dataset, save_dataset, stratified_split,
    synthetic_recordings, DatasetError, SLICE_LEN, TRAIN_PERCENT,
};
use tactile_core::frame::{CHANNELS, CLAMP_MAX, CLAMP_MIN};
use tactile_core::sim::NoiseModel;
use tactile_core::{Dataset, GestureClass, GestureWindow, Recording, Sample, Split, TactileFrame, WINDOW_LEN};

/// A recording whose every value is distinct, so overlaid frames can be traced
/// back to their source index.
fn patterned(class: GestureClass, len: usize, span: (usize, usize), phase: f64) -> Recording {
    let frames = (0..len)
        .map(|t| TactileFrame {
            values: (0..CHANNELS).map(|c| ((t * CHANNELS + c) as f64 * 0.37 + phase).sin() * 0.6).collect(),
            timestamp_us: t as u64 * 5000,
        })
        .collect();
    Recording::new(class, frames, span).unwrap()
}

fn recording_strategy() -> impl Strategy<Value = Recording> {
    (5usize..60, 0usize..30, 0usize..30, 0.0..6.0f64, 0..GestureClass::COUNT).prop_map(|(core, lead, tail, phase, c)| {
        patterned(GestureClass::from_index(c).unwrap(), lead + core + tail, (lead, lead + core), phase)
    })
}

fn class_strategy() -> impl Strategy<Value = GestureClass> {
    (0..GestureClass::COUNT).prop_map(|i| GestureClass::from_index(i).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn placed_slices_stay_inside_core_and_window(rec in recording_strategy(), seed in any::<u64>()) {
        let out = augment_recording_traced(&rec, 40, seed, &NoiseModel::silent()).unwrap();
        prop_assert_eq!(out.len(), 40);
        let core = rec.core_len();
        for (s, p) in &out {
            prop_assert_eq!(s.label, rec.class);
            prop_assert!(p.len >= SLICE_LEN.0.min(core) && p.len <= SLICE_LEN.1.min(core));
            prop_assert!(p.slice_start >= rec.core_span.0 && p.slice_start + p.len <= rec.core_span.1);
            prop_assert!(p.offset + p.len <= WINDOW_LEN);
            // Over a silent canvas the window is exactly the slice, zero elsewhere.
            for t in 0..WINDOW_LEN {
                let row = s.window.frame(t);
                if t >= p.offset && t < p.offset + p.len {
                    let src = &rec.frames[p.slice_start + t - p.offset].values;
                    for (got, want) in row.iter().zip(src) {
                        prop_assert_eq!(*got, want.clamp(CLAMP_MIN, CLAMP_MAX) as f32);
                    }
                } else {
                    prop_assert!(row.iter().all(|v| *v == 0.0));
                }
            }
        }
    }

    #[test]
    fn augmentation_is_a_pure_function_of_the_seed(rec in recording_strategy(), seed in any::<u64>(), n in 0usize..20) {
        let a = augment_recording(&rec, n, seed).unwrap();
        prop_assert_eq!(a.len(), n);
        prop_assert_eq!(a, augment_recording(&rec, n, seed).unwrap());
    }

    #[test]
    fn windows_stay_in_the_normalized_band(rec in recording_strategy(), seed in any::<u64>()) {
        for s in augment_recording(&rec, 10, seed).unwrap() {
            prop_assert!(s.window.as_slice().iter().all(|v| (CLAMP_MIN as f32..=CLAMP_MAX as f32).contains(v)));
        }
    }

    #[test]
    fn split_is_stratified(labels in prop::collection::vec(class_strategy(), 1..600)) {
        let split = stratified_split(&labels);
        prop_assert_eq!(split.len(), labels.len());
        let train_total = split.iter().filter(|s| **s == Split::Train).count();
        prop_assert_eq!(train_total, (labels.len() * TRAIN_PERCENT + 50) / 100);
        for class in GestureClass::ALL {
            let n = labels.iter().filter(|l| **l == class).count();
            let train = labels.iter().zip(&split).filter(|(l, s)| **l == class && **s == Split::Train).count();
            let exact = n as f64 * TRAIN_PERCENT as f64 / 100.0;
            prop_assert!((train as f64 - exact).abs() < 1.0, "{class}: {train} of {n}");
        }
    }

    #[test]
    fn tds_round_trips(labels in prop::collection::vec((class_strategy(), any::<bool>(), any::<u32>()), 0..12), seed in any::<u64>()) {
        let ds = Dataset {
            samples: labels
                .iter()
                .map(|(label, _, fill)| Sample {
                    window: GestureWindow::from_vec((0..GestureWindow::LEN).map(|i| (i as u32 ^ fill) as f32 * 1e-6).collect()).unwrap(),
                    label: *label,
                })
                .collect(),
            split: labels.iter().map(|(_, v, _)| if *v { Split::Val } else { Split::Train }).collect(),
            seed,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tds");
        save_dataset(&ds, &path).unwrap();
        prop_assert_eq!(load_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn damaged_tds_is_rejected(cut in 0usize..1000, flip in any::<prop::sample::Index>()) {
        let ds = build_dataset(&[patterned(GestureClass::RotateXPos, 40, (5, 35), 0.0)], 3, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tds");
        save_dataset(&ds, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        std::fs::write(&path, &bytes[..bytes.len() - 1 - cut.min(bytes.len() - 1)]).unwrap();
        prop_assert!(load_dataset(&path).is_err());

        let mut flipped = bytes.clone();
        let i = flip.index(flipped.len());
        flipped[i] ^= 0x40;
        std::fs::write(&path, &flipped).unwrap();
        prop_assert!(load_dataset(&path).is_err());
    }
}

#[test]
fn per_recording_counts_multiply_out() {
    let recs: Vec<Recording> = synthetic_recordings(1, 5).iter().map(|r| r.process().unwrap()).collect();
    assert_eq!(recs.len(), GestureClass::COUNT);
    let ds = build_dataset(&recs, 7, 3).unwrap();
    assert_eq!(ds.len(), 7 * GestureClass::COUNT);
    assert!(ds.class_counts(None).iter().all(|&c| c == 7));
    assert_eq!(ds.indices(Split::Train).len(), (ds.len() * TRAIN_PERCENT + 50) / 100);
}

#[test]
fn empty_input_is_an_error() {
    assert!(matches!(build_dataset(&[], 10, 0), Err(DatasetError::Empty)));
}
