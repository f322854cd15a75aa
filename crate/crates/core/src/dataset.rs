//! Recordings, window augmentation, stratified splitting and `.tds` files.
//!
//! A recording is a processed frame stream with a marked core span (the
//! frames during which the gesture is in contact). Each training sample is a
//! 30-frame canvas of filtered background noise with a random-length slice
//! of a recording's core added at a random temporal offset.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crc::{Crc, CRC_32_ISO_HDLC};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::frame::{
    self, GestureWindow, MovingAverage, RawFrame, TactileFrame, CALIBRATION_FRAMES, CHANNELS, CLAMP_MAX,
    CLAMP_MIN, FILTER_WINDOW, WINDOW_LEN,
};
use crate::gesture::GestureClass;
use crate::sim::{self, invalid_script_of, script_for, InvalidKind, NoiseModel, Timeline, COUNTS_PER_UNIT};
use crate::wire;
use crate::FRAME_RATE_HZ;

/// Shortest and longest slice of core frames placed in a window.
pub const SLICE_LEN: (usize, usize) = (10, 30);
/// Minimum usable core span.
pub const MIN_CORE_LEN: usize = 5;
/// Training share of each class, in percent.
pub const TRAIN_PERCENT: usize = 85;

const TDS_MAGIC: &[u8; 4] = b"TDS\x01";
const TDS_VERSION: u32 = 1;
const TDS_HEADER_LEN: usize = 4 + 4 + 8 + 8 + 4 + 4;
const CRC32: Crc<u32> = Crc::<u32>::new(&CRC_32_ISO_HDLC);

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("core span {start}..{end} is shorter than {MIN_CORE_LEN} frames")]
    CoreTooShort { start: usize, end: usize },
    #[error("core span {start}..{end} exceeds the {len} recorded frames")]
    CoreOutOfBounds { start: usize, end: usize, len: usize },
    #[error("no recordings given")]
    Empty,
    #[error(transparent)]
    Frame(#[from] frame::FrameError),
    #[error("not a dataset file")]
    BadMagic,
    #[error("dataset format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("dataset file truncated: {got} of {expected} bytes")]
    Truncated { got: usize, expected: usize },
    #[error("dataset checksum mismatch")]
    Checksum,
    #[error("dataset file is malformed: {0}")]
    Corrupt(String),
    #[error("recording manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub class: GestureClass,
    pub frames: Vec<TactileFrame>,
    /// Half-open frame range of actual contact.
    pub core_span: (usize, usize),
}

impl Recording {
    pub fn new(
        class: GestureClass,
        frames: Vec<TactileFrame>,
        core_span: (usize, usize),
    ) -> Result<Self, DatasetError> {
        let (start, end) = core_span;
        if start > end || end > frames.len() || frames.is_empty() {
            return Err(DatasetError::CoreOutOfBounds {
                start,
                end,
                len: frames.len(),
            });
        }
        Ok(Self {
            class,
            frames,
            core_span,
        })
    }

    pub fn core_len(&self) -> usize {
        self.core_span.1 - self.core_span.0
    }
}

/// A raw capture (calibration rest included) with its label and core span,
/// the span counted in frames after the calibration period.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub class: GestureClass,
    pub raw: Vec<RawFrame>,
    pub core_span: (usize, usize),
}

impl RawRecording {
    /// Calibrates, subtracts and filters the capture.
    pub fn process(&self) -> Result<Recording, DatasetError> {
        let frames = frame::process_stream(&self.raw, COUNTS_PER_UNIT, FILTER_WINDOW)?;
        Recording::new(self.class, frames, self.core_span)
    }
}

const LEAD_IN_MS: f64 = 100.0;
const LEAD_OUT_MS: f64 = 150.0;
const CALIBRATION_MS: f64 = CALIBRATION_FRAMES as f64 * 1000.0 / FRAME_RATE_HZ as f64;

/// Renders a script as a capture: calibration rest, short idle lead-in, the
/// gesture, then an idle lead-out.
pub fn record_script(script: &sim::GestureScript, noise: &NoiseModel) -> RawRecording {
    let fps = FRAME_RATE_HZ as f64;
    let timeline = Timeline::new()
        .rest(CALIBRATION_MS + LEAD_IN_MS)
        .then(script.clone())
        .rest(LEAD_OUT_MS);
    let raw = sim::render_timeline(&timeline, noise, fps);
    let start = sim::render::frame_count(LEAD_IN_MS, fps);
    let len = sim::render::frame_count(script.duration_ms, fps);
    RawRecording {
        class: script.class,
        raw,
        core_span: (start, start + len),
    }
}

/// `per_class` recordings for each of the 14 gestures plus `per_class`
/// invalid recordings cycling through every invalid kind.
pub fn synthetic_recordings(per_class: usize, seed: u64) -> Vec<RawRecording> {
    synthetic_recordings_with(per_class, seed, None)
}

/// As [`synthetic_recordings`], optionally time-stretching every gesture
/// (not the invalid patterns) to a duration drawn uniformly from `durations`.
pub fn synthetic_recordings_with(per_class: usize, seed: u64, durations: Option<DurationRange>) -> Vec<RawRecording> {
    let mut out = Vec::with_capacity(per_class * GestureClass::COUNT);
    for class in GestureClass::ALL {
        for k in 0..per_class {
            let s = derive_seed(seed, (class.index() * 100_003 + k) as u64);
            let script = if class == GestureClass::Invalid {
                invalid_script_of(InvalidKind::ALL[k % InvalidKind::ALL.len()], s)
            } else {
                let script = script_for(class, s).expect("motion and aux classes have scripts");
                match durations {
                    Some(d) => script.with_duration(d.sample(derive_seed(s, 2))),
                    None => script,
                }
            };
            out.push(record_script(&script, &NoiseModel::with_seed(derive_seed(s, 1))));
        }
    }
    out
}

/// Closed range of gesture durations in ms, written `lo..hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurationRange {
    pub lo_ms: f64,
    pub hi_ms: f64,
}

impl DurationRange {
    fn sample(self, seed: u64) -> f64 {
        ChaCha8Rng::seed_from_u64(seed).gen_range(self.lo_ms..=self.hi_ms)
    }
}

impl std::str::FromStr for DurationRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("expected `lo..hi` in ms with 150 <= lo <= hi, got `{s}`");
        let (lo, hi) = s.split_once("..").ok_or_else(bad)?;
        let (lo_ms, hi_ms): (f64, f64) = (lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?);
        // Scripts shorter than one window are not gestures.
        if !(lo_ms >= 150.0 && lo_ms <= hi_ms && hi_ms.is_finite()) {
            return Err(bad());
        }
        Ok(Self { lo_ms, hi_ms })
    }
}

/// SplitMix64 step, used to derive independent child seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub window: GestureWindow,
    pub label: GestureClass,
}

/// Where a core slice landed inside a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub slice_start: usize,
    pub len: usize,
    pub offset: usize,
}

/// Filtered background noise for one window, matching what the live signal
/// chain produces at rest.
pub fn noise_canvas(noise: &NoiseModel, rng: &mut ChaCha8Rng) -> Vec<TactileFrame> {
    let warmup = FILTER_WINDOW;
    let dt = 1.0 / FRAME_RATE_HZ as f64;
    let t0: f64 = rng.gen_range(0.0..1.0);
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
    let mut filter = MovingAverage::new(FILTER_WINDOW);
    let mut out = Vec::with_capacity(WINDOW_LEN);
    for k in 0..warmup + WINDOW_LEN {
        let t = t0 + k as f64 * dt;
        let values = slopes
            .iter()
            .map(|s| {
                let n = if noise.gaussian_sigma > 0.0 {
                    gauss.sample(rng)
                } else {
                    0.0
                };
                s * t + n
            })
            .collect();
        let f = filter.push(&TactileFrame {
            values,
            timestamp_us: 0,
        });
        if k >= warmup {
            out.push(f);
        }
    }
    out
}

/// Adds `rec`'s core frames `[slice_start, slice_start + len)` onto the canvas
/// at `offset` and clamps.
pub fn overlay(canvas: &[TactileFrame], rec: &Recording, p: Placement) -> GestureWindow {
    let mut data = Vec::with_capacity(GestureWindow::LEN);
    for (t, c) in canvas.iter().enumerate().take(WINDOW_LEN) {
        let src = (t >= p.offset && t < p.offset + p.len).then(|| &rec.frames[p.slice_start + t - p.offset]);
        for ch in 0..CHANNELS {
            let v = c.values[ch] + src.map_or(0.0, |s| s.values[ch]);
            data.push(v.clamp(CLAMP_MIN, CLAMP_MAX) as f32);
        }
    }
    GestureWindow::from_vec(data).expect("canvas has 30 frames")
}

/// Draws a random placement for a recording.
pub fn random_placement(rec: &Recording, rng: &mut ChaCha8Rng) -> Placement {
    let core = rec.core_len();
    let len = rng.gen_range(SLICE_LEN.0..=SLICE_LEN.1).min(core);
    let slice_start = rng.gen_range(rec.core_span.0..=rec.core_span.1 - len);
    let offset = rng.gen_range(0..=WINDOW_LEN - len);
    Placement {
        slice_start,
        len,
        offset,
    }
}

/// `n` augmented windows with their placements, over the given canvas noise.
pub fn augment_recording_traced(
    rec: &Recording,
    n: usize,
    seed: u64,
    canvas_noise: &NoiseModel,
) -> Result<Vec<(Sample, Placement)>, DatasetError> {
    if rec.core_len() < MIN_CORE_LEN {
        return Err(DatasetError::CoreTooShort {
            start: rec.core_span.0,
            end: rec.core_span.1,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let p = random_placement(rec, &mut rng);
            let canvas = noise_canvas(canvas_noise, &mut rng);
            let sample = Sample {
                window: overlay(&canvas, rec, p),
                label: rec.class,
            };
            (sample, p)
        })
        .collect())
}

/// `n` augmented windows over default background noise.
pub fn augment_recording(rec: &Recording, n: usize, seed: u64) -> Result<Vec<Sample>, DatasetError> {
    let noise = NoiseModel::with_seed(0);
    Ok(augment_recording_traced(rec, n, seed, &noise)?
        .into_iter()
        .map(|(s, _)| s)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub split: Vec<Split>,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == which).collect()
    }

    /// Samples per class, indexed by [`GestureClass::index`].
    pub fn class_counts(&self, which: Option<Split>) -> [usize; GestureClass::COUNT] {
        let mut counts = [0; GestureClass::COUNT];
        for (s, sp) in self.samples.iter().zip(&self.split) {
            if which.map_or(true, |w| w == *sp) {
                counts[s.label.index()] += 1;
            }
        }
        counts
    }

    /// Keeps only the samples whose label passes `keep`, preserving split tags.
    pub fn filter_classes(&self, keep: impl Fn(GestureClass) -> bool) -> Dataset {
        let (samples, split) = self
            .samples
            .iter()
            .zip(&self.split)
            .filter(|(s, _)| keep(s.label))
            .map(|(s, sp)| (s.clone(), *sp))
            .unzip();
        Dataset {
            samples,
            split,
            seed: self.seed,
        }
    }
}

/// Stratified split: each class sends `floor(85% · n_c)` samples to training,
/// and the remaining training slots (so the total is `round(85% · N)`) go to
/// the classes with the largest fractional remainders.
pub fn stratified_split(labels: &[GestureClass]) -> Vec<Split> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); GestureClass::COUNT];
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    let total = (labels.len() * TRAIN_PERCENT + 50) / 100;
    let mut quota: Vec<usize> = by_class.iter().map(|v| v.len() * TRAIN_PERCENT / 100).collect();
    let assigned: usize = quota.iter().sum();
    let mut order: Vec<usize> = (0..GestureClass::COUNT).collect();
    order.sort_by_key(|&c| (std::cmp::Reverse(by_class[c].len() * TRAIN_PERCENT % 100), c));
    let mut extra = total.saturating_sub(assigned);
    for c in order {
        if extra == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            extra -= 1;
        }
    }
    let mut split = vec![Split::Val; labels.len()];
    for (c, idx) in by_class.iter().enumerate() {
        for &i in idx.iter().take(quota[c]) {
            split[i] = Split::Train;
        }
    }
    split
}

/// Augments every recording, shuffles deterministically and splits 85/15 by
/// class.
pub fn build_dataset(recordings: &[Recording], n_per_rec: usize, seed: u64) -> Result<Dataset, DatasetError> {
    if recordings.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut samples = Vec::with_capacity(recordings.len() * n_per_rec);
    for (i, rec) in recordings.iter().enumerate() {
        samples.extend(augment_recording(rec, n_per_rec, derive_seed(seed, i as u64))?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    samples.shuffle(&mut rng);
    let labels: Vec<GestureClass> = samples.iter().map(|s| s.label).collect();
    Ok(Dataset {
        split: stratified_split(&labels),
        samples,
        seed,
    })
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let mut digest = CRC32.digest();
    let mut put = |w: &mut BufWriter<fs::File>, bytes: &[u8]| -> io::Result<()> {
        digest.update(bytes);
        w.write_all(bytes)
    };
    put(&mut w, TDS_MAGIC)?;
    put(&mut w, &TDS_VERSION.to_le_bytes())?;
    put(&mut w, &(ds.len() as u64).to_le_bytes())?;
    put(&mut w, &ds.seed.to_le_bytes())?;
    put(&mut w, &(WINDOW_LEN as u32).to_le_bytes())?;
    put(&mut w, &(CHANNELS as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(GestureWindow::LEN * 4);
    for s in &ds.samples {
        buf.clear();
        for v in s.window.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        put(&mut w, &buf)?;
    }
    let labels: Vec<u8> = ds.samples.iter().map(|s| s.label.index() as u8).collect();
    put(&mut w, &labels)?;
    let split: Vec<u8> = ds.split.iter().map(|s| u8::from(*s == Split::Val)).collect();
    put(&mut w, &split)?;
    let crc = digest.finalize();
    w.write_all(&crc.to_le_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    decode_dataset(&fs::read(path)?)
}

fn decode_dataset(bytes: &[u8]) -> Result<Dataset, DatasetError> {
    if bytes.len() >= 4 && &bytes[..4] != TDS_MAGIC {
        return Err(DatasetError::BadMagic);
    }
    if bytes.len() < TDS_HEADER_LEN {
        return Err(DatasetError::Truncated {
            got: bytes.len(),
            expected: TDS_HEADER_LEN,
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != TDS_VERSION {
        return Err(DatasetError::VersionMismatch {
            found: version,
            expected: TDS_VERSION,
        });
    }
    let n = usize::try_from(u64_at(8)).map_err(|_| DatasetError::Corrupt("sample count".into()))?;
    let seed = u64_at(16);
    if u32_at(24) as usize != WINDOW_LEN || u32_at(28) as usize != CHANNELS {
        return Err(DatasetError::Corrupt("window shape".into()));
    }
    let expected = n
        .checked_mul(GestureWindow::LEN * 4 + 2)
        .and_then(|b| b.checked_add(TDS_HEADER_LEN + 4))
        .ok_or_else(|| DatasetError::Corrupt("sample count".into()))?;
    if bytes.len() < expected {
        return Err(DatasetError::Truncated {
            got: bytes.len(),
            expected,
        });
    }
    if bytes.len() > expected {
        return Err(DatasetError::Corrupt(format!("{} trailing bytes", bytes.len() - expected)));
    }
    let body = &bytes[..expected - 4];
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
    if CRC32.checksum(body) != stored {
        return Err(DatasetError::Checksum);
    }
    let tensors = &body[TDS_HEADER_LEN..TDS_HEADER_LEN + n * GestureWindow::LEN * 4];
    let labels = &body[TDS_HEADER_LEN + n * GestureWindow::LEN * 4..][..n];
    let splits = &body[TDS_HEADER_LEN + n * GestureWindow::LEN * 4 + n..];
    let mut samples = Vec::with_capacity(n);
    for (chunk, &l) in tensors.chunks_exact(GestureWindow::LEN * 4).zip(labels) {
        let data = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let label = GestureClass::from_index(l as usize)
            .ok_or_else(|| DatasetError::Corrupt(format!("label {l}")))?;
        samples.push(Sample {
            window: GestureWindow::from_vec(data)?,
            label,
        });
    }
    let split = splits
        .iter()
        .map(|&b| match b {
            0 => Ok(Split::Train),
            1 => Ok(Split::Val),
            _ => Err(DatasetError::Corrupt(format!("split tag {b}"))),
        })
        .collect::<Result<_, _>>()?;
    Ok(Dataset { samples, split, seed })
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    class: GestureClass,
    core_start: usize,
    core_end: usize,
}

/// Writes each recording as a `.skn` capture plus a `manifest.json` index.
pub fn save_recordings(dir: impl AsRef<Path>, recs: &[RawRecording]) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = Vec::with_capacity(recs.len());
    for (i, r) in recs.iter().enumerate() {
        let file = format!("{:04}_{}.skn", i, r.class);
        wire::write_capture(dir.join(&file), &r.raw)?;
        manifest.push(ManifestEntry {
            file,
            class: r.class,
            core_start: r.core_span.0,
            core_end: r.core_span.1,
        });
    }
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_recordings(dir: impl AsRef<Path>) -> Result<Vec<RawRecording>, DatasetError> {
    let dir = dir.as_ref();
    let manifest: Vec<ManifestEntry> = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    manifest
        .into_iter()
        .map(|m| {
            let decoded = wire::read_capture(dir.join(&m.file))?;
            Ok(RawRecording {
                class: m.class,
                raw: decoded.frames,
                core_span: (m.core_start, m.core_end),
            })
        })
        .collect()
}
