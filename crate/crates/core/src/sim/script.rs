//! Parametric gesture scripts.
//!
//! Every gesture class has a canonical trajectory family; a seed picks the
//! start position, speed, pressure and finger spacing inside fixed ranges
//! that keep the whole gesture on the 10×10 aperture.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::gesture::GestureClass;

use super::contact::ContactPoint;
use super::SimError;

pub const PEAK_STRESS_KPA: (f64, f64) = (20.0, 90.0);
pub const SIGMA_CELLS: (f64, f64) = (0.6, 1.1);
pub const SWIPE_LENGTH_CELLS: (f64, f64) = (4.0, 8.0);
pub const DURATION_MS: (f64, f64) = (200.0, 600.0);
pub const FINGER_SPACING_CELLS: (f64, f64) = (2.0, 4.0);

/// Lowest and highest coordinate a finger center may take.
const EDGE: (f64, f64) = (0.5, 8.5);

/// A finger path parametrized over `s ∈ [0, 1]` at constant speed.
#[derive(Debug, Clone, PartialEq)]
pub enum Path {
    Point((f64, f64)),
    Line {
        from: (f64, f64),
        to: (f64, f64),
    },
    Arc {
        center: (f64, f64),
        radius: f64,
        start_angle: f64,
        /// Signed; negative is clockwise when viewed facing the skin.
        sweep: f64,
    },
    Polyline(Vec<(f64, f64)>),
}

impl Path {
    pub fn at(&self, s: f64) -> (f64, f64) {
        let s = s.clamp(0.0, 1.0);
        match self {
            Path::Point(p) => *p,
            Path::Line { from, to } => lerp2(*from, *to, s),
            Path::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let a = start_angle + sweep * s;
                (center.0 + radius * a.cos(), center.1 + radius * a.sin())
            }
            Path::Polyline(pts) => {
                if pts.len() == 1 {
                    return pts[0];
                }
                let seg_len: Vec<f64> = pts.windows(2).map(|w| dist(w[0], w[1])).collect();
                let total: f64 = seg_len.iter().sum();
                if total == 0.0 {
                    return pts[0];
                }
                let mut target = s * total;
                for (i, &len) in seg_len.iter().enumerate() {
                    if target <= len || i == seg_len.len() - 1 {
                        let f = if len > 0.0 { (target / len).min(1.0) } else { 0.0 };
                        return lerp2(pts[i], pts[i + 1], f);
                    }
                    target -= len;
                }
                *pts.last().unwrap()
            }
        }
    }
}

fn lerp2(a: (f64, f64), b: (f64, f64), s: f64) -> (f64, f64) {
    (a.0 + (b.0 - a.0) * s, a.1 + (b.1 - a.1) * s)
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// One finger's contact over `[start_ms, end_ms)`, with pressure ramping
/// linearly from `peak_start` to `peak_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerTrack {
    pub path: Path,
    pub start_ms: f64,
    pub end_ms: f64,
    pub peak_start: f64,
    pub peak_end: f64,
    pub sigma: f64,
}

impl FingerTrack {
    fn over(path: Path, duration_ms: f64, peak: f64, sigma: f64) -> Self {
        Self {
            path,
            start_ms: 0.0,
            end_ms: duration_ms,
            peak_start: peak,
            peak_end: peak,
            sigma,
        }
    }

    fn progress(&self, t_ms: f64) -> f64 {
        let span = self.end_ms - self.start_ms;
        if span <= 0.0 {
            0.0
        } else {
            ((t_ms - self.start_ms) / span).clamp(0.0, 1.0)
        }
    }

    pub fn contact_at(&self, t_ms: f64) -> Option<ContactPoint> {
        if t_ms < self.start_ms || t_ms >= self.end_ms {
            return None;
        }
        let s = self.progress(t_ms);
        Some(ContactPoint {
            center: self.path.at(s),
            peak_stress: self.peak_start + (self.peak_end - self.peak_start) * s,
            sigma: self.sigma,
        })
    }

    /// Finger center at time `t_ms`, clamped to the track's span.
    pub fn position_at(&self, t_ms: f64) -> (f64, f64) {
        self.path.at(self.progress(t_ms))
    }
}

/// The flavors of contact that must never trigger a robot action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvalidKind {
    NoContact,
    Tap,
    ThreeFingerSwipe,
    Scribble,
    StaticRest,
}

impl InvalidKind {
    pub const ALL: [InvalidKind; 5] = [
        InvalidKind::NoContact,
        InvalidKind::Tap,
        InvalidKind::ThreeFingerSwipe,
        InvalidKind::Scribble,
        InvalidKind::StaticRest,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct GestureScript {
    pub class: GestureClass,
    pub fingers: Vec<FingerTrack>,
    pub duration_ms: f64,
}

impl GestureScript {
    pub fn contacts_at(&self, t_ms: f64) -> Vec<ContactPoint> {
        self.fingers.iter().filter_map(|f| f.contact_at(t_ms)).collect()
    }

    /// Time-stretches the script to a new total duration.
    pub fn with_duration(mut self, duration_ms: f64) -> Self {
        let k = if self.duration_ms > 0.0 {
            duration_ms / self.duration_ms
        } else {
            1.0
        };
        for f in &mut self.fingers {
            f.start_ms *= k;
            f.end_ms *= k;
        }
        self.duration_ms = duration_ms;
        self
    }

    /// Mean finger position at time `t_ms`; `None` when no finger is down.
    pub fn centroid_at(&self, t_ms: f64) -> Option<(f64, f64)> {
        let pts = self.contacts_at(t_ms);
        if pts.is_empty() {
            return None;
        }
        let n = pts.len() as f64;
        Some((
            pts.iter().map(|p| p.center.0).sum::<f64>() / n,
            pts.iter().map(|p| p.center.1).sum::<f64>() / n,
        ))
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    rng.gen_range(range.0..=range.1)
}

/// Axis-aligned swipe of `fingers` fingers spread perpendicular to the motion.
fn swipe(
    rng: &mut ChaCha8Rng,
    class: GestureClass,
    fingers: usize,
    vertical: bool,
    positive: bool,
    spacing: f64,
    length_range: (f64, f64),
) -> GestureScript {
    let duration = uniform(rng, DURATION_MS);
    let sigma = uniform(rng, SIGMA_CELLS);
    let length = uniform(rng, length_range);
    let start = uniform(rng, (EDGE.0, EDGE.1 - length));
    let (a0, a1) = if positive {
        (start, start + length)
    } else {
        (start + length, start)
    };
    let spread = spacing * (fingers as f64 - 1.0);
    let lo = EDGE.0 + 1.0;
    let perp0 = uniform(rng, (lo, (EDGE.1 - 1.0 - spread).max(lo)));
    let tracks = (0..fingers)
        .map(|i| {
            let perp = perp0 + spacing * i as f64;
            let (from, to) = if vertical {
                ((perp, a0), (perp, a1))
            } else {
                ((a0, perp), (a1, perp))
            };
            FingerTrack::over(
                Path::Line { from, to },
                duration,
                uniform(rng, PEAK_STRESS_KPA),
                sigma,
            )
        })
        .collect();
    GestureScript {
        class,
        fingers: tracks,
        duration_ms: duration,
    }
}

/// Fingers spread evenly around a center, moving radially between two radii.
fn radial(
    rng: &mut ChaCha8Rng,
    class: GestureClass,
    fingers: usize,
    center: (f64, f64),
    r_from: f64,
    r_to: f64,
    angle_jitter: f64,
) -> GestureScript {
    let duration = uniform(rng, DURATION_MS);
    let sigma = uniform(rng, SIGMA_CELLS);
    let phase = rng.gen_range(0.0..TAU);
    let tracks = (0..fingers)
        .map(|k| {
            let a = phase + TAU * k as f64 / fingers as f64 + rng.gen_range(-angle_jitter..=angle_jitter);
            let (c, s) = (a.cos(), a.sin());
            FingerTrack::over(
                Path::Line {
                    from: (center.0 + r_from * c, center.1 + r_from * s),
                    to: (center.0 + r_to * c, center.1 + r_to * s),
                },
                duration,
                uniform(rng, PEAK_STRESS_KPA),
                sigma,
            )
        })
        .collect();
    GestureScript {
        class,
        fingers: tracks,
        duration_ms: duration,
    }
}

/// The canonical script for a gesture class, randomized by `seed`.
pub fn script_for(class: GestureClass, seed: u64) -> Result<GestureScript, SimError> {
    use GestureClass::*;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let script = match class {
        TranslateZPos | TranslateZNeg => {
            swipe(rng, class, 1, true, class == TranslateZPos, 0.0, SWIPE_LENGTH_CELLS)
        }
        TranslateYPos | TranslateYNeg => {
            swipe(rng, class, 1, false, class == TranslateYPos, 0.0, SWIPE_LENGTH_CELLS)
        }
        RotateYPos | RotateYNeg => {
            let spacing = uniform(rng, FINGER_SPACING_CELLS);
            swipe(rng, class, 2, true, class == RotateYPos, spacing, SWIPE_LENGTH_CELLS)
        }
        RotateZPos | RotateZNeg => {
            let spacing = uniform(rng, FINGER_SPACING_CELLS);
            swipe(rng, class, 2, false, class == RotateZPos, spacing, SWIPE_LENGTH_CELLS)
        }
        TranslateXPos => {
            let center = (uniform(rng, (3.5, 5.5)), uniform(rng, (3.5, 5.5)));
            let r_from = uniform(rng, (2.0, 3.0));
            let r_to = uniform(rng, (0.5, 1.0));
            radial(rng, class, 2, center, r_from, r_to, 0.0)
        }
        TranslateXNeg => {
            let duration = uniform(rng, DURATION_MS);
            let sigma = uniform(rng, SIGMA_CELLS);
            let at = (uniform(rng, (2.0, 7.0)), uniform(rng, (2.0, 7.0)));
            let peak = uniform(rng, (50.0, 90.0));
            let start_frac = uniform(rng, (0.25, 0.4));
            GestureScript {
                class,
                fingers: vec![FingerTrack {
                    path: Path::Point(at),
                    start_ms: 0.0,
                    end_ms: duration,
                    peak_start: peak * start_frac,
                    peak_end: peak,
                    sigma,
                }],
                duration_ms: duration,
            }
        }
        RotateXPos | RotateXNeg => {
            let duration = uniform(rng, DURATION_MS);
            let sigma = uniform(rng, SIGMA_CELLS);
            let radius = uniform(rng, FINGER_SPACING_CELLS) / 2.0;
            let center = (uniform(rng, (3.5, 5.5)), uniform(rng, (3.5, 5.5)));
            let start = rng.gen_range(0.0..TAU);
            let magnitude = uniform(rng, (PI / 2.0, PI));
            let sweep = if class == RotateXPos { -magnitude } else { magnitude };
            let fingers = [0.0, PI]
                .iter()
                .map(|offset| {
                    FingerTrack::over(
                        Path::Arc {
                            center,
                            radius,
                            start_angle: start + offset,
                            sweep,
                        },
                        duration,
                        uniform(rng, PEAK_STRESS_KPA),
                        sigma,
                    )
                })
                .collect();
            GestureScript {
                class,
                fingers,
                duration_ms: duration,
            }
        }
        AuxInitPose | AuxHome => {
            let center = (uniform(rng, (4.0, 5.0)), uniform(rng, (4.0, 5.0)));
            let outer = uniform(rng, (3.0, 3.5));
            let inner = uniform(rng, (1.0, 1.5));
            let (from, to) = if class == AuxInitPose {
                (outer, inner)
            } else {
                (inner, outer)
            };
            radial(rng, class, 5, center, from, to, 0.2)
        }
        Invalid => return Err(SimError::InvalidHasNoCanonicalScript),
    };
    Ok(script)
}

/// A random non-actionable contact pattern.
pub fn invalid_script(seed: u64) -> GestureScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1d_a7a5_eed5);
    let kind = InvalidKind::ALL[rng.gen_range(0..InvalidKind::ALL.len())];
    invalid_script_of(kind, seed)
}

/// A non-actionable contact pattern of a chosen kind.
pub fn invalid_script_of(kind: InvalidKind, seed: u64) -> GestureScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let class = GestureClass::Invalid;
    match kind {
        InvalidKind::NoContact => GestureScript {
            class,
            fingers: Vec::new(),
            duration_ms: uniform(rng, DURATION_MS),
        },
        InvalidKind::Tap => {
            let duration = uniform(rng, (30.0, 90.0));
            let at = (uniform(rng, (1.0, 8.0)), uniform(rng, (1.0, 8.0)));
            GestureScript {
                class,
                fingers: vec![FingerTrack::over(
                    Path::Point(at),
                    duration,
                    uniform(rng, (40.0, 90.0)),
                    uniform(rng, SIGMA_CELLS),
                )],
                duration_ms: duration,
            }
        }
        InvalidKind::ThreeFingerSwipe => {
            let vertical = rng.gen_bool(0.5);
            let positive = rng.gen_bool(0.5);
            let spacing = uniform(rng, (1.8, 2.5));
            let mut s = swipe(rng, class, 3, vertical, positive, spacing, (4.0, 6.0));
            s.class = class;
            s
        }
        InvalidKind::Scribble => {
            let duration = uniform(rng, (300.0, 600.0));
            let heading = PI / 4.0 + PI / 2.0 * rng.gen_range(0..4) as f64 + rng.gen_range(-0.3..0.3);
            let mut pts = vec![(uniform(rng, (3.0, 6.0)), uniform(rng, (3.0, 6.0)))];
            let segments = rng.gen_range(4..=6);
            for k in 0..segments {
                let back = if k % 2 == 1 { PI } else { 0.0 };
                let a = heading + back + rng.gen_range(-0.5..0.5);
                let step = uniform(rng, (1.5, 3.0));
                let last = *pts.last().unwrap();
                pts.push((
                    (last.0 + step * a.cos()).clamp(EDGE.0, EDGE.1),
                    (last.1 + step * a.sin()).clamp(EDGE.0, EDGE.1),
                ));
            }
            GestureScript {
                class,
                fingers: vec![FingerTrack::over(
                    Path::Polyline(pts),
                    duration,
                    uniform(rng, PEAK_STRESS_KPA),
                    uniform(rng, SIGMA_CELLS),
                )],
                duration_ms: duration,
            }
        }
        InvalidKind::StaticRest => {
            let duration = uniform(rng, DURATION_MS);
            let sigma = uniform(rng, SIGMA_CELLS);
            let n = rng.gen_range(3..=4);
            let mut centers: Vec<(f64, f64)> = Vec::new();
            while centers.len() < n {
                let c = (uniform(rng, (1.0, 8.0)), uniform(rng, (1.0, 8.0)));
                if centers.iter().all(|&o| dist(o, c) >= 2.0) {
                    centers.push(c);
                }
            }
            GestureScript {
                class,
                fingers: centers
                    .into_iter()
                    .map(|c| {
                        FingerTrack::over(Path::Point(c), duration, uniform(rng, (20.0, 60.0)), sigma)
                    })
                    .collect(),
                duration_ms: duration,
            }
        }
    }
}

/// Number of times the heading of a sampled path reverses along either axis.
pub fn direction_changes(points: &[(f64, f64)]) -> usize {
    let steps: Vec<(f64, f64)> = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0, w[1].1 - w[0].1))
        .filter(|d| d.0.abs() + d.1.abs() > 1e-9)
        .collect();
    steps
        .windows(2)
        .filter(|w| w[0].0 * w[1].0 + w[0].1 * w[1].1 < 0.0)
        .count()
}
