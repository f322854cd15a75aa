use crate::frame::{TactileFrame, CHANNELS, GRID};

use super::SimError;

/// Stress at which the sensor response saturates, in kPa.
pub const FULL_SCALE_KPA: f64 = 100.0;

/// A Gaussian pressure footprint on the grid.
///
/// `center` is `(u, v)` in cell units: `u` is the column (rightward), `v` the
/// row counted upward from the bottom edge. Cell `(c, r)` has its center at
/// `(c, r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPoint {
    pub center: (f64, f64),
    pub peak_stress: f64,
    pub sigma: f64,
}

/// Normalized capacitance change for a local stress; linear up to the
/// 100 kPa full scale, flat beyond it.
pub fn pressure_to_response(stress_kpa: f64) -> Result<f64, SimError> {
    if stress_kpa < 0.0 || stress_kpa.is_nan() {
        return Err(SimError::NegativeStress(stress_kpa));
    }
    Ok(stress_kpa.min(FULL_SCALE_KPA) / FULL_SCALE_KPA)
}

/// Stress field of all contacts, sampled at cell centers.
pub fn stress_field(points: &[ContactPoint]) -> Vec<f64> {
    let mut stress = vec![0.0; CHANNELS];
    for p in points {
        let two_var = 2.0 * p.sigma * p.sigma;
        for row in 0..GRID {
            let dv = row as f64 - p.center.1;
            for col in 0..GRID {
                let du = col as f64 - p.center.0;
                stress[row * GRID + col] += p.peak_stress * (-(du * du + dv * dv) / two_var).exp();
            }
        }
    }
    stress
}

/// Noise-free normalized frame produced by a set of contacts.
pub fn contact_footprint(points: &[ContactPoint]) -> TactileFrame {
    let values = stress_field(points)
        .into_iter()
        .map(|s| pressure_to_response(s).expect("stress sums are nonnegative"))
        .collect();
    TactileFrame {
        values,
        timestamp_us: 0,
    }
}
