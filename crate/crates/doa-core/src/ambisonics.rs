//! Real orthonormalized (N3D) first-order spherical-harmonic encoding.
//!
//! Channel order is ACN: `[Y_00, Y_1(-1), Y_10, Y_11]`, i.e. W, Y, Z, X.
//! The second spherical-harmonic argument is elevation, not inclination.

use std::f64::consts::PI;

use crate::geometry::Direction;
use crate::{Error, Result};

/// Number of first-order Ambisonic channels.
pub const CHANNELS: usize = 4;

/// Default sample rate for all rendered audio.
pub const SAMPLE_RATE: u32 = 44_100;

/// First-order steering vector: the four real N3D spherical harmonics
/// evaluated at one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteeringVector {
    coefficients: [f64; 4],
}

impl SteeringVector {
    pub fn coefficients(&self) -> &[f64; 4] {
        &self.coefficients
    }

    /// Inner product with another steering vector. For N3D first-order
    /// harmonics this equals `(1 + 3 cos sigma) / (4 pi)` where `sigma` is
    /// the central angle between the two directions.
    pub fn dot(&self, other: &SteeringVector) -> f64 {
        self.coefficients
            .iter()
            .zip(other.coefficients.iter())
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Evaluate the N3D first-order harmonics at a direction.
///
/// `Y_00 = 1/sqrt(4 pi)`; the first-order terms carry `sqrt(3/(4 pi))` times
/// the Cartesian unit-vector components (y, z, x respectively), so the
/// first-order sub-vector has constant norm `sqrt(3/(4 pi))`.
pub fn encode_direction(d: &Direction) -> SteeringVector {
    let y00 = 1.0 / (4.0 * PI).sqrt();
    let n1 = (3.0 / (4.0 * PI)).sqrt();
    let [x, y, z] = d.unit_vector();
    SteeringVector {
        coefficients: [y00, n1 * y, n1 * z, n1 * x],
    }
}

/// Distance attenuation `10^(-d / (2 d_max))`, i.e. `sqrt(1 / 10^(d/d_max))`.
///
/// Strictly decreasing in `d`, equal to 1 at the microphone and
/// `sqrt(0.1) ~= 0.316` at `d_max`.
pub fn distance_gain(distance_m: f64, max_distance_m: f64) -> Result<f64> {
    if !(distance_m.is_finite() && max_distance_m.is_finite()) || max_distance_m <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "bad distance arguments d={distance_m}, d_max={max_distance_m}"
        )));
    }
    if distance_m < 0.0 || distance_m > max_distance_m {
        return Err(Error::InvalidArgument(format!(
            "distance {distance_m} outside [0, {max_distance_m}]"
        )));
    }
    Ok(10f64.powf(-distance_m / (2.0 * max_distance_m)))
}

/// A 4-channel first-order Ambisonic recording.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbisonicBuffer {
    channels: [Vec<f32>; 4],
    sample_rate: u32,
}

impl AmbisonicBuffer {
    pub fn silent(len: usize, sample_rate: u32) -> Self {
        Self {
            channels: std::array::from_fn(|_| vec![0.0; len]),
            sample_rate,
        }
    }

    pub fn from_channels(channels: [Vec<f32>; 4], sample_rate: u32) -> Result<Self> {
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidArgument(
                "ambisonic channels must share one length".into(),
            ));
        }
        if channels.iter().any(|c| c.iter().any(|s| !s.is_finite())) {
            return Err(Error::InvalidArgument(
                "ambisonic channels must contain finite samples".into(),
            ));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.channels[c]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        &mut self.channels[c]
    }

    /// Sample-wise addition of `other` starting at `offset` samples.
    /// The buffer is not grown; samples past the end are dropped.
    pub fn add_at(&mut self, offset: usize, other: &AmbisonicBuffer) {
        let len = self.len();
        for c in 0..CHANNELS {
            let dst = &mut self.channels[c];
            let src = &other.channels[c];
            for (i, &s) in src.iter().enumerate() {
                let j = offset + i;
                if j >= len {
                    break;
                }
                dst[j] += s;
            }
        }
    }

    pub fn peak(&self) -> f32 {
        self.channels
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f32, |m, &s| m.max(s.abs()))
    }
}

/// Encode a mono signal toward a direction with a scalar gain:
/// channel c is `gain * signal * coefficient_c`.
pub fn spatialize(signal: &[f32], d: &Direction, gain: f64) -> AmbisonicBuffer {
    let sv = encode_direction(d);
    let channels = std::array::from_fn(|c| {
        let w = gain * sv.coefficients()[c];
        signal.iter().map(|&s| (s as f64 * w) as f32).collect()
    });
    AmbisonicBuffer {
        channels,
        sample_rate: SAMPLE_RATE,
    }
}
