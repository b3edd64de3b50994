//! Slow-time phase extraction, the analytic phase-to-displacement conversion
//! and Itoh's 1-D unwrapper.

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{wrap_angle, Real};
use crate::sim::{EchoCube, SPEED_OF_LIGHT};

/// Carrier wavelength of the default 4.9 GHz platform.
pub const DEFAULT_CARRIER_WAVELENGTH_M: f64 = SPEED_OF_LIGHT / 4.9e9;

/// Per-frame phase of the observation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSeries<T> {
    pub values_rad: Vec<T>,
    pub wrapped: bool,
    pub frame_rate_hz: f64,
    /// Round-trip distance per `2π` of phase.
    pub wavelength_m: f64,
}

impl<T: Real> PhaseSeries<T> {
    /// A series on the default carrier wavelength.
    pub fn new(values_rad: Vec<T>, wrapped: bool, frame_rate_hz: f64) -> Self {
        Self {
            values_rad,
            wrapped,
            frame_rate_hz,
            wavelength_m: DEFAULT_CARRIER_WAVELENGTH_M,
        }
    }

    pub fn with_wavelength(mut self, wavelength_m: f64) -> Self {
        self.wavelength_m = wavelength_m;
        self
    }

    pub fn len(&self) -> usize {
        self.values_rad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values_rad.is_empty()
    }

    /// Checks the `(-π, π]` range when the series claims to be wrapped.
    pub fn check(&self) -> Result<()> {
        if self.wrapped {
            let pi = T::PI();
            if let Some((l, v)) = self
                .values_rad
                .iter()
                .enumerate()
                .find(|(_, v)| !(**v > -pi && **v <= pi))
            {
                return Err(Error::Invariant(format!("wrapped phase {v} at frame {l} outside (-pi, pi]")));
            }
        }
        Ok(())
    }

    pub fn times_s(&self) -> Vec<f64> {
        (0..self.len()).map(|l| l as f64 / self.frame_rate_hz).collect()
    }
}

/// Displacement per frame, metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementSeries<T> {
    pub values_m: Vec<T>,
    pub frame_rate_hz: f64,
}

impl<T: Real> DisplacementSeries<T> {
    pub fn new(values_m: Vec<T>, frame_rate_hz: f64) -> Self {
        Self { values_m, frame_rate_hz }
    }

    pub fn len(&self) -> usize {
        self.values_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values_m.is_empty()
    }

    pub fn times_s(&self) -> Vec<f64> {
        (0..self.len()).map(|l| l as f64 / self.frame_rate_hz).collect()
    }
}

/// Fast-time DFT of one frame.
///
/// Uses the positive-exponent kernel so a scatterer at round trip `r` peaks
/// at bin `B r / c0` rather than its mirror image.
pub fn range_profile<T: Real>(frame: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
    if frame.len() < 2 {
        return Err(Error::Shape(format!("range profile needs >= 2 samples, got {}", frame.len())));
    }
    let mut buf = frame.to_vec();
    FftPlanner::new().plan_fft_inverse(buf.len()).process(&mut buf);
    Ok(buf)
}

/// Phase of the target bin in every frame, wrapped to `(-π, π]`.
///
/// Without an explicit `bin` the target is the argmax of the time-averaged
/// magnitude profile.
pub fn extract_phase<T: Real>(cube: &EchoCube<T>, bin: Option<usize>) -> Result<PhaseSeries<T>> {
    let (frames, width) = (cube.frames, cube.samples_per_frame);
    if frames == 0 || width < 2 || cube.samples.len() != frames * width {
        return Err(Error::Shape(format!(
            "echo cube of {frames} x {width} holds {} samples",
            cube.samples.len()
        )));
    }
    if let Some(b) = bin {
        if b >= width {
            return Err(Error::Config(format!("bin {b} outside profile of length {width}")));
        }
    }
    let fft = FftPlanner::new().plan_fft_inverse(width);
    let mut profiles = cube.samples.clone();
    profiles.par_chunks_mut(width).for_each(|p| fft.process(p));

    let bin = match bin {
        Some(b) => b,
        None => {
            let mut mean_mag = vec![0.0f64; width];
            for p in profiles.chunks_exact(width) {
                for (m, c) in mean_mag.iter_mut().zip(p) {
                    *m += c.norm().as_f64();
                }
            }
            let (best, peak) = mean_mag
                .iter()
                .enumerate()
                .fold((0, 0.0), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
            if peak == 0.0 {
                return Err(Error::NoTarget);
            }
            best
        }
    };

    let values_rad = profiles
        .chunks_exact(width)
        .map(|p| wrap_angle(p[bin].arg()))
        .collect();
    Ok(PhaseSeries {
        values_rad,
        wrapped: true,
        frame_rate_hz: cube.frame_rate_hz,
        wavelength_m: cube.phase_wavelength_m,
    })
}

/// Round-trip (or radial) displacement relative to the first frame:
/// `-Δφ λ / (2π)`.
pub fn phase_to_displacement<T: Real>(phase: &PhaseSeries<T>, radial: bool) -> Result<DisplacementSeries<T>> {
    if phase.wrapped {
        return Err(Error::WrappedInput);
    }
    let Some(&first) = phase.values_rad.first() else {
        return Ok(DisplacementSeries::new(Vec::new(), phase.frame_rate_hz));
    };
    let mut scale = -phase.wavelength_m / std::f64::consts::TAU;
    if radial {
        scale *= 0.5;
    }
    let scale = T::lit(scale);
    let values_m = phase.values_rad.iter().map(|&p| (p - first) * scale).collect();
    Ok(DisplacementSeries::new(values_m, phase.frame_rate_hz))
}

/// Itoh's sequential unwrap: each successive difference is wrapped into
/// `(-π, π]` and accumulated.
pub fn itoh_unwrap<T: Real>(phase: &PhaseSeries<T>) -> PhaseSeries<T> {
    let mut out = Vec::with_capacity(phase.len());
    let mut it = phase.values_rad.iter();
    if let Some(&first) = it.next() {
        let (mut prev_raw, mut acc) = (first, first);
        out.push(first);
        for &v in it {
            acc = acc + wrap_angle(v - prev_raw);
            prev_raw = v;
            out.push(acc);
        }
    }
    PhaseSeries {
        values_rad: out,
        wrapped: false,
        frame_rate_hz: phase.frame_rate_hz,
        wavelength_m: phase.wavelength_m,
    }
}

/// Wraps every element into `(-π, π]`.
pub fn wrap_series<T: Real>(phase: &PhaseSeries<T>) -> PhaseSeries<T> {
    PhaseSeries {
        values_rad: phase.values_rad.iter().map(|&v| wrap_angle(v)).collect(),
        wrapped: true,
        ..phase.clone()
    }
}
