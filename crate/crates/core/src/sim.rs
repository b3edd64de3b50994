//! FMCW echo synthesis for a deforming point target observed by a base station.
//!
//! Each frame `l` is a fast-time vector of `N_f` samples
//!
//! ```text
//! S(l, n) = exp(-j 2π (f0 + B n / N_f) r(l) / c0),   n = 1..N_f
//! ```
//!
//! plus an optional clutter group sharing the platform vibration and complex
//! white Gaussian noise. Sample `n` is stored at index `n - 1`; the phase is
//! always evaluated with the 1-based `n`.
//!
//! Slow time runs at `prf_hz`, so frame `l` (0-based) sits at `l / prf_hz`
//! seconds and one slot lasts `frames_per_slot / prf_hz` seconds.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Stream id reserved for drawing clutter offsets, disjoint from frame streams.
const CLUTTER_STREAM: u64 = u64::MAX;

/// Radar and platform constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsacConfig {
    pub carrier_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub samples_per_pulse: usize,
    pub prf_hz: f64,
    pub frames_per_slot: usize,
    pub carrier_wavelength_m: f64,
    pub tx_position_m: [f64; 3],
    pub rx_position_m: [f64; 3],
    pub target_azimuth_deg: f64,
    pub target_lookdown_deg: f64,
}

impl Default for IsacConfig {
    /// The 4.9 GHz base-station platform with 1000-frame slots.
    fn default() -> Self {
        Self::new(4.9e9, 100e6, 200, 1_000.0, 1_000)
    }
}

impl IsacConfig {
    pub fn new(
        carrier_frequency_hz: f64,
        bandwidth_hz: f64,
        samples_per_pulse: usize,
        prf_hz: f64,
        frames_per_slot: usize,
    ) -> Self {
        Self {
            carrier_frequency_hz,
            bandwidth_hz,
            samples_per_pulse,
            prf_hz,
            frames_per_slot,
            carrier_wavelength_m: SPEED_OF_LIGHT / carrier_frequency_hz,
            tx_position_m: [0.0, 0.0, 40.896],
            rx_position_m: [0.003, 0.311, 46.396],
            target_azimuth_deg: 8.0,
            target_lookdown_deg: 27.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_frequency_hz > 0.0) {
            return Err(Error::Config("carrier_frequency_hz must be > 0".into()));
        }
        if !(self.bandwidth_hz >= 0.0) {
            return Err(Error::Config("bandwidth_hz must be >= 0".into()));
        }
        if self.samples_per_pulse < 2 {
            return Err(Error::Config("samples_per_pulse must be >= 2".into()));
        }
        if !(self.prf_hz > 0.0) {
            return Err(Error::Config("prf_hz must be > 0".into()));
        }
        if self.frames_per_slot == 0 {
            return Err(Error::Config("frames_per_slot must be >= 1".into()));
        }
        let expected = SPEED_OF_LIGHT / self.carrier_frequency_hz;
        if ((self.carrier_wavelength_m - expected) / expected).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "carrier_wavelength_m {} disagrees with c0/f0 = {}",
                self.carrier_wavelength_m, expected
            )));
        }
        Ok(())
    }

    pub fn slot_duration_s(&self) -> f64 {
        self.frames_per_slot as f64 / self.prf_hz
    }

    /// Time of 0-based frame `l`.
    pub fn frame_time_s(&self, l: usize) -> f64 {
        l as f64 / self.prf_hz
    }

    pub fn slow_time_nyquist_hz(&self) -> f64 {
        self.prf_hz / 2.0
    }

    /// Fractional fast-time bin of a scatterer at `roundtrip_m`.
    pub fn beat_bin(&self, roundtrip_m: f64) -> f64 {
        self.bandwidth_hz * roundtrip_m / SPEED_OF_LIGHT
    }

    /// Round-trip distance covered by the `N_f` fast-time bins.
    pub fn unambiguous_roundtrip_m(&self) -> f64 {
        if self.bandwidth_hz > 0.0 {
            self.samples_per_pulse as f64 * SPEED_OF_LIGHT / self.bandwidth_hz
        } else {
            f64::INFINITY
        }
    }

    /// Wavelength that maps the phase of a range-profile peak to round-trip distance.
    ///
    /// Summing the chirp over fast time sees the mean sweep frequency
    /// `f0 + B (N_f + 1) / (2 N_f)`, so the slow-time phase of the peak bin
    /// moves by `-2π Δr / λ_eff`. With `B = 0` this is the carrier wavelength.
    pub fn phase_wavelength_m(&self) -> f64 {
        let n = self.samples_per_pulse as f64;
        SPEED_OF_LIGHT / (self.carrier_frequency_hz + self.bandwidth_hz * (n + 1.0) / (2.0 * n))
    }
}

/// Generative ground truth for one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub initial_roundtrip_m: f64,
    pub mdd_bias_m: f64,
    pub mdd_amplitude_m: f64,
    pub mdd_frequency_hz: f64,
    pub clutter_amplitude_m: f64,
    pub clutter_frequency_hz: f64,
    pub clutter_element_count: usize,
    /// `None` disables noise.
    pub snr_db: Option<f64>,
    /// Constant round-trip offsets of the clutter elements. Drawn uniformly
    /// within the unambiguous range when absent.
    pub clutter_offsets_m: Option<Vec<f64>>,
    /// Per-element echo amplitude; unit amplitude when absent.
    pub clutter_element_amplitudes: Option<Vec<f64>>,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            initial_roundtrip_m: 30.0,
            mdd_bias_m: 0.0,
            mdd_amplitude_m: 0.0,
            mdd_frequency_hz: 0.0,
            clutter_amplitude_m: 0.0,
            clutter_frequency_hz: 0.0,
            clutter_element_count: 0,
            snr_db: None,
            clutter_offsets_m: None,
            clutter_element_amplitudes: None,
        }
    }
}

impl SceneParams {
    pub fn validate(&self, cfg: &IsacConfig) -> Result<()> {
        let nonneg = [
            ("initial_roundtrip_m", self.initial_roundtrip_m),
            ("mdd_amplitude_m", self.mdd_amplitude_m),
            ("mdd_frequency_hz", self.mdd_frequency_hz),
            ("clutter_amplitude_m", self.clutter_amplitude_m),
            ("clutter_frequency_hz", self.clutter_frequency_hz),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.mdd_bias_m.is_finite() {
            return Err(Error::Config("mdd_bias_m must be finite".into()));
        }
        let nyquist = cfg.slow_time_nyquist_hz();
        for f in [self.mdd_frequency_hz, self.clutter_frequency_hz] {
            if f >= nyquist {
                return Err(Error::Aliasing {
                    frequency_hz: f,
                    rate_hz: cfg.prf_hz,
                    nyquist_hz: nyquist,
                });
            }
        }
        if let Some(offsets) = &self.clutter_offsets_m {
            if offsets.len() != self.clutter_element_count {
                return Err(Error::Config(format!(
                    "{} clutter offsets for {} elements",
                    offsets.len(),
                    self.clutter_element_count
                )));
            }
        }
        if let Some(amps) = &self.clutter_element_amplitudes {
            if amps.len() != self.clutter_element_count || amps.iter().any(|a| !(*a >= 0.0)) {
                return Err(Error::Config(
                    "clutter_element_amplitudes must hold one non-negative value per element".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Complex fast-time x slow-time samples, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoCube<T> {
    pub frames: usize,
    pub samples_per_frame: usize,
    pub samples: Vec<Complex<T>>,
    pub frame_times_s: Vec<T>,
    pub frame_rate_hz: f64,
    /// See [`IsacConfig::phase_wavelength_m`].
    pub phase_wavelength_m: f64,
}

impl<T: Real> EchoCube<T> {
    pub fn frame(&self, l: usize) -> &[Complex<T>] {
        let w = self.samples_per_frame;
        &self.samples[l * w..(l + 1) * w]
    }

    pub fn frames_iter(&self) -> impl Iterator<Item = &[Complex<T>]> {
        self.samples.chunks_exact(self.samples_per_frame)
    }
}

/// Round-trip distance per frame: `r(1) + d_r + d_a sin(2π f_v t) + d_b sin(2π f_b t)`.
pub fn compose_distance_series<T: Real>(cfg: &IsacConfig, scene: &SceneParams) -> Result<Vec<T>> {
    cfg.validate()?;
    scene.validate(cfg)?;
    Ok(distance_series_f64(cfg, scene).into_iter().map(T::lit).collect())
}

fn distance_series_f64(cfg: &IsacConfig, scene: &SceneParams) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    (0..cfg.frames_per_slot)
        .map(|l| {
            let t = cfg.frame_time_s(l);
            scene.initial_roundtrip_m
                + scene.mdd_bias_m
                + scene.mdd_amplitude_m * (tau * scene.mdd_frequency_hz * t).sin()
                + scene.clutter_amplitude_m * (tau * scene.clutter_frequency_hz * t).sin()
        })
        .collect()
}

fn platform_term(cfg: &IsacConfig, scene: &SceneParams, l: usize) -> f64 {
    let t = cfg.frame_time_s(l);
    scene.clutter_amplitude_m * (std::f64::consts::TAU * scene.clutter_frequency_hz * t).sin()
}

/// One noiseless single-scatterer fast-time frame.
pub fn synth_echo_frame<T: Real>(cfg: &IsacConfig, roundtrip_m: f64) -> Vec<Complex<T>> {
    let mut out = vec![Complex::new(T::zero(), T::zero()); cfg.samples_per_pulse];
    accumulate_scatterer(cfg, roundtrip_m, 1.0, &mut out);
    out
}

fn accumulate_scatterer<T: Real>(
    cfg: &IsacConfig,
    roundtrip_m: f64,
    amplitude: f64,
    out: &mut [Complex<T>],
) {
    let nf = cfg.samples_per_pulse as f64;
    let delay = roundtrip_m / SPEED_OF_LIGHT;
    for (idx, s) in out.iter_mut().enumerate() {
        let n = (idx + 1) as f64;
        let arg = -std::f64::consts::TAU * (cfg.carrier_frequency_hz + cfg.bandwidth_hz / nf * n) * delay;
        let (sin, cos) = arg.sin_cos();
        *s = *s + Complex::new(T::lit(amplitude * cos), T::lit(amplitude * sin));
    }
}

/// Resolves the clutter group's constant offsets and amplitudes.
pub fn clutter_layout(cfg: &IsacConfig, scene: &SceneParams, seed: u64) -> Vec<(f64, f64)> {
    let q = scene.clutter_element_count;
    let offsets = match &scene.clutter_offsets_m {
        Some(o) => o.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(CLUTTER_STREAM);
            let span = cfg.unambiguous_roundtrip_m();
            let span = if span.is_finite() { span } else { 2.0 * scene.initial_roundtrip_m.max(1.0) };
            (0..q).map(|_| rng.random::<f64>() * span).collect()
        }
    };
    let amps = scene
        .clutter_element_amplitudes
        .clone()
        .unwrap_or_else(|| vec![1.0; q]);
    offsets.into_iter().zip(amps).collect()
}

/// Target + clutter group + complex AWGN, one RNG stream per frame.
pub fn synth_echo_cube<T: Real>(cfg: &IsacConfig, scene: &SceneParams, seed: u64) -> Result<EchoCube<T>> {
    cfg.validate()?;
    scene.validate(cfg)?;
    let distances = distance_series_f64(cfg, scene);
    let clutter = clutter_layout(cfg, scene, seed);
    let width = cfg.samples_per_pulse;
    // The target is a unit phasor, so its power is exactly one.
    let noise_sigma = scene.snr_db.map(|snr| noise_std(1.0, snr));

    let mut samples = vec![Complex::new(T::zero(), T::zero()); cfg.frames_per_slot * width];
    samples
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(l, frame)| {
            accumulate_scatterer(cfg, distances[l], 1.0, frame);
            let shared = platform_term(cfg, scene, l);
            for &(offset, amp) in &clutter {
                accumulate_scatterer(cfg, offset + shared, amp, frame);
            }
            if let Some(sigma) = noise_sigma {
                let mut rng = frame_rng(seed, l as u64);
                add_noise_in_place(frame, sigma, &mut rng);
            }
        });

    Ok(EchoCube {
        frames: cfg.frames_per_slot,
        samples_per_frame: width,
        samples,
        frame_times_s: (0..cfg.frames_per_slot).map(|l| T::lit(cfg.frame_time_s(l))).collect(),
        frame_rate_hz: cfg.prf_hz,
        phase_wavelength_m: cfg.phase_wavelength_m(),
    })
}

fn frame_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-sample complex noise standard deviation for a reference power and SNR.
pub fn noise_std(signal_power: f64, snr_db: f64) -> f64 {
    (signal_power / 10f64.powf(snr_db / 10.0)).sqrt()
}

fn add_noise_in_place<T: Real, R: Rng>(signal: &mut [Complex<T>], sigma: f64, rng: &mut R) {
    // Circularly symmetric: each quadrature carries half the variance.
    let q = sigma / std::f64::consts::SQRT_2;
    for s in signal.iter_mut() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *s = *s + Complex::new(T::lit(q * re), T::lit(q * im));
    }
}

/// Adds circularly symmetric complex white noise at `snr_db` relative to the
/// signal's mean power. `f64::INFINITY` returns the signal unchanged.
pub fn add_awgn<T: Real>(signal: &[Complex<T>], snr_db: f64, seed: u64) -> Result<Vec<Complex<T>>> {
    if signal.is_empty() {
        return Err(Error::ZeroPower);
    }
    let power = signal.iter().map(|s| s.norm_sqr().as_f64()).sum::<f64>() / signal.len() as f64;
    if power == 0.0 {
        return Err(Error::ZeroPower);
    }
    if snr_db == f64::INFINITY {
        return Ok(signal.to_vec());
    }
    let mut out = signal.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    add_noise_in_place(&mut out, noise_std(power, snr_db), &mut rng);
    Ok(out)
}
