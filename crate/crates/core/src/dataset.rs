//! Labelled phase datasets, train/val/test splits, the long clutter
//! scenario used for event metrics, and the on-disk record format.
//!
//! # Record layout
//!
//! Each record is a 48-byte little-endian label block followed by the phase:
//!
//! | offset | type | field |
//! |---|---|---|
//! | 0 | f64 | bias, m |
//! | 8 | f64 | vibration amplitude, m |
//! | 16 | f64 | vibration frequency, Hz |
//! | 24 | f64 | SNR, dB (NaN when noiseless) |
//! | 32 | u64 | per-sample seed |
//! | 40 | u64 | phase length `n` |
//! | 48 | n × f64 | wrapped phase, rad |
//!
//! A split file is a plain concatenation of records.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::loss::MddLabel;
use crate::phase::{extract_phase, DisplacementSeries, PhaseSeries};
use crate::scalar::wrap_angle;
use crate::sim::{synth_echo_cube, synth_echo_frame, IsacConfig, SceneParams};

pub const GENERATOR_VERSION: &str = "mdd-dataset/1";

const BIAS_STEP_M: f64 = 1e-5;
const FREQ_STEP_HZ: f64 = 0.01;

/// How the vibration amplitude follows the bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeMode {
    /// `d_a = ratio · d_r`.
    Coupled { ratio: f64 },
    /// `d_a` drawn uniformly, independent of the bias.
    Independent { min_m: f64, max_m: f64 },
}

/// Platform vibration added to every training scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClutterAugmentation {
    pub amplitude_m: f64,
    pub frequency_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub samples: usize,
    pub bias_range_mm: [f64; 2],
    pub frequency_range_hz: [f64; 2],
    pub snr_range_db: [i32; 2],
    /// Draw every sample without echo noise; `snr_range_db` is then ignored.
    pub noiseless: bool,
    /// Fractions for train / val / test; the test split takes the remainder.
    pub split_ratios: [f64; 3],
    /// Exact split sizes; overrides the ratios when present.
    pub split_counts: Option<[usize; 3]>,
    pub seed: u64,
    pub amplitude: AmplitudeMode,
    pub clutter: Option<ClutterAugmentation>,
    /// Gaussian displacement noise added on top of the echo-domain noise.
    pub displacement_noise_std_m: f64,
    pub isac: IsacConfig,
    pub initial_roundtrip_m: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self::full()
    }
}

impl DatasetSpec {
    /// 30976 samples split 18586 / 4646 / 7744.
    pub fn full() -> Self {
        Self {
            samples: 30_976,
            bias_range_mm: [0.0, 25.0],
            frequency_range_hz: [5.0, 15.0],
            snr_range_db: [0, 10],
            noiseless: false,
            split_ratios: [0.6, 0.15, 0.25],
            split_counts: None,
            seed: 0,
            amplitude: AmplitudeMode::Coupled { ratio: 0.1 },
            clutter: None,
            displacement_noise_std_m: 0.0,
            isac: IsacConfig::default(),
            initial_roundtrip_m: 30.0,
        }
    }

    /// 30976 samples split 23232 / 0 / 7744.
    pub fn full_no_val() -> Self {
        Self { split_ratios: [0.75, 0.0, 0.25], ..Self::full() }
    }

    /// 2000 / 200 / 500, small enough for a laptop.
    pub fn desk() -> Self {
        Self {
            samples: 2_700,
            split_counts: Some([2_000, 200, 500]),
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "full-no-val" => Ok(Self::full_no_val()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!("unknown dataset preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.isac.validate()?;
        let [b0, b1] = self.bias_range_mm;
        let [f0, f1] = self.frequency_range_hz;
        let [s0, s1] = self.snr_range_db;
        if !(b0 >= 0.0 && b1 > b0) || !(f0 >= 0.0 && f1 > f0) || s1 < s0 {
            return Err(Error::Config("label ranges must be non-empty".into()));
        }
        if f1 >= self.isac.slow_time_nyquist_hz() {
            return Err(Error::Aliasing {
                frequency_hz: f1,
                rate_hz: self.isac.prf_hz,
                nyquist_hz: self.isac.slow_time_nyquist_hz(),
            });
        }
        if self.split_ratios.iter().any(|r| !(*r >= 0.0)) || (self.split_ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {:?} must be non-negative and sum to 1", self.split_ratios)));
        }
        if let Some(c) = self.split_counts {
            if c.iter().sum::<usize>() != self.samples {
                return Err(Error::Config(format!("split counts {c:?} do not add up to {} samples", self.samples)));
            }
        }
        if !(self.displacement_noise_std_m >= 0.0) {
            return Err(Error::Config("displacement noise must be >= 0".into()));
        }
        Ok(())
    }

    fn grid_sizes(&self) -> (u64, u64, u64) {
        let b = ((self.bias_range_mm[1] - self.bias_range_mm[0]) * 1e-3 / BIAS_STEP_M).round() as u64 + 1;
        let f = ((self.frequency_range_hz[1] - self.frequency_range_hz[0]) / FREQ_STEP_HZ).round() as u64 + 1;
        let s = if self.noiseless { 1 } else { (self.snr_range_db[1] - self.snr_range_db[0]) as u64 + 1 };
        (b, f, s)
    }

    /// Number of distinct quantised label triples.
    pub fn capacity(&self) -> u64 {
        let (b, f, s) = self.grid_sizes();
        b * f * s
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        self.split_counts.unwrap_or_else(|| split_counts(self.samples, self.split_ratios))
    }
}

/// Train and val sizes are rounded; test takes the remainder.
pub fn split_counts(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let train = ((n as f64 * ratios[0]).round() as usize).min(n);
    let val = ((n as f64 * ratios[1]).round() as usize).min(n - train);
    [train, val, n - train - val]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub phase: PhaseSeries<f64>,
    pub label: MddLabel,
    pub seed: u64,
}

impl LabeledSample {
    /// Quantised `(bias, frequency, snr)` key used for uniqueness.
    pub fn key(&self) -> (i64, i64, i64) {
        label_key(&self.label)
    }
}

pub fn label_key(l: &MddLabel) -> (i64, i64, i64) {
    (
        (l.bias_m / BIAS_STEP_M).round() as i64,
        (l.frequency_hz / FREQ_STEP_HZ).round() as i64,
        l.snr_db.map_or(i64::MIN, |s| s.round() as i64),
    )
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws unique quantised labels.
pub fn draw_labels(spec: &DatasetSpec) -> Result<Vec<(MddLabel, u64)>> {
    spec.validate()?;
    if spec.samples as u64 > spec.capacity() {
        return Err(Error::Config(format!(
            "{} samples requested but only {} distinct labels exist at the label grid",
            spec.samples,
            spec.capacity()
        )));
    }
    let (nb, nf, ns) = spec.grid_sizes();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen = HashSet::with_capacity(spec.samples);
    let mut out = Vec::with_capacity(spec.samples);
    while out.len() < spec.samples {
        let key = (rng.random_range(0..nb), rng.random_range(0..nf), rng.random_range(0..ns));
        if !seen.insert(key) {
            continue;
        }
        let bias_m = spec.bias_range_mm[0] * 1e-3 + key.0 as f64 * BIAS_STEP_M;
        let frequency_hz = spec.frequency_range_hz[0] + key.1 as f64 * FREQ_STEP_HZ;
        let snr_db = (!spec.noiseless).then(|| (spec.snr_range_db[0] + key.2 as i32) as f64);
        let amplitude_m = match spec.amplitude {
            AmplitudeMode::Coupled { ratio } => ratio * bias_m,
            AmplitudeMode::Independent { min_m, max_m } => rng.random_range(min_m..=max_m),
        };
        let seed = splitmix(spec.seed ^ splitmix(out.len() as u64));
        out.push((MddLabel { bias_m, amplitude_m, frequency_hz, snr_db }, seed));
    }
    Ok(out)
}

/// Synthesises the echo for one label and returns the compensated wrapped phase.
///
/// The phase of the static direct path (round trip `r(1)`) at the target bin
/// is subtracted, so the result is `-2π d / λ` wrapped.
pub fn synth_phase(spec: &DatasetSpec, label: &MddLabel, seed: u64) -> Result<PhaseSeries<f64>> {
    let clutter = spec.clutter.unwrap_or(ClutterAugmentation { amplitude_m: 0.0, frequency_hz: 0.0 });
    let scene = SceneParams {
        initial_roundtrip_m: spec.initial_roundtrip_m,
        mdd_bias_m: label.bias_m,
        mdd_amplitude_m: label.amplitude_m,
        mdd_frequency_hz: label.frequency_hz,
        clutter_amplitude_m: clutter.amplitude_m,
        clutter_frequency_hz: clutter.frequency_hz,
        snr_db: label.snr_db,
        ..SceneParams::default()
    };
    let cube = synth_echo_cube::<f64>(&spec.isac, &scene, seed)?;
    let bin = target_bin(&spec.isac, spec.initial_roundtrip_m);
    let mut phase = extract_phase(&cube, Some(bin))?;
    let reference = crate::phase::range_profile(&synth_echo_frame::<f64>(&spec.isac, spec.initial_roundtrip_m))?[bin].arg();
    let mut noise = (spec.displacement_noise_std_m > 0.0).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        rng
    });
    let k = -std::f64::consts::TAU / phase.wavelength_m;
    for v in phase.values_rad.iter_mut() {
        let mut x = *v - reference;
        if let Some(rng) = noise.as_mut() {
            let n: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
            x += k * spec.displacement_noise_std_m * n;
        }
        *v = wrap_angle(x);
    }
    Ok(phase)
}

/// Range bin of a scatterer at `roundtrip_m`.
pub fn target_bin(cfg: &IsacConfig, roundtrip_m: f64) -> usize {
    (cfg.beat_bin(roundtrip_m).round() as usize) % cfg.samples_per_pulse
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub samples: Vec<LabeledSample>,
}

/// Draws unique labels and synthesises every sample in parallel.
pub fn gen_training_set(spec: &DatasetSpec) -> Result<Dataset> {
    let labels = draw_labels(spec)?;
    let samples = labels
        .par_iter()
        .map(|(label, seed)| {
            Ok(LabeledSample { phase: synth_phase(spec, label, *seed)?, label: *label, seed: *seed })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { spec: spec.clone(), samples })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub train: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

impl Splits {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }

    pub fn named(&self) -> [(&'static str, &[LabeledSample]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

/// Seeded shuffle, then contiguous partition by `counts`.
pub fn split(samples: Vec<LabeledSample>, counts: [usize; 3], seed: u64) -> Result<Splits> {
    if counts.iter().sum::<usize>() != samples.len() {
        return Err(Error::Config(format!("split counts {counts:?} do not cover {} samples", samples.len())));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<LabeledSample>> = samples.into_iter().map(Some).collect();
    let mut take = |range: std::ops::Range<usize>| -> Vec<LabeledSample> {
        order[range].iter().map(|&i| slots[i].take().expect("each index taken once")).collect()
    };
    let (a, b) = (counts[0], counts[0] + counts[1]);
    let total = counts.iter().sum();
    Ok(Splits { train: take(0..a), val: take(a..b), test: take(b..total) })
}

/// Ratio-based split with validated ratios.
pub fn split_by_ratios(samples: Vec<LabeledSample>, ratios: [f64; 3], seed: u64) -> Result<Splits> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let counts = split_counts(samples.len(), ratios);
    split(samples, counts, seed)
}

/// Generates and splits a dataset in one go.
pub fn generate_splits(spec: &DatasetSpec) -> Result<Splits> {
    let ds = gen_training_set(spec)?;
    split(ds.samples, spec.split_sizes(), spec.seed ^ 0x5EED_5EED)
}

/// Upper-tail 1% critical value of χ² with 9 degrees of freedom.
pub const CHI2_9DOF_P01: f64 = 21.666;

/// Pearson χ² statistic of `values` against a uniform law on `[lo, hi]`.
pub fn chi_square_uniform(values: &[f64], lo: f64, hi: f64, bins: usize) -> f64 {
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / (hi - lo)) * bins as f64).floor() as isize;
        counts[b.clamp(0, bins as isize - 1) as usize] += 1;
    }
    let expected = values.len() as f64 / bins as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

// ----- record format -----

pub const LABEL_BLOCK_BYTES: usize = 48;

pub fn write_record<W: Write>(w: &mut W, s: &LabeledSample) -> Result<()> {
    let l = &s.label;
    for v in [l.bias_m, l.amplitude_m, l.frequency_hz, l.snr_db.unwrap_or(f64::NAN)] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&s.seed.to_le_bytes())?;
    w.write_all(&(s.phase.len() as u64).to_le_bytes())?;
    for v in &s.phase.values_rad {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn encode_records(samples: &[LabeledSample]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(samples.iter().map(|s| LABEL_BLOCK_BYTES + 8 * s.phase.len()).sum());
    for s in samples {
        write_record(&mut buf, s).expect("writing to a Vec cannot fail");
    }
    buf
}

/// Parses concatenated records. Frame rate and wavelength come from the manifest.
pub fn decode_records(bytes: &[u8], frame_rate_hz: f64, wavelength_m: f64) -> Result<Vec<LabeledSample>> {
    let mut out = Vec::new();
    let mut pos = 0;
    let f64_at = |p: usize| f64::from_le_bytes(bytes[p..p + 8].try_into().expect("8 bytes"));
    let u64_at = |p: usize| u64::from_le_bytes(bytes[p..p + 8].try_into().expect("8 bytes"));
    while pos < bytes.len() {
        if bytes.len() - pos < LABEL_BLOCK_BYTES {
            return Err(Error::Data(format!("truncated label block at byte {pos}")));
        }
        let snr = f64_at(pos + 24);
        let label = MddLabel {
            bias_m: f64_at(pos),
            amplitude_m: f64_at(pos + 8),
            frequency_hz: f64_at(pos + 16),
            snr_db: (!snr.is_nan()).then_some(snr),
        };
        let seed = u64_at(pos + 32);
        let n = u64_at(pos + 40) as usize;
        pos += LABEL_BLOCK_BYTES;
        let end = n.checked_mul(8).and_then(|b| b.checked_add(pos)).filter(|&e| e <= bytes.len());
        let Some(end) = end else {
            return Err(Error::Data(format!("record at byte {} claims {n} phase values past the end", pos - LABEL_BLOCK_BYTES)));
        };
        let values_rad = (pos..end).step_by(8).map(f64_at).collect();
        pos = end;
        out.push(LabeledSample {
            phase: PhaseSeries { values_rad, wrapped: true, frame_rate_hz, wavelength_m },
            label,
            seed,
        });
    }
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Sidecar of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub generator_version: String,
    pub spec: DatasetSpec,
    pub seed: u64,
    pub counts: [usize; 3],
    pub frame_rate_hz: f64,
    pub wavelength_m: f64,
    pub files: Vec<(String, String)>,
    pub content_hash: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `train.bin`, `val.bin`, `test.bin` and the manifest.
pub fn write_dataset(dir: &Path, spec: &DatasetSpec, splits: &Splits) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut all = Sha256::new();
    for (name, samples) in splits.named() {
        let bytes = encode_records(samples);
        all.update(&bytes);
        let file = format!("{name}.bin");
        let mut w = BufWriter::new(File::create(dir.join(&file))?);
        w.write_all(&bytes)?;
        w.flush()?;
        files.push((file, sha256_hex(&bytes)));
    }
    let manifest = DatasetManifest {
        generator_version: GENERATOR_VERSION.into(),
        spec: spec.clone(),
        seed: spec.seed,
        counts: splits.sizes(),
        frame_rate_hz: spec.isac.prf_hz,
        wavelength_m: spec.isac.phase_wavelength_m(),
        files,
        content_hash: hex::encode(all.finalize()),
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads a dataset directory, verifying file hashes against the manifest.
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Splits)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
    let mut parts = Vec::new();
    for (file, hash) in &manifest.files {
        let mut bytes = Vec::new();
        BufReader::new(File::open(dir.join(file)).map_err(|e| Error::Data(format!("{file}: {e}")))?)
            .read_to_end(&mut bytes)?;
        if &sha256_hex(&bytes) != hash {
            return Err(Error::Data(format!("{file}: content hash does not match the manifest")));
        }
        parts.push(decode_records(&bytes, manifest.frame_rate_hz, manifest.wavelength_m)?);
    }
    let mut it = parts.into_iter();
    let splits = Splits {
        train: it.next().unwrap_or_default(),
        val: it.next().unwrap_or_default(),
        test: it.next().unwrap_or_default(),
    };
    if splits.sizes() != manifest.counts {
        return Err(Error::Data(format!("split sizes {:?} differ from manifest {:?}", splits.sizes(), manifest.counts)));
    }
    Ok((manifest, splits))
}

// ----- long clutter scenario -----

/// One class of deformation events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventClass {
    pub min_mm: f64,
    pub max_mm: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BsScenarioSpec {
    pub static_segments: usize,
    pub event_classes: Vec<EventClass>,
    pub segment_frames: usize,
    pub frame_rate_hz: f64,
    /// Half-width of the uniform per-frame fluctuation, mm.
    pub fluctuation_mm: f64,
    pub clutter_amplitude_mm: f64,
    pub clutter_frequency_hz: f64,
    pub alpha: f64,
    pub vibration_range_hz: [f64; 2],
    pub wavelength_m: f64,
    pub seed: u64,
}

impl Default for BsScenarioSpec {
    fn default() -> Self {
        Self {
            static_segments: 2000,
            event_classes: vec![
                EventClass { min_mm: 0.5, max_mm: 1.0, count: 30 },
                EventClass { min_mm: 1.0, max_mm: 2.0, count: 5 },
                EventClass { min_mm: 2.0, max_mm: 3.0, count: 2 },
            ],
            segment_frames: 1000,
            frame_rate_hz: 1000.0,
            fluctuation_mm: 0.15,
            clutter_amplitude_mm: DEFAULT_SCENARIO_CLUTTER_MM,
            clutter_frequency_hz: 0.41,
            alpha: 0.1,
            vibration_range_hz: [5.0, 15.0],
            wavelength_m: IsacConfig::default().phase_wavelength_m(),
            seed: 0,
        }
    }
}

/// Amplitude of the persistent platform vibration in the clutter scenario, mm.
pub const DEFAULT_SCENARIO_CLUTTER_MM: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub start_s: f64,
    pub duration_s: f64,
    pub displacement_m: f64,
    pub frequency_hz: f64,
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsScenario {
    /// Events + vibration + clutter + fluctuation.
    pub observed: DisplacementSeries<f64>,
    /// Per-segment bias levels only.
    pub clean: DisplacementSeries<f64>,
    pub events: Vec<GroundTruthEvent>,
    /// Bias level of each segment, metres.
    pub segment_levels: Vec<f64>,
    /// Event index per segment, `None` for static segments.
    pub segment_events: Vec<Option<usize>>,
    pub spec: BsScenarioSpec,
}

impl BsScenario {
    pub fn segment_count(&self) -> usize {
        self.segment_levels.len()
    }

    pub fn segment(&self, k: usize) -> &[f64] {
        let n = self.spec.segment_frames;
        &self.observed.values_m[k * n..(k + 1) * n]
    }

    /// Wrapped phase the network sees for segment `k`.
    pub fn segment_phase(&self, k: usize) -> PhaseSeries<f64> {
        let scale = -std::f64::consts::TAU / self.spec.wavelength_m;
        PhaseSeries {
            values_rad: self.segment(k).iter().map(|d| wrap_angle(scale * d)).collect(),
            wrapped: true,
            frame_rate_hz: self.spec.frame_rate_hz,
            wavelength_m: self.spec.wavelength_m,
        }
    }

    /// Count of segments per class: static first, then each event class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; 1 + self.spec.event_classes.len()];
        for k in 0..self.segment_count() {
            match self.segment_events[k] {
                None => counts[0] += 1,
                Some(e) => {
                    let d = self.events[e].displacement_m * 1e3;
                    let c = self
                        .spec
                        .event_classes
                        .iter()
                        .position(|c| d >= c.min_mm && d < c.max_mm)
                        .expect("event level inside its class");
                    counts[1 + c] += 1;
                }
            }
        }
        counts
    }
}

/// Static segments with deformation events scattered between them, every
/// event isolated by at least one static segment.
pub fn gen_bs_scenario(spec: &BsScenarioSpec) -> Result<BsScenario> {
    let n_events: usize = spec.event_classes.iter().map(|c| c.count).sum();
    if n_events > spec.static_segments + 1 {
        return Err(Error::Config(format!(
            "{n_events} events cannot be separated by {} static segments",
            spec.static_segments
        )));
    }
    if spec.segment_frames == 0 || !(spec.frame_rate_hz > 0.0) {
        return Err(Error::Config("segment length and frame rate must be positive".into()));
    }
    for c in &spec.event_classes {
        if !(c.min_mm < c.max_mm) {
            return Err(Error::Config(format!("empty event class [{}, {}) mm", c.min_mm, c.max_mm)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Gap g sits before static segment g; at most one event per gap.
    let mut gaps: Vec<usize> = (0..=spec.static_segments).collect();
    gaps.shuffle(&mut rng);
    let mut chosen: Vec<usize> = gaps[..n_events].to_vec();
    chosen.sort_unstable();
    let mut classes: Vec<usize> = spec
        .event_classes
        .iter()
        .enumerate()
        .flat_map(|(i, c)| std::iter::repeat_n(i, c.count))
        .collect();
    classes.shuffle(&mut rng);

    let mut levels = Vec::with_capacity(spec.static_segments + n_events);
    let mut segment_events = Vec::with_capacity(levels.capacity());
    let mut events = Vec::with_capacity(n_events);
    let seg_s = spec.segment_frames as f64 / spec.frame_rate_hz;
    let mut next = 0;
    for gap in 0..=spec.static_segments {
        while next < n_events && chosen[next] == gap {
            let class = spec.event_classes[classes[next]];
            let level_mm = rng.random_range(class.min_mm..class.max_mm);
            let f = rng.random_range(spec.vibration_range_hz[0]..=spec.vibration_range_hz[1]);
            let segment = levels.len();
            events.push(GroundTruthEvent {
                start_s: segment as f64 * seg_s,
                duration_s: seg_s,
                displacement_m: level_mm * 1e-3,
                frequency_hz: f,
                segment,
            });
            segment_events.push(Some(events.len() - 1));
            levels.push(level_mm * 1e-3);
            next += 1;
        }
        if gap < spec.static_segments {
            segment_events.push(None);
            levels.push(0.0);
        }
    }

    let n = spec.segment_frames;
    let total = levels.len() * n;
    let tau = std::f64::consts::TAU;
    let mut observed = Vec::with_capacity(total);
    let mut clean = Vec::with_capacity(total);
    for (k, &level) in levels.iter().enumerate() {
        let vib = segment_events[k].map(|e| events[e].frequency_hz);
        for l in 0..n {
            let t_abs = (k * n + l) as f64 / spec.frame_rate_hz;
            let t_loc = l as f64 / spec.frame_rate_hz;
            let mut d = level;
            if let Some(f) = vib {
                d += spec.alpha * level * (tau * f * t_loc).sin();
            }
            d += spec.clutter_amplitude_mm * 1e-3 * (tau * spec.clutter_frequency_hz * t_abs).sin();
            if spec.fluctuation_mm > 0.0 {
                d += rng.random_range(-spec.fluctuation_mm..=spec.fluctuation_mm) * 1e-3;
            }
            observed.push(d);
            clean.push(level);
        }
    }
    Ok(BsScenario {
        observed: DisplacementSeries::new(observed, spec.frame_rate_hz),
        clean: DisplacementSeries::new(clean, spec.frame_rate_hz),
        events,
        segment_levels: levels,
        segment_events,
        spec: spec.clone(),
    })
}
