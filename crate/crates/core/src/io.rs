//! On-disk formats that are not owned by a single module: echo cubes,
//! plain phase/displacement CSVs and JSON manifests.
//!
//! Echo cube layout: `cube.bin` holds little-endian `f64` pairs `(re, im)`,
//! frame-major (all fast-time samples of frame 0, then frame 1, ...).
//! `manifest.json` beside it records shape, seed, the full simulation config
//! and its SHA-256 so the cube can be regenerated and checked.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::dataset::sha256_hex;
use crate::error::{Error, Result};
use crate::phase::PhaseSeries;
use crate::sim::{synth_echo_cube, EchoCube, IsacConfig, SceneParams};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CUBE_FILE: &str = "cube.bin";
pub const CUBE_FORMAT: &str = "echo-cube/1";

/// Everything `simulate` needs to reproduce a cube.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub isac: IsacConfig,
    pub scene: SceneParams,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        self.isac.validate()?;
        self.scene.validate(&self.isac)
    }

    pub fn simulate(&self) -> Result<EchoCube<f64>> {
        synth_echo_cube(&self.isac, &self.scene, self.seed)
    }
}

/// SHA-256 of the compact JSON form of `value`.
pub fn config_hash<S: Serialize>(value: &S) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(value)?.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeManifest {
    pub format: String,
    pub frames: usize,
    pub samples_per_frame: usize,
    pub frame_rate_hz: f64,
    pub phase_wavelength_m: f64,
    pub seed: u64,
    pub config_hash: String,
    pub config: SimulationConfig,
    pub data_file: String,
    pub data_sha256: String,
}

pub fn encode_cube(cube: &EchoCube<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(cube.samples.len() * 16);
    for z in &cube.samples {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    out
}

pub fn decode_cube_samples(bytes: &[u8], frames: usize, samples_per_frame: usize) -> Result<Vec<Complex<f64>>> {
    let expected = frames
        .checked_mul(samples_per_frame)
        .and_then(|n| n.checked_mul(16))
        .ok_or_else(|| Error::Format("cube shape overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "cube payload is {} bytes, shape {frames}x{samples_per_frame} needs {expected}",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex::new(re, im)
        })
        .collect())
}

pub fn write_echo_cube(dir: &Path, cube: &EchoCube<f64>, config: &SimulationConfig) -> Result<CubeManifest> {
    std::fs::create_dir_all(dir)?;
    let bytes = encode_cube(cube);
    std::fs::write(dir.join(CUBE_FILE), &bytes)?;
    let manifest = CubeManifest {
        format: CUBE_FORMAT.into(),
        frames: cube.frames,
        samples_per_frame: cube.samples_per_frame,
        frame_rate_hz: cube.frame_rate_hz,
        phase_wavelength_m: cube.phase_wavelength_m,
        seed: config.seed,
        config_hash: config_hash(config)?,
        config: config.clone(),
        data_file: CUBE_FILE.into(),
        data_sha256: sha256_hex(&bytes),
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

pub fn read_echo_cube(dir: &Path) -> Result<(CubeManifest, EchoCube<f64>)> {
    let manifest: CubeManifest = read_manifest(dir)?;
    if manifest.format != CUBE_FORMAT {
        return Err(Error::Format(format!("unsupported cube format `{}`", manifest.format)));
    }
    if config_hash(&manifest.config)? != manifest.config_hash {
        return Err(Error::Data("cube config does not match its recorded hash".into()));
    }
    let path = dir.join(&manifest.data_file);
    let bytes = std::fs::read(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if sha256_hex(&bytes) != manifest.data_sha256 {
        return Err(Error::Data(format!("{}: content hash does not match the manifest", path.display())));
    }
    let samples = decode_cube_samples(&bytes, manifest.frames, manifest.samples_per_frame)?;
    let frame_times_s = (0..manifest.frames).map(|l| manifest.config.isac.frame_time_s(l)).collect();
    let cube = EchoCube {
        frames: manifest.frames,
        samples_per_frame: manifest.samples_per_frame,
        samples,
        frame_times_s,
        frame_rate_hz: manifest.frame_rate_hz,
        phase_wavelength_m: manifest.phase_wavelength_m,
    };
    Ok((manifest, cube))
}

pub fn write_manifest<S: Serialize>(dir: &Path, manifest: &S) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

pub fn read_manifest<D: for<'de> Deserialize<'de>>(dir: &Path) -> Result<D> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Two-column `time_s,<value_name>` CSV.
pub fn write_series_csv<W: Write>(mut w: W, value_name: &str, times_s: &[f64], values: &[f64]) -> Result<()> {
    if times_s.len() != values.len() {
        return Err(Error::Shape(format!("{} times vs {} values", times_s.len(), values.len())));
    }
    writeln!(w, "time_s,{value_name}")?;
    for (t, v) in times_s.iter().zip(values) {
        writeln!(w, "{t},{v}")?;
    }
    Ok(())
}

/// Reads a wrapped phase series from CSV.
///
/// Accepts one column (phase) or two (`time_s`, phase), with or without a
/// header row. With a time column the frame rate comes from its spacing,
/// otherwise `default_rate_hz` is used.
pub fn read_phase_csv<R: Read>(r: R, default_rate_hz: f64, wavelength_m: f64) -> Result<PhaseSeries<f64>> {
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if values.is_empty() && times.is_empty() => continue,
            Err(e) => return Err(Error::Data(format!("line {}: {e}", lineno + 1))),
        };
        match row.as_slice() {
            [v] => values.push(*v),
            [t, v] => {
                times.push(*t);
                values.push(*v);
            }
            _ => return Err(Error::Data(format!("line {}: expected 1 or 2 columns", lineno + 1))),
        }
    }
    if values.is_empty() {
        return Err(Error::Data("phase CSV has no samples".into()));
    }
    if !times.is_empty() && times.len() != values.len() {
        return Err(Error::Data("phase CSV mixes one- and two-column rows".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("phase CSV holds non-finite values".into()));
    }
    let rate = if times.len() >= 2 {
        let span = times[times.len() - 1] - times[0];
        if !(span > 0.0) {
            return Err(Error::Data("time column must increase".into()));
        }
        (times.len() - 1) as f64 / span
    } else {
        default_rate_hz
    };
    Ok(PhaseSeries::new(values, true, rate).with_wavelength(wavelength_m))
}
