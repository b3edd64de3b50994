//! Classical references and event metrics: the brute-force grid oracle,
//! the fixed-template SP baseline, the template objective, event counting
//! and the CSV report writers.

use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dataset::{BsScenario, GroundTruthEvent};
use crate::error::{Error, Result};
use crate::ltm::{reconstruct, MddEstimate};
use crate::phase::{itoh_unwrap, DisplacementSeries, PhaseSeries};

/// Uniform 1-D grid `start + i * step`, `i = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl Grid {
    /// Inclusive range; `count` is rounded so `stop` is hit when it lies on the grid.
    pub fn span(start: f64, stop: f64, step: f64) -> Self {
        Self { start, step, count: ((stop - start) / step + 1e-9).floor() as usize + 1 }
    }

    pub fn value(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.value(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleGrids {
    pub bias_m: Grid,
    pub frequency_hz: Grid,
    pub alpha: f64,
}

impl Default for OracleGrids {
    /// 0–25 mm at 0.1 mm, 0–15 Hz at 0.1 Hz. The low end covers the clutter band on purpose.
    fn default() -> Self {
        Self {
            bias_m: Grid::span(0.0, 25e-3, 1e-4),
            frequency_hz: Grid::span(0.0, 15.0, 0.1),
            alpha: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleFit {
    pub bias_m: f64,
    pub frequency_hz: f64,
    /// `½‖d − b(1 + α sin 2πft)‖²` at the optimum.
    pub cost: f64,
}

/// Exhaustive least squares over the bias/frequency grid.
///
/// Ties go to the smallest bias, then the smallest frequency.
pub fn grid_oracle(d: &DisplacementSeries<f64>, grids: &OracleGrids) -> Result<OracleFit> {
    if grids.bias_m.count == 0 || grids.frequency_hz.count == 0 {
        return Err(Error::Config("oracle grids must be non-empty".into()));
    }
    let n = d.len();
    let energy: f64 = d.values_m.iter().map(|v| v * v).sum();
    let rate = d.frame_rate_hz;
    // For each frequency: <d, u> and ‖u‖² with u = 1 + α sin.
    let per_freq: Vec<(usize, usize, f64)> = (0..grids.frequency_hz.count)
        .into_par_iter()
        .map(|fi| {
            let w = TAU * grids.frequency_hz.value(fi) / rate;
            let (mut cross, mut norm) = (0.0, 0.0);
            for l in 0..n {
                let u = 1.0 + grids.alpha * (w * l as f64).sin();
                cross += d.values_m[l] * u;
                norm += u * u;
            }
            let mut best = (0, f64::INFINITY);
            for bi in 0..grids.bias_m.count {
                let b = grids.bias_m.value(bi);
                let c = 0.5 * (energy - 2.0 * b * cross + b * b * norm);
                if c < best.1 {
                    best = (bi, c);
                }
            }
            (best.0, fi, best.1)
        })
        .collect();
    let (bi, fi, cost) = per_freq
        .into_iter()
        .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)))
        .expect("non-empty grid");
    Ok(OracleFit { bias_m: grids.bias_m.value(bi), frequency_hz: grids.frequency_hz.value(fi), cost })
}

/// `½‖d − b(1 + α sin 2πft)‖²`, the data term the oracle minimises.
pub fn data_term(d: &DisplacementSeries<f64>, bias_m: f64, frequency_hz: f64, alpha: f64) -> f64 {
    let w = TAU * frequency_hz / d.frame_rate_hz;
    0.5 * d
        .values_m
        .iter()
        .enumerate()
        .map(|(l, v)| (v - bias_m * (1.0 + alpha * (w * l as f64).sin())).powi(2))
        .sum::<f64>()
}

/// Template objective: correlation energy minus `penalty` times the mean
/// squared window-to-template distance over all valid windows.
pub fn p1_objective(d: &[f64], template: &[f64], penalty: f64) -> Result<f64> {
    let m = template.len();
    if m == 0 || m >= d.len() {
        return Err(Error::Shape(format!("template of {m} must be shorter than the series of {}", d.len())));
    }
    let windows = d.len() - m + 1;
    let (mut corr, mut dist) = (0.0, 0.0);
    for i in 0..windows {
        let w = &d[i..i + m];
        let c: f64 = w.iter().zip(template).map(|(a, b)| a * b).sum();
        corr += c * c;
        dist += w.iter().zip(template).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(corr - penalty * dist / windows as f64)
}

/// Absolute displacement from a compensated wrapped phase: Itoh unwrap,
/// then `d = -φ λ / 2π` with the zero phase as reference.
pub fn analytic_displacement(phase: &PhaseSeries<f64>) -> DisplacementSeries<f64> {
    let unwrapped = if phase.wrapped { itoh_unwrap(phase) } else { phase.clone() };
    let scale = -phase.wavelength_m / TAU;
    DisplacementSeries::new(unwrapped.values_rad.iter().map(|p| p * scale).collect(), phase.frame_rate_hz)
}

/// Fixed-template filtering: analytic unwrap and conversion followed by the
/// grid-oracle template bank. Nothing is learned.
pub fn sp_baseline(phase: &PhaseSeries<f64>, grids: &OracleGrids) -> Result<MddEstimate<f64>> {
    phase.check()?;
    let d = analytic_displacement(phase);
    let fit = grid_oracle(&d, grids)?;
    Ok(MddEstimate {
        bias_m: fit.bias_m,
        frequency_hz: fit.frequency_hz,
        pooled_peaks: Vec::new(),
        matched_series: Vec::new(),
        reconstructed: reconstruct(fit.bias_m, fit.frequency_hz, grids.alpha, d.len(), d.frame_rate_hz),
    })
}

// ----- events -----

/// How a displacement series is cut into events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRule {
    /// Samples at or above this level belong to a run, mm.
    pub floor_mm: f64,
    /// Runs closer than this merge into one event, s.
    pub min_gap_s: f64,
}

impl Default for EventRule {
    fn default() -> Self {
        Self { floor_mm: 0.25, min_gap_s: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedEvent {
    pub start_s: f64,
    pub end_s: f64,
    pub peak_m: f64,
}

/// Maximal excursions above the floor, merged across short gaps.
pub fn detect_events(series: &DisplacementSeries<f64>, rule: &EventRule) -> Vec<DetectedEvent> {
    let floor = rule.floor_mm * 1e-3;
    let rate = series.frame_rate_hz;
    let gap_frames = rule.min_gap_s * rate - 1e-9;
    let mut out: Vec<(usize, usize, f64)> = Vec::new();
    let mut l = 0;
    let v = &series.values_m;
    while l < v.len() {
        if v[l] < floor {
            l += 1;
            continue;
        }
        let start = l;
        let mut peak = f64::NEG_INFINITY;
        while l < v.len() && v[l] >= floor {
            peak = peak.max(v[l]);
            l += 1;
        }
        match out.last_mut() {
            Some(last) if ((start - last.1) as f64) < gap_frames => {
                last.1 = l;
                last.2 = last.2.max(peak);
            }
            _ => out.push((start, l, peak)),
        }
    }
    out.into_iter()
        .map(|(s, e, p)| DetectedEvent { start_s: s as f64 / rate, end_s: e as f64 / rate, peak_m: p })
        .collect()
}

/// Events whose peak reaches `threshold − delta` (both mm).
pub fn count_events(series: &DisplacementSeries<f64>, threshold_mm: f64, delta_mm: f64, rule: &EventRule) -> Result<usize> {
    if !(threshold_mm > 0.0) {
        return Err(Error::Config(format!("event threshold must be > 0, got {threshold_mm}")));
    }
    let level = (threshold_mm - delta_mm) * 1e-3;
    Ok(detect_events(series, rule).iter().filter(|e| e.peak_m >= level).count())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallStats {
    pub threshold_mm: f64,
    pub delta_mm: f64,
    /// Ground-truth events at or above the threshold.
    pub truth: usize,
    /// Estimated events reaching `threshold − delta`.
    pub detected: usize,
    /// Truth events overlapped by a detected event.
    pub matched: usize,
}

impl RecallStats {
    pub fn recall(&self) -> f64 {
        if self.truth == 0 { 1.0 } else { self.matched as f64 / self.truth as f64 }
    }
}

pub fn event_recall(
    estimated: &DisplacementSeries<f64>,
    truth: &[GroundTruthEvent],
    threshold_mm: f64,
    delta_mm: f64,
    rule: &EventRule,
) -> RecallStats {
    let level = (threshold_mm - delta_mm) * 1e-3;
    let detected: Vec<DetectedEvent> = detect_events(estimated, rule).into_iter().filter(|e| e.peak_m >= level).collect();
    let targets: Vec<&GroundTruthEvent> = truth.iter().filter(|e| e.displacement_m >= threshold_mm * 1e-3).collect();
    let matched = targets
        .iter()
        .filter(|t| detected.iter().any(|d| d.start_s < t.start_s + t.duration_s && d.end_s > t.start_s))
        .count();
    RecallStats { threshold_mm, delta_mm, truth: targets.len(), detected: detected.len(), matched }
}

/// Threshold / tolerance pairs of the event table: 1 and 2 mm at δ 0.1 and 0.2 mm.
pub const EVENT_TABLE: [(f64, f64); 4] = [(1.0, 0.1), (1.0, 0.2), (2.0, 0.1), (2.0, 0.2)];

/// Pooled recall over [`EVENT_TABLE`].
pub fn table_recall(estimated: &DisplacementSeries<f64>, truth: &[GroundTruthEvent], rule: &EventRule) -> (f64, Vec<RecallStats>) {
    let stats: Vec<RecallStats> =
        EVENT_TABLE.iter().map(|&(t, d)| event_recall(estimated, truth, t, d, rule)).collect();
    let truth_total: usize = stats.iter().map(|s| s.truth).sum();
    let matched: usize = stats.iter().map(|s| s.matched).sum();
    let recall = if truth_total == 0 { 1.0 } else { matched as f64 / truth_total as f64 };
    (recall, stats)
}

/// Holds each segment's value for `segment_frames` samples.
pub fn staircase(levels: &[f64], segment_frames: usize, frame_rate_hz: f64) -> DisplacementSeries<f64> {
    let values = levels.iter().flat_map(|&v| std::iter::repeat_n(v, segment_frames)).collect();
    DisplacementSeries::new(values, frame_rate_hz)
}

// ----- spectra -----

/// One-sided amplitude spectrum of the mean-removed series, zero-padded to `nfft`.
pub fn amplitude_spectrum(values: &[f64], frame_rate_hz: f64, nfft: usize) -> (Vec<f64>, Vec<f64>) {
    let nfft = nfft.max(values.len()).max(1);
    let mean = if values.is_empty() { 0.0 } else { values.iter().sum::<f64>() / values.len() as f64 };
    let mut buf: Vec<Complex<f64>> = values.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(nfft, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let half = nfft / 2 + 1;
    let norm = 2.0 / values.len().max(1) as f64;
    let freqs = (0..half).map(|k| k as f64 * frame_rate_hz / nfft as f64).collect();
    let amps = buf[..half].iter().map(|c| c.norm() * norm).collect();
    (freqs, amps)
}

/// Strongest non-DC line and the bin width.
pub fn dominant_line(values: &[f64], frame_rate_hz: f64, nfft: usize) -> Result<(f64, f64)> {
    let (freqs, amps) = amplitude_spectrum(values, frame_rate_hz, nfft);
    if freqs.len() < 2 {
        return Err(Error::EmptySpectrum("series too short for a non-DC line".into()));
    }
    let k = (1..amps.len()).max_by(|&a, &b| amps[a].total_cmp(&amps[b]).then(b.cmp(&a))).expect("bins");
    if !(amps[k] > 0.0) {
        return Err(Error::EmptySpectrum("series has no non-DC content".into()));
    }
    Ok((freqs[k], freqs[1]))
}

// ----- clutter scenario -----

/// Static segments count as quiet when the estimate stays within this, mm.
pub const STATIC_TOLERANCE_MM: f64 = 0.15;

/// Per-segment `(bias, frequency, failed)`; a failed segment reads `(0, 0)`.
pub type SegmentEstimate = (f64, f64, bool);

pub fn ltm_segment_estimates(params: &crate::ltm::LtmParams<f64>, sc: &BsScenario) -> Vec<SegmentEstimate> {
    let phases: Vec<PhaseSeries<f64>> = (0..sc.segment_count()).map(|k| sc.segment_phase(k)).collect();
    crate::ltm::infer_batch(params, &phases)
        .into_iter()
        .map(|r| r.map_or((0.0, 0.0, true), |e| (e.bias_m, e.frequency_hz, false)))
        .collect()
}

pub fn sp_segment_estimates(sc: &BsScenario, grids: &OracleGrids) -> Vec<SegmentEstimate> {
    (0..sc.segment_count())
        .into_par_iter()
        .map(|k| sp_baseline(&sc.segment_phase(k), grids).map_or((0.0, 0.0, true), |e| (e.bias_m, e.frequency_hz, false)))
        .collect()
}

/// Readings of one estimator over a clutter scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    /// Share of static-segment frames with `|bias| <= STATIC_TOLERANCE_MM`.
    pub static_within: f64,
    /// Same share for an ideal estimator that returns each static segment's
    /// true mean displacement.
    pub static_within_ideal: f64,
    pub recall: f64,
    pub recall_stats: Vec<RecallStats>,
    pub event_bias_mae_m: f64,
    /// Dominant residual line of each event segment, at the segment's own
    /// resolution.
    pub event_residual_lines_hz: Vec<f64>,
    pub segment_bin_hz: f64,
    /// Dominant line of the residual over the whole series.
    pub residual_line_hz: f64,
    pub residual_bin_hz: f64,
    pub event_frequencies_hz: Vec<f64>,
    pub failures: usize,
}

impl ScenarioReport {
    pub fn rows(&self, method: &str) -> Vec<MetricRow> {
        let mut rows = vec![
            MetricRow::new(method, "static_within", self.static_within),
            MetricRow::new(method, "event_recall", self.recall),
            MetricRow::new(method, "event_bias_mae_m", self.event_bias_mae_m),
            MetricRow::new(method, "residual_line_hz", self.residual_line_hz),
            MetricRow::new(method, "scenario_failures", self.failures as f64),
        ];
        for s in &self.recall_stats {
            let key = format!("thr{}_d{}", s.threshold_mm, s.delta_mm);
            rows.push(MetricRow::new(method, format!("{key}_detected"), s.detected as f64));
            rows.push(MetricRow::new(method, format!("{key}_matched"), s.matched as f64));
            rows.push(MetricRow::new(method, format!("{key}_truth"), s.truth as f64));
        }
        rows
    }
}

pub fn scenario_report(sc: &BsScenario, estimates: &[SegmentEstimate]) -> Result<ScenarioReport> {
    let n = sc.spec.segment_frames;
    let rate = sc.spec.frame_rate_hz;
    if estimates.len() != sc.segment_count() {
        return Err(Error::Shape(format!("{} estimates for {} segments", estimates.len(), sc.segment_count())));
    }
    let tol = STATIC_TOLERANCE_MM * 1e-3;
    let (mut quiet, mut quiet_ideal, mut statics) = (0usize, 0usize, 0usize);
    let mut residual = Vec::with_capacity(sc.observed.len());
    let mut lines = Vec::new();
    let mut freqs = Vec::new();
    let mut bias_err = 0.0;
    let mut segment_bin = rate / n as f64;
    for (k, &(b, f, _)) in estimates.iter().enumerate() {
        let seg = sc.segment(k);
        let fit = reconstruct(b, f, sc.spec.alpha, n, rate);
        let r: Vec<f64> = seg.iter().zip(&fit.values_m).map(|(x, y)| x - y).collect();
        match sc.segment_events[k] {
            None => {
                statics += 1;
                quiet += usize::from(b.abs() <= tol);
                let mean = seg.iter().sum::<f64>() / n as f64;
                quiet_ideal += usize::from(mean.abs() <= tol);
            }
            Some(e) => {
                let (line, bin) = dominant_line(&r, rate, 0)?;
                segment_bin = bin;
                lines.push(line);
                freqs.push(f);
                bias_err += (b - sc.events[e].displacement_m).abs();
            }
        }
        residual.extend(r);
    }
    let (residual_line_hz, residual_bin_hz) = dominant_line(&residual, rate, 0)?;
    let levels: Vec<f64> = estimates.iter().map(|e| e.0).collect();
    let (recall, recall_stats) = table_recall(&staircase(&levels, n, rate), &sc.events, &EventRule::default());
    let share = |c: usize| if statics == 0 { 1.0 } else { c as f64 / statics as f64 };
    Ok(ScenarioReport {
        static_within: share(quiet),
        static_within_ideal: share(quiet_ideal),
        recall,
        recall_stats,
        event_bias_mae_m: if lines.is_empty() { 0.0 } else { bias_err / lines.len() as f64 },
        event_residual_lines_hz: lines,
        segment_bin_hz: segment_bin,
        residual_line_hz,
        residual_bin_hz,
        event_frequencies_hz: freqs,
        failures: estimates.iter().filter(|e| e.2).count(),
    })
}

// ----- reports -----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(method: impl Into<String>, metric: impl Into<String>, value: f64) -> Self {
        Self { method: method.into(), metric: metric.into(), value }
    }
}

pub const METRICS_HEADER: &str = "method,metric,value";

/// `method,metric,value` rows; values use Rust's shortest round-trip form.
pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[MetricRow]) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        if r.method.contains(',') || r.metric.contains(',') {
            return Err(Error::Format(format!("comma in metric key `{}/{}`", r.method, r.metric)));
        }
        writeln!(w, "{},{},{}", r.method, r.metric, r.value)?;
    }
    Ok(())
}

pub fn read_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format("metrics file lacks the `method,metric,value` header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let mut f = l.splitn(3, ',');
            let (Some(m), Some(k), Some(v)) = (f.next(), f.next(), f.next()) else {
                return Err(Error::Format(format!("bad metrics line `{l}`")));
            };
            let value = v.parse().map_err(|e| Error::Format(format!("`{v}`: {e}")))?;
            Ok(MetricRow::new(m, k, value))
        })
        .collect()
}

/// Two-column plot data.
pub fn write_xy_csv<W: Write>(mut w: W, x_name: &str, y_name: &str, xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("{} x values vs {} y values", xs.len(), ys.len())));
    }
    writeln!(w, "{x_name},{y_name}")?;
    for (x, y) in xs.iter().zip(ys) {
        writeln!(w, "{x},{y}")?;
    }
    Ok(())
}

/// Metrics table pivoted to one row per method, one column per metric,
/// written as `<dir>/summary.csv`.
pub fn write_summary(dir: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut methods: Vec<&str> = Vec::new();
    let mut metrics: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
        if !metrics.contains(&r.metric.as_str()) {
            metrics.push(&r.metric);
        }
    }
    std::fs::create_dir_all(dir)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("summary.csv"))?);
    writeln!(w, "method{}", metrics.iter().map(|m| format!(",{m}")).collect::<String>())?;
    for m in methods {
        write!(w, "{m}")?;
        for k in &metrics {
            match rows.iter().find(|r| r.method == m && r.metric == *k) {
                Some(r) => write!(w, ",{}", r.value)?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
