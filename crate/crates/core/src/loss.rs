//! Three-term training objective: bias error, frequency error and the
//! reconstruction term, each switchable for ablations.
//!
//! Units are mixed (m² and Hz²) and no normalisation is applied.

use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Ground truth of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MddLabel {
    pub bias_m: f64,
    pub amplitude_m: f64,
    pub frequency_hz: f64,
    pub snr_db: Option<f64>,
}

/// Which terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossFlags {
    pub bias: bool,
    pub frequency: bool,
    pub reconstruction: bool,
}

impl Default for LossFlags {
    fn default() -> Self {
        Self { bias: true, frequency: true, reconstruction: true }
    }
}

impl LossFlags {
    pub fn as_tuple(self) -> (u8, u8, u8) {
        (u8::from(self.bias), u8::from(self.frequency), u8::from(self.reconstruction))
    }
}

/// Maps `full`, `no_lr`, `no_lf` or `no_ld` to term flags.
pub fn ablation_variant(name: &str) -> Result<LossFlags> {
    let all = LossFlags::default();
    match name {
        "full" => Ok(all),
        "no_lr" => Ok(LossFlags { bias: false, ..all }),
        "no_lf" => Ok(LossFlags { frequency: false, ..all }),
        "no_ld" => Ok(LossFlags { reconstruction: false, ..all }),
        other => Err(Error::Config(format!("unknown loss variant `{other}`"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub flags: LossFlags,
    pub bias_weight: f64,
    pub frequency_weight: f64,
    pub reconstruction_weight: f64,
    /// Points of the unit time grid averaged in the reconstruction term.
    pub reconstruction_points: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            flags: LossFlags::default(),
            bias_weight: 1.0,
            frequency_weight: 1.0,
            reconstruction_weight: 1.0,
            reconstruction_points: 200,
        }
    }
}

impl LossConfig {
    pub fn with_flags(flags: LossFlags) -> Self {
        Self { flags, ..Self::default() }
    }

    /// Unit weights with the metre-valued terms read in mm², so the bias
    /// and frequency terms start on comparable scales.
    pub fn millimetre() -> Self {
        Self { bias_weight: 1e6, reconstruction_weight: 1e6, ..Self::default() }
    }

    /// `t_i = (i - 1) / N` for `i = 1..N`.
    pub fn time_grid(&self) -> Vec<f64> {
        let n = self.reconstruction_points.max(1);
        (0..n).map(|i| i as f64 / n as f64).collect()
    }
}

/// Term values of one sample or the mean over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_r: f64,
    pub l_f: f64,
    pub l_d: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn accumulate(&mut self, other: &Self) {
        self.l_r += other.l_r;
        self.l_f += other.l_f;
        self.l_d += other.l_d;
        self.total += other.total;
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            l_r: self.l_r * factor,
            l_f: self.l_f * factor,
            l_d: self.l_d * factor,
            total: self.total * factor,
        }
    }
}

fn mean_sin(f: f64, times: &[f64]) -> f64 {
    times.iter().map(|t| (std::f64::consts::TAU * f * t).sin()).sum::<f64>() / times.len() as f64
}

/// Loss from plain estimates.
pub fn loss_total(bias_m: f64, frequency_hz: f64, label: &MddLabel, cfg: &LossConfig) -> LossBreakdown {
    let times = cfg.time_grid();
    let l_r = (bias_m - label.bias_m).powi(2);
    let l_f = (label.frequency_hz - frequency_hz).powi(2);
    let target = label.bias_m + label.amplitude_m * (mean_sin(label.frequency_hz, &times) - mean_sin(frequency_hz, &times));
    let l_d = (bias_m - target).powi(2);
    let f = cfg.flags;
    let total = if f.bias { cfg.bias_weight * l_r } else { 0.0 }
        + if f.frequency { cfg.frequency_weight * l_f } else { 0.0 }
        + if f.reconstruction { cfg.reconstruction_weight * l_d } else { 0.0 };
    LossBreakdown { l_r, l_f, l_d, total }
}

/// Records the loss on `tape` and returns the scalar node plus its values.
///
/// `frequency` may be absent when only the bias path is differentiable; the
/// frequency then enters as the constant `frequency_value`.
pub fn loss_on_tape<T: Real>(
    tape: &mut Tape<T>,
    bias: Var,
    frequency: Option<Var>,
    frequency_value: T,
    label: &MddLabel,
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    let times: Vec<T> = cfg.time_grid().into_iter().map(T::lit).collect();
    let freq = match frequency {
        Some(f) => f,
        None => tape.leaf(vec![frequency_value]),
    };
    let d_r = tape.leaf(vec![T::lit(label.bias_m)]);
    let f_v = tape.leaf(vec![T::lit(label.frequency_hz)]);

    let e_r = tape.sub(bias, d_r);
    let l_r = tape.square(e_r);
    let e_f = tape.sub(f_v, freq);
    let l_f = tape.square(e_f);
    let sin_true = T::lit(mean_sin(label.frequency_hz, &cfg.time_grid()));
    let sin_est = tape.sin_mean(freq, &times);
    // d_r + d_a (mean sin(2π f_v t) - mean sin(2π f̂ t))
    let shifted = tape.scale(sin_est, T::lit(-label.amplitude_m));
    let offset = tape.leaf(vec![T::lit(label.bias_m) + T::lit(label.amplitude_m) * sin_true]);
    let target = tape.add(offset, shifted);
    let e_d = tape.sub(bias, target);
    let l_d = tape.square(e_d);

    let f = cfg.flags;
    let mut terms = Vec::new();
    if f.bias {
        terms.push(tape.scale(l_r, T::lit(cfg.bias_weight)));
    }
    if f.frequency {
        terms.push(tape.scale(l_f, T::lit(cfg.frequency_weight)));
    }
    if f.reconstruction {
        terms.push(tape.scale(l_d, T::lit(cfg.reconstruction_weight)));
    }
    let total = match terms.split_first() {
        None => tape.leaf(vec![T::zero()]),
        Some((&first, rest)) => rest.iter().fold(first, |acc, &t| tape.add(acc, t)),
    };
    let breakdown = LossBreakdown {
        l_r: tape.scalar(l_r).as_f64(),
        l_f: tape.scalar(l_f).as_f64(),
        l_d: tape.scalar(l_d).as_f64(),
        total: tape.scalar(total).as_f64(),
    };
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn label() -> MddLabel {
        MddLabel { bias_m: 0.012, amplitude_m: 0.0012, frequency_hz: 9.3, snr_db: Some(4.0) }
    }

    #[test]
    fn perfect_estimate_is_zero() {
        let l = label();
        let b = loss_total(l.bias_m, l.frequency_hz, &l, &LossConfig::default());
        assert_eq!(b, LossBreakdown::default());
    }

    #[test]
    fn one_millimetre_bias_error() {
        let l = label();
        let b = loss_total(l.bias_m + 0.001, l.frequency_hz, &l, &LossConfig::default());
        assert!((b.l_r - 1e-6).abs() < 1e-15);
        assert_eq!(b.l_f, 0.0);
        assert!((b.l_d - 1e-6).abs() < 1e-15);
        assert!((b.total - 2e-6).abs() < 1e-15);
    }

    #[test]
    fn one_hertz_frequency_error() {
        let l = label();
        let b = loss_total(l.bias_m, l.frequency_hz + 1.0, &l, &LossConfig::default());
        assert_eq!(b.l_r, 0.0);
        assert!((b.l_f - 1.0).abs() < 1e-12);
        // Closed form: mean of sin over N equispaced points on [0, 1).
        let n = 200.0;
        let closed = |f: f64| {
            let h = std::f64::consts::PI * f / n;
            (std::f64::consts::PI * f).sin() * ((n - 1.0) * h).sin() / (n * h.sin())
        };
        let expect = (l.amplitude_m * (closed(l.frequency_hz) - closed(l.frequency_hz + 1.0))).powi(2);
        assert!((b.l_d - expect).abs() < 1e-18, "{} vs {expect}", b.l_d);
        assert!(b.l_d > 0.0);
    }

    #[test]
    fn variants_map_to_flags() {
        assert_eq!(ablation_variant("full").unwrap().as_tuple(), (1, 1, 1));
        assert_eq!(ablation_variant("no_lr").unwrap().as_tuple(), (0, 1, 1));
        assert_eq!(ablation_variant("no_lf").unwrap().as_tuple(), (1, 0, 1));
        assert_eq!(ablation_variant("no_ld").unwrap().as_tuple(), (1, 1, 0));
        assert!(ablation_variant("lr").is_err());
    }

    #[test]
    fn ablated_terms_leave_the_total() {
        let l = label();
        let cfg = LossConfig::with_flags(ablation_variant("no_lr").unwrap());
        let b = loss_total(l.bias_m + 0.001, l.frequency_hz + 1.0, &l, &cfg);
        assert!((b.total - (b.l_f + b.l_d)).abs() < 1e-15);
        assert!(b.l_r > 0.0);
    }

    #[test]
    fn tape_and_value_paths_agree() {
        let l = label();
        for flags in ["full", "no_lr", "no_lf", "no_ld"] {
            let cfg = LossConfig::with_flags(ablation_variant(flags).unwrap());
            let mut t = Tape::<f64>::new();
            let b = t.leaf(vec![0.0105]);
            let f = t.leaf(vec![11.7]);
            let (total, br) = loss_on_tape(&mut t, b, Some(f), 11.7, &l, &cfg).unwrap();
            let direct = loss_total(0.0105, 11.7, &l, &cfg);
            assert!((t.scalar(total) - direct.total).abs() < 1e-12);
            assert!((br.l_d - direct.l_d).abs() < 1e-15);
        }
    }

    #[test]
    fn tape_gradients_match_finite_difference() {
        let l = label();
        let cfg = LossConfig::default();
        let eval = |b: f64, f: f64| loss_total(b, f, &l, &cfg).total;
        let mut t = Tape::<f64>::new();
        let b = t.leaf(vec![0.0105]);
        let f = t.leaf(vec![11.7]);
        let (total, _) = loss_on_tape(&mut t, b, Some(f), 11.7, &l, &cfg).unwrap();
        let gb = t.grad_of(total, b).unwrap()[0];
        let gf = t.grad_of(total, f).unwrap()[0];
        let nb = (eval(0.0105 + 1e-7, 11.7) - eval(0.0105 - 1e-7, 11.7)) / 2e-7;
        let nf = (eval(0.0105, 11.7 + 1e-5) - eval(0.0105, 11.7 - 1e-5)) / 2e-5;
        assert!((gb - nb).abs() / nb.abs() < 1e-6);
        assert!((gf - nf).abs() / nf.abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn exact_frequency_makes_reconstruction_equal_bias_term(b in -0.03f64..0.03, d in 0.0f64..0.025, f in 5.0f64..15.0) {
            let l = MddLabel { bias_m: d, amplitude_m: 0.1 * d, frequency_hz: f, snr_db: None };
            let br = loss_total(b, f, &l, &LossConfig::default());
            prop_assert!((br.l_d - br.l_r).abs() <= 1e-18);
            prop_assert!(br.l_r >= 0.0 && br.l_f >= 0.0 && br.l_d >= 0.0);
            prop_assert!((br.total - (br.l_r + br.l_f + br.l_d)).abs() <= 1e-12 * br.total.max(1.0));
        }
    }
}
