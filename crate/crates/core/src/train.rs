//! Mini-batch Adam training of the template-matching network and the
//! evaluation metrics.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledSample;
use crate::diff::{ParamStore, Tape};
use crate::error::{Error, Result};
use crate::loss::{loss_on_tape, loss_total, LossBreakdown, LossConfig, MddLabel};
use crate::ltm::{forward_on_tape, infer_batch, LtmParams, Mode};
use crate::phase::PhaseSeries;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// `None` means `⌈n / 25⌉`, i.e. 25 steps per epoch.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: None,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(10.0),
            seed: 0,
            loss: LossConfig::millimetre(),
        }
    }
}

pub const STEPS_PER_EPOCH: usize = 25;

impl TrainConfig {
    pub fn batch_for(&self, n: usize) -> usize {
        self.batch_size.unwrap_or(n.div_ceil(STEPS_PER_EPOCH)).clamp(1, n.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.clip_norm.is_none_or(|c| c > 0.0)
            && self.batch_size != Some(0);
        if ok { Ok(()) } else { Err(Error::Config(format!("invalid training config {self:?}"))) }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            step: 0,
            m: store.zeros_like(),
            v: store.zeros_like(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Vec<T>]) {
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(self.step));
        let c2 = T::lit(1.0 - self.beta2.powi(self.step));
        let (lr, eps, one) = (T::lit(self.lr), T::lit(self.eps), T::one());
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = store.get_mut(id);
            for (k, &g) in grads[i].iter().enumerate() {
                let m = b1 * self.m[i][k] + (one - b1) * g;
                let v = b2 * self.v[i][k] + (one - b2) * g * g;
                self.m[i][k] = m;
                self.v[i][k] = v;
                p[k] = p[k] - lr * (m / c1) / ((v / c2).sqrt() + eps);
            }
        }
    }
}

/// Scales `grads` in place so their joint ℓ2 norm is at most `max_norm`;
/// returns the norm before scaling.
pub fn clip_global_norm<T: Real>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g.as_f64().powi(2)).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = T::lit(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g = *g * s);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub epoch: usize,
    pub iteration: usize,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
    /// Samples whose frequency path had nothing to lock on to.
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: Option<LossBreakdown>,
    pub val_metrics: Option<EvalMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    /// Parameters of the best validation epoch (last epoch without validation data).
    pub params: LtmParams<T>,
    pub iterations: Vec<IterationLog>,
    pub epochs: Vec<EpochLog>,
    /// 1-based; 0 when no epoch ran.
    pub best_epoch: usize,
}

fn to_real<T: Real>(p: &PhaseSeries<f64>) -> PhaseSeries<T> {
    PhaseSeries {
        values_rad: p.values_rad.iter().map(|&v| T::lit(v)).collect(),
        wrapped: p.wrapped,
        frame_rate_hz: p.frame_rate_hz,
        wavelength_m: p.wavelength_m,
    }
}

/// Loss and parameter gradients of one sample; `None` when its frequency
/// path is empty.
fn sample_grad<T: Real>(
    tape: &mut Tape<T>,
    params: &LtmParams<T>,
    phase: &[T],
    label: &MddLabel,
    loss: &LossConfig,
) -> Result<Option<(LossBreakdown, Vec<Vec<T>>)>> {
    tape.reset();
    let (vars, f) = match forward_on_tape(tape, params, phase, Mode::Train) {
        Ok(v) => v,
        Err(Error::EmptySpectrum(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let (total, breakdown) = loss_on_tape(tape, vars.bias, vars.frequency, f, label, loss)?;
    let grads = tape.backward(total, &params.store)?;
    Ok(Some((breakdown, grads)))
}

/// Trains from `init`. Steps are sequential; each batch is sharded across
/// the rayon pool and reduced in sample order, so the result does not depend
/// on the thread count.
pub fn train<T: Real>(
    init: &LtmParams<T>,
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let phases: Vec<PhaseSeries<T>> = train_set.iter().map(|s| to_real(&s.phase)).collect();
    let mut params = init.clone();
    let mut best = (init.clone(), f64::INFINITY, 0);
    let mut opt = Adam::new(&params.store, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batch = cfg.batch_for(train_set.len());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut iterations = Vec::new();
    let mut epochs = Vec::new();
    let mut iteration = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = LossBreakdown::default();
        let mut epoch_count = 0usize;
        for chunk in order.chunks(batch) {
            iteration += 1;
            let results: Vec<Result<Option<(LossBreakdown, Vec<Vec<T>>)>>> = chunk
                .par_iter()
                .map_init(Tape::new, |tape, &i| {
                    sample_grad(tape, &params, &phases[i].values_rad, &train_set[i].label, &cfg.loss)
                })
                .collect();
            let mut grads = params.store.zeros_like();
            let mut sum = LossBreakdown::default();
            let (mut used, mut skipped) = (0usize, 0usize);
            for r in results {
                match r? {
                    None => skipped += 1,
                    Some((b, g)) => {
                        sum.accumulate(&b);
                        used += 1;
                        for (acc, gi) in grads.iter_mut().zip(&g) {
                            for (a, &v) in acc.iter_mut().zip(gi) {
                                *a = *a + v;
                            }
                        }
                    }
                }
            }
            if used == 0 {
                return Err(Error::Data(format!("every sample of batch {iteration} has an empty spectrum")));
            }
            let inv = T::lit(1.0 / used as f64);
            grads.iter_mut().flatten().for_each(|g| *g = *g * inv);
            let mean = sum.scaled(1.0 / used as f64);
            let finite = mean.total.is_finite() && grads.iter().flatten().all(|g| g.as_f64().is_finite());
            if !finite {
                return Err(Error::Diverged { iteration });
            }
            let grad_norm = match cfg.clip_norm {
                Some(c) => clip_global_norm(&mut grads, c),
                None => grads.iter().flatten().map(|g| g.as_f64().powi(2)).sum::<f64>().sqrt(),
            };
            opt.step(&mut params.store, &grads);
            iterations.push(IterationLog { epoch, iteration, loss: mean, grad_norm, skipped });
            epoch_sum.accumulate(&sum);
            epoch_count += used;
        }
        let train_mean = epoch_sum.scaled(1.0 / epoch_count.max(1) as f64);
        let (val, val_metrics) = if val_set.is_empty() {
            (None, None)
        } else {
            let (l, m) = validate(&params, val_set, &cfg.loss);
            (Some(l), Some(m))
        };
        let score = val.map_or(f64::NEG_INFINITY, |v| v.total);
        if !score.is_finite() && val.is_some() {
            return Err(Error::Diverged { iteration });
        }
        if score < best.1 || val.is_none() {
            best = (params.clone(), score, epoch);
        }
        epochs.push(EpochLog { epoch, train: train_mean, val, val_metrics });
    }
    Ok(TrainOutcome { params: best.0, iterations, epochs, best_epoch: best.2 })
}

/// Hard-mode loss and metrics on a held-out set.
fn validate<T: Real>(params: &LtmParams<T>, set: &[LabeledSample], loss: &LossConfig) -> (LossBreakdown, EvalMetrics) {
    let preds = predict(params, set);
    let mut sum = LossBreakdown::default();
    for (p, s) in preds.iter().zip(set) {
        sum.accumulate(&loss_total(p.0, p.1, &s.label, loss));
    }
    let labels: Vec<MddLabel> = set.iter().map(|s| s.label).collect();
    (sum.scaled(1.0 / set.len() as f64), metrics_from(&preds, &labels))
}

/// `(bias, frequency)` per sample; a failed inference counts as `(0, 0)`
/// and is flagged in the third field.
pub fn predict<T: Real>(params: &LtmParams<T>, set: &[LabeledSample]) -> Vec<(f64, f64, bool)> {
    let phases: Vec<PhaseSeries<T>> = set.iter().map(|s| to_real(&s.phase)).collect();
    infer_batch(params, &phases)
        .into_iter()
        .map(|r| match r {
            Ok(e) => (e.bias_m.as_f64(), e.frequency_hz.as_f64(), false),
            Err(_) => (0.0, 0.0, true),
        })
        .collect()
}

/// Frequency error that counts as a hit.
pub const FREQ_HIT_HZ: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub samples: usize,
    pub bias_mae_m: f64,
    pub bias_rmse_m: f64,
    pub freq_mae_hz: f64,
    /// Share of samples with frequency error at most [`FREQ_HIT_HZ`].
    pub freq_hit_rate: f64,
    pub failures: usize,
}

pub fn metrics_from(preds: &[(f64, f64, bool)], labels: &[MddLabel]) -> EvalMetrics {
    let n = preds.len().max(1) as f64;
    let (mut ae, mut se, mut fe, mut hits, mut fails) = (0.0, 0.0, 0.0, 0usize, 0usize);
    for (&(b, f, failed), l) in preds.iter().zip(labels) {
        let e = (b - l.bias_m).abs();
        ae += e;
        se += e * e;
        let ef = (f - l.frequency_hz).abs();
        fe += ef;
        hits += usize::from(ef <= FREQ_HIT_HZ);
        fails += usize::from(failed);
    }
    EvalMetrics {
        samples: preds.len(),
        bias_mae_m: ae / n,
        bias_rmse_m: (se / n).sqrt(),
        freq_mae_hz: fe / n,
        freq_hit_rate: hits as f64 / n,
        failures: fails,
    }
}

/// Hard-mode inference metrics over a labelled set.
pub fn evaluate<T: Real>(params: &LtmParams<T>, set: &[LabeledSample]) -> Result<EvalMetrics> {
    if set.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let labels: Vec<MddLabel> = set.iter().map(|s| s.label).collect();
    Ok(metrics_from(&predict(params, set), &labels))
}

pub const LOSS_LOG_HEADER: &str = "epoch,iteration,l_r,l_f,l_d,total,grad_norm,skipped";

pub fn write_loss_log<W: Write>(mut w: W, log: &[IterationLog]) -> Result<()> {
    writeln!(w, "{LOSS_LOG_HEADER}")?;
    for r in log {
        let l = r.loss;
        writeln!(w, "{},{},{},{},{},{},{},{}", r.epoch, r.iteration, l.l_r, l.l_f, l.l_d, l.total, r.grad_norm, r.skipped)?;
    }
    Ok(())
}

pub const EPOCH_LOG_HEADER: &str = "epoch,train_total,val_total,val_bias_mae_m,val_freq_mae_hz,val_freq_hit_rate";

pub fn write_epoch_log<W: Write>(mut w: W, log: &[EpochLog]) -> Result<()> {
    writeln!(w, "{EPOCH_LOG_HEADER}")?;
    for e in log {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        writeln!(
            w,
            "{},{},{},{},{},{}",
            e.epoch,
            e.train.total,
            opt(e.val.map(|v| v.total)),
            opt(e.val_metrics.map(|m| m.bias_mae_m)),
            opt(e.val_metrics.map(|m| m.freq_mae_hz)),
            opt(e.val_metrics.map(|m| m.freq_hit_rate)),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_training_set, DatasetSpec};
    use crate::loss::LossFlags;
    use crate::ltm::LtmConfig;
    use crate::sim::IsacConfig;

    fn tiny_set(n: usize, seed: u64) -> Vec<LabeledSample> {
        let spec = DatasetSpec {
            samples: n,
            split_counts: None,
            isac: IsacConfig { frames_per_slot: 600, ..IsacConfig::default() },
            seed,
            ..DatasetSpec::desk()
        };
        gen_training_set(&spec).unwrap().samples
    }

    #[test]
    fn zero_epochs_leave_params_unchanged() {
        let p = LtmParams::<f64>::new(LtmConfig::default(), 1).unwrap();
        let out = train(&p, &tiny_set(3, 1), &[], &TrainConfig { epochs: 0, ..Default::default() }).unwrap();
        assert_eq!(out.params, p);
        assert!(out.iterations.is_empty());
        assert_eq!(out.best_epoch, 0);
    }

    #[test]
    fn bias_only_objective_decreases_monotonically() {
        // Only the last-layer bias moves the bias estimate linearly, so the
        // bias term is a convex quadratic in it.
        let p = LtmParams::<f64>::new(LtmConfig::default(), 2).unwrap();
        let set = tiny_set(4, 2);
        let loss = LossConfig::with_flags(LossFlags { bias: true, frequency: false, reconstruction: false });
        let cfg = TrainConfig { epochs: 30, batch_size: Some(4), learning_rate: 2e-6, beta1: 0.0, loss, ..Default::default() };
        let mut frozen = p.clone();
        let mut opt = Adam::new(&frozen.store, &cfg);
        let mut last = f64::INFINITY;
        for _ in 0..cfg.epochs {
            let mut tape = Tape::new();
            let mut grads = frozen.store.zeros_like();
            let mut total = 0.0;
            for s in &set {
                let (b, g) = sample_grad(&mut tape, &frozen, &s.phase.values_rad, &s.label, &cfg.loss).unwrap().unwrap();
                total += b.total;
                for (a, gi) in grads.iter_mut().zip(g) {
                    a.iter_mut().zip(gi).for_each(|(x, y)| *x += y);
                }
            }
            // Freeze everything but the final bias.
            let keep = frozen.store.id(&crate::ltm::bias_name(2)).unwrap().index();
            for (i, g) in grads.iter_mut().enumerate() {
                if i != keep {
                    g.iter_mut().for_each(|x| *x = 0.0);
                }
            }
            assert!(total <= last * (1.0 + 1e-12), "{total} > {last}");
            last = total;
            opt.step(&mut frozen.store, &grads);
        }
    }

    #[test]
    fn log_length_and_determinism() {
        let p = LtmParams::<f64>::new(LtmConfig::default(), 3).unwrap();
        let set = tiny_set(10, 3);
        let cfg = TrainConfig { epochs: 2, batch_size: Some(4), seed: 9, ..Default::default() };
        let a = train(&p, &set[..8], &set[8..], &cfg).unwrap();
        let b = train(&p, &set[..8], &set[8..], &cfg).unwrap();
        assert_eq!(a.iterations.len(), 2 * 2);
        assert_eq!(a.params, b.params);
        assert_eq!(a.iterations, b.iterations);
        for (x, y) in a.params.store.iter().zip(p.store.iter()) {
            assert_eq!(x.1.len(), y.1.len());
        }
        assert_eq!(TrainConfig::default().batch_for(2000), 80);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let p = LtmParams::<f64>::new(LtmConfig::default(), 3).unwrap();
        assert!(matches!(train(&p, &[], &[], &TrainConfig::default()), Err(Error::Data(_))));
    }

    #[test]
    fn divergence_is_caught() {
        let mut p = LtmParams::<f64>::new(LtmConfig::default(), 4).unwrap();
        p.bias_mut(2)[0] = f64::NAN;
        let cfg = TrainConfig { epochs: 1, batch_size: Some(2), ..Default::default() };
        let r = train(&p, &tiny_set(2, 4), &[], &cfg);
        assert!(matches!(r, Err(Error::Diverged { iteration: 1 }) | Err(Error::EmptySpectrum(_)) | Err(Error::Data(_))), "{r:?}");
    }

    #[test]
    fn metrics_examples() {
        let labels: Vec<MddLabel> = (0..=2500)
            .map(|i| MddLabel { bias_m: i as f64 * 1e-5, amplitude_m: 0.0, frequency_hz: 10.0, snr_db: None })
            .collect();
        let perfect: Vec<_> = labels.iter().map(|l| (l.bias_m, l.frequency_hz, false)).collect();
        let m = metrics_from(&perfect, &labels);
        assert_eq!((m.bias_mae_m, m.freq_mae_hz, m.freq_hit_rate), (0.0, 0.0, 1.0));
        let zero: Vec<_> = labels.iter().map(|_| (0.0, 10.0, false)).collect();
        assert!((metrics_from(&zero, &labels).bias_mae_m - 12.5e-3).abs() < 1e-12);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![vec![3.0, 4.0], vec![12.0]];
        assert_eq!(clip_global_norm(&mut g, 6.5), 13.0);
        let n: f64 = g.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 6.5).abs() < 1e-12);
    }
}
