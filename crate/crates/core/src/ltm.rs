//! Learnable template-matching network.
//!
//! Wrapped phase → three conv/LeakyReLU layers (learned unwrap and
//! phase-to-displacement mapping) → sliding correlation with a learnable
//! template → max pooling → bias as the mean of pooled peaks. The vibration
//! frequency is the spectral peak of the matched series: a softmax-weighted
//! estimate while training, the hard argmax at inference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diff::{hard_argmax_freq, ConvShape, ParamId, ParamStore, Tape, Temperature, Var};
use crate::error::{Error, Result};
use crate::phase::{DisplacementSeries, PhaseSeries};
use crate::scalar::Real;

pub const LAYERS: usize = 3;
const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateInit {
    /// Biased sinusoid at the prior frequency, unit ℓ2 norm.
    Physical,
    Random,
}

/// Architecture and estimator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LtmConfig {
    pub hidden_channels: usize,
    pub template_len: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub match_stride: usize,
    /// Vibration amplitude as a fraction of the bias.
    pub alpha: f64,
    pub negative_slope: f64,
    pub frame_rate_hz: f64,
    /// Bin spacing of the zero-padded spectrum.
    pub freq_resolution_hz: f64,
    pub temperature: Temperature,
    pub template_init: TemplateInit,
    pub template_prior_hz: f64,
    /// Phase-to-displacement factor the initial CNN approximates, metres per radian.
    pub init_gain_m_per_rad: f64,
    /// Relative spread of the random kernel perturbation.
    pub init_jitter: f64,
    /// Length unit of the CNN output and matched series. Millimetres keep
    /// the weights near unit scale.
    pub output_unit_m: f64,
}

impl Default for LtmConfig {
    fn default() -> Self {
        Self {
            hidden_channels: 8,
            template_len: 200,
            pool_kernel: 400,
            pool_stride: 100,
            match_stride: 1,
            alpha: 0.1,
            negative_slope: 0.01,
            frame_rate_hz: 1000.0,
            freq_resolution_hz: 0.1,
            temperature: Temperature::Relative(0.01),
            template_init: TemplateInit::Physical,
            template_prior_hz: 10.0,
            init_gain_m_per_rad: crate::sim::IsacConfig::default().phase_wavelength_m()
                / std::f64::consts::TAU,
            init_jitter: 0.1,
            output_unit_m: 1e-3,
        }
    }
}

impl LtmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden_channels == 0 || self.template_len == 0 || self.pool_stride == 0 || self.match_stride == 0 {
            return bad("channel counts, template length and strides must be >= 1".into());
        }
        if self.pool_kernel < 2 * self.template_len {
            return bad(format!(
                "pool kernel {} must be at least twice the template length {}",
                self.pool_kernel, self.template_len
            ));
        }
        if 2 * self.pool_stride > self.template_len {
            return bad(format!(
                "pool stride {} exceeds half the template length {}",
                self.pool_stride, self.template_len
            ));
        }
        if 10 * self.match_stride > self.template_len {
            return bad(format!(
                "match stride {} exceeds a tenth of the template length {}",
                self.match_stride, self.template_len
            ));
        }
        if !(self.negative_slope > 0.0 && self.negative_slope < 1.0) {
            return bad("negative_slope must lie in (0, 1)".into());
        }
        if !(self.frame_rate_hz > 0.0) || !(self.freq_resolution_hz > 0.0) {
            return bad("frame rate and frequency resolution must be positive".into());
        }
        if !(self.alpha >= 0.0) || !(self.init_gain_m_per_rad > 0.0) || !(self.init_jitter >= 0.0) {
            return bad("alpha, init gain and jitter must be non-negative (gain positive)".into());
        }
        if !(self.output_unit_m > 0.0) {
            return bad("output unit must be positive".into());
        }
        Ok(())
    }

    /// Matched-series length for an input of `n` frames.
    pub fn matched_len(&self, n: usize) -> Option<usize> {
        (n >= self.template_len).then(|| (n - self.template_len) / self.match_stride + 1)
    }

    /// Pooled-peak count for an input of `n` frames.
    pub fn pooled_len(&self, n: usize) -> Option<usize> {
        let nl = self.matched_len(n)?;
        (nl >= self.pool_kernel).then(|| (nl - self.pool_kernel) / self.pool_stride + 1)
    }

    pub fn nfft_for(&self, len: usize) -> usize {
        ((self.frame_rate_hz / self.freq_resolution_hz).round() as usize).max(len)
    }

    pub fn channel_plan(&self) -> [(usize, usize); LAYERS] {
        let h = self.hidden_channels;
        [(1, h), (h, h), (h, 1)]
    }
}

/// Trainable weights plus the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct LtmParams<T> {
    pub config: LtmConfig,
    pub store: ParamStore<T>,
    kernels: [ParamId; LAYERS],
    biases: [ParamId; LAYERS],
    template: ParamId,
}

pub fn kernel_name(layer: usize) -> String {
    format!("unwrap{layer}.kernel")
}

pub fn bias_name(layer: usize) -> String {
    format!("unwrap{layer}.bias")
}

pub const TEMPLATE_NAME: &str = "template";

impl<T: Real> LtmParams<T> {
    /// Fresh parameters.
    ///
    /// The CNN starts close to a linear map with overall gain
    /// `-init_gain / Σ template`, split evenly across the layers, so the
    /// initial bias estimate is already on the metre scale. The first layer
    /// carries the sign flip.
    pub fn new(config: LtmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let template = match config.template_init {
            TemplateInit::Physical => physical_template(&config),
            TemplateInit::Random => {
                let raw: Vec<f64> = (0..config.template_len).map(|_| rng.random_range(0.0..1.0)).collect();
                normalized(raw)
            }
        };
        let template_sum: f64 = template.iter().sum();
        let total_gain = config.init_gain_m_per_rad / config.output_unit_m / template_sum.abs().max(1e-12);
        let per_layer = total_gain.cbrt();
        let mut store = ParamStore::new();
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        for (layer, (cin, cout)) in config.channel_plan().into_iter().enumerate() {
            let sign = if layer == 0 { -1.0 } else { 1.0 };
            let centre = sign * per_layer / cin as f64;
            let mut w = vec![0.0; cout * cin * KERNEL];
            for tap in w.chunks_exact_mut(KERNEL) {
                let jitter = config.init_jitter;
                tap[0] = centre * jitter * rng.random_range(-1.0..1.0);
                tap[1] = centre * (1.0 + jitter * rng.random_range(-1.0..1.0));
                tap[2] = centre * jitter * rng.random_range(-1.0..1.0);
            }
            kernels.push(store.add(kernel_name(layer), w.into_iter().map(T::lit).collect())?);
            biases.push(store.add(bias_name(layer), vec![T::zero(); cout])?);
        }
        let template = store.add(TEMPLATE_NAME, template.into_iter().map(T::lit).collect())?;
        Ok(Self {
            config,
            store,
            kernels: kernels.try_into().expect("three layers"),
            biases: biases.try_into().expect("three layers"),
            template,
        })
    }

    /// Rebinds a loaded parameter store to an architecture.
    pub fn from_store(config: LtmConfig, store: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let find = |name: &str, len: usize| -> Result<ParamId> {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor `{name}`")))?;
            if store.get(id).len() != len {
                return Err(Error::Format(format!(
                    "tensor `{name}` has {} values, architecture expects {len}",
                    store.get(id).len()
                )));
            }
            Ok(id)
        };
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        for (layer, (cin, cout)) in config.channel_plan().into_iter().enumerate() {
            kernels.push(find(&kernel_name(layer), cin * cout * KERNEL)?);
            biases.push(find(&bias_name(layer), cout)?);
        }
        let template = find(TEMPLATE_NAME, config.template_len)?;
        Ok(Self {
            config,
            store,
            kernels: kernels.try_into().expect("three layers"),
            biases: biases.try_into().expect("three layers"),
            template,
        })
    }

    /// CNN that routes channel 0 straight through (exact for non-negative
    /// input) with the given template; isolates the matching stage.
    pub fn identity(config: LtmConfig, template: Vec<T>) -> Result<Self> {
        let mut p = Self::new(config, 0)?;
        for layer in 0..LAYERS {
            let w = p.store.get_mut(p.kernels[layer]);
            w.iter_mut().for_each(|v| *v = T::zero());
            // Centre tap of output 0 from input 0.
            w[1] = T::one();
        }
        if template.len() != p.config.template_len {
            return Err(Error::Shape(format!(
                "template of length {} for architecture length {}",
                template.len(),
                p.config.template_len
            )));
        }
        *p.store.get_mut(p.template) = template;
        Ok(p)
    }

    pub fn template(&self) -> &[T] {
        self.store.get(self.template)
    }

    pub fn template_mut(&mut self) -> &mut Vec<T> {
        self.store.get_mut(self.template)
    }

    pub fn kernel(&self, layer: usize) -> &[T] {
        self.store.get(self.kernels[layer])
    }

    pub fn kernel_mut(&mut self, layer: usize) -> &mut Vec<T> {
        self.store.get_mut(self.kernels[layer])
    }

    pub fn bias(&self, layer: usize) -> &[T] {
        self.store.get(self.biases[layer])
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Vec<T> {
        self.store.get_mut(self.biases[layer])
    }

    /// Plain-text architecture manifest.
    pub fn manifest(&self) -> String {
        let c = &self.config;
        format!(
            "template_len {}\npool_kernel {}\npool_stride {}\nmatch_stride {}\nchannels 1,{},{},1\nalpha {}\nfreq_resolution_hz {}\nframe_rate_hz {}\noutput_unit_m {}\n",
            c.template_len,
            c.pool_kernel,
            c.pool_stride,
            c.match_stride,
            c.hidden_channels,
            c.hidden_channels,
            c.alpha,
            c.freq_resolution_hz,
            c.frame_rate_hz,
            c.output_unit_m
        )
    }
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.into_iter().map(|x| x / norm).collect()
    } else {
        v
    }
}

/// Unit-norm `1 + α sin(2π f t_i)` over the template span, `t_i` in seconds.
pub fn physical_template(config: &LtmConfig) -> Vec<f64> {
    let raw = (0..config.template_len)
        .map(|i| {
            let t = i as f64 / config.frame_rate_hz;
            1.0 + config.alpha * (std::f64::consts::TAU * config.template_prior_hz * t).sin()
        })
        .collect();
    normalized(raw)
}

/// Symmetric Hann taper used before the spectral estimate.
pub fn hann<T: Real>(n: usize) -> Vec<T> {
    if n < 2 {
        return vec![T::one(); n];
    }
    (0..n)
        .map(|i| T::lit(0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / (n - 1) as f64).cos()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Differentiable soft spectral peak.
    Train,
    /// Hard spectral argmax.
    Infer,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub displacement: Var,
    pub matched: Var,
    pub pooled: Var,
    pub bias: Var,
    /// Present in [`Mode::Train`].
    pub frequency: Option<Var>,
}

/// Learned unwrap: three length-preserving conv + LeakyReLU layers.
pub fn unwrap_phase_cnn<T: Real>(tape: &mut Tape<T>, params: &LtmParams<T>, phase: &[T]) -> Result<Var> {
    if phase.len() < KERNEL {
        return Err(Error::Shape(format!("input of {} frames is shorter than the kernel", phase.len())));
    }
    let slope = T::lit(params.config.negative_slope);
    let mut x = tape.leaf(phase.to_vec());
    for (layer, (cin, cout)) in params.config.channel_plan().into_iter().enumerate() {
        let k = tape.param(&params.store, params.kernels[layer]);
        let b = tape.param(&params.store, params.biases[layer]);
        let shape = ConvShape { in_channels: cin, out_channels: cout, stride: 1, padding: 1 };
        let y = tape.conv1d(x, k, Some(b), shape)?;
        x = tape.leaky_relu(y, slope);
    }
    Ok(x)
}

/// Sliding correlation of the displacement with the template.
pub fn template_match<T: Real>(tape: &mut Tape<T>, params: &LtmParams<T>, d: Var) -> Result<Var> {
    let n = tape.value(d).len();
    if n < params.config.template_len {
        return Err(Error::Shape(format!(
            "input of {n} frames is shorter than the template ({})",
            params.config.template_len
        )));
    }
    let t = tape.param(&params.store, params.template);
    tape.conv1d(d, t, None, ConvShape::single(params.config.match_stride, 0))
}

pub fn pool_peaks<T: Real>(tape: &mut Tape<T>, config: &LtmConfig, o: Var) -> Result<Var> {
    tape.max_pool1d(o, config.pool_kernel, config.pool_stride)
}

/// Mean pooled peak, converted from network units to metres.
pub fn estimate_bias<T: Real>(tape: &mut Tape<T>, config: &LtmConfig, pooled: Var) -> Var {
    let m = tape.mean(pooled);
    if config.output_unit_m == 1.0 {
        m
    } else {
        tape.scale(m, T::lit(config.output_unit_m))
    }
}

/// Centres and tapers `x`, returning the power spectrum node and its nfft.
fn spectrum<T: Real>(tape: &mut Tape<T>, config: &LtmConfig, x: Var) -> Result<(Var, usize)> {
    let n = tape.value(x).len();
    if n < 2 {
        return Err(Error::Shape("frequency estimate needs >= 2 samples".into()));
    }
    let w = hann::<T>(n);
    let centred = tape.weighted_center(x, &w)?;
    let scale = tape.value(x).iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let residue = tape.value(centred).iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if !(residue > scale * T::lit(1e-12)) {
        return Err(Error::EmptySpectrum("signal carries no vibration component".into()));
    }
    let nfft = config.nfft_for(n);
    Ok((tape.power_spectrum(centred, Some(nfft))?, nfft))
}

/// Vibration frequency of `x`: soft peak in [`Mode::Train`], hard argmax otherwise.
pub fn estimate_freq<T: Real>(tape: &mut Tape<T>, config: &LtmConfig, x: Var, mode: Mode) -> Result<(T, Option<Var>)> {
    let (p, nfft) = spectrum(tape, config, x)?;
    match mode {
        Mode::Train => {
            let f = tape.soft_argmax_freq(p, config.frame_rate_hz, nfft, config.temperature, true)?;
            Ok((tape.scalar(f), Some(f)))
        }
        Mode::Infer => Ok((hard_argmax_freq(tape.value(p), config.frame_rate_hz, nfft, true)?, None)),
    }
}

/// `b + α b sin(2π f l / rate)` for frames `l = 0..n`.
pub fn reconstruct<T: Real>(bias: T, frequency_hz: T, alpha: f64, n: usize, frame_rate_hz: f64) -> DisplacementSeries<T> {
    let a = T::lit(alpha) * bias;
    let w = T::lit(std::f64::consts::TAU) * frequency_hz;
    let values = (0..n)
        .map(|l| bias + a * (w * T::lit(l as f64 / frame_rate_hz)).sin())
        .collect();
    DisplacementSeries::new(values, frame_rate_hz)
}

/// Output of one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MddEstimate<T> {
    pub bias_m: T,
    pub frequency_hz: T,
    pub pooled_peaks: Vec<T>,
    pub matched_series: Vec<T>,
    pub reconstructed: DisplacementSeries<T>,
}

/// Records a full forward pass on `tape`.
pub fn forward_on_tape<T: Real>(
    tape: &mut Tape<T>,
    params: &LtmParams<T>,
    phase: &[T],
    mode: Mode,
) -> Result<(ForwardVars, T)> {
    let displacement = unwrap_phase_cnn(tape, params, phase)?;
    let matched = template_match(tape, params, displacement)?;
    let pooled = pool_peaks(tape, &params.config, matched)?;
    let bias = estimate_bias(tape, &params.config, pooled);
    let (f, frequency) = estimate_freq(tape, &params.config, matched, mode)?;
    Ok((ForwardVars { displacement, matched, pooled, bias, frequency }, f))
}

/// Inference on one wrapped phase series.
pub fn forward<T: Real>(params: &LtmParams<T>, phase: &PhaseSeries<T>, mode: Mode) -> Result<MddEstimate<T>> {
    let mut tape = Tape::new();
    forward_with(&mut tape, params, phase, mode)
}

pub fn forward_with<T: Real>(
    tape: &mut Tape<T>,
    params: &LtmParams<T>,
    phase: &PhaseSeries<T>,
    mode: Mode,
) -> Result<MddEstimate<T>> {
    tape.reset();
    let (vars, f) = forward_on_tape(tape, params, &phase.values_rad, mode)?;
    let bias = tape.scalar(vars.bias);
    Ok(MddEstimate {
        bias_m: bias,
        frequency_hz: f,
        pooled_peaks: tape.value(vars.pooled).to_vec(),
        matched_series: tape.value(vars.matched).to_vec(),
        reconstructed: reconstruct(bias, f, params.config.alpha, phase.len(), phase.frame_rate_hz),
    })
}

/// Hard-mode inference over many series, in parallel, order preserved.
pub fn infer_batch<T: Real>(params: &LtmParams<T>, phases: &[PhaseSeries<T>]) -> Vec<Result<MddEstimate<T>>> {
    phases
        .par_iter()
        .map_init(Tape::new, |tape, p| forward_with(tape, params, p, Mode::Infer))
        .collect()
}
