use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::{accumulate, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Channel layout and sliding geometry of a 1-D convolution.
///
/// Inputs are `[in_channels][len]`, kernels `[out_channels][in_channels][k]`
/// and outputs `[out_channels][out_len]`, all flattened row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvShape {
    pub fn single(stride: usize, padding: usize) -> Self {
        Self { in_channels: 1, out_channels: 1, stride, padding }
    }
}

/// Softmax temperature of the spectral frequency estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Temperature {
    Absolute(f64),
    /// Fraction of the largest included spectral power.
    Relative(f64),
}

impl<T: Real> Tape<T> {
    /// Cross-correlation of a zero-padded multichannel input with `kernel`,
    /// plus an optional per-output-channel bias.
    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Option<Var>, shape: ConvShape) -> Result<Var> {
        let ConvShape { in_channels: ci, out_channels: co, stride, padding } = shape;
        if ci == 0 || co == 0 || stride == 0 {
            return Err(Error::Shape("conv1d needs channels >= 1 and stride >= 1".into()));
        }
        let (x, w) = (self.value(input), self.value(kernel));
        if x.len() % ci != 0 || w.len() % (ci * co) != 0 || w.is_empty() {
            return Err(Error::Shape(format!(
                "conv1d input of {} values / kernel of {} values do not fit {ci} -> {co} channels",
                x.len(),
                w.len()
            )));
        }
        let (in_len, k) = (x.len() / ci, w.len() / (ci * co));
        let padded = in_len + 2 * padding;
        if k > padded {
            return Err(Error::Shape(format!("kernel of length {k} exceeds padded input of length {padded}")));
        }
        let out_len = (padded - k) / stride + 1;
        let b = match bias {
            Some(bv) => {
                let b = self.value(bv);
                if b.len() != co {
                    return Err(Error::Shape(format!("bias of length {} for {co} channels", b.len())));
                }
                b.to_vec()
            }
            None => vec![T::zero(); co],
        };
        let mut out = vec![T::zero(); co * out_len];
        for o in 0..co {
            let row = &mut out[o * out_len..(o + 1) * out_len];
            row.iter_mut().for_each(|v| *v = b[o]);
            for c in 0..ci {
                let xs = &x[c * in_len..(c + 1) * in_len];
                let taps = &w[(o * ci + c) * k..(o * ci + c + 1) * k];
                for (j, acc) in row.iter_mut().enumerate() {
                    let start = (j * stride) as isize - padding as isize;
                    let t0 = (-start).max(0) as usize;
                    let t1 = k.min((in_len as isize - start).max(0) as usize);
                    let mut s = T::zero();
                    for t in t0..t1 {
                        s = s + taps[t] * xs[(start + t as isize) as usize];
                    }
                    *acc = *acc + s;
                }
            }
        }
        Ok(self.push(out, Op::Conv1d { input, kernel, bias, shape, in_len, out_len }))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = self.value(x).iter().map(|&v| if v >= T::zero() { v } else { slope * v }).collect();
        self.push(out, Op::LeakyRelu { x, slope })
    }

    /// Windowed maxima; the first maximal index of each window wins.
    pub fn max_pool1d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let v = self.value(x);
        if kernel == 0 || stride == 0 || kernel > v.len() {
            return Err(Error::Shape(format!(
                "max pool of kernel {kernel}, stride {stride} over length {}",
                v.len()
            )));
        }
        let n = (v.len() - kernel) / stride + 1;
        let mut routes = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            let start = j * stride;
            let mut best = start;
            for i in start + 1..start + kernel {
                if v[i] > v[best] {
                    best = i;
                }
            }
            routes.push(best);
            out.push(v[best]);
        }
        Ok(self.push(out, Op::MaxPool { x, routes }))
    }

    /// One-sided power spectrum `|DFT(x)|²`, zero-padded to `nfft` points.
    /// Output length is `nfft / 2 + 1`.
    pub fn power_spectrum(&mut self, x: Var, nfft: Option<usize>) -> Result<Var> {
        let v = self.value(x);
        let nfft = nfft.unwrap_or(v.len());
        if v.len() < 2 || nfft < v.len() {
            return Err(Error::Shape(format!("power spectrum of length {} at nfft {nfft}", v.len())));
        }
        let mut buf: Vec<Complex<T>> = v.iter().map(|&r| Complex::new(r, T::zero())).collect();
        buf.resize(nfft, Complex::new(T::zero(), T::zero()));
        self.planner().plan_fft_forward(nfft).process(&mut buf);
        buf.truncate(nfft / 2 + 1);
        let out = buf.iter().map(|c| c.norm_sqr()).collect();
        Ok(self.push(out, Op::PowerSpectrum { x, nfft, spectrum: buf }))
    }

    /// Softmax-weighted mean frequency of a one-sided spectrum with bin
    /// spacing `frame_rate_hz / nfft`.
    pub fn soft_argmax_freq(
        &mut self,
        power: Var,
        frame_rate_hz: f64,
        nfft: usize,
        temperature: Temperature,
        exclude_dc: bool,
    ) -> Result<Var> {
        let p = self.value(power);
        let first_bin = usize::from(exclude_dc);
        if p.len() <= first_bin {
            return Err(Error::EmptySpectrum("no bins left after excluding DC".into()));
        }
        let included = &p[first_bin..];
        let (peak_idx, peak) = included
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        if !(peak > T::zero()) {
            return Err(Error::EmptySpectrum("all included bins carry zero power".into()));
        }
        let (tau, relative_peak) = match temperature {
            Temperature::Absolute(t) if t > 0.0 => (T::lit(t), None),
            Temperature::Relative(c) if c > 0.0 => (T::lit(c) * peak, Some(peak_idx)),
            other => return Err(Error::Config(format!("temperature must be positive, got {other:?}"))),
        };
        let bin_hz = frame_rate_hz / nfft as f64;
        let freqs: Vec<T> = (first_bin..p.len()).map(|k| T::lit(k as f64 * bin_hz)).collect();
        let mut weights: Vec<T> = included.iter().map(|&v| ((v - peak) / tau).exp()).collect();
        let z: T = weights.iter().copied().sum();
        weights.iter_mut().for_each(|w| *w = *w / z);
        let f = weights.iter().zip(&freqs).map(|(&w, &f)| w * f).sum();
        Ok(self.push(
            vec![f],
            Op::SoftArgmax { power, first_bin, weights, freqs, tau, relative_peak },
        ))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.iter().copied().sum::<T>() / T::lit(v.len() as f64);
        self.push(vec![m], Op::Mean { x })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        self.push(vec![s], Op::Sum { x })
    }

    /// Elementwise sum; a length-1 operand broadcasts.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.broadcast(a, b, |x, y| x + y);
        self.push(out, Op::Add { a, b })
    }

    /// Elementwise difference; a length-1 operand broadcasts.
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.broadcast(a, b, |x, y| x - y);
        self.push(out, Op::Sub { a, b })
    }

    fn broadcast(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Vec<T> {
        let (x, y) = (self.value(a), self.value(b));
        match (x.len(), y.len()) {
            (n, m) if n == m => x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect(),
            (1, _) => y.iter().map(|&q| f(x[0], q)).collect(),
            (_, 1) => x.iter().map(|&p| f(p, y[0])).collect(),
            (n, m) => panic!("elementwise operands of length {n} and {m}"),
        }
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).iter().map(|&v| v * factor).collect();
        self.push(out, Op::Scale { x, factor })
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v * v).collect();
        self.push(out, Op::Square { x })
    }

    /// `w ⊙ (x - Σ w x / Σ w)`: removes the weighted mean, then tapers.
    pub fn weighted_center(&mut self, x: Var, weights: &[T]) -> Result<Var> {
        let v = self.value(x);
        if v.len() != weights.len() {
            return Err(Error::Shape(format!("{} weights for {} samples", weights.len(), v.len())));
        }
        let wsum: T = weights.iter().copied().sum();
        if !(wsum > T::zero()) {
            return Err(Error::Shape("weights must have a positive sum".into()));
        }
        let m = v.iter().zip(weights).map(|(&a, &w)| a * w).sum::<T>() / wsum;
        let out = v.iter().zip(weights).map(|(&a, &w)| w * (a - m)).collect();
        Ok(self.push(out, Op::WeightedCenter { x, weights: weights.to_vec() }))
    }

    /// `mean_i sin(2π f t_i)` for a scalar frequency `f`.
    pub fn sin_mean(&mut self, f: Var, times: &[T]) -> Var {
        let fv = self.scalar(f);
        let two_pi = T::PI() + T::PI();
        let n = T::lit(times.len().max(1) as f64);
        let m = times.iter().map(|&t| (two_pi * fv * t).sin()).sum::<T>() / n;
        self.push(vec![m], Op::SinMean { f, times: times.to_vec() })
    }
}

/// Frequency of the strongest bin of a one-sided spectrum.
pub fn hard_argmax_freq<T: Real>(power: &[T], frame_rate_hz: f64, nfft: usize, exclude_dc: bool) -> Result<T> {
    let first = usize::from(exclude_dc);
    if power.len() <= first {
        return Err(Error::EmptySpectrum("no bins left after excluding DC".into()));
    }
    let (idx, peak) = power[first..]
        .iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    if !(peak > T::zero()) {
        return Err(Error::EmptySpectrum("all included bins carry zero power".into()));
    }
    Ok(T::lit((idx + first) as f64 * frame_rate_hz / nfft as f64))
}

fn add_into<T: Real>(slot: &mut [T], g: &[T]) {
    if slot.len() == g.len() {
        for (s, &v) in slot.iter_mut().zip(g) {
            *s = *s + v;
        }
    } else {
        // Broadcast operand: reduce.
        slot[0] = slot[0] + g.iter().copied().sum::<T>();
    }
}

pub(super) fn backprop<T: Real>(tape: &Tape<T>, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let len = |v: Var| tape.node_value(v.0).len();
    match tape.node_op(idx) {
        Op::Leaf => {}
        Op::Conv1d { input, kernel, bias, shape, in_len, out_len } => {
            let (ci, co, stride, pad) = (shape.in_channels, shape.out_channels, shape.stride, shape.padding);
            let (in_len, out_len) = (*in_len, *out_len);
            let x = tape.node_value(input.0);
            let w = tape.node_value(kernel.0);
            let k = w.len() / (ci * co);
            if let Some(b) = bias {
                let gb = accumulate(grads, *b, co);
                for o in 0..co {
                    gb[o] = gb[o] + g[o * out_len..(o + 1) * out_len].iter().copied().sum::<T>();
                }
            }
            let mut gw = vec![T::zero(); w.len()];
            let mut gx = vec![T::zero(); x.len()];
            for o in 0..co {
                let go = &g[o * out_len..(o + 1) * out_len];
                for c in 0..ci {
                    let xs = &x[c * in_len..(c + 1) * in_len];
                    let base = (o * ci + c) * k;
                    for (j, &gj) in go.iter().enumerate() {
                        if gj == T::zero() {
                            continue;
                        }
                        let start = (j * stride) as isize - pad as isize;
                        let t0 = (-start).max(0) as usize;
                        let t1 = k.min((in_len as isize - start).max(0) as usize);
                        for t in t0..t1 {
                            let i = (start + t as isize) as usize;
                            gw[base + t] = gw[base + t] + gj * xs[i];
                            gx[c * in_len + i] = gx[c * in_len + i] + gj * w[base + t];
                        }
                    }
                }
            }
            add_into(accumulate(grads, *kernel, w.len()), &gw);
            add_into(accumulate(grads, *input, x.len()), &gx);
        }
        Op::LeakyRelu { x, slope } => {
            let xv = tape.node_value(x.0);
            let gx: Vec<T> = xv
                .iter()
                .zip(g)
                .map(|(&v, &gi)| if v >= T::zero() { gi } else { *slope * gi })
                .collect();
            add_into(accumulate(grads, *x, xv.len()), &gx);
        }
        Op::MaxPool { x, routes } => {
            let slot = accumulate(grads, *x, len(*x));
            for (&r, &gi) in routes.iter().zip(g) {
                slot[r] = slot[r] + gi;
            }
        }
        Op::PowerSpectrum { x, nfft, spectrum } => {
            let n = len(*x);
            let mut buf = vec![Complex::new(T::zero(), T::zero()); *nfft];
            for (k, (&xk, &gk)) in spectrum.iter().zip(g).enumerate() {
                buf[k] = xk * gk;
            }
            tape.planner().plan_fft_inverse(*nfft).process(&mut buf);
            let two = T::lit(2.0);
            let slot = accumulate(grads, *x, n);
            for (s, b) in slot.iter_mut().zip(&buf[..n]) {
                *s = *s + two * b.re;
            }
        }
        Op::SoftArgmax { power, first_bin, weights, freqs, tau, relative_peak } => {
            let p = tape.node_value(power.0);
            let out = tape.node_value(idx)[0];
            let g0 = g[0];
            let slot = accumulate(grads, *power, p.len());
            let mut tau_term = T::zero();
            let peak = relative_peak.map(|m| p[first_bin + m]);
            for (i, (&u, &f)) in weights.iter().zip(freqs).enumerate() {
                let d = u * (f - out);
                slot[first_bin + i] = slot[first_bin + i] + g0 * d / *tau;
                if peak.is_some() {
                    tau_term = tau_term + d * (p[first_bin + i] / *tau);
                }
            }
            if let (Some(m), Some(pm)) = (relative_peak, peak) {
                slot[first_bin + m] = slot[first_bin + m] - g0 * tau_term / pm;
            }
        }
        Op::Mean { x } => {
            let n = len(*x);
            let share = g[0] / T::lit(n as f64);
            accumulate(grads, *x, n).iter_mut().for_each(|s| *s = *s + share);
        }
        Op::Sum { x } => {
            let n = len(*x);
            accumulate(grads, *x, n).iter_mut().for_each(|s| *s = *s + g[0]);
        }
        Op::Add { a, b } => {
            add_into(accumulate(grads, *a, len(*a)), g);
            add_into(accumulate(grads, *b, len(*b)), g);
        }
        Op::Sub { a, b } => {
            add_into(accumulate(grads, *a, len(*a)), g);
            let neg: Vec<T> = g.iter().map(|&v| -v).collect();
            add_into(accumulate(grads, *b, len(*b)), &neg);
        }
        Op::Scale { x, factor } => {
            let gx: Vec<T> = g.iter().map(|&v| v * *factor).collect();
            add_into(accumulate(grads, *x, gx.len()), &gx);
        }
        Op::Square { x } => {
            let xv = tape.node_value(x.0);
            let two = T::lit(2.0);
            let gx: Vec<T> = xv.iter().zip(g).map(|(&v, &gi)| two * v * gi).collect();
            add_into(accumulate(grads, *x, xv.len()), &gx);
        }
        Op::WeightedCenter { x, weights } => {
            let wsum: T = weights.iter().copied().sum();
            let wg = weights.iter().zip(g).map(|(&w, &gi)| w * gi).sum::<T>() / wsum;
            let slot = accumulate(grads, *x, weights.len());
            for ((s, &w), &gi) in slot.iter_mut().zip(weights).zip(g) {
                *s = *s + w * gi - w * wg;
            }
        }
        Op::SinMean { f, times } => {
            let fv = tape.node_value(f.0)[0];
            let two_pi = T::PI() + T::PI();
            let n = T::lit(times.len().max(1) as f64);
            let d = times.iter().map(|&t| two_pi * t * (two_pi * fv * t).cos()).sum::<T>() / n;
            let slot = accumulate(grads, *f, 1);
            slot[0] = slot[0] + g[0] * d;
        }
    }
}
