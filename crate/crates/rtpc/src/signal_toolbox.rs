//! Frequency-domain and time-domain 1-D utilities shared by segmentation,
//! denoising and respiratory analysis.

use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use thiserror::Error;

use crate::core_model::Signal1D;

#[derive(Debug, Error, PartialEq)]
pub enum ToolboxError {
    #[error("signal too short (length {0})")]
    TooShort(usize),
    #[error("cutoff {cutoff_hz} Hz outside (0, {nyquist_hz}) Hz")]
    BadCutoff { cutoff_hz: f64, nyquist_hz: f64 },
    #[error("no spectrum bin falls inside band ({0}, {1}) Hz")]
    EmptyBand(f64, f64),
}

/// One-sided amplitude spectrum of a mean-removed, zero-padded signal.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub bin_amplitudes: Vec<f64>,
    pub bin_width_hz: f64,
    pub n_input_samples: usize,
}

impl Spectrum {
    pub fn bin_freq(&self, i: usize) -> f64 {
        i as f64 * self.bin_width_hz
    }
}

pub fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// Reusable forward FFT plan for repeated per-pixel transforms.
pub struct FftPlan {
    fft: Arc<dyn Fft<f64>>,
    nfft: usize,
}

impl FftPlan {
    /// Plans for inputs of length `n` (padded to the next power of two).
    pub fn for_len(n: usize) -> Self {
        let nfft = next_pow2(n);
        let fft = FftPlanner::new().plan_fft_forward(nfft);
        Self { fft, nfft }
    }

    pub fn nfft(&self) -> usize {
        self.nfft
    }

    /// One-sided amplitudes of the mean-removed, zero-padded input.
    pub fn amplitudes(&self, samples: &[f64]) -> Vec<f64> {
        assert!(samples.len() <= self.nfft);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let mut buf = vec![Complex::new(0.0, 0.0); self.nfft];
        for (b, &x) in buf.iter_mut().zip(samples) {
            b.re = x - mean;
        }
        self.fft.process(&mut buf);
        buf[..self.nfft / 2 + 1].iter().map(|c| c.norm()).collect()
    }
}

/// One-sided magnitude spectrum. The input is mean-removed and zero-padded to
/// the next power of two; Parseval holds on the unpadded, mean-removed signal.
pub fn fft_magnitude(signal: &Signal1D) -> Result<Spectrum, ToolboxError> {
    let n = signal.len();
    if n < 2 {
        return Err(ToolboxError::TooShort(n));
    }
    let plan = FftPlan::for_len(n);
    let bin_amplitudes = plan.amplitudes(&signal.samples);
    Ok(Spectrum {
        bin_amplitudes,
        bin_width_hz: 1.0 / (plan.nfft() as f64 * signal.sample_period_s),
        n_input_samples: n,
    })
}

/// Windowed-sinc FIR low-pass coefficients (Hamming window, odd tap count),
/// normalized to unit DC gain.
fn design_lowpass(n_taps: usize, cutoff_cycles_per_sample: f64) -> Vec<f64> {
    let m = (n_taps - 1) as f64;
    let fc = cutoff_cycles_per_sample;
    let mut h: Vec<f64> = (0..n_taps)
        .map(|i| {
            let k = i as f64 - m / 2.0;
            let sinc = if k == 0.0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * k).sin() / (std::f64::consts::PI * k)
            };
            let w = 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / m).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    for v in &mut h {
        *v /= sum;
    }
    h
}

pub const LOWPASS_DEFAULT_TAPS: usize = 31;

/// Zero-phase low-pass: linear-phase FIR applied forward then backward over a
/// reflection-padded copy, so the net group delay is zero and the output
/// length equals the input length.
pub fn lowpass(signal: &Signal1D, cutoff_hz: f64) -> Result<Signal1D, ToolboxError> {
    lowpass_taps(signal, cutoff_hz, LOWPASS_DEFAULT_TAPS)
}

pub fn lowpass_taps(
    signal: &Signal1D,
    cutoff_hz: f64,
    n_taps: usize,
) -> Result<Signal1D, ToolboxError> {
    let nyquist = 0.5 / signal.sample_period_s;
    if cutoff_hz <= 0.0 || cutoff_hz >= nyquist {
        return Err(ToolboxError::BadCutoff {
            cutoff_hz,
            nyquist_hz: nyquist,
        });
    }
    let len = signal.len();
    let h = design_lowpass(n_taps, cutoff_hz * signal.sample_period_s);
    let pad = n_taps.min(len - 1);

    // reflect without duplicating the edge sample
    let x = &signal.samples;
    let mut padded = Vec::with_capacity(len + 2 * pad);
    for i in (1..=pad).rev() {
        padded.push(x[i]);
    }
    padded.extend_from_slice(x);
    for i in (len - 1 - pad..len - 1).rev() {
        padded.push(x[i]);
    }

    let causal = |input: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; input.len()];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &hk) in h.iter().enumerate() {
                let j = i as isize - k as isize;
                let xv = if j >= 0 { input[j as usize] } else { input[0] };
                acc += hk * xv;
            }
            *o = acc;
        }
        out
    };

    let mut y = causal(&padded);
    y.reverse();
    let mut y = causal(&y);
    y.reverse();
    let out = y[pad..pad + len].to_vec();
    Ok(Signal1D {
        samples: out,
        sample_period_s: signal.sample_period_s,
        t0_s: signal.t0_s,
    })
}

/// Local maxima with a prominence floor and a minimum pairwise separation.
///
/// Prominence is measured against the lowest saddle toward the nearest higher
/// sample on each side. Separation is enforced greedily from the tallest peak
/// down; ties break toward the earlier index. A plateau maximum reports its
/// first sample.
pub fn detect_peaks(
    signal: &Signal1D,
    min_separation_s: f64,
    prominence_fraction: f64,
) -> Vec<usize> {
    assert!(min_separation_s > 0.0);
    assert!(prominence_fraction > 0.0 && prominence_fraction < 1.0);
    let x = &signal.samples;
    let n = x.len();
    if n < 3 {
        return Vec::new();
    }
    let gmax = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let gmin = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let prom_floor = prominence_fraction * (gmax - gmin);
    if gmax == gmin {
        return Vec::new();
    }

    // plateau-aware local maxima (interior only)
    let mut candidates = Vec::new();
    let mut i = 1;
    while i < n - 1 {
        if x[i] > x[i - 1] {
            let start = i;
            while i < n - 1 && x[i + 1] == x[start] {
                i += 1;
            }
            if i < n - 1 && x[i + 1] < x[start] {
                candidates.push(start);
            }
        }
        i += 1;
    }

    // prominence per candidate
    let prominent: Vec<usize> = candidates
        .into_iter()
        .filter(|&p| {
            let peak = x[p];
            let mut left_base = peak;
            let mut j = p;
            while j > 0 {
                j -= 1;
                if x[j] > peak {
                    break;
                }
                left_base = left_base.min(x[j]);
            }
            let mut right_base = peak;
            let mut j = p;
            while j < n - 1 {
                j += 1;
                if x[j] > peak {
                    break;
                }
                right_base = right_base.min(x[j]);
            }
            peak - left_base.max(right_base) >= prom_floor
        })
        .collect();

    // greedy separation, tallest first, earlier index on ties
    let min_sep = min_separation_s / signal.sample_period_s;
    let mut order = prominent.clone();
    order.sort_by(|&a, &b| {
        x[b].partial_cmp(&x[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut accepted: Vec<usize> = Vec::new();
    for p in order {
        if accepted
            .iter()
            .all(|&q| (p as f64 - q as f64).abs() >= min_sep)
        {
            accepted.push(p);
        }
    }
    accepted.sort_unstable();
    accepted
}

/// Linear resampling to `n_out` points; endpoints preserved exactly and the
/// identity (n_out == input length) is bit-exact.
pub fn resample_linear(signal: &[f64], n_out: usize) -> Result<Vec<f64>, ToolboxError> {
    if signal.len() < 2 || n_out < 2 {
        return Err(ToolboxError::TooShort(signal.len().min(n_out)));
    }
    let last = (signal.len() - 1) as f64;
    let step = last / (n_out - 1) as f64;
    Ok((0..n_out)
        .map(|i| {
            let x = if i == n_out - 1 { last } else { i as f64 * step };
            let j = (x.floor() as usize).min(signal.len() - 2);
            let frac = x - j as f64;
            if frac == 0.0 {
                signal[j]
            } else {
                signal[j] * (1.0 - frac) + signal[j + 1] * frac
            }
        })
        .collect())
}

/// Frequency of the strongest spectral bin inside `band`, refined by parabolic
/// interpolation over the peak and its two neighbors.
pub fn estimate_fundamental_hz(
    signal: &Signal1D,
    band: (f64, f64),
) -> Result<f64, ToolboxError> {
    let spectrum = fft_magnitude(signal)?;
    estimate_fundamental_from_spectrum(&spectrum, band)
}

pub fn estimate_fundamental_from_spectrum(
    spectrum: &Spectrum,
    band: (f64, f64),
) -> Result<f64, ToolboxError> {
    let (lo, hi) = band;
    let bw = spectrum.bin_width_hz;
    let in_band: Vec<usize> = (1..spectrum.bin_amplitudes.len())
        .filter(|&i| {
            let f = i as f64 * bw;
            f >= lo && f <= hi
        })
        .collect();
    if in_band.is_empty() {
        return Err(ToolboxError::EmptyBand(lo, hi));
    }
    let &k = in_band
        .iter()
        .max_by(|&&a, &&b| {
            spectrum.bin_amplitudes[a]
                .partial_cmp(&spectrum.bin_amplitudes[b])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(b.cmp(&a))
        })
        .unwrap();
    let a = &spectrum.bin_amplitudes;
    let mut delta = 0.0;
    if k > 0 && k + 1 < a.len() {
        let denom = a[k - 1] - 2.0 * a[k] + a[k + 1];
        if denom.abs() > 1e-30 {
            delta = (0.5 * (a[k - 1] - a[k + 1]) / denom).clamp(-0.5, 0.5);
        }
    }
    Ok((k as f64 + delta) * bw)
}
