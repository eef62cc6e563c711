//! Respiratory-effect analysis: cardiac cycle segmentation of the flow curve,
//! cycle-averaged flow curves, expiration/inspiration labeling against a
//! respiratory belt signal, and the Diff_Ex-In(parameter, delay) sweep.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core_model::Signal1D;
use crate::signal_toolbox::{
    detect_peaks, estimate_fundamental_from_spectrum, estimate_fundamental_hz, fft_magnitude,
    resample_linear, ToolboxError,
};

#[derive(Debug, Error, PartialEq)]
pub enum RespError {
    #[error("only {got} complete cardiac cycles detected, need at least {need}")]
    InsufficientCycles { got: usize, need: usize },
    #[error("no respiratory fundamental found in band ({0}, {1}) Hz")]
    NoRespPeak(f64, f64),
    #[error("no delay produced {0} or more cycles in both respiratory phases")]
    NoValidDelay(usize),
    #[error("belt signal span [{resp_lo}, {resp_hi}] s does not cover the flow span [{flow_lo}, {flow_hi}] s")]
    SpanMismatch {
        resp_lo: f64,
        resp_hi: f64,
        flow_lo: f64,
        flow_hi: f64,
    },
    #[error(transparent)]
    Toolbox(#[from] ToolboxError),
}

/// One cardiac cycle, peak-to-peak, as inclusive frame indices into the flow
/// curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cycle {
    pub start: usize,
    pub end: usize,
}

impl Cycle {
    pub fn period_s(&self, dt: f64) -> f64 {
        (self.end - self.start) as f64 * dt
    }
}

/// Hemodynamic parameters compared between respiratory phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RespParameter {
    /// Peak-to-peak flow amplitude within the cycle, mL/min.
    Amplitude,
    /// Mean flow over the cycle, mL/min.
    MeanFlow,
    /// Trapezoidal flow integral over the cycle, mL.
    StrokeVolume,
    /// Cycle duration, s.
    CardiacPeriod,
}

pub const ALL_PARAMETERS: [RespParameter; 4] = [
    RespParameter::Amplitude,
    RespParameter::MeanFlow,
    RespParameter::StrokeVolume,
    RespParameter::CardiacPeriod,
];

impl RespParameter {
    pub fn as_str(&self) -> &'static str {
        match self {
            RespParameter::Amplitude => "amplitude",
            RespParameter::MeanFlow => "mean_flow",
            RespParameter::StrokeVolume => "stroke_volume",
            RespParameter::CardiacPeriod => "cardiac_period",
        }
    }
}

/// Respiratory phase of one cardiac cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RespPhase {
    Expiration,
    Inspiration,
    /// Belt slope too flat to call either way; excluded from averages.
    Indeterminate,
}

/// Cycle-averaged cardiac flow curve (CCFC).
#[derive(Debug, Clone)]
pub struct Ccfc {
    /// Flow samples over one normalized cycle, mL/min.
    pub points: Vec<f64>,
    pub n_cycles: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffPoint {
    pub parameter: RespParameter,
    pub delay_s: f64,
    pub diff_percent: f64,
    pub n_expiration: usize,
    pub n_inspiration: usize,
}

#[derive(Debug, Clone)]
pub struct DiffAnalysis {
    pub points: Vec<DiffPoint>,
    pub resp_period_s: f64,
    pub n_cycles: usize,
}

impl DiffAnalysis {
    /// Delay maximizing |diff| for one parameter.
    pub fn best_delay(&self, parameter: RespParameter) -> Option<&DiffPoint> {
        self.points
            .iter()
            .filter(|p| p.parameter == parameter)
            .max_by(|a, b| {
                a.diff_percent
                    .abs()
                    .partial_cmp(&b.diff_percent.abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(b.delay_s.partial_cmp(&a.delay_s).unwrap())
            })
    }
}

pub const DEFAULT_MIN_CYCLES: usize = 3;
pub const CCFC_POINTS: usize = 32;
/// Belt slopes below this fraction of the RMS derivative are indeterminate.
pub const SLOPE_EPS_FRACTION: f64 = 0.05;
/// Plausible respiratory fundamental band, Hz.
pub const RESP_BAND_HZ: (f64, f64) = (0.1, 0.5);

/// Resamples the belt signal onto the flow curve's frame times. The belt must
/// cover the whole flow span.
pub fn resample_resp(resp: &Signal1D, flow: &Signal1D) -> Result<Signal1D, RespError> {
    let flow_lo = flow.t0_s;
    let flow_hi = flow.t0_s + flow.duration_s();
    let resp_lo = resp.t0_s;
    let resp_hi = resp.t0_s + resp.duration_s();
    let eps = 1e-9 * flow_hi.abs().max(1.0);
    if resp_lo > flow_lo + eps || resp_hi < flow_hi - eps {
        return Err(RespError::SpanMismatch {
            resp_lo,
            resp_hi,
            flow_lo,
            flow_hi,
        });
    }
    // index arithmetic on the period ratio keeps shared knots bit-exact
    let ratio = flow.sample_period_s / resp.sample_period_s;
    let offset = (flow.t0_s - resp.t0_s) / resp.sample_period_s;
    let last = (resp.len() - 1) as f64;
    let samples = (0..flow.len())
        .map(|i| {
            let x = (offset + i as f64 * ratio).clamp(0.0, last);
            let j = (x.floor() as usize).min(resp.len() - 2);
            let frac = x - j as f64;
            if frac == 0.0 {
                resp.samples[j]
            } else {
                resp.samples[j] * (1.0 - frac) + resp.samples[j + 1] * frac
            }
        })
        .collect();
    Ok(Signal1D {
        samples,
        sample_period_s: flow.sample_period_s,
        t0_s: flow.t0_s,
    })
}

/// Splits the flow curve into peak-to-peak cardiac cycles. The cardiac
/// fundamental sets the minimum peak separation (60% of the period).
pub fn segment_cycles(
    flow: &Signal1D,
    cardiac_band_hz: (f64, f64),
    min_cycles: usize,
) -> Result<Vec<Cycle>, RespError> {
    let f_c = estimate_fundamental_hz(flow, cardiac_band_hz)?;
    let peaks = detect_peaks(flow, 0.6 / f_c, 0.3);
    let cycles: Vec<Cycle> = peaks
        .windows(2)
        .map(|w| Cycle {
            start: w[0],
            end: w[1],
        })
        .collect();
    if cycles.len() < min_cycles {
        return Err(RespError::InsufficientCycles {
            got: cycles.len(),
            need: min_cycles,
        });
    }
    Ok(cycles)
}

/// Scalar parameters of one cycle.
pub fn cycle_parameter(flow: &Signal1D, cycle: &Cycle, parameter: RespParameter) -> f64 {
    let dt = flow.sample_period_s;
    let window = &flow.samples[cycle.start..=cycle.end];
    match parameter {
        RespParameter::Amplitude => {
            let max = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = window.iter().cloned().fold(f64::INFINITY, f64::min);
            max - min
        }
        RespParameter::MeanFlow => {
            // exclusive end so tiled cycles weight every sample once
            let w = &flow.samples[cycle.start..cycle.end];
            w.iter().sum::<f64>() / w.len() as f64
        }
        RespParameter::StrokeVolume => {
            let mut acc = 0.0;
            for pair in window.windows(2) {
                acc += 0.5 * (pair[0] + pair[1]) * dt;
            }
            acc / 60.0
        }
        RespParameter::CardiacPeriod => cycle.period_s(dt),
    }
}

/// Cycle-averaged flow curve: each cycle is resampled to `n_points` and the
/// point-wise mean is taken.
pub fn average_ccfc(flow: &Signal1D, cycles: &[Cycle], n_points: usize) -> Result<Ccfc, RespError> {
    let mut acc = vec![0.0f64; n_points];
    for cy in cycles {
        let resampled = resample_linear(&flow.samples[cy.start..=cy.end], n_points)?;
        for (a, v) in acc.iter_mut().zip(&resampled) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a /= cycles.len() as f64;
    }
    Ok(Ccfc {
        points: acc,
        n_cycles: cycles.len(),
    })
}

/// Symmetric percentage difference between expiration and inspiration means:
/// 200 * (ex - in) / (|ex| + |in|), in percent. Zero when both means are zero.
pub fn diff_ex_in(mean_ex: f64, mean_in: f64) -> f64 {
    let denom = mean_ex.abs() + mean_in.abs();
    if denom == 0.0 {
        return 0.0;
    }
    200.0 * (mean_ex - mean_in) / denom
}

/// RMS of the belt's finite-difference derivative; scales the flat-slope gate.
fn derivative_rms(resp: &Signal1D) -> f64 {
    let dt = resp.sample_period_s;
    let sum: f64 = resp
        .samples
        .windows(2)
        .map(|w| ((w[1] - w[0]) / dt).powi(2))
        .sum();
    (sum / (resp.len() - 1) as f64).sqrt()
}

/// Maps `t` into the belt's sampled span by shifting whole respiratory
/// periods; belt periodicity makes the wrap exact.
fn wrap_into_span(resp: &Signal1D, t: f64, resp_period_s: f64) -> f64 {
    let lo = resp.t0_s;
    let hi = resp.t0_s + resp.duration_s();
    let mut t = t;
    if t < lo {
        let k = ((lo - t) / resp_period_s).ceil();
        t += k * resp_period_s;
    }
    while t > hi && t - resp_period_s >= lo {
        t -= resp_period_s;
    }
    t.clamp(lo, hi)
}

/// Least-squares slope of the belt over the cycle window shifted earlier by
/// `delay_s` (flow responds to respiration after a physiological lag).
fn belt_slope(
    resp: &Signal1D,
    t_start: f64,
    t_end: f64,
    delay_s: f64,
    resp_period_s: f64,
) -> f64 {
    const N: usize = 16;
    let (mut st, mut sy, mut sty, mut stt) = (0.0, 0.0, 0.0, 0.0);
    let mut n = 0.0;
    for i in 0..N {
        let t = t_start + (t_end - t_start) * i as f64 / (N - 1) as f64;
        let shifted = wrap_into_span(resp, t - delay_s, resp_period_s);
        if let Some(y) = resp.interp_at(shifted) {
            st += t;
            sy += y;
            sty += t * y;
            stt += t * t;
            n += 1.0;
        }
    }
    if n < 2.0 {
        return 0.0;
    }
    let det = n * stt - st * st;
    if det.abs() < 1e-30 {
        return 0.0;
    }
    (n * sty - st * sy) / det
}

/// Labels each cycle by the belt slope over its window shifted earlier by
/// `delay_s`. Rising belt (inhaling) = Inspiration, falling = Expiration;
/// slopes within the flat gate are Indeterminate.
pub fn label_cycles(
    flow: &Signal1D,
    resp: &Signal1D,
    cycles: &[Cycle],
    delay_s: f64,
    resp_period_s: f64,
    slope_eps_fraction: f64,
) -> Vec<RespPhase> {
    let eps = slope_eps_fraction * derivative_rms(resp);
    cycles
        .iter()
        .map(|cy| {
            let t_start = flow.time_at(cy.start);
            let t_end = flow.time_at(cy.end);
            let slope = belt_slope(resp, t_start, t_end, delay_s, resp_period_s);
            if slope > eps {
                RespPhase::Inspiration
            } else if slope < -eps {
                RespPhase::Expiration
            } else {
                RespPhase::Indeterminate
            }
        })
        .collect()
}

/// Estimates the respiratory period from the belt signal.
pub fn resp_period_s(resp: &Signal1D, resp_band_hz: (f64, f64)) -> Result<f64, RespError> {
    let no_peak = || RespError::NoRespPeak(resp_band_hz.0, resp_band_hz.1);
    let spectrum = fft_magnitude(resp).map_err(|_| no_peak())?;
    let bw = spectrum.bin_width_hz;
    let peak = (1..spectrum.bin_amplitudes.len())
        .filter(|&i| {
            let f = i as f64 * bw;
            f >= resp_band_hz.0 && f <= resp_band_hz.1
        })
        .map(|i| spectrum.bin_amplitudes[i])
        .fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return Err(no_peak());
    }
    let f = estimate_fundamental_from_spectrum(&spectrum, resp_band_hz).map_err(|_| no_peak())?;
    if f <= 0.0 {
        return Err(no_peak());
    }
    Ok(1.0 / f)
}

/// Sweeps the respiratory delay over [0, T_r) in steps of `delay_step_s` and
/// evaluates Diff_Ex-In for every parameter. Delays where either phase group
/// has fewer than `min_cycles` members are skipped; an entirely empty sweep
/// is `NoValidDelay`.
pub fn sweep_delay(
    flow: &Signal1D,
    resp: &Signal1D,
    cycles: &[Cycle],
    resp_period_s: f64,
    delay_step_s: f64,
    min_cycles: usize,
    slope_eps_fraction: f64,
) -> Result<DiffAnalysis, RespError> {
    assert!(delay_step_s > 0.0 && resp_period_s > 0.0);
    let n_delays = (resp_period_s / delay_step_s).ceil() as usize;
    let mut points = Vec::new();
    for d in 0..n_delays {
        let delay = d as f64 * delay_step_s;
        if delay >= resp_period_s {
            break;
        }
        let phases = label_cycles(flow, resp, cycles, delay, resp_period_s, slope_eps_fraction);
        let ex: Vec<&Cycle> = cycles
            .iter()
            .zip(&phases)
            .filter(|(_, p)| **p == RespPhase::Expiration)
            .map(|(c, _)| c)
            .collect();
        let ins: Vec<&Cycle> = cycles
            .iter()
            .zip(&phases)
            .filter(|(_, p)| **p == RespPhase::Inspiration)
            .map(|(c, _)| c)
            .collect();
        if ex.len() < min_cycles || ins.len() < min_cycles {
            continue;
        }
        for parameter in ALL_PARAMETERS {
            let mean_of = |group: &[&Cycle]| {
                group
                    .iter()
                    .map(|c| cycle_parameter(flow, c, parameter))
                    .sum::<f64>()
                    / group.len() as f64
            };
            points.push(DiffPoint {
                parameter,
                delay_s: delay,
                diff_percent: diff_ex_in(mean_of(&ex), mean_of(&ins)),
                n_expiration: ex.len(),
                n_inspiration: ins.len(),
            });
        }
    }
    if points.is_empty() {
        return Err(RespError::NoValidDelay(min_cycles));
    }
    Ok(DiffAnalysis {
        points,
        resp_period_s,
        n_cycles: cycles.len(),
    })
}
