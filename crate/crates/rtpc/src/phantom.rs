//! Synthetic RT-PC phantom with analytic ground truth: a parabolic-profile
//! vessel with a pulsatile cardiac waveform, optional respiratory amplitude
//! modulation, eddy-current-like background plane, velocity aliasing at the
//! venc, drift of the vessel center, and deterministic Gaussian noise.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core_model::{MagnitudeSeries, Mask, SeriesHeader, Signal1D, VelocitySeries};

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("invalid phantom config: {0}")]
    ConfigInvalid(String),
}

/// One cardiac harmonic: amplitude * sin(2 pi k f t + phase), k = 1-based
/// position in the list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub amplitude: f64,
    pub phase_rad: f64,
}

/// Default mix giving a systolic-peaked, always-forward waveform.
pub fn default_harmonics() -> Vec<Harmonic> {
    vec![
        Harmonic { amplitude: 1.0, phase_rad: 0.0 },
        Harmonic { amplitude: 0.4, phase_rad: std::f64::consts::FRAC_PI_3 },
        Harmonic { amplitude: 0.15, phase_rad: 2.0 * std::f64::consts::FRAC_PI_3 },
    ]
}

/// Respiratory amplitude modulation: velocity scaled by
/// 1 + modulation * cos(2 pi (t - delay) / period); the belt records
/// sin(2 pi t / period), so flow tracks inspiratory airflow (belt derivative)
/// with a lag of `delay_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RespModel {
    pub period_s: f64,
    pub delay_s: f64,
    /// Fractional modulation depth, e.g. 0.1 for +-10%.
    pub modulation: f64,
}

/// Linear background velocity offset b(r, c) = a + b*col + c*row, cm/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundPlane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub n_frames: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixel_spacing_mm: (f64, f64),
    pub frame_duration_ms: f64,
    pub venc_cm_s: f64,
    /// Vessel center at frame 0, (row, col) in pixels.
    pub vessel_center: (f64, f64),
    pub vessel_radius_mm: f64,
    /// Spatio-temporal peak of the true velocity, cm/s.
    pub peak_velocity_cm_s: f64,
    pub cardiac_freq_hz: f64,
    /// Empty list means a constant (non-pulsatile) waveform of 1.
    #[serde(default = "default_harmonics")]
    pub harmonics: Vec<Harmonic>,
    #[serde(default)]
    pub background: Option<BackgroundPlane>,
    #[serde(default)]
    pub resp: Option<RespModel>,
    /// Vessel center drift in (rows, cols) pixels per frame.
    #[serde(default)]
    pub drift_px_per_frame: (f64, f64),
    /// Velocity noise sigma, cm/s (before wrapping).
    #[serde(default)]
    pub noise_sigma_cm_s: f64,
    /// Magnitude noise sigma, a.u.
    #[serde(default)]
    pub mag_noise_sigma: f64,
    /// Wrap measured velocities into (-venc, venc]. Required when the true
    /// velocity can exceed the venc.
    #[serde(default = "default_true")]
    pub wrap_at_venc: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

pub const MAG_BACKGROUND: f64 = 100.0;
pub const MAG_VESSEL: f64 = 200.0;
/// Belt sampling period, seconds.
pub const RESP_SAMPLE_PERIOD_S: f64 = 0.01;

/// Everything the pipeline is supposed to recover.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Noise-free true velocity (may exceed +-venc).
    pub velocity: VelocitySeries,
    /// Vessel mask per frame.
    pub masks: Vec<Mask>,
    /// Discrete oracle flow per frame: sum of the vessel velocity (excluding
    /// any background plane) over the mask times pixel area times 0.6, mL/min.
    pub flow_ml_min: Vec<f64>,
    pub background: Option<BackgroundPlane>,
    pub resp: Option<RespModel>,
    pub cardiac_freq_hz: f64,
}

#[derive(Debug, Clone)]
pub struct PhantomOutput {
    pub velocity: VelocitySeries,
    pub magnitude: MagnitudeSeries,
    /// Belt signal over the acquisition (empty modulation still yields a flat
    /// placeholder when no resp model is configured).
    pub resp_signal: Option<Signal1D>,
    pub truth: GroundTruth,
}

// --- counter-based RNG: reproducible and order-independent ---

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit_open(u: u64) -> f64 {
    // (0, 1): top 53 bits, offset by half an ulp
    ((u >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Standard normal draw keyed by (seed, stream, counter).
fn gauss(seed: u64, stream: u64, counter: u64) -> f64 {
    let k = splitmix64(seed ^ splitmix64(stream) ^ splitmix64(counter.wrapping_mul(0xA24B_AED4_963E_E407)));
    let u1 = unit_open(k);
    let u2 = unit_open(splitmix64(k));
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Wraps a velocity into (-venc, venc], emulating phase wrap at acquisition.
pub fn wrap_velocity(v: f64, venc: f64) -> f64 {
    let two = 2.0 * venc;
    // subtract a whole number of 2*venc so in-range values pass through exactly
    let k = ((v + venc) / two).floor();
    let mut w = v - k * two;
    // the upper end of the range is closed: +venc stays +venc
    if w == -venc {
        w = venc;
    }
    w
}

impl PhantomConfig {
    pub fn header(&self) -> SeriesHeader {
        SeriesHeader {
            n_frames: self.n_frames,
            rows: self.rows,
            cols: self.cols,
            pixel_spacing_mm: self.pixel_spacing_mm,
            frame_duration_ms: self.frame_duration_ms,
            venc_cm_s: self.venc_cm_s,
        }
    }

    fn validate(&self) -> Result<(), PhantomError> {
        let h = self.header();
        h.validate()
            .map_err(|e| PhantomError::ConfigInvalid(e.to_string()))?;
        if self.vessel_radius_mm <= 0.0 {
            return Err(PhantomError::ConfigInvalid(format!(
                "vessel_radius_mm = {}",
                self.vessel_radius_mm
            )));
        }
        if self.peak_velocity_cm_s <= 0.0 {
            return Err(PhantomError::ConfigInvalid(format!(
                "peak_velocity_cm_s = {}",
                self.peak_velocity_cm_s
            )));
        }
        if self.cardiac_freq_hz <= 0.0 && !self.harmonics.is_empty() {
            return Err(PhantomError::ConfigInvalid(format!(
                "cardiac_freq_hz = {}",
                self.cardiac_freq_hz
            )));
        }
        if let Some(r) = &self.resp {
            if r.period_s <= 0.0 || !(0.0..1.0).contains(&r.modulation.abs()) {
                return Err(PhantomError::ConfigInvalid(format!(
                    "resp period {} s, modulation {}",
                    r.period_s, r.modulation
                )));
            }
        }
        if self.noise_sigma_cm_s < 0.0 || self.mag_noise_sigma < 0.0 {
            return Err(PhantomError::ConfigInvalid("negative noise sigma".into()));
        }
        // worst-case |velocity|: peak * (1 + modulation) + background extremes
        let modulation = self.resp.map_or(0.0, |r| r.modulation.abs());
        let mut vmax = self.peak_velocity_cm_s * (1.0 + modulation);
        if let Some(bg) = &self.background {
            let corners = [
                bg.a,
                bg.a + bg.b * (self.cols - 1) as f64,
                bg.a + bg.c * (self.rows - 1) as f64,
                bg.a + bg.b * (self.cols - 1) as f64 + bg.c * (self.rows - 1) as f64,
            ];
            vmax += corners.iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
        }
        if !self.wrap_at_venc && vmax > self.venc_cm_s {
            return Err(PhantomError::ConfigInvalid(format!(
                "worst-case velocity {vmax} cm/s exceeds venc {} with wrapping disabled",
                self.venc_cm_s
            )));
        }
        Ok(())
    }
}

/// Normalized cardiac waveform in [0, 1]; constant 1 for an empty harmonic
/// list. Normalization bounds come from a dense scan of one period.
fn cardiac_waveform(harmonics: &[Harmonic], freq_hz: f64) -> impl Fn(f64) -> f64 + '_ {
    let (lo, hi) = if harmonics.is_empty() {
        (0.0, 1.0)
    } else {
        let raw = |t: f64| {
            harmonics
                .iter()
                .enumerate()
                .map(|(i, h)| {
                    h.amplitude
                        * (2.0 * std::f64::consts::PI * (i + 1) as f64 * freq_hz * t + h.phase_rad)
                            .sin()
                })
                .sum::<f64>()
        };
        let period = 1.0 / freq_hz;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..4096 {
            let v = raw(period * i as f64 / 4096.0);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    };
    move |t: f64| {
        if harmonics.is_empty() {
            1.0
        } else {
            let raw: f64 = harmonics
                .iter()
                .enumerate()
                .map(|(i, h)| {
                    h.amplitude
                        * (2.0 * std::f64::consts::PI * (i + 1) as f64 * freq_hz * t + h.phase_rad)
                            .sin()
                })
                .sum();
            // the scan bounds are approximate; clamp the residual overshoot
            ((raw - lo) / (hi - lo)).clamp(0.0, 1.0)
        }
    }
}

/// Continuous-profile oracle: flow of a parabolic vessel at waveform value 1,
/// Q = v_peak/2 * pi R^2 * 0.6 (cm/s * mm^2 -> mL/min).
pub fn oracle_flow_ml_min(peak_velocity_cm_s: f64, radius_mm: f64) -> f64 {
    0.5 * peak_velocity_cm_s * std::f64::consts::PI * radius_mm * radius_mm * 0.6
}

pub fn generate(config: &PhantomConfig) -> Result<PhantomOutput, PhantomError> {
    config.validate()?;
    let h = config.header();
    let n_px = h.n_pixels();
    let dt = h.frame_duration_s();
    let w = cardiac_waveform(&config.harmonics, config.cardiac_freq_hz);
    let (sr, sc) = h.pixel_spacing_mm;
    let r2 = config.vessel_radius_mm * config.vessel_radius_mm;

    let mut truth = vec![0.0f32; h.n_samples()];
    let mut measured = vec![0.0f32; h.n_samples()];
    let mut mag = vec![0.0f32; h.n_samples()];
    let mut masks = Vec::with_capacity(h.n_frames);
    let mut flow = Vec::with_capacity(h.n_frames);

    for t_idx in 0..h.n_frames {
        let t = h.frame_time_s(t_idx);
        let wt = w(t);
        let m_resp = config.resp.map_or(1.0, |r| {
            1.0 + r.modulation
                * (2.0 * std::f64::consts::PI * (t - r.delay_s) / r.period_s).cos()
        });
        let center = (
            config.vessel_center.0 + config.drift_px_per_frame.0 * t_idx as f64,
            config.vessel_center.1 + config.drift_px_per_frame.1 * t_idx as f64,
        );
        let mut mask = Mask::new(h.rows, h.cols);
        let mut frame_flow = 0.0f64;
        for row in 0..h.rows {
            for col in 0..h.cols {
                let px = row * h.cols + col;
                let idx = t_idx * n_px + px;
                let dr = (row as f64 - center.0) * sr;
                let dc = (col as f64 - center.1) * sc;
                let d2 = dr * dr + dc * dc;
                let inside = d2 <= r2;
                let v_vessel = if inside {
                    config.peak_velocity_cm_s * (1.0 - d2 / r2) * wt * m_resp
                } else {
                    0.0
                };
                let bg = config
                    .background
                    .map_or(0.0, |p| p.a + p.b * col as f64 + p.c * row as f64);
                // round to f32 first so wrapping and unwrapping commute exactly
                let v_true = (v_vessel + bg) as f32;
                truth[idx] = v_true;
                let mut v_meas = v_true as f64;
                if config.noise_sigma_cm_s > 0.0 {
                    v_meas += config.noise_sigma_cm_s * gauss(config.seed, 0, idx as u64);
                }
                if config.wrap_at_venc {
                    v_meas = wrap_velocity(v_meas, h.venc_cm_s);
                }
                measured[idx] = v_meas as f32;

                let mut m = if inside { MAG_VESSEL } else { MAG_BACKGROUND };
                if config.mag_noise_sigma > 0.0 {
                    m += config.mag_noise_sigma * gauss(config.seed, 1, idx as u64);
                }
                mag[idx] = m.max(0.0) as f32;

                if inside {
                    mask.set(row, col, true);
                    // vessel-only: the oracle flow excludes the background plane
                    frame_flow += (v_vessel as f32) as f64;
                }
            }
        }
        masks.push(mask);
        flow.push(frame_flow * h.pixel_area_mm2() * 0.6);
    }

    let resp_signal = config.resp.map(|r| {
        let span = (h.n_frames - 1) as f64 * dt;
        // ceil so the belt always covers the whole flow span
        let n = (span / RESP_SAMPLE_PERIOD_S).ceil() as usize + 1;
        let samples = (0..n)
            .map(|i| {
                (2.0 * std::f64::consts::PI * i as f64 * RESP_SAMPLE_PERIOD_S / r.period_s).sin()
            })
            .collect();
        Signal1D::new(samples, RESP_SAMPLE_PERIOD_S, 0.0).expect("resp signal length")
    });

    let velocity = if config.wrap_at_venc {
        VelocitySeries::new(h.clone(), measured)
            .map_err(|e| PhantomError::ConfigInvalid(e.to_string()))?
    } else {
        VelocitySeries::new_unaliased(h.clone(), measured)
            .map_err(|e| PhantomError::ConfigInvalid(e.to_string()))?
    };
    let magnitude = MagnitudeSeries::new(h.clone(), mag)
        .map_err(|e| PhantomError::ConfigInvalid(e.to_string()))?;
    let truth_series = VelocitySeries::new_unaliased(h, truth)
        .map_err(|e| PhantomError::ConfigInvalid(e.to_string()))?;

    Ok(PhantomOutput {
        velocity,
        magnitude,
        resp_signal,
        truth: GroundTruth {
            velocity: truth_series,
            masks,
            flow_ml_min: flow,
            background: config.background,
            resp: config.resp,
            cardiac_freq_hz: config.cardiac_freq_hz,
        },
    })
}
