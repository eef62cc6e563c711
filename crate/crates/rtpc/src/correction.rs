//! Eddy-current background correction with automatic stationary-tissue
//! selection, velocity anti-aliasing, and image denoising.
//!
//! Pipeline order is unalias -> background -> denoise: subtracting the
//! background first could move samples across the +-venc boundary and create
//! false wrap events.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core_model::{MagnitudeSeries, Mask, Roi, VelocitySeries};
use crate::signal_toolbox::{lowpass, ToolboxError};
use crate::core_model::Signal1D;

#[derive(Debug, Error, PartialEq)]
pub enum CorrectionError {
    #[error("no stationary pixels satisfy the phase/amplitude criteria")]
    NoStationaryPixels,
    #[error("stationary pixels are rank deficient for a plane fit")]
    RankDeficient,
    #[error("background model geometry does not match the series")]
    GeometryMismatch,
    #[error(transparent)]
    Toolbox(#[from] ToolboxError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackgroundOrder {
    Constant,
    Plane,
}

/// Spatial background velocity model v(x, y) = a + b*x + c*y with x = column
/// index and y = row index in pixels.
#[derive(Debug, Clone)]
pub struct BackgroundModel {
    pub order: BackgroundOrder,
    /// Offset, cm/s.
    pub a: f64,
    /// Column slope, cm/s per pixel (zero for Constant).
    pub b: f64,
    /// Row slope, cm/s per pixel (zero for Constant).
    pub c: f64,
    pub stationary_mask: Mask,
    pub residual_rms_cm_s: f64,
}

impl BackgroundModel {
    pub fn eval(&self, row: usize, col: usize) -> f64 {
        self.a + self.b * col as f64 + self.c * row as f64
    }
}

/// Euclidean distance (mm) from each pixel to the nearest ROI pixel.
fn distance_to_mask_mm(mask: &Mask, spacing: (f64, f64)) -> Vec<f64> {
    let (rows, cols) = (mask.rows, mask.cols);
    let members: Vec<(usize, usize)> = mask.pixels().collect();
    let mut out = vec![f64::INFINITY; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut best = f64::INFINITY;
            for &(mr, mc) in &members {
                let dr = (r as f64 - mr as f64) * spacing.0;
                let dc = (c as f64 - mc as f64) * spacing.1;
                let d2 = dr * dr + dc * dc;
                if d2 < best {
                    best = d2;
                }
            }
            out[r * cols + c] = best.sqrt();
        }
    }
    out
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let idx = ((p / 100.0) * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Selects stationary-tissue pixels in a ring around the ROI: low temporal
/// velocity std (phase criterion) and adequate temporal-mean magnitude
/// (amplitude criterion).
pub fn select_stationary_tissue(
    vel: &VelocitySeries,
    mag: &MagnitudeSeries,
    roi: &Roi,
    ring_mm: f64,
    std_threshold_cm_s: f64,
    mag_percentile: f64,
) -> Result<Mask, CorrectionError> {
    let h = &vel.header;
    let union = roi.union_mask();
    let dist = distance_to_mask_mm(&union, h.pixel_spacing_mm);
    let (rows, cols) = (h.rows, h.cols);
    let n_px = h.n_pixels();
    let nf = h.n_frames as f64;

    let band = Mask::from_fn(rows, cols, |r, c| {
        !union.get(r, c) && dist[r * cols + c] <= ring_mm
    });
    if band.is_empty() {
        return Err(CorrectionError::NoStationaryPixels);
    }

    // temporal mean magnitude over the candidate band sets the amplitude bar
    let mut band_means = Vec::new();
    let mut mean_mag = vec![0.0f64; n_px];
    for (r, c) in band.pixels() {
        let px = r * cols + c;
        let m: f64 = (0..h.n_frames)
            .map(|t| mag.samples()[t * n_px + px] as f64)
            .sum::<f64>()
            / nf;
        mean_mag[px] = m;
        band_means.push(m);
    }
    band_means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mag_floor = percentile(&band_means, mag_percentile);

    let mut out = Mask::new(rows, cols);
    for (r, c) in band.pixels() {
        let px = r * cols + c;
        if mean_mag[px] < mag_floor {
            continue;
        }
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for t in 0..h.n_frames {
            let v = vel.samples()[t * n_px + px] as f64;
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / nf;
        let var = (sum2 / nf - mean * mean).max(0.0);
        if var.sqrt() < std_threshold_cm_s {
            out.set(r, c, true);
        }
    }
    if out.is_empty() {
        return Err(CorrectionError::NoStationaryPixels);
    }
    Ok(out)
}

/// Least-squares fit of the temporal-mean velocity over stationary pixels.
/// One spatial model for the whole series: eddy-current offsets are treated
/// as quasi-static.
pub fn fit_background(
    vel: &VelocitySeries,
    stationary: &Mask,
    order: BackgroundOrder,
) -> Result<BackgroundModel, CorrectionError> {
    let h = &vel.header;
    if (stationary.rows, stationary.cols) != (h.rows, h.cols) {
        return Err(CorrectionError::GeometryMismatch);
    }
    let n_px = h.n_pixels();
    let nf = h.n_frames as f64;
    let pts: Vec<(f64, f64, f64)> = stationary
        .pixels()
        .map(|(r, c)| {
            let px = r * h.cols + c;
            let mean = (0..h.n_frames)
                .map(|t| vel.samples()[t * n_px + px] as f64)
                .sum::<f64>()
                / nf;
            (c as f64, r as f64, mean)
        })
        .collect();

    let (a, b, c) = match order {
        BackgroundOrder::Constant => {
            if pts.is_empty() {
                return Err(CorrectionError::NoStationaryPixels);
            }
            let a = pts.iter().map(|p| p.2).sum::<f64>() / pts.len() as f64;
            (a, 0.0, 0.0)
        }
        BackgroundOrder::Plane => {
            if pts.len() < 3 {
                return Err(CorrectionError::RankDeficient);
            }
            // centered coordinates for conditioning
            let n = pts.len() as f64;
            let xm = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
            let (mut svx, mut svy, mut sv) = (0.0, 0.0, 0.0);
            for &(x, y, v) in &pts {
                let dx = x - xm;
                let dy = y - ym;
                sxx += dx * dx;
                sxy += dx * dy;
                syy += dy * dy;
                svx += v * dx;
                svy += v * dy;
                sv += v;
            }
            let det = sxx * syy - sxy * sxy;
            let scale = (sxx + syy).max(1e-30);
            if det.abs() < 1e-12 * scale * scale {
                return Err(CorrectionError::RankDeficient);
            }
            let b = (svx * syy - svy * sxy) / det;
            let c = (svy * sxx - svx * sxy) / det;
            let a = sv / n - b * xm - c * ym;
            (a, b, c)
        }
    };

    let residual_rms = (pts
        .iter()
        .map(|&(x, y, v)| (v - (a + b * x + c * y)).powi(2))
        .sum::<f64>()
        / pts.len() as f64)
        .sqrt();

    Ok(BackgroundModel {
        order,
        a,
        b,
        c,
        stationary_mask: stationary.clone(),
        residual_rms_cm_s: residual_rms,
    })
}

/// Subtracts the fitted spatial model from every frame.
pub fn apply_background(
    vel: &VelocitySeries,
    model: &BackgroundModel,
) -> Result<VelocitySeries, CorrectionError> {
    let h = &vel.header;
    if (model.stationary_mask.rows, model.stationary_mask.cols) != (h.rows, h.cols) {
        return Err(CorrectionError::GeometryMismatch);
    }
    let n_px = h.n_pixels();
    let mut plane = vec![0.0f64; n_px];
    for r in 0..h.rows {
        for c in 0..h.cols {
            plane[r * h.cols + c] = model.eval(r, c);
        }
    }
    let mut data = Vec::with_capacity(vel.samples().len());
    for t in 0..h.n_frames {
        let frame = vel.frame(t);
        data.extend(
            frame
                .iter()
                .zip(&plane)
                .map(|(&v, &p)| (v as f64 - p) as f32),
        );
    }
    Ok(vel.with_data(data, vel.aliasing_corrected, true))
}

/// Velocity anti-aliasing inside the ROI.
///
/// Temporal pass per ROI pixel: the frame with the smallest |velocity| is
/// trusted as unaliased (a wrapped sample cannot sit near zero), then any
/// jump beyond +-venc relative to the corrected neighboring sample is removed
/// by the appropriate multiple of 2*venc, sweeping outward. Spatial pass: a
/// ROI pixel differing from the median of its in-ROI 3x3 neighbors by more
/// than venc is shifted by the multiple of 2*venc minimizing that difference.
/// Pixels outside all ROIs are untouched. Corrections are exact multiples of
/// 2*venc and the operation is idempotent.
pub fn unalias(vel: &VelocitySeries, roi: &Roi) -> VelocitySeries {
    let h = &vel.header;
    let venc = h.venc_cm_s;
    let two_venc = 2.0 * venc;
    let n_px = h.n_pixels();
    let union = roi.union_mask();
    let mut data: Vec<f64> = vel.samples().iter().map(|&v| v as f64).collect();

    // temporal pass, anchored at each pixel's minimum-|v| frame
    let unwrap_step = |cur: &mut f64, prev: f64| {
        let k = ((*cur - prev) / two_venc).round();
        if (*cur - prev).abs() > venc && k != 0.0 {
            *cur -= k * two_venc;
        } else if (*cur - prev) > venc {
            *cur -= two_venc;
        } else if (prev - *cur) > venc {
            *cur += two_venc;
        }
    };
    for (r, c) in union.pixels() {
        let px = r * h.cols + c;
        let mut anchor = 0;
        for t in 1..h.n_frames {
            if data[t * n_px + px].abs() < data[anchor * n_px + px].abs() {
                anchor = t;
            }
        }
        for t in anchor + 1..h.n_frames {
            let prev = data[(t - 1) * n_px + px];
            let mut cur = data[t * n_px + px];
            unwrap_step(&mut cur, prev);
            data[t * n_px + px] = cur;
        }
        for t in (0..anchor).rev() {
            let prev = data[(t + 1) * n_px + px];
            let mut cur = data[t * n_px + px];
            unwrap_step(&mut cur, prev);
            data[t * n_px + px] = cur;
        }
    }

    // spatial pass: compare against the median of in-ROI neighbors
    for t in 0..h.n_frames {
        let mask = roi.mask_at(t);
        let frame_base = t * n_px;
        let snapshot: Vec<f64> = data[frame_base..frame_base + n_px].to_vec();
        for (r, c) in mask.pixels() {
            let mut neigh = Vec::with_capacity(8);
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let nr = r as i64 + dr;
                    let nc = c as i64 + dc;
                    if nr >= 0
                        && nc >= 0
                        && (nr as usize) < h.rows
                        && (nc as usize) < h.cols
                        && mask.get(nr as usize, nc as usize)
                    {
                        neigh.push(snapshot[nr as usize * h.cols + nc as usize]);
                    }
                }
            }
            if neigh.is_empty() {
                continue;
            }
            neigh.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let med = if neigh.len() % 2 == 1 {
                neigh[neigh.len() / 2]
            } else {
                0.5 * (neigh[neigh.len() / 2 - 1] + neigh[neigh.len() / 2])
            };
            let px = frame_base + r * h.cols + c;
            if (data[px] - med).abs() > venc {
                let k = ((data[px] - med) / two_venc).round();
                if k != 0.0 {
                    data[px] -= k * two_venc;
                }
            }
        }
    }

    let out: Vec<f32> = data.iter().map(|&v| v as f32).collect();
    vel.with_data(out, true, vel.background_corrected)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DenoiseMode {
    SpatialMedian3,
    TemporalLowpass { cutoff_hz: f64 },
}

/// Image denoising: per-frame 3x3 spatial median (edge replication) or a
/// zero-phase temporal low-pass per pixel.
pub fn denoise(vel: &VelocitySeries, mode: DenoiseMode) -> Result<VelocitySeries, CorrectionError> {
    let h = &vel.header;
    let n_px = h.n_pixels();
    let data = match mode {
        DenoiseMode::SpatialMedian3 => {
            let mut out = Vec::with_capacity(vel.samples().len());
            for t in 0..h.n_frames {
                let frame = vel.frame(t);
                for r in 0..h.rows {
                    for c in 0..h.cols {
                        let mut window = [0.0f32; 9];
                        let mut i = 0;
                        for dr in -1i64..=1 {
                            for dc in -1i64..=1 {
                                let nr = (r as i64 + dr).clamp(0, h.rows as i64 - 1) as usize;
                                let nc = (c as i64 + dc).clamp(0, h.cols as i64 - 1) as usize;
                                window[i] = frame[nr * h.cols + nc];
                                i += 1;
                            }
                        }
                        window.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        out.push(window[4]);
                    }
                }
            }
            out
        }
        DenoiseMode::TemporalLowpass { cutoff_hz } => {
            let mut out = vec![0.0f32; vel.samples().len()];
            let dt = h.frame_duration_s();
            let mut trace = vec![0.0f64; h.n_frames];
            for px in 0..n_px {
                for (t, v) in trace.iter_mut().enumerate() {
                    *v = vel.samples()[t * n_px + px] as f64;
                }
                let sig = Signal1D::new(trace.clone(), dt, 0.0).expect("series length >= 2");
                let filtered = lowpass(&sig, cutoff_hz)?;
                for (t, &v) in filtered.samples.iter().enumerate() {
                    out[t * n_px + px] = v as f32;
                }
            }
            out
        }
    };
    Ok(vel.with_data(data, vel.aliasing_corrected, vel.background_corrected))
}
