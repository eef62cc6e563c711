//! Shared domain types: series headers, velocity/magnitude stacks, ROI masks
//! and 1-D signals. All arrays are stored row-major, frame-major. Velocity is
//! always cm/s; phase is converted exactly once at ingestion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CoreError {
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("array dimensions do not match header ({expected} samples expected, got {got})")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("velocity sample {value} cm/s outside [-venc, venc] = [-{venc}, {venc}] in an uncorrected series")]
    VelocityOutOfRange { value: f32, venc: f64 },
    #[error("negative magnitude sample {0}")]
    NegativeMagnitude(f32),
    #[error("dynamic ROI has {got} masks but the series has {expected} frames")]
    RoiFrameCountMismatch { expected: usize, got: usize },
    #[error("empty ROI mask")]
    EmptyRoi,
    #[error("mask geometry {got:?} does not match series geometry {expected:?}")]
    MaskGeometryMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("signal too short (length {0}, need >= 2)")]
    SignalTooShort(usize),
    #[error("non-positive sample period {0}")]
    BadSamplePeriod(f64),
}

/// How the vendor stored velocity information in the phase images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VendorConvention {
    /// Rescaled pixel values are velocity in cm/s directly.
    VelocityStored,
    /// Rescaled pixel values are phase in radians, [-pi, pi) maps to [-venc, venc).
    PhaseRadians,
    /// Raw signed integers over the stored-bits range map linearly to [-venc, venc).
    ScaledInteger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesHeader {
    pub n_frames: usize,
    pub rows: usize,
    pub cols: usize,
    /// (row spacing, column spacing) in mm.
    pub pixel_spacing_mm: (f64, f64),
    pub frame_duration_ms: f64,
    pub venc_cm_s: f64,
}

impl SeriesHeader {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.n_frames < 2 {
            return Err(CoreError::InvalidHeader(format!(
                "n_frames = {} (need >= 2)",
                self.n_frames
            )));
        }
        if self.rows < 8 || self.cols < 8 {
            return Err(CoreError::InvalidHeader(format!(
                "rows x cols = {}x{} (need >= 8x8)",
                self.rows, self.cols
            )));
        }
        if self.pixel_spacing_mm.0 <= 0.0 || self.pixel_spacing_mm.1 <= 0.0 {
            return Err(CoreError::InvalidHeader(format!(
                "pixel spacing {:?} must be > 0",
                self.pixel_spacing_mm
            )));
        }
        if self.frame_duration_ms <= 0.0 {
            return Err(CoreError::InvalidHeader(format!(
                "frame_duration_ms = {} must be > 0",
                self.frame_duration_ms
            )));
        }
        if self.venc_cm_s <= 0.0 {
            return Err(CoreError::InvalidHeader(format!(
                "venc_cm_s = {} must be > 0",
                self.venc_cm_s
            )));
        }
        Ok(())
    }

    pub fn n_pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn n_samples(&self) -> usize {
        self.n_frames * self.rows * self.cols
    }

    /// Area of one pixel, mm^2.
    pub fn pixel_area_mm2(&self) -> f64 {
        self.pixel_spacing_mm.0 * self.pixel_spacing_mm.1
    }

    pub fn frame_duration_s(&self) -> f64 {
        self.frame_duration_ms / 1000.0
    }

    /// Time of frame `t` on the uniform acquisition axis, seconds.
    pub fn frame_time_s(&self, t: usize) -> f64 {
        t as f64 * self.frame_duration_s()
    }
}

/// Time-resolved per-pixel velocity maps in cm/s.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySeries {
    pub header: SeriesHeader,
    data: Vec<f32>,
    /// Once true, samples may legitimately exceed +-venc.
    pub aliasing_corrected: bool,
    pub background_corrected: bool,
}

impl VelocitySeries {
    /// Builds an uncorrected series; every sample must lie within [-venc, venc].
    pub fn new(header: SeriesHeader, data: Vec<f32>) -> Result<Self, CoreError> {
        header.validate()?;
        if data.len() != header.n_samples() {
            return Err(CoreError::DimensionMismatch {
                expected: header.n_samples(),
                got: data.len(),
            });
        }
        let venc = header.venc_cm_s;
        if let Some(&bad) = data
            .iter()
            .find(|v| !v.is_finite() || v.abs() as f64 > venc)
        {
            return Err(CoreError::VelocityOutOfRange { value: bad, venc });
        }
        Ok(Self {
            header,
            data,
            aliasing_corrected: false,
            background_corrected: false,
        })
    }

    /// Builds a series whose samples are allowed outside +-venc (already
    /// unaliased data, e.g. phantom ground truth).
    pub fn new_unaliased(header: SeriesHeader, data: Vec<f32>) -> Result<Self, CoreError> {
        header.validate()?;
        if data.len() != header.n_samples() {
            return Err(CoreError::DimensionMismatch {
                expected: header.n_samples(),
                got: data.len(),
            });
        }
        Ok(Self {
            header,
            data,
            aliasing_corrected: true,
            background_corrected: false,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.header.n_pixels();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn sample(&self, t: usize, row: usize, col: usize) -> f32 {
        self.data[(t * self.header.rows + row) * self.header.cols + col]
    }

    /// Temporal trace of one pixel as f64.
    pub fn pixel_trace(&self, row: usize, col: usize) -> Vec<f64> {
        let n = self.header.n_pixels();
        let off = row * self.header.cols + col;
        (0..self.header.n_frames)
            .map(|t| self.data[t * n + off] as f64)
            .collect()
    }

    /// Rebuilds a series reusing this header but with new samples and flags.
    pub fn with_data(
        &self,
        data: Vec<f32>,
        aliasing_corrected: bool,
        background_corrected: bool,
    ) -> Self {
        assert_eq!(data.len(), self.header.n_samples());
        Self {
            header: self.header.clone(),
            data,
            aliasing_corrected,
            background_corrected,
        }
    }
}

/// Non-negative intensity (amplitude) images paired with a velocity stack.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSeries {
    pub header: SeriesHeader,
    data: Vec<f32>,
}

impl MagnitudeSeries {
    pub fn new(header: SeriesHeader, data: Vec<f32>) -> Result<Self, CoreError> {
        header.validate()?;
        if data.len() != header.n_samples() {
            return Err(CoreError::DimensionMismatch {
                expected: header.n_samples(),
                got: data.len(),
            });
        }
        if let Some(&bad) = data.iter().find(|m| !m.is_finite() || **m < 0.0) {
            return Err(CoreError::NegativeMagnitude(bad));
        }
        Ok(Self { header, data })
    }

    pub fn samples(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.header.n_pixels();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn sample(&self, t: usize, row: usize, col: usize) -> f32 {
        self.data[(t * self.header.rows + row) * self.header.cols + col]
    }
}

/// A boolean pixel map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub rows: usize,
    pub cols: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![false; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::new(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.data[row * self.cols + col] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cols = self.cols;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / cols, i % cols))
    }

    pub fn union(&self, other: &Mask) -> Mask {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a || b)
            .collect();
        Mask {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// Dice overlap coefficient: 2|A n B| / (|A| + |B|).
    pub fn dice(&self, other: &Mask) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let inter = self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a && b)
            .count();
        let total = self.count() + other.count();
        if total == 0 {
            return 1.0;
        }
        2.0 * inter as f64 / total as f64
    }

    /// Centroid of the true pixels, (row, col); None when empty.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut n = 0usize;
        let (mut sr, mut sc) = (0.0, 0.0);
        for (r, c) in self.pixels() {
            sr += r as f64;
            sc += c as f64;
            n += 1;
        }
        if n == 0 {
            None
        } else {
            Some((sr / n as f64, sc / n as f64))
        }
    }

    /// Binary PGM (P5, maxval 255, 255 = inside) for inspection exports.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        out.extend(self.data.iter().map(|&b| if b { 255u8 } else { 0u8 }));
        out
    }
}

/// Vessel/CSF region: one mask (Static) or one per frame (Dynamic).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Roi {
    Static(Mask),
    Dynamic(Vec<Mask>),
}

impl Roi {
    /// Checks the ROI against a series geometry.
    pub fn validate(&self, header: &SeriesHeader) -> Result<(), CoreError> {
        let check_geom = |m: &Mask| {
            if (m.rows, m.cols) != (header.rows, header.cols) {
                Err(CoreError::MaskGeometryMismatch {
                    expected: (header.rows, header.cols),
                    got: (m.rows, m.cols),
                })
            } else if m.is_empty() {
                Err(CoreError::EmptyRoi)
            } else {
                Ok(())
            }
        };
        match self {
            Roi::Static(m) => check_geom(m),
            Roi::Dynamic(ms) => {
                if ms.len() != header.n_frames {
                    return Err(CoreError::RoiFrameCountMismatch {
                        expected: header.n_frames,
                        got: ms.len(),
                    });
                }
                ms.iter().try_for_each(check_geom)
            }
        }
    }

    /// Mask applying to frame `t`.
    pub fn mask_at(&self, t: usize) -> &Mask {
        match self {
            Roi::Static(m) => m,
            Roi::Dynamic(ms) => &ms[t],
        }
    }

    /// Union over all frames (the Static mask itself for static ROIs).
    pub fn union_mask(&self) -> Mask {
        match self {
            Roi::Static(m) => m.clone(),
            Roi::Dynamic(ms) => {
                let mut acc = ms[0].clone();
                for m in &ms[1..] {
                    acc = acc.union(m);
                }
                acc
            }
        }
    }
}

/// Uniformly sampled real-valued signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal1D {
    pub samples: Vec<f64>,
    pub sample_period_s: f64,
    /// Time of the first sample.
    pub t0_s: f64,
}

impl Signal1D {
    pub fn new(samples: Vec<f64>, sample_period_s: f64, t0_s: f64) -> Result<Self, CoreError> {
        if samples.len() < 2 {
            return Err(CoreError::SignalTooShort(samples.len()));
        }
        if sample_period_s <= 0.0 {
            return Err(CoreError::BadSamplePeriod(sample_period_s));
        }
        Ok(Self {
            samples,
            sample_period_s,
            t0_s,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        (self.samples.len() - 1) as f64 * self.sample_period_s
    }

    pub fn time_at(&self, i: usize) -> f64 {
        self.t0_s + i as f64 * self.sample_period_s
    }

    /// Linear interpolation at absolute time `t_s`; None outside the span
    /// (a tiny tolerance absorbs floating-point edge times).
    pub fn interp_at(&self, t_s: f64) -> Option<f64> {
        let x = (t_s - self.t0_s) / self.sample_period_s;
        let last = (self.samples.len() - 1) as f64;
        let eps = 1e-9 * last.max(1.0);
        if x < -eps || x > last + eps {
            return None;
        }
        let x = x.clamp(0.0, last);
        let i = (x.floor() as usize).min(self.samples.len() - 2);
        let frac = x - i as f64;
        if frac == 0.0 {
            return Some(self.samples[i]);
        }
        Some(self.samples[i] * (1.0 - frac) + self.samples[i + 1] * frac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> SeriesHeader {
        SeriesHeader {
            n_frames: 2,
            rows: 8,
            cols: 8,
            pixel_spacing_mm: (1.0, 1.0),
            frame_duration_ms: 96.0,
            venc_cm_s: 5.0,
        }
    }

    #[test]
    fn pixel_area_examples() {
        let mut h = header();
        assert_eq!(h.pixel_area_mm2(), 1.0);
        h.pixel_spacing_mm = (0.5, 0.5);
        assert_eq!(h.pixel_area_mm2(), 0.25);
        h.pixel_spacing_mm = (0.8, 1.2);
        assert!((h.pixel_area_mm2() - 0.96).abs() < 1e-12);
    }

    #[test]
    fn header_invariants() {
        let mut h = header();
        h.n_frames = 1;
        assert!(h.validate().is_err());
        let mut h = header();
        h.rows = 4;
        assert!(h.validate().is_err());
        let mut h = header();
        h.venc_cm_s = 0.0;
        assert!(h.validate().is_err());
        let mut h = header();
        h.frame_duration_ms = -1.0;
        assert!(h.validate().is_err());
    }

    #[test]
    fn uncorrected_series_rejects_out_of_range() {
        let h = header();
        let mut data = vec![0.0f32; h.n_samples()];
        data[5] = 5.5;
        let err = VelocitySeries::new(h.clone(), data).unwrap_err();
        assert!(matches!(err, CoreError::VelocityOutOfRange { .. }));
        // but an unaliased series accepts it
        let mut data = vec![0.0f32; h.n_samples()];
        data[5] = 5.5;
        assert!(VelocitySeries::new_unaliased(h, data).is_ok());
    }

    #[test]
    fn dynamic_roi_frame_count_checked() {
        let h = header();
        let m = Mask::from_fn(8, 8, |r, c| r == c);
        let roi = Roi::Dynamic(vec![m.clone()]);
        assert!(matches!(
            roi.validate(&h),
            Err(CoreError::RoiFrameCountMismatch { .. })
        ));
        let roi = Roi::Dynamic(vec![m.clone(), m]);
        assert!(roi.validate(&h).is_ok());
    }

    #[test]
    fn empty_roi_rejected() {
        let h = header();
        let roi = Roi::Static(Mask::new(8, 8));
        assert_eq!(roi.validate(&h), Err(CoreError::EmptyRoi));
    }

    #[test]
    fn mask_dice_and_centroid() {
        let a = Mask::from_fn(8, 8, |r, c| r < 4 && c < 4);
        let b = Mask::from_fn(8, 8, |r, c| r < 4 && c < 4);
        assert_eq!(a.dice(&b), 1.0);
        let (cr, cc) = a.centroid().unwrap();
        assert!((cr - 1.5).abs() < 1e-12 && (cc - 1.5).abs() < 1e-12);
    }

    #[test]
    fn signal_interp_endpoints_exact() {
        let s = Signal1D::new(vec![1.0, 3.0, 2.0], 0.5, 1.0).unwrap();
        assert_eq!(s.interp_at(1.0), Some(1.0));
        assert_eq!(s.interp_at(2.0), Some(2.0));
        assert_eq!(s.interp_at(1.25), Some(2.0));
        assert_eq!(s.interp_at(0.5), None);
        assert_eq!(s.interp_at(2.5), None);
    }
}
