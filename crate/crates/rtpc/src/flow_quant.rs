//! Flow quantification: per-frame volumetric flow through the ROI, ROI area,
//! peak velocity, and stroke volume over arbitrary time windows.

use thiserror::Error;

use crate::core_model::{CoreError, Roi, Signal1D, VelocitySeries};

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("ROI is empty at frame {0}")]
    EmptyRoiFrame(usize),
    #[error("bad integration window [{t0_s}, {t1_s}] s over a {span_s} s curve")]
    BadRange { t0_s: f64, t1_s: f64, span_s: f64 },
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Per-frame hemodynamic quantities derived from one ROI.
#[derive(Debug, Clone)]
pub struct FlowCurve {
    /// Volumetric flow in mL/min, one sample per frame.
    pub flow: Signal1D,
    /// ROI area per frame, mm^2.
    pub roi_area_mm2: Vec<f64>,
    /// Signed velocity of largest magnitude inside the ROI per frame, cm/s.
    pub max_velocity_cm_s: Vec<f64>,
    /// Signed temporal extremes of the flow curve, mL/min.
    pub peak_flow_ml_min: f64,
    pub min_flow_ml_min: f64,
}

impl FlowCurve {
    pub fn mean_flow_ml_min(&self) -> f64 {
        self.flow.samples.iter().sum::<f64>() / self.flow.len() as f64
    }

    /// Peak-to-peak flow amplitude, mL/min.
    pub fn amplitude_ml_min(&self) -> f64 {
        self.peak_flow_ml_min - self.min_flow_ml_min
    }
}

/// mL/min through one pixel-area column: v [cm/s] * A [mm^2] scales by
/// 10^-2 cm->? -- v cm/s * A mm^2 = v*A * 10 mm^3/s = v*A * 1e-2 mL/s,
/// times 60 s/min = 0.6.
pub const ML_MIN_PER_CM_S_MM2: f64 = 0.6;

/// Integrates velocity over the ROI each frame: Q(t) = sum v * A_px * 0.6.
pub fn compute_flow_curve(vel: &VelocitySeries, roi: &Roi) -> Result<FlowCurve, FlowError> {
    let h = &vel.header;
    roi.validate(h)?;
    let area_px = h.pixel_area_mm2();
    let n_frames = h.n_frames;
    let mut flow = Vec::with_capacity(n_frames);
    let mut area = Vec::with_capacity(n_frames);
    let mut vmax = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let mask = roi.mask_at(t);
        if mask.is_empty() {
            return Err(FlowError::EmptyRoiFrame(t));
        }
        let frame = vel.frame(t);
        let mut sum = 0.0f64;
        let mut extreme = 0.0f64;
        let mut n = 0usize;
        for (r, c) in mask.pixels() {
            let v = frame[r * h.cols + c] as f64;
            sum += v;
            if v.abs() > extreme.abs() {
                extreme = v;
            }
            n += 1;
        }
        flow.push(sum * area_px * ML_MIN_PER_CM_S_MM2);
        area.push(n as f64 * area_px);
        vmax.push(extreme);
    }
    let peak = flow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = flow.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(FlowCurve {
        flow: Signal1D::new(flow, h.frame_duration_s(), 0.0)?,
        roi_area_mm2: area,
        max_velocity_cm_s: vmax,
        peak_flow_ml_min: peak,
        min_flow_ml_min: min,
    })
}

/// Trapezoidal integral of flow over [t0, t1] seconds, in mL.
///
/// Flow is mL/min, so the integral carries a 1/60 factor. Window endpoints may
/// fall between samples; values there are linearly interpolated.
pub fn stroke_volume_ml(curve: &FlowCurve, t0_s: f64, t1_s: f64) -> Result<f64, FlowError> {
    let sig = &curve.flow;
    let span = sig.duration_s();
    let eps = 1e-9 * span.max(1.0);
    if !(t0_s < t1_s) || t0_s < sig.t0_s - eps || t1_s > sig.t0_s + span + eps {
        return Err(FlowError::BadRange {
            t0_s,
            t1_s,
            span_s: span,
        });
    }
    let dt = sig.sample_period_s;
    // sample grid indices strictly inside the window
    let i0 = ((t0_s - sig.t0_s) / dt).ceil() as usize;
    let i1 = ((t1_s - sig.t0_s) / dt).floor() as usize;
    let f0 = sig.interp_at(t0_s).expect("t0 in range");
    let f1 = sig.interp_at(t1_s).expect("t1 in range");

    let mut integral = 0.0; // (mL/min) * s
    if i0 > i1 || sig.time_at(i0) >= t1_s {
        // window inside one sample interval
        integral += 0.5 * (f0 + f1) * (t1_s - t0_s);
    } else {
        integral += 0.5 * (f0 + sig.samples[i0]) * (sig.time_at(i0) - t0_s);
        for i in i0..i1 {
            integral += 0.5 * (sig.samples[i] + sig.samples[i + 1]) * dt;
        }
        integral += 0.5 * (sig.samples[i1] + f1) * (t1_s - sig.time_at(i1));
    }
    Ok(integral / 60.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_model::{Mask, SeriesHeader};

    fn header(n_frames: usize) -> SeriesHeader {
        SeriesHeader {
            n_frames,
            rows: 32,
            cols: 32,
            pixel_spacing_mm: (1.0, 1.0),
            frame_duration_ms: 96.0,
            venc_cm_s: 5.0,
        }
    }

    fn disk(cr: f64, cc: f64, rad: f64) -> Mask {
        Mask::from_fn(32, 32, |r, c| {
            let dr = r as f64 - cr;
            let dc = c as f64 - cc;
            dr * dr + dc * dc <= rad * rad
        })
    }

    fn uniform_series(h: &SeriesHeader, v: f32) -> VelocitySeries {
        VelocitySeries::new(h.clone(), vec![v; h.n_samples()]).unwrap()
    }

    #[test]
    fn single_pixel_unit_conversion() {
        // 1 cm/s through 1 mm^2 = 10 mm^3/s = 0.01 mL/s = 0.6 mL/min
        let h = header(2);
        let vel = uniform_series(&h, 1.0);
        let mut m = Mask::new(32, 32);
        m.set(10, 10, true);
        let curve = compute_flow_curve(&vel, &Roi::Static(m)).unwrap();
        assert!((curve.flow.samples[0] - 0.6).abs() < 1e-9);
        assert_eq!(curve.roi_area_mm2[0], 1.0);
        assert_eq!(curve.max_velocity_cm_s[0], 1.0);
    }

    #[test]
    fn uniform_disk_flow() {
        let h = header(4);
        let vel = uniform_series(&h, 2.0);
        let m = disk(16.0, 16.0, 5.0);
        let n = m.count() as f64;
        let curve = compute_flow_curve(&vel, &Roi::Static(m)).unwrap();
        for (q, a) in curve.flow.samples.iter().zip(&curve.roi_area_mm2) {
            assert!((q - 2.0 * n * 0.6).abs() < 1e-6);
            assert_eq!(*a, n);
        }
        assert!((curve.mean_flow_ml_min() - 2.0 * n * 0.6).abs() < 1e-6);
        assert!(curve.amplitude_ml_min().abs() < 1e-9);
    }

    #[test]
    fn flow_is_linear_in_velocity() {
        let h = header(4);
        let m = disk(16.0, 16.0, 5.0);
        let roi = Roi::Static(m);
        let a = compute_flow_curve(&uniform_series(&h, 1.5), &roi).unwrap();
        let b = compute_flow_curve(&uniform_series(&h, 3.0), &roi).unwrap();
        for (x, y) in a.flow.samples.iter().zip(&b.flow.samples) {
            assert!((2.0 * x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn flow_is_additive_over_disjoint_rois() {
        let h = header(2);
        let data: Vec<f32> = (0..h.n_samples())
            .map(|i| ((i * 13 % 97) as f32 - 48.0) / 10.0)
            .collect();
        let vel = VelocitySeries::new(h, data).unwrap();
        let m1 = disk(10.0, 10.0, 4.0);
        let m2 = disk(22.0, 22.0, 4.0);
        let union = m1.union(&m2);
        let q1 = compute_flow_curve(&vel, &Roi::Static(m1)).unwrap();
        let q2 = compute_flow_curve(&vel, &Roi::Static(m2)).unwrap();
        let qu = compute_flow_curve(&vel, &Roi::Static(union)).unwrap();
        for t in 0..2 {
            assert!(
                (q1.flow.samples[t] + q2.flow.samples[t] - qu.flow.samples[t]).abs() < 1e-9
            );
        }
    }

    #[test]
    fn signed_peak_velocity_tracks_magnitude() {
        let h = header(2);
        let mut data = vec![0.0f32; h.n_samples()];
        let m = disk(16.0, 16.0, 3.0);
        for (r, c) in m.pixels() {
            data[r * 32 + c] = 1.0;
        }
        data[16 * 32 + 16] = -4.0; // largest magnitude is negative
        let vel = VelocitySeries::new(h, data).unwrap();
        let curve = compute_flow_curve(&vel, &Roi::Static(m)).unwrap();
        assert_eq!(curve.max_velocity_cm_s[0], -4.0);
    }

    #[test]
    fn dynamic_roi_uses_per_frame_masks() {
        let h = header(2);
        let vel = uniform_series(&h, 1.0);
        let m1 = disk(16.0, 16.0, 3.0);
        let m2 = disk(16.0, 16.0, 5.0);
        let (n1, n2) = (m1.count() as f64, m2.count() as f64);
        let curve = compute_flow_curve(&vel, &Roi::Dynamic(vec![m1, m2])).unwrap();
        assert!((curve.flow.samples[0] - n1 * 0.6).abs() < 1e-9);
        assert!((curve.flow.samples[1] - n2 * 0.6).abs() < 1e-9);
        assert_eq!(curve.roi_area_mm2, vec![n1, n2]);
    }

    #[test]
    fn pixel_spacing_scales_flow() {
        let mut h = header(2);
        h.pixel_spacing_mm = (0.5, 0.5);
        let vel = uniform_series(&h, 1.0);
        let mut m = Mask::new(32, 32);
        m.set(10, 10, true);
        let curve = compute_flow_curve(&vel, &Roi::Static(m)).unwrap();
        assert!((curve.flow.samples[0] - 0.25 * 0.6).abs() < 1e-12);
    }

    fn constant_curve(q: f64, n: usize) -> FlowCurve {
        FlowCurve {
            flow: Signal1D::new(vec![q; n], 0.096, 0.0).unwrap(),
            roi_area_mm2: vec![1.0; n],
            max_velocity_cm_s: vec![0.0; n],
            peak_flow_ml_min: q,
            min_flow_ml_min: q,
        }
    }

    #[test]
    fn stroke_volume_of_constant_flow() {
        // 60 mL/min over 1 s = 1 mL
        let curve = constant_curve(60.0, 32); // 2.976 s span
        let sv = stroke_volume_ml(&curve, 0.0, 1.0).unwrap();
        assert!((sv - 1.0).abs() < 1e-9);
        // off-grid endpoints too
        let sv = stroke_volume_ml(&curve, 0.123, 1.123).unwrap();
        assert!((sv - 1.0).abs() < 1e-9);
    }

    #[test]
    fn stroke_volume_is_additive_in_time() {
        let flow: Vec<f64> = (0..40).map(|i| 50.0 + 30.0 * (i as f64 * 0.7).sin()).collect();
        let peak = flow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = flow.iter().cloned().fold(f64::INFINITY, f64::min);
        let curve = FlowCurve {
            flow: Signal1D::new(flow, 0.096, 0.0).unwrap(),
            roi_area_mm2: vec![1.0; 40],
            max_velocity_cm_s: vec![0.0; 40],
            peak_flow_ml_min: peak,
            min_flow_ml_min: min,
        };
        let whole = stroke_volume_ml(&curve, 0.1, 3.5).unwrap();
        let a = stroke_volume_ml(&curve, 0.1, 1.77).unwrap();
        let b = stroke_volume_ml(&curve, 1.77, 3.5).unwrap();
        assert!((a + b - whole).abs() < 1e-9, "{a} + {b} != {whole}");
    }

    #[test]
    fn stroke_volume_within_one_interval() {
        let curve = constant_curve(120.0, 8);
        let sv = stroke_volume_ml(&curve, 0.01, 0.05).unwrap();
        assert!((sv - 120.0 * 0.04 / 60.0).abs() < 1e-9);
    }

    #[test]
    fn stroke_volume_rejects_bad_windows() {
        let curve = constant_curve(60.0, 8);
        assert!(matches!(
            stroke_volume_ml(&curve, 1.0, 0.5),
            Err(FlowError::BadRange { .. })
        ));
        assert!(matches!(
            stroke_volume_ml(&curve, -0.5, 0.5),
            Err(FlowError::BadRange { .. })
        ));
        assert!(matches!(
            stroke_volume_ml(&curve, 0.0, 100.0),
            Err(FlowError::BadRange { .. })
        ));
    }

    #[test]
    fn empty_roi_is_an_error() {
        let h = header(2);
        let vel = uniform_series(&h, 1.0);
        let roi = Roi::Dynamic(vec![disk(16.0, 16.0, 3.0), Mask::new(32, 32)]);
        // Roi::validate rejects the empty frame before per-frame iteration
        assert!(compute_flow_curve(&vel, &roi).is_err());
    }
}
