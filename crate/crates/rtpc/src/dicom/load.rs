//! Loading DICOM files into paired velocity + magnitude series.
//!
//! Accepted inputs: a directory of per-frame files (optionally indexed by a
//! DICOMDIR), or a single multi-frame file holding 2*n frames laid out as all
//! phase frames followed by all magnitude frames. VENC and frame time come
//! from standard tags first, config overrides win; private vendor tags are
//! out of scope.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parse::{parse_dicom, tags, Dataset, DicomError};
use crate::core_model::{
    CoreError, MagnitudeSeries, SeriesHeader, VelocitySeries, VendorConvention,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Dicom(#[from] DicomError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("inconsistent geometry across frames: {0}")]
    MixedGeometry(String),
    #[error("phase/magnitude frame counts differ: {phase} phase vs {magnitude} magnitude")]
    UnpairedFrames { phase: usize, magnitude: usize },
    #[error("no VENC tag found and no override configured")]
    MissingVenc,
    #[error("no frame time tag found and no override configured")]
    MissingFrameTime,
    #[error("frame cannot be classified as phase or magnitude: {0}")]
    UnclassifiedFrame(String),
    #[error("unsupported pixel format: {0}")]
    UnsupportedPixelFormat(String),
    #[error("stored values violate the {convention:?} convention: {reason}")]
    ConventionMismatch {
        convention: VendorConvention,
        reason: String,
    },
    #[error("no DICOM frames found under {0}")]
    NoFrames(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub venc_override_cm_s: Option<f64>,
    pub frame_duration_override_ms: Option<f64>,
    pub vendor_convention: VendorConvention,
    /// +-1, flips the encoding direction sign.
    pub phase_sign: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            venc_override_cm_s: None,
            frame_duration_override_ms: None,
            vendor_convention: VendorConvention::PhaseRadians,
            phase_sign: 1.0,
        }
    }
}

/// Converts stored integer pixel values to velocity in cm/s.
///
/// PhaseRadians: v = sign * venc * phi / pi with phi = slope*stored + intercept.
/// ScaledInteger: stored in [-M, M-1] (M = 2^(bits_stored-1)) maps linearly to
/// [-venc, venc). VelocityStored: v = sign * (slope*stored + intercept).
/// Outputs are clamped to [-venc, venc].
pub fn phase_to_velocity(
    stored: &[i32],
    rescale: (f64, f64),
    convention: VendorConvention,
    venc_cm_s: f64,
    sign: f64,
    bits_stored: u16,
) -> Result<Vec<f64>, IngestError> {
    assert!(venc_cm_s > 0.0);
    let (slope, intercept) = rescale;
    let mut out = Vec::with_capacity(stored.len());
    match convention {
        VendorConvention::PhaseRadians => {
            let pi = std::f64::consts::PI;
            for &s in stored {
                let phi = slope * s as f64 + intercept;
                if phi.abs() > pi * 1.01 {
                    return Err(IngestError::ConventionMismatch {
                        convention,
                        reason: format!("phase {phi} rad outside [-pi, pi] by more than 1%"),
                    });
                }
                let v = sign * venc_cm_s * phi / pi;
                out.push(v.clamp(-venc_cm_s, venc_cm_s));
            }
        }
        VendorConvention::ScaledInteger => {
            let m = 1i64 << (bits_stored.max(2) - 1);
            let tol = (2 * m) as f64 * 0.01;
            for &s in stored {
                let s = s as i64;
                if (s as f64) < -(m as f64) - tol || (s as f64) > (m - 1) as f64 + tol {
                    return Err(IngestError::ConventionMismatch {
                        convention,
                        reason: format!("stored value {s} outside [-{m}, {}]", m - 1),
                    });
                }
                let v = sign * venc_cm_s * s as f64 / m as f64;
                out.push(v.clamp(-venc_cm_s, venc_cm_s));
            }
        }
        VendorConvention::VelocityStored => {
            for &s in stored {
                let v = slope * s as f64 + intercept;
                if v.abs() > venc_cm_s * 1.01 {
                    return Err(IngestError::ConventionMismatch {
                        convention,
                        reason: format!("velocity {v} cm/s beyond venc by more than 1%"),
                    });
                }
                out.push((sign * v).clamp(-venc_cm_s, venc_cm_s));
            }
        }
    }
    Ok(out)
}

struct FrameGeometry {
    rows: usize,
    cols: usize,
    spacing: (f64, f64),
}

struct ParsedFrame {
    geometry: FrameGeometry,
    is_phase: bool,
    sort_key: (i64, i64, String),
    stored: Vec<i32>,
    rescale: (f64, f64),
    bits_stored: u16,
    frame_time_ms: Option<f64>,
    venc_cm_s: Option<f64>,
}

fn classify(ds: &Dataset, name: &str) -> Result<bool, IngestError> {
    let image_type = ds
        .string(tags::IMAGE_TYPE)
        .ok_or_else(|| IngestError::UnclassifiedFrame(name.to_string()))?;
    let parts: Vec<String> = image_type
        .split('\\')
        .map(|p| p.trim().to_ascii_uppercase())
        .collect();
    if parts.iter().any(|p| p == "P" || p == "PHASE" || p == "V" || p == "VELOCITY") {
        Ok(true)
    } else if parts.iter().any(|p| p == "M" || p == "MAGNITUDE" || p == "MAG") {
        Ok(false)
    } else {
        Err(IngestError::UnclassifiedFrame(format!(
            "{name}: ImageType {image_type:?}"
        )))
    }
}

fn decode_pixels(ds: &Dataset, n_px: usize, name: &str) -> Result<Vec<i32>, IngestError> {
    let bits = ds.u16_value(tags::BITS_ALLOCATED).unwrap_or(16);
    if bits != 16 {
        return Err(IngestError::UnsupportedPixelFormat(format!(
            "{name}: BitsAllocated {bits} (only 16 supported)"
        )));
    }
    let signed = ds.u16_value(tags::PIXEL_REPRESENTATION).unwrap_or(0) == 1;
    let px = ds
        .find(tags::PIXEL_DATA)
        .ok_or(DicomError::MissingRequiredTag(tags::PIXEL_DATA))?;
    if px.data.len() < n_px * 2 {
        return Err(DicomError::TruncatedElement(tags::PIXEL_DATA).into());
    }
    Ok(px.data[..n_px * 2]
        .chunks_exact(2)
        .map(|c| {
            let raw = u16::from_le_bytes([c[0], c[1]]);
            if signed {
                raw as i16 as i32
            } else {
                raw as i32
            }
        })
        .collect())
}

fn frames_from_dataset(ds: &Dataset, name: &str) -> Result<Vec<ParsedFrame>, IngestError> {
    let rows = ds
        .u16_value(tags::ROWS)
        .ok_or(DicomError::MissingRequiredTag(tags::ROWS))? as usize;
    let cols = ds
        .u16_value(tags::COLUMNS)
        .ok_or(DicomError::MissingRequiredTag(tags::COLUMNS))? as usize;
    let spacing = ds
        .f64_values(tags::PIXEL_SPACING)
        .filter(|v| v.len() == 2)
        .map(|v| (v[0], v[1]))
        .unwrap_or((1.0, 1.0));
    let slope = ds.f64_value(tags::RESCALE_SLOPE).unwrap_or(1.0);
    let intercept = ds.f64_value(tags::RESCALE_INTERCEPT).unwrap_or(0.0);
    let bits_stored = ds.u16_value(tags::BITS_STORED).unwrap_or(16);
    let frame_time_ms = ds.f64_value(tags::FRAME_TIME);
    let venc = ds.f64_value(tags::VENC_MAXIMUM);
    let n_declared = ds.i64_value(tags::NUMBER_OF_FRAMES).unwrap_or(1).max(1) as usize;
    let temporal = ds.i64_value(tags::TEMPORAL_POSITION).unwrap_or(i64::MAX);
    let instance = ds.i64_value(tags::INSTANCE_NUMBER).unwrap_or(i64::MAX);
    let is_phase = classify(ds, name)?;
    let n_px = rows * cols;

    if n_declared == 1 {
        let stored = decode_pixels(ds, n_px, name)?;
        return Ok(vec![ParsedFrame {
            geometry: FrameGeometry { rows, cols, spacing },
            is_phase,
            sort_key: (temporal, instance, name.to_string()),
            stored,
            rescale: (slope, intercept),
            bits_stored,
            frame_time_ms,
            venc_cm_s: venc,
        }]);
    }

    // multi-frame: split pixel data, frame index becomes the sort key
    let stored_all = decode_pixels(ds, n_px * n_declared, name)?;
    Ok(stored_all
        .chunks_exact(n_px)
        .enumerate()
        .map(|(i, chunk)| ParsedFrame {
            geometry: FrameGeometry { rows, cols, spacing },
            is_phase,
            sort_key: (i as i64, i as i64, name.to_string()),
            stored: chunk.to_vec(),
            rescale: (slope, intercept),
            bits_stored,
            frame_time_ms,
            venc_cm_s: venc,
        })
        .collect())
}

/// Referenced file IDs from a DICOMDIR dataset, at any nesting depth.
fn dicomdir_referenced_files(ds: &Dataset) -> Vec<String> {
    fn walk(ds: &Dataset, out: &mut Vec<String>) {
        for e in &ds.elements {
            if e.tag == tags::REFERENCED_FILE_ID {
                let s = String::from_utf8_lossy(&e.data)
                    .trim_end_matches(['\0', ' '])
                    .to_string();
                if !s.is_empty() {
                    out.push(s);
                }
            }
            if let Some(items) = &e.items {
                for item in items {
                    walk(item, out);
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(ds, &mut out);
    out
}

fn collect_input_files(path: &Path) -> Result<Vec<PathBuf>, IngestError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let dicomdir = path.join("DICOMDIR");
    if dicomdir.is_file() {
        let bytes = fs::read(&dicomdir)?;
        let ds = parse_dicom(&bytes)?;
        let refs = dicomdir_referenced_files(&ds);
        if !refs.is_empty() {
            let mut files = Vec::new();
            for r in refs {
                // DICOMDIR path components are backslash-separated
                let mut p = path.to_path_buf();
                for comp in r.split('\\') {
                    p.push(comp);
                }
                files.push(p);
            }
            return Ok(files);
        }
    }
    let mut files: BTreeSet<PathBuf> = BTreeSet::new();
    for entry in fs::read_dir(path)? {
        let entry = entry?;
        let p = entry.path();
        if p.is_file() && p.file_name().map(|n| n != "DICOMDIR").unwrap_or(false) {
            files.insert(p);
        }
    }
    if files.is_empty() {
        return Err(IngestError::NoFrames(path.to_path_buf()));
    }
    Ok(files.into_iter().collect())
}

/// Loads a DICOM series (directory, multi-frame file, or DICOMDIR index) into
/// a paired (velocity, magnitude) stack. Frames are ordered by temporal index
/// tag if present, else instance number, else filename. Config overrides win
/// over tag values.
pub fn load_series(
    path: &Path,
    config: &IngestConfig,
) -> Result<(VelocitySeries, MagnitudeSeries), IngestError> {
    let files = collect_input_files(path)?;
    let mut frames: Vec<ParsedFrame> = Vec::new();
    let single_multiframe = files.len() == 1;
    for f in &files {
        let bytes = fs::read(f)?;
        let ds = parse_dicom(&bytes)?;
        let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        frames.extend(frames_from_dataset(&ds, &name)?);
    }
    if frames.is_empty() {
        return Err(IngestError::NoFrames(path.to_path_buf()));
    }

    // single multi-frame file: phase half first, magnitude half second
    if single_multiframe && frames.len() > 1 && frames.iter().all(|f| f.is_phase) {
        let n = frames.len();
        if n % 2 != 0 {
            return Err(IngestError::UnpairedFrames {
                phase: n / 2 + n % 2,
                magnitude: n / 2,
            });
        }
        for f in frames.iter_mut().skip(n / 2) {
            f.is_phase = false;
        }
    }

    let geo = &frames[0].geometry;
    let (rows, cols, spacing) = (geo.rows, geo.cols, geo.spacing);
    for f in &frames {
        let g = &f.geometry;
        if g.rows != rows || g.cols != cols || g.spacing != spacing {
            return Err(IngestError::MixedGeometry(format!(
                "{}x{} @ {:?} vs {}x{} @ {:?}",
                rows, cols, spacing, g.rows, g.cols, g.spacing
            )));
        }
    }

    let mut phase: Vec<&ParsedFrame> = frames.iter().filter(|f| f.is_phase).collect();
    let mut magnitude: Vec<&ParsedFrame> = frames.iter().filter(|f| !f.is_phase).collect();
    phase.sort_by(|a, b| a.sort_key.cmp(&b.sort_key));
    magnitude.sort_by(|a, b| a.sort_key.cmp(&b.sort_key));
    if phase.len() != magnitude.len() {
        return Err(IngestError::UnpairedFrames {
            phase: phase.len(),
            magnitude: magnitude.len(),
        });
    }

    let venc = config
        .venc_override_cm_s
        .or_else(|| frames.iter().find_map(|f| f.venc_cm_s))
        .ok_or(IngestError::MissingVenc)?;
    let frame_duration_ms = config
        .frame_duration_override_ms
        .or_else(|| frames.iter().find_map(|f| f.frame_time_ms))
        .ok_or(IngestError::MissingFrameTime)?;

    let header = SeriesHeader {
        n_frames: phase.len(),
        rows,
        cols,
        pixel_spacing_mm: spacing,
        frame_duration_ms,
        venc_cm_s: venc,
    };
    header.validate()?;

    let mut vel_data: Vec<f32> = Vec::with_capacity(header.n_samples());
    for f in &phase {
        let v = phase_to_velocity(
            &f.stored,
            f.rescale,
            config.vendor_convention,
            venc,
            config.phase_sign,
            f.bits_stored,
        )?;
        vel_data.extend(v.iter().map(|&x| x as f32));
    }
    let mut mag_data: Vec<f32> = Vec::with_capacity(header.n_samples());
    for f in &magnitude {
        let (slope, intercept) = f.rescale;
        mag_data.extend(
            f.stored
                .iter()
                .map(|&s| ((slope * s as f64 + intercept).max(0.0)) as f32),
        );
    }

    let vel = VelocitySeries::new(header.clone(), vel_data)?;
    let mag = MagnitudeSeries::new(header, mag_data)?;
    Ok((vel, mag))
}
