//! Portable `.rtp` series format, the fixture interchange for acceptance
//! tests and phantom output.
//!
//! Layout: magic "RTPC" | version u16 LE | header JSON length u32 LE |
//! canonical header JSON | velocity payload (n_frames*rows*cols f32 LE,
//! frame-major row-major, cm/s) | magnitude payload (same shape f32 LE) |
//! CRC32 (IEEE) of both payloads, u32 LE.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core_model::{CoreError, MagnitudeSeries, SeriesHeader, VelocitySeries};

pub const RTP_MAGIC: &[u8; 4] = b"RTPC";
pub const RTP_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum PortableError {
    #[error("bad magic (not an .rtp file)")]
    BadMagic,
    #[error("unsupported .rtp version {0}")]
    VersionUnsupported(u16),
    #[error("payload checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("truncated .rtp file")]
    Truncated,
    #[error("bad header JSON: {0}")]
    BadHeader(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fixed key order keeps the header JSON canonical and files byte-stable.
#[derive(Serialize, Deserialize)]
struct HeaderJson {
    n_frames: usize,
    rows: usize,
    cols: usize,
    pixel_spacing_mm: [f64; 2],
    frame_duration_ms: f64,
    venc_cm_s: f64,
}

/// IEEE CRC32 (reflected, polynomial 0xEDB88320).
pub fn crc32(data: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, slot) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *slot = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in data {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

fn payload_bytes(samples: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() * 4);
    for v in samples {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_portable(vel: &VelocitySeries, mag: &MagnitudeSeries) -> Vec<u8> {
    assert_eq!(vel.header, mag.header);
    let h = &vel.header;
    let hj = HeaderJson {
        n_frames: h.n_frames,
        rows: h.rows,
        cols: h.cols,
        pixel_spacing_mm: [h.pixel_spacing_mm.0, h.pixel_spacing_mm.1],
        frame_duration_ms: h.frame_duration_ms,
        venc_cm_s: h.venc_cm_s,
    };
    let header_json = serde_json::to_vec(&hj).expect("header serializes");
    let vel_bytes = payload_bytes(vel.samples());
    let mag_bytes = payload_bytes(mag.samples());
    let mut crc_input = Vec::with_capacity(vel_bytes.len() + mag_bytes.len());
    crc_input.extend_from_slice(&vel_bytes);
    crc_input.extend_from_slice(&mag_bytes);
    let checksum = crc32(&crc_input);

    let mut out = Vec::new();
    out.extend_from_slice(RTP_MAGIC);
    out.extend_from_slice(&RTP_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&vel_bytes);
    out.extend_from_slice(&mag_bytes);
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

pub fn decode_portable(bytes: &[u8]) -> Result<(VelocitySeries, MagnitudeSeries), PortableError> {
    if bytes.len() < 10 {
        return Err(PortableError::Truncated);
    }
    if &bytes[..4] != RTP_MAGIC {
        return Err(PortableError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != RTP_VERSION {
        return Err(PortableError::VersionUnsupported(version));
    }
    let hlen = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let hstart = 10;
    if bytes.len() < hstart + hlen {
        return Err(PortableError::Truncated);
    }
    let hj: HeaderJson = serde_json::from_slice(&bytes[hstart..hstart + hlen])
        .map_err(|e| PortableError::BadHeader(e.to_string()))?;
    let header = SeriesHeader {
        n_frames: hj.n_frames,
        rows: hj.rows,
        cols: hj.cols,
        pixel_spacing_mm: (hj.pixel_spacing_mm[0], hj.pixel_spacing_mm[1]),
        frame_duration_ms: hj.frame_duration_ms,
        venc_cm_s: hj.venc_cm_s,
    };
    header.validate()?;
    let n = header.n_samples();
    let payload_start = hstart + hlen;
    let need = payload_start + 2 * n * 4 + 4;
    if bytes.len() < need {
        return Err(PortableError::Truncated);
    }
    let payload = &bytes[payload_start..payload_start + 2 * n * 4];
    let stored = u32::from_le_bytes(
        bytes[payload_start + 2 * n * 4..payload_start + 2 * n * 4 + 4]
            .try_into()
            .unwrap(),
    );
    let computed = crc32(payload);
    if stored != computed {
        return Err(PortableError::ChecksumMismatch { stored, computed });
    }
    let read_f32s = |b: &[u8]| -> Vec<f32> {
        b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let vel_data = read_f32s(&payload[..n * 4]);
    let mag_data = read_f32s(&payload[n * 4..]);

    // samples beyond +-venc mean the file holds already-unaliased data
    let venc = header.venc_cm_s;
    let in_range = vel_data
        .iter()
        .all(|v| v.is_finite() && v.abs() as f64 <= venc);
    let vel = if in_range {
        VelocitySeries::new(header.clone(), vel_data)?
    } else {
        VelocitySeries::new_unaliased(header.clone(), vel_data)?
    };
    let mag = MagnitudeSeries::new(header, mag_data)?;
    Ok((vel, mag))
}

pub fn write_portable(
    vel: &VelocitySeries,
    mag: &MagnitudeSeries,
    path: &Path,
) -> Result<(), PortableError> {
    let bytes = encode_portable(vel, mag);
    let tmp = path.with_extension("rtp.tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_portable(path: &Path) -> Result<(VelocitySeries, MagnitudeSeries), PortableError> {
    let bytes = fs::read(path)?;
    decode_portable(&bytes)
}
