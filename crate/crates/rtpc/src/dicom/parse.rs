//! Byte-level DICOM dataset parsing.
//!
//! Supported: 128-byte preamble + "DICM" with a group-0002 file meta header,
//! explicit and implicit VR little endian, defined- and undefined-length
//! sequences, uncompressed pixel data. Preamble-less streams are accepted as
//! implicit VR little endian. Parsing never reads past a declared element
//! length; any malformed input yields a typed error.

use std::fmt;

use thiserror::Error;

pub const TS_IMPLICIT_LE: &str = "1.2.840.10008.1.2";
pub const TS_EXPLICIT_LE: &str = "1.2.840.10008.1.2.1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag(pub u16, pub u16);

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:04X},{:04X})", self.0, self.1)
    }
}

pub mod tags {
    use super::Tag;
    pub const TRANSFER_SYNTAX_UID: Tag = Tag(0x0002, 0x0010);
    pub const IMAGE_TYPE: Tag = Tag(0x0008, 0x0008);
    pub const FRAME_TIME: Tag = Tag(0x0018, 0x1063);
    pub const VENC_MAXIMUM: Tag = Tag(0x0018, 0x9217);
    pub const INSTANCE_NUMBER: Tag = Tag(0x0020, 0x0013);
    pub const TEMPORAL_POSITION: Tag = Tag(0x0020, 0x0100);
    pub const NUMBER_OF_FRAMES: Tag = Tag(0x0028, 0x0008);
    pub const ROWS: Tag = Tag(0x0028, 0x0010);
    pub const COLUMNS: Tag = Tag(0x0028, 0x0011);
    pub const PIXEL_SPACING: Tag = Tag(0x0028, 0x0030);
    pub const BITS_ALLOCATED: Tag = Tag(0x0028, 0x0100);
    pub const BITS_STORED: Tag = Tag(0x0028, 0x0101);
    pub const PIXEL_REPRESENTATION: Tag = Tag(0x0028, 0x0103);
    pub const RESCALE_INTERCEPT: Tag = Tag(0x0028, 0x1052);
    pub const RESCALE_SLOPE: Tag = Tag(0x0028, 0x1053);
    pub const REFERENCED_FILE_ID: Tag = Tag(0x0004, 0x1500);
    pub const PIXEL_DATA: Tag = Tag(0x7FE0, 0x0010);
    pub const ITEM: Tag = Tag(0xFFFE, 0xE000);
    pub const ITEM_DELIMITER: Tag = Tag(0xFFFE, 0xE00D);
    pub const SEQUENCE_DELIMITER: Tag = Tag(0xFFFE, 0xE0DD);
}

#[derive(Debug, Error, PartialEq)]
pub enum DicomError {
    #[error("missing DICM magic and not parseable as implicit VR")]
    MalformedPreamble,
    #[error("element {0} declares a length past end of data")]
    TruncatedElement(Tag),
    #[error("unsupported transfer syntax {0:?}")]
    UnsupportedTransferSyntax(String),
    #[error("required tag {0} missing")]
    MissingRequiredTag(Tag),
    #[error("invalid VR bytes {vr:?} at {tag}")]
    InvalidVr { tag: Tag, vr: [u8; 2] },
    #[error("tags not strictly increasing at {0}")]
    NonMonotonicTag(Tag),
    #[error("undefined length on non-sequence element {0}")]
    UndefinedLength(Tag),
    #[error("malformed value for {tag}: {reason}")]
    BadValue { tag: Tag, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DicomElement {
    pub tag: Tag,
    /// None in implicit VR streams.
    pub vr: Option<[u8; 2]>,
    pub data: Vec<u8>,
    /// Parsed items when the element is a sequence.
    pub items: Option<Vec<Dataset>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub elements: Vec<DicomElement>,
    pub explicit_vr: bool,
}

impl Dataset {
    pub fn find(&self, tag: Tag) -> Option<&DicomElement> {
        self.elements.iter().find(|e| e.tag == tag)
    }

    pub fn string(&self, tag: Tag) -> Option<String> {
        self.find(tag).map(|e| {
            String::from_utf8_lossy(&e.data)
                .trim_end_matches(['\0', ' '])
                .trim_start()
                .to_string()
        })
    }

    pub fn u16_value(&self, tag: Tag) -> Option<u16> {
        let e = self.find(tag)?;
        if e.data.len() < 2 {
            return None;
        }
        Some(u16::from_le_bytes([e.data[0], e.data[1]]))
    }

    /// Decimal strings split on backslash.
    pub fn f64_values(&self, tag: Tag) -> Option<Vec<f64>> {
        let s = self.string(tag)?;
        let mut out = Vec::new();
        for part in s.split('\\') {
            out.push(part.trim().parse::<f64>().ok()?);
        }
        Some(out)
    }

    pub fn f64_value(&self, tag: Tag) -> Option<f64> {
        // FD binary first, decimal string fallback
        let e = self.find(tag)?;
        if e.vr == Some(*b"FD") || (e.vr.is_none() && e.data.len() == 8) {
            let b: [u8; 8] = e.data.get(..8)?.try_into().ok()?;
            return Some(f64::from_le_bytes(b));
        }
        self.f64_values(tag)?.first().copied()
    }

    pub fn i64_value(&self, tag: Tag) -> Option<i64> {
        self.string(tag)?.trim().parse::<i64>().ok()
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize, tag: Tag) -> Result<&'a [u8], DicomError> {
        if self.remaining() < n {
            return Err(DicomError::TruncatedElement(tag));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn peek_tag(&self) -> Option<Tag> {
        if self.remaining() < 4 {
            return None;
        }
        let g = u16::from_le_bytes([self.data[self.pos], self.data[self.pos + 1]]);
        let e = u16::from_le_bytes([self.data[self.pos + 2], self.data[self.pos + 3]]);
        Some(Tag(g, e))
    }

    fn read_tag(&mut self) -> Result<Tag, DicomError> {
        let b = self.take(4, Tag(0, 0))?;
        Ok(Tag(
            u16::from_le_bytes([b[0], b[1]]),
            u16::from_le_bytes([b[2], b[3]]),
        ))
    }

    fn read_u16(&mut self, tag: Tag) -> Result<u16, DicomError> {
        let b = self.take(2, tag)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn read_u32(&mut self, tag: Tag) -> Result<u32, DicomError> {
        let b = self.take(4, tag)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

const LONG_FORM_VRS: [&[u8; 2]; 6] = [b"OB", b"OW", b"OF", b"SQ", b"UT", b"UN"];
const UNDEFINED: u32 = 0xFFFF_FFFF;

fn is_valid_vr(vr: &[u8; 2]) -> bool {
    vr.iter().all(|b| b.is_ascii_uppercase())
}

/// Reads one element header; returns (tag, vr, length).
fn read_element_header(
    cur: &mut Cursor,
    explicit: bool,
) -> Result<(Tag, Option<[u8; 2]>, u32), DicomError> {
    let tag = cur.read_tag()?;
    // item / delimiter tags never carry a VR
    if tag.0 == 0xFFFE {
        let len = cur.read_u32(tag)?;
        return Ok((tag, None, len));
    }
    if explicit {
        let vrb = cur.take(2, tag)?;
        let vr = [vrb[0], vrb[1]];
        if !is_valid_vr(&vr) {
            return Err(DicomError::InvalidVr { tag, vr });
        }
        let len = if LONG_FORM_VRS.iter().any(|&v| *v == vr) {
            cur.take(2, tag)?; // reserved
            cur.read_u32(tag)?
        } else {
            cur.read_u16(tag)? as u32
        };
        Ok((tag, Some(vr), len))
    } else {
        let len = cur.read_u32(tag)?;
        Ok((tag, None, len))
    }
}

fn parse_sequence_items(cur: &mut Cursor, sq_tag: Tag, explicit: bool) -> Result<Vec<Dataset>, DicomError> {
    let mut items = Vec::new();
    loop {
        if cur.remaining() == 0 {
            return Err(DicomError::TruncatedElement(sq_tag));
        }
        let tag = cur.read_tag()?;
        let len = cur.read_u32(tag)?;
        match tag {
            tags::SEQUENCE_DELIMITER => return Ok(items),
            tags::ITEM => {
                if len == UNDEFINED {
                    items.push(parse_dataset(cur, explicit, Some(tags::ITEM_DELIMITER))?);
                } else {
                    let bytes = cur.take(len as usize, tag)?;
                    let mut inner = Cursor { data: bytes, pos: 0 };
                    items.push(parse_dataset(&mut inner, explicit, None)?);
                }
            }
            other => return Err(DicomError::BadValue {
                tag: other,
                reason: "unexpected tag inside sequence".into(),
            }),
        }
    }
}

use tags::{ITEM_DELIMITER, PIXEL_DATA};

/// Parses elements until end of data, the pixel data element (inclusive), or
/// `stop_at` (an item delimiter when parsing undefined-length items).
fn parse_dataset(
    cur: &mut Cursor,
    explicit: bool,
    stop_at: Option<Tag>,
) -> Result<Dataset, DicomError> {
    let mut ds = Dataset {
        elements: Vec::new(),
        explicit_vr: explicit,
    };
    let mut prev: Option<Tag> = None;
    while cur.remaining() > 0 {
        if let (Some(stop), Some(next)) = (stop_at, cur.peek_tag()) {
            if next == stop {
                cur.read_tag()?;
                cur.read_u32(stop)?; // delimiter length (zero)
                break;
            }
        }
        let (tag, vr, len) = read_element_header(cur, explicit)?;
        if tag == ITEM_DELIMITER && stop_at.is_none() {
            return Err(DicomError::BadValue {
                tag,
                reason: "item delimiter outside a sequence item".into(),
            });
        }
        if let Some(p) = prev {
            if tag <= p {
                return Err(DicomError::NonMonotonicTag(tag));
            }
        }
        prev = Some(tag);

        let is_sq = vr == Some(*b"SQ");
        let element = if len == UNDEFINED {
            if is_sq || (!explicit && tag != PIXEL_DATA) {
                // undefined length is only meaningful for sequences here
                let items = parse_sequence_items(cur, tag, explicit)?;
                DicomElement {
                    tag,
                    vr,
                    data: Vec::new(),
                    items: Some(items),
                }
            } else {
                // encapsulated pixel data implies a compressed transfer syntax
                return Err(DicomError::UndefinedLength(tag));
            }
        } else if is_sq {
            let bytes = cur.take(len as usize, tag)?;
            let mut inner = Cursor { data: bytes, pos: 0 };
            let mut items = Vec::new();
            while inner.remaining() > 0 {
                let itag = inner.read_tag()?;
                let ilen = inner.read_u32(itag)?;
                if itag != tags::ITEM {
                    return Err(DicomError::BadValue {
                        tag: itag,
                        reason: "expected item tag in sequence".into(),
                    });
                }
                if ilen == UNDEFINED {
                    items.push(parse_dataset(&mut inner, explicit, Some(ITEM_DELIMITER))?);
                } else {
                    let ib = inner.take(ilen as usize, itag)?;
                    let mut ic = Cursor { data: ib, pos: 0 };
                    items.push(parse_dataset(&mut ic, explicit, None)?);
                }
            }
            DicomElement {
                tag,
                vr,
                data: Vec::new(),
                items: Some(items),
            }
        } else {
            let data = cur.take(len as usize, tag)?.to_vec();
            DicomElement {
                tag,
                vr,
                data,
                items: None,
            }
        };
        let done = element.tag == PIXEL_DATA;
        ds.elements.push(element);
        if done {
            break;
        }
    }
    Ok(ds)
}

/// Parses a whole DICOM stream into a dataset (file meta merged in).
///
/// Accepts preamble + "DICM" files in explicit or implicit VR little endian,
/// and preamble-less implicit VR streams. Compressed transfer syntaxes are a
/// clean `UnsupportedTransferSyntax` error.
pub fn parse_dicom(bytes: &[u8]) -> Result<Dataset, DicomError> {
    if bytes.len() >= 132 && &bytes[128..132] == b"DICM" {
        let mut cur = Cursor {
            data: &bytes[132..],
            pos: 0,
        };
        // file meta group (0002,xxxx) is always explicit VR LE
        let mut meta = Dataset {
            elements: Vec::new(),
            explicit_vr: true,
        };
        while let Some(t) = cur.peek_tag() {
            if t.0 != 0x0002 {
                break;
            }
            let (tag, vr, len) = read_element_header(&mut cur, true)?;
            if len == UNDEFINED {
                return Err(DicomError::UndefinedLength(tag));
            }
            let data = cur.take(len as usize, tag)?.to_vec();
            meta.elements.push(DicomElement {
                tag,
                vr,
                data,
                items: None,
            });
        }
        let ts = meta
            .string(tags::TRANSFER_SYNTAX_UID)
            .ok_or(DicomError::MissingRequiredTag(tags::TRANSFER_SYNTAX_UID))?;
        let explicit = match ts.as_str() {
            TS_EXPLICIT_LE => true,
            TS_IMPLICIT_LE => false,
            other => return Err(DicomError::UnsupportedTransferSyntax(other.to_string())),
        };
        let mut ds = parse_dataset(&mut cur, explicit, None)?;
        let mut elements = meta.elements;
        elements.append(&mut ds.elements);
        Ok(Dataset {
            elements,
            explicit_vr: explicit,
        })
    } else {
        // preamble-less implicit VR: sanity-check the first element header
        if bytes.len() < 8 {
            return Err(DicomError::MalformedPreamble);
        }
        let group = u16::from_le_bytes([bytes[0], bytes[1]]);
        let len = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
        let plausible = (0x0002..=0x7FE0).contains(&group)
            && (len == UNDEFINED || (len as usize) <= bytes.len());
        if !plausible {
            return Err(DicomError::MalformedPreamble);
        }
        let mut cur = Cursor {
            data: bytes,
            pos: 0,
        };
        parse_dataset(&mut cur, false, None)
    }
}

#[cfg(test)]
pub mod testutil {
    //! Byte-level DICOM writer used as the independent fixture oracle.

    use super::*;

    pub fn push_explicit(buf: &mut Vec<u8>, tag: Tag, vr: &[u8; 2], data: &[u8]) {
        buf.extend_from_slice(&tag.0.to_le_bytes());
        buf.extend_from_slice(&tag.1.to_le_bytes());
        buf.extend_from_slice(vr);
        if LONG_FORM_VRS.iter().any(|&v| v == vr) {
            buf.extend_from_slice(&[0, 0]);
            buf.extend_from_slice(&(data.len() as u32).to_le_bytes());
        } else {
            buf.extend_from_slice(&(data.len() as u16).to_le_bytes());
        }
        buf.extend_from_slice(data);
    }

    pub fn push_implicit(buf: &mut Vec<u8>, tag: Tag, data: &[u8]) {
        buf.extend_from_slice(&tag.0.to_le_bytes());
        buf.extend_from_slice(&tag.1.to_le_bytes());
        buf.extend_from_slice(&(data.len() as u32).to_le_bytes());
        buf.extend_from_slice(data);
    }

    /// Preamble + DICM + minimal file meta declaring explicit VR LE.
    pub fn file_head(explicit: bool) -> Vec<u8> {
        let mut buf = vec![0u8; 128];
        buf.extend_from_slice(b"DICM");
        let ts = if explicit {
            TS_EXPLICIT_LE
        } else {
            TS_IMPLICIT_LE
        };
        let mut uid = ts.as_bytes().to_vec();
        if uid.len() % 2 == 1 {
            uid.push(0);
        }
        push_explicit(&mut buf, tags::TRANSFER_SYNTAX_UID, b"UI", &uid);
        buf
    }

    pub fn even_str(s: &str) -> Vec<u8> {
        let mut v = s.as_bytes().to_vec();
        if v.len() % 2 == 1 {
            v.push(b' ');
        }
        v
    }
}
