//! DICOM subset parsing (explicit/implicit VR little endian, uncompressed
//! pixel data), series loading into paired velocity + magnitude stacks, and
//! the portable `.rtp` fixture format.

mod load;
mod parse;
mod portable;

pub use load::{load_series, phase_to_velocity, IngestConfig, IngestError};
pub use parse::{parse_dicom, Dataset, DicomElement, DicomError, Tag};
pub use portable::{read_portable, write_portable, PortableError, RTP_VERSION};
