//! Batch post-processing for real-time phase-contrast (RT-PC) MRI series.
//!
//! The pipeline goes from DICOM (or portable `.rtp`) ingestion through ROI
//! segmentation, velocity anti-aliasing, eddy-current background correction
//! and denoising, to flow quantification and the Diff_Ex-In analysis of
//! respiratory effects on flow. A synthetic phantom with analytic ground
//! truth serves as the end-to-end verification oracle.

pub mod cli;
pub mod core_model;
pub mod correction;
pub mod dicom;
pub mod flow_quant;
pub mod phantom;
pub mod plot;
pub mod resp_analysis;
pub mod segmentation;
pub mod signal_toolbox;

pub use core_model::{MagnitudeSeries, Mask, Roi, SeriesHeader, Signal1D, VelocitySeries};
