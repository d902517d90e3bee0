//! Simulator of a software-configurable processor's extension-instruction
//! fabric.
//!
//! The [`fabric`] module models wide registers, banked IRAM and validated
//! extension instructions. [`colorspace`] and [`histeq`] run fixed-point
//! colour conversion and histogram equalization on it, bit-exact with their
//! scalar reference paths, and [`cycle_model`] charges each run against a
//! calibration profile.

pub mod colorspace;
pub mod cycle_model;
pub mod fabric;
pub mod fixed_point;
pub mod histeq;
pub mod image_io;

#[cfg(feature = "cli")]
pub mod cli;

pub use colorspace::{convert_image, Conversion, ConversionMatrix, PixelRgb, PixelYiq};
pub use cycle_model::{BufferLocation, CalibrationProfile, CycleReport, Mode};
pub use fabric::{Fabric, IramState, WideRegister};
pub use histeq::histeq_image;
pub use image_io::ImageBuffer;
