//! Snapshot compressive spectral imaging toolkit.
//!
//! Covers the CASSI forward model, band-wise DCT analysis of spectral
//! correlation, a mixing-domains transformer prior trained inside a
//! deep unfolding reconstructor, a GAP-TV baseline, quality metrics and
//! the file formats used by the `cmdt` command-line tool.

pub mod cassi;
pub mod cube;
pub mod dct;
pub mod error;
pub mod gaptv;
pub mod hfc;
pub mod io;
pub mod metrics;
pub mod net;
pub mod scene;
pub mod tensor;
pub mod unfold;

pub use cube::HsiCube;
pub use error::{Error, Result};
