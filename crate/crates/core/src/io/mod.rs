//! File formats: the HSIC cube container, CMDW weight files and PGM
//! heatmaps.

pub mod cmdw;
pub mod hsic;
pub mod pgm;
