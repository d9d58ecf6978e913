//! File formats and dataset ingestion: PFM float maps, binary PPM images,
//! the tensor checkpoint container, and the flat training config format.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod pfm;
pub mod ppm;
