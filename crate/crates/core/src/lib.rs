//! Mobility change-point detection and accident hotspot shift analysis.
//!
//! The crate walks the full chain from raw files to comparable surfaces:
//!
//! - [`ingest`]: accident CSVs, mobility-report CSVs, and study-window
//!   partitioning around a change date.
//! - [`changepoint`]: penalized segmentation of the daily mobility series
//!   (`min V(tau) + beta*K`), exact and pruned solvers.
//! - [`density`]: 2D kernel density surfaces of accident locations on a
//!   regular planar grid, with ESRI ASCII serialization in [`esri`].
//! - [`shifttest`]: the integrated-squared-error statistic between two
//!   surfaces and its seeded permutation test.
//! - [`hotspot`]: quantile-thresholded hotspot regions, shift metrics, and
//!   GeoJSON export.
//! - [`roadnet`]: road-type composition of a region from OSM XML extracts.

pub mod changepoint;
pub mod density;
pub mod error;
pub mod esri;
pub mod geo;
pub mod geojson;
pub mod hotspot;
pub mod ingest;
pub mod roadnet;
pub mod shifttest;

pub use error::{Error, Result};
