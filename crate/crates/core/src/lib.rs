//! Road-class validation of semantic segmentation output using lidar as
//! the reference sensor.
//!
//! The library turns raw rotating-lidar scans into motion-corrected,
//! filtered point clouds, extracts the road surface between the curbs,
//! accumulates it over a window of frames via odometry, projects it into
//! the segmentation label masks and scores each frame by the fraction of
//! road points that land on road-labeled pixels. Results are banded,
//! geolocated and exported for mapping and model comparison. A synthetic
//! scene generator with exact ground truth closes the loop for testing.

pub mod accumulation;
pub mod dataset_io;
pub mod geometry;
pub mod geospatial;
pub mod pipeline;
pub mod road_extraction;
pub mod scan_processing;
pub mod synthetic;
pub mod validation;
