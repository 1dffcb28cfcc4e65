//! Projection of the accumulated road cloud into the label mask and the
//! per-frame road-accuracy percentage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accumulation::AccumulatedCloud;
use crate::dataset_io::LabelMask;
use crate::geometry::{CameraModel, GeometryError};

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("percent {0} outside [0, 100]")]
    PercentOutOfRange(f64),
}

/// Accuracy stratum used for spatial coloring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Band {
    /// >= 95%
    #[serde(rename = "ge95")]
    Ge95,
    /// [90, 95)
    #[serde(rename = "p90_95")]
    P90_95,
    /// [85, 90)
    #[serde(rename = "p85_90")]
    P85_90,
    /// < 85%
    #[serde(rename = "lt85")]
    Lt85,
}

impl Band {
    pub fn as_str(&self) -> &'static str {
        match self {
            Band::Ge95 => "ge95",
            Band::P90_95 => "p90_95",
            Band::P85_90 => "p85_90",
            Band::Lt85 => "lt85",
        }
    }

    pub const ALL: [Band; 4] = [Band::Ge95, Band::P90_95, Band::P85_90, Band::Lt85];
}

/// Per-frame validation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub timestamp: i64,
    pub percent: f64,
    pub n_points: u64,
    pub n_correct: u64,
    pub band: Band,
    /// (latitude, longitude), attached later from the GPS track.
    pub location: Option<(f64, f64)>,
}

/// Boundary percentages (95 / 90 / 85 exactly) go to the upper band.
pub fn band_of(percent: f64) -> Result<Band, ValidationError> {
    if !(0.0..=100.0).contains(&percent) || percent.is_nan() {
        return Err(ValidationError::PercentOutOfRange(percent));
    }
    Ok(if percent >= 95.0 {
        Band::Ge95
    } else if percent >= 90.0 {
        Band::P90_95
    } else if percent >= 85.0 {
        Band::P85_90
    } else {
        Band::Lt85
    })
}

/// Projects every cloud point through intrinsics rescaled to the mask
/// resolution, rounds to the nearest pixel, and drops behind-camera and
/// out-of-bounds points. Duplicates are kept — one entry per surviving
/// point.
pub fn project_cloud(
    cloud: &AccumulatedCloud,
    cam: &CameraModel,
    mask_dims: (usize, usize),
) -> Result<Vec<(usize, usize)>, GeometryError> {
    let (width, height) = mask_dims;
    let scaled = cam.rescaled(width as u32, height as u32);
    let mut pixels = Vec::with_capacity(cloud.points.len());
    for &p in &cloud.points {
        let Some(px) = scaled.project(p)? else { continue };
        let col = px.u.round();
        let row = px.v.round();
        if col < 0.0 || row < 0.0 || col >= width as f64 || row >= height as f64 {
            continue;
        }
        pixels.push((row as usize, col as usize));
    }
    Ok(pixels)
}

/// Scores a frame: the fraction of projected entries whose mask byte is
/// the road class. Zero projected points yields `None` (the undefined
/// marker; the frame is excluded from aggregates).
pub fn road_percentage(
    timestamp: i64,
    pixels: &[(usize, usize)],
    mask: &LabelMask,
    road_id: u8,
) -> Option<ValidationRecord> {
    if pixels.is_empty() {
        return None;
    }
    let n_points = pixels.len() as u64;
    let n_correct = pixels
        .iter()
        .filter(|&&(row, col)| mask.get(row, col) == road_id)
        .count() as u64;
    let percent = 100.0 * n_correct as f64 / n_points as f64;
    let band = band_of(percent).expect("ratio of counts is always in range");
    Some(ValidationRecord { timestamp, percent, n_points, n_correct, band, location: None })
}

/// Collapses duplicate pixel entries, for the `--unique-pixels`
/// sensitivity mode.
pub fn dedup_pixels(pixels: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut unique: Vec<(usize, usize)> = pixels.to_vec();
    unique.sort_unstable();
    unique.dedup();
    unique
}
