//! GPS association, distribution aggregation, dataset summaries, model
//! comparison and analyst-facing exports (GeoJSON / CSV / JSON).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_io::{ConditionTag, DataError, GpsFix};
use crate::validation::{Band, ValidationRecord};

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("bin width must be positive, got {0}")]
    BadBinWidth(f64),
    #[error("histogram range [{0}, {1}] is empty")]
    BadRange(f64, f64),
}

/// Distribution of validation percentages over fixed-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bin_edges(&self, idx: usize) -> (f64, f64) {
        let lo = self.lo + idx as f64 * self.bin_width;
        (lo, (lo + self.bin_width).min(self.hi))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Per-dataset aggregate, one Table-row worth of numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub dataset: String,
    pub condition: ConditionTag,
    pub mean_percent: Option<f64>,
    /// Counts in band order ge95, p90_95, p85_90, lt85.
    pub bands: [u64; 4],
    pub frames: u64,
    pub excluded: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub dataset: String,
    pub condition: ConditionTag,
    pub mean_a: Option<f64>,
    pub mean_b: Option<f64>,
    pub mean_difference: Option<f64>,
    /// "a", "b", or "tie"; absent when either mean is undefined.
    pub winner: Option<String>,
}

/// Attaches a linearly interpolated fix to every record bracketed by GPS
/// fixes no further than `max_gap_s` away on either side. Records in
/// outages keep an empty location; that is a valid state, not an error.
pub fn attach_gps(records: &mut [ValidationRecord], gps: &[GpsFix], max_gap_s: f64) {
    let max_gap_ns = (max_gap_s * 1e9) as i64;
    for rec in records.iter_mut() {
        rec.location = locate(gps, rec.timestamp, max_gap_ns);
    }
}

fn locate(gps: &[GpsFix], t: i64, max_gap_ns: i64) -> Option<(f64, f64)> {
    let idx = gps.partition_point(|g| g.timestamp < t);
    if idx < gps.len() && gps[idx].timestamp == t {
        let g = &gps[idx];
        return Some((g.latitude, g.longitude));
    }
    if idx == 0 || idx == gps.len() {
        return None;
    }
    let (lo, hi) = (&gps[idx - 1], &gps[idx]);
    if t - lo.timestamp > max_gap_ns || hi.timestamp - t > max_gap_ns {
        return None;
    }
    let f = (t - lo.timestamp) as f64 / (hi.timestamp - lo.timestamp) as f64;
    Some((
        lo.latitude + (hi.latitude - lo.latitude) * f,
        lo.longitude + (hi.longitude - lo.longitude) * f,
    ))
}

/// Bins records into half-open bins `[lo + k*w, lo + (k+1)*w)`. Records
/// below the range clamp into the first bin; the value `hi` lands in the
/// last bin.
pub fn histogram(
    records: &[ValidationRecord],
    bin_width: f64,
    range: (f64, f64),
) -> Result<Histogram, AggregateError> {
    if !(bin_width > 0.0) {
        return Err(AggregateError::BadBinWidth(bin_width));
    }
    let (lo, hi) = range;
    if hi <= lo {
        return Err(AggregateError::BadRange(lo, hi));
    }
    let n_bins = ((hi - lo) / bin_width).ceil() as usize;
    let mut counts = vec![0u64; n_bins];
    for rec in records {
        let idx = if rec.percent < lo {
            0
        } else {
            (((rec.percent - lo) / bin_width) as usize).min(n_bins - 1)
        };
        counts[idx] += 1;
    }
    Ok(Histogram { bin_width, lo, hi, counts })
}

/// Arithmetic mean of the defined records plus per-band counts.
pub fn summarize(
    records: &[ValidationRecord],
    dataset: &str,
    condition: ConditionTag,
    excluded: u64,
) -> DatasetSummary {
    let mut bands = [0u64; 4];
    let mut sum = 0.0;
    for rec in records {
        let slot = Band::ALL.iter().position(|b| *b == rec.band).unwrap();
        bands[slot] += 1;
        sum += rec.percent;
    }
    let mean_percent = if records.is_empty() { None } else { Some(sum / records.len() as f64) };
    DatasetSummary {
        dataset: dataset.to_string(),
        condition,
        mean_percent,
        bands,
        frames: records.len() as u64,
        excluded,
    }
}

/// Pairs summaries by dataset id and reports per-dataset means and the
/// winner. Swapping a and b negates every difference and flips every
/// winner.
pub fn compare(a: &[DatasetSummary], b: &[DatasetSummary]) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    for sa in a {
        let Some(sb) = b.iter().find(|s| s.dataset == sa.dataset) else { continue };
        let (mean_difference, winner) = match (sa.mean_percent, sb.mean_percent) {
            (Some(ma), Some(mb)) => {
                let d = ma - mb;
                let w = if d > 0.0 { "a" } else if d < 0.0 { "b" } else { "tie" };
                (Some(d), Some(w.to_string()))
            }
            _ => (None, None),
        };
        rows.push(ComparisonRow {
            dataset: sa.dataset.clone(),
            condition: sa.condition,
            mean_a: sa.mean_percent,
            mean_b: sb.mean_percent,
            mean_difference,
            winner,
        });
    }
    rows
}

// ---------------------------------------------------------------------------
// exports

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

/// Writes located records as a GeoJSON FeatureCollection of Point
/// features ([lon, lat]); unlocated records go to a sidecar CSV next to
/// the GeoJSON file (`<stem>_unlocated.csv`).
pub fn export_geojson(records: &[ValidationRecord], path: &Path) -> Result<(), DataError> {
    let mut features = Vec::new();
    let mut unlocated = Vec::new();
    for rec in records {
        match rec.location {
            Some((lat, lon)) => {
                features.push(serde_json::json!({
                    "type": "Feature",
                    "geometry": { "type": "Point", "coordinates": [lon, lat] },
                    "properties": {
                        "timestamp_ns": rec.timestamp,
                        "percent": rec.percent,
                        "band": rec.band.as_str(),
                        "n_points": rec.n_points,
                    }
                }));
            }
            None => unlocated.push(rec),
        }
    }
    let doc = serde_json::json!({ "type": "FeatureCollection", "features": features });
    let text = serde_json::to_string_pretty(&doc).expect("geojson serializes");
    std::fs::write(path, text).map_err(|e| DataError::Io { path: path.to_path_buf(), source: e })?;

    let sidecar = sidecar_path(path);
    let mut csv = String::from("timestamp_ns,percent,band,n_points\n");
    for rec in unlocated {
        let _ = writeln!(csv, "{},{},{},{}", rec.timestamp, fmt6(rec.percent), rec.band.as_str(), rec.n_points);
    }
    std::fs::write(&sidecar, csv).map_err(|e| DataError::Io { path: sidecar.clone(), source: e })
}

pub fn sidecar_path(geojson: &Path) -> std::path::PathBuf {
    let stem = geojson.file_stem().and_then(|s| s.to_str()).unwrap_or("points");
    geojson.with_file_name(format!("{stem}_unlocated.csv"))
}

pub fn export_records_csv(
    records: &[(i64, String, Option<ValidationRecord>)],
    path: &Path,
) -> Result<(), DataError> {
    let mut out = String::from("timestamp_ns,status,percent,n_points,n_correct,band,lat,lon\n");
    for (timestamp, status, rec) in records {
        match rec {
            Some(r) => {
                let (lat, lon) = match r.location {
                    Some((lat, lon)) => (fmt6(lat), fmt6(lon)),
                    None => (String::new(), String::new()),
                };
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    timestamp, status, fmt6(r.percent), r.n_points, r.n_correct, r.band.as_str(), lat, lon
                );
            }
            None => {
                let _ = writeln!(out, "{timestamp},{status},,,,,,");
            }
        }
    }
    std::fs::write(path, out).map_err(|e| DataError::Io { path: path.to_path_buf(), source: e })
}

pub fn export_histogram_csv(hist: &Histogram, path: &Path) -> Result<(), DataError> {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (idx, count) in hist.counts.iter().enumerate() {
        let (lo, hi) = hist.bin_edges(idx);
        let _ = writeln!(out, "{},{},{}", fmt6(lo), fmt6(hi), count);
    }
    std::fs::write(path, out).map_err(|e| DataError::Io { path: path.to_path_buf(), source: e })
}
