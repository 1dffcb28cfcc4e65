//! End-to-end batch runs over a dataset directory: per-frame processing,
//! aggregation and file exports, with deterministic output regardless of
//! worker count.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::accumulation::{accumulate, relative_pose, AccumulationWindow, FrameInput};
use crate::dataset_io::{
    interpolate_pose, read_frames, read_gps_track, read_manifest, read_mask, read_pose_track,
    read_scan, DataError, DatasetManifest, FrameEntry, GpsFix, LabelMask, Pose,
};
use crate::geometry::GeometryError;
use crate::geospatial::{
    attach_gps, compare, export_geojson, export_histogram_csv, export_records_csv, histogram,
    summarize, ComparisonRow, DatasetSummary,
};
use crate::road_extraction::{
    estimate_yaw_angle, extract_road, lowest_ground_rings, ring_models_from_mount,
    trajectory_arc, ExtractionParams, RoadPointSet, TrajectoryArc,
};
use crate::scan_processing::{correct_motion, median_filter, statistical_filter};
use crate::validation::{dedup_pixels, project_cloud, road_percentage, Band, ValidationRecord};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Aggregate(#[from] crate::geospatial::AggregateError),
    #[error("no usable ground rings for this mount and beam set")]
    NoGroundRings,
    #[error("frame sets differ: {0} frames only in a, {1} only in b")]
    FrameMismatch(usize, usize),
}

/// Everything a validation run needs; every field has a documented
/// default and is echoed into `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub out: PathBuf,
    /// Accumulation window: frames before / after the reference.
    pub n_before: usize,
    pub n_after: usize,
    /// Boundary-walk smoothness threshold, degrees.
    pub angle_threshold_deg: f64,
    /// Rings to extract from; absent selects the lowest ground rings.
    pub rings: Option<Vec<u8>>,
    /// Count each projected pixel once per frame instead of once per point.
    pub unique_pixels: bool,
    /// Histogram bin width, percentage points.
    pub bin_width: f64,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
    pub knn: usize,
    pub stddev_mult: f64,
    pub median_window: usize,
    pub seed_match_max: f64,
    pub gps_max_gap_s: f64,
    pub wheelbase: f64,
    pub track_width: f64,
    /// Per-ring beam elevations (degrees) used to model ground circles.
    pub beam_elevations_deg: Vec<f64>,
    pub default_ring_count: usize,
}

impl RunConfig {
    pub fn new(dataset: impl Into<PathBuf>, out: impl Into<PathBuf>) -> RunConfig {
        RunConfig {
            dataset: dataset.into(),
            out: out.into(),
            n_before: 20,
            n_after: 5,
            angle_threshold_deg: 10.0,
            rings: None,
            unique_pixels: false,
            bin_width: 1.0,
            jobs: 0,
            knn: 10,
            stddev_mult: 2.0,
            median_window: 5,
            seed_match_max: 0.5,
            gps_max_gap_s: 2.0,
            wheelbase: 1.9,
            track_width: 1.2,
            beam_elevations_deg: (0..16).map(|i| -15.0 + 2.0 * i as f64).collect(),
            default_ring_count: 6,
        }
    }
}

/// Per-frame outcome row: `ok` carries a record, anything else names the
/// reason the frame was excluded.
pub type FrameRow = (i64, String, Option<ValidationRecord>);

#[derive(Debug)]
pub struct ValidateOutput {
    pub summary: DatasetSummary,
    pub records: Vec<ValidationRecord>,
    pub rows: Vec<FrameRow>,
    pub report_path: PathBuf,
}

fn status_err(kind: &str, err: impl std::fmt::Display) -> String {
    // records.csv is comma-separated; keep the status field comma-free
    format!("{kind}: {err}").replace(',', ";")
}

struct FrameStage {
    roads: RoadPointSet,
    pose: Option<Pose>,
    mask: Option<LabelMask>,
    status: Option<String>,
}

/// Runs the full per-frame pipeline over a dataset and writes
/// `report.json`, `points.geojson` (plus the unlocated sidecar),
/// `histogram.csv` and `records.csv` into the output directory.
pub fn run_validate(config: &RunConfig) -> Result<ValidateOutput, PipelineError> {
    let manifest = read_manifest(&config.dataset)?;
    let frames = read_frames(&config.dataset.join("frames.csv"))?;
    let poses = read_pose_track(&config.dataset.join("poses.csv"))?;
    let gps_path = config.dataset.join("gps.csv");
    // GPS is optional context, not a gate: no file means no locations
    let gps: Vec<GpsFix> = if gps_path.exists() { read_gps_track(&gps_path)? } else { Vec::new() };
    std::fs::create_dir_all(&config.out).map_err(|e| DataError::io(&config.out, e))?;

    let ring_ids = match &config.rings {
        Some(r) => r.clone(),
        None => lowest_ground_rings(
            &manifest.calibration.lidar_mount,
            &config.beam_elevations_deg,
            config.default_ring_count,
        ),
    };
    let ring_models = ring_models_from_mount(
        &manifest.calibration.lidar_mount,
        &config.beam_elevations_deg,
        &ring_ids,
    );
    if ring_models.is_empty() {
        return Err(PipelineError::NoGroundRings);
    }
    let params = ExtractionParams {
        angle_threshold: config.angle_threshold_deg.to_radians(),
        seed_match_max: config.seed_match_max,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .expect("thread pool");

    let stages: Vec<FrameStage> = pool.install(|| {
        frames
            .par_iter()
            .enumerate()
            .map(|(idx, entry)| {
                process_frame(config, &manifest, &frames, &poses, &ring_models, &params, idx, entry)
            })
            .collect()
    });

    // accumulation and scoring are window-coupled, so they run ordered
    let inputs: Vec<FrameInput> = stages
        .iter()
        .map(|s| FrameInput { pose: s.pose, roads: s.roads.clone() })
        .collect();
    let window = AccumulationWindow { n_before: config.n_before, n_after: config.n_after };
    let mut rows: Vec<FrameRow> = Vec::with_capacity(frames.len());
    for (idx, stage) in stages.iter().enumerate() {
        let t = frames[idx].timestamp;
        if let Some(status) = &stage.status {
            rows.push((t, status.clone(), None));
            continue;
        }
        let mask = stage.mask.as_ref().expect("mask present when status clear");
        let cloud = match accumulate(&inputs, idx, &window) {
            Ok(c) => c,
            Err(e) => {
                rows.push((t, status_err("accumulate_error", e), None));
                continue;
            }
        };
        let mut pixels =
            match project_cloud(&cloud, &manifest.calibration.camera, (mask.width, mask.height)) {
                Ok(p) => p,
                Err(e) => {
                    rows.push((t, status_err("projection_error", e), None));
                    continue;
                }
            };
        if config.unique_pixels {
            pixels = dedup_pixels(&pixels);
        }
        match road_percentage(t, &pixels, mask, manifest.road_id) {
            Some(rec) => rows.push((t, "ok".into(), Some(rec))),
            None => rows.push((t, "no_projected_points".into(), None)),
        }
    }

    let mut records: Vec<ValidationRecord> =
        rows.iter().filter_map(|(_, _, r)| r.clone()).collect();
    attach_gps(&mut records, &gps, config.gps_max_gap_s);
    // propagate locations back into the per-frame rows
    for (_, _, slot) in rows.iter_mut() {
        if let Some(rec) = slot {
            if let Some(located) = records.iter().find(|r| r.timestamp == rec.timestamp) {
                rec.location = located.location;
            }
        }
    }

    let dataset_name = config
        .dataset
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let excluded = (frames.len() - records.len()) as u64;
    let summary = summarize(&records, &dataset_name, manifest.condition, excluded);
    let hist = histogram(&records, config.bin_width, (70.0, 100.0))?;

    export_geojson(&records, &config.out.join("points.geojson"))?;
    export_histogram_csv(&hist, &config.out.join("histogram.csv"))?;
    export_records_csv(&rows, &config.out.join("records.csv"))?;

    let report_path = config.out.join("report.json");
    let report = serde_json::json!({
        "dataset": summary.dataset,
        "condition": manifest.condition.as_str(),
        "mean_percent": summary.mean_percent,
        "bands": {
            Band::ALL[0].as_str(): summary.bands[0],
            Band::ALL[1].as_str(): summary.bands[1],
            Band::ALL[2].as_str(): summary.bands[2],
            Band::ALL[3].as_str(): summary.bands[3],
        },
        "frames": summary.frames,
        "excluded": summary.excluded,
        "config": config,
    });
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&report_path, text).map_err(|e| DataError::io(&report_path, e))?;

    Ok(ValidateOutput { summary, records, rows, report_path })
}

#[allow(clippy::too_many_arguments)]
fn process_frame(
    config: &RunConfig,
    manifest: &DatasetManifest,
    frames: &[FrameEntry],
    poses: &[Pose],
    ring_models: &[crate::road_extraction::RingModel],
    params: &ExtractionParams,
    idx: usize,
    entry: &FrameEntry,
) -> FrameStage {
    let t = entry.timestamp;
    let fail = |status: String| FrameStage {
        roads: RoadPointSet::empty(t),
        pose: interpolate_pose(poses, t).ok(),
        mask: None,
        status: Some(status),
    };

    let scan = match read_scan(&manifest.root.join(&entry.scan)) {
        Ok(s) => s,
        Err(e) => return fail(status_err("scan_error", e)),
    };
    let mask = match read_mask(&manifest.root.join(&entry.mask)) {
        Ok(m) => m,
        Err(e) => return fail(status_err("mask_error", e)),
    };
    let pose = match interpolate_pose(poses, t) {
        Ok(p) => p,
        Err(e) => return fail(status_err("pose_error", e)),
    };
    let period = scan_period(frames, idx);
    let ego = match interpolate_pose(poses, t + period) {
        Ok(end) => relative_pose(&pose, &end),
        Err(e) => return fail(status_err("pose_error", e)),
    };
    let corrected = match correct_motion(&scan, &ego, &manifest.calibration.lidar_mount) {
        Ok(c) => c,
        Err(e) => return fail(status_err("correction_error", e)),
    };
    let filtered = statistical_filter(&corrected, config.knn, config.stddev_mult)
        .and_then(|s| median_filter(&s, config.median_window));
    let filtered = match filtered {
        Ok(f) => f,
        Err(e) => return fail(status_err("filter_error", e)),
    };
    let yaw = estimate_yaw_angle(poses, t, config.wheelbase);
    let arc = match trajectory_arc(yaw, config.wheelbase, config.track_width) {
        Ok(a) => a,
        Err(_) => TrajectoryArc::Straight, // extreme yaw estimate; fall back
    };
    let roads = extract_road(&filtered, &arc, ring_models, params);
    let status = if roads.points.is_empty() { Some("no_road_points".to_string()) } else { None };
    FrameStage { roads, pose: Some(pose), mask: Some(mask), status }
}

/// Scan period from the frame spacing; single-frame datasets assume 10 Hz.
fn scan_period(frames: &[FrameEntry], idx: usize) -> i64 {
    if frames.len() < 2 {
        return 100_000_000;
    }
    if idx + 1 < frames.len() {
        frames[idx + 1].timestamp - frames[idx].timestamp
    } else {
        frames[idx].timestamp - frames[idx - 1].timestamp
    }
}

#[derive(Debug)]
pub struct CompareOutput {
    pub rows: Vec<ComparisonRow>,
    pub report_path: PathBuf,
}

/// Validates two datasets that share a frame list (same timestamps) and
/// writes `comparison.json` ranking the two mask sets.
pub fn run_compare(
    config_a: &RunConfig,
    config_b: &RunConfig,
    out: &Path,
) -> Result<CompareOutput, PipelineError> {
    let frames_a = read_frames(&config_a.dataset.join("frames.csv"))?;
    let frames_b = read_frames(&config_b.dataset.join("frames.csv"))?;
    let ts_a: std::collections::BTreeSet<i64> = frames_a.iter().map(|f| f.timestamp).collect();
    let ts_b: std::collections::BTreeSet<i64> = frames_b.iter().map(|f| f.timestamp).collect();
    if ts_a != ts_b {
        let only_a = ts_a.difference(&ts_b).count();
        let only_b = ts_b.difference(&ts_a).count();
        return Err(PipelineError::FrameMismatch(only_a, only_b));
    }
    let a = run_validate(config_a)?;
    let b = run_validate(config_b)?;
    let rows = compare(&[a.summary], &[b.summary]);
    std::fs::create_dir_all(out).map_err(|e| DataError::io(out, e))?;
    let report_path = out.join("comparison.json");
    let doc = serde_json::json!({ "rows": rows });
    let text = serde_json::to_string_pretty(&doc).expect("comparison serializes");
    std::fs::write(&report_path, text).map_err(|e| DataError::io(&report_path, e))?;
    Ok(CompareOutput { rows, report_path })
}

/// Dataset sanity report for the `inspect` subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct InspectReport {
    pub dataset: String,
    pub condition: String,
    pub road_id: u8,
    pub classes: Vec<String>,
    pub frames: usize,
    pub unreadable_scans: Vec<String>,
    pub unreadable_masks: Vec<String>,
    pub pose_count: usize,
    pub pose_span_ns: i64,
    pub gps_fixes: usize,
}

pub fn run_inspect(dataset: &Path) -> Result<InspectReport, PipelineError> {
    let manifest = read_manifest(dataset)?;
    let frames = read_frames(&dataset.join("frames.csv"))?;
    let poses = read_pose_track(&dataset.join("poses.csv"))?;
    let gps_path = dataset.join("gps.csv");
    let gps = if gps_path.exists() { read_gps_track(&gps_path)? } else { Vec::new() };
    let mut unreadable_scans = Vec::new();
    let mut unreadable_masks = Vec::new();
    for f in &frames {
        if let Err(e) = read_scan(&dataset.join(&f.scan)) {
            unreadable_scans.push(status_err(&f.scan, e));
        }
        if let Err(e) = read_mask(&dataset.join(&f.mask)) {
            unreadable_masks.push(status_err(&f.mask, e));
        }
    }
    let pose_span_ns = match (poses.first(), poses.last()) {
        (Some(a), Some(b)) => b.timestamp - a.timestamp,
        _ => 0,
    };
    Ok(InspectReport {
        dataset: dataset.to_string_lossy().into_owned(),
        condition: manifest.condition.as_str().to_string(),
        road_id: manifest.road_id,
        classes: manifest.classes.iter().map(|c| format!("{}={}", c.id, c.name)).collect(),
        frames: frames.len(),
        unreadable_scans,
        unreadable_masks,
        pose_count: poses.len(),
        pose_span_ns,
        gps_fixes: gps.len(),
    })
}
