//! `roadval`: batch validation of semantic segmentation masks against
//! lidar-derived road geometry.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use roadval_core::pipeline::{run_compare, run_inspect, run_validate, RunConfig};
use roadval_core::synthetic::{simulate, SynthSpec};

#[derive(Parser)]
#[command(name = "roadval", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every frame of a dataset and export the aggregated reports.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Validate two datasets sharing a frame list and rank the mask sets.
    Compare {
        #[arg(long)]
        dataset_a: PathBuf,
        #[arg(long)]
        dataset_b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Generate a synthetic dataset with known ground truth.
    Synth {
        /// Scene spec JSON; defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a sanity report for a dataset directory.
    Inspect {
        #[arg(long)]
        dataset: PathBuf,
    },
}

#[derive(Args)]
struct Tuning {
    /// Frames accumulated before the reference frame.
    #[arg(long, default_value_t = 20)]
    before: usize,
    /// Frames accumulated after the reference frame.
    #[arg(long, default_value_t = 5)]
    after: usize,
    /// Boundary-walk smoothness threshold, degrees.
    #[arg(long, default_value_t = 10.0)]
    angle_threshold_deg: f64,
    /// Comma-separated ring ids; defaults to the lowest ground rings.
    #[arg(long, value_delimiter = ',')]
    rings: Option<Vec<u8>>,
    /// Count each projected pixel once per frame.
    #[arg(long, default_value_t = false)]
    unique_pixels: bool,
    /// Histogram bin width, percentage points.
    #[arg(long, default_value_t = 1.0)]
    bin_width: f64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

impl Tuning {
    fn apply(&self, mut config: RunConfig) -> RunConfig {
        config.n_before = self.before;
        config.n_after = self.after;
        config.angle_threshold_deg = self.angle_threshold_deg;
        config.rings = self.rings.clone();
        config.unique_pixels = self.unique_pixels;
        config.bin_width = self.bin_width;
        config.jobs = self.jobs;
        config
    }
}

fn fail(err: impl std::fmt::Display) -> ExitCode {
    let doc = serde_json::json!({ "error": err.to_string() });
    eprintln!("{doc}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { dataset, out, tuning } => {
            let config = tuning.apply(RunConfig::new(dataset, out));
            match run_validate(&config) {
                Ok(result) => {
                    let mean = result
                        .summary
                        .mean_percent
                        .map(|m| format!("{m:.2}"))
                        .unwrap_or_else(|| "undefined".into());
                    println!(
                        "validated {} frames ({} excluded), mean road accuracy {}%",
                        result.summary.frames, result.summary.excluded, mean
                    );
                    println!("report: {}", result.report_path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Compare { dataset_a, dataset_b, out, tuning } => {
            let ca = tuning.apply(RunConfig::new(&dataset_a, out.join("a")));
            let cb = tuning.apply(RunConfig::new(&dataset_b, out.join("b")));
            match run_compare(&ca, &cb, &out) {
                Ok(result) => {
                    for row in &result.rows {
                        println!(
                            "{}: a={:?} b={:?} winner={}",
                            row.dataset,
                            row.mean_a,
                            row.mean_b,
                            row.winner.as_deref().unwrap_or("undefined")
                        );
                    }
                    println!("report: {}", result.report_path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Synth { spec, out, seed } => {
            let spec = match spec {
                None => Ok(SynthSpec::default()),
                Some(path) => std::fs::read_to_string(&path)
                    .map_err(|e| format!("{}: {e}", path.display()))
                    .and_then(|text| {
                        serde_json::from_str::<SynthSpec>(&text)
                            .map_err(|e| format!("{}: {e}", path.display()))
                    }),
            };
            let spec = match spec {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            match simulate(&spec, seed, &out) {
                Ok(stats) => {
                    println!(
                        "wrote {} frames, {} lidar points, {} road pixels to {}",
                        stats.frames,
                        stats.points,
                        stats.road_pixels,
                        out.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Inspect { dataset } => match run_inspect(&dataset) {
            Ok(report) => {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
    }
}
