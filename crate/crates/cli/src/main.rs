use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use vlpd::detection::format_detections;
use vlpd::evaluation::{EvalReport, SubsetSpec};
use vlpd::pipeline::train::{with_runtime, CHECKPOINT_FILE, LOSS_LOG_FILE};
use vlpd::pipeline::{
    evaluate_detector, load_image, make_synthetic_dataset, plot_report, pseudolabel_dataset,
    write_dataset_detections, Checkpoint, Dataset, TrainJob,
};
use vlpd::RunConfig;

#[derive(Parser)]
#[command(
    name = "vlpd",
    version,
    about = "Context-aware pedestrian detection at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cache the frozen encoder's score maps for every dataset image.
    Pseudolabel {
        dataset: PathBuf,
        out: PathBuf,
        /// RunConfig TOML; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train from a job file (dataset, output, [run] section).
    Train { config: PathBuf },
    /// Detect on a dataset and report MR⁻² per subset.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "Reasonable,Small,HO,R+HO,Heavy"
        )]
        subsets: Vec<String>,
        #[arg(long, default_value_t = 0.01)]
        threshold: f64,
        /// JSON report path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the raw detections here.
        #[arg(long)]
        detections: Option<PathBuf>,
    },
    /// Detect pedestrians in one image.
    Detect {
        checkpoint: PathBuf,
        image: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Synth {
        seed: u64,
        n: usize,
        out: PathBuf,
        #[arg(long, default_value_t = 96)]
        height: usize,
        #[arg(long, default_value_t = 128)]
        width: usize,
    },
    /// Render the FPPI/miss-rate curves of a report.
    Plot { report: PathBuf, out: PathBuf },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    with_runtime(|| run(cli.command))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Pseudolabel {
            dataset,
            out,
            config,
        } => {
            let cfg = match config {
                Some(p) => {
                    RunConfig::load(&p).with_context(|| format!("loading {}", p.display()))?
                }
                None => RunConfig::default(),
            };
            let ds = Dataset::load(&dataset)?;
            let n = pseudolabel_dataset(&cfg, &ds, &out)?;
            log::info!("cached pseudo labels for {n} images in {}", out.display());
        }
        Command::Train { config } => {
            let job =
                TrainJob::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let outcome = job.run()?;
            let last = outcome.records.last();
            log::info!(
                "trained {} iterations; final combined loss {:?}; wrote {} and {}",
                outcome.trainer.iteration,
                last.map(|r| r.combined),
                job.output.join(CHECKPOINT_FILE).display(),
                job.output.join(LOSS_LOG_FILE).display()
            );
        }
        Command::Eval {
            checkpoint,
            dataset,
            subsets,
            threshold,
            out,
            detections,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let ds = Dataset::load(&dataset)?;
            let specs = subsets
                .iter()
                .map(|s| SubsetSpec::by_name(s))
                .collect::<vlpd::Result<Vec<_>>>()?;
            let (report, dets) = evaluate_detector(&ck.detector, &ds, threshold, &specs)?;
            if let Some(p) = detections {
                write_dataset_detections(&p, &ds, &dets)?;
            }
            for (name, r) in &report.subsets {
                log::info!(
                    "{name:>10}: MR-2 = {:.4} ({} ground truths)",
                    r.mr2,
                    r.ground_truths
                );
            }
            for name in &report.undefined {
                log::warn!("{name:>10}: undefined (no ground truth in subset)");
            }
            match out {
                Some(p) => report.save(&p)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
        }
        Command::Detect {
            checkpoint,
            image,
            threshold,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let img = load_image(&image)?;
            let boxes = ck.detector.detect(&img, threshold)?;
            let id = image
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            let text = format_detections([(id.as_str(), boxes.as_slice())]);
            match out {
                Some(p) => std::fs::write(&p, text)?,
                None => print!("{text}"),
            }
        }
        Command::Synth {
            seed,
            n,
            out,
            height,
            width,
        } => {
            let ds = make_synthetic_dataset(seed, n, (height, width), &out)?;
            let boxes: usize = ds.records.iter().map(|r| r.boxes.len()).sum();
            log::info!(
                "wrote {} images with {boxes} pedestrians to {}",
                ds.len(),
                out.display()
            );
        }
        Command::Plot { report, out } => {
            let r = EvalReport::load(&report)?;
            plot_report(&r, &out)?;
        }
    }
    Ok(())
}
