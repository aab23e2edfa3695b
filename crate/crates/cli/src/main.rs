mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use heightseg::balance::{class_histogram, image_weights};
use heightseg::eval::{evaluate, read_sizes};
use heightseg::ingest::{load_dataset, validate_alignment};
use heightseg::labels::{convert_dataset_with, Subset};
use heightseg::Exec;

use config::ConfigArgs;

/// Building height classes from DSM rasters, YOLO segmentation labels and box/mask mAP.
#[derive(Debug, Parser)]
#[command(name = "heightseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate rasters against annotations and write height-class label files
    Convert {
        #[command(flatten)]
        config: ConfigArgs,
        /// Also write the conversion report to this file
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
        /// Process images on one thread
        #[arg(long)]
        sequential: bool,
    },
    /// Per-class instance counts of a label directory
    Stats {
        /// Directory searched recursively for `*.txt` label files
        label_dir: PathBuf,
    },
    /// Per-image sampling weights from inverse class frequencies
    Weights {
        /// Directory searched recursively for `*.txt` label files
        label_dir: PathBuf,
        /// Write `<stem> <weight>` lines here instead of stdout
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Print the train/val assignment of every image stem
    Split {
        #[command(flatten)]
        config: ConfigArgs,
        /// Read stems from this file (one per line) instead of the annotations
        #[arg(long, value_name = "FILE")]
        stems: Option<PathBuf>,
    },
    /// Box and mask precision, recall, mAP50 and mAP50-95 per class
    Evaluate {
        /// Ground-truth label directory
        #[arg(long, value_name = "DIR")]
        gt: PathBuf,
        /// Prediction label directory
        #[arg(long, value_name = "DIR")]
        pred: PathBuf,
        /// Lines of `<stem> <width> <height>`
        #[arg(long, value_name = "FILE")]
        sizes: PathBuf,
        /// Also write the report as JSON to this file
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
    },
}

fn write_file(path: &Path, text: &str) -> Result<(), String> {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn require_dir(name: &str, dir: &Path) -> Result<(), String> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(format!("{name} {} is not a directory", dir.display()))
    }
}

fn convert(config: &ConfigArgs, report: Option<&Path>, sequential: bool) -> Result<String, String> {
    let cfg = config.resolve()?;
    let annotations = cfg.require("annotations", &cfg.annotations)?;
    let dsm_dir = cfg.require("dsm_dir", &cfg.dsm_dir)?;
    let out_dir = cfg.require("out_dir", &cfg.out_dir)?;
    let split = cfg.split()?;
    require_dir("dsm_dir", dsm_dir)?;

    let index = load_dataset(annotations).map_err(|e| e.to_string())?;
    let validation = validate_alignment(&index, dsm_dir);
    if !validation.is_clean() {
        return Err(format!(
            "rasters in {} do not align with {}: {}",
            dsm_dir.display(),
            annotations.display(),
            validation.problems().join("; ")
        ));
    }
    let exec = if sequential { Exec::Sequential } else { Exec::default() };
    let result = convert_dataset_with(&index, dsm_dir, out_dir, &split, exec).map_err(|e| e.to_string())?;

    let mut s = String::new();
    let _ = writeln!(s, "# configuration");
    s += &cfg.echo();
    let _ = writeln!(s);
    let _ = writeln!(s, "# alignment");
    let _ = writeln!(s, "aligned           {}/{}", validation.aligned(), validation.entries.len());
    for e in validation.entries.iter().filter(|e| !e.out_of_bounds.is_empty()) {
        let _ = writeln!(s, "outside image     {}: annotations {:?}", e.stem, e.out_of_bounds);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "# conversion");
    let text = result.to_text();
    s += &text;
    if let Some(path) = report {
        write_file(path, &text)?;
    }
    Ok(s)
}

fn split(config: &ConfigArgs, stems_file: Option<&Path>) -> Result<String, String> {
    let cfg = config.resolve()?;
    let spec = cfg.split()?;
    let stems: Vec<String> = match stems_file {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| format!("{}: {e}", p.display()))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
        None => {
            let annotations = cfg.require("annotations", &cfg.annotations)?;
            let index = load_dataset(annotations).map_err(|e| e.to_string())?;
            index.images().iter().map(|i| i.stem()).collect()
        }
    };
    let mut stems = stems;
    stems.sort();
    stems.dedup();
    let (train, val) = spec.partition(stems.iter().map(String::as_str));
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# seed {} val_fraction {:.2}: {} train, {} val",
        spec.seed,
        cfg.val_fraction,
        train.len(),
        val.len()
    );
    for (subset, list) in [(Subset::Train, &train), (Subset::Val, &val)] {
        for stem in list.iter() {
            let _ = writeln!(s, "{} {stem}", subset.dir_name());
        }
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<String, String> {
    match cli.command {
        Command::Convert {
            config,
            report,
            sequential,
        } => convert(&config, report.as_deref(), sequential),
        Command::Stats { label_dir } => {
            require_dir("label directory", &label_dir)?;
            Ok(class_histogram(&label_dir).map_err(|e| e.to_string())?.to_text())
        }
        Command::Weights { label_dir, out } => {
            require_dir("label directory", &label_dir)?;
            let w = image_weights(&label_dir).map_err(|e| e.to_string())?;
            match out {
                Some(path) => {
                    w.write(&path).map_err(|e| e.to_string())?;
                    Ok(format!("{} image weights written to {}\n", w.weights.len(), path.display()))
                }
                None => Ok(w.to_text()),
            }
        }
        Command::Split { config, stems } => split(&config, stems.as_deref()),
        Command::Evaluate { gt, pred, sizes, json } => {
            require_dir("ground-truth directory", &gt)?;
            require_dir("prediction directory", &pred)?;
            let sizes = read_sizes(&sizes).map_err(|e| e.to_string())?;
            let report = evaluate(&gt, &pred, &sizes).map_err(|e| e.to_string())?;
            if let Some(path) = json {
                write_file(&path, &report.to_json())?;
            }
            Ok(report.to_text())
        }
    }
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", one_line(first));
            return ExitCode::FAILURE;
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(msg) => {
            eprintln!("error: {}", one_line(&msg));
            ExitCode::FAILURE
        }
    }
}
