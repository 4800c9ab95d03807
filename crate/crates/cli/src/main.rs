use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ugtst_core::adapt::{pretrain, run_ugtst};
use ugtst_core::config::RunConfig;
use ugtst_core::metrics::{evaluate_cases, write_metrics_csv, ManifestPredictor, ModelPredictor, SlicePredictor};
use ugtst_core::report::{compare, load_runs, write_csv};
use ugtst_core::segmenter::{load_model, save_model, write_trace_csv};
use ugtst_core::select::{extract_features, select, write_selection_csv, Strategy};
use ugtst_core::synthdata::generate;
use ugtst_core::tensorio::load_manifest;
use ugtst_core::uncertainty::{persist_probs, score_dataset, write_scores_csv};
use ugtst_core::{Error, SegmenterF32};

#[derive(Parser)]
#[command(name = "ugtst", version, about = "Active source-free domain adaptation for slice segmentation")]
struct Cli {
    /// Flat JSON run configuration; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `master_seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (for `evaluate`, a `.csv` path is also accepted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    ShiftPair,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic source, target and held-out target domains.
    GenSynth {
        #[arg(long, value_enum, default_value = "shift-pair")]
        preset: Preset,
    },
    /// Train the source model on a labelled manifest.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Score a target manifest and select slices for annotation.
    Select {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Overrides `select.strategy`.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Full selection plus two-stage self-training run.
    Adapt {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        source_model: PathBuf,
        /// Labelled manifest scored after each stage.
        #[arg(long)]
        eval_manifest: Option<PathBuf>,
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Per-case Dice and HD95 of a model or of stored label maps.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        model: Option<PathBuf>,
        /// Manifest whose labels are used as predictions.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Single forward pass instead of the augmentation ensemble.
        #[arg(long)]
        no_tta: bool,
    },
    /// Aggregate adapt run directories into comparison tables.
    Report {
        /// Run directories containing `report.json`.
        runs: Vec<PathBuf>,
    },
}

/// Usage and configuration problems exit with 1, everything else with 2.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(2)
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<PathBuf, Failure> {
    let d = cli.out.clone().ok_or_else(|| Failure::Usage("--out is required".into()))?;
    fs::create_dir_all(&d).map_err(|e| Failure::Runtime(Error::Io { path: d.clone(), source: e }))?;
    Ok(d)
}

fn with_strategy(mut cfg: RunConfig, s: &Option<String>) -> Result<RunConfig, Failure> {
    if let Some(s) = s {
        cfg.select_strategy = s.parse::<Strategy>()?;
    }
    Ok(cfg)
}

fn write_config(dir: &Path, cfg: &RunConfig) -> CmdResult {
    let p = dir.join("config.json");
    fs::write(&p, cfg.to_json() + "\n").map_err(|e| Failure::Runtime(Error::Io { path: p, source: e }))
}

fn run(cli: Cli) -> CmdResult {
    let cfg = resolve_config(&cli)?;
    match &cli.command {
        Command::GenSynth { preset: Preset::ShiftPair } => {
            let out = out_dir(&cli)?;
            let (s, t, e) = cfg.synth_specs();
            generate(&s, "source", out.join("source"))?;
            generate(&t, "target", out.join("target"))?;
            generate(&e, "target_eval", out.join("target_eval"))?;
            write_config(&out, &cfg)
        }
        Command::Pretrain { manifest } => {
            let out = out_dir(&cli)?;
            let m = load_manifest(manifest)?;
            let trained = pretrain::<f32>(&m, &cfg)?;
            save_model(out.join("source.model"), &trained.model)?;
            write_trace_csv(out.join("source_trace.csv"), &trained.trace)?;
            write_config(&out, &cfg)
        }
        Command::Select { manifest, model, strategy } => {
            let out = out_dir(&cli)?;
            let cfg = with_strategy(cfg, strategy)?;
            let m = load_manifest(manifest)?;
            let model: SegmenterF32 = load_model(model, Some(m.num_classes))?;
            let scored = score_dataset(&model, &m, &cfg.scoring())?;
            let ids = m.ids();
            write_scores_csv(out.join("scores.csv"), &scored.records)?;
            persist_probs(out.join("source_probs"), &ids, &scored.probs)?;
            let features = extract_features(&model, &m, &ids)?;
            let partition = select(&scored.records, &features, &cfg.selection())?;
            write_selection_csv(out.join("selection.csv"), &partition)?;
            write_config(&out, &cfg)
        }
        Command::Adapt { manifest, source_model, eval_manifest, strategy } => {
            let out = out_dir(&cli)?;
            let cfg = with_strategy(cfg, strategy)?;
            let m = load_manifest(manifest)?;
            let eval = eval_manifest.as_ref().map(load_manifest).transpose()?;
            let source: SegmenterF32 = load_model(source_model, Some(m.num_classes))?;
            run_ugtst(&source, &m, &cfg, Some(&out), eval.as_ref())?;
            write_config(&out, &cfg)
        }
        Command::Evaluate { manifest, model, predictions, no_tta } => {
            let target = cli.out.clone().ok_or_else(|| Failure::Usage("--out is required".into()))?;
            let csv_path = if target.extension().is_some_and(|e| e == "csv") {
                if let Some(p) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
                    fs::create_dir_all(p).map_err(|e| Failure::Runtime(Error::Io { path: p.into(), source: e }))?;
                }
                target
            } else {
                out_dir(&cli)?.join("metrics.csv")
            };
            let m = load_manifest(manifest)?;
            let results = match (model, predictions) {
                (Some(w), _) => {
                    let model: SegmenterF32 = load_model(w, Some(m.num_classes))?;
                    let aug = (!no_tta).then(|| cfg.aug());
                    eval_with(&ModelPredictor::<_, f32>::new(&model, aug), &m)?
                }
                (None, Some(p)) => eval_with(&ManifestPredictor(&load_manifest(p)?), &m)?,
                (None, None) => unreachable!("clap requires one of --model/--predictions"),
            };
            write_metrics_csv(&csv_path, &results)?;
            Ok(())
        }
        Command::Report { runs } => {
            let rows = load_runs(runs)?;
            let out = out_dir(&cli)?;
            write_csv(out.join("runs.csv"), &rows)?;
            write_csv(out.join("comparison.csv"), &compare(&rows))?;
            Ok(())
        }
    }
}

fn eval_with(
    p: &dyn SlicePredictor,
    m: &ugtst_core::tensorio::DatasetManifest,
) -> Result<Vec<ugtst_core::metrics::EvalResult>, Failure> {
    Ok(evaluate_cases(p, m)?)
}
