//! The `limbrec` command-line harness.
//!
//! Output layout of `crossval`:
//!
//! ```text
//! <out>/comparison.csv                 architectures × modalities, mean macro-F1 ± std
//! <out>/<ARCH>_<modality>/report.json  full cross-validation report
//! <out>/<ARCH>_<modality>/fold_plan.json
//! <out>/<ARCH>_<modality>/confusion.svg, confusion.csv   pooled over folds
//! <out>/<ARCH>_<modality>/fold<k>/history.json, metrics.json, confusion.svg, confusion.csv
//! <out>/<ARCH>_<modality>/fold<k>/model.ckpt             with --save-models
//! ```

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataset::{parse_file_name, write_csv_dir, Dataset};
use crate::error::{exit, Error, Result};
use crate::features::Modality;
use crate::gradsuite::{run_suite, SuiteEntry, TOLERANCE};
use crate::metrics::render_confusion;
use crate::models::ArchKind;
use crate::train::{dataset_windows, run_crossval, train_fold, CvReport, FoldOutcome};
use crate::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "limbrec", version, about = "Activity recognition from joint-angle recordings")]
struct Cli {
    /// Log more (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic dataset as a CSV tree.
    Synth(SynthArgs),
    /// Load a CSV tree and print what was found.
    Ingest(IngestArgs),
    /// Train and score a single fold of one architecture.
    Train(TrainArgs),
    /// Cross-validate every configured architecture on every modality.
    Crossval(CrossvalArgs),
    /// Compare analytic gradients of every op and architecture with finite differences.
    Gradcheck(GradcheckArgs),
    /// Rebuild comparison.csv from the report.json files under a directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Destination directory.
    #[arg(short, long)]
    out: PathBuf,
    /// Overwrite recordings in a non-empty destination.
    #[arg(long)]
    force: bool,
    /// Generator seed (overrides synth.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Modalities to write (overrides data.modalities).
    #[arg(long, value_delimiter = ',')]
    modality: Vec<Modality>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// CSV directory (overrides data.dir).
    #[arg(short, long)]
    dir: Option<PathBuf>,
    /// Modalities to load (overrides data.modalities).
    #[arg(long, value_delimiter = ',')]
    modality: Vec<Modality>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Architecture (default: the first configured one).
    #[arg(long)]
    arch: Option<ArchKind>,
    /// Modality (default: the first configured one).
    #[arg(long)]
    modality: Option<Modality>,
    /// Fold of the plan to train.
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Output directory (default: <output.dir>/train/<ARCH>_<modality>_fold<k>).
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Debug, Args)]
struct TrainOverrides {
    /// Training seed (overrides train.seed; fold k uses seed + k).
    #[arg(long)]
    seed: Option<u64>,
    /// Epoch cap (overrides train.max_epochs).
    #[arg(long)]
    max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct CrossvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Architectures (overrides the configured list).
    #[arg(long, value_delimiter = ',')]
    arch: Vec<ArchKind>,
    /// Modalities (overrides data.modalities).
    #[arg(long, value_delimiter = ',')]
    modality: Vec<Modality>,
    /// Output directory (overrides output.dir).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Fold worker threads (overrides workers; 0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Save each fold's trained weights (overrides output.save_models).
    #[arg(long)]
    save_models: bool,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Random inputs per op and architecture.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Add a deliberately wrong derivative rule to the suite.
    #[arg(long)]
    inject_fault: bool,
    /// Also write the results as JSON.
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directory holding <ARCH>_<modality>/report.json files.
    #[arg(short, long, default_value = "reports")]
    dir: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let outcome = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Train(a) => cmd_train(a),
        Command::Crossval(a) => cmd_crossval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Report(a) => cmd_report(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn modalities(cfg: &RunConfig, flag: Vec<Modality>) -> Vec<Modality> {
    if flag.is_empty() {
        cfg.data.modalities.clone()
    } else {
        flag
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn summary(ds: &Dataset) -> String {
    let roster = ds.roster();
    let span = match (roster.first(), roster.last()) {
        (Some(a), Some(b)) => format!("{a}..{b}"),
        _ => "-".into(),
    };
    let rate = ds.sequences().first().map_or(0.0, |s| s.sample_rate_hz);
    let samples: usize = ds.sequences().iter().map(|s| s.len()).sum();
    format!(
        "{}: {} subjects ({span}), {} activities, {} channels, {} recordings, {samples} samples at {rate} Hz",
        ds.modality(),
        roster.len(),
        ds.n_classes(),
        ds.channels(),
        ds.sequences().len(),
    )
}

fn cmd_synth(a: SynthArgs) -> Result<i32> {
    let mut cfg = a.config.load()?;
    let mut synth = cfg.synth.take().unwrap_or_default();
    if let Some(s) = a.seed {
        synth.seed = s;
    }
    cfg.synth = Some(synth);
    let mods = modalities(&cfg, a.modality);

    if a.out.exists() {
        let entries: Vec<PathBuf> = std::fs::read_dir(&a.out)
            .map_err(|e| Error::io(&a.out, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        if !entries.is_empty() {
            if !a.force {
                eprintln!(
                    "refusing to write into non-empty {} (use --force to overwrite)",
                    a.out.display()
                );
                return Ok(exit::REFUSED);
            }
            // Only recordings are removed; anything else in the directory stays.
            for p in entries {
                let is_recording = p
                    .file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| parse_file_name(n).is_ok());
                if is_recording && p.is_file() {
                    std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
                }
            }
        }
    }
    create_dir(&a.out)?;
    for m in mods {
        let ds = cfg.synth_dataset(m)?;
        let files = write_csv_dir(&ds, &a.out)?;
        println!("{} -> {} files in {}", summary(&ds), files.len(), a.out.display());
    }
    Ok(exit::SUCCESS)
}

fn cmd_ingest(a: IngestArgs) -> Result<i32> {
    let mut cfg = a.config.load()?;
    if let Some(d) = a.dir {
        cfg.data.dir = Some(d);
    }
    if cfg.data.dir.is_none() {
        return Err(Error::Config("ingest needs a CSV directory (--dir or data.dir)".into()));
    }
    for m in modalities(&cfg, a.modality) {
        let ds = cfg.load_dataset(m)?;
        let windows = dataset_windows(&ds, &cfg.features)?;
        println!("{}; {} windows", summary(&ds), windows.len());
    }
    Ok(exit::SUCCESS)
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(n) = self.max_epochs {
            cfg.train.max_epochs = n;
        }
        cfg.validate()
    }
}

fn pair_name(arch: ArchKind, modality: Modality) -> String {
    format!("{}_{}", arch.as_str(), modality.as_str())
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let mut cfg = a.config.load()?;
    a.overrides.apply(&mut cfg)?;
    let arch = a.arch.unwrap_or(cfg.architectures[0]);
    let modality = a.modality.unwrap_or(cfg.data.modalities[0]);
    let out = a.out.unwrap_or_else(|| {
        cfg.output
            .dir
            .join("train")
            .join(format!("{}_fold{}", pair_name(arch, modality), a.fold))
    });
    let ds = cfg.load_dataset(modality)?;
    let plan = cfg.fold_plan(&ds)?;
    let (report, model) = train_fold(&ds, &cfg.features, &cfg.model_spec(arch), &cfg.train, &plan, a.fold)?;
    create_dir(&out)?;
    write(&out.join("fold.json"), &json(&report))?;
    match (&report.outcome, model) {
        (FoldOutcome::Completed { metrics, history }, Some(model)) => {
            write(&out.join("history.json"), &json(history))?;
            write(&out.join("metrics.json"), &json(metrics))?;
            render_confusion(
                &metrics.confusion,
                ds.activities(),
                &out.join("confusion.svg"),
                &format!("{} / {} fold {}", arch, modality, a.fold),
            )?;
            model.to_checkpoint().save(&out.join("model.ckpt"))?;
            println!(
                "{} {} fold {}: accuracy {:.4}, macro-F1 {:.4}, best epoch {} of {} -> {}",
                arch,
                modality,
                a.fold,
                metrics.accuracy,
                metrics.macro_f1,
                history.best_epoch,
                history.epochs.len(),
                out.display()
            );
            Ok(exit::SUCCESS)
        }
        (FoldOutcome::Failed { error }, _) => {
            eprintln!("error: fold {} failed: {error}", a.fold);
            Ok(exit::FAILURE)
        }
        (FoldOutcome::Completed { .. }, None) => unreachable!("completed fold without a model"),
    }
}

fn cmd_crossval(a: CrossvalArgs) -> Result<i32> {
    let mut cfg = a.config.load()?;
    if !a.arch.is_empty() {
        cfg.architectures = a.arch;
    }
    if !a.modality.is_empty() {
        cfg.data.modalities = a.modality;
    }
    if let Some(o) = a.out {
        cfg.output.dir = o;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if a.save_models {
        cfg.output.save_models = true;
    }
    a.overrides.apply(&mut cfg)?;

    let (reports, all_failed) = crossval_sweep(&cfg)?;
    let table = comparison_csv(&reports);
    print!("{table}");
    if all_failed.is_empty() {
        Ok(exit::SUCCESS)
    } else {
        eprintln!("error: every fold failed for {}", all_failed.join(", "));
        Ok(exit::FAILURE)
    }
}

/// Runs every configured (architecture, modality) pair, writes the report
/// tree and `comparison.csv` under `cfg.output.dir`, and returns the reports
/// plus the names of pairs whose folds all failed.
pub fn crossval_sweep(cfg: &RunConfig) -> Result<(Vec<CvReport>, Vec<String>)> {
    let root = &cfg.output.dir;
    create_dir(root)?;
    let workers = cfg.worker_count();
    let mut reports = Vec::new();
    let mut all_failed = Vec::new();
    for &modality in &cfg.data.modalities {
        let ds = cfg.load_dataset(modality)?;
        let plan = cfg.fold_plan(&ds)?;
        for &arch in &cfg.architectures {
            let name = pair_name(arch, modality);
            let dir = root.join(&name);
            create_dir(&dir)?;
            let out = run_crossval(&ds, &cfg.features, &cfg.model_spec(arch), &cfg.train, &plan, workers)?;
            let report = out.report;
            write(&dir.join("report.json"), &(report.to_json() + "\n"))?;
            plan.save(&dir.join("fold_plan.json"))?;
            for (fold, model) in report.folds.iter().zip(&out.models) {
                let fdir = dir.join(format!("fold{}", fold.index));
                create_dir(&fdir)?;
                if let FoldOutcome::Completed { metrics, history } = &fold.outcome {
                    write(&fdir.join("history.json"), &json(history))?;
                    write(&fdir.join("metrics.json"), &json(metrics))?;
                    render_confusion(
                        &metrics.confusion,
                        ds.activities(),
                        &fdir.join("confusion.svg"),
                        &format!("{arch} / {modality} fold {}", fold.index),
                    )?;
                }
                if let (true, Some(m)) = (cfg.output.save_models, model) {
                    m.to_checkpoint().save(&fdir.join("model.ckpt"))?;
                }
            }
            match &report.aggregate {
                Some(agg) => {
                    render_confusion(
                        &agg.pooled.confusion,
                        ds.activities(),
                        &dir.join("confusion.svg"),
                        &format!("{arch} / {modality}, pooled over {} folds", agg.folds),
                    )?;
                    eprintln!(
                        "{name}: macro-F1 {:.4} ± {:.4}, accuracy {:.4} ({} of {} folds)",
                        agg.macro_f1.mean,
                        agg.macro_f1.std,
                        agg.accuracy.mean,
                        agg.folds,
                        report.folds.len()
                    );
                }
                None => {
                    eprintln!("{name}: all {} folds failed", report.folds.len());
                    all_failed.push(name);
                }
            }
            reports.push(report);
        }
    }
    write(&root.join("comparison.csv"), &comparison_csv(&reports))?;
    Ok((reports, all_failed))
}

/// Rows are architectures, columns modalities, cells `mean ± std` of the
/// fold macro-F1. Pairs whose folds all failed read `failed`; pairs not run
/// are left empty. Row and column order is canonical, not input order.
pub fn comparison_csv(reports: &[CvReport]) -> String {
    let mods: Vec<Modality> = Modality::ALL
        .into_iter()
        .filter(|m| reports.iter().any(|r| r.modality == *m))
        .collect();
    let archs: Vec<ArchKind> = ArchKind::ALL
        .into_iter()
        .filter(|a| reports.iter().any(|r| r.arch == a.as_str()))
        .collect();
    let mut s = String::from("architecture");
    for m in &mods {
        s.push(',');
        s.push_str(m.as_str());
    }
    s.push('\n');
    for a in archs {
        s.push_str(a.as_str());
        for m in &mods {
            s.push(',');
            let cell = reports.iter().find(|r| r.arch == a.as_str() && r.modality == *m);
            match cell.map(|r| &r.aggregate) {
                Some(Some(agg)) => {
                    let _ = write!(s, "{:.4} ± {:.4}", agg.macro_f1.mean, agg.macro_f1.std);
                }
                Some(None) => s.push_str("failed"),
                None => {}
            }
        }
        s.push('\n');
    }
    s
}

fn suite_table(entries: &[SuiteEntry]) -> String {
    let width = entries.iter().map(|e| e.name.len()).max().unwrap_or(4).max(4);
    let mut s = format!("{:width$}  {:>12}  {:>4}  status\n", "case", "max rel err", "seed");
    for e in entries {
        let _ = writeln!(
            s,
            "{:width$}  {:>12.3e}  {:>4}  {}",
            e.name,
            e.max_rel_error,
            e.worst_seed,
            if e.passed { "PASS" } else { "FAIL" }
        );
    }
    s
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<i32> {
    if a.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let entries = run_suite(a.seeds, a.inject_fault)?;
    print!("{}", suite_table(&entries));
    if let Some(p) = &a.json {
        write(p, &json(&entries))?;
    }
    let failed: Vec<&SuiteEntry> = entries.iter().filter(|e| !e.passed).collect();
    if failed.is_empty() {
        println!("all {} cases below {TOLERANCE:e} over {} seeds", entries.len(), a.seeds);
        return Ok(exit::SUCCESS);
    }
    for e in &failed {
        println!(
            "FAIL {}: input {} coordinate {} analytic {:.6e} numeric {:.6e}",
            e.name, e.worst_input, e.worst_coordinate, e.analytic, e.numeric
        );
    }
    Ok(exit::CHECK_FAILED)
}

fn cmd_report(a: ReportArgs) -> Result<i32> {
    let mut reports = Vec::new();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&a.dir)
        .map_err(|e| Error::io(&a.dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("report.json").is_file())
        .collect();
    dirs.sort();
    for d in dirs {
        let path = d.join("report.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let r: CvReport = serde_json::from_str(&text).map_err(|e| Error::load(&path, e.to_string()))?;
        reports.push(r);
    }
    if reports.is_empty() {
        return Err(Error::InsufficientData(format!("no */report.json under {}", a.dir.display())));
    }
    let table = comparison_csv(&reports);
    write(&a.dir.join("comparison.csv"), &table)?;
    print!("{table}");
    Ok(exit::SUCCESS)
}
