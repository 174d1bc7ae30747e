//! `owc`: dataset generation, training and the experiment suite.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use owc_core::container::write_atomic;
use owc_core::dataset::{build_dataset, load_dataset};
use owc_core::harness::{
    csv_document, run_gap_study, run_latency_bench, run_mobility_trace, run_solve, run_sumrate_sweeps, run_validation,
    ExperimentConfig, Method, MethodKind, SweepAxis,
};
use owc_core::neural::{build_fc_dnn, build_paper_cnn, load_model, save_model, train, NeuralModel};
use owc_core::topology::PartitionScheme;

#[derive(Debug, Parser)]
#[command(name = "owc", version, about = "Optical wireless cell formation, association and learned power allocation")]
struct Cli {
    /// TOML experiment configuration; defaults apply to absent keys.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed of the subcommand (dataset, training or experiment seed).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory; overrides OWC_OUT_DIR and the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Dataset file, overriding `paths.dataset`.
    #[arg(long, global = true, value_name = "PATH")]
    dataset: Option<PathBuf>,
    /// CNN model file, overriding `paths.model`.
    #[arg(long, global = true, value_name = "PATH")]
    model: Option<PathBuf>,
    /// FC-DNN model file, overriding `paths.fc_model`.
    #[arg(long, global = true, value_name = "PATH")]
    fc_model: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Arch {
    Cnn,
    FcDnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Cnn,
    Uniform,
    Oracle,
    Exact,
}

impl From<MethodArg> for MethodKind {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Cnn => MethodKind::Cnn,
            MethodArg::Uniform => MethodKind::Uniform,
            MethodArg::Oracle => MethodKind::Oracle,
            MethodArg::Exact => MethodKind::Exact,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemeArg {
    Map4,
    Traditional,
}

impl From<SchemeArg> for PartitionScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Map4 => PartitionScheme::MAP4,
            SchemeArg::Traditional => PartitionScheme::Traditional,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Labelled dataset generation.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Train the CNN or the FC-DNN on the dataset and save the model.
    Train {
        #[arg(long, value_enum, default_value_t = Arch::Cnn)]
        arch: Arch,
        /// Use only the first N samples (proportionally from each split).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Run an experiment and write its CSVs.
    Eval {
        #[command(subcommand)]
        experiment: Experiment,
    },
    /// Solve one seeded scenario with one allocator.
    Solve {
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        snr_db: Option<f64>,
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
    },
    /// Run the invariant suite.
    Validate {
        #[arg(long, default_value_t = 200)]
        instances: usize,
    },
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Debug, Subcommand)]
enum DatasetAction {
    /// Generate, label and write the dataset file.
    Build {
        #[arg(long)]
        samples: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
enum Experiment {
    /// CNN and heuristic gaps to the exact enumerator on held-out scenarios.
    Gap,
    /// Sum rate against user count and SNR.
    Sweeps,
    /// Per-user rates along a random-waypoint trace.
    Mobility {
        #[arg(long, value_enum, default_value_t = MethodArg::Cnn)]
        method: MethodArg,
    },
    /// Decision latency and parameter counts.
    Latency,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{failed} invariant check(s) failed, see {path}")]
    Validation { failed: usize, path: PathBuf },
}

const EXIT_USAGE: u8 = 2;
const EXIT_MISSING_FILE: u8 = 3;
const EXIT_SCHEMA: u8 = 4;
const EXIT_CONFIG: u8 = 5;

fn classify(e: &anyhow::Error) -> (&'static str, u8) {
    if let Some(core) = e.downcast_ref::<owc_core::Error>() {
        let code = match core {
            owc_core::Error::MissingFile(_) => EXIT_MISSING_FILE,
            owc_core::Error::Schema { .. } => EXIT_SCHEMA,
            owc_core::Error::Config(_) => EXIT_CONFIG,
            _ => 1,
        };
        return (core.kind(), code);
    }
    if e.downcast_ref::<CliError>().is_some() {
        return ("validation", 1);
    }
    ("other", 1)
}

fn error_line(kind: &str, msg: &str) -> String {
    format!("error: kind={kind} msg={}", msg.replace(['\n', '\r'], " "))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            eprintln!("{}", error_line("usage", &first));
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            eprintln!("{}", error_line(kind, &format!("{e:#}")));
            ExitCode::from(code)
        }
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    out_dir: PathBuf,
}

impl Ctx {
    /// Write every file or fail before touching the next one; each write is
    /// atomic.
    fn write(&self, files: &[(&str, String)]) -> Result<()> {
        for (name, text) in files {
            let path = self.out_dir.join(name);
            write_atomic(&path, text.as_bytes())?;
            println!("wrote {}", path.display());
        }
        Ok(())
    }
}

fn load(path: &Path) -> Result<NeuralModel> {
    Ok(load_model(path)?)
}

fn run(cli: Cli) -> Result<()> {
    let Format::Csv = cli.format;
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = cli.dataset {
        cfg.paths.dataset = p;
    }
    if let Some(p) = cli.model {
        cfg.paths.model = p;
    }
    if let Some(p) = cli.fc_model {
        cfg.paths.fc_model = p;
    }
    match &cli.command {
        Command::Dataset { .. } => {
            if let Some(s) = cli.seed {
                cfg.dataset.seed = s;
            }
        }
        Command::Train { .. } => {
            if let Some(s) = cli.seed {
                cfg.training.seed = s;
            }
        }
        _ => {
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
        }
    }
    cfg.validate()?;
    let out_dir = cli.out.clone().unwrap_or_else(|| cfg.out_dir());
    let lab = cfg.lab()?;
    let ctx = Ctx { cfg, out_dir };
    let cfg = &ctx.cfg;

    match cli.command {
        Command::Config => print!("{}", cfg.to_toml()),
        Command::Dataset { action: DatasetAction::Build { samples } } => {
            let mut dc = cfg.dataset.clone();
            if let Some(n) = samples {
                dc.samples = n;
            }
            let ds = build_dataset(&dc, &lab, &cfg.paths.dataset)?;
            let m = &ds.manifest;
            println!(
                "wrote {}: {} samples ({} train, {} validation), {} dropped of {} attempts",
                cfg.paths.dataset.display(),
                m.samples,
                m.train.len(),
                m.validation.len(),
                m.dropped.total(),
                m.attempts
            );
        }
        Command::Train { arch, samples } => {
            let mut ds = load_dataset(&cfg.paths.dataset)?;
            if let Some(n) = samples {
                ds = ds.subset(n);
            }
            let (train_set, val_set) = ds.split_sets();
            let layout = ds.layout();
            let tc = &cfg.training;
            let (mut model, path, name) = match arch {
                Arch::Cnn => (build_paper_cnn(layout.shape(), layout.u_max, tc.dropout_rate, tc.seed)?, &cfg.paths.model, "cnn"),
                Arch::FcDnn => (build_fc_dnn(layout.shape(), layout.u_max, tc.dropout_rate, tc.seed)?, &cfg.paths.fc_model, "fc_dnn"),
            };
            model.normalization = Some(ds.manifest.normalization.clone());
            let report = train(&mut model, &train_set, &val_set, tc)?;
            let rows: Vec<String> =
                report.curve.iter().map(|e| format!("{},{},{}", e.epoch, e.train_mse, e.val_mse)).collect();
            let curve = csv_document(&cfg.digest(), tc.seed, "epoch,train_mse,val_mse", &rows);
            save_model(&model, path)?;
            println!(
                "wrote {}: {} parameters, best epoch {} of {}, validation MSE {:e}",
                path.display(),
                model.param_count(),
                report.best_epoch,
                report.curve.len(),
                report.best_val_mse
            );
            ctx.write(&[(&format!("loss_curve_{name}.csv"), curve)])?;
        }
        Command::Eval { experiment } => match experiment {
            Experiment::Gap => {
                let model = load(&cfg.paths.model)?;
                let study = run_gap_study(cfg, &lab, &model)?;
                for s in &study.summaries {
                    println!(
                        "{}: n={} median {:.3}% p95 {:.3}% max {:.3}%",
                        s.method.label(),
                        s.count,
                        s.median_pct,
                        s.p95_pct,
                        s.max_pct
                    );
                }
                ctx.write(&[("gap_records.csv", study.records_csv()), ("gap_summary.csv", study.summary_csv())])?;
            }
            Experiment::Sweeps => {
                let model = load(&cfg.paths.model)?;
                let r = run_sumrate_sweeps(cfg, &lab, &model)?;
                println!(
                    "cnn >= uniform in {:.1}% of instances by utility ({:.1}% by sum rate); map4 >= traditional (oracle) in {:.1}% ({:.1}%)",
                    100.0 * r.cnn_vs_uniform.at_least_fraction(),
                    100.0 * r.cnn_vs_uniform_sum_rate.at_least_fraction(),
                    100.0 * r.map_vs_traditional.at_least_fraction(),
                    100.0 * r.map_vs_traditional_sum_rate.at_least_fraction()
                );
                ctx.write(&[
                    ("sumrate_vs_users.csv", r.points_csv(SweepAxis::Users)),
                    ("sumrate_vs_snr.csv", r.points_csv(SweepAxis::SnrDb)),
                    ("sweep_instances.csv", r.instances_csv()),
                    ("sweep_ordering.csv", r.ordering_csv()),
                ])?;
            }
            Experiment::Mobility { method } => {
                let model = match method {
                    MethodArg::Cnn => Some(load(&cfg.paths.model)?),
                    _ => None,
                };
                let m = method_of(method.into(), model.as_ref());
                let trace = run_mobility_trace(cfg, &lab, m)?;
                ctx.write(&[("mobility_trace.csv", trace.to_csv())])?;
            }
            Experiment::Latency => {
                let cnn = load(&cfg.paths.model)?;
                let fc = load(&cfg.paths.fc_model)?;
                let t = run_latency_bench(cfg, &lab, &cnn, &fc)?;
                for r in &t.rows {
                    println!("{:<18} median {:>10.4} ms  p95 {:>10.4} ms  {:>6.2}% of exact", r.method, r.median_ms, r.p95_ms, r.pct_of_exact);
                }
                ctx.write(&[("latency.csv", t.to_csv())])?;
            }
        },
        Command::Solve { method, users, snr_db, scheme } => {
            let mut cfg = cfg.clone();
            if let Some(m) = method {
                cfg.solve.method = m.into();
            }
            if let Some(u) = users {
                cfg.solve.users = u;
            }
            if let Some(s) = snr_db {
                cfg.solve.snr_db = s;
            }
            if let Some(s) = scheme {
                cfg.solve.scheme = s.into();
            }
            let model = match cfg.solve.method {
                MethodKind::Cnn => Some(load(&cfg.paths.model)?),
                _ => None,
            };
            let r = run_solve(&cfg, &lab, method_of(cfg.solve.method, model.as_ref()))?;
            println!("{}: sum rate {:.6e} bit/s, utility {:.6}", r.method.label(), r.rates.sum_rate_bps, r.rates.utility);
            ctx.write(&[("solve_users.csv", r.users_csv()), ("solve_summary.csv", r.summary_csv())])?;
        }
        Command::Validate { instances } => {
            let report = run_validation(cfg, &lab, instances)?;
            for c in &report.checks {
                println!("{:<36} {}  worst {:e} (limit {:e})", c.name, if c.passed { "PASS" } else { "FAIL" }, c.worst, c.limit);
            }
            ctx.write(&[("validation.csv", report.to_csv())])?;
            let failed = report.checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(CliError::Validation { failed, path: ctx.out_dir.join("validation.csv") }.into());
            }
        }
    }
    Ok(())
}

fn method_of(kind: MethodKind, model: Option<&NeuralModel>) -> Method<'_> {
    match (kind, model) {
        (MethodKind::Cnn, Some(m)) => Method::Cnn(m),
        (MethodKind::Uniform, _) => Method::Uniform,
        (MethodKind::Exact, _) => Method::Exact,
        _ => Method::Oracle,
    }
}
