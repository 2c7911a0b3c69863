//! Command-line front end for the noisy-label selection pipeline.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 numeric failure
//! during training, 4 I/O or file-format error.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use conftrack_core::datasets::{
    gen_blobs, load_csv, read_predlog, save_csv, write_predlog, Dataset, Split,
};
use conftrack_core::evalx;
use conftrack_core::mk;
use conftrack_core::{Error, Result};

use conftrack_cli::artifacts::{self, Report};
use conftrack_cli::config::{self, Config, SelectorConfig, TrainerConfig};
use conftrack_cli::pipeline::{self, run_training, RunOutcome, SelectorParams};

#[derive(Parser)]
#[command(
    name = "conftrack",
    version,
    about = "Noisy-label sample selection: confidence-gap trend tracking, classical selectors, and a reference training pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a blob dataset, optionally corrupt it, write a CSV
    Generate(GenerateCmd),
    /// Inject label noise into an existing dataset CSV
    Corrupt(CorruptCmd),
    /// Train on a dataset CSV with per-epoch sample selection
    Train(TrainCmd),
    /// Select samples offline from prediction logs
    Select(SelectCmd),
    /// Score a selection mask against a dataset's clean labels
    Evaluate(EvaluateCmd),
    /// Mann-Kendall trend test over a numeric series
    MkTest(MkTestCmd),
    /// Full pipeline: generate, corrupt, train, select, evaluate
    Run(RunCmd),
}

#[derive(Args, Clone, Default)]
struct SelectorOverrides {
    /// Selection method (none, ct, gmm, aum, dist, fine, gmm+ct, aum+ct, dist+ct, fine+ct)
    #[arg(long)]
    method: Option<String>,
    /// Trend-test significance level
    #[arg(long)]
    alpha: Option<f64>,
    /// Small-loss posterior threshold
    #[arg(long)]
    tau: Option<f64>,
    /// Eigen-alignment posterior threshold
    #[arg(long)]
    fine_tau: Option<f64>,
    /// Dynamic-threshold momentum
    #[arg(long)]
    lambda: Option<f64>,
    /// Estimated noise rate (required by the margin-ranking methods)
    #[arg(long)]
    noise_rate: Option<f64>,
    /// Extra keep-fraction slack for margin ranking
    #[arg(long)]
    k_slack: Option<f64>,
}

impl SelectorOverrides {
    fn apply(&self, cfg: &mut SelectorConfig) {
        if let Some(m) = &self.method {
            cfg.method = m.clone();
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if let Some(v) = self.fine_tau {
            cfg.fine_tau = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.noise_rate {
            cfg.noise_rate = Some(v);
        }
        if let Some(v) = self.k_slack {
            cfg.k_slack = v;
        }
    }
}

#[derive(Args, Clone, Default)]
struct TrainerOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    /// Warm-up epochs before selection starts
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training seed (initialization and shuffling)
    #[arg(long)]
    seed: Option<u64>,
    /// Divide the masked loss by the selected count instead of the batch size
    #[arg(long)]
    renormalize_mask: bool,
}

impl TrainerOverrides {
    fn apply(&self, cfg: &mut TrainerConfig) {
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.warmup {
            cfg.warmup_epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if self.renormalize_mask {
            cfg.renormalize_mask = true;
        }
    }
}

#[derive(Args)]
struct GenerateCmd {
    /// Experiment config (TOML)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path (default: <out_dir>/dataset.csv)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CorruptCmd {
    /// Input dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Output dataset CSV (with the clean-mask column)
    #[arg(long)]
    out: PathBuf,
    /// Noise kind: symmetric, asymmetric or instance
    #[arg(long)]
    kind: String,
    #[arg(long)]
    rate: f64,
    /// Asymmetric mapping, e.g. "0:1,1:0"
    #[arg(long)]
    mapping: Option<String>,
    /// Circular-group size for asymmetric noise
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long, default_value_t = 11)]
    noise_seed: u64,
}

#[derive(Args)]
struct TrainCmd {
    /// Experiment config (TOML)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset CSV (its train split is used)
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Write the final per-sample trend statistics as CSV
    #[arg(long)]
    dump_z: bool,
    #[command(flatten)]
    selector: SelectorOverrides,
    #[command(flatten)]
    trainer: TrainerOverrides,
}

#[derive(Args)]
struct SelectCmd {
    /// Probability log (magic CTPL)
    #[arg(long)]
    log: PathBuf,
    /// Logit log (magic CTLG), required by the margin-ranking methods
    #[arg(long)]
    logits: Option<PathBuf>,
    /// Dataset CSV; supplies features for eigen-alignment selection
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output mask CSV
    #[arg(long, default_value = "mask.csv")]
    out: PathBuf,
    /// Write the per-sample trend statistics as CSV
    #[arg(long)]
    dump_z: Option<PathBuf>,
    /// Require at least this many recorded epochs in the log
    #[arg(long)]
    warmup: Option<usize>,
    #[command(flatten)]
    selector: SelectorOverrides,
}

#[derive(Args)]
struct EvaluateCmd {
    /// Dataset CSV with clean labels
    #[arg(long)]
    data: PathBuf,
    /// Selection mask CSV over the train split
    #[arg(long)]
    mask: PathBuf,
    /// Probability log for per-epoch trajectories
    #[arg(long)]
    log: Option<PathBuf>,
    /// Logit log accompanying --log
    #[arg(long)]
    logits: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write the per-epoch metric trajectory CSV
    #[arg(long)]
    per_epoch: Option<PathBuf>,
    /// Write the key=value report here instead of stdout
    #[arg(long)]
    report: Option<PathBuf>,
    /// Warm-up boundary used for the per-epoch trajectory
    #[arg(long)]
    warmup: Option<usize>,
    #[command(flatten)]
    selector: SelectorOverrides,
}

#[derive(Args)]
struct MkTestCmd {
    /// Newline-separated numeric series; "-" reads standard input
    #[arg(long, default_value = "-")]
    input: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args)]
struct RunCmd {
    /// Experiment config (TOML)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Fan out over training seeds, e.g. "1,2,3" (parallel, one
    /// subdirectory per seed; the noise seed shifts by the same amount)
    #[arg(long)]
    seeds: Option<String>,
    /// Write the final per-sample trend statistics as CSV
    #[arg(long)]
    dump_z: bool,
    #[command(flatten)]
    selector: SelectorOverrides,
    #[command(flatten)]
    trainer: TrainerOverrides,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Generate(c) => cmd_generate(c),
        Cmd::Corrupt(c) => cmd_corrupt(c),
        Cmd::Train(c) => cmd_train(c),
        Cmd::Select(c) => cmd_select(c),
        Cmd::Evaluate(c) => cmd_evaluate(c),
        Cmd::MkTest(c) => cmd_mk_test(c),
        Cmd::Run(c) => cmd_run(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Format { .. } | Error::Parse { .. } => 4,
        Error::NumericFailure(_) => 3,
        _ => 2,
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn build_dataset(cfg: &Config) -> Result<Dataset> {
    match cfg.dataset.source.as_str() {
        "blobs" => gen_blobs(&cfg.dataset.blobs()),
        "csv" => {
            let path = cfg.dataset.path.as_ref().ok_or_else(|| {
                Error::InvalidInput("dataset.source = \"csv\" needs dataset.path".into())
            })?;
            load_csv(path)
        }
        other => Err(Error::InvalidInput(format!(
            "unknown dataset source {other:?}; valid sources: blobs, csv"
        ))),
    }
}

fn cmd_generate(c: GenerateCmd) -> Result<()> {
    let cfg = load_config(c.config.as_deref())?;
    let mut ds = build_dataset(&cfg)?;
    pipeline::apply_noise(&mut ds, &cfg.noise)?;
    let out = match c.out {
        Some(p) => p,
        None => {
            std::fs::create_dir_all(&cfg.output.out_dir)?;
            cfg.output.out_dir.join("dataset.csv")
        }
    };
    save_csv(&out, &ds, ds.clean_labels.is_some())?;
    println!(
        "wrote {} samples ({} train) to {}",
        ds.n_samples(),
        ds.split_indices(Split::Train).len(),
        out.display()
    );
    Ok(())
}

fn cmd_corrupt(c: CorruptCmd) -> Result<()> {
    let mut ds = load_csv(&c.data)?;
    let noise = config::NoiseConfig {
        kind: c.kind,
        rate: c.rate,
        mapping: c.mapping,
        group_size: c.group_size,
        seed: c.noise_seed,
    };
    pipeline::apply_noise(&mut ds, &noise)?;
    save_csv(&c.out, &ds, ds.clean_labels.is_some())?;
    let clean = ds
        .clean_mask()
        .map_or(ds.n_samples(), |m| m.iter().filter(|&&b| b).count());
    println!(
        "corrupted {} of {} samples -> {}",
        ds.n_samples() - clean,
        ds.n_samples(),
        c.out.display()
    );
    Ok(())
}

/// Write every artifact of a finished run under `out_dir` and return the
/// rendered report.
fn write_run_artifacts(out_dir: &Path, cfg: &Config, outcome: &RunOutcome) -> Result<Report> {
    std::fs::create_dir_all(out_dir)?;
    write_predlog(&out_dir.join("predictions.ctpl"), &outcome.prob_log)?;
    write_predlog(&out_dir.join("logits.ctlg"), &outcome.logit_log)?;
    artifacts::write_mask_csv(
        &out_dir.join("mask.csv"),
        &outcome.final_mask,
        outcome.z_min.as_deref(),
        outcome.avg_margins.as_deref(),
        outcome.gmm_posterior.as_deref(),
    )?;
    if cfg.output.per_epoch_csv {
        artifacts::write_per_epoch_csv(&out_dir.join("per_epoch.csv"), &outcome.per_epoch)?;
    }
    if cfg.output.dump_z {
        if let Some(z) = &outcome.z_min {
            artifacts::write_z_csv(&out_dir.join("z_min.csv"), z)?;
        }
    }

    let mut report = Report::new();
    report.push("method", &cfg.selector.method);
    report.push("alpha", cfg.selector.alpha);
    report.push("epochs", cfg.trainer.epochs);
    report.push("warmup", cfg.trainer.warmup_epochs);
    report.push("seed", cfg.trainer.seed);
    report.push("n_train", outcome.n_train);
    report.push("selected", outcome.final_mask.count_selected());
    if let Some(m) = &outcome.final_report {
        report.push("precision", m.precision);
        report.push("recall", m.recall);
        report.push("f1", m.f1);
        report.push("clean_count", m.clean_count);
    }
    report.push_opt("train_accuracy", outcome.train_accuracy);
    report.push_opt("test_accuracy", outcome.test_accuracy);
    if let Some(last) = outcome.per_epoch.last() {
        report.push("final_masked_loss", last.masked_loss);
    }
    report.write(&out_dir.join("metrics.txt"))?;
    Ok(report)
}

fn cmd_train(c: TrainCmd) -> Result<()> {
    let mut cfg = load_config(c.config.as_deref())?;
    c.selector.apply(&mut cfg.selector);
    c.trainer.apply(&mut cfg.trainer);
    if let Some(dir) = c.out_dir {
        cfg.output.out_dir = dir;
    }
    if c.dump_z {
        cfg.output.dump_z = true;
    }
    let ds = load_csv(&c.data)?;
    let outcome = run_training(&ds, &cfg, Some(&cfg.output.out_dir))?;
    let report = write_run_artifacts(&cfg.output.out_dir, &cfg, &outcome)?;
    print!("{}", report.render());
    Ok(())
}

fn cmd_select(c: SelectCmd) -> Result<()> {
    let mut cfg = load_config(c.config.as_deref())?;
    c.selector.apply(&mut cfg.selector);
    let params = SelectorParams::from_config(&cfg.selector)?;

    let prob_log = read_predlog(&c.log)?;
    let logit_log = c.logits.as_deref().map(read_predlog).transpose()?;
    if let Some(warmup) = c.warmup {
        if prob_log.n_epochs() < warmup {
            return Err(Error::InsufficientHistory {
                needed: warmup,
                got: prob_log.n_epochs(),
            });
        }
    }

    // Features (and a label sanity check) come from the dataset's train split.
    let features = match c.data.as_deref() {
        Some(path) => {
            let ds = load_csv(path)?;
            let (x, labels, _) = ds.split_view(Split::Train);
            if labels.len() != prob_log.n_samples() {
                return Err(Error::InvalidInput(format!(
                    "log covers {} samples but the dataset's train split has {}",
                    prob_log.n_samples(),
                    labels.len()
                )));
            }
            let log_labels: Vec<usize> = prob_log.labels().iter().map(|&l| l as usize).collect();
            if labels != log_labels {
                return Err(Error::InvalidInput(
                    "dataset train labels disagree with the log's labels".into(),
                ));
            }
            Some((x, ds.n_features))
        }
        None => None,
    };

    let outcome = pipeline::replay_selection(
        &prob_log,
        logit_log.as_ref(),
        features.as_ref().map(|(x, d)| (x.as_slice(), *d)),
        params,
    )?;
    artifacts::write_mask_csv(
        &c.out,
        &outcome.mask,
        outcome.z_min.as_deref(),
        outcome.avg_margins.as_deref(),
        outcome.gmm_posterior.as_deref(),
    )?;
    if let Some(path) = c.dump_z {
        match &outcome.z_min {
            Some(z) => artifacts::write_z_csv(&path, z)?,
            None => {
                return Err(Error::InsufficientHistory {
                    needed: 2,
                    got: prob_log.n_epochs(),
                })
            }
        }
    }
    println!(
        "selected {} of {} samples -> {}",
        outcome.mask.count_selected(),
        outcome.mask.len(),
        c.out.display()
    );
    Ok(())
}

fn cmd_evaluate(c: EvaluateCmd) -> Result<()> {
    let mut cfg = load_config(c.config.as_deref())?;
    c.selector.apply(&mut cfg.selector);
    if let Some(w) = c.warmup {
        cfg.trainer.warmup_epochs = w;
    }

    let ds = load_csv(&c.data)?;
    let train_ids = ds.split_indices(Split::Train);
    let clean_full = ds.clean_mask().ok_or_else(|| {
        Error::InvalidInput("evaluation needs a dataset with clean labels".into())
    })?;
    let clean: Vec<bool> = train_ids.iter().map(|&i| clean_full[i]).collect();

    let mask = artifacts::read_mask_csv(&c.mask)?;
    let metrics = evalx::selection_metrics(&mask, &clean)?;

    let mut report = Report::new();
    report.push("n_train", clean.len());
    report.push("selected", metrics.selected_count);
    report.push("clean_count", metrics.clean_count);
    report.push("precision", metrics.precision);
    report.push("recall", metrics.recall);
    report.push("f1", metrics.f1);
    report.push("empty_selection", metrics.empty_selection);

    if let Some(per_epoch_path) = &c.per_epoch {
        let log_path = c
            .log
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("per-epoch trajectories need --log".into()))?;
        let prob_log = read_predlog(log_path)?;
        let logit_log = c.logits.as_deref().map(read_predlog).transpose()?;
        let params = SelectorParams::from_config(&cfg.selector)?;
        let warmup = cfg.trainer.warmup_epochs.max(1);
        let mut rows: Vec<pipeline::EpochReport> = Vec::new();
        let clean_ref = &clean;
        let rows_ref = &mut rows;
        pipeline::replay_epochs(
            &prob_log,
            logit_log.as_ref(),
            params,
            Some(&mut |epoch, engine| {
                let mask = if epoch + 1 >= warmup {
                    engine.select(None, 0)?
                } else {
                    conftrack_core::selectors::SelectionMask::all_true(engine.n_samples())
                };
                let m = evalx::selection_metrics(&mask, clean_ref)?;
                rows_ref.push(pipeline::EpochReport {
                    epoch,
                    selected: mask.count_selected(),
                    masked_loss: f64::NAN,
                    report: Some(m),
                });
                Ok(())
            }),
        )?;
        artifacts::write_per_epoch_csv(per_epoch_path, &rows)?;
        report.push("per_epoch_rows", rows.len());
    }

    match &c.report {
        Some(path) => report.write(path)?,
        None => print!("{}", report.render()),
    }
    Ok(())
}

fn cmd_mk_test(c: MkTestCmd) -> Result<()> {
    if !(c.alpha > 0.0 && c.alpha < 1.0) {
        return Err(Error::InvalidInput(format!(
            "significance level must lie in (0, 1), got {}",
            c.alpha
        )));
    }
    let text = if c.input == "-" {
        let mut buf = String::new();
        std::io::stdin().read_to_string(&mut buf)?;
        buf
    } else {
        std::fs::read_to_string(&c.input)?
    };
    let mut series = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| Error::Parse {
            line: idx + 1,
            message: format!("bad numeric value {line:?}"),
        })?;
        series.push(v);
    }
    let result = mk::mk_batch(&series)?;
    let threshold = mk::normal_quantile(1.0 - c.alpha)?;
    println!("n={}", series.len());
    println!("s={}", result.s_stat);
    println!("var={}", result.variance);
    println!("z={}", result.z);
    println!("threshold={threshold}");
    println!(
        "trend={}",
        if result.z > threshold {
            "increasing"
        } else {
            "not-significant"
        }
    );
    Ok(())
}

fn run_single(cfg: &Config) -> Result<Report> {
    let mut ds = build_dataset(cfg)?;
    pipeline::apply_noise(&mut ds, &cfg.noise)?;
    std::fs::create_dir_all(&cfg.output.out_dir)?;
    save_csv(
        &cfg.output.out_dir.join("dataset.csv"),
        &ds,
        ds.clean_labels.is_some(),
    )?;
    let outcome = run_training(&ds, cfg, Some(&cfg.output.out_dir))?;
    write_run_artifacts(&cfg.output.out_dir, cfg, &outcome)
}

fn cmd_run(c: RunCmd) -> Result<()> {
    let mut cfg = load_config(c.config.as_deref())?;
    c.selector.apply(&mut cfg.selector);
    c.trainer.apply(&mut cfg.trainer);
    if let Some(dir) = c.out_dir {
        cfg.output.out_dir = dir;
    }
    if c.dump_z {
        cfg.output.dump_z = true;
    }

    let seeds: Vec<u64> = match &c.seeds {
        None => {
            let report = run_single(&cfg)?;
            print!("{}", report.render());
            return Ok(());
        }
        Some(text) => text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::InvalidInput(format!("bad seed {s:?} in --seeds")))
            })
            .collect::<Result<_>>()?,
    };
    if seeds.is_empty() {
        return Err(Error::InvalidInput("--seeds is empty".into()));
    }

    // Independent experiments, one thread each: the training seed takes the
    // fan-out value and the noise seed shifts with it, so runs differ in
    // both corruption and initialization while the base data stays fixed.
    let base = cfg.clone();
    let handles: Vec<_> = seeds
        .iter()
        .map(|&seed| {
            let mut run_cfg = base.clone();
            run_cfg.trainer.seed = seed;
            run_cfg.noise.seed = base.noise.seed.wrapping_add(seed);
            run_cfg.output.out_dir = base.output.out_dir.join(format!("seed_{seed}"));
            std::thread::spawn(move || (seed, run_single(&run_cfg)))
        })
        .collect();

    let mut first_error = None;
    for handle in handles {
        let (seed, result) = handle
            .join()
            .map_err(|_| Error::NumericFailure("a seed worker panicked".into()))?;
        match result {
            Ok(report) => {
                println!("# seed {seed}");
                print!("{}", report.render());
            }
            Err(e) => {
                eprintln!("seed {seed} failed: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
