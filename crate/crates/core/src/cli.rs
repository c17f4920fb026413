//! `fbl` command-line front end.
//!
//! Every artifact lands under an output root (`--out-dir`, or the
//! `FBL_OUT_DIR` environment variable) unless a command is given an
//! explicit `--out`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{synth_dataset, Dataset, SynthSpec};
use crate::experiment::{benchmark_config, benchmark_spec, child_seed, config_hash, final_overall, final_tail};
use crate::loss::{LossConfig, LossKind, ScheduleKind};
use crate::metrics::{csv_header, csv_row, norm_gap_area, summarize};
use crate::trainer::{train_with, Milestone, RunResult, TrainConfig};
use crate::verify::{run_all, VerifyOptions};

#[derive(Debug, Parser)]
#[command(name = "fbl", version, about = "Feature-balanced loss experiments on synthetic long-tailed data")]
pub struct Cli {
    /// Root directory for generated artifacts.
    #[arg(long, global = true, env = "FBL_OUT_DIR", default_value = "fbl-out")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a long-tailed Gaussian-cluster dataset.
    Synth(SynthArgs),
    /// Train one model and write metrics, summary and checkpoint.
    Train(TrainArgs),
    /// Train FBL under all five curriculum schedules.
    AblateSchedules(SweepArgs),
    /// Paired CE and FBL runs from identical seeds.
    Compare(SweepArgs),
    /// Run the numerical invariant suites.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// The library defaults (200 epochs, CIFAR-style annealing).
    Default,
    /// The 30-epoch desk benchmark.
    Benchmark,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    pub preset: Preset,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub imbalance_factor: Option<f64>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub cluster_spread: Option<f64>,
    #[arg(long)]
    pub class_center_scale: Option<f64>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset directory [default: <out-dir>/data/synth-c<C>-if<IF>-s<seed>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Flags mirroring [`TrainConfig`] fields; any flag given overrides the
/// base configuration.
#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    /// Dataset directory written by `fbl synth`.
    #[arg(long)]
    pub data: PathBuf,
    /// TrainConfig JSON used as the base configuration.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// `EPOCH:DIVISOR`; repeat for several. Replaces the base list.
    #[arg(long = "milestone", value_parser = parse_milestone)]
    pub milestones: Vec<Milestone>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub schedule: Option<ScheduleKind>,
    #[arg(long)]
    pub alpha_max: Option<f64>,
    #[arg(long)]
    pub norm_eps: Option<f64>,
    /// Comma-separated stimulus intensities replacing the count-derived ones.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Vec<f64>,
    #[arg(long)]
    pub baseline_tau: Option<f64>,
    #[arg(long)]
    pub baseline_margin_scale: Option<f64>,
    #[arg(long)]
    pub detach_norm: bool,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub embed: Option<usize>,
    #[arg(long)]
    pub adjust_at_eval: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Run directory [default: <out-dir>/runs/<loss>-<hash prefix>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Number of seeds; member `i` trains with `seed + i`.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    SignFlip,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report path [default: <out-dir>/verify/report.json].
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Print the JSON report to stdout instead of one line per suite.
    #[arg(long)]
    pub json: bool,
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<Fault>,
}

fn parse_milestone(s: &str) -> Result<Milestone, String> {
    let (e, d) = s.split_once(':').ok_or_else(|| format!("expected EPOCH:DIVISOR, got {s:?}"))?;
    Ok(Milestone {
        epoch: e.trim().parse().map_err(|err| format!("bad epoch {e:?}: {err}"))?,
        divisor: d.trim().parse().map_err(|err| format!("bad divisor {d:?}: {err}"))?,
    })
}

/// Provenance for one training run. `run_id` is the config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub config: PathBuf,
    pub dataset: PathBuf,
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub model: PathBuf,
    pub started_unix_secs: u64,
    pub finished_unix_secs: u64,
}

/// What a command produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    /// False when the command ran but reported failures (verify).
    pub success: bool,
    pub artifacts: Vec<PathBuf>,
}

impl Outcome {
    fn ok(artifacts: Vec<PathBuf>) -> Self {
        Self { success: true, artifacts }
    }
}

/// Entry point for the binary: exit 0 on success, 1 on reported failures,
/// 2 on errors.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(o) if o.success => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> anyhow::Result<Outcome>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run(Cli::try_parse_from(args)?)
}

pub fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let root = cli.out_dir.as_path();
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, root),
        Command::Train(a) => cmd_train(&a, root),
        Command::AblateSchedules(a) => cmd_ablate_schedules(&a, root),
        Command::Compare(a) => cmd_compare(&a, root),
        Command::Verify(a) => cmd_verify(&a, root),
    }
}

pub fn cmd_synth(a: &SynthArgs, root: &Path) -> anyhow::Result<Outcome> {
    let mut spec = match a.preset {
        Preset::Default => SynthSpec::default(),
        Preset::Benchmark => benchmark_spec(0),
    };
    macro_rules! set {
        ($($f:ident <- $v:expr),*) => { $(if let Some(v) = $v { spec.$f = v; })* };
    }
    set!(num_classes <- a.num_classes, n_max <- a.n_max, imbalance_factor <- a.imbalance_factor,
         feature_dim <- a.feature_dim, cluster_spread <- a.cluster_spread,
         class_center_scale <- a.class_center_scale, test_per_class <- a.test_per_class, seed <- a.seed);

    let dir = a.out.clone().unwrap_or_else(|| {
        root.join("data").join(format!("synth-c{}-if{}-s{}", spec.num_classes, spec.imbalance_factor, spec.seed))
    });
    let ds = synth_dataset(&spec)?;
    ds.save(&dir).with_context(|| format!("writing dataset to {}", dir.display()))?;
    let spec_path = dir.join("spec.json");
    fs::write(&spec_path, serde_json::to_string_pretty(&spec)?)?;

    println!("counts {:?} (total {})", ds.counts.as_slice(), ds.counts.total());
    let artifacts: Vec<PathBuf> =
        ["train.csv", "test.csv", "counts.json", "spec.json"].iter().map(|f| dir.join(f)).collect();
    for p in &artifacts {
        println!("{}", p.display());
    }
    Ok(Outcome::ok(artifacts))
}

/// Base config from `--config` or `--preset`, then flag overrides.
pub fn resolve_config(f: &TrainFlags) -> anyhow::Result<TrainConfig> {
    let mut cfg = match (&f.config, f.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, Some(Preset::Benchmark)) => benchmark_config(0, LossKind::Ce),
        (None, _) => TrainConfig::default(),
    };
    macro_rules! set {
        ($($($f:ident).+ <- $v:expr),*) => { $(if let Some(v) = $v { cfg.$($f).+ = v; })* };
    }
    set!(epochs <- f.epochs, batch_size <- f.batch_size, lr <- f.lr, momentum <- f.momentum,
         weight_decay <- f.weight_decay, seed <- f.seed, loss.kind <- f.loss, loss.schedule <- f.schedule,
         loss.alpha_max <- f.alpha_max, loss.norm_eps <- f.norm_eps, loss.baseline_tau <- f.baseline_tau,
         loss.baseline_margin_scale <- f.baseline_margin_scale, model.hidden <- f.hidden, model.embed <- f.embed);
    if !f.milestones.is_empty() {
        cfg.lr_milestones = f.milestones.clone();
    }
    if !f.lambdas.is_empty() {
        cfg.loss.lambdas = f.lambdas.clone();
    }
    cfg.loss.detach_norm |= f.detach_norm;
    cfg.adjust_at_eval |= f.adjust_at_eval;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_dataset(dir: &Path) -> anyhow::Result<Dataset> {
    if !dir.is_dir() {
        bail!("dataset directory {} does not exist (create one with `fbl synth`)", dir.display());
    }
    Dataset::load(dir).with_context(|| format!("loading dataset from {}", dir.display()))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn short(hash: &str) -> &str {
    &hash[..12]
}

/// Trains `cfg` into `dir`: `config.json`, `metrics.csv` (one row appended
/// per epoch), `summary.json`, `model.json` and `manifest.json`.
pub fn execute_run(
    dataset: &Dataset,
    dataset_dir: &Path,
    cfg: &TrainConfig,
    dir: &Path,
) -> anyhow::Result<(RunManifest, RunResult)> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let hash = config_hash(cfg)?;
    let started = unix_now();

    let config_path = dir.join("config.json");
    fs::write(&config_path, serde_json::to_string_pretty(cfg)?)?;

    let metrics_path = dir.join("metrics.csv");
    let mut csv = BufWriter::new(File::create(&metrics_path)?);
    writeln!(csv, "{}", csv_header(dataset.num_classes()))?;
    let run = train_with(dataset, cfg.init_model(dataset), cfg, |m| {
        writeln!(csv, "{}", csv_row(m))?;
        csv.flush()?;
        Ok(())
    })
    .with_context(|| format!("training run in {}", dir.display()))?;
    drop(csv);

    let summary_path = dir.join("summary.json");
    let summary = summarize(&run, dataset.counts.as_slice(), &hash);
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;

    let model_path = dir.join("model.json");
    run.model.save(&model_path)?;

    let manifest = RunManifest {
        run_id: hash.clone(),
        config_hash: hash,
        config: config_path,
        dataset: dataset_dir.to_path_buf(),
        metrics: metrics_path,
        summary: summary_path,
        model: model_path,
        started_unix_secs: started,
        finished_unix_secs: unix_now(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok((manifest, run))
}

fn run_artifacts(dir: &Path, m: &RunManifest) -> Vec<PathBuf> {
    vec![m.config.clone(), m.metrics.clone(), m.summary.clone(), m.model.clone(), dir.join("manifest.json")]
}

pub fn cmd_train(a: &TrainArgs, root: &Path) -> anyhow::Result<Outcome> {
    let cfg = resolve_config(&a.flags)?;
    let ds = load_dataset(&a.flags.data)?;
    let hash = config_hash(&cfg)?;
    let dir = a.out.clone().unwrap_or_else(|| root.join("runs").join(format!("{}-{}", cfg.loss.kind, short(&hash))));
    let (manifest, run) = execute_run(&ds, &a.flags.data, &cfg, &dir)?;

    let last = run.metrics.last().expect("at least one epoch");
    println!(
        "{} epochs={} overall_acc={:.4} tail_acc={:.4} loss={:.4}",
        cfg.loss.kind,
        cfg.epochs,
        last.overall_acc,
        final_tail(&run),
        last.mean_loss
    );
    let artifacts = run_artifacts(&dir, &manifest);
    for p in &artifacts {
        println!("{}", p.display());
    }
    Ok(Outcome::ok(artifacts))
}

#[derive(Serialize)]
struct SweepKey<'a> {
    command: &'a str,
    base: &'a TrainConfig,
    seeds: usize,
}

fn sweep_dir(a: &SweepArgs, root: &Path, command: &str, base: &TrainConfig) -> anyhow::Result<PathBuf> {
    if let Some(out) = &a.out {
        return Ok(out.clone());
    }
    let hash = config_hash(&SweepKey { command, base, seeds: a.seeds })?;
    Ok(root.join(command).join(short(&hash)))
}

pub fn cmd_ablate_schedules(a: &SweepArgs, root: &Path) -> anyhow::Result<Outcome> {
    let base = resolve_config(&a.flags)?;
    let ds = load_dataset(&a.flags.data)?;
    let dir = sweep_dir(a, root, "ablate-schedules", &base)?;

    let jobs: Vec<(u64, ScheduleKind)> = (0..a.seeds)
        .flat_map(|i| ScheduleKind::ALL.map(|s| (child_seed(base.seed, i), s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(seed, schedule)| {
            let cfg = TrainConfig {
                seed,
                loss: LossConfig { kind: LossKind::Fbl, schedule, ..base.loss.clone() },
                ..base.clone()
            };
            let run_dir = dir.join(format!("seed-{seed}")).join(schedule.name());
            let (m, r) = execute_run(&ds, &a.flags.data, &cfg, &run_dir)?;
            Ok((seed, schedule, run_dir, m, r))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let mut rows: Vec<_> = results.iter().collect();
    rows.sort_by(|x, y| (x.0, x.1.name()).cmp(&(y.0, y.1.name())));
    let mut table = String::from("seed,schedule,overall_acc,tail_acc\n");
    for (seed, s, _, _, r) in &rows {
        table.push_str(&format!("{seed},{},{},{}\n", s.name(), final_overall(r), final_tail(r)));
    }
    let table_path = dir.join("ablation.csv");
    fs::write(&table_path, &table)?;
    print!("{table}");

    let mut artifacts = vec![table_path];
    for (_, _, run_dir, m, _) in &results {
        artifacts.extend(run_artifacts(run_dir, m));
    }
    println!("{}", artifacts[0].display());
    Ok(Outcome::ok(artifacts))
}

pub fn cmd_compare(a: &SweepArgs, root: &Path) -> anyhow::Result<Outcome> {
    let base = resolve_config(&a.flags)?;
    let ds = load_dataset(&a.flags.data)?;
    let dir = sweep_dir(a, root, "compare", &base)?;
    let head = 0;
    let tail = ds.num_classes() - 1;

    let jobs: Vec<(u64, LossKind)> = (0..a.seeds)
        .flat_map(|i| [LossKind::Ce, LossKind::Fbl].map(|k| (child_seed(base.seed, i), k)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(seed, kind)| {
            let cfg = TrainConfig { seed, loss: LossConfig { kind, ..base.loss.clone() }, ..base.clone() };
            let run_dir = dir.join(format!("seed-{seed}")).join(kind.name());
            let (m, r) = execute_run(&ds, &a.flags.data, &cfg, &run_dir)?;
            Ok((run_dir, m, r))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let mut table = String::from(
        "seed,ce_overall_acc,fbl_overall_acc,ce_tail_acc,fbl_tail_acc,ce_tail_fnorm,fbl_tail_fnorm,tail_gap_area,head_gap_area\n",
    );
    for (i, pair) in results.chunks(2).enumerate() {
        let (ce, fbl) = (&pair[0].2, &pair[1].2);
        let fnorm = |r: &RunResult| r.metrics.last().map_or(0.0, |m| m.per_class_feat_norm_mean[tail]);
        table.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            child_seed(base.seed, i),
            final_overall(ce),
            final_overall(fbl),
            final_tail(ce),
            final_tail(fbl),
            fnorm(ce),
            fnorm(fbl),
            norm_gap_area(fbl, ce, tail)?,
            norm_gap_area(fbl, ce, head)?,
        ));
    }
    let table_path = dir.join("comparison.csv");
    fs::write(&table_path, &table)?;
    print!("{table}");

    let mut artifacts = vec![table_path];
    for (run_dir, m, _) in &results {
        artifacts.extend(run_artifacts(run_dir, m));
    }
    println!("{}", artifacts[0].display());
    Ok(Outcome::ok(artifacts))
}

pub fn cmd_verify(a: &VerifyArgs, root: &Path) -> anyhow::Result<Outcome> {
    let opts = VerifyOptions { seed: a.seed, inject_sign_flip: a.inject_fault == Some(Fault::SignFlip) };
    let report = run_all(&opts)?;
    let path = a.report.clone().unwrap_or_else(|| root.join("verify").join("report.json"));
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(&path, &json)?;

    if a.json {
        println!("{json}");
    } else {
        for s in &report.suites {
            println!(
                "{} {:<22} cases={:<5} max_error={:.3e} tol={:.0e}  {}",
                if s.passed { "PASS" } else { "FAIL" },
                s.name,
                s.cases,
                s.max_error,
                s.tolerance,
                s.detail
            );
        }
        println!("{}", path.display());
    }
    Ok(Outcome { success: report.passed, artifacts: vec![path] })
}
