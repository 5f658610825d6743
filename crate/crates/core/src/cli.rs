//! Command-line front end: `synth`, `infer`, `cluster` and `bench`.
//!
//! Every option can come from a flag or from a TOML file passed with
//! `--config`; flags win. The resolved configuration is echoed as `#`
//! comments at the top of every file written, except for `--out` and
//! `--workers`, which do not affect results.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{adjusted_rand_index, cluster_mechanisms, KMeansOptions};
use crate::error::{invalid, Error, Result};
use crate::gppom::{FitOptions, Optimizer};
use crate::inference::{infer_direction, CausalVerdict, Direction, FitSummary};
use crate::io::{self, Outcome, RecordLog, TrialRecord};
use crate::synth::{generate, Family, MixtureSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NO_DECISION: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

const DEFAULT_LAMBDA: f64 = 1.0;
const DEFAULT_TRIALS: usize = 20;

#[derive(Debug, Parser)]
#[command(name = "anmmm", version, about = "Additive-noise mixture models: causal direction and mechanism clustering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled mixture dataset.
    Synth(SynthArgs),
    /// Decide the causal direction between two columns.
    Infer(InferArgs),
    /// Cluster observations by generating mechanism.
    Cluster(ClusterArgs),
    /// Run repeated synthetic trials over a parameter grid.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, conflicts_with = "lambda_sweep")]
    pub lambda: Option<f64>,
    /// Comma-separated list of penalty weights.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub lambda_sweep: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long)]
    pub workers: Option<usize>,
    /// TOML file with default values for any option.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Mechanism family: f1, f2, f3 or f4.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of mechanisms.
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Noise standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Weight of the first of two mechanisms; equal weights when omitted.
    #[arg(long)]
    pub prop: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Whitespace- or comma-separated numeric file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// 0-based column of the first variable.
    #[arg(long)]
    pub cause_col: Option<usize>,
    /// 0-based column of the second variable.
    #[arg(long)]
    pub effect_col: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Ground-truth labels, one integer per line.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Infer,
    Cluster,
}

#[derive(Debug, Clone, Default, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub task: Option<Task>,
    /// Comma-separated families.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub family: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub clusters: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub sigma: Option<Vec<f64>>,
    /// First-mechanism weights for two-mechanism cells.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub prop: Option<Vec<f64>>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Add wall-clock milliseconds to the record log (breaks byte-identical reruns).
    #[arg(long)]
    pub record_time: bool,
}

/// Optimizer settings shared by all subcommands (`[fit]` in the config file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub optimizer: String,
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub hyper_every: usize,
    pub latent_dim: usize,
    pub init_scale: f64,
    pub max_step: f64,
    pub beta_init: f64,
    pub gamma_init: f64,
    pub gamma_theta: f64,
    pub tie_hsic_widths: bool,
    pub kmeans_restarts: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        let o = FitOptions::default();
        Self {
            optimizer: optimizer_name(o.optimizer).into(),
            restarts: o.restarts,
            max_iters: o.max_iters,
            tol: o.tol,
            hyper_every: o.hyper_every,
            latent_dim: o.latent_dim,
            init_scale: o.init_scale,
            max_step: o.max_step,
            beta_init: o.beta_init,
            gamma_init: o.gamma_init,
            gamma_theta: o.gamma_theta,
            tie_hsic_widths: o.tie_hsic_widths,
            kmeans_restarts: KMeansOptions::default().restarts,
        }
    }
}

fn optimizer_name(o: Optimizer) -> &'static str {
    match o {
        Optimizer::GradientDescent => "gd",
        Optimizer::Lbfgs => "lbfgs",
    }
}

impl FitSettings {
    pub fn fit_options(&self, seed: u64) -> Result<FitOptions> {
        let optimizer = match self.optimizer.as_str() {
            "gd" => Optimizer::GradientDescent,
            "lbfgs" => Optimizer::Lbfgs,
            other => return Err(invalid(format!("unknown optimizer '{other}' (expected gd or lbfgs)"))),
        };
        let opts = FitOptions {
            optimizer,
            restarts: self.restarts,
            max_iters: self.max_iters,
            tol: self.tol,
            hyper_every: self.hyper_every,
            latent_dim: self.latent_dim,
            init_scale: self.init_scale,
            max_step: self.max_step,
            beta_init: self.beta_init,
            gamma_init: self.gamma_init,
            gamma_theta: self.gamma_theta,
            tie_hsic_widths: self.tie_hsic_widths,
            seed,
            ..FitOptions::default()
        };
        opts.validate()?;
        Ok(opts)
    }

    pub fn kmeans_options(&self, seed: u64) -> Result<KMeansOptions> {
        if self.kmeans_restarts == 0 {
            return Err(invalid("kmeans_restarts must be at least 1"));
        }
        Ok(KMeansOptions { restarts: self.kmeans_restarts, seed, ..KMeansOptions::default() })
    }
}

/// Contents of a `--config` file. Top-level keys mirror the common flags;
/// each subcommand has its own table.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub lambda_sweep: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub fit: Option<FitSettings>,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub cluster: ClusterSection,
    #[serde(default)]
    pub bench: BenchSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub family: Option<String>,
    pub n: Option<usize>,
    pub clusters: Option<usize>,
    pub sigma: Option<f64>,
    pub prop: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub input: Option<PathBuf>,
    pub cause_col: Option<usize>,
    pub effect_col: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    pub clusters: Option<usize>,
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub task: Option<Task>,
    pub family: Option<Vec<String>>,
    pub n: Option<Vec<usize>>,
    pub clusters: Option<Vec<usize>>,
    pub sigma: Option<Vec<f64>>,
    pub prop: Option<Vec<f64>>,
    pub trials: Option<usize>,
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", p.display())))
        }
    }
}

/// Settings that every subcommand resolves the same way.
struct Resolved {
    seed: u64,
    lambdas: Vec<f64>,
    out: Option<PathBuf>,
    workers: Option<usize>,
    fit: FitSettings,
}

fn resolve_common(args: &CommonArgs, file: &ConfigFile) -> Result<Resolved> {
    let lambdas = match (&args.lambda, &args.lambda_sweep) {
        (Some(l), _) => vec![*l],
        (None, Some(s)) => s.clone(),
        (None, None) => match (&file.lambda, &file.lambda_sweep) {
            (Some(l), None) => vec![*l],
            (None, Some(s)) => s.clone(),
            (None, None) => vec![DEFAULT_LAMBDA],
            (Some(_), Some(_)) => return Err(invalid("config sets both lambda and lambda_sweep")),
        },
    };
    if lambdas.is_empty() {
        return Err(invalid("lambda sweep is empty"));
    }
    if let Some(l) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(invalid(format!("lambda must be finite and nonnegative, got {l}")));
    }
    let workers = args.workers.or(file.workers);
    if workers == Some(0) {
        return Err(invalid("workers must be at least 1"));
    }
    Ok(Resolved {
        seed: args.seed.or(file.seed).unwrap_or(0),
        lambdas,
        out: args.out.clone().or_else(|| file.out.clone()),
        workers,
        fit: file.fit.clone().unwrap_or_default(),
    })
}

fn single_lambda(r: &Resolved, command: &str) -> Result<f64> {
    match r.lambdas.as_slice() {
        [l] => Ok(*l),
        _ => Err(invalid(format!("{command} takes one lambda; use bench for sweeps"))),
    }
}

/// Prefixes every line of `text` with `# `.
fn commented(text: &str) -> String {
    text.lines().map(|l| format!("# {l}\n")).collect()
}

fn echo<T: Serialize>(cfg: &T) -> Result<String> {
    toml::to_string(cfg).map(|s| commented(&s)).map_err(|e| Error::Numeric(format!("cannot serialize config: {e}")))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn mixture(family: &str, n: usize, clusters: usize, sigma: f64, prop: Option<f64>) -> Result<MixtureSpec> {
    let family: Family = family.parse()?;
    let spec = MixtureSpec::standard(family, clusters, n)?.with_noise(sigma)?;
    match prop {
        Some(a1) => spec.with_first_weight(a1),
        None => Ok(spec),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthConfig {
    pub command: &'static str,
    pub family: String,
    pub n: usize,
    pub clusters: usize,
    pub sigma: f64,
    pub prop: Option<f64>,
    pub seed: u64,
}

fn cmd_synth(args: &SynthArgs, stdout: &mut dyn Write) -> Result<i32> {
    let file = load_config(args.common.config.as_deref())?;
    let common = resolve_common(&args.common, &file)?;
    let s = &file.synth;
    let cfg = SynthConfig {
        command: "synth",
        family: args.family.clone().or_else(|| s.family.clone()).unwrap_or_else(|| "f3".into()),
        n: args.n.or(s.n).unwrap_or(100),
        clusters: args.clusters.or(s.clusters).unwrap_or(2),
        sigma: args.sigma.or(s.sigma).unwrap_or(0.05),
        prop: args.prop.or(s.prop),
        seed: common.seed,
    };
    let spec = mixture(&cfg.family, cfg.n, cfg.clusters, cfg.sigma, cfg.prop)?;
    let data = generate(&spec, cfg.seed)?;
    let header = echo(&cfg)?;
    let out = common.out.unwrap_or_else(|| PathBuf::from("."));

    let rows: Vec<Vec<f64>> = data.x.iter().zip(&data.y).map(|(&x, &y)| vec![x, y]).collect();
    let data_path = write_file(&out, "data.csv", &format!("{header}# columns: x,y\n{}", io::to_csv(&rows, &[])))?;
    let labels: String = data.labels.iter().map(|l| format!("{l}\n")).collect();
    let labels_path = write_file(&out, "labels.csv", &format!("{header}{labels}"))?;
    let mut manifest = header.clone();
    let _ = writeln!(manifest, "data = {:?}", "data.csv");
    let _ = writeln!(manifest, "labels = {:?}", "labels.csv");
    let _ = writeln!(manifest, "rows = {}", data.len());
    for c in 1..=cfg.clusters {
        let _ = writeln!(manifest, "count_{c} = {}", data.labels.iter().filter(|&&l| l == c).count());
    }
    write_file(&out, "manifest.toml", &manifest)?;
    writeln!(stdout, "wrote {} and {} ({} rows)", data_path.display(), labels_path.display(), data.len())?;
    Ok(EXIT_OK)
}

fn resolve_data(args: &DataArgs, file: &ConfigFile) -> Result<(PathBuf, usize, usize)> {
    let d = &file.data;
    let input = args
        .input
        .clone()
        .or_else(|| d.input.clone())
        .ok_or_else(|| invalid("no input file (use --input)"))?;
    Ok((input, args.cause_col.or(d.cause_col).unwrap_or(0), args.effect_col.or(d.effect_col).unwrap_or(1)))
}

#[derive(Debug, Clone, Serialize)]
pub struct InferConfig {
    pub command: &'static str,
    pub input: PathBuf,
    pub cause_col: usize,
    pub effect_col: usize,
    pub lambda: f64,
    pub seed: u64,
    pub fit: FitSettings,
}

fn format_fit(fit: &Result<FitSummary, String>) -> String {
    match fit {
        Ok(s) => format!(
            "objective={:.6} nll={:.6} log_hsic_term={:.6} iterations={} restart={}",
            s.objective.total, s.objective.nll, s.objective.hsic_log_term, s.iterations, s.restart
        ),
        Err(e) => format!("failed: {e}"),
    }
}

fn format_hsic(h: Option<f64>) -> String {
    h.map_or_else(|| "NA".into(), |v| format!("{v:.6e}"))
}

pub fn verdict_report(v: &CausalVerdict) -> String {
    format!(
        "direction {}\nhsic_xy {}\nhsic_yx {}\nfit_xy {}\nfit_yx {}\n",
        v.direction,
        format_hsic(v.hsic_xy),
        format_hsic(v.hsic_yx),
        format_fit(&v.fit_xy),
        format_fit(&v.fit_yx)
    )
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| invalid(format!("cannot start {w} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn cmd_infer(args: &InferArgs, stdout: &mut dyn Write) -> Result<i32> {
    let file = load_config(args.common.config.as_deref())?;
    let common = resolve_common(&args.common, &file)?;
    let (input, cause_col, effect_col) = resolve_data(&args.data, &file)?;
    let cfg = InferConfig {
        command: "infer",
        input,
        cause_col,
        effect_col,
        lambda: single_lambda(&common, "infer")?,
        seed: common.seed,
        fit: common.fit.clone(),
    };
    let pairs = io::load_pairs(&cfg.input, cfg.cause_col, cfg.effect_col)?;
    let opts = cfg.fit.fit_options(cfg.seed)?;
    let verdict =
        with_pool(common.workers, || infer_direction(&pairs.cause(), &pairs.effect(), cfg.lambda, &opts))??;
    let report = verdict_report(&verdict);
    stdout.write_all(report.as_bytes())?;
    if let Some(out) = &common.out {
        write_file(out, "verdict.txt", &format!("{}{report}", echo(&cfg)?))?;
    }
    Ok(if verdict.direction == Direction::NoDecision { EXIT_NO_DECISION } else { EXIT_OK })
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterConfig {
    pub command: &'static str,
    pub input: PathBuf,
    pub cause_col: usize,
    pub effect_col: usize,
    pub clusters: usize,
    pub labels: Option<PathBuf>,
    pub lambda: f64,
    pub seed: u64,
    pub fit: FitSettings,
}

fn cmd_cluster(args: &ClusterArgs, stdout: &mut dyn Write) -> Result<i32> {
    let file = load_config(args.common.config.as_deref())?;
    let common = resolve_common(&args.common, &file)?;
    let (input, cause_col, effect_col) = resolve_data(&args.data, &file)?;
    let cfg = ClusterConfig {
        command: "cluster",
        input,
        cause_col,
        effect_col,
        clusters: args.clusters.or(file.cluster.clusters).unwrap_or(2),
        labels: args.labels.clone().or_else(|| file.cluster.labels.clone()),
        lambda: single_lambda(&common, "cluster")?,
        seed: common.seed,
        fit: common.fit.clone(),
    };
    let pairs = io::load_pairs(&cfg.input, cfg.cause_col, cfg.effect_col)?;
    let truth = match &cfg.labels {
        Some(p) => {
            let t = io::parse_labels(&fs::read_to_string(p)?)?;
            if t.len() != pairs.n() {
                return Err(invalid(format!("{} labels for {} observations", t.len(), pairs.n())));
            }
            Some(t)
        }
        None => None,
    };
    let fit_opts = cfg.fit.fit_options(cfg.seed)?;
    let km_opts = cfg.fit.kmeans_options(cfg.seed)?;
    let (result, _) = with_pool(common.workers, || {
        cluster_mechanisms(&pairs.cause(), &pairs.effect(), cfg.lambda, cfg.clusters, &fit_opts, &km_opts)
    })??;
    let labels: String = result.labels.iter().map(|l| format!("{l}\n")).collect();
    match &common.out {
        Some(out) => {
            let path = write_file(out, "labels.csv", &format!("{}{labels}", echo(&cfg)?))?;
            writeln!(stdout, "labels {}", path.display())?;
        }
        None => stdout.write_all(labels.as_bytes())?,
    }
    writeln!(stdout, "objective {:.6}", result.objective())?;
    if let Some(t) = truth {
        writeln!(stdout, "ari {:.6}", adjusted_rand_index(&result.labels, &t)?)?;
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchConfig {
    pub command: &'static str,
    pub task: Task,
    pub family: Vec<String>,
    pub n: Vec<usize>,
    pub clusters: Vec<usize>,
    pub sigma: Vec<f64>,
    /// Empty means equal mixing weights.
    pub prop: Vec<f64>,
    pub lambda: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub fit: FitSettings,
}

/// One point of the experiment grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub family: String,
    pub n: usize,
    pub clusters: usize,
    pub sigma: f64,
    pub prop: Option<f64>,
}

impl Cell {
    fn id(&self) -> String {
        format!("{}-n{}-c{}-s{}-p{}", self.family, self.n, self.clusters, self.sigma, self.prop_label())
    }

    fn prop_label(&self) -> String {
        self.prop.map_or_else(|| "equal".into(), |p| p.to_string())
    }

    fn csv_prefix(&self) -> String {
        format!("{},{},{},{},{}", self.family, self.n, self.clusters, self.sigma, self.prop_label())
    }
}

impl BenchConfig {
    pub fn cells(&self) -> Vec<Cell> {
        let props: Vec<Option<f64>> =
            if self.prop.is_empty() { vec![None] } else { self.prop.iter().map(|&p| Some(p)).collect() };
        let mut cells = Vec::new();
        for family in &self.family {
            for &n in &self.n {
                for &clusters in &self.clusters {
                    for &sigma in &self.sigma {
                        for &prop in &props {
                            cells.push(Cell { family: family.clone(), n, clusters, sigma, prop });
                        }
                    }
                }
            }
        }
        cells
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        for list in [self.family.is_empty(), self.n.is_empty(), self.clusters.is_empty(), self.sigma.is_empty()] {
            if list {
                return Err(invalid("every grid dimension needs at least one value"));
            }
        }
        for cell in self.cells() {
            mixture(&cell.family, cell.n, cell.clusters, cell.sigma, cell.prop)?;
        }
        self.fit.fit_options(0)?;
        self.fit.kmeans_options(0)?;
        Ok(())
    }
}

/// Independent 64-bit seed for `(cell, trial)` under a base seed.
pub fn derive_seed(base: u64, cell: usize, trial: usize) -> u64 {
    let mut z = base
        ^ (cell as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
        ^ (trial as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Results of one grid cell for one lambda, in trial order.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: usize,
    pub lambda: f64,
    pub records: Vec<TrialRecord>,
}

impl CellResult {
    pub fn mean(&self) -> f64 {
        self.records.iter().map(TrialRecord::metric).sum::<f64>() / self.records.len() as f64
    }

    /// Sample standard deviation; 0 for a single trial.
    pub fn std(&self) -> f64 {
        let n = self.records.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.records.iter().map(|r| (r.metric() - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

fn run_trial(
    cfg: &BenchConfig,
    cell_idx: usize,
    cell: &Cell,
    trial: usize,
    record_time: bool,
) -> Result<Vec<TrialRecord>> {
    let seed = derive_seed(cfg.seed, cell_idx, trial);
    let spec = mixture(&cell.family, cell.n, cell.clusters, cell.sigma, cell.prop)?;
    let data = generate(&spec, seed)?;
    let fit_opts = cfg.fit.fit_options(seed)?;
    let km_opts = cfg.fit.kmeans_options(seed)?;
    let dataset = format!("{}-t{trial}", cell.id());
    cfg.lambda
        .iter()
        .map(|&lambda| {
            let start = Instant::now();
            let outcome = match cfg.task {
                Task::Infer => {
                    let v = infer_direction(&data.x, &data.y, lambda, &fit_opts)?;
                    Outcome::Direction { predicted: v.direction, truth: Direction::XtoY }
                }
                Task::Cluster => {
                    let ari = match cluster_mechanisms(&data.x, &data.y, lambda, cell.clusters, &fit_opts, &km_opts) {
                        Ok((r, _)) => adjusted_rand_index(&r.labels, &data.labels)?,
                        Err(e @ (Error::InvalidArgument(_) | Error::ConstantVariable)) => return Err(e),
                        Err(_) => 0.0,
                    };
                    Outcome::Clustering { ari }
                }
            };
            Ok(TrialRecord {
                trial,
                seed,
                dataset: dataset.clone(),
                lambda,
                outcome,
                wall_ms: record_time.then(|| start.elapsed().as_millis() as u64),
            })
        })
        .collect()
}

/// Runs every trial of every cell. Output order is (cell, lambda, trial)
/// regardless of how many threads execute the trials.
pub fn run_bench(cfg: &BenchConfig, workers: Option<usize>, record_time: bool) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    let cells = cfg.cells();
    let jobs: Vec<(usize, usize)> =
        (0..cells.len()).flat_map(|c| (0..cfg.trials).map(move |t| (c, t))).collect();
    let per_job: Vec<Vec<TrialRecord>> = with_pool(workers, || {
        jobs.par_iter()
            .map(|&(c, t)| run_trial(cfg, c, &cells[c], t, record_time))
            .collect::<Result<Vec<_>>>()
    })??;
    let mut results = Vec::new();
    for c in 0..cells.len() {
        for (li, &lambda) in cfg.lambda.iter().enumerate() {
            let records = (0..cfg.trials).map(|t| per_job[c * cfg.trials + t][li].clone()).collect();
            results.push(CellResult { cell: c, lambda, records });
        }
    }
    Ok(results)
}

const GRID_COLUMNS: &str = "task,family,n,clusters,sigma,prop";

fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Infer => "accuracy",
        Task::Cluster => "ari",
    }
}

fn task_name(task: Task) -> &'static str {
    match task {
        Task::Infer => "infer",
        Task::Cluster => "cluster",
    }
}

/// Summary table: one row per (cell, lambda).
pub fn bench_table(cfg: &BenchConfig, results: &[CellResult]) -> Result<String> {
    let cells = cfg.cells();
    let mut s = echo(cfg)?;
    let _ = writeln!(s, "{GRID_COLUMNS},lambda,metric,mean,std,trials");
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{:?},{},{:.6},{:.6},{}",
            task_name(cfg.task),
            cells[r.cell].csv_prefix(),
            r.lambda,
            metric_name(cfg.task),
            r.mean(),
            r.std(),
            r.records.len()
        );
    }
    Ok(s)
}

/// Best lambda per cell (first one on ties).
pub fn bench_best(cfg: &BenchConfig, results: &[CellResult]) -> Result<String> {
    let cells = cfg.cells();
    let mut s = echo(cfg)?;
    let _ = writeln!(s, "{GRID_COLUMNS},best_lambda,metric,mean,std,trials");
    for (c, cell) in cells.iter().enumerate() {
        let best = results
            .iter()
            .filter(|r| r.cell == c)
            .fold(None::<&CellResult>, |best, r| match best {
                Some(b) if b.mean() >= r.mean() => Some(b),
                _ => Some(r),
            })
            .expect("every cell has results");
        let _ = writeln!(
            s,
            "{},{},{:?},{},{:.6},{:.6},{}",
            task_name(cfg.task),
            cell.csv_prefix(),
            best.lambda,
            metric_name(cfg.task),
            best.mean(),
            best.std(),
            best.records.len()
        );
    }
    Ok(s)
}

/// Long format: one row per trial, for plotting.
pub fn bench_long(cfg: &BenchConfig, results: &[CellResult]) -> Result<String> {
    let cells = cfg.cells();
    let mut s = echo(cfg)?;
    let _ = writeln!(s, "{GRID_COLUMNS},lambda,trial,seed,metric,value");
    for r in results {
        for rec in &r.records {
            let _ = writeln!(
                s,
                "{},{},{:?},{},{},{},{:?}",
                task_name(cfg.task),
                cells[r.cell].csv_prefix(),
                r.lambda,
                rec.trial,
                rec.seed,
                metric_name(cfg.task),
                rec.metric()
            );
        }
    }
    Ok(s)
}

pub fn resolve_bench(args: &BenchArgs) -> Result<(BenchConfig, Option<PathBuf>, Option<usize>)> {
    let file = load_config(args.common.config.as_deref())?;
    let common = resolve_common(&args.common, &file)?;
    let b = &file.bench;
    let cfg = BenchConfig {
        command: "bench",
        task: args.task.or(b.task).unwrap_or(Task::Infer),
        family: args.family.clone().or_else(|| b.family.clone()).unwrap_or_else(|| vec!["f3".into()]),
        n: args.n.clone().or_else(|| b.n.clone()).unwrap_or_else(|| vec![100]),
        clusters: args.clusters.clone().or_else(|| b.clusters.clone()).unwrap_or_else(|| vec![2]),
        sigma: args.sigma.clone().or_else(|| b.sigma.clone()).unwrap_or_else(|| vec![0.05]),
        prop: args.prop.clone().or_else(|| b.prop.clone()).unwrap_or_default(),
        lambda: common.lambdas,
        trials: args.trials.or(b.trials).unwrap_or(DEFAULT_TRIALS),
        seed: common.seed,
        fit: common.fit,
    };
    cfg.validate()?;
    Ok((cfg, common.out, common.workers))
}

fn cmd_bench(args: &BenchArgs, stdout: &mut dyn Write) -> Result<i32> {
    let (cfg, out, workers) = resolve_bench(args)?;
    let results = run_bench(&cfg, workers, args.record_time)?;
    let out = out.unwrap_or_else(|| PathBuf::from("bench-out"));
    let table = bench_table(&cfg, &results)?;
    write_file(&out, "table.csv", &table)?;
    write_file(&out, "long.csv", &bench_long(&cfg, &results)?)?;
    if cfg.lambda.len() > 1 {
        write_file(&out, "best.csv", &bench_best(&cfg, &results)?)?;
    }
    let mut log = RecordLog::new();
    for rec in results.iter().flat_map(|r| r.records.iter()) {
        log.append(rec.clone());
    }
    write_file(&out, "records.log", &format!("{}{}", echo(&cfg)?, log.to_text()))?;
    for line in table.lines().filter(|l| !l.starts_with('#')) {
        writeln!(stdout, "{line}")?;
    }
    Ok(EXIT_OK)
}

/// Exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) | Error::Parse { .. } | Error::Domain(_) => EXIT_USAGE,
        Error::Io(_) => EXIT_IO,
        Error::Numeric(_)
        | Error::NotPositiveDefinite { .. }
        | Error::DegenerateLatent { .. }
        | Error::EstimationFailed(_)
        | Error::ConstantVariable => EXIT_NUMERIC,
    }
}

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, stdout),
        Command::Infer(a) => cmd_infer(a, stdout),
        Command::Cluster(a) => cmd_cluster(a, stdout),
        Command::Bench(a) => cmd_bench(a, stdout),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit status.
/// Errors go to `stderr`.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = write!(stderr, "{}", e.render());
            return code;
        }
    };
    match run(&cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}
