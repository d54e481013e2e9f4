//! Command-line front end. `run` takes the full argv (program name first)
//! and returns the process exit code:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | usage or config error |
//! | 2 | data, parse or I/O error |
//! | 3 | numerical or degeneracy error, or a failed check |
//!
//! Errors go to stderr as a single `ERROR <kind>: <message>` line.
//! Every run writes `run-manifest.json`; passing it back as `--config`
//! reproduces the run.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::attnet::{load_checkpoint, save_checkpoint};
use crate::error::ErrorKind;
use crate::experiments::{
    load_config, run_heatmap, run_keyscan_keys, run_keyscan_model, run_majority, train_lm,
    HeatmapConfig, KeyscanReport, LmConfig, MajorityConfig,
};
use crate::geometry::{self, LayerNormVariant};
use crate::linalg::max_abs_diff;
use crate::par::{available_threads, with_threads, Exec};
use crate::rng::{stream, tag};
use crate::selectability::{analyze_with, load_keyset, save_report};
use crate::{Error, Result};

pub const MANIFEST_NAME: &str = "run-manifest.json";

#[derive(Debug, Parser)]
#[command(
    name = "lngeom",
    version,
    about = "LayerNorm geometry, unselectable keys and toy attention experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the projection and scaling identities on random vectors
    GeometryDemo(GeometryArgs),
    /// Find keys that can never receive the maximal attention score
    Selectable(SelectableArgs),
    /// Unselectable-key fraction over an (n, d) grid of Gaussian key sets
    Heatmap(HeatmapArgs),
    /// Train the majority task across LayerNorm variants and seeds
    Majority(MajorityArgs),
    /// Unselectable-key fractions of a checkpoint or key dump, before and after Full LN
    Keyscan(KeyscanArgs),
    /// Train a causal next-token model on synthetic Markov data
    LmTrain(LmArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Config file: flat TOML, JSON, or a previous run-manifest.json
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads [default: number of cores]
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct GeometryArgs {
    /// Vector dimension
    #[arg(long, default_value_t = 8)]
    d: usize,
    /// Number of random samples
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Append a constant vector to show degenerate-input handling
    #[arg(long)]
    inject_constant: bool,
    /// Output directory
    #[arg(long, default_value = "lngeom-out")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SelectableArgs {
    /// Key set file: `# d=<int>` header, then one comma-separated key per line
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
    /// Residual tolerance of the hull test
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// Report file
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    /// Key counts: `a..b` (inclusive) or a comma list
    #[arg(long, default_value = "2..128")]
    n: String,
    /// Dimensions: `a..b` (inclusive) or a comma list
    #[arg(long, default_value = "2..10")]
    d: String,
    /// Trials per cell
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Only compute the layernormed grid
    #[arg(long)]
    layernorm: bool,
    /// Output directory
    #[arg(long, default_value = "lngeom-out")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct MajorityArgs {
    /// Sequence length
    #[arg(long, default_value_t = 20)]
    seq_len: usize,
    /// Number of token classes
    #[arg(long, default_value_t = 5)]
    n_classes: usize,
    /// Model dimension
    #[arg(long, default_value_t = 8)]
    d: usize,
    /// Optimizer steps per run
    #[arg(long, default_value_t = 3000)]
    steps: usize,
    /// Seeds per variant
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    /// Peak learning rate
    #[arg(long, default_value_t = 0.003)]
    lr: f64,
    /// Minibatch size
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    /// Standard deviation of the initial weights
    #[arg(long, default_value_t = 0.02)]
    init_std: f64,
    /// LayerNorm variants, comma separated
    #[arg(long, default_value = "full,scaling-only")]
    variants: String,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long, default_value = "lngeom-out")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct KeyscanArgs {
    /// Checkpoint manifest written by lm-train
    #[arg(long, value_name = "PATH", conflicts_with = "keys")]
    model: Option<PathBuf>,
    /// Key dump in the selectable input format
    #[arg(long, value_name = "PATH")]
    keys: Option<PathBuf>,
    /// Evaluation token sequences (`eval_sequences.json` from lm-train); random if absent
    #[arg(long, value_name = "PATH")]
    eval: Option<PathBuf>,
    /// Number of random evaluation sequences when --eval is absent
    #[arg(long, default_value_t = 64)]
    sequences: usize,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long, default_value = "lngeom-out")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct LmArgs {
    /// Vocabulary size
    #[arg(long, default_value_t = 16)]
    vocab: usize,
    /// Sequence length
    #[arg(long, default_value_t = 64)]
    seq_len: usize,
    /// Model dimension
    #[arg(long, default_value_t = 8)]
    d: usize,
    /// Optimizer steps
    #[arg(long, default_value_t = 1500)]
    steps: usize,
    /// Peak learning rate
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// LayerNorm variant
    #[arg(long, default_value = "projection-only")]
    variant: LayerNormVariant,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long, default_value = "lngeom-out")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub d: usize,
    pub samples: usize,
    pub master_seed: u64,
    pub inject_constant: bool,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            d: 8,
            samples: 1000,
            master_seed: 0,
            inject_constant: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectableConfig {
    pub input: Option<PathBuf>,
    pub tol: f64,
}

impl Default for SelectableConfig {
    fn default() -> Self {
        SelectableConfig {
            input: None,
            tol: crate::selectability::DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyscanConfig {
    pub model: Option<PathBuf>,
    pub keys: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub sequences: usize,
    pub master_seed: u64,
}

impl Default for KeyscanConfig {
    fn default() -> Self {
        KeyscanConfig {
            model: None,
            keys: None,
            eval: None,
            sequences: 64,
            master_seed: 0,
        }
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    subcommand: &'a str,
    resolved_config: serde_json::Value,
    master_seed: u64,
    version: &'a str,
    started_unix: u64,
    finished_unix: u64,
}

/// Copies a flag into the config when it should win: always without a
/// config file, otherwise only when it was typed on the command line.
struct Overrides<'a> {
    matches: &'a ArgMatches,
    has_config: bool,
}

impl Overrides<'_> {
    fn set<T: Clone>(&self, id: &str, value: &T, dst: &mut T) {
        if !self.has_config || self.matches.value_source(id) == Some(ValueSource::CommandLine) {
            *dst = value.clone();
        }
    }

    fn set_parsed<T>(&self, id: &str, raw: &str, parse: impl Fn(&str) -> Result<T>, dst: &mut T) -> Result<()> {
        if !self.has_config || self.matches.value_source(id) == Some(ValueSource::CommandLine) {
            *dst = parse(raw)?;
        }
        Ok(())
    }
}

fn base_config<T: DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        Some(p) => load_config(p),
        None => Ok(T::default()),
    }
}

/// `a..b` and `a..=b` are inclusive ranges; otherwise a comma list.
pub fn parse_usize_list(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("invalid list `{text}`: expected `a..b` or `a,b,c`"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    if let Some((a, b)) = text.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b) = (num(a)?, num(b)?);
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(num).collect()
}

fn parse_variants(text: &str) -> Result<Vec<LayerNormVariant>> {
    text.split(',')
        .map(str::parse::<LayerNormVariant>)
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_manifest<T: Serialize>(
    dir: &Path,
    subcommand: &str,
    config: &T,
    master_seed: u64,
    started: u64,
) -> Result<()> {
    let manifest = RunManifest {
        subcommand,
        resolved_config: serde_json::to_value(config)?,
        master_seed,
        version: env!("CARGO_PKG_VERSION"),
        started_unix: started,
        finished_unix: unix_now(),
    };
    write_json(&dir.join(MANIFEST_NAME), &manifest)
}

fn threads(common: &Common) -> Result<usize> {
    match common.threads {
        Some(0) => Err(Error::Config("--threads must be >= 1".into())),
        Some(n) => Ok(n),
        None => Ok(available_threads()),
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:+.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn geometry_demo(args: &GeometryArgs, m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let started = unix_now();
    let mut cfg: GeometryConfig = base_config(&args.common.config)?;
    let o = Overrides {
        matches: m,
        has_config: args.common.config.is_some(),
    };
    o.set("d", &args.d, &mut cfg.d);
    o.set("samples", &args.samples, &mut cfg.samples);
    o.set("seed", &args.seed, &mut cfg.master_seed);
    o.set("inject_constant", &args.inject_constant, &mut cfg.inject_constant);
    if cfg.d < 2 {
        return Err(Error::Precondition(format!("d must be >= 2, got {}", cfg.d)));
    }
    let d = cfg.d;
    let mut rng = stream(cfg.master_seed, &[tag::DATA]);
    let mut samples: Vec<Vec<f64>> = (0..cfg.samples)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    if cfg.inject_constant {
        samples.push(vec![rng.random_range(-2.0..2.0); d]);
    }
    let p = geometry::projection_matrix(d)?;
    let sqrt_d = (d as f64).sqrt();
    let (mut orth, mut norm_err, mut proj_err) = (0.0f64, 0.0f64, 0.0f64);
    let _ = writeln!(out, "d = {d}, samples = {}", samples.len());
    for (i, x) in samples.iter().enumerate() {
        let y = geometry::layernorm(x, LayerNormVariant::FULL)?;
        let px = geometry::project(x)?;
        orth = orth.max(geometry::ones(d).iter().zip(&y).map(|(a, b)| a * b).sum::<f64>().abs());
        norm_err = norm_err.max((crate::linalg::norm(&y) - sqrt_d).abs());
        proj_err = proj_err.max(max_abs_diff(&p.apply(x)?, &px));
        if i < 3 {
            let _ = writeln!(out, "x          = {}", fmt_vec(x));
            let _ = writeln!(out, "project(x)  = {}", fmt_vec(&px));
            let _ = writeln!(out, "layernorm(x) = {}", fmt_vec(&y));
        }
    }
    let checks = [
        ("layernorm_orthogonal_to_ones", orth, 1e-9),
        ("layernorm_norm_sqrt_d", norm_err, 1e-9),
        ("projection_matrix_matches_project", proj_err, 1e-12),
    ];
    let mut csv = String::from("invariant,max_error,tolerance,pass\n");
    let mut failed = Vec::new();
    for (name, err, tol) in checks {
        let pass = err < tol;
        let _ = writeln!(
            out,
            "{} {name} max_error={err:e} tol={tol:e}",
            if pass { "PASS" } else { "FAIL" }
        );
        csv.push_str(&format!("{name},{err:?},{tol:?},{pass}\n"));
        if !pass {
            failed.push(name);
        }
    }
    write_text(&args.out.join("geometry_demo.csv"), &csv)?;
    write_manifest(&args.out, "geometry-demo", &cfg, cfg.master_seed, started)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::CheckFailed(failed.join(", ")))
    }
}

fn selectable(args: &SelectableArgs, m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let started = unix_now();
    let mut cfg: SelectableConfig = base_config(&args.common.config)?;
    let o = Overrides {
        matches: m,
        has_config: args.common.config.is_some(),
    };
    if args.input.is_some() {
        cfg.input.clone_from(&args.input);
    }
    o.set("tol", &args.tol, &mut cfg.tol);
    let input = cfg
        .input
        .clone()
        .ok_or_else(|| Error::Config("--input is required".into()))?;
    let keys = load_keyset(&input)?;
    let report = with_threads(threads(&args.common)?, || {
        analyze_with(&keys, cfg.tol, Exec::Parallel)
    })?;
    let _ = writeln!(
        out,
        "{} keys in d={}: {} unselectable {:?}",
        report.n,
        report.d,
        report.unselectable_count(),
        report.unselectable().collect::<Vec<_>>()
    );
    let dir = args.out.parent().unwrap_or(Path::new(""));
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_report(&report, &args.out)?;
    write_manifest(dir, "selectable", &cfg, 0, started)
}

fn heatmap(args: &HeatmapArgs, m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let started = unix_now();
    let mut cfg: HeatmapConfig = base_config(&args.common.config)?;
    let o = Overrides {
        matches: m,
        has_config: args.common.config.is_some(),
    };
    o.set_parsed("n", &args.n, parse_usize_list, &mut cfg.n_values)?;
    o.set_parsed("d", &args.d, parse_usize_list, &mut cfg.d_values)?;
    o.set("trials", &args.trials, &mut cfg.trials);
    o.set("seed", &args.seed, &mut cfg.master_seed);
    o.set("layernorm", &args.layernorm, &mut cfg.layernorm_only);
    cfg.validate()?;
    let threads = threads(&args.common)?;
    let mut grids = Vec::new();
    if !cfg.layernorm_only {
        grids.push(("heatmap_raw.csv", false));
    }
    grids.push(("heatmap_layernorm.csv", true));
    for (file, ln) in grids {
        let grid = with_threads(threads, || run_heatmap(&cfg, ln, Exec::Parallel))?;
        let max = grid.cells.iter().copied().fold(0.0, f64::max);
        let _ = writeln!(out, "{file}: {} cells, max fraction {max}", grid.cells.len());
        write_text(&args.out.join(file), &grid.to_csv())?;
    }
    write_manifest(&args.out, "heatmap", &cfg, cfg.master_seed, started)
}

fn majority(args: &MajorityArgs, m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let started = unix_now();
    let mut cfg: MajorityConfig = base_config(&args.common.config)?;
    let o = Overrides {
        matches: m,
        has_config: args.common.config.is_some(),
    };
    o.set("seq_len", &args.seq_len, &mut cfg.seq_len);
    o.set("n_classes", &args.n_classes, &mut cfg.n_classes);
    o.set("d", &args.d, &mut cfg.d);
    o.set("steps", &args.steps, &mut cfg.total_steps);
    o.set("seeds", &args.seeds, &mut cfg.n_seeds);
    o.set("lr", &args.lr, &mut cfg.lr);
    o.set("batch_size", &args.batch_size, &mut cfg.batch_size);
    o.set("init_std", &args.init_std, &mut cfg.init_std);
    o.set_parsed("variants", &args.variants, parse_variants, &mut cfg.variants)?;
    o.set("seed", &args.seed, &mut cfg.master_seed);
    cfg.validate()?;
    let outcome = with_threads(threads(&args.common)?, || run_majority(&cfg, Exec::Parallel))?;
    for r in &outcome.summary.runs {
        let _ = writeln!(
            out,
            "{} seed {}: steps_to_threshold {:?}, final loss {:.4}, accuracy {:.4}, angle {:.2} -> {:.2}",
            r.variant,
            r.seed,
            r.steps_to_threshold,
            r.final_train_loss,
            r.final_test_accuracy,
            r.initial_angle_deg,
            r.final_angle_deg
        );
    }
    write_text(&args.out.join("metrics.csv"), &outcome.log.to_csv())?;
    write_json(&args.out.join("summary.json"), &outcome.summary)?;
    write_manifest(&args.out, "majority", &cfg, cfg.master_seed, started)
}

#[derive(Serialize, Deserialize)]
struct EvalSequences {
    sequences: Vec<Vec<usize>>,
}

fn lm_train(args: &LmArgs, m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let started = unix_now();
    let mut cfg: LmConfig = base_config(&args.common.config)?;
    let o = Overrides {
        matches: m,
        has_config: args.common.config.is_some(),
    };
    o.set("vocab", &args.vocab, &mut cfg.vocab);
    o.set("seq_len", &args.seq_len, &mut cfg.seq_len);
    o.set("d", &args.d, &mut cfg.d);
    o.set("steps", &args.steps, &mut cfg.total_steps);
    o.set("lr", &args.lr, &mut cfg.lr);
    o.set("variant", &args.variant, &mut cfg.variant);
    o.set("seed", &args.seed, &mut cfg.master_seed);
    cfg.validate()?;
    let run = with_threads(threads(&args.common)?, || train_lm(&cfg, Exec::Parallel))?;
    let mut csv = String::from("step,train_loss,test_loss,test_accuracy\n");
    for r in &run.records {
        let _ = writeln!(
            out,
            "step {}: train loss {:.4}, test loss {:.4}, accuracy {:.4}",
            r.step, r.train_loss, r.test_loss, r.test_accuracy
        );
        csv.push_str(&format!(
            "{},{:?},{:?},{:?}\n",
            r.step, r.train_loss, r.test_loss, r.test_accuracy
        ));
    }
    write_text(&args.out.join("lm_metrics.csv"), &csv)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    save_checkpoint(&run.model, "lm", cfg.master_seed, args.out.join("model.json"))?;
    let eval = EvalSequences {
        sequences: run.test.iter().map(|e| e.tokens.clone()).collect(),
    };
    write_json(&args.out.join("eval_sequences.json"), &eval)?;
    write_manifest(&args.out, "lm-train", &cfg, cfg.master_seed, started)
}

fn keyscan(args: &KeyscanArgs, m: &ArgMatches, out: &mut dyn Write) -> Result<()> {
    let started = unix_now();
    let mut cfg: KeyscanConfig = base_config(&args.common.config)?;
    let o = Overrides {
        matches: m,
        has_config: args.common.config.is_some(),
    };
    for (src, dst) in [
        (&args.model, &mut cfg.model),
        (&args.keys, &mut cfg.keys),
        (&args.eval, &mut cfg.eval),
    ] {
        if src.is_some() {
            dst.clone_from(src);
        }
    }
    o.set("sequences", &args.sequences, &mut cfg.sequences);
    o.set("seed", &args.seed, &mut cfg.master_seed);
    let threads = threads(&args.common)?;
    let report: KeyscanReport = match (&cfg.model, &cfg.keys) {
        (Some(model_path), None) => {
            let (model, _) = load_checkpoint(model_path)?;
            let sequences = match &cfg.eval {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str::<EvalSequences>(&text)
                        .map_err(|e| Error::Parse {
                            path: p.clone(),
                            line: e.line(),
                            column: e.column(),
                            msg: e.to_string(),
                        })?
                        .sequences
                }
                None => {
                    let len = model.shape().max_len.unwrap_or(64);
                    let mut rng = stream(cfg.master_seed, &[tag::EVAL]);
                    (0..cfg.sequences)
                        .map(|_| (0..len).map(|_| rng.random_range(0..model.vocab())).collect())
                        .collect()
                }
            };
            let source = model_path.display().to_string();
            with_threads(threads, || {
                run_keyscan_model(&model, &sequences, &source, Exec::Parallel)
            })?
        }
        (None, Some(keys_path)) => {
            let keys = load_keyset(keys_path)?;
            run_keyscan_keys(&keys, &keys_path.display().to_string())?
        }
        _ => {
            return Err(Error::Config(
                "exactly one of --model and --keys is required".into(),
            ))
        }
    };
    for l in &report.layers {
        let _ = writeln!(
            out,
            "layer {}: unselectable before scaling {:.4}, after Full LN {:.4} ({} sets, {} keys)",
            l.layer,
            l.fraction_unselectable_before_scaling,
            l.fraction_after_full_ln,
            l.sequences,
            l.keys
        );
    }
    write_json(&args.out.join("keyscan.json"), &report)?;
    write_manifest(&args.out, "keyscan", &cfg, cfg.master_seed, started)
}

fn kind_label(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Usage => "usage",
        ErrorKind::Data => "parse",
        ErrorKind::Numerical => "numerical",
    }
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

/// Runs the CLI with explicit output streams.
pub fn run_with<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind as K;
            return match e.kind() {
                K::DisplayHelp | K::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    0
                }
                _ => {
                    let text = e.render().to_string();
                    let line = text
                        .lines()
                        .find(|l| !l.trim().is_empty())
                        .unwrap_or("invalid arguments")
                        .trim_start_matches("error: ");
                    let _ = writeln!(err, "ERROR usage: {line}");
                    1
                }
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "ERROR usage: {}", e.to_string().trim());
            return 1;
        }
    };
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    let result = match &cli.command {
        Command::GeometryDemo(a) => geometry_demo(a, sub, out),
        Command::Selectable(a) => selectable(a, sub, out),
        Command::Heatmap(a) => heatmap(a, sub, out),
        Command::Majority(a) => majority(a, sub, out),
        Command::Keyscan(a) => keyscan(a, sub, out),
        Command::LmTrain(a) => lm_train(a, sub, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            let _ = writeln!(err, "ERROR {}: {msg}", kind_label(e.kind()));
            exit_code(e.kind())
        }
    }
}

/// Runs the CLI against the process's stdout and stderr.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// `--help` text of a subcommand, as printed.
pub fn help_text(subcommand: &str) -> Option<String> {
    let mut cmd = Cli::command();
    cmd.build();
    let sub = cmd.find_subcommand_mut(subcommand)?;
    Some(sub.render_help().to_string())
}
