use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value as Json};
use toml::{Table, Value};

use spatial_cvm::baselines::{anova_oneway, bonferroni, kruskal_wallis, manova_pillai};
use spatial_cvm::calibration::{cache_path, calibrate, CacheStatus, CalibrationResult};
use spatial_cvm::config::{resolve_calibration, resolve_simulation, Override};
use spatial_cvm::data::{open, read_fields, read_groups};
use spatial_cvm::mvn::{mvn_rect, CorrelationMatrix, MvnMethod, MvnOptions, DEFAULT_SEED, DEFAULT_TOL};
use spatial_cvm::output::{fmt_sig, fmt_sig17, results_csv};
use spatial_cvm::rank_test::PreparedTest;
use spatial_cvm::simulation::monte_carlo;
use spatial_cvm::{Error, Result};

const CACHE_ENV: &str = "SPATIAL_CVM_CACHE_DIR";
const DEFAULT_CACHE_DIR: &str = ".spatial-cvm-cache";

#[derive(Parser)]
#[command(name = "spatial-cvm", version, about = "Kernel-smoothed spatial Cramér–von Mises test")]
struct Cli {
    /// Worker threads (default: all cores). Never changes numeric output.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Calibration cache directory [env: SPATIAL_CVM_CACHE_DIR] [default: .spatial-cvm-cache]
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,

    /// Disable the calibration cache.
    #[arg(long, global = true)]
    no_cache: bool,

    /// Write the run manifest here instead of stderr.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute (or fetch from cache) the null calibration for one configuration.
    Calibrate(CalibrateArgs),
    /// Run the spatial test on a CSV dataset.
    Test(TestArgs),
    /// Run Kruskal–Wallis, ANOVA and MANOVA on a CSV dataset.
    Baseline(BaselineArgs),
    /// Monte Carlo size/power study.
    Simulate(SimulateArgs),
    /// Multivariate normal rectangle probability (debugging aid).
    Mvn(MvnArgs),
}

#[derive(Args)]
struct CalibrationFlags {
    /// TOML file with flat calibration keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    h: Option<f64>,
    /// Reference point as `x,y`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    s0: Option<Vec<f64>>,
    /// `gaussian` or `epanechnikov`.
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    m_per_dim: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    mvn_tol: Option<f64>,
    /// `quadrature` or `qmc`.
    #[arg(long)]
    mvn_method: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Merge distances that agree after rounding to this quantum.
    #[arg(long)]
    dedup_quantum: Option<f64>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    flags: CalibrationFlags,
    /// Also write the calibration record (JSON) here.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    /// CSV with header `field,x,y,v1[,v2]`.
    #[arg(long)]
    data: PathBuf,
    /// Calibration record (`.json`) or calibration config (TOML).
    #[arg(long)]
    calibration: PathBuf,
    /// Write the result record here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    /// CSV with header `field,x,y,v1[,v2]`; coordinates are ignored.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML file with flat simulation keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    n_replicates: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    phi: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    delta: Option<Vec<f64>>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, value_delimiter = ',', num_args = 2)]
    s0: Option<Vec<f64>>,
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    m_per_dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of CvM, KW, ANOVA, MANOVA.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    mvn_tol: Option<f64>,
    #[arg(long)]
    mvn_method: Option<String>,
    /// Write the results CSV here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MvnArgs {
    /// Dimension (defaults to the length of --upper).
    #[arg(long)]
    dim: Option<usize>,
    /// Upper limits; `inf` is accepted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    upper: Vec<f64>,
    /// Lower limits (default all `-inf`).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    lower: Option<Vec<f64>>,
    /// Correlations: the strict upper triangle row by row, or all dim² entries.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "")]
    corr: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value = "quadrature")]
    method: String,
}

#[derive(Serialize)]
struct Manifest {
    subcommand: &'static str,
    version: &'static str,
    status: &'static str,
    exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<Json>,
    config_file: Option<String>,
    config: Json,
    overrides: Vec<Override>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    seed: Option<u64>,
    threads: usize,
    cache_dir: Option<String>,
    cache_hits: usize,
    cache_misses: usize,
    duration_secs: f64,
    #[serde(skip_serializing_if = "Json::is_null")]
    details: Json,
}

struct Run {
    manifest: Manifest,
    cache_dir: Option<PathBuf>,
}

impl Run {
    fn record_cache(&mut self, status: CacheStatus) {
        match status {
            CacheStatus::Hit => self.manifest.cache_hits += 1,
            CacheStatus::Miss => self.manifest.cache_misses += 1,
            CacheStatus::Disabled => {}
        }
    }
}

fn put(t: &mut Table, key: &str, v: Option<impl Into<Value>>) {
    if let Some(v) = v {
        t.insert(key.to_string(), v.into());
    }
}

fn put_usize(t: &mut Table, key: &str, v: Option<usize>) -> Result<()> {
    if let Some(v) = v {
        let v = i64::try_from(v).map_err(|_| Error::Config(format!("{key} is too large")))?;
        t.insert(key.to_string(), Value::Integer(v));
    }
    Ok(())
}

fn put_u64(t: &mut Table, key: &str, v: Option<u64>) -> Result<()> {
    if let Some(v) = v {
        let v = i64::try_from(v).map_err(|_| Error::Config(format!("{key} must be below 2^63")))?;
        t.insert(key.to_string(), Value::Integer(v));
    }
    Ok(())
}

fn float_array(v: Option<Vec<f64>>) -> Option<Value> {
    v.map(|xs| Value::Array(xs.into_iter().map(Value::Float).collect()))
}

impl CalibrationFlags {
    fn table(&self) -> Result<Table> {
        let mut t = Table::new();
        put_usize(&mut t, "grid_size", self.grid_size)?;
        put(&mut t, "h", self.h);
        put(&mut t, "s0", float_array(self.s0.clone()));
        put(&mut t, "kernel", self.kernel.clone());
        put(&mut t, "phi", self.phi);
        put(&mut t, "rho", self.rho);
        put_usize(&mut t, "p", self.p)?;
        put_usize(&mut t, "m_per_dim", self.m_per_dim)?;
        put_usize(&mut t, "k", self.k)?;
        put(&mut t, "mvn_tol", self.mvn_tol);
        put(&mut t, "mvn_method", self.mvn_method.clone());
        put_u64(&mut t, "seed", self.seed)?;
        put(&mut t, "dedup_quantum", self.dedup_quantum);
        Ok(t)
    }
}

impl SimulateArgs {
    fn table(&self) -> Result<Table> {
        let mut t = Table::new();
        put_usize(&mut t, "k", self.k)?;
        put_usize(&mut t, "grid_size", self.grid_size)?;
        put_usize(&mut t, "p", self.p)?;
        put_usize(&mut t, "n_replicates", self.n_replicates)?;
        put(&mut t, "alpha", self.alpha);
        put(&mut t, "phi", float_array(self.phi.clone()));
        put(&mut t, "delta", float_array(self.delta.clone()));
        put(&mut t, "rho", self.rho);
        put(&mut t, "h", self.h);
        put(&mut t, "s0", float_array(self.s0.clone()));
        put(&mut t, "kernel", self.kernel.clone());
        put_usize(&mut t, "m_per_dim", self.m_per_dim)?;
        put_u64(&mut t, "seed", self.seed)?;
        if let Some(m) = &self.methods {
            let canonical = m
                .iter()
                .map(|s| s.parse::<spatial_cvm::simulation::Method>().map(|m| Value::from(m.as_str())))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Config(e.to_string()))?;
            t.insert("methods".into(), Value::Array(canonical));
        }
        put(&mut t, "mvn_tol", self.mvn_tol);
        put(&mut t, "mvn_method", self.mvn_method.clone());
        Ok(t)
    }
}

fn write_output(path: Option<&Path>, text: &str, run: &mut Run, name: &str) -> Result<()> {
    match path {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| Error::Io {
                path: p.display().to_string(),
                source: e,
            })?;
            run.manifest.outputs.insert(name.into(), p.display().to_string());
        }
        None => {
            let mut out = std::io::stdout().lock();
            let _ = out.write_all(text.as_bytes());
            run.manifest.outputs.insert(name.into(), "stdout".into());
        }
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Json {
    serde_json::to_value(v).expect("serializable")
}

fn cmd_calibrate(args: &CalibrateArgs, run: &mut Run) -> Result<()> {
    let resolved = resolve_calibration(args.flags.config.as_deref(), args.flags.table()?)?;
    run.manifest.config = to_json(&resolved.config);
    run.manifest.config_file = resolved.file.as_ref().map(|p| p.display().to_string());
    run.manifest.overrides = resolved.overrides.clone();
    run.manifest.seed = Some(resolved.config.seed);
    let (result, status) = calibrate(&resolved.config, run.cache_dir.as_deref())?;
    run.record_cache(status);
    let mut text = String::new();
    text += &format!("a = {}\n", fmt_sig17(result.a));
    text += &format!("nu = {}\n", fmt_sig17(result.nu));
    text += &format!("sum_lambda = {}\n", fmt_sig17(result.sum_lambda()));
    text += &format!("retained_eigenvalues = {}\n", result.eigenvalues.len());
    text += &format!("eff_n = {}\n", fmt_sig17(result.eff_n));
    text += &format!("cache = {}\n", to_json(&status).as_str().unwrap_or_default());
    if let Some(dir) = &run.cache_dir {
        let path = cache_path(dir, &resolved.config);
        if path.exists() {
            text += &format!("cache_file = {}\n", path.display());
        }
    }
    write_output(None, &text, run, "summary")?;
    if let Some(out) = &args.output {
        write_output(Some(out), &result.to_json(), run, "calibration")?;
    }
    Ok(())
}

fn load_calibration(path: &Path, run: &mut Run) -> Result<CalibrationResult> {
    let is_record = path.extension().is_some_and(|e| e == "json");
    if is_record {
        return CalibrationResult::load(path);
    }
    let resolved = resolve_calibration(Some(path), Table::new())?;
    run.manifest.config = to_json(&resolved.config);
    run.manifest.config_file = Some(path.display().to_string());
    run.manifest.seed = Some(resolved.config.seed);
    let (r, status) = calibrate(&resolved.config, run.cache_dir.as_deref())?;
    run.record_cache(status);
    Ok(r)
}

fn cmd_test(args: &TestArgs, run: &mut Run) -> Result<()> {
    run.manifest.inputs.insert("data".into(), args.data.display().to_string());
    run.manifest.inputs.insert("calibration".into(), args.calibration.display().to_string());
    let calib = load_calibration(&args.calibration, run)?;
    if run.manifest.config.is_null() {
        run.manifest.config = to_json(&calib.metadata);
        run.manifest.seed = Some(calib.metadata.seed);
    }
    let lattice = calib.metadata.lattice()?;
    let (labels, data) = read_fields(open(&args.data)?, &lattice)?;
    let result = PreparedTest::new(&calib)?.run(&data)?;
    let mut record = to_json(&result);
    record["fields"] = json!(labels);
    record["calibration_key"] = json!(calib.key);
    let text = serde_json::to_string_pretty(&record).expect("serializable") + "\n";
    write_output(args.output.as_deref(), &text, run, "result")
}

fn cmd_baseline(args: &BaselineArgs, run: &mut Run) -> Result<()> {
    run.manifest.inputs.insert("data".into(), args.data.display().to_string());
    let (labels, sample) = read_groups(open(&args.data)?)?;
    let per_var = (0..sample.p())
        .map(|v| kruskal_wallis(&sample.variable(v)))
        .collect::<Result<Vec<_>>>()?;
    let mut record = json!({
        "fields": labels,
        "p": sample.p(),
        "kruskal_wallis": per_var,
        "kw_p_value": bonferroni(&per_var.iter().map(|r| r.p_value).collect::<Vec<_>>()),
    });
    if sample.p() == 1 {
        record["anova"] = to_json(&anova_oneway(&sample.variable(0))?);
    } else {
        record["manova_pillai"] = to_json(&manova_pillai(&sample)?);
    }
    let text = serde_json::to_string_pretty(&record).expect("serializable") + "\n";
    write_output(args.output.as_deref(), &text, run, "result")
}

fn cmd_simulate(args: &SimulateArgs, run: &mut Run) -> Result<()> {
    let resolved = resolve_simulation(args.config.as_deref(), args.table()?)?;
    run.manifest.config = to_json(&resolved.config);
    run.manifest.config_file = resolved.file.as_ref().map(|p| p.display().to_string());
    run.manifest.overrides = resolved.overrides.clone();
    run.manifest.seed = Some(resolved.config.seed);
    let out = monte_carlo(&resolved.config, run.cache_dir.as_deref())?;
    for &(_, s) in &out.cache {
        run.record_cache(s);
    }
    run.manifest.details = json!({
        "replicate_counts": out.table.rows.iter().map(|r| json!({
            "phi": r.phi,
            "delta": r.delta,
            "method": r.method,
            "n_effective": r.n_effective,
            "n_failed": r.n_failed,
        })).collect::<Vec<_>>(),
    });
    write_output(args.output.as_deref(), &results_csv(&out.table), run, "results")
}

fn cmd_mvn(args: &MvnArgs) -> Result<()> {
    let dim = args.dim.unwrap_or(args.upper.len());
    if args.upper.len() != dim {
        return Err(Error::InvalidArgument(format!("--upper has {} values, expected {dim}", args.upper.len())));
    }
    let corr_vals: Vec<f64> = args
        .corr
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::InvalidArgument(format!("bad correlation {s:?}"))))
        .collect::<Result<_>>()?;
    let corr = if corr_vals.len() == dim * dim && dim > 1 {
        CorrelationMatrix::new(dim, corr_vals)?
    } else {
        CorrelationMatrix::from_upper_triangle(dim, &corr_vals)?
    };
    let lower = args.lower.clone().unwrap_or_else(|| vec![f64::NEG_INFINITY; dim]);
    let options = MvnOptions {
        tol: args.tol,
        seed: args.seed,
        method: args.method.parse::<MvnMethod>()?,
    };
    let p = mvn_rect(&lower, &args.upper, &corr, options)?;
    println!("{}", fmt_sig(p, 12));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not configure {n} threads: {e}");
        }
    }
    let cache_dir = if cli.no_cache {
        None
    } else {
        Some(
            cli.cache_dir
                .clone()
                .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR)),
        )
    };
    let subcommand = match &cli.command {
        Command::Calibrate(_) => "calibrate",
        Command::Test(_) => "test",
        Command::Baseline(_) => "baseline",
        Command::Simulate(_) => "simulate",
        Command::Mvn(_) => "mvn",
    };
    let mut run = Run {
        manifest: Manifest {
            subcommand,
            version: env!("CARGO_PKG_VERSION"),
            status: "ok",
            exit_code: 0,
            error: None,
            config_file: None,
            config: Json::Null,
            overrides: Vec::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seed: None,
            threads: rayon::current_num_threads(),
            cache_dir: cache_dir.as_ref().map(|p| p.display().to_string()),
            cache_hits: 0,
            cache_misses: 0,
            duration_secs: 0.0,
            details: Json::Null,
        },
        cache_dir,
    };

    let start = Instant::now();
    let outcome = match &cli.command {
        Command::Calibrate(a) => cmd_calibrate(a, &mut run),
        Command::Test(a) => cmd_test(a, &mut run),
        Command::Baseline(a) => cmd_baseline(a, &mut run),
        Command::Simulate(a) => cmd_simulate(a, &mut run),
        Command::Mvn(a) => {
            run.manifest.config = json!({
                "dim": a.dim.unwrap_or(a.upper.len()),
                "upper": a.upper,
                "lower": a.lower,
                "corr": a.corr,
                "tol": a.tol,
                "method": a.method,
            });
            run.manifest.seed = Some(a.seed);
            cmd_mvn(a)
        }
    };
    run.manifest.duration_secs = start.elapsed().as_secs_f64();

    let code = match &outcome {
        Ok(()) => 0,
        Err(e) => {
            let record = json!({ "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() } });
            eprintln!("{record}");
            run.manifest.status = "error";
            run.manifest.exit_code = e.exit_code();
            run.manifest.error = Some(record["error"].clone());
            e.exit_code()
        }
    };
    let manifest = serde_json::to_string(&run.manifest).expect("manifest serializes");
    match &cli.manifest {
        Some(path) => {
            if let Err(e) = std::fs::write(path, manifest + "\n") {
                eprintln!("could not write manifest {}: {e}", path.display());
            }
        }
        None => eprintln!("{manifest}"),
    }
    ExitCode::from(code as u8)
}
