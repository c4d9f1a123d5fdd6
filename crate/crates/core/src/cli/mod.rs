//! Command-line entry point: `ingest`, `fit`, `eval`, `sample`, `verify` and
//! `export`.
//!
//! Exit codes: 0 on success, 1 on usage or I/O errors and other failures,
//! 2 when a statistical verification fails.

pub mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::{Checkpoint, CODE_VERSION};
use crate::data::{
    load_dictionary, load_matrix, make_heldout_split, HeldOutSplit, IdMode, SparseCountMatrix,
};
use crate::error::{Error, Result};
use crate::eval::{
    active_components, component_correlations, evaluate_split, export_components, export_sticks,
    PerplexityReport,
};
use crate::infer::{fit_observed, FitReport};
use crate::mathfn::sample::stream_rng;
use crate::model::GlobalState;
use crate::rmgen::{
    mc_finiteness_check, mc_laplace_check, mc_pairwise_covariance, pairwise_covariance,
    sample_beta_process_tuples, sample_gamma_process_tuples, sample_hierarchical, FinitenessSpec,
    FinitenessStatus, LaplaceSpec, TransformKind, TupleSpec,
};
pub use config::{parse_config, RunConfig};

/// Environment variable giving the default worker thread count.
pub const THREADS_ENV: &str = "CORRRM_THREADS";

/// Offset between the test-split seed and the validation-split seed.
const VALIDATION_SEED_OFFSET: u64 = 0x5eed;

#[derive(Debug, Parser)]
#[command(
    name = "corrrm",
    version,
    about = "Correlated random measures and correlated Poisson factorization"
)]
struct Cli {
    /// Worker threads (0 = one per core). Defaults to $CORRRM_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a triplet file and write it in canonical form.
    Ingest(IngestArgs),
    /// Fit a model and write a checkpoint.
    Fit(FitArgs),
    /// Held-out perplexity of a checkpoint.
    Eval(EvalArgs),
    /// Draw realizations of a correlated random measure.
    Sample(SampleArgs),
    /// Monte Carlo checks of the random-measure identities.
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Write sticks, top columns and correlation edges of a checkpoint.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// `key=value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// `dense` (0-based integer ids) or `dictionary` (arbitrary string ids).
    #[arg(long, default_value = "dense")]
    id_mode: String,
    #[arg(long, requires = "cols")]
    rows: Option<usize>,
    #[arg(long, requires = "rows")]
    cols: Option<usize>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Fit report path; defaults to `<out>.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Rows held out for testing (excluded from training; 0 trains on all).
    #[arg(long)]
    heldout_rows: Option<usize>,
    /// Training rows used to monitor validation perplexity (0 disables).
    #[arg(long)]
    validation_rows: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to the value the checkpoint was fitted with.
    #[arg(long)]
    heldout_rows: Option<usize>,
    #[arg(long)]
    obs_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "gamma-exp")]
    kind: String,
    /// Number of realizations sharing one set of tuples.
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    truncation: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma_l2: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Constant Gaussian-process mean.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mean: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum VerifyCommand {
    /// E[e^{−r M(E)}] by simulation against its reference value.
    Laplace(LaplaceArgs),
    /// Whether the expected total mass stays finite as the truncation grows.
    Finiteness(FinitenessArgs),
    /// Pairwise covariance formula against simulation.
    Covariance(CovarianceArgs),
}

#[derive(Debug, Args)]
struct LaplaceArgs {
    /// Base-measure mass H(E).
    #[arg(long = "H", default_value_t = 1.0)]
    mass: f64,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    #[arg(long, default_value = "identity")]
    kind: String,
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    #[arg(long, default_value_t = 100)]
    truncation: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma_l2: f64,
    #[arg(long, default_value_t = 3.0)]
    n_se: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct FinitenessArgs {
    #[arg(long, default_value_t = 1.0 / 250.0)]
    sigma_l2: f64,
    #[arg(long, default_value = "gamma-exp")]
    kind: String,
    #[arg(long, default_value_t = 1000)]
    draws_per_atom: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct CovarianceArgs {
    #[arg(long, default_value_t = 1.0)]
    w_i: f64,
    #[arg(long, default_value_t = 1.0)]
    w_j: f64,
    /// Comma-separated location of atom i.
    #[arg(long, default_value = "0.3,0.1", allow_hyphen_values = true)]
    l_i: String,
    #[arg(long, default_value = "0.2,-0.2", allow_hyphen_values = true)]
    l_j: String,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mean: f64,
    #[arg(long, default_value_t = 1_000_000)]
    draws: usize,
    #[arg(long, default_value_t = 3.0)]
    n_se: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    top_n: usize,
    #[arg(long, default_value_t = 0.0)]
    rho_threshold: f64,
    /// Require correlation edges (an error for variants without locations).
    #[arg(long)]
    correlations: bool,
    /// Column dictionary used to name columns in the component file.
    #[arg(long)]
    col_dict: Option<PathBuf>,
}

/// Why a command did not succeed.
enum Failure {
    Error(Error),
    /// A statistical check ran but failed.
    Statistical,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Runs the command line in `std::env::args` and returns the exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let threads = match cli.threads.map(Ok).or_else(threads_from_env) {
        Some(Ok(n)) => n,
        Some(Err(msg)) => {
            eprintln!("error: {msg}");
            return 1;
        }
        None => 0,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {threads} worker threads: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(cli.command, threads)) {
        Ok(()) => 0,
        Err(Failure::Statistical) => 2,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn threads_from_env() -> Option<std::result::Result<usize, String>> {
    let raw = std::env::var(THREADS_ENV).ok()?;
    Some(
        raw.trim()
            .parse()
            .map_err(|_| format!("{THREADS_ENV}=`{raw}` is not a thread count")),
    )
}

fn dispatch(command: Command, threads: usize) -> CmdResult {
    match command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Fit(a) => cmd_fit(a, threads),
        Command::Eval(a) => cmd_eval(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Verify(VerifyCommand::Laplace(a)) => cmd_verify_laplace(a),
        Command::Verify(VerifyCommand::Finiteness(a)) => cmd_verify_finiteness(a),
        Command::Verify(VerifyCommand::Covariance(a)) => cmd_verify_covariance(a),
        Command::Export(a) => cmd_export(a),
    }
}

/// `# corrrm <version>` followed by `# key=value` lines.
fn provenance_header(config: &BTreeMap<String, String>) -> String {
    let mut out = format!("# corrrm {CODE_VERSION}\n");
    for (k, v) in config {
        let _ = writeln!(out, "# {k}={v}");
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, text),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn parse_overrides(set: &[String]) -> Result<Vec<(String, String)>> {
    set.iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::invalid(format!("--set expects KEY=VALUE, got `{kv}`")))
        })
        .collect()
}

fn id_mode(s: &str) -> Result<IdMode> {
    match s {
        "dense" => Ok(IdMode::Dense),
        "dictionary" => Ok(IdMode::Dictionary),
        other => Err(Error::invalid(format!("unknown id mode `{other}`"))),
    }
}

fn cmd_ingest(a: IngestArgs) -> CmdResult {
    let shape = a.rows.zip(a.cols);
    let parsed = load_matrix(&a.input, id_mode(&a.id_mode)?, shape)?;
    let m = &parsed.matrix;
    let mut provenance = BTreeMap::new();
    provenance.insert("input".to_string(), a.input.display().to_string());
    provenance.insert("id_mode".to_string(), a.id_mode.clone());
    let text = provenance_header(&provenance) + &m.to_tsv();
    write_file(&a.output, &text)?;
    println!(
        "{} rows, {} columns, {} nonzero cells, {} events",
        m.n_rows(),
        m.n_cols(),
        m.nnz(),
        m.total()
    );
    Ok(())
}

/// The test split shared by `fit` and `eval`, or `None` when no rows are held out.
fn test_split(
    m: &SparseCountMatrix,
    rows: usize,
    obs_fraction: f64,
    seed: u64,
) -> Result<Option<HeldOutSplit>> {
    if rows == 0 {
        return Ok(None);
    }
    make_heldout_split(m, rows, obs_fraction, seed).map(Some)
}

#[derive(Serialize)]
struct FitOutput<'a> {
    code_version: &'a str,
    run_config: &'a BTreeMap<String, String>,
    n_train_rows: usize,
    n_validation_rows: usize,
    report: &'a FitReport,
}

fn cmd_fit(a: FitArgs, threads: usize) -> CmdResult {
    let mut overrides = parse_overrides(&a.config.set)?;
    let flags = [
        ("variant", a.variant.clone()),
        ("mode", a.mode.clone()),
        ("seed", a.seed.map(|s| s.to_string())),
        ("max_iters", a.max_iters.map(|s| s.to_string())),
        ("heldout_rows", a.heldout_rows.map(|s| s.to_string())),
        ("validation_rows", a.validation_rows.map(|s| s.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            overrides.push((k.to_string(), v));
        }
    }
    overrides.push(("threads".to_string(), threads.to_string()));
    let cfg = RunConfig::resolve(a.config.config.as_deref(), &overrides)?;
    let model = cfg.model()?;
    let fit = cfg.fit()?;
    let seed: u64 = cfg.get("seed")?;
    let obs_fraction: f64 = cfg.get("obs_fraction")?;
    let checkpoint_every: usize = cfg.get("checkpoint_every")?;

    let m = load_matrix(&a.data, IdMode::Dense, None)?.matrix;
    let train = match test_split(&m, cfg.get("heldout_rows")?, obs_fraction, seed)? {
        Some(split) => split.train,
        None => m,
    };
    let validation_rows: usize = cfg.get("validation_rows")?;
    let (train, validation) = if validation_rows > 0 {
        let split = make_heldout_split(
            &train,
            validation_rows,
            obs_fraction,
            seed.wrapping_add(VALIDATION_SEED_OFFSET),
        )?;
        (split.train.clone(), Some(split))
    } else {
        (train, None)
    };

    let provenance = cfg.provenance();
    let save = |iteration: usize, state: &GlobalState| -> Result<()> {
        Checkpoint::new(provenance.clone(), model.clone(), iteration, state.clone()).save(&a.out)
    };
    let mut observer = |iteration: usize, state: &GlobalState| -> Result<()> {
        if checkpoint_every > 0 && iteration.is_multiple_of(checkpoint_every) {
            save(iteration, state)?;
        }
        Ok(())
    };
    let init = GlobalState::init_from_rows(&model, &train, seed)?;
    let result = fit_observed(
        &train,
        &model,
        &fit,
        validation.as_ref(),
        seed,
        init,
        &mut observer,
    )?;
    save(result.report.best_iteration, &result.global)?;

    let report_path = a.report.unwrap_or_else(|| {
        let mut p = a.out.as_os_str().to_owned();
        p.push(".report.json");
        p.into()
    });
    let out = FitOutput {
        code_version: CODE_VERSION,
        run_config: &provenance,
        n_train_rows: train.n_rows(),
        n_validation_rows: validation.as_ref().map_or(0, |v| v.heldout_row_ids.len()),
        report: &result.report,
    };
    write_file(&report_path, &to_json(&out)?)?;
    let r = &result.report;
    println!(
        "{} iterations ({:?}); kept iteration {}; checkpoint {}",
        r.iterations,
        r.convergence,
        r.best_iteration,
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    code_version: &'a str,
    run_config: &'a BTreeMap<String, String>,
    checkpoint: String,
    heldout_rows: usize,
    obs_fraction: f64,
    seed: u64,
    report: &'a PerplexityReport,
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let cp = Checkpoint::load(&a.checkpoint)?;
    let from_cp = |key: &str| -> Result<String> {
        cp.run_config
            .get(key)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("run config lacks `{key}`; pass it explicitly")))
    };
    let parse = |key: &str, raw: String| -> Result<f64> {
        raw.parse()
            .map_err(|_| Error::Checkpoint(format!("run config `{key}` is not a number")))
    };
    let obs_fraction = match a.obs_fraction {
        Some(f) => f,
        None => parse("obs_fraction", from_cp("obs_fraction")?)?,
    };
    if !(obs_fraction > 0.0 && obs_fraction < 1.0) {
        return Err(Error::invalid(format!("--obs-fraction must lie in (0, 1), got {obs_fraction}")).into());
    }
    let heldout_rows = match a.heldout_rows {
        Some(n) => n,
        None => parse("heldout_rows", from_cp("heldout_rows")?)? as usize,
    };
    if heldout_rows == 0 {
        return Err(Error::invalid("no held-out rows to evaluate; pass --heldout-rows").into());
    }
    let seed = match a.seed {
        Some(s) => s,
        None => parse("seed", from_cp("seed")?)? as u64,
    };
    let m = load_matrix(&a.data, IdMode::Dense, None)?.matrix;
    if m.n_cols() != cp.global.n_cols {
        return Err(Error::DimensionMismatch {
            expected: cp.global.n_cols,
            got: m.n_cols(),
        }
        .into());
    }
    let split = make_heldout_split(&m, heldout_rows, obs_fraction, seed)?;
    let mut settings = crate::infer::FitConfig::default().local;
    if let (Ok(tol), Ok(iters)) = (from_cp("local_tol"), from_cp("local_max_iters")) {
        settings.tol = parse("local_tol", tol)?;
        settings.max_iters = parse("local_max_iters", iters)? as usize;
    }
    let report = evaluate_split(&split, &cp.model, &cp.global, &settings)?;
    let out = EvalOutput {
        code_version: CODE_VERSION,
        run_config: &cp.run_config,
        checkpoint: a.checkpoint.display().to_string(),
        heldout_rows,
        obs_fraction,
        seed,
        report: &report,
    };
    write_output(a.out.as_deref(), &to_json(&out)?)?;
    if a.out.is_some() {
        println!(
            "perplexity {:.6} over {} test events",
            report.perplexity, report.n_test_events
        );
    }
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> CmdResult {
    let kind = TransformKind::parse(&a.kind)?;
    let mut rng = stream_rng(a.seed, 0);
    let tuples = if kind == TransformKind::BetaBernoulli {
        sample_beta_process_tuples(a.alpha, a.truncation, a.dim, a.sigma_l2, &mut rng)?.tuples
    } else {
        sample_gamma_process_tuples(
            &TupleSpec {
                alpha: a.alpha,
                c: a.c,
                truncation: a.truncation,
                dim: a.dim,
                sigma_l2: a.sigma_l2,
            },
            &mut rng,
        )?
    };
    if a.n == 0 {
        return Ok(write_output(a.out.as_deref(), "")?);
    }
    let draws = sample_hierarchical(&tuples, kind, &vec![a.mean; a.n], &mut rng)?;
    let mut provenance = BTreeMap::new();
    for (k, v) in [
        ("kind", a.kind.clone()),
        ("n", a.n.to_string()),
        ("truncation", a.truncation.to_string()),
        ("dim", a.dim.to_string()),
        ("sigma_l2", a.sigma_l2.to_string()),
        ("alpha", a.alpha.to_string()),
        ("c", a.c.to_string()),
        ("mean", a.mean.to_string()),
        ("seed", a.seed.to_string()),
    ] {
        provenance.insert(k.to_string(), v);
    }
    let mut text = provenance_header(&provenance);
    text.push_str("# draw\tk\tw\tgp\tx\tlocation\n");
    for (u, d) in draws.iter().enumerate() {
        for k in 0..tuples.len() {
            let loc: Vec<String> = tuples.location(k).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                text,
                "{u}\t{k}\t{}\t{}\t{}\t{}",
                tuples.weights[k],
                d.gp_values[k],
                d.weights[k],
                loc.join(",")
            );
        }
    }
    write_output(a.out.as_deref(), &text)?;
    Ok(())
}

fn verdict(pass: bool) -> CmdResult {
    println!("{}", if pass { "PASS" } else { "FAIL" });
    if pass {
        Ok(())
    } else {
        Err(Failure::Statistical)
    }
}

fn cmd_verify_laplace(a: LaplaceArgs) -> CmdResult {
    let kind = TransformKind::parse(&a.kind)?;
    let spec = LaplaceSpec {
        mass: a.mass,
        c: a.c,
        r: a.r,
        truncation: a.truncation,
        n_draws: a.draws,
        dim: a.dim,
        sigma_l2: a.sigma_l2,
        mean: 0.0,
    };
    let check = mc_laplace_check(&spec, kind, a.seed)?;
    println!(
        "estimate {:.6} ± {:.6} (SE); {} {:.6}",
        check.mc_estimate,
        check.stderr,
        if check.analytic { "analytic" } else { "conditional" },
        check.reference
    );
    verdict(check.passes(a.n_se))
}

fn cmd_verify_finiteness(a: FinitenessArgs) -> CmdResult {
    let spec = FinitenessSpec {
        kind: TransformKind::parse(&a.kind)?,
        sigma_l2: a.sigma_l2,
        draws_per_atom: a.draws_per_atom,
        ..FinitenessSpec::default()
    };
    let report = mc_finiteness_check(&spec, a.seed)?;
    for ((t, e), d) in report
        .truncations
        .iter()
        .zip(&report.estimates)
        .zip(&report.increments)
    {
        println!("T={t:<6} estimate {e:.6e}  increment {d:.6e}");
    }
    println!("{}", report.status);
    if report.status == FinitenessStatus::Convergent {
        Ok(())
    } else {
        Err(Failure::Statistical)
    }
}

fn parse_location(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad location coordinate `{v}`")))
        })
        .collect()
}

fn cmd_verify_covariance(a: CovarianceArgs) -> CmdResult {
    let l_i = parse_location(&a.l_i)?;
    let l_j = parse_location(&a.l_j)?;
    let exact = pairwise_covariance(a.w_i, a.w_j, &l_i, &l_j, a.mean)?;
    let mc = mc_pairwise_covariance(
        TransformKind::GammaExp,
        a.w_i,
        a.w_j,
        &l_i,
        &l_j,
        a.mean,
        a.draws,
        a.seed,
    )?;
    println!(
        "closed form {exact:.6}; estimate {:.6} ± {:.6} (SE)",
        mc.estimate, mc.stderr
    );
    verdict(mc.agrees_with(exact, a.n_se))
}

fn cmd_export(a: ExportArgs) -> CmdResult {
    let cp = Checkpoint::load(&a.checkpoint)?;
    let variant = cp.model.variant;
    let with_corr = variant.uses_locations();
    if a.correlations && !with_corr {
        return Err(Error::Unsupported(format!(
            "variant {variant} has no locations, so there are no correlations to export"
        ))
        .into());
    }
    let names = match &a.col_dict {
        Some(p) => Some(load_dictionary(p)?),
        None => None,
    };
    if let Some(n) = &names {
        if n.len() != cp.global.n_cols {
            return Err(Error::DimensionMismatch {
                expected: cp.global.n_cols,
                got: n.len(),
            }
            .into());
        }
    }
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let mut provenance = cp.run_config.clone();
    provenance.insert("export_top_n".into(), a.top_n.to_string());
    provenance.insert("export_rho_threshold".into(), a.rho_threshold.to_string());
    let header = provenance_header(&provenance);

    let sticks = export_sticks(&cp.global);
    let mut text = header.clone();
    let _ = writeln!(
        text,
        "# total\t{}\n# effective_count\t{}",
        sticks.total, sticks.effective_count
    );
    text.push_str("# rank\tk\tweight\n");
    for (rank, (k, w)) in sticks.sticks.iter().enumerate() {
        let _ = writeln!(text, "{rank}\t{k}\t{w}");
    }
    write_file(&a.out_dir.join("sticks.tsv"), &text)?;

    let active = active_components(&cp.global);
    let mut text = header.clone();
    text.push_str("# k\trank\tcol\tcol_id\tmean_weight\n");
    for t in export_components(&cp.global, &active, a.top_n) {
        let id = names
            .as_ref()
            .map_or_else(|| t.col.to_string(), |n| n[t.col].clone());
        let _ = writeln!(text, "{}\t{}\t{}\t{}\t{}", t.k, t.rank, t.col, id, t.mean_weight);
    }
    write_file(&a.out_dir.join("components.tsv"), &text)?;

    if with_corr {
        let edges = component_correlations(&cp.global, variant, &active, a.rho_threshold)?;
        let mut text = header;
        text.push_str("# k\tm\trho\n");
        for e in &edges {
            let _ = writeln!(text, "{}\t{}\t{}", e.k, e.m, e.rho);
        }
        write_file(&a.out_dir.join("correlations.tsv"), &text)?;
    }
    println!(
        "exported {} active components to {}",
        active.len(),
        a.out_dir.display()
    );
    Ok(())
}
