//! The `cherrynet` command line: `synth`, `mask`, `complete`, `eval`, `params`.
//!
//! Exit codes: 0 success (or converged), 2 iteration limit reached without
//! converging, 3 solver invariant violated, 4 I/O, parse or usage error.
//!
//! `complete` reads optional `key=value` settings from `--config`; explicit
//! flags win over the file, which wins over built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cherry::ifctn_reconstruct;
use crate::error::{Error, Result};
use crate::eval::{gen_mask, psnr, rmse, rse, ssim, MaskKind, MaskSpec};
use crate::io;
use crate::params::{param_count, ModelRanks};
use crate::solver::{init_factors, pam_solve, CompletionProblem, SolveReport, SolverConfig};
use crate::tensor::numel;

pub const EXIT_OK: i32 = 0;
pub const EXIT_MAX_ITER: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub const TRACE_HEADER: &str = "iter,objective,step_norm,rel_change,seconds";

#[derive(Debug, Parser)]
#[command(name = "cherrynet", version, about = "iFCTN decomposition and tensor completion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random iFCTN ground-truth tensor.
    Synth(SynthArgs),
    /// Generate a random-missing or fiber-missing observation mask.
    Mask(MaskArgs),
    /// Complete a partially observed tensor with the PAM solver.
    Complete(CompleteArgs),
    /// Compare a recovered tensor with the ground truth.
    Eval(EvalArgs),
    /// Print storage cost of iFCTN / FCTN / Tucker / TT models.
    Params(ParamsArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Comma-separated dimensions, e.g. 12,12,12.
    #[arg(long)]
    pub shape: String,
    /// iFCTN ranks: upper triangle "2,2,2" or full rows "0,2,2;2,0,2;2,2,0".
    #[arg(long)]
    pub ranks: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Factor entries are drawn from U[0, init-scale).
    #[arg(long, default_value_t = 1.0)]
    pub init_scale: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also dump the generating factors.
    #[arg(long)]
    pub factors_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Random,
    Fiber,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// Comma-separated dimensions.
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    pub shape: Option<String>,
    /// Take the shape from an existing tensor file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = KindArg::Random)]
    pub kind: KindArg,
    /// Fraction of entries (random) or fibers (fiber) to remove, in [0, 1).
    #[arg(long)]
    pub rate: f64,
    /// 1-based mode along which whole fibers are removed (default: last mode).
    #[arg(long)]
    pub fiber_mode: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TraceClock {
    /// Wall-clock seconds since the solve started.
    Wall,
    /// Write 0 in the seconds column so trace files are reproducible.
    None,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    /// Observed tensor (entries outside the mask are ignored).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// 0/1 mask file, 1 = observed.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub ranks: Option<String>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-iteration CSV trace.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, env = "CHERRYNET_THREADS")]
    pub threads: Option<usize>,
    /// key=value file with any of the options above.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Abort (exit 3) if an iteration violates the sufficient-decrease bound.
    #[arg(long)]
    pub assert_decrease: bool,
    #[arg(long, value_enum)]
    pub trace_clock: Option<TraceClock>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub recovered: PathBuf,
    /// Observation mask; required for rmse.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Comma-separated subset of psnr,ssim,rse,rmse.
    #[arg(long, default_value = "psnr,ssim,rse,rmse")]
    pub metrics: String,
    /// Print key=value lines at full precision.
    #[arg(long)]
    pub kv: bool,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long)]
    pub shape: String,
    /// iFCTN rank matrix (same syntax as `complete --ranks`).
    #[arg(long)]
    pub ranks: Option<String>,
    /// FCTN rank matrix, same syntax.
    #[arg(long)]
    pub fctn_ranks: Option<String>,
    /// Tucker ranks, one per mode.
    #[arg(long)]
    pub tucker_ranks: Option<String>,
    /// TT interior ranks, N-1 entries.
    #[arg(long)]
    pub tt_ranks: Option<String>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_IO } else { EXIT_OK };
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
            } else {
                let _ = write!(out, "{}", e.render());
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Mask(a) => cmd_mask(&a, out),
        Command::Complete(a) => cmd_complete(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Params(a) => cmd_params(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_invariant_violation() {
                EXIT_INVARIANT
            } else {
                EXIT_IO
            }
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<i32> {
    let shape = io::parse_usize_list(&a.shape, "shape")?;
    let ranks = io::parse_ranks(&a.ranks, shape.len())?;
    if !(a.init_scale >= 0.0 && a.init_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid init-scale {}", a.init_scale)));
    }
    let g = init_factors(&shape, &ranks, a.seed, a.init_scale)?;
    let x = ifctn_reconstruct(&g);
    io::write_tensor(&a.out, &x)?;
    if let Some(p) = &a.factors_out {
        io::write_factors(p, &g)?;
    }
    emit(
        out,
        &format!(
            "wrote {} ({} entries, {} parameters)\n",
            a.out.display(),
            x.len(),
            g.param_count()
        ),
    )?;
    Ok(EXIT_OK)
}

pub fn cmd_mask(a: &MaskArgs, out: &mut dyn Write) -> Result<i32> {
    let shape = match (&a.shape, &a.input) {
        (Some(s), _) => io::parse_usize_list(s, "shape")?,
        (None, Some(p)) => io::read_tensor(p)?.shape().to_vec(),
        (None, None) => return Err(Error::InvalidArgument("--shape or --input is required".into())),
    };
    let fiber_mode = match a.fiber_mode {
        Some(0) => return Err(Error::InvalidArgument("--fiber-mode is 1-based".into())),
        Some(m) => m - 1,
        None => shape.len() - 1,
    };
    let spec = MaskSpec {
        kind: match a.kind {
            KindArg::Random => MaskKind::Random,
            KindArg::Fiber => MaskKind::Fiber,
        },
        rate: a.rate,
        fiber_mode,
        seed: a.seed,
    };
    let mask = gen_mask(&shape, &spec)?;
    io::write_mask(&a.out, &mask)?;
    emit(
        out,
        &format!(
            "wrote {}: {} observed, {} missing\n",
            a.out.display(),
            mask.observed_count(),
            mask.missing_count()
        ),
    )?;
    Ok(EXIT_OK)
}

/// Fully resolved settings of a `complete` run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub solver: SolverConfig,
    pub input: PathBuf,
    pub mask: PathBuf,
    pub ranks: String,
    pub out: PathBuf,
    pub trace: Option<PathBuf>,
    pub trace_clock: TraceClock,
}

fn lookup<T: FromStr>(file: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    file.get(key)
        .map(|v| {
            v.parse::<T>().map_err(|_| {
                Error::InvalidArgument(format!("config key {key}: cannot parse {v:?}"))
            })
        })
        .transpose()
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Some(true),
        "0" | "false" | "no" | "off" => Some(false),
        _ => None,
    }
}

const CONFIG_KEYS: &[&str] = &[
    "input",
    "mask",
    "ranks",
    "rho",
    "max-iter",
    "eps",
    "seed",
    "init-scale",
    "out",
    "trace",
    "threads",
    "assert-decrease",
    "trace-clock",
];

/// Merges flags, the optional config file and defaults (in that order).
pub fn resolve_run_config(a: &CompleteArgs) -> Result<RunConfig> {
    let file = match &a.config {
        Some(p) => io::read_config(p)?,
        None => BTreeMap::new(),
    };
    if let Some(k) = file.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
        return Err(Error::InvalidArgument(format!("unknown config key {k:?}")));
    }
    let d = SolverConfig::default();
    let required = |flag: &Option<PathBuf>, key: &str| -> Result<PathBuf> {
        flag.clone()
            .or_else(|| file.get(key).map(PathBuf::from))
            .ok_or_else(|| Error::InvalidArgument(format!("--{key} is required")))
    };
    let assert_decrease = if a.assert_decrease {
        true
    } else {
        match file.get("assert-decrease") {
            Some(v) => parse_bool(v).ok_or_else(|| {
                Error::InvalidArgument(format!("config key assert-decrease: cannot parse {v:?}"))
            })?,
            None => false,
        }
    };
    let trace_clock = match a.trace_clock {
        Some(c) => c,
        None => match file.get("trace-clock").map(String::as_str) {
            None | Some("wall") => TraceClock::Wall,
            Some("none") => TraceClock::None,
            Some(v) => {
                return Err(Error::InvalidArgument(format!(
                    "config key trace-clock: expected wall or none, got {v:?}"
                )))
            }
        },
    };
    let solver = SolverConfig {
        rho: a.rho.or(lookup(&file, "rho")?).unwrap_or(d.rho),
        max_iter: a.max_iter.or(lookup(&file, "max-iter")?).unwrap_or(d.max_iter),
        eps: a.eps.or(lookup(&file, "eps")?).unwrap_or(d.eps),
        seed: a.seed.or(lookup(&file, "seed")?).unwrap_or(d.seed),
        init_scale: a.init_scale.or(lookup(&file, "init-scale")?),
        assert_decrease,
        threads: a.threads.or(lookup(&file, "threads")?).unwrap_or(d.threads),
    };
    solver.validate()?;
    Ok(RunConfig {
        solver,
        input: required(&a.input, "input")?,
        mask: required(&a.mask, "mask")?,
        ranks: a
            .ranks
            .clone()
            .or_else(|| file.get("ranks").cloned())
            .ok_or_else(|| Error::InvalidArgument("--ranks is required".into()))?,
        out: required(&a.out, "out")?,
        trace: a.trace.clone().or_else(|| file.get("trace").map(PathBuf::from)),
        trace_clock,
    })
}

pub fn format_trace(report: &SolveReport, clock: TraceClock) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for row in report.trace() {
        let secs = match clock {
            TraceClock::Wall => format!("{:.6}", row.seconds),
            TraceClock::None => "0".to_string(),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            row.iter,
            io::format_value(row.objective),
            io::format_value(row.step_norm),
            io::format_value(row.rel_change),
            secs
        );
    }
    s
}

pub fn cmd_complete(a: &CompleteArgs, out: &mut dyn Write) -> Result<i32> {
    let rc = resolve_run_config(a)?;
    let s = &rc.solver;
    emit(
        out,
        &format!(
            "rho={} max_iter={} eps={:e} seed={} threads={}\n",
            s.rho, s.max_iter, s.eps, s.seed, s.threads
        ),
    )?;
    let observed = io::read_tensor(&rc.input)?;
    let mask = io::read_mask(&rc.mask)?;
    let ranks = io::parse_ranks(&rc.ranks, observed.order())?;
    let problem = CompletionProblem::new(observed, mask, ranks)?;
    let report = pam_solve(&problem, &rc.solver)?;

    // Render everything before touching the filesystem.
    let tensor_text = io::format_tensor(&report.x);
    let trace_text = rc.trace.as_ref().map(|_| format_trace(&report, rc.trace_clock));
    io::write_atomic(&rc.out, tensor_text.as_bytes())?;
    if let (Some(p), Some(t)) = (&rc.trace, trace_text) {
        io::write_atomic(p, t.as_bytes())?;
    }
    emit(
        out,
        &format!(
            "iterations={} converged={} objective={:e}\n",
            report.iterations,
            report.converged,
            report.objective_trace.last().copied().unwrap_or(report.initial_objective)
        ),
    )?;
    Ok(if report.converged { EXIT_OK } else { EXIT_MAX_ITER })
}

fn fmt4(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "INF".to_string()
    } else {
        format!("{v:.4}")
    }
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let wanted: Vec<String> = a
        .metrics
        .split(',')
        .map(|m| m.trim().to_ascii_lowercase())
        .filter(|m| !m.is_empty())
        .collect();
    if let Some(bad) = wanted.iter().find(|m| !["psnr", "ssim", "rse", "rmse"].contains(&m.as_str())) {
        return Err(Error::InvalidArgument(format!("unknown metric {bad:?}")));
    }
    if wanted.iter().any(|m| m == "rmse") && a.mask.is_none() {
        return Err(Error::InvalidArgument(
            "rmse needs --mask: it averages over the missing entries".into(),
        ));
    }
    let truth = io::read_tensor(&a.truth)?;
    let recovered = io::read_tensor(&a.recovered)?;
    let mask = a.mask.as_ref().map(io::read_mask).transpose()?;
    let mut text = String::new();
    for m in &wanted {
        let v = match m.as_str() {
            "psnr" => psnr(&truth, &recovered)?,
            "ssim" => ssim(&truth, &recovered)?,
            "rse" => rse(&truth, &recovered)?,
            _ => rmse(&truth, &recovered, mask.as_ref().expect("checked above"))?,
        };
        if a.kv {
            let _ = writeln!(text, "{m}={v}");
        } else {
            let _ = writeln!(text, "{m} {}", fmt4(v));
        }
    }
    emit(out, &text)?;
    Ok(EXIT_OK)
}

fn model_line(shape: &[usize], model: &ModelRanks) -> Result<String> {
    let count = param_count(shape, model)?;
    let pct = 100.0 * count as f64 / numel(shape) as f64;
    Ok(format!("{} {} ({:.2}%)\n", model.name(), count, pct))
}

pub fn cmd_params(a: &ParamsArgs, out: &mut dyn Write) -> Result<i32> {
    let shape = io::parse_usize_list(&a.shape, "shape")?;
    let n = shape.len();
    let mut models = Vec::new();
    if let Some(r) = &a.ranks {
        models.push(ModelRanks::IFctn(io::parse_ranks(r, n)?));
    }
    if let Some(r) = &a.fctn_ranks {
        models.push(ModelRanks::Fctn(io::parse_ranks(r, n)?));
    }
    if let Some(r) = &a.tucker_ranks {
        models.push(ModelRanks::Tucker(io::parse_usize_list(r, "Tucker rank")?));
    }
    if let Some(r) = &a.tt_ranks {
        models.push(ModelRanks::Tt(io::parse_usize_list(r, "TT rank")?));
    }
    if models.is_empty() {
        return Err(Error::InvalidArgument(
            "give at least one of --ranks, --fctn-ranks, --tucker-ranks, --tt-ranks".into(),
        ));
    }
    let mut text = String::new();
    for m in &models {
        text.push_str(&model_line(&shape, m)?);
    }
    emit(out, &text)?;
    Ok(EXIT_OK)
}

/// Entry point used by the binary.
pub fn main_with_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(args, &mut stdout.lock(), &mut stderr.lock())
}
