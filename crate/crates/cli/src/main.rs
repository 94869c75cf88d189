use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use ef21lab::algorithms::{self, RunFailure};
use ef21lab::datasets::{self, synth, SynthConfig};
use ef21lab::kv::{self, Fields, KvConfig, Section};
use ef21lab::metrics::{self, RunTrace};
use ef21lab::smoothness::SmoothnessReport;
use ef21lab::verify::{self, VerifyConfig};
use ef21lab::{Error, Problem, RunConfig};

// stdout may be a closed pipe (`| head`); results are already on disk by then
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

const EXIT_CONFIG: u8 = 1;
const EXIT_GENERATION: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_VERIFICATION: u8 = 4;

/// Simulator for distributed gradient methods with Top-K compression and error feedback.
#[derive(Parser)]
#[command(name = "ef21lab", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file with `key = value` lines and `[section]` headers.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides one key of the active section (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a problem and write problem.json and smoothness.json.
    Generate,
    /// Run one method on a problem and write trace.csv and trace.json.
    Run,
    /// Run the cartesian product of comma-separated values in parallel.
    Sweep,
    /// Compare traces written by `run` or `sweep`.
    Compare {
        /// Directories holding trace.csv and trace.json.
        #[arg(required = true, num_args = 2..)]
        traces: Vec<PathBuf>,
    },
    /// Run the inequality batteries.
    Verify {
        /// `all` or a comma-separated list of batteries.
        #[arg(long)]
        scope: Option<String>,
    },
}

impl Command {
    fn section(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Run => "run",
            Command::Sweep => "sweep",
            Command::Compare { .. } => "compare",
            Command::Verify { .. } => "verify",
        }
    }
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::GenerationFailed { .. } => EXIT_GENERATION,
            Error::Diverged(_) => EXIT_DIVERGENCE,
            Error::Verification(_) => EXIT_VERIFICATION,
            _ => EXIT_CONFIG,
        };
        Failure { code, message: e.to_string() }
    }
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {}", e.message);
        return ExitCode::from(e.code);
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("EF21LAB_THREADS") else { return Ok(()) };
    let threads: usize = raw
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| fail(EXIT_CONFIG, format!("EF21LAB_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| fail(EXIT_CONFIG, e.to_string()))
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let section = resolve_section(&cli.common, cli.command.section())?;
    let out = &cli.common.out;
    match &cli.command {
        Command::Generate => cmd_generate(section, out),
        Command::Run => cmd_run(section, out),
        Command::Sweep => cmd_sweep(section, out),
        Command::Compare { traces } => cmd_compare(section, traces, out),
        Command::Verify { scope } => cmd_verify(section, scope.as_deref(), out),
    }
}

/// Config file section, then `--seed`, then `--set` overrides.
fn resolve_section(common: &Common, name: &str) -> Result<Section, Failure> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
            KvConfig::parse(&text)?
        }
        None => KvConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set(name, "seed", &seed.to_string());
    }
    for assignment in &common.set {
        let (k, v) = kv::parse_assignment(assignment)?;
        cfg.set(name, &k, &v);
    }
    Ok(cfg.section(name))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
    }
    std::fs::write(path, contents).map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    Ok(serde_json::to_string_pretty(value).map_err(Error::from)? + "\n")
}

fn cmd_generate(section: Section, out: &Path) -> Result<(), Failure> {
    let mut fields = Fields::new(section.clone());
    let kind = fields.take_str("kind").unwrap_or_else(|| "synth".into());
    let regularizer = fields.take_str("regularizer").unwrap_or_else(|| "none".into());
    let problem = match kind.as_str() {
        "synth" => {
            let rest: Section = section.iter().filter(|(k, _)| !matches!(k.as_str(), "kind" | "regularizer")).map(|(k, v)| (k.clone(), v.clone())).collect();
            let cfg = SynthConfig::from_section(rest)?;
            datasets::generate::<f64>(&cfg)?
        }
        "libsvm" => {
            let path: String = fields.take_str("path").ok_or_else(|| fail(EXIT_CONFIG, "libsvm generation needs 'path'"))?;
            let clients: usize = fields.take("n")?.unwrap_or(300);
            let seed: u64 = fields.take("seed")?.unwrap_or(0);
            fields.finish()?;
            let text = std::fs::read_to_string(&path).map_err(|e| fail(EXIT_CONFIG, format!("{path}: {e}")))?;
            let ds = datasets::parse_libsvm::<f64>(&text)?;
            datasets::partition_even(&ds, clients, seed)?
        }
        other => return Err(fail(EXIT_CONFIG, format!("unknown problem kind '{other}' (synth | libsvm)"))),
    };
    let problem = match regularizer.as_str() {
        "none" => problem,
        "auto" => {
            let lam = synth::default_regularizer_weight(&problem);
            datasets::add_nonconvex_regularizer(problem, lam)?
        }
        raw => {
            let lam: f64 = raw.parse().map_err(|_| fail(EXIT_CONFIG, format!("invalid regularizer '{raw}' (none | auto | <weight>)")))?;
            datasets::add_nonconvex_regularizer(problem, lam)?
        }
    };
    let report = SmoothnessReport::analyze(&problem)?;
    write_file(&out.join("problem.json"), &to_json(&problem)?)?;
    write_file(&out.join("smoothness.json"), &to_json(&report)?)?;
    write_file(&out.join("generate.conf"), &kv::render("generate", &section))?;
    let p = &problem.pattern;
    out!("problem  {}", problem.label);
    out!("n = {}  d = {}  c = {}  r = {}  |Z| = {}", p.n(), p.d(), p.c(), p.r(), p.zero_count());
    out!("L = {:.6e}  L_tilde = {:.6e}", report.l, report.l_tilde);
    if let Some(exact) = report.l_plus_exact {
        out!("L_plus exact = {exact:.6e}");
    }
    out!("L_plus col bound = {:.6e}  min bound = {:.6e}", report.l_plus_bound_col, report.l_plus_bound_min);
    if !p.unused_columns().is_empty() {
        out!("{} features unused by every client", p.unused_columns().len());
    }
    Ok(())
}

fn load_problem(path: &Path) -> Result<Problem, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

/// Splits off the `problem` key; the rest configures the run.
fn split_problem_key(mut section: Section, out: &Path) -> (PathBuf, Section) {
    let path = section.remove("problem").map(PathBuf::from).unwrap_or_else(|| out.join("problem.json"));
    (path, section)
}

enum Outcome {
    Done(RunTrace<f64>),
    Diverged(RunTrace<f64>, String),
}

fn execute(config: &RunConfig<f64>, problem: &Problem, report: &SmoothnessReport<f64>, dir: &Path, section: &Section) -> Result<Outcome, Failure> {
    let outcome = match algorithms::run_with_report(config, problem, report) {
        Ok(t) => Outcome::Done(t),
        Err(RunFailure::Diverged { reason, trace }) => Outcome::Diverged(*trace, reason),
        Err(RunFailure::Invalid(e)) => return Err(e.into()),
    };
    let trace = match &outcome {
        Outcome::Done(t) | Outcome::Diverged(t, _) => t,
    };
    trace.save(dir, "trace")?;
    write_file(&dir.join("run.conf"), &kv::render("run", section))?;
    Ok(outcome)
}

fn cmd_run(section: Section, out: &Path) -> Result<(), Failure> {
    let (problem_path, rest) = split_problem_key(section, out);
    let config = RunConfig::<f64>::from_section(rest)?;
    let problem = load_problem(&problem_path)?;
    config.validate(problem.d())?;
    let report = SmoothnessReport::analyze(&problem)?;
    let mut resolved = config.to_section();
    resolved.insert("problem".into(), problem_path.display().to_string());
    let outcome = execute(&config, &problem, &report, out, &resolved)?;
    let (trace, diverged) = match &outcome {
        Outcome::Done(t) => (t, None),
        Outcome::Diverged(t, r) => (t, Some(r)),
    };
    let k = &trace.meta.constants;
    out!("{} with {} stepsize: gamma = {:.12e}", trace.meta.method, trace.meta.gamma_rule, k.gamma);
    out!("alpha = {:.6e}  theta = {:.6e}  beta = {:.6e}  c = {}  n = {}", k.alpha, k.theta, k.beta, k.c, k.n);
    if let Some(last) = trace.records.last() {
        out!("t = {}  f = {:.12e}  |grad f|^2 = {:.6e}", last.t, last.f, last.grad_norm_sq);
    }
    if config.method.is_ef21() && config.checks {
        let c = &trace.meta.checks;
        out!(
            "inline checks: aggregation {}/{}  subspace {}/{}  recursion {}/{}  lyapunov {}/{}",
            c.aggregation.violations, c.aggregation.checked, c.subspace.violations, c.subspace.checked,
            c.recursion.violations, c.recursion.checked, c.lyapunov.violations, c.lyapunov.checked
        );
    }
    match diverged {
        Some(reason) => Err(fail(EXIT_DIVERGENCE, format!("diverged: {reason} (partial trace kept)"))),
        None => Ok(()),
    }
}

/// Cartesian product of the comma-separated values of every key.
fn expand(section: &Section) -> Vec<Section> {
    let mut combos = vec![Section::new()];
    for (k, raw) in section {
        let values: Vec<&str> = raw.split(',').map(str::trim).collect();
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.insert(k.clone(), (*v).to_string());
                    c
                })
            })
            .collect();
    }
    combos
}

fn run_label(combo: &Section, varying: &[&String]) -> String {
    if varying.is_empty() {
        return "run".into();
    }
    varying.iter().map(|k| format!("{k}={}", combo[*k])).collect::<Vec<_>>().join("_").replace(['/', ' '], "-")
}

fn cmd_sweep(section: Section, out: &Path) -> Result<(), Failure> {
    let (problem_path, rest) = split_problem_key(section, out);
    let varying: Vec<&String> = rest.iter().filter(|(_, v)| v.contains(',')).map(|(k, _)| k).collect();
    let combos = expand(&rest);
    let configs = combos
        .iter()
        .map(|c| Ok((run_label(c, &varying), RunConfig::<f64>::from_section(c.clone())?)))
        .collect::<Result<Vec<_>, Error>>()?;
    let problem = load_problem(&problem_path)?;
    let report = SmoothnessReport::analyze(&problem)?;
    let results: Vec<Result<(String, Outcome), Failure>> = configs
        .par_iter()
        .map(|(label, cfg)| {
            let mut resolved = cfg.to_section();
            resolved.insert("problem".into(), problem_path.display().to_string());
            execute(cfg, &problem, &report, &out.join(label), &resolved).map(|o| (label.clone(), o))
        })
        .collect();
    let mut diverged = 0;
    for r in results {
        let (label, outcome) = r?;
        match outcome {
            Outcome::Done(t) => {
                let last = t.records.last().expect("initial record");
                out!("{label}: gamma = {:.6e}  final |grad f|^2 = {:.6e}", t.meta.constants.gamma, last.grad_norm_sq);
            }
            Outcome::Diverged(_, reason) => {
                diverged += 1;
                out!("{label}: diverged ({reason})");
            }
        }
    }
    if diverged > 0 {
        return Err(fail(EXIT_DIVERGENCE, format!("{diverged} of {} runs diverged", configs.len())));
    }
    Ok(())
}

fn cmd_compare(section: Section, dirs: &[PathBuf], out: &Path) -> Result<(), Failure> {
    let mut fields = Fields::new(section);
    let targets: Vec<f64> = match fields.take_str("targets") {
        Some(raw) => raw
            .split(',')
            .map(|t| t.trim().parse().map_err(|_| fail(EXIT_CONFIG, format!("invalid target '{t}'"))))
            .collect::<Result<_, _>>()?,
        None => vec![1e-2, 1e-4, 1e-6],
    };
    fields.ignore(&["seed"]);
    fields.finish()?;
    let traces = dirs.iter().map(|d| RunTrace::<f64>::load(d, "trace")).collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<String> = dirs.iter().map(|d| d.display().to_string()).collect();
    let pairs: Vec<(&str, &RunTrace<f64>)> = labels.iter().map(String::as_str).zip(&traces).collect();
    let rows = metrics::compare_runs(&pairs, &targets)?;
    out!("{:<40} {:>10} {:>12} {:>16} {:>16}", "trace", "target", "iterations", "bits_float", "bits_indexed");
    for r in &rows {
        let show = |v: Option<u64>| v.map_or_else(|| "-".into(), |x| x.to_string());
        out!(
            "{:<40} {:>10.1e} {:>12} {:>16} {:>16}{}",
            r.label, r.target, show(r.iterations.map(|i| i as u64)), show(r.bits_float), show(r.bits_indexed),
            if r.winner { "  *" } else { "" }
        );
    }
    write_file(&out.join("compare.json"), &to_json(&rows)?)
}

fn cmd_verify(section: Section, scope_flag: Option<&str>, out: &Path) -> Result<(), Failure> {
    let scope_raw = scope_flag.map(str::to_string).or_else(|| section.get("scope").cloned()).unwrap_or_else(|| "all".into());
    let scope = verify::parse_scope(&scope_raw)?;
    let cfg = VerifyConfig::from_section(section)?;
    let results = verify::run_batteries(&scope, &cfg)?;
    let mut failed = 0;
    for r in &results {
        out!("{:<12} {}  {} checks, {} failures  ({})", r.battery.name(), if r.passed() { "PASS" } else { "FAIL" }, r.checks, r.failures, r.detail);
        failed += usize::from(!r.passed());
    }
    write_file(&out.join("verify.json"), &to_json(&results)?)?;
    if failed > 0 {
        return Err(fail(EXIT_VERIFICATION, format!("{failed} of {} batteries failed", results.len())));
    }
    Ok(())
}
