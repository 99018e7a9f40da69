//! The `pixiu` command line: run scenarios, verify proof logs, trace
//! lineage and stage attacks.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pixiu_core::dexec::DexecError;
use pixiu_core::proof_log::{LogError, TraceError};
use pixiu_core::scenario::{self, FaultSpec, Scenario, ScenarioError, ScenarioRun};
use pixiu_core::{trace_lineage, verify_chain, Annex, Digest, FaultBehavior, KeyDirectory, PipelinePlan, ProofLog, TaskId};

pub const EXIT_OK: u8 = 0;
pub const EXIT_REJECTED: u8 = 1;
pub const EXIT_FAILED: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_UNKNOWN: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "pixiu", version, about = "Accountable task execution over personal data stores, simulated")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write its proof log, result and report.
    Run(RunArgs),
    /// Check a proof log against a published plan.
    Verify(VerifyArgs),
    /// Walk an output digest back to the batches it came from.
    Trace(TraceArgs),
    /// Run a scenario with faults injected.
    Attack(AttackArgs),
}

#[derive(Debug, Args)]
pub struct Source {
    /// Bundled scenario: ads, dpquery, fedavg or survey.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub scenario: Option<String>,
    /// Scenario file; its data file is resolved relative to it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Noise and key seed. Falls back to PIXIU_SEED, then the scenario's own.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Print the result document instead of the report.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: Source,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub source: Source,
    /// `behavior@step`, for example `tamper_output@1`; `fake_data@i` fakes
    /// the i-th POD's data and `eavesdrop_all` taps every execution node.
    #[arg(long = "fault", required = true)]
    pub faults: Vec<String>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Defaults to the log path with `.annex` appended.
    #[arg(long)]
    pub annex: Option<PathBuf>,
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub plan: PathBuf,
    /// Instance keys; defaults to `registry.json` next to the plan.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub annex: Option<PathBuf>,
    #[arg(long)]
    pub digest: String,
    #[arg(long)]
    pub json: bool,
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

fn config(message: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_CONFIG, message: message.to_string() }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        config(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        config(e)
    }
}

impl From<LogError> for Failure {
    fn from(e: LogError) -> Self {
        config(e)
    }
}

impl From<TraceError> for Failure {
    fn from(e: TraceError) -> Self {
        Failure { code: EXIT_UNKNOWN, message: e.to_string() }
    }
}

/// Parses `args` and runs the command, writing normal output to `out` and
/// diagnostics to standard error. Returns the exit code.
pub fn main_with<I, T>(args: I, seed_env: Option<&str>, out: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, seed_env, out) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("pixiu: {}", f.message);
            f.code
        }
    }
}

pub fn dispatch(command: Command, seed_env: Option<&str>, out: &mut dyn Write) -> Result<u8, Failure> {
    match command {
        Command::Run(a) => cmd_run(&a.source, &[], seed_env, out),
        Command::Attack(a) => {
            let faults = a.faults.iter().map(|f| parse_fault(f)).collect::<Result<Vec<_>, _>>()?;
            cmd_run(&a.source, &faults, seed_env, out)
        }
        Command::Verify(a) => cmd_verify(&a, out),
        Command::Trace(a) => cmd_trace(&a, out),
    }
}

/// `name@n`. For `fake_data`, `n` is a POD index; `eavesdrop_all` takes none.
pub fn parse_fault(s: &str) -> Result<FaultSpec, Failure> {
    let (name, at) = match s.split_once('@') {
        Some((n, a)) => (n, Some(a.parse::<u64>().map_err(|_| config(format!("fault {s:?}: bad position")))?)),
        None => (s, None),
    };
    let pod = if name == "fake_data" { at } else { None };
    let mut doc = serde_json::json!({ "behavior": name });
    if name != "fake_data" {
        if let Some(step) = at {
            doc["step"] = step.into();
        }
    }
    let behavior: FaultBehavior = serde_json::from_value(doc).map_err(|e| config(format!("fault {s:?}: {e}")))?;
    Ok(FaultSpec { node: None, pod: pod.map(|p| p as usize), behavior })
}

fn load(source: &Source) -> Result<Scenario, Failure> {
    match (&source.scenario, &source.config) {
        (Some(name), None) => Ok(scenario::builtin_scenario(name)?),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
            let cfg = scenario::parse_config(&text).map_err(|e| config(format!("{}: {e}", path.display())))?;
            let data = path.parent().unwrap_or(Path::new(".")).join(&cfg.pods.data);
            let pods = fs::read_to_string(&data).map_err(|e| config(format!("{}: {e}", data.display())))?;
            Ok(Scenario { config: cfg, pods: scenario::parse_pods(&pods)? })
        }
        _ => Err(config("exactly one of --scenario and --config is required")),
    }
}

fn write_outputs(run: &ScenarioRun, dir: &Path) -> Result<(), Failure> {
    fs::write(dir.join("result.json"), run.result_json())?;
    fs::write(dir.join("report.txt"), run.report())?;
    if let Some(plan) = &run.outcome.plan {
        fs::write(dir.join("plan.json"), plan.to_json() + "\n")?;
    }
    let registry = serde_json::to_string_pretty(&run.world.net.registry()).expect("registry serialises");
    fs::write(dir.join("registry.json"), registry + "\n")?;
    let inbox = dir.join("inbox");
    if inbox.exists() {
        fs::remove_dir_all(&inbox)?;
    }
    fs::create_dir_all(&inbox)?;
    for (pod, label) in run.world.pods.iter().zip(&run.pod_labels) {
        let delivered: Vec<&[u8]> = pod.inbox.iter().filter(|m| m.first() == Some(&1)).map(|m| &m[1..]).collect();
        if !delivered.is_empty() {
            fs::write(inbox.join(format!("{label}.txt")), delivered.join(&b"\n"[..]))?;
        }
    }
    Ok(())
}

pub fn cmd_run(source: &Source, extra: &[FaultSpec], seed_env: Option<&str>, out: &mut dyn Write) -> Result<u8, Failure> {
    let mut sc = load(source)?;
    sc.config.faults.extend_from_slice(extra);
    let seed = scenario::resolve_seed(source.seed, seed_env, sc.config.seed)?;
    fs::create_dir_all(&source.out)?;
    let log = ProofLog::create(&source.out.join("proofs.log"))?;
    let annex = Annex::create(&source.out.join("proofs.log.annex"))?;
    let run = scenario::run_scenario(&sc, seed, log, annex)?;
    write_outputs(&run, &source.out)?;
    let shown = if source.json { run.result_json() } else { run.report() };
    out.write_all(shown.as_bytes())?;
    match &run.outcome.result {
        Ok(_) => Ok(EXIT_OK),
        Err(e @ (DexecError::Syntax(_) | DexecError::MissingDpGate | DexecError::InvalidPlan(_))) => Err(config(e)),
        Err(e) => {
            eprintln!("pixiu: {e}");
            Ok(EXIT_FAILED)
        }
    }
}

fn annex_path(log: &Path, annex: &Option<PathBuf>) -> PathBuf {
    annex.clone().unwrap_or_else(|| {
        let mut p = log.as_os_str().to_owned();
        p.push(".annex");
        PathBuf::from(p)
    })
}

fn read_logs(log: &Path, annex: &Option<PathBuf>) -> Result<(ProofLog, Annex), Failure> {
    let text = fs::read_to_string(log).map_err(|e| config(format!("{}: {e}", log.display())))?;
    let proofs = ProofLog::parse(&text).map_err(|e| config(format!("{}: {e}", log.display())))?;
    let path = annex_path(log, annex);
    let records = match fs::read_to_string(&path) {
        Ok(t) => Annex::parse(&t).map_err(|e| config(format!("{}: {e}", path.display())))?,
        Err(e) if annex.is_none() && e.kind() == std::io::ErrorKind::NotFound => Annex::in_memory(),
        Err(e) => return Err(config(format!("{}: {e}", path.display()))),
    };
    Ok((proofs, records))
}

pub fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<u8, Failure> {
    let task = TaskId::from_hex(&a.task).map_err(|e| config(format!("--task: {e}")))?;
    let plan_text = fs::read_to_string(&a.plan).map_err(|e| config(format!("{}: {e}", a.plan.display())))?;
    let plan = PipelinePlan::from_json(&plan_text).map_err(|e| config(format!("{}: {e}", a.plan.display())))?;
    let reg_path = a.registry.clone().unwrap_or_else(|| a.plan.with_file_name("registry.json"));
    let reg_text = fs::read_to_string(&reg_path).map_err(|e| config(format!("{}: {e}", reg_path.display())))?;
    let registry: KeyDirectory = serde_json::from_str(&reg_text).map_err(|e| config(format!("{}: {e}", reg_path.display())))?;
    let (proofs, annex) = read_logs(&a.log, &a.annex)?;
    let report = verify_chain(&proofs.entries(), &annex.entries(), task, &plan, &registry)?;
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("report serialises"))?;
    } else {
        out.write_all(report.render().as_bytes())?;
    }
    Ok(if report.all_ok() { EXIT_OK } else { EXIT_REJECTED })
}

pub fn cmd_trace(a: &TraceArgs, out: &mut dyn Write) -> Result<u8, Failure> {
    let digest = Digest::from_hex(&a.digest).map_err(|e| config(format!("--digest: {e}")))?;
    let (proofs, annex) = read_logs(&a.log, &a.annex)?;
    let tree = trace_lineage(&proofs.entries(), &annex.entries(), digest)?;
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&tree).expect("tree serialises"))?;
    } else {
        out.write_all(tree.render().as_bytes())?;
    }
    Ok(EXIT_OK)
}
