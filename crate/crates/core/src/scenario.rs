//! Scenario configuration, fixture loading, world construction and the
//! consumer-facing result and report renderings.
//!
//! A scenario is a TOML file plus a line-delimited JSON file of PODs:
//!
//! ```text
//! {"pod": "pod-<hex>", "tags": ["shopper"], "records": [
//!     {"source": "hardware_signed", "signer": "shop-a", "data": {...}}]}
//! ```
//!
//! Signed records are signed at load time by the named source, whose key is
//! derived from its name alone.

use std::fmt::Write as _;

use serde::Deserialize;
use thiserror::Error;

use crate::codec::Encoder;
use crate::crypto::{hash, Digest, KeyId, KeyPair, TaskId};
use crate::data_prover::{DataRecord, SourceKind};
use crate::dexec::{execute_task, Env, Party, Pod, TaskCode, TaskOutcome, TaskResult, TaskSpec};
use crate::dp_gate::BudgetLedger;
use crate::netsim::{attack_cost_report, spawn_network, FaultBehavior, NetError, Network, NetworkConfig, NodeId, Role};
use crate::proof_log::{Annex, ProofLog};
use crate::taskdsl::{record_from_json, Value};
use crate::trust_lambda::{LambdaKind, NoiseMode};

pub const SCENARIOS: [&str; 4] = ["ads", "dpquery", "fedavg", "survey"];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

fn config_error(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Config { path: path.into(), message: message.into() }
}

impl From<NetError> for ScenarioError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Config { path, message } => ScenarioError::Config { path, message },
            other => config_error("faults", other.to_string()),
        }
    }
}

fn default_budget() -> f64 {
    10.0
}

fn default_pod_cost() -> u64 {
    5
}

fn default_epsilon() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PodsConfig {
    /// Data file, relative to the config file.
    pub data: String,
    #[serde(default = "default_budget")]
    pub budget: f64,
    #[serde(default = "default_pod_cost")]
    pub attack_cost: u64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    /// Task source in the task language; exclusive with `builtin`.
    pub code: Option<String>,
    /// `"fedavg"`, with `dim`, `lo` and `hi`.
    pub builtin: Option<String>,
    pub dim: Option<u32>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    /// Content delivered to every POD a filter task matches.
    pub delivery: Option<String>,
    #[serde(default)]
    pub selector: Vec<String>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub noise: Option<NoiseMode>,
    #[serde(default = "default_true")]
    pub require_dp: bool,
    #[serde(default)]
    pub signers: Vec<String>,
    #[serde(default)]
    pub exclude_alleged: bool,
    #[serde(default)]
    pub high_importance: Vec<LambdaKind>,
}

/// One configured fault. With neither `node` nor `pod`, a step fault goes
/// to whichever node runs that step and `eavesdrop_all` to every execution
/// node.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct FaultSpec {
    pub node: Option<NodeId>,
    /// POD index in the data file, for `fake_data`.
    pub pod: Option<usize>,
    #[serde(flatten)]
    pub behavior: FaultBehavior,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: Option<u64>,
    pub network: NetworkConfig,
    pub pods: PodsConfig,
    pub task: TaskConfig,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordLine {
    pub source: SourceKind,
    pub signer: Option<String>,
    pub data: serde_json::Map<String, serde_json::Value>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PodLine {
    pub pod: String,
    #[serde(default)]
    pub tags: Vec<String>,
    pub records: Vec<RecordLine>,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub pods: Vec<PodLine>,
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    toml::from_str(text).map_err(|e| {
        let path = e.span().map(|s| format!("config at byte {}", s.start)).unwrap_or_else(|| "config".into());
        config_error(path, e.message().to_owned())
    })
}

pub fn parse_pods(text: &str) -> Result<Vec<PodLine>, ScenarioError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| config_error(format!("pods line {}", i + 1), e.to_string())))
        .collect()
}

pub fn load_scenario(config_text: &str, pods_text: &str) -> Result<Scenario, ScenarioError> {
    Ok(Scenario { config: parse_config(config_text)?, pods: parse_pods(pods_text)? })
}

macro_rules! fixture {
    ($name:literal) => {
        (
            include_str!(concat!("../../../fixtures/", $name, "/scenario.toml")),
            include_str!(concat!("../../../fixtures/", $name, "/pods.jsonl")),
        )
    };
}

/// The bundled fixture for a named scenario: config text and POD data.
pub fn builtin(name: &str) -> Option<(&'static str, &'static str)> {
    Some(match name {
        "ads" => fixture!("ads"),
        "dpquery" => fixture!("dpquery"),
        "fedavg" => fixture!("fedavg"),
        "survey" => fixture!("survey"),
        _ => return None,
    })
}

pub fn builtin_scenario(name: &str) -> Result<Scenario, ScenarioError> {
    let (c, p) = builtin(name).ok_or_else(|| config_error("scenario", format!("unknown scenario {name:?}")))?;
    load_scenario(c, p)
}

/// Command line first, then the environment, then the config file.
pub fn resolve_seed(cli: Option<u64>, env: Option<&str>, config: Option<u64>) -> Result<u64, ScenarioError> {
    if let Some(s) = cli {
        return Ok(s);
    }
    if let Some(e) = env {
        return e.trim().parse().map_err(|_| config_error("PIXIU_SEED", format!("not an integer: {e:?}")));
    }
    Ok(config.unwrap_or(0))
}

pub fn task_id_for(scenario: &str, seed: u64) -> TaskId {
    let mut enc = Encoder::new();
    enc.str("pixiu/task-id/v1").str(scenario).u64(seed);
    let mut id = [0u8; 16];
    id.copy_from_slice(&hash(&enc.into_bytes()).0[..16]);
    TaskId(id)
}

fn derived_key(label: &str, name: &str, seed: Option<u64>) -> KeyPair {
    let mut enc = Encoder::new();
    enc.str(label).str(name);
    if let Some(s) = seed {
        enc.u64(s);
    }
    KeyPair::from_seed(hash(&enc.into_bytes()).0)
}

/// Key of a named data source. Independent of the run seed, so signatures
/// are stable across runs.
pub fn signer_key(name: &str) -> KeyPair {
    derived_key("pixiu/signer/v1", name, None)
}

/// Every party of one simulation.
pub struct World {
    pub net: Network,
    pub owner: Party,
    pub consumer: Party,
    pub pods: Vec<Pod>,
    pub log: ProofLog,
    pub annex: Annex,
    pub ledger: BudgetLedger,
    pub seed: u64,
}

impl World {
    pub fn new(network: &NetworkConfig, seed: u64) -> Result<Self, NetError> {
        Self::with_logs(network, seed, ProofLog::in_memory(), Annex::in_memory())
    }

    pub fn with_logs(network: &NetworkConfig, seed: u64, log: ProofLog, annex: Annex) -> Result<Self, NetError> {
        let mut net = spawn_network(network, seed)?;
        let owner_node = net.add_party(Role::Owner, "owner", network.mid_cost);
        let consumer_node = net.add_party(Role::Consumer, "consumer", network.mid_cost);
        Ok(Self {
            owner: Party::new(derived_key("pixiu/owner/v1", "owner", Some(seed)), owner_node),
            consumer: Party::new(derived_key("pixiu/consumer/v1", "consumer", Some(seed)), consumer_node),
            net,
            pods: Vec::new(),
            log,
            annex,
            ledger: BudgetLedger::default(),
            seed,
        })
    }

    pub fn add_pod(&mut self, label: &str, tags: Vec<String>, records: Vec<DataRecord>, budget: f64, attack_cost: u64) -> KeyId {
        let node = self.net.add_party(Role::Pod, label, attack_cost);
        let keypair = derived_key("pixiu/pod/v1", label, Some(self.seed));
        let id = keypair.public();
        let records = records.into_iter().map(|mut r| {
            r.pod_id = id;
            r
        });
        self.pods.push(Pod::new(keypair, node, tags, records.collect()));
        self.ledger.fund(id, budget);
        id
    }

    pub fn env(&self) -> Env<'_> {
        Env { net: &self.net, log: &self.log, annex: &self.annex, ledger: Some(&self.ledger), seed: self.seed }
    }

    pub fn execute(&mut self, spec: &TaskSpec, step_faults: &[FaultBehavior]) -> TaskOutcome {
        let env = Env { net: &self.net, log: &self.log, annex: &self.annex, ledger: Some(&self.ledger), seed: self.seed };
        execute_task(&env, spec, &mut self.pods, &mut self.consumer, &self.owner, step_faults)
    }
}

/// Builds records for one POD line, signing what claims a source.
pub fn pod_records(line: &PodLine, index: usize) -> Result<Vec<DataRecord>, ScenarioError> {
    line.records
        .iter()
        .enumerate()
        .map(|(j, r)| {
            let path = || format!("pods line {} record {}", index + 1, j + 1);
            let payload = record_from_json(&r.data).map_err(|e| config_error(path(), e))?;
            let placeholder = KeyId([0u8; 32]);
            match (r.source, &r.signer) {
                (SourceKind::Alleged, None) => Ok(DataRecord::alleged(placeholder, payload)),
                (SourceKind::Alleged, Some(_)) => Err(config_error(path(), "alleged records have no signer")),
                (kind, Some(name)) => Ok(DataRecord::signed(placeholder, payload, kind, &signer_key(name))),
                (_, None) => Err(config_error(path(), "signed records need a signer")),
            }
        })
        .collect()
}

fn task_spec(config: &ScenarioConfig, task_id: TaskId, consumer: KeyId) -> Result<TaskSpec, ScenarioError> {
    let t = &config.task;
    let code = match (&t.code, t.builtin.as_deref()) {
        (Some(src), None) => TaskCode::Dsl { source: src.clone(), delivery: t.delivery.clone() },
        (None, Some("fedavg")) => {
            let need = |v: Option<f64>, f: &str| v.ok_or_else(|| config_error(format!("task.{f}"), "required by fedavg"));
            let dim = t.dim.ok_or_else(|| config_error("task.dim", "required by fedavg"))?;
            TaskCode::FedAvg { dim, lo: need(t.lo, "lo")?, hi: need(t.hi, "hi")? }
        }
        (None, Some(other)) => return Err(config_error("task.builtin", format!("unknown builtin {other:?}"))),
        (Some(_), Some(_)) => return Err(config_error("task", "code and builtin are exclusive")),
        (None, None) => return Err(config_error("task", "either code or builtin is required")),
    };
    if !(t.epsilon > 0.0 && t.epsilon.is_finite()) {
        return Err(config_error("task.epsilon", "must be positive"));
    }
    Ok(TaskSpec {
        task_id,
        consumer,
        code,
        selector: t.selector.clone(),
        epsilon: t.epsilon,
        noise: t.noise.unwrap_or(NoiseMode::Laplace),
        require_dp: t.require_dp,
        signers: t.signers.iter().map(|s| signer_key(s).public()).collect(),
        exclude_alleged: t.exclude_alleged,
        high_importance: t.high_importance.clone(),
    })
}

/// Everything a finished (or failed) scenario run leaves behind.
pub struct ScenarioRun {
    pub name: String,
    pub seed: u64,
    pub world: World,
    pub spec: TaskSpec,
    pub outcome: TaskOutcome,
    /// Labels of the PODs, in data-file order.
    pub pod_labels: Vec<String>,
}

/// Builds the world for `scenario` and runs its task once.
pub fn run_scenario(scenario: &Scenario, seed: u64, log: ProofLog, annex: Annex) -> Result<ScenarioRun, ScenarioError> {
    let config = &scenario.config;
    let mut world = World::with_logs(&config.network, seed, log, annex)?;
    let mut pod_labels = Vec::with_capacity(scenario.pods.len());
    for (i, line) in scenario.pods.iter().enumerate() {
        if pod_labels.contains(&line.pod) {
            return Err(config_error(format!("pods line {}", i + 1), format!("duplicate pod {:?}", line.pod)));
        }
        let records = pod_records(line, i)?;
        world.add_pod(&line.pod, line.tags.clone(), records, config.pods.budget, config.pods.attack_cost);
        pod_labels.push(line.pod.clone());
    }
    let spec = task_spec(config, task_id_for(&config.name, seed), world.consumer.id())?;

    let mut step_faults = Vec::new();
    for (i, f) in config.faults.iter().enumerate() {
        let path = format!("faults[{i}]");
        match (f.node, f.pod, f.behavior) {
            (Some(node), None, b) => {
                let n = world.net.node(node).map_err(|e| config_error(format!("{path}.node"), e.to_string()))?;
                if n.role != Role::Instance {
                    return Err(config_error(format!("{path}.node"), "not an execution node"));
                }
                world.net.inject_fault(node, b)?;
            }
            (None, Some(pod), FaultBehavior::FakeData) => {
                let p = world.pods.get(pod).ok_or_else(|| config_error(format!("{path}.pod"), "no such pod"))?;
                world.net.inject_fault(p.node, FaultBehavior::FakeData)?;
            }
            (None, None, FaultBehavior::EavesdropAll) => {
                let ids: Vec<NodeId> = world.net.nodes().iter().filter(|n| n.role == Role::Instance).map(|n| n.id).collect();
                for id in ids {
                    world.net.inject_fault(id, FaultBehavior::EavesdropAll)?;
                }
            }
            (None, None, b) if b.step().is_some() => step_faults.push(b),
            _ => return Err(config_error(path, "fault needs a node, a pod or a step")),
        }
    }
    let outcome = world.execute(&spec, &step_faults);
    Ok(ScenarioRun { name: config.name.clone(), seed, world, spec, outcome, pod_labels })
}

fn value_json(v: &Option<Value>) -> serde_json::Value {
    v.as_ref().map(Value::to_json).unwrap_or(serde_json::Value::Null)
}

impl ScenarioRun {
    pub fn result(&self) -> Option<&TaskResult> {
        self.outcome.result.as_ref().ok()
    }

    pub fn proof_count(&self) -> usize {
        self.world.log.entries().iter().filter(|p| p.task_id == self.spec.task_id).count()
    }

    /// Consumer-readable result document.
    pub fn result_json(&self) -> String {
        let mut doc = serde_json::json!({
            "scenario": self.name,
            "seed": self.seed,
            "task_id": self.spec.task_id,
            "proofs": self.proof_count(),
        });
        match &self.outcome.result {
            Ok(r) => {
                doc["status"] = "ok".into();
                doc["released_value"] = value_json(&r.released_value);
                doc["raw_release"] = r.raw_release.to_json();
                doc["noised"] = r.noised.into();
                doc["alleged"] = r.alleged_flag.into();
                doc["auth_summary"] = serde_json::to_value(r.auth_summary).expect("counts serialise");
                doc["deliveries"] = r.deliveries.into();
                doc["output_digest"] = r.output_digest.to_hex().into();
                doc["proof_head"] = r.proof_head.to_hex().into();
                doc["input_batches"] = r.batch_digests.iter().map(Digest::to_hex).collect::<Vec<_>>().into();
            }
            Err(e) => {
                doc["status"] = "failed".into();
                doc["error"] = e.to_string().into();
            }
        }
        serde_json::to_string_pretty(&doc).expect("json serialises") + "\n"
    }

    /// Human-readable summary for the consumer.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario {} (seed {})", self.name, self.seed);
        let _ = writeln!(s, "task {}", self.spec.task_id);
        if let Some(plan) = &self.outcome.plan {
            s.push_str("pipeline:\n");
            for (i, step) in plan.steps.iter().enumerate() {
                let node = step.node.and_then(|n| self.world.net.node(n).ok());
                let place = node.map(|n| format!("{} ({:?})", n.name, n.security_level)).unwrap_or_else(|| "unassigned".into());
                let _ = writeln!(s, "  step {i} {} on {place}", step.kind);
            }
            let nodes: Vec<NodeId> = plan.steps.iter().filter_map(|st| st.node).collect();
            let full = attack_cost_report(&self.world.net, plan, &nodes);
            let _ = writeln!(s, "cost to compromise every step: {}", full.cost);
        }
        let _ = writeln!(s, "proofs logged: {}", self.proof_count());
        match &self.outcome.result {
            Ok(r) => {
                let shown = r.released_value.as_ref().map(|v| v.to_json().to_string()).unwrap_or_else(|| "undefined".into());
                let _ = writeln!(s, "released value: {shown}{}", if r.noised { " (noised)" } else { " (exact)" });
                let a = r.auth_summary;
                let _ = writeln!(s, "records: {} verified, {} alleged, {} rejected", a.verified, a.alleged, a.rejected);
                if r.alleged_flag {
                    s.push_str("result includes alleged data\n");
                }
                if r.deliveries > 0 {
                    let _ = writeln!(s, "sealed deliveries: {} (one per participating POD, equal length)", r.deliveries);
                }
                let _ = writeln!(s, "output digest: {}", r.output_digest);
            }
            Err(e) => {
                let _ = writeln!(s, "FAILED: {e}");
            }
        }
        s
    }
}
