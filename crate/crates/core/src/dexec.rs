//! The decentralized executor: plans a task as a chain of λ steps,
//! recruits and attests instances, distributes the edge-key chain and drives
//! the steps in order.
//!
//! Edge `i` is protected by key `K_i`: `K_0` is shared by the PODs and the
//! first step, `K_n` by the last step and the consumer, and every other key
//! by two adjacent steps. The owner forgets the keys once they are sealed to
//! their holders.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Canonical, Decode, Encoder};
use crate::crypto::{
    check_attestation, hash, seal_to, seeded_rng, CryptoError, Digest, EdgeKey, KeyId, KeyPair, SealedBlob, SecurityLevel, Signature,
    TaskId,
};
use crate::data_prover::{AuthSummary, DataRecord, SourceKind};
use crate::dp_gate::BudgetLedger;
use crate::netsim::{FaultBehavior, NetError, Network, NodeId};
use crate::proof_log::{verify_chain, Annex, AnnexRecord, ProofLog, Receipt};
use crate::taskdsl::{self, ReleaseShape, SyntaxError, Value};
use crate::trust_lambda::{
    measurement, Emit, ExecutionProof, FailureReason, KeyDelivery, LambdaFunction, LambdaInstance, LambdaKind, NoiseMode, Payload,
    ReleaseSpec, StepContext, StepError, TaskPackage,
};

#[derive(Clone, Debug, PartialEq)]
pub enum TaskCode {
    Dsl {
        source: String,
        delivery: Option<String>,
    },
    /// Element-wise average of fixed-length vectors in each record's
    /// `params` field, clipped to `[lo, hi]`.
    FedAvg {
        dim: u32,
        lo: f64,
        hi: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub consumer: KeyId,
    pub code: TaskCode,
    /// Catalog tags a POD must carry to take part; empty selects every POD.
    pub selector: Vec<String>,
    pub epsilon: f64,
    pub noise: NoiseMode,
    pub require_dp: bool,
    /// Sources the data prover trusts.
    pub signers: Vec<KeyId>,
    pub exclude_alleged: bool,
    /// Step kinds that go to high-assurance nodes first.
    pub high_importance: Vec<LambdaKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub kind: LambdaKind,
    pub fn_digest: Digest,
    pub instance: Option<KeyId>,
    pub node: Option<NodeId>,
    pub high_importance: bool,
}

/// The pipeline every party agrees on. Published without the task source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelinePlan {
    pub task_id: TaskId,
    pub consumer: Option<KeyId>,
    pub steps: Vec<PlanStep>,
    /// `K_0..K_n` once keys are distributed, otherwise empty.
    pub edge_keys: Vec<KeyId>,
    pub require_dp: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DexecError {
    #[error("task does not parse: {0}")]
    Syntax(#[from] SyntaxError),
    #[error("a privacy gate is required but the task's sensitivity is unbounded")]
    MissingDpGate,
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("not enough idle nodes for {0}")]
    InsufficientNodes(LambdaKind),
    #[error("attestation failed for instance {0}")]
    AttestationFailed(KeyId),
    #[error("step {index} failed: {reason}")]
    StepFailed { index: u32, reason: FailureReason },
    #[error("the consumer received output that differs from the final proof")]
    DeliveryMismatch,
    #[error("proof chain rejected at step {0}")]
    ChainRejected(u32),
    #[error("consumer cannot use a {0} payload")]
    UnexpectedPayload(&'static str),
    #[error("instance setup: {0}")]
    Setup(StepError),
    #[error("network: {0}")]
    Net(#[from] NetError),
    #[error("crypto: {0}")]
    Crypto(#[from] CryptoError),
    #[error("proof log: {0}")]
    Log(String),
}

impl PipelinePlan {
    /// Structural checks any party can run on a published plan.
    pub fn validate(&self) -> Result<(), DexecError> {
        let kinds: Vec<LambdaKind> = self.steps.iter().map(|s| s.kind).collect();
        if kinds.first() != Some(&LambdaKind::DataProver) {
            return Err(DexecError::InvalidPlan("the first step must be the data prover".into()));
        }
        if self.require_dp {
            let work = kinds.iter().position(|k| matches!(k, LambdaKind::TaskExec | LambdaKind::Aggregator));
            let gate = kinds.iter().rposition(|k| *k == LambdaKind::DpGate);
            match (work, gate) {
                (Some(w), Some(g)) if g > w && g == kinds.len() - 1 => {}
                _ => return Err(DexecError::InvalidPlan("a privacy gate must follow the task and emit the result".into())),
            }
        }
        if !self.edge_keys.is_empty() && self.edge_keys.len() != self.steps.len() + 1 {
            return Err(DexecError::InvalidPlan(format!("{} edge keys for {} steps", self.edge_keys.len(), self.steps.len())));
        }
        let nodes: Vec<NodeId> = self.steps.iter().filter_map(|s| s.node).collect();
        if nodes.iter().collect::<BTreeSet<_>>().len() != nodes.len() {
            return Err(DexecError::InvalidPlan("two steps share a node".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plans serialise") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self, DexecError> {
        serde_json::from_str(s).map_err(|e| DexecError::InvalidPlan(e.to_string()))
    }
}

/// Derives the pipeline and the code each step will run.
pub fn plan_pipeline(spec: &TaskSpec) -> Result<(PipelinePlan, Vec<LambdaFunction>), DexecError> {
    let emit = if spec.require_dp { Emit::Forward } else { Emit::Release };
    let mut functions = vec![LambdaFunction::DataProver { signers: spec.signers.clone(), exclude_alleged: spec.exclude_alleged }];
    let release = match &spec.code {
        TaskCode::Dsl { source, delivery } => {
            let task = taskdsl::parse(source)?;
            let release = ReleaseSpec::from_shape(task.release_shape());
            if spec.require_dp && task.release_shape() == ReleaseShape::Unbounded {
                return Err(DexecError::MissingDpGate);
            }
            functions.push(LambdaFunction::TaskExec { task, delivery: delivery.clone(), emit });
            release
        }
        TaskCode::FedAvg { dim, lo, hi } => {
            functions.push(LambdaFunction::Aggregator { dim: *dim, lo: *lo, hi: *hi, emit });
            Some(ReleaseSpec::Vector { dim: *dim, lo: *lo, hi: *hi })
        }
    };
    if spec.require_dp {
        let release = release.ok_or(DexecError::MissingDpGate)?;
        functions.push(LambdaFunction::DpGate { epsilon: spec.epsilon, release, noise: spec.noise });
    }
    let steps = functions
        .iter()
        .map(|f| {
            let kind = function_kind(f);
            PlanStep { kind, fn_digest: f.digest(), instance: None, node: None, high_importance: spec.high_importance.contains(&kind) }
        })
        .collect();
    let plan =
        PipelinePlan { task_id: spec.task_id, consumer: Some(spec.consumer), steps, edge_keys: Vec::new(), require_dp: spec.require_dp };
    plan.validate()?;
    Ok((plan, functions))
}

fn function_kind(f: &LambdaFunction) -> LambdaKind {
    match f {
        LambdaFunction::DataProver { .. } => LambdaKind::DataProver,
        LambdaFunction::TaskExec { .. } => LambdaKind::TaskExec,
        LambdaFunction::Aggregator { .. } => LambdaKind::Aggregator,
        LambdaFunction::DpGate { .. } => LambdaKind::DpGate,
        LambdaFunction::Identity => LambdaKind::TaskExec,
        LambdaFunction::Modified(inner) => function_kind(inner),
    }
}

/// Assigns each step a distinct idle node and provisions its instance.
/// High-importance steps pick first and take high-assurance nodes when any
/// are idle.
pub fn recruit_instances(plan: &PipelinePlan, net: &Network) -> Result<(PipelinePlan, Vec<LambdaInstance>), DexecError> {
    let idle = net.idle_nodes();
    let mut order: Vec<usize> = (0..plan.steps.len()).collect();
    order.sort_by_key(|i| !plan.steps[*i].high_importance);
    let mut taken: BTreeSet<NodeId> = BTreeSet::new();
    let mut assigned = vec![None; plan.steps.len()];
    for i in order {
        let step = &plan.steps[i];
        let free = |n: &&&crate::netsim::Node| !taken.contains(&n.id);
        let preferred = idle.iter().filter(free).find(|n| !step.high_importance || n.security_level == SecurityLevel::HighAssurance);
        let chosen = preferred.or_else(|| idle.iter().find(free)).ok_or(DexecError::InsufficientNodes(step.kind))?;
        taken.insert(chosen.id);
        assigned[i] = Some(chosen.id);
    }
    let nodes: Vec<NodeId> = assigned.iter().map(|a| a.expect("every step assigned")).collect();
    if !net.claim(&nodes) {
        return Err(DexecError::InsufficientNodes(plan.steps[0].kind));
    }
    let mut plan = plan.clone();
    let mut instances = Vec::with_capacity(nodes.len());
    for (i, node) in nodes.iter().enumerate() {
        let key = match net.provision_instance(*node, plan.task_id, i as u32) {
            Ok(k) => k,
            Err(e) => {
                net.release(&nodes);
                return Err(e.into());
            }
        };
        let level = net.node(*node)?.security_level;
        let inst = LambdaInstance::new(key, level, plan.task_id, i as u32, plan.steps[i].kind);
        plan.steps[i].instance = Some(inst.id());
        plan.steps[i].node = Some(*node);
        instances.push(inst);
    }
    Ok((plan, instances))
}

/// A party that is not an instance: the owner coordinator or the consumer.
pub struct Party {
    pub keypair: KeyPair,
    pub node: NodeId,
    key: Option<EdgeKey>,
}

impl Party {
    pub fn new(keypair: KeyPair, node: NodeId) -> Self {
        Self { keypair, node, key: None }
    }

    pub fn id(&self) -> KeyId {
        self.keypair.public()
    }

    /// Opens pipeline traffic with the edge key this party holds, if any.
    pub fn open_edge(&self, blob: &SealedBlob) -> Result<Vec<u8>, CryptoError> {
        self.key.as_ref().ok_or(CryptoError::AuthFailure)?.open(blob)
    }

    pub fn can_open(&self, blob: &SealedBlob) -> bool {
        self.open_edge(blob).is_ok()
    }

    pub fn edge_key_ids(&self) -> Vec<KeyId> {
        self.key.iter().map(EdgeKey::id).collect()
    }
}

pub struct Pod {
    pub keypair: KeyPair,
    pub node: NodeId,
    pub tags: Vec<String>,
    pub records: Vec<DataRecord>,
    /// Delivered plaintexts, one per task that had something for this POD.
    pub inbox: Vec<Vec<u8>>,
    ingress: Option<EdgeKey>,
}

impl Pod {
    pub fn new(keypair: KeyPair, node: NodeId, tags: Vec<String>, records: Vec<DataRecord>) -> Self {
        Self { keypair, node, tags, records, inbox: Vec::new(), ingress: None }
    }

    pub fn id(&self) -> KeyId {
        self.keypair.public()
    }

    pub fn selected_by(&self, selector: &[String]) -> bool {
        selector.iter().all(|t| self.tags.contains(t))
    }

    pub fn open_edge(&self, blob: &SealedBlob) -> Result<Vec<u8>, CryptoError> {
        self.ingress.as_ref().ok_or(CryptoError::AuthFailure)?.open(blob)
    }

    pub fn can_open(&self, blob: &SealedBlob) -> bool {
        self.open_edge(blob).is_ok()
    }

    pub fn edge_key_ids(&self) -> Vec<KeyId> {
        self.ingress.iter().map(EdgeKey::id).collect()
    }

    /// Seals this POD's batch under `K_0`. A POD faking data presents its
    /// records with signatures they do not have.
    fn seal_batch(&self, task_id: TaskId, seed: u64, index: u64, fake: bool) -> Result<SealedBlob, DexecError> {
        let key = self.ingress.as_ref().ok_or_else(|| DexecError::InvalidPlan("POD holds no ingress key".into()))?;
        let mut records = self.records.clone();
        if fake {
            for r in &mut records {
                match r.source_signature.as_mut() {
                    Some(sig) => sig.0[0] ^= 0x01,
                    None => {
                        r.source_kind = SourceKind::HardwareSigned;
                        r.source_signature = Some(Signature([0x5a; 64]));
                        r.signer = Some(self.id());
                    }
                }
            }
        }
        let batch = crate::trust_lambda::PodBatch { task_id, pod_id: self.id(), records };
        Ok(key.seal(&batch.to_canonical(), &mut seeded_rng(seed, &format!("pod/{task_id}"), index)))
    }
}

/// One sealed key delivery as it left the owner.
#[derive(Clone, Debug)]
pub struct KeyGrant {
    pub edge: u32,
    pub holder: KeyId,
    pub node: NodeId,
    pub blob: SealedBlob,
}

#[derive(Clone, Debug)]
pub struct KeyChain {
    pub edge_ids: Vec<KeyId>,
    pub grants: Vec<KeyGrant>,
}

/// Ships each step its code: the task package sealed to the task-execution
/// instance, everything else as-is.
pub fn dispatch_code(
    spec: &TaskSpec,
    plan: &PipelinePlan,
    functions: &[LambdaFunction],
    instances: &mut [LambdaInstance],
    net: &Network,
    consumer: &Party,
    seed: u64,
) -> Result<(), DexecError> {
    for (i, (inst, f)) in instances.iter_mut().zip(functions).enumerate() {
        match (f, &spec.code) {
            (LambdaFunction::TaskExec { emit, .. }, TaskCode::Dsl { source, delivery }) => {
                let pkg = TaskPackage { source: source.clone(), delivery: delivery.clone(), emit: *emit };
                let mut rng = seeded_rng(seed, &format!("dispatch/{}", spec.task_id), i as u64);
                let blob = seal_to(&inst.id(), &pkg.to_canonical(), &mut rng)?;
                let node = plan.steps[i].node.ok_or_else(|| DexecError::InvalidPlan("unassigned step".into()))?;
                net.transmit(consumer.node, node, "task", &blob.to_canonical());
                inst.load_sealed_task(&blob).map_err(DexecError::Setup)?;
            }
            _ => inst.load(f.clone()),
        }
    }
    Ok(())
}

/// Attests every instance against the plan, then generates and seals the
/// edge keys. Nothing is released unless every attestation passes.
pub fn owner_attest_and_keygen(
    plan: &mut PipelinePlan,
    instances: &mut [LambdaInstance],
    net: &Network,
    owner: &Party,
    pods: &mut [&mut Pod],
    consumer: &mut Party,
    seed: u64,
) -> Result<KeyChain, DexecError> {
    plan.validate()?;
    if instances.len() != plan.steps.len() {
        return Err(DexecError::InvalidPlan(format!("{} instances for {} steps", instances.len(), plan.steps.len())));
    }
    let mut nodes = Vec::with_capacity(instances.len());
    for (step, inst) in plan.steps.iter().zip(instances.iter()) {
        let node = step.node.ok_or_else(|| DexecError::InvalidPlan("unassigned step".into()))?;
        let report = net.attest(&inst.id(), inst.measurement()).map_err(|_| DexecError::AttestationFailed(inst.id()))?;
        net.transmit(node, owner.node, "attestation", &report.to_canonical());
        let expected = measurement(step.kind, &step.fn_digest);
        if step.instance != Some(report.instance_id) || !check_attestation(&report, &expected, &net.root_public()) {
            return Err(DexecError::AttestationFailed(inst.id()));
        }
        nodes.push(node);
    }

    let task = plan.task_id;
    let n = plan.steps.len();
    let mut key_rng = seeded_rng(seed, &format!("owner/keys/{task}"), 0);
    let keys: Vec<EdgeKey> = (0..=n).map(|_| EdgeKey::generate(&mut key_rng)).collect();
    let mut seal_rng = seeded_rng(seed, &format!("owner/seal/{task}"), 0);
    let mut grants = Vec::new();
    for (edge, key) in keys.iter().enumerate() {
        let delivery = KeyDelivery { task_id: task, edge: edge as u32, key: *key.as_bytes() }.to_canonical();
        let mut holders: Vec<(KeyId, NodeId)> = Vec::new();
        if edge == 0 {
            holders.extend(pods.iter().map(|p| (p.id(), p.node)));
        } else {
            holders.push((instances[edge - 1].id(), nodes[edge - 1]));
        }
        if edge < n {
            holders.push((instances[edge].id(), nodes[edge]));
        } else {
            holders.push((consumer.id(), consumer.node));
        }
        for (holder, node) in holders {
            let blob = seal_to(&holder, &delivery, &mut seal_rng)?;
            net.transmit(owner.node, node, "key", &blob.to_canonical());
            grants.push(KeyGrant { edge: edge as u32, holder, node, blob });
        }
    }
    for g in &grants {
        if let Some(inst) = instances.iter_mut().find(|i| i.id() == g.holder) {
            inst.install_key(&g.blob).map_err(DexecError::Setup)?;
        } else if let Some(pod) = pods.iter_mut().find(|p| p.id() == g.holder) {
            pod.ingress = Some(open_grant(&pod.keypair, &g.blob, task)?);
        } else if g.holder == consumer.id() {
            consumer.key = Some(open_grant(&consumer.keypair, &g.blob, task)?);
        }
    }
    plan.edge_keys = keys.iter().map(EdgeKey::id).collect();
    Ok(KeyChain { edge_ids: plan.edge_keys.clone(), grants })
}

fn open_grant(key: &KeyPair, blob: &SealedBlob, task: TaskId) -> Result<EdgeKey, DexecError> {
    let d = KeyDelivery::from_canonical(&key.unseal(blob)?).map_err(|e| DexecError::InvalidPlan(e.to_string()))?;
    if d.task_id != task {
        return Err(DexecError::InvalidPlan("key delivery for another task".into()));
    }
    Ok(EdgeKey::from_bytes(d.key))
}

/// Shared state a task runs against.
#[derive(Clone, Copy)]
pub struct Env<'a> {
    pub net: &'a Network,
    pub log: &'a ProofLog,
    pub annex: &'a Annex,
    pub ledger: Option<&'a BudgetLedger>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskResult {
    pub task_id: TaskId,
    /// The answer as the consumer reads it: a mean is the released sum over
    /// the released count, a federated average the vector sum over the count.
    pub released_value: Option<Value>,
    /// What the final step released.
    pub raw_release: Value,
    pub auth_summary: AuthSummary,
    /// Digest of the final proof.
    pub proof_head: Digest,
    /// Digest of the released payload; the root of its lineage.
    pub output_digest: Digest,
    pub alleged_flag: bool,
    pub noised: bool,
    pub deliveries: usize,
    /// Wire digests of the batches the PODs sent, in order.
    pub batch_digests: Vec<Digest>,
}

fn log_err(e: crate::proof_log::LogError) -> DexecError {
    DexecError::Log(e.to_string())
}

fn rogue_key(node: NodeId, seed: u64) -> KeyPair {
    let mut enc = Encoder::new();
    enc.str("pixiu/rogue/v1").u32(node).u64(seed);
    KeyPair::from_seed(hash(&enc.into_bytes()).0)
}

/// The last sealed message this node saw that is not already an input.
fn replay_candidate(net: &Network, node: NodeId, current: &[SealedBlob]) -> Option<SealedBlob> {
    net.node(node)
        .ok()?
        .observations()
        .iter()
        .rev()
        .filter(|o| matches!(o.label, "key" | "task" | "batch" | "output"))
        .filter_map(|o| SealedBlob::from_canonical(&o.bytes).ok())
        .find(|b| !current.contains(b))
}

/// Runs the steps in order, committing each proof before the next step
/// starts, then has the consumer open, check and interpret the result.
pub fn run_pipeline(
    env: &Env<'_>,
    plan: &PipelinePlan,
    instances: &mut [LambdaInstance],
    pods: &mut [&mut Pod],
    consumer: &Party,
) -> Result<TaskResult, DexecError> {
    let net = env.net;
    let task = plan.task_id;
    let ctx = StepContext { task_id: task, seed: env.seed, ledger: env.ledger };
    let node_of = |i: usize| plan.steps[i].node.ok_or_else(|| DexecError::InvalidPlan("unassigned step".into()));

    let mut inputs = Vec::with_capacity(pods.len());
    for (i, pod) in pods.iter().enumerate() {
        let fake = net.behavior(pod.node) == Some(FaultBehavior::FakeData);
        let blob = pod.seal_batch(task, env.seed, i as u64, fake)?;
        net.transmit(pod.node, node_of(0)?, "batch", &blob.to_canonical());
        inputs.push(blob);
    }
    let batch_digests: Vec<Digest> = inputs.iter().map(SealedBlob::digest).collect();

    let mut prev: Option<ExecutionProof> = None;
    for (i, inst) in instances.iter_mut().enumerate() {
        let node = node_of(i)?;
        let fault = net.behavior(node).filter(|f| f.step() == Some(i as u32));
        match fault {
            Some(FaultBehavior::WrongFunction { .. }) => {
                let current = inst.function().cloned().unwrap_or(LambdaFunction::Identity);
                inst.swap_function(LambdaFunction::Modified(Box::new(current)));
            }
            Some(FaultBehavior::SkipDp { .. }) => inst.swap_function(LambdaFunction::Identity),
            Some(FaultBehavior::ReplaySealed { .. }) => {
                if let Some(old) = replay_candidate(net, node, &inputs) {
                    inputs[0] = old;
                }
            }
            _ => {}
        }
        let outcome = inst.execute_step(&ctx, &inputs, prev.as_ref());
        let mut proof = outcome.proof;
        if let Some(FaultBehavior::ForgeProof { .. }) = fault {
            proof = ExecutionProof::sign(
                &rogue_key(node, env.seed),
                proof.task_id,
                proof.step_index,
                proof.kind,
                proof.failure,
                proof.input_digest,
                proof.fn_digest,
                proof.output_digest,
                proof.prev_proof_digest,
            );
        }
        env.log.append(&proof).map_err(log_err)?;
        net.publish(node, "proof", proof.to_line().as_bytes());
        for r in &outcome.annex {
            env.annex.append(r).map_err(log_err)?;
            net.publish(node, "annex", r.to_line().as_bytes());
        }
        let Some(mut out) = outcome.sealed_output else {
            return Err(DexecError::StepFailed { index: i as u32, reason: proof.failure.unwrap_or(FailureReason::BadInput) });
        };
        if let Some(FaultBehavior::TamperOutput { .. }) = fault {
            if let Some(key) = inst.leaked_egress_key() {
                let mut plain = key.open(&out)?;
                if let Some(last) = plain.last_mut() {
                    *last ^= 0x01;
                }
                out = key.seal(&plain, &mut seeded_rng(env.seed, &format!("tamper/{task}"), i as u64));
            }
        }
        let to = if i + 1 < plan.steps.len() { node_of(i + 1)? } else { consumer.node };
        net.transmit(node, to, "output", &out.to_canonical());
        inputs = vec![out];
        prev = Some(proof);
    }

    let last = prev.ok_or_else(|| DexecError::InvalidPlan("empty plan".into()))?;
    let key = consumer.key.as_ref().ok_or_else(|| DexecError::InvalidPlan("consumer holds no egress key".into()))?;
    let plain = key.open(&inputs[0])?;
    let received = hash(&plain);
    let receipt = AnnexRecord::Receipt(Receipt::sign(&consumer.keypair, task, received));
    env.annex.append(&receipt).map_err(log_err)?;
    net.publish(consumer.node, "annex", receipt.to_line().as_bytes());
    if received != last.output_digest {
        return Err(DexecError::DeliveryMismatch);
    }
    let report =
        verify_chain(&env.log.entries(), &env.annex.entries(), task, plan, &net.registry()).map_err(|e| DexecError::Log(e.to_string()))?;
    if let Some(k) = report.first_bad_step {
        return Err(DexecError::ChainRejected(k));
    }
    let payload = Payload::from_canonical(&plain).map_err(|_| DexecError::UnexpectedPayload("malformed"))?;
    let Payload::Release(release) = payload else {
        return Err(DexecError::UnexpectedPayload(payload.variant()));
    };
    if plan.require_dp && !release.noised {
        return Err(DexecError::UnexpectedPayload("exact"));
    }
    for d in &release.deliveries {
        net.publish(consumer.node, "delivery", &d.to_canonical());
    }
    for pod in pods.iter_mut() {
        if let Some(m) = release.deliveries.iter().find_map(|d| pod.keypair.unseal_anonymous(d).ok()) {
            pod.inbox.push(m);
        }
    }
    Ok(TaskResult {
        task_id: task,
        released_value: compose_answer(&release.value),
        raw_release: release.value.clone(),
        auth_summary: release.auth,
        proof_head: last.digest(),
        output_digest: last.output_digest,
        alleged_flag: release.alleged,
        noised: release.noised,
        deliveries: release.deliveries.len(),
        batch_digests,
    })
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Int(i) => Some(*i as f64),
        Value::Float(f) => Some(*f),
        _ => None,
    }
}

/// Consumer-side reading of a release. `None` when a ratio has no positive
/// denominator.
pub fn compose_answer(release: &Value) -> Option<Value> {
    let Value::Record(r) = release else {
        return Some(release.clone());
    };
    match (r.get("sum"), r.get("count"), r.get("value")) {
        (Some(sum), Some(count), _) => {
            let n = as_f64(count)?;
            if n <= 0.0 {
                return None;
            }
            match sum {
                Value::Vector(v) => Some(Value::Vector(v.iter().map(|x| x / n).collect())),
                s => Some(Value::Float(as_f64(s)? / n)),
            }
        }
        (Some(sum), None, _) => Some(sum.clone()),
        (None, Some(count), _) => Some(count.clone()),
        (None, None, Some(v)) => Some(v.clone()),
        _ => Some(release.clone()),
    }
}

/// Result of [`execute_task`]: the assigned plan, when planning got that far.
pub struct TaskOutcome {
    pub plan: Option<PipelinePlan>,
    pub result: Result<TaskResult, DexecError>,
}

/// The whole flow for one task: plan, recruit, inject `step_faults` on the
/// nodes that will run those steps, ship code, attest and distribute keys,
/// run. Recruited nodes are released afterwards.
pub fn execute_task(
    env: &Env<'_>,
    spec: &TaskSpec,
    pods: &mut [Pod],
    consumer: &mut Party,
    owner: &Party,
    step_faults: &[FaultBehavior],
) -> TaskOutcome {
    let (plan, functions) = match plan_pipeline(spec) {
        Ok(p) => p,
        Err(e) => return TaskOutcome { plan: None, result: Err(e) },
    };
    let (mut plan, mut instances) = match recruit_instances(&plan, env.net) {
        Ok(p) => p,
        Err(e) => return TaskOutcome { plan: Some(plan), result: Err(e) },
    };
    let nodes: Vec<NodeId> = plan.steps.iter().filter_map(|s| s.node).collect();
    let result = (|| {
        for f in step_faults {
            let step = f.step().ok_or_else(|| DexecError::InvalidPlan(format!("{f} does not target a step")))?;
            let node = plan
                .steps
                .get(step as usize)
                .and_then(|s| s.node)
                .ok_or_else(|| DexecError::InvalidPlan(format!("{f} targets a step the plan does not have")))?;
            env.net.inject_fault(node, *f)?;
        }
        dispatch_code(spec, &plan, &functions, &mut instances, env.net, consumer, env.seed)?;
        let mut selected: Vec<&mut Pod> = pods.iter_mut().filter(|p| p.selected_by(&spec.selector)).collect();
        owner_attest_and_keygen(&mut plan, &mut instances, env.net, owner, &mut selected, consumer, env.seed)?;
        run_pipeline(env, &plan, &mut instances, &mut selected, consumer)
    })();
    env.net.release(&nodes);
    TaskOutcome { plan: Some(plan), result }
}
