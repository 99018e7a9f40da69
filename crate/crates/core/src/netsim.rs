//! Deterministic in-process network: nodes, per-node observation logs and
//! fault injection.
//!
//! Nothing is sent over sockets. "Transmitting" a message appends it to the
//! observation log of the sender, the receiver and every eavesdropping node,
//! which is what an untrusted host could see on the wire.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::{Mutex, MutexGuard};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Encoder;
use crate::crypto::{
    hash, seeded_rng, AttestationReport, CryptoError, KeyDirectory, KeyId, KeyPair, ManufacturerRoot, SecurityLevel, TaskId,
};
use crate::dexec::PipelinePlan;

pub type NodeId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Pod,
    Instance,
    Consumer,
    /// Coordinates attestation and key generation on behalf of the PODs.
    Owner,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "snake_case")]
pub enum FaultBehavior {
    /// Host extracts the step's output, alters it and reseals it.
    TamperOutput { step: u32 },
    /// Host replaces the step's proof with one signed by a key of its own.
    ForgeProof { step: u32 },
    /// Host swaps in different code after attestation.
    WrongFunction { step: u32 },
    /// Host replaces the step's code with a pass-through.
    SkipDp { step: u32 },
    /// Host replays a previously observed sealed message as the step's input.
    ReplaySealed { step: u32 },
    /// POD claims signatures its records do not have.
    FakeData,
    /// Node records every message on the network.
    EavesdropAll,
}

impl FaultBehavior {
    /// Step this behavior acts on, if any.
    pub fn step(&self) -> Option<u32> {
        match *self {
            FaultBehavior::TamperOutput { step }
            | FaultBehavior::ForgeProof { step }
            | FaultBehavior::WrongFunction { step }
            | FaultBehavior::SkipDp { step }
            | FaultBehavior::ReplaySealed { step } => Some(step),
            FaultBehavior::FakeData | FaultBehavior::EavesdropAll => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FaultBehavior::TamperOutput { .. } => "tamper_output",
            FaultBehavior::ForgeProof { .. } => "forge_proof",
            FaultBehavior::WrongFunction { .. } => "wrong_function",
            FaultBehavior::SkipDp { .. } => "skip_dp",
            FaultBehavior::ReplaySealed { .. } => "replay_sealed",
            FaultBehavior::FakeData => "fake_data",
            FaultBehavior::EavesdropAll => "eavesdrop_all",
        }
    }

    /// Behaviors that attack the integrity of the pipeline itself.
    pub fn integrity(step: u32) -> [FaultBehavior; 5] {
        [
            FaultBehavior::TamperOutput { step },
            FaultBehavior::ForgeProof { step },
            FaultBehavior::WrongFunction { step },
            FaultBehavior::SkipDp { step },
            FaultBehavior::ReplaySealed { step },
        ]
    }
}

impl fmt::Display for FaultBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.step() {
            Some(s) => write!(f, "{}@{s}", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error("no node {0}")]
    UnknownNode(NodeId),
    #[error("node {node} already runs {existing}")]
    ConflictingBehavior { node: NodeId, existing: FaultBehavior },
}

fn config_error(path: &str, message: impl Into<String>) -> NetError {
    NetError::Config { path: path.to_owned(), message: message.into() }
}

fn default_mid_cost() -> u64 {
    10
}

fn default_high_cost() -> u64 {
    100
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Execution nodes able to host instances.
    pub nodes: u32,
    #[serde(default)]
    pub high_assurance: u32,
    #[serde(default = "default_mid_cost")]
    pub mid_cost: u64,
    #[serde(default = "default_high_cost")]
    pub high_cost: u64,
}

/// One message as seen on the wire.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Observation {
    pub from: NodeId,
    /// `None` for messages posted to public storage.
    pub to: Option<NodeId>,
    pub label: &'static str,
    pub bytes: Vec<u8>,
}

#[derive(Debug)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub role: Role,
    pub security_level: SecurityLevel,
    pub attack_cost: u64,
    observed: Mutex<Vec<Observation>>,
    behavior: Mutex<Option<FaultBehavior>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Node {
    pub fn observations(&self) -> Vec<Observation> {
        lock(&self.observed).clone()
    }

    pub fn behavior(&self) -> Option<FaultBehavior> {
        *lock(&self.behavior)
    }

    fn observe(&self, o: &Observation) {
        lock(&self.observed).push(o.clone());
    }
}

pub struct Network {
    seed: u64,
    nodes: Vec<Node>,
    root: Mutex<ManufacturerRoot>,
    root_public: KeyId,
    registry: Mutex<KeyDirectory>,
    busy: Mutex<BTreeSet<NodeId>>,
}

/// Builds the execution nodes. Which nodes run at high assurance is drawn
/// from the seed.
pub fn spawn_network(config: &NetworkConfig, seed: u64) -> Result<Network, NetError> {
    if config.nodes == 0 {
        return Err(config_error("network.nodes", "at least one node is required"));
    }
    if config.high_assurance > config.nodes {
        return Err(config_error(
            "network.high_assurance",
            format!("{} high-assurance nodes out of {}", config.high_assurance, config.nodes),
        ));
    }
    if config.mid_cost == 0 {
        return Err(config_error("network.mid_cost", "attack cost must be positive"));
    }
    if config.high_cost == 0 {
        return Err(config_error("network.high_cost", "attack cost must be positive"));
    }
    let mut order: Vec<NodeId> = (0..config.nodes).collect();
    order.shuffle(&mut seeded_rng(seed, "network/levels", 0));
    let high: BTreeSet<NodeId> = order.into_iter().take(config.high_assurance as usize).collect();
    let nodes = (0..config.nodes)
        .map(|id| {
            let level = if high.contains(&id) { SecurityLevel::HighAssurance } else { SecurityLevel::MidLevel };
            let cost = if high.contains(&id) { config.high_cost } else { config.mid_cost };
            Node::new(id, format!("node-{id}"), Role::Instance, level, cost)
        })
        .collect();
    let root = ManufacturerRoot::new(KeyPair::generate(&mut seeded_rng(seed, "network/root", 0)));
    let root_public = root.public();
    Ok(Network {
        seed,
        nodes,
        root: Mutex::new(root),
        root_public,
        registry: Mutex::new(KeyDirectory::new()),
        busy: Mutex::new(BTreeSet::new()),
    })
}

impl Node {
    fn new(id: NodeId, name: String, role: Role, security_level: SecurityLevel, attack_cost: u64) -> Self {
        Self { id, name, role, security_level, attack_cost, observed: Mutex::new(Vec::new()), behavior: Mutex::new(None) }
    }
}

impl Network {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, NetError> {
        self.nodes.get(id as usize).ok_or(NetError::UnknownNode(id))
    }

    /// Adds a POD, consumer or owner host.
    pub fn add_party(&mut self, role: Role, name: impl Into<String>, attack_cost: u64) -> NodeId {
        let id = self.nodes.len() as NodeId;
        self.nodes.push(Node::new(id, name.into(), role, SecurityLevel::MidLevel, attack_cost));
        id
    }

    pub fn root_public(&self) -> KeyId {
        self.root_public
    }

    /// Genuine instance keys, as vouched for by the manufacturer.
    pub fn registry(&self) -> KeyDirectory {
        lock(&self.registry).clone()
    }

    /// Creates the enclave key for one step of one task on `node` and
    /// registers it with the manufacturer at the node's security level.
    pub fn provision_instance(&self, node: NodeId, task_id: TaskId, step: u32) -> Result<KeyPair, NetError> {
        let n = self.node(node)?;
        let mut enc = Encoder::new();
        enc.str("pixiu/instance/v1").u64(self.seed).u32(node).value(&task_id).u32(step);
        let key = KeyPair::from_seed(hash(&enc.into_bytes()).0);
        lock(&self.root).register(key.public(), n.security_level);
        lock(&self.registry).register(key.public(), format!("{}/{task_id}/{step}", n.name));
        Ok(key)
    }

    pub fn attest(&self, instance: &KeyId, measurement: crate::crypto::Digest) -> Result<AttestationReport, CryptoError> {
        lock(&self.root).attest(instance, measurement)
    }

    /// Idle instance nodes, in id order.
    pub fn idle_nodes(&self) -> Vec<&Node> {
        let busy = lock(&self.busy);
        self.nodes.iter().filter(|n| n.role == Role::Instance && !busy.contains(&n.id)).collect()
    }

    /// Marks nodes busy; false, with nothing claimed, if any already is.
    pub fn claim(&self, ids: &[NodeId]) -> bool {
        let mut busy = lock(&self.busy);
        if ids.iter().any(|id| busy.contains(id)) {
            return false;
        }
        busy.extend(ids.iter().copied());
        true
    }

    pub fn release(&self, ids: &[NodeId]) {
        let mut busy = lock(&self.busy);
        for id in ids {
            busy.remove(id);
        }
    }

    pub fn inject_fault(&self, node: NodeId, behavior: FaultBehavior) -> Result<(), NetError> {
        let n = self.node(node)?;
        let mut slot = lock(&n.behavior);
        match *slot {
            Some(existing) if existing != behavior => Err(NetError::ConflictingBehavior { node, existing }),
            _ => {
                *slot = Some(behavior);
                Ok(())
            }
        }
    }

    pub fn clear_faults(&self) {
        for n in &self.nodes {
            *lock(&n.behavior) = None;
        }
    }

    pub fn behavior(&self, node: NodeId) -> Option<FaultBehavior> {
        self.node(node).ok().and_then(Node::behavior)
    }

    fn deliver(&self, o: Observation) {
        for n in &self.nodes {
            let party = n.id == o.from || Some(n.id) == o.to;
            if party || n.behavior() == Some(FaultBehavior::EavesdropAll) {
                n.observe(&o);
            }
        }
    }

    pub fn transmit(&self, from: NodeId, to: NodeId, label: &'static str, bytes: &[u8]) {
        self.deliver(Observation { from, to: Some(to), label, bytes: bytes.to_vec() });
    }

    /// Posts to public storage: observed by the poster and by eavesdroppers.
    pub fn publish(&self, from: NodeId, label: &'static str, bytes: &[u8]) {
        self.deliver(Observation { from, to: None, label, bytes: bytes.to_vec() });
    }

    pub fn clear_observations(&self) {
        for n in &self.nodes {
            lock(&n.observed).clear();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AttackReport {
    pub cost: u64,
    /// Steps whose plaintext input and output the compromise exposes.
    pub leaked_steps: Vec<u32>,
    pub leaked_scope: String,
}

/// What compromising `compromised` costs and exposes for one pipeline.
/// Each compromised node leaks only the slice of the task its own step saw.
pub fn attack_cost_report(net: &Network, plan: &PipelinePlan, compromised: &[NodeId]) -> AttackReport {
    let set: BTreeSet<NodeId> = compromised.iter().copied().collect();
    let cost = set.iter().filter_map(|id| net.node(*id).ok()).map(|n| n.attack_cost).sum();
    let mut leaked_steps = Vec::new();
    let mut scope = Vec::new();
    for (i, s) in plan.steps.iter().enumerate() {
        if s.node.is_some_and(|n| set.contains(&n)) {
            leaked_steps.push(i as u32);
            scope.push(format!("step {i} ({}): its input and output for task {}", s.kind, plan.task_id));
        }
    }
    AttackReport { cost, leaked_steps, leaked_scope: scope.join("; ") }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(nodes: u32, high: u32) -> NetworkConfig {
        NetworkConfig { nodes, high_assurance: high, mid_cost: 10, high_cost: 100 }
    }

    #[test]
    fn spawn_is_deterministic() {
        let a = spawn_network(&config(5, 2), 42).unwrap();
        let b = spawn_network(&config(5, 2), 42).unwrap();
        let levels = |n: &Network| n.nodes().iter().map(|x| (x.name.clone(), x.security_level)).collect::<Vec<_>>();
        assert_eq!(levels(&a), levels(&b));
        assert_eq!(a.root_public(), b.root_public());
        let t = TaskId([1; 16]);
        assert_eq!(a.provision_instance(3, t, 0).unwrap().public(), b.provision_instance(3, t, 0).unwrap().public());
        assert_eq!(a.registry().ids().collect::<Vec<_>>(), b.registry().ids().collect::<Vec<_>>());
    }

    #[test]
    fn config_errors_name_the_field() {
        assert_eq!(
            spawn_network(&config(0, 0), 1).err(),
            Some(NetError::Config { path: "network.nodes".into(), message: "at least one node is required".into() })
        );
        assert!(matches!(spawn_network(&config(2, 3), 1), Err(NetError::Config { path, .. }) if path == "network.high_assurance"));
    }

    #[test]
    fn high_assurance_count_is_exact() {
        for seed in 0..20 {
            let net = spawn_network(&config(5, 2), seed).unwrap();
            let high = net.nodes().iter().filter(|n| n.security_level == SecurityLevel::HighAssurance).count();
            assert_eq!(high, 2);
        }
    }

    #[test]
    fn faults_conflict_per_node() {
        let net = spawn_network(&config(3, 0), 1).unwrap();
        net.inject_fault(1, FaultBehavior::TamperOutput { step: 1 }).unwrap();
        net.inject_fault(1, FaultBehavior::TamperOutput { step: 1 }).unwrap();
        assert_eq!(
            net.inject_fault(1, FaultBehavior::EavesdropAll),
            Err(NetError::ConflictingBehavior { node: 1, existing: FaultBehavior::TamperOutput { step: 1 } })
        );
        assert_eq!(net.inject_fault(9, FaultBehavior::EavesdropAll), Err(NetError::UnknownNode(9)));
        net.clear_faults();
        assert_eq!(net.behavior(1), None);
    }

    #[test]
    fn only_parties_and_eavesdroppers_observe() {
        let net = spawn_network(&config(4, 0), 1).unwrap();
        net.inject_fault(3, FaultBehavior::EavesdropAll).unwrap();
        net.transmit(0, 1, "output", b"sealed");
        net.publish(1, "proof", b"line");
        assert_eq!(net.node(0).unwrap().observations().len(), 1);
        assert_eq!(net.node(1).unwrap().observations().len(), 2);
        assert!(net.node(2).unwrap().observations().is_empty());
        assert_eq!(net.node(3).unwrap().observations().len(), 2);
    }

    #[test]
    fn claims_are_exclusive() {
        let net = spawn_network(&config(3, 0), 1).unwrap();
        assert!(net.claim(&[0, 1]));
        assert!(!net.claim(&[1, 2]));
        assert_eq!(net.idle_nodes().iter().map(|n| n.id).collect::<Vec<_>>(), vec![2]);
        net.release(&[0, 1]);
        assert_eq!(net.idle_nodes().len(), 3);
    }

    #[test]
    fn fault_config_syntax() {
        let f: FaultBehavior = serde_json::from_str(r#"{"behavior": "tamper_output", "step": 1}"#).unwrap();
        assert_eq!(f, FaultBehavior::TamperOutput { step: 1 });
        let f: FaultBehavior = serde_json::from_str(r#"{"behavior": "eavesdrop_all"}"#).unwrap();
        assert_eq!(f.to_string(), "eavesdrop_all");
    }
}
