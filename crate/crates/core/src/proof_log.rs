//! Append-only public log of execution proofs, chain verification and
//! lineage tracing.
//!
//! The log proper holds one [`ExecutionProof`] per line. A sidecar annex
//! holds the records verification and tracing need beyond the proofs:
//!
//! ```text
//! INPUTS|task_id|input_digest|batch_digest,batch_digest,...
//! AUTH|task_id|step|output_digest|verified:alleged:rejected,...|signer|signature
//! RECEIPT|task_id|received_digest|signer|signature
//! ```
//!
//! `INPUTS` lists the sealed POD batches behind a first-step input digest
//! and checks against it; `AUTH` is the data prover's signed per-batch
//! verdict counts; `RECEIPT` is the consumer's signed statement of what it
//! actually unsealed.

use std::fmt::{self, Write as _};
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Mutex, MutexGuard};

use serde::Serialize;
use thiserror::Error;

use crate::codec::Encoder;
use crate::crypto::{verify, Digest, KeyDirectory, KeyId, KeyPair, Signature, TaskId};
use crate::data_prover::AuthSummary;
use crate::dexec::PipelinePlan;
use crate::trust_lambda::{batch_list_digest, ExecutionProof, FailureReason, LambdaKind};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("signature does not verify under the stated signer")]
    InvalidSignature,
    #[error("annex inputs do not hash to the stated digest")]
    InputsMismatch,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("no proof for task {0}")]
    UnknownTask(TaskId),
    #[error("digest {0} is not the output of any logged proof")]
    UnknownDigest(Digest),
}

/// Prover-signed verdict counts, one entry per input batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuthAttestation {
    pub task_id: TaskId,
    pub step_index: u32,
    pub output_digest: Digest,
    pub per_batch: Vec<AuthSummary>,
    pub signer: KeyId,
    pub signature: Signature,
}

impl AuthAttestation {
    pub fn sign(key: &KeyPair, task_id: TaskId, step_index: u32, output_digest: Digest, per_batch: Vec<AuthSummary>) -> Self {
        let mut a = Self { task_id, step_index, output_digest, per_batch, signer: key.public(), signature: Signature([0; 64]) };
        a.signature = key.sign(&a.signed_bytes());
        a
    }

    fn signed_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str("pixiu/auth/v1")
            .value(&self.task_id)
            .u64(self.step_index as u64)
            .value(&self.output_digest)
            .list(&self.per_batch)
            .value(&self.signer);
        enc.into_bytes()
    }

    pub fn verify_signature(&self) -> bool {
        verify(&self.signer, &self.signed_bytes(), &self.signature.0)
    }
}

/// The consumer's signed statement of the digest it unsealed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Receipt {
    pub task_id: TaskId,
    pub received_digest: Digest,
    pub signer: KeyId,
    pub signature: Signature,
}

impl Receipt {
    pub fn sign(key: &KeyPair, task_id: TaskId, received_digest: Digest) -> Self {
        let mut r = Self { task_id, received_digest, signer: key.public(), signature: Signature([0; 64]) };
        r.signature = key.sign(&r.signed_bytes());
        r
    }

    fn signed_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str("pixiu/receipt/v1").value(&self.task_id).value(&self.received_digest).value(&self.signer);
        enc.into_bytes()
    }

    pub fn verify_signature(&self) -> bool {
        verify(&self.signer, &self.signed_bytes(), &self.signature.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AnnexRecord {
    Inputs { task_id: TaskId, input_digest: Digest, batches: Vec<Digest> },
    Auth(AuthAttestation),
    Receipt(Receipt),
}

impl AnnexRecord {
    pub fn task_id(&self) -> TaskId {
        match self {
            AnnexRecord::Inputs { task_id, .. } => *task_id,
            AnnexRecord::Auth(a) => a.task_id,
            AnnexRecord::Receipt(r) => r.task_id,
        }
    }

    /// Self-consistency: inputs hash to their digest, signatures verify.
    pub fn is_valid(&self) -> bool {
        match self {
            AnnexRecord::Inputs { input_digest, batches, .. } => batch_list_digest(batches) == *input_digest,
            AnnexRecord::Auth(a) => a.verify_signature(),
            AnnexRecord::Receipt(r) => r.verify_signature(),
        }
    }

    pub fn to_line(&self) -> String {
        match self {
            AnnexRecord::Inputs { task_id, input_digest, batches } => {
                let list: Vec<String> = batches.iter().map(Digest::to_hex).collect();
                format!("INPUTS|{task_id}|{input_digest}|{}\n", list.join(","))
            }
            AnnexRecord::Auth(a) => {
                let list: Vec<String> = a.per_batch.iter().map(|s| format!("{}:{}:{}", s.verified, s.alleged, s.rejected)).collect();
                format!("AUTH|{}|{}|{}|{}|{}|{}\n", a.task_id, a.step_index, a.output_digest, list.join(","), a.signer, a.signature)
            }
            AnnexRecord::Receipt(r) => {
                format!("RECEIPT|{}|{}|{}|{}\n", r.task_id, r.received_digest, r.signer, r.signature)
            }
        }
    }
}

impl FromStr for AnnexRecord {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let line = line.strip_suffix('\n').unwrap_or(line);
        let f: Vec<&str> = line.split('|').collect();
        let e = |x: crate::crypto::CryptoError| x.to_string();
        let list = |s: &str| -> Vec<String> {
            if s.is_empty() {
                Vec::new()
            } else {
                s.split(',').map(str::to_owned).collect()
            }
        };
        match (f[0], f.len()) {
            ("INPUTS", 4) => Ok(AnnexRecord::Inputs {
                task_id: TaskId::from_hex(f[1]).map_err(e)?,
                input_digest: Digest::from_hex(f[2]).map_err(e)?,
                batches: list(f[3]).iter().map(|d| Digest::from_hex(d)).collect::<Result<_, _>>().map_err(e)?,
            }),
            ("AUTH", 7) => {
                let per_batch = list(f[4])
                    .iter()
                    .map(|s| {
                        let n: Vec<u64> = s.split(':').map(|x| x.parse().map_err(|_| format!("count {x:?}"))).collect::<Result<_, _>>()?;
                        match n[..] {
                            [verified, alleged, rejected] => Ok(AuthSummary { verified, alleged, rejected }),
                            _ => Err(format!("verdict triple {s:?}")),
                        }
                    })
                    .collect::<Result<_, String>>()?;
                Ok(AnnexRecord::Auth(AuthAttestation {
                    task_id: TaskId::from_hex(f[1]).map_err(e)?,
                    step_index: f[2].parse().map_err(|_| "step index".to_owned())?,
                    output_digest: Digest::from_hex(f[3]).map_err(e)?,
                    per_batch,
                    signer: KeyId::from_hex(f[5]).map_err(e)?,
                    signature: Signature::from_hex(f[6]).map_err(e)?,
                }))
            }
            ("RECEIPT", 5) => Ok(AnnexRecord::Receipt(Receipt {
                task_id: TaskId::from_hex(f[1]).map_err(e)?,
                received_digest: Digest::from_hex(f[2]).map_err(e)?,
                signer: KeyId::from_hex(f[3]).map_err(e)?,
                signature: Signature::from_hex(f[4]).map_err(e)?,
            })),
            (tag, n) => Err(format!("unknown annex record {tag} with {n} fields")),
        }
    }
}

struct Lines<T> {
    entries: Vec<T>,
    text: String,
    file: Option<File>,
}

impl<T> Lines<T> {
    fn push(&mut self, entry: T, line: &str) -> Result<usize, LogError> {
        if let Some(f) = self.file.as_mut() {
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        self.text.push_str(line);
        self.entries.push(entry);
        Ok(self.entries.len() - 1)
    }
}

fn parse_lines<T, F: Fn(&str) -> Result<T, String>>(text: &str, parse: F) -> Result<Vec<T>, LogError> {
    text.lines().enumerate().map(|(i, l)| parse(l).map_err(|message| LogError::Parse { line: i + 1, message })).collect()
}

/// Append-only, internally synchronised line store, optionally backed by a
/// file that only ever grows.
pub struct AppendLog<T> {
    inner: Mutex<Lines<T>>,
}

impl<T: Clone> AppendLog<T> {
    fn from_parts(entries: Vec<T>, text: String, file: Option<File>) -> Self {
        Self { inner: Mutex::new(Lines { entries, text, file }) }
    }

    fn lock(&self) -> MutexGuard<'_, Lines<T>> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn len(&self) -> usize {
        self.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Snapshot of every entry in append order.
    pub fn entries(&self) -> Vec<T> {
        self.lock().entries.clone()
    }

    /// The exact bytes of the log.
    pub fn text(&self) -> String {
        self.lock().text.clone()
    }
}

pub type ProofLog = AppendLog<ExecutionProof>;
pub type Annex = AppendLog<AnnexRecord>;

impl AppendLog<ExecutionProof> {
    pub fn in_memory() -> Self {
        Self::from_parts(Vec::new(), String::new(), None)
    }

    /// Starts a fresh log file, replacing any previous content.
    pub fn create(path: &Path) -> Result<Self, LogError> {
        Ok(Self::from_parts(Vec::new(), String::new(), Some(File::create(path)?)))
    }

    /// Opens an existing log for appending, checking every line.
    pub fn open(path: &Path) -> Result<Self, LogError> {
        let text = std::fs::read_to_string(path)?;
        let log = Self::parse(&text)?;
        let entries = log.entries();
        Ok(Self::from_parts(entries, text, Some(OpenOptions::new().append(true).open(path)?)))
    }

    /// Reads log text without checking signatures, so a verifier can judge
    /// a log that may have been altered after the fact.
    pub fn parse(text: &str) -> Result<Self, LogError> {
        let entries = parse_lines(text, |l| l.parse::<ExecutionProof>().map_err(|e| e.to_string()))?;
        let rendered: String = entries.iter().map(ExecutionProof::to_line).collect();
        if rendered != text {
            return Err(LogError::Parse { line: 0, message: "log is not in canonical line form".into() });
        }
        Ok(Self::from_parts(entries, text.to_owned(), None))
    }

    /// Appends a proof whose signature verifies under its stated signer and
    /// returns its line index. Rejected proofs leave the log untouched.
    pub fn append(&self, proof: &ExecutionProof) -> Result<usize, LogError> {
        if !proof.verify_signature() {
            return Err(LogError::InvalidSignature);
        }
        self.lock().push(proof.clone(), &proof.to_line())
    }
}

impl AppendLog<AnnexRecord> {
    pub fn in_memory() -> Self {
        Self::from_parts(Vec::new(), String::new(), None)
    }

    pub fn create(path: &Path) -> Result<Self, LogError> {
        Ok(Self::from_parts(Vec::new(), String::new(), Some(File::create(path)?)))
    }

    pub fn parse(text: &str) -> Result<Self, LogError> {
        let entries = parse_lines(text, |l| l.parse::<AnnexRecord>())?;
        Ok(Self::from_parts(entries, text.to_owned(), None))
    }

    pub fn append(&self, record: &AnnexRecord) -> Result<usize, LogError> {
        if !record.is_valid() {
            return Err(match record {
                AnnexRecord::Inputs { .. } => LogError::InputsMismatch,
                _ => LogError::InvalidSignature,
            });
        }
        self.lock().push(record.clone(), &record.to_line())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "reason")]
pub enum StepVerdict {
    Ok,
    BadSignature,
    BrokenLink,
    WrongFunction,
    MissingProof,
    FailedStep(FailureReason),
}

impl fmt::Display for StepVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepVerdict::Ok => f.write_str("ok"),
            StepVerdict::BadSignature => f.write_str("bad_signature"),
            StepVerdict::BrokenLink => f.write_str("broken_link"),
            StepVerdict::WrongFunction => f.write_str("wrong_function"),
            StepVerdict::MissingProof => f.write_str("missing_proof"),
            StepVerdict::FailedStep(r) => write!(f, "failed_step({r})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StepReport {
    pub step: u32,
    pub kind: LambdaKind,
    pub line: Option<usize>,
    #[serde(flatten)]
    pub verdict: StepVerdict,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub task_id: TaskId,
    pub steps: Vec<StepReport>,
    pub first_bad_step: Option<u32>,
    /// Lines carrying proofs of this task for steps the plan does not have.
    pub unexpected_lines: Vec<usize>,
}

impl VerificationReport {
    pub fn all_ok(&self) -> bool {
        self.first_bad_step.is_none() && self.unexpected_lines.is_empty()
    }

    pub fn render(&self) -> String {
        let mut s = format!("task {}\n", self.task_id);
        for r in &self.steps {
            let _ = writeln!(s, "step {} {} {}", r.step, r.kind, r.verdict);
        }
        for l in &self.unexpected_lines {
            let _ = writeln!(s, "unexpected proof at line {l}");
        }
        match self.first_bad_step {
            Some(k) => {
                let _ = writeln!(s, "first bad step: {k}");
            }
            None if self.unexpected_lines.is_empty() => s.push_str("chain verified\n"),
            None => {}
        }
        s
    }
}

/// Checks the proofs of `task_id` against the published plan.
///
/// Per step, in order: the signer is the planned instance, is registered
/// and its signature verifies; the proof is not a failure proof; it links to
/// the previous proof and consumes its output; it ran the planned function.
/// A failure proof reporting a digest mismatch, and a consumer receipt that
/// disagrees with the final output, are evidence against the producing step,
/// which is then marked as a broken link. Two different proofs for one step
/// mark it as badly signed; proofs for steps beyond the plan are listed as
/// unexpected.
pub fn verify_chain(
    proofs: &[ExecutionProof],
    annex: &[AnnexRecord],
    task_id: TaskId,
    plan: &PipelinePlan,
    registry: &KeyDirectory,
) -> Result<VerificationReport, TraceError> {
    let mine: Vec<(usize, &ExecutionProof)> = proofs.iter().enumerate().filter(|(_, p)| p.task_id == task_id).collect();
    if mine.is_empty() {
        return Err(TraceError::UnknownTask(task_id));
    }
    let at = |step: usize| mine.iter().find(|(_, p)| p.step_index as usize == step).copied();
    let conflicting = |step: usize, first: &ExecutionProof| mine.iter().any(|(_, p)| p.step_index as usize == step && *p != first);
    let unexpected_lines = mine.iter().filter(|(_, p)| p.step_index as usize >= plan.steps.len()).map(|(l, _)| *l).collect();

    let mut steps = Vec::with_capacity(plan.steps.len());
    for (i, planned) in plan.steps.iter().enumerate() {
        let found = at(i);
        let verdict = match found {
            None => StepVerdict::MissingProof,
            Some((_, p)) => {
                let prev = if i == 0 { None } else { at(i - 1).map(|(_, q)| q) };
                let linked = if i == 0 {
                    p.prev_proof_digest.is_zero()
                } else {
                    prev.is_some_and(|q| p.prev_proof_digest == q.digest() && p.input_digest == q.output_digest)
                };
                if Some(p.signer) != planned.instance || !registry.contains(&p.signer) || !p.verify_signature() || conflicting(i, p) {
                    StepVerdict::BadSignature
                } else if let Some(r) = p.failure {
                    StepVerdict::FailedStep(r)
                } else if !linked {
                    StepVerdict::BrokenLink
                } else if p.kind != planned.kind || p.fn_digest != planned.fn_digest {
                    StepVerdict::WrongFunction
                } else {
                    StepVerdict::Ok
                }
            }
        };
        steps.push(StepReport { step: i as u32, kind: planned.kind, line: found.map(|(l, _)| l), verdict });
    }

    for i in 1..steps.len() {
        if steps[i].verdict == StepVerdict::FailedStep(FailureReason::DigestMismatch) && steps[i - 1].verdict == StepVerdict::Ok {
            steps[i - 1].verdict = StepVerdict::BrokenLink;
        }
    }
    if let (Some(last), Some(consumer)) = (steps.last_mut(), plan.consumer) {
        let final_output = at(plan.steps.len() - 1).map(|(_, p)| p.output_digest);
        let disputed = annex.iter().any(|r| match r {
            AnnexRecord::Receipt(rc) => {
                rc.task_id == task_id && rc.signer == consumer && rc.verify_signature() && Some(rc.received_digest) != final_output
            }
            _ => false,
        });
        if disputed && last.verdict == StepVerdict::Ok {
            last.verdict = StepVerdict::BrokenLink;
        }
    }

    let first_bad_step = steps.iter().find(|s| s.verdict != StepVerdict::Ok).map(|s| s.step);
    Ok(VerificationReport { task_id, steps, first_bad_step, unexpected_lines })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LineageNode {
    pub line: usize,
    pub step: u32,
    pub kind: LambdaKind,
    pub input_digest: Digest,
    pub output_digest: Digest,
    pub signer: KeyId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LineageLeaf {
    pub batch_digest: Digest,
    /// Annex line of the verdict counts, when the prover published them.
    pub auth_line: Option<usize>,
    pub auth: Option<AuthSummary>,
}

/// Derivation of one digest, from the proof that produced it back to the
/// sealed POD batches.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LineageTree {
    pub root: Digest,
    pub task_id: TaskId,
    /// From the producing proof down to the first step.
    pub nodes: Vec<LineageNode>,
    pub leaves: Vec<LineageLeaf>,
    /// False if a back-link could not be resolved before the first step.
    pub complete: bool,
}

impl LineageTree {
    pub fn render(&self) -> String {
        let mut s = format!("{} (task {})\n", self.root, self.task_id);
        for (depth, n) in self.nodes.iter().enumerate() {
            let pad = "  ".repeat(depth + 1);
            let _ = writeln!(s, "{pad}<- step {} {} [line {}] input {}", n.step, n.kind, n.line, n.input_digest);
        }
        let pad = "  ".repeat(self.nodes.len() + 1);
        for leaf in &self.leaves {
            match leaf.auth {
                Some(a) => {
                    let _ = writeln!(
                        s,
                        "{pad}<- batch {} verified={} alleged={} rejected={}",
                        leaf.batch_digest, a.verified, a.alleged, a.rejected
                    );
                }
                None => {
                    let _ = writeln!(s, "{pad}<- batch {} (no verdicts)", leaf.batch_digest);
                }
            }
        }
        if !self.complete {
            let _ = writeln!(s, "{pad}<- unresolved back-link");
        }
        s
    }
}

pub fn trace_lineage(proofs: &[ExecutionProof], annex: &[AnnexRecord], output_digest: Digest) -> Result<LineageTree, TraceError> {
    let (start, head) = proofs
        .iter()
        .enumerate()
        .find(|(_, p)| !p.is_failure() && p.output_digest == output_digest)
        .ok_or(TraceError::UnknownDigest(output_digest))?;
    let task_id = head.task_id;
    let mut nodes: Vec<LineageNode> = Vec::new();
    let mut cur = (start, head);
    let mut complete = true;
    loop {
        let (line, p) = cur;
        nodes.push(LineageNode {
            line,
            step: p.step_index,
            kind: p.kind,
            input_digest: p.input_digest,
            output_digest: p.output_digest,
            signer: p.signer,
        });
        if p.prev_proof_digest.is_zero() || nodes.len() > proofs.len() {
            break;
        }
        match proofs.iter().enumerate().find(|(_, q)| q.task_id == task_id && q.digest() == p.prev_proof_digest) {
            Some(next) => cur = next,
            None => {
                complete = false;
                break;
            }
        }
    }

    let mut leaves = Vec::new();
    if complete {
        let genesis = nodes.last().expect("at least the head");
        let inputs = annex.iter().find_map(|r| match r {
            AnnexRecord::Inputs { task_id: t, input_digest, batches }
                if *t == task_id && *input_digest == genesis.input_digest && r.is_valid() =>
            {
                Some(batches.clone())
            }
            _ => None,
        });
        let auth = annex.iter().enumerate().find_map(|(i, r)| match r {
            AnnexRecord::Auth(a)
                if a.task_id == task_id
                    && a.step_index == genesis.step
                    && a.output_digest == genesis.output_digest
                    && a.signer == genesis.signer
                    && a.verify_signature() =>
            {
                Some((i, a))
            }
            _ => None,
        });
        for (i, d) in inputs.unwrap_or_default().into_iter().enumerate() {
            let counts = auth.and_then(|(_, a)| a.per_batch.get(i).copied());
            leaves.push(LineageLeaf { batch_digest: d, auth_line: auth.map(|(l, _)| l), auth: counts });
        }
    }
    Ok(LineageTree { root: output_digest, task_id, nodes, leaves, complete })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{hash, seeded_rng};
    use crate::dexec::PlanStep;

    struct Chain {
        keys: Vec<KeyPair>,
        proofs: Vec<ExecutionProof>,
        plan: PipelinePlan,
        registry: KeyDirectory,
        task: TaskId,
    }

    const KINDS: [LambdaKind; 3] = [LambdaKind::DataProver, LambdaKind::TaskExec, LambdaKind::DpGate];

    fn chain() -> Chain {
        let mut rng = seeded_rng(5, "log-test", 0);
        let keys: Vec<KeyPair> = (0..3).map(|_| KeyPair::generate(&mut rng)).collect();
        let task = TaskId([7; 16]);
        let mut proofs: Vec<ExecutionProof> = Vec::new();
        let mut input = hash(b"batches");
        for (i, k) in keys.iter().enumerate() {
            let out = hash(format!("out{i}").as_bytes());
            let prev = proofs.last().map(ExecutionProof::digest).unwrap_or(Digest::ZERO);
            proofs.push(ExecutionProof::sign(k, task, i as u32, KINDS[i], None, input, hash(&[i as u8]), out, prev));
            input = out;
        }
        let mut registry = KeyDirectory::new();
        let steps = keys
            .iter()
            .enumerate()
            .map(|(i, k)| {
                registry.register(k.public(), format!("instance-{i}"));
                PlanStep { kind: KINDS[i], fn_digest: hash(&[i as u8]), instance: Some(k.public()), node: None, high_importance: false }
            })
            .collect();
        let plan = PipelinePlan { task_id: task, consumer: None, steps, edge_keys: Vec::new(), require_dp: true };
        Chain { keys, proofs, plan, registry, task }
    }

    fn verdicts(c: &Chain, proofs: &[ExecutionProof]) -> (Vec<StepVerdict>, Option<u32>) {
        let r = verify_chain(proofs, &[], c.task, &c.plan, &c.registry).unwrap();
        (r.steps.iter().map(|s| s.verdict).collect(), r.first_bad_step)
    }

    #[test]
    fn honest_chain_verifies() {
        let c = chain();
        let (v, first) = verdicts(&c, &c.proofs);
        assert_eq!(v, vec![StepVerdict::Ok; 3]);
        assert_eq!(first, None);
    }

    #[test]
    fn second_proof_for_a_step_is_flagged() {
        let c = chain();
        let p = &c.proofs[1];
        let rogue = KeyPair::from_seed([9; 32]);
        let forged = ExecutionProof::sign(&rogue, c.task, 1, p.kind, None, p.input_digest, p.fn_digest, hash(b"x"), p.prev_proof_digest);
        let mut log = c.proofs.clone();
        log.push(forged);
        assert_eq!(verdicts(&c, &log), (vec![StepVerdict::Ok, StepVerdict::BadSignature, StepVerdict::Ok], Some(1)));

        let mut log = c.proofs.clone();
        log.push(c.proofs[1].clone());
        assert_eq!(verdicts(&c, &log).1, None);

        let extra = ExecutionProof::sign(&c.keys[2], c.task, 3, p.kind, None, p.input_digest, p.fn_digest, hash(b"y"), Digest::ZERO);
        let mut log = c.proofs.clone();
        log.push(extra);
        let r = verify_chain(&log, &[], c.task, &c.plan, &c.registry).unwrap();
        assert_eq!((r.first_bad_step, r.unexpected_lines.clone()), (None, vec![3]));
        assert!(!r.all_ok());
        assert!(r.render().contains("unexpected proof at line 3"));
    }

    #[test]
    fn flipped_output_then_resigned() {
        let c = chain();
        let mut tampered = c.proofs.clone();
        tampered[1].output_digest.0[0] ^= 1;
        assert_eq!(verdicts(&c, &tampered).0[1], StepVerdict::BadSignature);
        assert_eq!(verdicts(&c, &tampered).1, Some(1));

        let p = &c.proofs[1];
        let resigned =
            ExecutionProof::sign(&c.keys[1], p.task_id, 1, p.kind, None, p.input_digest, p.fn_digest, hash(b"other"), p.prev_proof_digest);
        let mut tampered = c.proofs.clone();
        tampered[1] = resigned;
        let (v, first) = verdicts(&c, &tampered);
        assert_eq!(v, vec![StepVerdict::Ok, StepVerdict::Ok, StepVerdict::BrokenLink]);
        assert_eq!(first, Some(2));
    }

    #[test]
    fn wrong_function_and_missing_and_unknown_task() {
        let c = chain();
        let mut plan = c.plan.clone();
        plan.steps[2].fn_digest = hash(b"agreed");
        let r = verify_chain(&c.proofs, &[], c.task, &plan, &c.registry).unwrap();
        assert_eq!(r.steps[2].verdict, StepVerdict::WrongFunction);
        let (v, first) = verdicts(&c, &c.proofs[..2]);
        assert_eq!(v[2], StepVerdict::MissingProof);
        assert_eq!(first, Some(2));
        assert_eq!(verify_chain(&c.proofs, &[], TaskId([1; 16]), &c.plan, &c.registry), Err(TraceError::UnknownTask(TaskId([1; 16]))));
    }

    #[test]
    fn digest_mismatch_blames_the_producer() {
        let c = chain();
        let p = &c.proofs[2];
        let mut proofs = c.proofs.clone();
        proofs[2] = ExecutionProof::sign(
            &c.keys[2],
            c.task,
            2,
            p.kind,
            Some(FailureReason::DigestMismatch),
            hash(b"tampered"),
            p.fn_digest,
            Digest::ZERO,
            p.prev_proof_digest,
        );
        let (v, first) = verdicts(&c, &proofs);
        assert_eq!(v, vec![StepVerdict::Ok, StepVerdict::BrokenLink, StepVerdict::FailedStep(FailureReason::DigestMismatch)]);
        assert_eq!(first, Some(1));
    }

    #[test]
    fn consumer_receipt_disputes_final_output() {
        let mut c = chain();
        let consumer = KeyPair::generate(&mut seeded_rng(5, "log-test", 1));
        c.plan.consumer = Some(consumer.public());
        let good = AnnexRecord::Receipt(Receipt::sign(&consumer, c.task, c.proofs[2].output_digest));
        let bad = AnnexRecord::Receipt(Receipt::sign(&consumer, c.task, hash(b"else")));
        let r = verify_chain(&c.proofs, &[good], c.task, &c.plan, &c.registry).unwrap();
        assert!(r.all_ok());
        let r = verify_chain(&c.proofs, &[bad], c.task, &c.plan, &c.registry).unwrap();
        assert_eq!(r.first_bad_step, Some(2));
        assert_eq!(r.steps[2].verdict, StepVerdict::BrokenLink);
    }

    #[test]
    fn append_rejects_forgeries_and_keeps_order() {
        let c = chain();
        let log = ProofLog::in_memory();
        assert_eq!(log.append(&c.proofs[0]).unwrap(), 0);
        let mut forged = c.proofs[1].clone();
        forged.signature.0[5] ^= 1;
        let before = log.text();
        assert!(matches!(log.append(&forged), Err(LogError::InvalidSignature)));
        assert_eq!(log.text(), before);
        log.append(&c.proofs[1]).unwrap();
        log.append(&c.proofs[2]).unwrap();
        assert_eq!(log.entries(), c.proofs);
        assert_eq!(log.text().lines().count(), 3);
        let reparsed = ProofLog::parse(&log.text()).unwrap();
        assert_eq!(reparsed.entries(), c.proofs);
    }

    #[test]
    fn file_backed_log_only_grows() {
        let c = chain();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("proofs.log");
        let log = ProofLog::create(&path).unwrap();
        log.append(&c.proofs[0]).unwrap();
        drop(log);
        let log = ProofLog::open(&path).unwrap();
        assert_eq!(log.append(&c.proofs[1]).unwrap(), 1);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, c.proofs[0].to_line() + &c.proofs[1].to_line());
    }

    #[test]
    fn lineage_walks_to_the_batches() {
        let c = chain();
        let batches = vec![hash(b"b1"), hash(b"b2")];
        let mut proofs = c.proofs.clone();
        let p = &proofs[0];
        proofs[0] = ExecutionProof::sign(
            &c.keys[0],
            c.task,
            0,
            p.kind,
            None,
            batch_list_digest(&batches),
            p.fn_digest,
            p.output_digest,
            Digest::ZERO,
        );
        // relink the rest of the chain
        for i in 1..3 {
            let q = proofs[i].clone();
            proofs[i] = ExecutionProof::sign(
                &c.keys[i],
                c.task,
                i as u32,
                q.kind,
                None,
                q.input_digest,
                q.fn_digest,
                q.output_digest,
                proofs[i - 1].digest(),
            );
        }
        let counts = vec![AuthSummary { verified: 1, alleged: 0, rejected: 0 }, AuthSummary { verified: 0, alleged: 1, rejected: 2 }];
        let annex = vec![
            AnnexRecord::Inputs { task_id: c.task, input_digest: batch_list_digest(&batches), batches: batches.clone() },
            AnnexRecord::Auth(AuthAttestation::sign(&c.keys[0], c.task, 0, proofs[0].output_digest, counts.clone())),
        ];
        let tree = trace_lineage(&proofs, &annex, proofs[2].output_digest).unwrap();
        assert!(tree.complete);
        assert_eq!(tree.nodes.iter().map(|n| n.step).collect::<Vec<_>>(), vec![2, 1, 0]);
        assert_eq!(tree.leaves.iter().map(|l| l.batch_digest).collect::<Vec<_>>(), batches);
        assert_eq!(tree.leaves[1].auth, Some(counts[1]));
        assert!(tree.render().contains("alleged=1 rejected=2"));
        assert_eq!(trace_lineage(&proofs, &annex, hash(b"nowhere")), Err(TraceError::UnknownDigest(hash(b"nowhere"))));
    }

    #[test]
    fn annex_lines_round_trip() {
        let c = chain();
        let records = vec![
            AnnexRecord::Inputs { task_id: c.task, input_digest: batch_list_digest(&[]), batches: vec![] },
            AnnexRecord::Inputs { task_id: c.task, input_digest: batch_list_digest(&[hash(b"x")]), batches: vec![hash(b"x")] },
            AnnexRecord::Auth(AuthAttestation::sign(
                &c.keys[0],
                c.task,
                0,
                hash(b"o"),
                vec![AuthSummary { verified: 3, alleged: 2, rejected: 1 }],
            )),
            AnnexRecord::Receipt(Receipt::sign(&c.keys[1], c.task, hash(b"r"))),
        ];
        let annex = Annex::in_memory();
        for r in &records {
            annex.append(r).unwrap();
        }
        assert_eq!(Annex::parse(&annex.text()).unwrap().entries(), records);
        let bogus = AnnexRecord::Inputs { task_id: c.task, input_digest: hash(b"no"), batches: vec![] };
        assert!(matches!(annex.append(&bogus), Err(LogError::InputsMismatch)));
    }
}
