//! The basic execution unit: a data validator, a sandbox and a proof
//! generator sharing one simulated enclave, with one sealed entry and one
//! sealed exit.
//!
//! An instance's only inputs are the sealed blobs handed to
//! [`LambdaInstance::execute_step`] and its key slots; its only outputs are
//! the sealed result and the signed proof (plus, for the data prover, a
//! signed per-batch verdict summary).

mod payload;
mod proof;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use payload::{AggValue, Payload, PodBatch, Release, ValidatedBatch};
pub use proof::{ExecutionProof, FailureReason, LambdaKind, ProofParseError};

use crate::codec::{Canonical, Decode, DecodeError, Decoder, Encoder};
use crate::crypto::{
    hash, hash_canonical, seal_anonymous, seeded_rng, CryptoError, Digest, EdgeKey, KeyDirectory, KeyId, KeyPair, SealedBlob,
    SecurityLevel, TaskId,
};
use crate::data_prover::{prover_lambda_fn, AuthSummary, Verdict};
use crate::dp_gate::{self, BudgetLedger, DpError, NoiseSource, PrivacyParams, SeededNoise, ZeroNoise};
use crate::proof_log::{AnnexRecord, AuthAttestation};
use crate::taskdsl::{self, clipped_sum, eval, eval_predicate, EvalError, Record, ReleaseShape, TaskExpr, Value};

/// Whether a step hands its result to another step or to the consumer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    Forward,
    Release,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Laplace,
    /// Exact releases; for reproducing reference values only.
    Zero,
}

/// The aggregate a privacy gate is willing to release, which fixes its
/// sensitivity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReleaseSpec {
    Count,
    Sum { lo: f64, hi: f64 },
    Mean { lo: f64, hi: f64 },
    Vector { dim: u32, lo: f64, hi: f64 },
}

impl ReleaseSpec {
    pub fn from_shape(shape: ReleaseShape) -> Option<Self> {
        match shape {
            ReleaseShape::Filter | ReleaseShape::Count => Some(ReleaseSpec::Count),
            ReleaseShape::Sum { lo, hi } => Some(ReleaseSpec::Sum { lo, hi }),
            ReleaseShape::Mean { lo, hi } => Some(ReleaseSpec::Mean { lo, hi }),
            ReleaseShape::Unbounded => None,
        }
    }

    /// Number of epsilon-charges one release costs each contributor.
    pub fn charges(self) -> u32 {
        match self {
            ReleaseSpec::Count | ReleaseSpec::Sum { .. } => 1,
            ReleaseSpec::Mean { .. } | ReleaseSpec::Vector { .. } => 2,
        }
    }
}

impl Canonical for ReleaseSpec {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            ReleaseSpec::Count => enc.u8(0),
            ReleaseSpec::Sum { lo, hi } => enc.u8(1).f64(*lo).f64(*hi),
            ReleaseSpec::Mean { lo, hi } => enc.u8(2).f64(*lo).f64(*hi),
            ReleaseSpec::Vector { dim, lo, hi } => enc.u8(3).u32(*dim).f64(*lo).f64(*hi),
        };
    }
}

/// The code a λ runs. Its canonical encoding is what attestation measures.
#[derive(Clone, Debug, PartialEq)]
pub enum LambdaFunction {
    DataProver {
        signers: Vec<KeyId>,
        exclude_alleged: bool,
    },
    TaskExec {
        task: TaskExpr,
        delivery: Option<String>,
        emit: Emit,
    },
    /// Clipped element-wise sum of the `params` vector of every record.
    Aggregator {
        dim: u32,
        lo: f64,
        hi: f64,
        emit: Emit,
    },
    DpGate {
        epsilon: f64,
        release: ReleaseSpec,
        noise: NoiseMode,
    },
    /// Forwards its input untouched.
    Identity,
    /// Behaves like the wrapped function but is not the function that was
    /// agreed on; stands in for any substituted code.
    Modified(Box<LambdaFunction>),
}

impl Canonical for LambdaFunction {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            LambdaFunction::DataProver { signers, exclude_alleged } => {
                enc.u8(0x10).list(signers).bool(*exclude_alleged);
            }
            LambdaFunction::TaskExec { task, delivery, emit } => {
                enc.u8(0x11).value(&taskdsl::fn_digest(task)).option(delivery.as_ref()).value(emit);
            }
            LambdaFunction::Aggregator { dim, lo, hi, emit } => {
                enc.u8(0x12).u32(*dim).f64(*lo).f64(*hi).value(emit);
            }
            LambdaFunction::DpGate { epsilon, release, noise } => {
                enc.u8(0x13).f64(*epsilon).value(release).u8(match noise {
                    NoiseMode::Laplace => 0,
                    NoiseMode::Zero => 1,
                });
            }
            LambdaFunction::Identity => {
                enc.u8(0x14);
            }
            LambdaFunction::Modified(inner) => {
                enc.u8(0x15).value(inner.as_ref());
            }
        }
    }
}

impl Canonical for Emit {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(match self {
            Emit::Forward => 0,
            Emit::Release => 1,
        });
    }
}

impl Decode for Emit {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(Emit::Forward),
            1 => Ok(Emit::Release),
            tag => Err(DecodeError::InvalidTag { what: "emit", tag }),
        }
    }
}

impl LambdaFunction {
    pub fn digest(&self) -> Digest {
        hash_canonical(self)
    }
}

/// Measurement an attestation report must carry for `kind` running `fn_digest`.
pub fn measurement(kind: LambdaKind, fn_digest: &Digest) -> Digest {
    let mut enc = Encoder::new();
    enc.str("pixiu/lambda-runtime/v1").str(kind.token()).value(fn_digest);
    hash(&enc.into_bytes())
}

/// Task code as the consumer ships it, sealed to the task-execution instance.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskPackage {
    pub source: String,
    pub delivery: Option<String>,
    pub emit: Emit,
}

impl Canonical for TaskPackage {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.source).option(self.delivery.as_ref()).value(&self.emit);
    }
}

impl Decode for TaskPackage {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { source: dec.str()?, delivery: dec.option()?, emit: Emit::decode(dec)? })
    }
}

/// One edge key, sealed by the data owner to a party on that edge.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyDelivery {
    pub task_id: TaskId,
    pub edge: u32,
    pub key: [u8; 32],
}

impl Canonical for KeyDelivery {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.task_id).u32(self.edge).fixed(&self.key);
    }
}

impl Decode for KeyDelivery {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { task_id: TaskId::decode(dec)?, edge: dec.u32()?, key: dec.array()? })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{reason}: {detail}")]
pub struct StepError {
    pub reason: FailureReason,
    pub detail: String,
}

impl StepError {
    pub fn new(reason: FailureReason, detail: impl Into<String>) -> Self {
        Self { reason, detail: detail.into() }
    }
}

impl From<DecodeError> for StepError {
    fn from(e: DecodeError) -> Self {
        StepError::new(FailureReason::DecodeError, e.to_string())
    }
}

impl From<EvalError> for StepError {
    fn from(e: EvalError) -> Self {
        let reason = match e {
            EvalError::MissingField(_) => FailureReason::MissingField,
            EvalError::TypeMismatch { .. } => FailureReason::TypeMismatch,
            EvalError::EmptyAggregate(_) => FailureReason::EmptyAggregate,
        };
        StepError::new(reason, e.to_string())
    }
}

impl From<DpError> for StepError {
    fn from(e: DpError) -> Self {
        let reason = match e {
            DpError::BudgetExhausted(_) => FailureReason::BudgetExhausted,
            _ => FailureReason::SensitivityMismatch,
        };
        StepError::new(reason, e.to_string())
    }
}

/// Per-run facts every step sees.
#[derive(Clone, Copy)]
pub struct StepContext<'a> {
    pub task_id: TaskId,
    pub seed: u64,
    /// Budget the privacy gate debits; `None` skips accounting.
    pub ledger: Option<&'a BudgetLedger>,
}

/// Validated step input.
#[derive(Clone, Debug)]
pub struct ValidInput {
    pub plaintext: Vec<u8>,
    pub digest: Digest,
    /// Wire digests of the POD batches, for the first step only.
    pub batch_digests: Vec<Digest>,
}

/// What a step leaves behind: the sealed output (absent on failure), the
/// proof, and any side records for the public log.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub sealed_output: Option<SealedBlob>,
    pub proof: ExecutionProof,
    pub annex: Vec<AnnexRecord>,
}

/// Input digest of the first step: binds the exact set of sealed batches.
pub fn batch_list_digest(batch_digests: &[Digest]) -> Digest {
    hash_canonical(batch_digests)
}

/// A simulated enclave hosting one λ.
pub struct LambdaInstance {
    keypair: KeyPair,
    level: SecurityLevel,
    step_index: u32,
    kind: LambdaKind,
    function: Option<LambdaFunction>,
    task_id: TaskId,
    ingress: Option<EdgeKey>,
    egress: Option<EdgeKey>,
}

impl LambdaInstance {
    pub fn new(keypair: KeyPair, level: SecurityLevel, task_id: TaskId, step_index: u32, kind: LambdaKind) -> Self {
        Self { keypair, level, step_index, kind, function: None, task_id, ingress: None, egress: None }
    }

    pub fn id(&self) -> KeyId {
        self.keypair.public()
    }

    pub fn kind(&self) -> LambdaKind {
        self.kind
    }

    pub fn step_index(&self) -> u32 {
        self.step_index
    }

    pub fn security_level(&self) -> SecurityLevel {
        self.level
    }

    pub fn function(&self) -> Option<&LambdaFunction> {
        self.function.as_ref()
    }

    pub fn load(&mut self, function: LambdaFunction) {
        self.function = Some(function);
    }

    /// Opens task code sealed to this instance and loads it.
    pub fn load_sealed_task(&mut self, blob: &SealedBlob) -> Result<(), StepError> {
        let plain = self.keypair.unseal(blob).map_err(|e| StepError::new(FailureReason::AuthFailure, e.to_string()))?;
        let pkg = TaskPackage::from_canonical(&plain)?;
        let task = taskdsl::parse(&pkg.source).map_err(|e| StepError::new(FailureReason::BadInput, e.to_string()))?;
        self.function = Some(LambdaFunction::TaskExec { task, delivery: pkg.delivery, emit: pkg.emit });
        Ok(())
    }

    /// Digest of the function actually loaded.
    pub fn fn_digest(&self) -> Digest {
        self.function.as_ref().map(LambdaFunction::digest).unwrap_or(Digest::ZERO)
    }

    pub fn measurement(&self) -> Digest {
        measurement(self.kind, &self.fn_digest())
    }

    /// Installs an edge key sealed to this instance. Only the edges adjacent
    /// to this step are accepted.
    pub fn install_key(&mut self, blob: &SealedBlob) -> Result<u32, StepError> {
        let plain = self.keypair.unseal(blob).map_err(|e| StepError::new(FailureReason::AuthFailure, e.to_string()))?;
        let d = KeyDelivery::from_canonical(&plain)?;
        if d.task_id != self.task_id {
            return Err(StepError::new(FailureReason::BadInput, "key delivery for another task"));
        }
        let key = EdgeKey::from_bytes(d.key);
        if d.edge == self.step_index {
            self.ingress = Some(key);
        } else if d.edge == self.step_index + 1 {
            self.egress = Some(key);
        } else {
            return Err(StepError::new(FailureReason::BadInput, format!("edge {} is not adjacent", d.edge)));
        }
        Ok(d.edge)
    }

    pub fn has_keys(&self) -> bool {
        self.ingress.is_some() && self.egress.is_some()
    }

    /// Fault hook: the host replaces the loaded code after attestation.
    pub fn swap_function(&mut self, function: LambdaFunction) {
        self.function = Some(function);
    }

    /// Opens edge traffic with either held key.
    pub fn open_edge(&self, blob: &SealedBlob) -> Result<Vec<u8>, CryptoError> {
        let mut last = CryptoError::AuthFailure;
        for k in self.ingress.iter().chain(&self.egress) {
            match k.open(blob) {
                Ok(p) => return Ok(p),
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    pub fn can_open(&self, blob: &SealedBlob) -> bool {
        self.open_edge(blob).is_ok()
    }

    pub fn edge_key_ids(&self) -> Vec<KeyId> {
        self.ingress.iter().chain(&self.egress).map(EdgeKey::id).collect()
    }

    /// Fault hook: models an extracted egress key (enclave compromise).
    pub fn leaked_egress_key(&self) -> Option<EdgeKey> {
        self.egress.clone()
    }

    /// Opens the sealed input. The first step takes one blob per POD;
    /// later steps take exactly one blob, whose plaintext must hash to the
    /// predecessor's attested output digest.
    pub fn validate_input(&self, inputs: &[SealedBlob], expected_prev: Option<&ExecutionProof>) -> Result<ValidInput, (StepError, Digest)> {
        let key = self.ingress.as_ref().ok_or((StepError::new(FailureReason::MissingKey, "no ingress key"), Digest::ZERO))?;
        if self.step_index == 0 {
            let batch_digests: Vec<Digest> = inputs.iter().map(SealedBlob::digest).collect();
            let digest = batch_list_digest(&batch_digests);
            let fail = |e: StepError| (e, digest);
            let mut batches = Vec::with_capacity(inputs.len());
            let mut seen = BTreeSet::new();
            for blob in inputs {
                let plain = key.open(blob).map_err(|e| fail(StepError::new(FailureReason::AuthFailure, e.to_string())))?;
                let batch = PodBatch::from_canonical(&plain).map_err(|e| fail(e.into()))?;
                if batch.task_id != self.task_id {
                    return Err(fail(StepError::new(FailureReason::BadInput, "batch for another task")));
                }
                if !seen.insert(batch.pod_id) {
                    return Err(fail(StepError::new(FailureReason::DuplicateBatch, format!("second batch from {}", batch.pod_id))));
                }
                batches.push(batch);
            }
            let plaintext = Payload::Batches(batches).to_canonical();
            return Ok(ValidInput { plaintext, digest, batch_digests });
        }
        let [blob] = inputs else {
            return Err((StepError::new(FailureReason::BadInput, format!("expected one input, got {}", inputs.len())), Digest::ZERO));
        };
        let plaintext = key.open(blob).map_err(|e| (StepError::new(FailureReason::AuthFailure, e.to_string()), Digest::ZERO))?;
        let digest = hash(&plaintext);
        if let Some(prev) = expected_prev {
            if prev.output_digest != digest {
                return Err((StepError::new(FailureReason::DigestMismatch, "input differs from predecessor's attested output"), digest));
            }
        }
        Ok(ValidInput { plaintext, digest, batch_digests: Vec::new() })
    }

    /// Applies the loaded function. Pure apart from the seeded generators
    /// it derives from `ctx` and the budget debit of a privacy gate.
    pub fn run_sandbox(&self, ctx: &StepContext<'_>, input: &[u8]) -> Result<Vec<u8>, StepError> {
        let function = self.function.as_ref().ok_or_else(|| StepError::new(FailureReason::BadInput, "no function loaded"))?;
        run_function(function, ctx, self.step_index, input)
    }

    pub fn generate_proof(
        &self,
        task_id: TaskId,
        input_digest: Digest,
        output_digest: Digest,
        prev: Option<&ExecutionProof>,
        failure: Option<FailureReason>,
    ) -> ExecutionProof {
        ExecutionProof::sign(
            &self.keypair,
            task_id,
            self.step_index,
            self.kind,
            failure,
            input_digest,
            self.fn_digest(),
            if failure.is_some() { Digest::ZERO } else { output_digest },
            prev.map(ExecutionProof::digest).unwrap_or(Digest::ZERO),
        )
    }

    /// validate → sandbox → seal → proof. Any error yields a signed failure
    /// proof in place of an output.
    pub fn execute_step(&self, ctx: &StepContext<'_>, inputs: &[SealedBlob], prev: Option<&ExecutionProof>) -> StepOutcome {
        let mut annex = Vec::new();
        let fail = |err: StepError, input_digest: Digest, annex: Vec<AnnexRecord>| StepOutcome {
            sealed_output: None,
            proof: self.generate_proof(ctx.task_id, input_digest, Digest::ZERO, prev, Some(err.reason)),
            annex,
        };
        let valid = match self.validate_input(inputs, prev) {
            Ok(v) => v,
            Err((err, digest)) => {
                if self.step_index == 0 {
                    let batches = inputs.iter().map(SealedBlob::digest).collect();
                    annex.push(AnnexRecord::Inputs { task_id: ctx.task_id, input_digest: digest, batches });
                }
                return fail(err, digest, annex);
            }
        };
        if self.step_index == 0 {
            annex.push(AnnexRecord::Inputs { task_id: ctx.task_id, input_digest: valid.digest, batches: valid.batch_digests.clone() });
        }
        let output = match self.run_sandbox(ctx, &valid.plaintext) {
            Ok(o) => o,
            Err(err) => return fail(err, valid.digest, annex),
        };
        let Some(egress) = self.egress.as_ref() else {
            return fail(StepError::new(FailureReason::MissingKey, "no egress key"), valid.digest, annex);
        };
        let output_digest = hash(&output);
        if self.kind == LambdaKind::DataProver {
            if let Ok(Payload::Validated { batches, .. }) = Payload::from_canonical(&output) {
                annex.push(AnnexRecord::Auth(AuthAttestation::sign(
                    &self.keypair,
                    ctx.task_id,
                    self.step_index,
                    output_digest,
                    batches.iter().map(|b| b.summary).collect(),
                )));
            }
        }
        let mut rng = seeded_rng(ctx.seed, &format!("seal/{}", ctx.task_id), self.step_index as u64);
        let sealed = egress.seal(&output, &mut rng);
        let proof = self.generate_proof(ctx.task_id, valid.digest, output_digest, prev, None);
        StepOutcome { sealed_output: Some(sealed), proof, annex }
    }
}

fn expect_payload(input: &[u8]) -> Result<Payload, StepError> {
    Ok(Payload::from_canonical(input)?)
}

fn bad_input(f: &str, p: &Payload) -> StepError {
    StepError::new(FailureReason::BadInput, format!("{f} cannot take a {} payload", p.variant()))
}

fn run_function(f: &LambdaFunction, ctx: &StepContext<'_>, step: u32, input: &[u8]) -> Result<Vec<u8>, StepError> {
    match f {
        LambdaFunction::Identity => Ok(input.to_vec()),
        LambdaFunction::Modified(inner) => run_function(inner, ctx, step, input),
        LambdaFunction::DataProver { signers, exclude_alleged } => {
            let Payload::Batches(batches) = expect_payload(input)? else {
                return Err(bad_input("data prover", &expect_payload(input)?));
            };
            let mut registry = KeyDirectory::new();
            for s in signers {
                registry.register(*s, "signer");
            }
            let mut auth = AuthSummary::default();
            let mut out = Vec::with_capacity(batches.len());
            for batch in &batches {
                let po = prover_lambda_fn(&batch.records, &registry);
                auth.add(&po.summary);
                let records = po
                    .validated
                    .into_iter()
                    .filter(|(_, tag)| !(*exclude_alleged && tag.verdict == Verdict::Alleged))
                    .map(|(rec, tag)| (rec.payload, tag.verdict))
                    .collect();
                out.push(ValidatedBatch { pod_id: batch.pod_id, records, summary: po.summary });
            }
            Ok(Payload::Validated { batches: out, auth }.to_canonical())
        }
        LambdaFunction::TaskExec { task, delivery, emit } => {
            let p = expect_payload(input)?;
            let Payload::Validated { batches, auth } = p else {
                return Err(bad_input("task execution", &p));
            };
            let out = exec_task(task, delivery.as_deref(), ctx, step, &batches, auth)?;
            Ok(finish(out, *emit).to_canonical())
        }
        LambdaFunction::Aggregator { dim, lo, hi, emit } => {
            let p = expect_payload(input)?;
            let Payload::Validated { batches, auth } = p else {
                return Err(bad_input("aggregator", &p));
            };
            let mut sum = vec![0.0f64; *dim as usize];
            let mut n = 0u64;
            for (rec, _) in batches.iter().flat_map(|b| &b.records) {
                let v = match rec.get("params") {
                    Some(Value::Vector(v)) => v,
                    Some(other) => return Err(StepError::new(FailureReason::TypeMismatch, format!("params is a {}", other.tag()))),
                    None => return Err(StepError::new(FailureReason::MissingField, "params")),
                };
                if v.len() != *dim as usize {
                    return Err(StepError::new(FailureReason::TypeMismatch, format!("params has {} elements, want {dim}", v.len())));
                }
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x.clamp(*lo, *hi);
                }
                n += 1;
            }
            let out = Payload::Aggregate {
                value: AggValue::VectorSum { sum, n },
                contributors: contributors(&batches),
                auth,
                alleged: any_alleged(&batches),
            };
            Ok(finish(out, *emit).to_canonical())
        }
        LambdaFunction::DpGate { epsilon, release, noise } => {
            let p = expect_payload(input)?;
            let mut source: Box<dyn NoiseSource> = match noise {
                NoiseMode::Laplace => Box::new(SeededNoise::new(seeded_rng(ctx.seed, &format!("dp/{}", ctx.task_id), step as u64))),
                NoiseMode::Zero => Box::new(ZeroNoise),
            };
            dp_release(*epsilon, *release, ctx, p, source.as_mut()).map(|r| Payload::Release(r).to_canonical())
        }
    }
}

fn contributors(batches: &[ValidatedBatch]) -> Vec<KeyId> {
    batches.iter().filter(|b| !b.records.is_empty()).map(|b| b.pod_id).collect()
}

fn any_alleged(batches: &[ValidatedBatch]) -> bool {
    batches.iter().flat_map(|b| &b.records).any(|(_, v)| *v == Verdict::Alleged)
}

fn exec_task(
    task: &TaskExpr,
    delivery: Option<&str>,
    ctx: &StepContext<'_>,
    step: u32,
    batches: &[ValidatedBatch],
    auth: AuthSummary,
) -> Result<Payload, StepError> {
    let alleged = any_alleged(batches);
    let contributors = contributors(batches);
    let all: Vec<Record> = batches.iter().flat_map(|b| b.records.iter().map(|(r, _)| r.clone())).collect();
    let value = match task.release_shape() {
        ReleaseShape::Filter => {
            let mut flags = Vec::with_capacity(batches.len());
            let mut matched = Vec::new();
            for b in batches {
                let mut f = Vec::with_capacity(b.records.len());
                for (r, _) in &b.records {
                    let hit = eval_predicate(task, r)?;
                    if hit {
                        matched.push(r.clone());
                    }
                    f.push(hit);
                }
                flags.push(f);
            }
            let deliveries = match delivery {
                Some(content) => seal_deliveries(content, ctx, step, batches, &flags)?,
                None => Vec::new(),
            };
            return Ok(Payload::Filtered { flags, matched, deliveries, contributors, auth, alleged });
        }
        ReleaseShape::Count => match eval(task, &Value::List(all))? {
            Value::Int(c) => AggValue::Count(c as u64),
            other => AggValue::Raw(other),
        },
        ReleaseShape::Sum { lo, hi } | ReleaseShape::Mean { lo, hi } => {
            let (TaskExpr::Sum { field, .. } | TaskExpr::Mean { field, .. }) = task else {
                unreachable!("clipped shapes come from sum and mean nodes")
            };
            let (sum, n) = clipped_sum(field, lo, hi, &all)?;
            if matches!(task, TaskExpr::Sum { .. }) {
                AggValue::Sum { sum, n: n as u64 }
            } else {
                AggValue::Mean { sum, n: n as u64 }
            }
        }
        ReleaseShape::Unbounded => AggValue::Raw(eval(task, &Value::List(all))?),
    };
    Ok(Payload::Aggregate { value, contributors, auth, alleged })
}

/// One equal-length blob per POD, sealed anonymously to that POD: the
/// content for matching PODs, zero padding for the rest.
fn seal_deliveries(
    content: &str,
    ctx: &StepContext<'_>,
    step: u32,
    batches: &[ValidatedBatch],
    flags: &[Vec<bool>],
) -> Result<Vec<SealedBlob>, StepError> {
    let mut rng = seeded_rng(ctx.seed, &format!("deliver/{}", ctx.task_id), step as u64);
    let body = content.as_bytes();
    batches
        .iter()
        .zip(flags)
        .map(|(b, f)| {
            let mut msg = Vec::with_capacity(body.len() + 1);
            if f.iter().any(|x| *x) {
                msg.push(1);
                msg.extend_from_slice(body);
            } else {
                msg.push(0);
                msg.resize(body.len() + 1, 0);
            }
            seal_anonymous(&b.pod_id, &msg, &mut rng).map_err(|e| StepError::new(FailureReason::BadInput, e.to_string()))
        })
        .collect()
}

fn record(fields: Vec<(&str, Value)>) -> Value {
    Value::Record(fields.into_iter().map(|(k, v)| (k.to_owned(), v)).collect())
}

/// Result without a privacy gate, for pipelines that do not require one.
fn exact_release(value: &AggValue) -> Value {
    match value {
        AggValue::Count(c) => record(vec![("count", Value::Int(*c as i64))]),
        AggValue::Sum { sum, .. } => record(vec![("sum", Value::Float(*sum))]),
        AggValue::Mean { sum, n } => record(vec![("sum", Value::Float(*sum)), ("count", Value::Int(*n as i64))]),
        AggValue::VectorSum { sum, n } => record(vec![("sum", Value::Vector(sum.clone())), ("count", Value::Int(*n as i64))]),
        AggValue::Raw(v) => record(vec![("value", v.clone())]),
    }
}

fn finish(out: Payload, emit: Emit) -> Payload {
    if emit == Emit::Forward {
        return out;
    }
    match out {
        Payload::Filtered { flags, deliveries, auth, alleged, .. } => {
            let hits = flags.iter().filter(|f| f.iter().any(|x| *x)).count() as u64;
            Payload::Release(Release { value: exact_release(&AggValue::Count(hits)), deliveries, auth, alleged, noised: false })
        }
        Payload::Aggregate { value, auth, alleged, .. } => {
            Payload::Release(Release { value: exact_release(&value), deliveries: Vec::new(), auth, alleged, noised: false })
        }
        other => other,
    }
}

fn dp_release(
    epsilon: f64,
    spec: ReleaseSpec,
    ctx: &StepContext<'_>,
    input: Payload,
    noise: &mut dyn NoiseSource,
) -> Result<Release, StepError> {
    let mismatch = |what: &str| StepError::new(FailureReason::SensitivityMismatch, format!("gate releases {spec:?}, got {what}"));
    let (value, contributors, deliveries, auth, alleged) = match input {
        Payload::Filtered { flags, deliveries, contributors, auth, alleged, .. } => {
            let hits = flags.iter().filter(|f| f.iter().any(|x| *x)).count() as u64;
            (AggValue::Count(hits), contributors, deliveries, auth, alleged)
        }
        Payload::Aggregate { value, contributors, auth, alleged } => (value, contributors, Vec::new(), auth, alleged),
        other => return Err(bad_input("privacy gate", &other)),
    };
    let released = match (spec, &value) {
        (ReleaseSpec::Count, AggValue::Count(c)) => {
            record(vec![("count", Value::Float(dp_gate::dp_count(*c, &PrivacyParams::new(epsilon, 1.0)?, noise)?))])
        }
        (ReleaseSpec::Sum { lo, hi }, AggValue::Sum { sum, .. }) => {
            let p = PrivacyParams::new(epsilon, hi - lo)?;
            record(vec![("sum", Value::Float(dp_gate::dp_sum(*sum, lo, hi, &p, noise)?))])
        }
        (ReleaseSpec::Mean { lo, hi }, AggValue::Mean { sum, n }) => {
            let s = dp_gate::dp_sum(*sum, lo, hi, &PrivacyParams::new(epsilon, hi - lo)?, noise)?;
            let c = dp_gate::dp_count(*n, &PrivacyParams::new(epsilon, 1.0)?, noise)?;
            record(vec![("sum", Value::Float(s)), ("count", Value::Float(c))])
        }
        (ReleaseSpec::Vector { dim, lo, hi }, AggValue::VectorSum { sum, n }) if sum.len() == dim as usize => {
            let p = PrivacyParams::new(epsilon, dim as f64 * (hi - lo))?;
            let s = dp_gate::dp_vector_sum(sum, lo, hi, &p, noise)?;
            let c = dp_gate::dp_count(*n, &PrivacyParams::new(epsilon, 1.0)?, noise)?;
            record(vec![("sum", Value::Vector(s)), ("count", Value::Float(c))])
        }
        (_, v) => return Err(mismatch(&format!("{v:?}"))),
    };
    // released only once every contributor could pay for it
    if let Some(ledger) = ctx.ledger {
        ledger.charge(&contributors, epsilon * spec.charges() as f64)?;
    }
    Ok(Release { value: released, deliveries, auth, alleged, noised: true })
}
