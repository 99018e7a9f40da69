use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Encoder;
use crate::crypto::{hash, verify, Digest, KeyId, KeyPair, Signature, TaskId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaKind {
    DataProver,
    TaskExec,
    DpGate,
    Aggregator,
}

impl LambdaKind {
    pub fn token(self) -> &'static str {
        match self {
            LambdaKind::DataProver => "DATA_PROVER",
            LambdaKind::TaskExec => "TASK_EXEC",
            LambdaKind::DpGate => "DP_GATE",
            LambdaKind::Aggregator => "AGGREGATOR",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        [LambdaKind::DataProver, LambdaKind::TaskExec, LambdaKind::DpGate, LambdaKind::Aggregator].into_iter().find(|k| k.token() == s)
    }
}

impl fmt::Display for LambdaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Why a step aborted. Carried in the kind field of a failure proof.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailureReason {
    AuthFailure,
    DigestMismatch,
    DecodeError,
    BadInput,
    DuplicateBatch,
    MissingKey,
    MissingField,
    TypeMismatch,
    EmptyAggregate,
    SensitivityMismatch,
    BudgetExhausted,
}

impl FailureReason {
    pub const ALL: [FailureReason; 11] = [
        FailureReason::AuthFailure,
        FailureReason::DigestMismatch,
        FailureReason::DecodeError,
        FailureReason::BadInput,
        FailureReason::DuplicateBatch,
        FailureReason::MissingKey,
        FailureReason::MissingField,
        FailureReason::TypeMismatch,
        FailureReason::EmptyAggregate,
        FailureReason::SensitivityMismatch,
        FailureReason::BudgetExhausted,
    ];

    pub fn token(self) -> &'static str {
        match self {
            FailureReason::AuthFailure => "AUTH_FAILURE",
            FailureReason::DigestMismatch => "DIGEST_MISMATCH",
            FailureReason::DecodeError => "DECODE_ERROR",
            FailureReason::BadInput => "BAD_INPUT",
            FailureReason::DuplicateBatch => "DUPLICATE_BATCH",
            FailureReason::MissingKey => "MISSING_KEY",
            FailureReason::MissingField => "MISSING_FIELD",
            FailureReason::TypeMismatch => "TYPE_MISMATCH",
            FailureReason::EmptyAggregate => "EMPTY_AGGREGATE",
            FailureReason::SensitivityMismatch => "SENSITIVITY_MISMATCH",
            FailureReason::BudgetExhausted => "BUDGET_EXHAUSTED",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.token() == s)
    }
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Signed, payload-free record of one step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecutionProof {
    pub task_id: TaskId,
    pub step_index: u32,
    pub kind: LambdaKind,
    /// Present on failure proofs, whose output digest is zero.
    pub failure: Option<FailureReason>,
    pub input_digest: Digest,
    pub fn_digest: Digest,
    pub output_digest: Digest,
    pub prev_proof_digest: Digest,
    pub signer: KeyId,
    pub signature: Signature,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed proof line: {0}")]
pub struct ProofParseError(pub String);

impl ExecutionProof {
    /// Builds and signs a proof; the signer is the key pair's public key.
    #[allow(clippy::too_many_arguments)]
    pub fn sign(
        key: &KeyPair,
        task_id: TaskId,
        step_index: u32,
        kind: LambdaKind,
        failure: Option<FailureReason>,
        input_digest: Digest,
        fn_digest: Digest,
        output_digest: Digest,
        prev_proof_digest: Digest,
    ) -> Self {
        let mut p = ExecutionProof {
            task_id,
            step_index,
            kind,
            failure,
            input_digest,
            fn_digest,
            output_digest,
            prev_proof_digest,
            signer: key.public(),
            signature: Signature([0u8; 64]),
        };
        p.signature = key.sign(&p.signed_bytes());
        p
    }

    pub fn kind_token(&self) -> String {
        match self.failure {
            Some(r) => format!("{}:{}", self.kind.token(), r.token()),
            None => self.kind.token().to_owned(),
        }
    }

    /// Canonical encoding of every field before the signature.
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.value(&self.task_id)
            .u64(self.step_index as u64)
            .str(&self.kind_token())
            .value(&self.input_digest)
            .value(&self.fn_digest)
            .value(&self.output_digest)
            .value(&self.prev_proof_digest)
            .value(&self.signer);
        enc.into_bytes()
    }

    pub fn verify_signature(&self) -> bool {
        verify(&self.signer, &self.signed_bytes(), &self.signature.0)
    }

    pub fn is_failure(&self) -> bool {
        self.failure.is_some()
    }

    fn unsigned_line(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}|{}|{}",
            self.task_id,
            self.step_index,
            self.kind_token(),
            self.input_digest,
            self.fn_digest,
            self.output_digest,
            self.prev_proof_digest,
            self.signer
        )
    }

    /// Log line including the trailing newline.
    pub fn to_line(&self) -> String {
        format!("{}|{}\n", self.unsigned_line(), self.signature)
    }

    /// SHA-256 of the line up to, not including, the signature field.
    pub fn digest(&self) -> Digest {
        hash(self.unsigned_line().as_bytes())
    }
}

impl FromStr for ExecutionProof {
    type Err = ProofParseError;

    /// Parses one line, with or without its newline. Every field must be in
    /// its exact rendered form so a parsed line re-renders byte-identically.
    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let err = |m: &str| ProofParseError(m.to_owned());
        let line = line.strip_suffix('\n').unwrap_or(line);
        let f: Vec<&str> = line.split('|').collect();
        if f.len() != 9 {
            return Err(err(&format!("expected 9 fields, found {}", f.len())));
        }
        let step_index: u32 = f[1].parse().map_err(|_| err("step index"))?;
        if step_index.to_string() != f[1] {
            return Err(err("step index is not in canonical decimal form"));
        }
        let (kind, failure) = match f[2].split_once(':') {
            Some((k, r)) => (k, Some(FailureReason::from_token(r).ok_or_else(|| err("failure reason"))?)),
            None => (f[2], None),
        };
        let kind = LambdaKind::from_token(kind).ok_or_else(|| err("kind"))?;
        let d = |s: &str, what: &str| Digest::from_hex(s).map_err(|e| err(&format!("{what}: {e}")));
        Ok(ExecutionProof {
            task_id: TaskId::from_hex(f[0]).map_err(|e| err(&format!("task id: {e}")))?,
            step_index,
            kind,
            failure,
            input_digest: d(f[3], "input digest")?,
            fn_digest: d(f[4], "fn digest")?,
            output_digest: d(f[5], "output digest")?,
            prev_proof_digest: d(f[6], "prev digest")?,
            signer: KeyId::from_hex(f[7]).map_err(|e| err(&format!("signer: {e}")))?,
            signature: Signature::from_hex(f[8]).map_err(|e| err(&format!("signature: {e}")))?,
        })
    }
}
