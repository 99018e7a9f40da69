//! Trust-λ pipelines: decentralized, accountable execution of tasks over
//! personal data stores, on a deterministic simulated network.

pub mod codec;
pub mod crypto;
pub mod data_prover;
pub mod dexec;
pub mod dp_gate;
pub mod netsim;
pub mod proof_log;
pub mod scenario;
pub mod taskdsl;
pub mod trust_lambda;

pub use crypto::{Digest, KeyDirectory, KeyId, KeyPair, SealedBlob, SecurityLevel, Signature, TaskId};
pub use data_prover::{AuthSummary, AuthTag, DataRecord, SourceKind, Verdict};
pub use dexec::{execute_task, PipelinePlan, PlanStep, TaskCode, TaskOutcome, TaskResult, TaskSpec};
pub use dp_gate::{BudgetLedger, DpError, PrivacyParams};
pub use netsim::{spawn_network, FaultBehavior, Network, NetworkConfig, NodeId};
pub use proof_log::{trace_lineage, verify_chain, Annex, AnnexRecord, LineageTree, ProofLog, StepVerdict, VerificationReport};
pub use taskdsl::{TaskExpr, Value};
pub use trust_lambda::{ExecutionProof, FailureReason, LambdaKind, NoiseMode};
