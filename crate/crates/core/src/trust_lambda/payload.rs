//! Plaintext messages passed between steps. Each travels sealed under the
//! edge key between its producer and its consumer.

use crate::codec::{Canonical, Decode, DecodeError, Decoder, Encoder};
use crate::crypto::{KeyId, SealedBlob, TaskId};
use crate::data_prover::{AuthSummary, DataRecord, Verdict};
use crate::taskdsl::{decode_record, encode_record, Record, Value};

/// What one POD contributes to a task.
#[derive(Clone, Debug, PartialEq)]
pub struct PodBatch {
    pub task_id: TaskId,
    pub pod_id: KeyId,
    pub records: Vec<DataRecord>,
}

impl Canonical for PodBatch {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.task_id).value(&self.pod_id).list(&self.records);
    }
}

impl Decode for PodBatch {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { task_id: TaskId::decode(dec)?, pod_id: KeyId::decode(dec)?, records: dec.list()? })
    }
}

/// Records of one POD that survived authentication.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidatedBatch {
    pub pod_id: KeyId,
    pub records: Vec<(Record, Verdict)>,
    pub summary: AuthSummary,
}

impl Canonical for ValidatedBatch {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.pod_id).u32(self.records.len() as u32);
        for (r, v) in &self.records {
            encode_record(r, enc);
            enc.value(v);
        }
        enc.value(&self.summary);
    }
}

impl Decode for ValidatedBatch {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let pod_id = KeyId::decode(dec)?;
        let n = dec.u32()?;
        let mut records = Vec::new();
        for _ in 0..n {
            records.push((decode_record(dec)?, Verdict::decode(dec)?));
        }
        Ok(Self { pod_id, records, summary: AuthSummary::decode(dec)? })
    }
}

/// Result of task code before any privacy gate.
#[derive(Clone, Debug, PartialEq)]
pub enum AggValue {
    Count(u64),
    Sum {
        sum: f64,
        n: u64,
    },
    /// Released as a (sum, count) pair; the consumer divides.
    Mean {
        sum: f64,
        n: u64,
    },
    VectorSum {
        sum: Vec<f64>,
        n: u64,
    },
    /// Output of an aggregate with no derivable sensitivity.
    Raw(Value),
}

impl Canonical for AggValue {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            AggValue::Count(c) => enc.u8(0).u64(*c),
            AggValue::Sum { sum, n } => enc.u8(1).f64(*sum).u64(*n),
            AggValue::Mean { sum, n } => enc.u8(2).f64(*sum).u64(*n),
            AggValue::VectorSum { sum, n } => enc.u8(3).list(sum).u64(*n),
            AggValue::Raw(v) => enc.u8(4).value(v),
        };
    }
}

impl Decode for AggValue {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => AggValue::Count(dec.u64()?),
            1 => AggValue::Sum { sum: dec.f64()?, n: dec.u64()? },
            2 => AggValue::Mean { sum: dec.f64()?, n: dec.u64()? },
            3 => AggValue::VectorSum { sum: dec.list()?, n: dec.u64()? },
            4 => AggValue::Raw(Value::decode(dec)?),
            tag => return Err(DecodeError::InvalidTag { what: "aggregate", tag }),
        })
    }
}

/// What the consumer finally unseals.
#[derive(Clone, Debug, PartialEq)]
pub struct Release {
    pub value: Value,
    /// Equal-length blobs, one per participating POD, each sealed to that POD.
    pub deliveries: Vec<SealedBlob>,
    pub auth: AuthSummary,
    pub alleged: bool,
    /// True iff the value passed through a privacy gate.
    pub noised: bool,
}

impl Canonical for Release {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.value).list(&self.deliveries).value(&self.auth).bool(self.alleged).bool(self.noised);
    }
}

impl Decode for Release {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            value: Value::decode(dec)?,
            deliveries: dec.list()?,
            auth: AuthSummary::decode(dec)?,
            alleged: dec.bool()?,
            noised: dec.bool()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Batches(Vec<PodBatch>),
    Validated {
        batches: Vec<ValidatedBatch>,
        auth: AuthSummary,
    },
    /// Per-record predicate results, grouped by POD.
    Filtered {
        flags: Vec<Vec<bool>>,
        matched: Vec<Record>,
        deliveries: Vec<SealedBlob>,
        contributors: Vec<KeyId>,
        auth: AuthSummary,
        alleged: bool,
    },
    Aggregate {
        value: AggValue,
        contributors: Vec<KeyId>,
        auth: AuthSummary,
        alleged: bool,
    },
    Release(Release),
}

impl Payload {
    pub fn variant(&self) -> &'static str {
        match self {
            Payload::Batches(_) => "batches",
            Payload::Validated { .. } => "validated",
            Payload::Filtered { .. } => "filtered",
            Payload::Aggregate { .. } => "aggregate",
            Payload::Release(_) => "release",
        }
    }
}

impl Canonical for Payload {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            Payload::Batches(b) => {
                enc.u8(0).list(b);
            }
            Payload::Validated { batches, auth } => {
                enc.u8(1).list(batches).value(auth);
            }
            Payload::Filtered { flags, matched, deliveries, contributors, auth, alleged } => {
                enc.u8(2).u32(flags.len() as u32);
                for f in flags {
                    enc.list(f);
                }
                enc.u32(matched.len() as u32);
                for r in matched {
                    encode_record(r, enc);
                }
                enc.list(deliveries).list(contributors).value(auth).bool(*alleged);
            }
            Payload::Aggregate { value, contributors, auth, alleged } => {
                enc.u8(3).value(value).list(contributors).value(auth).bool(*alleged);
            }
            Payload::Release(r) => {
                enc.u8(4).value(r);
            }
        }
    }
}

impl Decode for Payload {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => Payload::Batches(dec.list()?),
            1 => Payload::Validated { batches: dec.list()?, auth: AuthSummary::decode(dec)? },
            2 => {
                let n = dec.u32()?;
                let mut flags = Vec::new();
                for _ in 0..n {
                    flags.push(dec.list()?);
                }
                let m = dec.u32()?;
                let mut matched = Vec::new();
                for _ in 0..m {
                    matched.push(decode_record(dec)?);
                }
                Payload::Filtered {
                    flags,
                    matched,
                    deliveries: dec.list()?,
                    contributors: dec.list()?,
                    auth: AuthSummary::decode(dec)?,
                    alleged: dec.bool()?,
                }
            }
            3 => Payload::Aggregate {
                value: AggValue::decode(dec)?,
                contributors: dec.list()?,
                auth: AuthSummary::decode(dec)?,
                alleged: dec.bool()?,
            },
            4 => Payload::Release(Release::decode(dec)?),
            tag => return Err(DecodeError::InvalidTag { what: "payload", tag }),
        })
    }
}
