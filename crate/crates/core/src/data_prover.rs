//! Data authentication: classifies each incoming record as verified,
//! alleged or rejected.

use serde::{Deserialize, Serialize};

use crate::codec::{Canonical, Decode, DecodeError, Decoder, Encoder};
use crate::crypto::{verify, KeyDirectory, KeyId, KeyPair, Signature};
use crate::taskdsl::{decode_record, encode_record, Record};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    HardwareSigned,
    OrgSigned,
    Alleged,
}

impl SourceKind {
    fn tag(self) -> u8 {
        match self {
            SourceKind::HardwareSigned => 0,
            SourceKind::OrgSigned => 1,
            SourceKind::Alleged => 2,
        }
    }
}

impl Canonical for SourceKind {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(self.tag());
    }
}

impl Decode for SourceKind {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(SourceKind::HardwareSigned),
            1 => Ok(SourceKind::OrgSigned),
            2 => Ok(SourceKind::Alleged),
            tag => Err(DecodeError::InvalidTag { what: "source kind", tag }),
        }
    }
}

/// One datum held by a POD, with whatever provenance it can show.
#[derive(Clone, Debug, PartialEq)]
pub struct DataRecord {
    pub pod_id: KeyId,
    pub payload: Record,
    pub source_kind: SourceKind,
    pub source_signature: Option<Signature>,
    pub signer: Option<KeyId>,
}

impl DataRecord {
    /// Bytes a source signs: the canonical encoding of the payload.
    pub fn signed_bytes(payload: &Record) -> Vec<u8> {
        let mut enc = Encoder::new();
        encode_record(payload, &mut enc);
        enc.into_bytes()
    }

    pub fn signed(pod_id: KeyId, payload: Record, kind: SourceKind, source: &KeyPair) -> Self {
        let sig = source.sign(&Self::signed_bytes(&payload));
        Self { pod_id, payload, source_kind: kind, source_signature: Some(sig), signer: Some(source.public()) }
    }

    pub fn alleged(pod_id: KeyId, payload: Record) -> Self {
        Self { pod_id, payload, source_kind: SourceKind::Alleged, source_signature: None, signer: None }
    }
}

impl Canonical for DataRecord {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.pod_id);
        encode_record(&self.payload, enc);
        enc.value(&self.source_kind).option(self.source_signature.as_ref()).option(self.signer.as_ref());
    }
}

impl Decode for DataRecord {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            pod_id: KeyId::decode(dec)?,
            payload: decode_record(dec)?,
            source_kind: SourceKind::decode(dec)?,
            source_signature: dec.option()?,
            signer: dec.option()?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Verified,
    Alleged,
    Rejected,
}

impl Canonical for Verdict {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(match self {
            Verdict::Verified => 0,
            Verdict::Alleged => 1,
            Verdict::Rejected => 2,
        });
    }
}

impl Decode for Verdict {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(Verdict::Verified),
            1 => Ok(Verdict::Alleged),
            2 => Ok(Verdict::Rejected),
            tag => Err(DecodeError::InvalidTag { what: "verdict", tag }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuthTag {
    pub verdict: Verdict,
    pub reason: String,
}

impl AuthTag {
    fn new(verdict: Verdict, reason: &str) -> Self {
        Self { verdict, reason: reason.to_owned() }
    }
}

impl Canonical for AuthTag {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.verdict).str(&self.reason);
    }
}

impl Decode for AuthTag {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { verdict: Verdict::decode(dec)?, reason: dec.str()? })
    }
}

/// Verdict counts for a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthSummary {
    pub verified: u64,
    pub alleged: u64,
    pub rejected: u64,
}

impl AuthSummary {
    pub fn record(&mut self, verdict: Verdict) {
        match verdict {
            Verdict::Verified => self.verified += 1,
            Verdict::Alleged => self.alleged += 1,
            Verdict::Rejected => self.rejected += 1,
        }
    }

    pub fn add(&mut self, other: &AuthSummary) {
        self.verified += other.verified;
        self.alleged += other.alleged;
        self.rejected += other.rejected;
    }

    pub fn total(&self) -> u64 {
        self.verified + self.alleged + self.rejected
    }
}

impl Canonical for AuthSummary {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.verified).u64(self.alleged).u64(self.rejected);
    }
}

impl Decode for AuthSummary {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { verified: dec.u64()?, alleged: dec.u64()?, rejected: dec.u64()? })
    }
}

/// Classifies one record against the trusted signers.
///
/// Signed kinds must carry a signature that verifies under a registered
/// signer; any shortfall is evidence of tampering and rejects the record.
/// Alleged records must not claim a signature at all.
pub fn authenticate_record(rec: &DataRecord, registry: &KeyDirectory) -> AuthTag {
    match rec.source_kind {
        SourceKind::Alleged => {
            if rec.source_signature.is_some() || rec.signer.is_some() {
                AuthTag::new(Verdict::Rejected, "alleged record carries a signature")
            } else {
                AuthTag::new(Verdict::Alleged, "no verifiable source")
            }
        }
        SourceKind::HardwareSigned | SourceKind::OrgSigned => {
            let (Some(sig), Some(signer)) = (&rec.source_signature, &rec.signer) else {
                return AuthTag::new(Verdict::Rejected, "signed kind without signature");
            };
            if !registry.contains(signer) {
                return AuthTag::new(Verdict::Rejected, "unknown signer");
            }
            if verify(signer, &DataRecord::signed_bytes(&rec.payload), &sig.0) {
                AuthTag::new(Verdict::Verified, "signature verified")
            } else {
                AuthTag::new(Verdict::Rejected, "invalid signature")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProverOutput {
    /// Verified and alleged records in input order; rejected ones are absent.
    pub validated: Vec<(DataRecord, AuthTag)>,
    pub summary: AuthSummary,
}

pub fn prover_lambda_fn(batch: &[DataRecord], registry: &KeyDirectory) -> ProverOutput {
    let mut out = ProverOutput { validated: Vec::new(), summary: AuthSummary::default() };
    for rec in batch {
        let tag = authenticate_record(rec, registry);
        out.summary.record(tag.verdict);
        if tag.verdict != Verdict::Rejected {
            out.validated.push((rec.clone(), tag));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::seeded_rng;
    use crate::taskdsl::Value;
    use proptest::prelude::*;

    fn payload(i: i64) -> Record {
        let mut r = Record::new();
        r.insert("reading".into(), Value::Int(i));
        r.insert("unit".into(), Value::Str("lux".into()));
        r
    }

    fn setup() -> (KeyPair, KeyPair, KeyDirectory, KeyId) {
        let mut rng = seeded_rng(3, "prover-test", 0);
        let camera = KeyPair::generate(&mut rng);
        let rogue = KeyPair::generate(&mut rng);
        let pod = KeyPair::generate(&mut rng).public();
        let mut reg = KeyDirectory::new();
        reg.register(camera.public(), "camera");
        (camera, rogue, reg, pod)
    }

    #[test]
    fn registered_device_signature_verifies() {
        let (camera, _, reg, pod) = setup();
        let rec = DataRecord::signed(pod, payload(7), SourceKind::HardwareSigned, &camera);
        assert_eq!(authenticate_record(&rec, &reg).verdict, Verdict::Verified);
    }

    #[test]
    fn payload_flip_after_signing_rejects() {
        let (camera, _, reg, pod) = setup();
        let mut rec = DataRecord::signed(pod, payload(7), SourceKind::OrgSigned, &camera);
        rec.payload.insert("reading".into(), Value::Int(7 ^ 1));
        assert_eq!(authenticate_record(&rec, &reg).verdict, Verdict::Rejected);
    }

    #[test]
    fn unsigned_answer_is_alleged() {
        let (_, _, reg, pod) = setup();
        let rec = DataRecord::alleged(pod, payload(1));
        assert_eq!(authenticate_record(&rec, &reg), AuthTag::new(Verdict::Alleged, "no verifiable source"));
    }

    #[test]
    fn unknown_signer_and_missing_signature_reject() {
        let (camera, rogue, reg, pod) = setup();
        let rec = DataRecord::signed(pod, payload(1), SourceKind::OrgSigned, &rogue);
        assert_eq!(authenticate_record(&rec, &reg).verdict, Verdict::Rejected);
        let mut rec = DataRecord::signed(pod, payload(1), SourceKind::OrgSigned, &camera);
        rec.source_signature = None;
        assert_eq!(authenticate_record(&rec, &reg).verdict, Verdict::Rejected);
        let mut rec = DataRecord::alleged(pod, payload(1));
        rec.signer = Some(camera.public());
        assert_eq!(authenticate_record(&rec, &reg).verdict, Verdict::Rejected);
    }

    #[test]
    fn batch_drops_rejected_and_counts_everything() {
        let (camera, _, reg, pod) = setup();
        let mut batch: Vec<_> = (0..3).map(|i| DataRecord::signed(pod, payload(i), SourceKind::OrgSigned, &camera)).collect();
        let mut bad = DataRecord::signed(pod, payload(9), SourceKind::OrgSigned, &camera);
        bad.payload.insert("reading".into(), Value::Int(10));
        batch.insert(1, bad);
        let out = prover_lambda_fn(&batch, &reg);
        assert_eq!(out.validated.len(), 3);
        assert_eq!(out.summary, AuthSummary { verified: 3, alleged: 0, rejected: 1 });

        let empty = prover_lambda_fn(&[], &reg);
        assert!(empty.validated.is_empty());
        assert_eq!(empty.summary, AuthSummary::default());
    }

    #[test]
    fn alleged_records_pass_through_tagged() {
        let (_, _, reg, pod) = setup();
        let batch: Vec<_> = (0..10).map(|i| DataRecord::alleged(pod, payload(i))).collect();
        let out = prover_lambda_fn(&batch, &reg);
        assert_eq!(out.validated.len(), 10);
        for ((rec, tag), orig) in out.validated.iter().zip(&batch) {
            assert_eq!(rec, orig);
            assert_eq!(tag.verdict, Verdict::Alleged);
        }
    }

    #[test]
    fn record_round_trips_canonically() {
        let (camera, _, _, pod) = setup();
        for rec in [DataRecord::signed(pod, payload(5), SourceKind::HardwareSigned, &camera), DataRecord::alleged(pod, payload(6))] {
            assert_eq!(DataRecord::from_canonical(&rec.to_canonical()).unwrap(), rec);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn verdicts_partition_and_corrupt_never_pass(corrupt in prop::collection::vec(0u8..4, 0..12)) {
            let (camera, rogue, reg, pod) = setup();
            let batch: Vec<_> = corrupt.iter().enumerate().map(|(i, c)| {
                let mut r = DataRecord::signed(pod, payload(i as i64), SourceKind::OrgSigned, &camera);
                match c {
                    1 => r.source_signature.as_mut().unwrap().0[i % 64] ^= 0x40,
                    2 => r = DataRecord::signed(pod, payload(i as i64), SourceKind::OrgSigned, &rogue),
                    3 => r = DataRecord::alleged(pod, payload(i as i64)),
                    _ => {}
                }
                r
            }).collect();
            let out = prover_lambda_fn(&batch, &reg);
            prop_assert_eq!(out.summary.total(), batch.len() as u64);
            prop_assert_eq!(out.summary.rejected, corrupt.iter().filter(|c| matches!(c, 1 | 2)).count() as u64);
            for (rec, _) in &out.validated {
                prop_assert!(authenticate_record(rec, &reg).verdict != Verdict::Rejected);
            }
        }
    }
}
