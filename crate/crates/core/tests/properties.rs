use std::sync::OnceLock;

use pixiu_core::codec::{Canonical, Decode};
use pixiu_core::crypto::{check_attestation, hash, seal_to, seeded_rng, verify, EdgeKey, ManufacturerRoot};
use pixiu_core::dp_gate::{laplace_sample, BudgetLedger};
use pixiu_core::proof_log::{Annex, AnnexRecord, ProofLog};
use pixiu_core::scenario::{builtin_scenario, run_scenario};
use pixiu_core::taskdsl::{eval_predicate, parse, record_from_json, EvalError, Record};
use pixiu_core::{verify_chain, Digest, ExecutionProof, KeyDirectory, KeyId, KeyPair, PipelinePlan, SecurityLevel, TaskId};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn digest_hex_is_lowercase_and_round_trips(bytes in prop::array::uniform32(any::<u8>())) {
        let d = Digest(bytes);
        let h = d.to_hex();
        prop_assert_eq!(h.len(), 64);
        prop_assert!(h.chars().all(|c| c.is_ascii_digit() || ('a'..='f').contains(&c)));
        prop_assert_eq!(Digest::from_hex(&h).unwrap(), d);
        prop_assert!(Digest::from_hex(&h.to_uppercase()).is_err() || !h.chars().any(|c| c.is_ascii_alphabetic()));
    }

    #[test]
    fn signatures_round_trip_and_bind_the_message(seed in prop::array::uniform32(any::<u8>()), msg in prop::collection::vec(any::<u8>(), 0..256), flip in any::<usize>()) {
        let k = KeyPair::from_seed(seed);
        let sig = k.sign(&msg);
        prop_assert!(verify(&k.public(), &msg, &sig.0));
        let mut other = msg.clone();
        if other.is_empty() {
            other.push(0);
        } else {
            let i = flip % other.len();
            other[i] ^= 1;
        }
        prop_assert!(!verify(&k.public(), &other, &sig.0));
    }

    #[test]
    fn sealed_blobs_open_only_for_their_recipient(seed in any::<u64>(), msg in prop::collection::vec(any::<u8>(), 0..200), bit in any::<usize>()) {
        let mut rng = seeded_rng(seed, "prop/seal", 0);
        let (a, b) = (KeyPair::generate(&mut rng), KeyPair::generate(&mut rng));
        let blob = seal_to(&a.public(), &msg, &mut rng).unwrap();
        prop_assert_eq!(a.unseal(&blob).unwrap(), msg.clone());
        prop_assert!(b.unseal(&blob).is_err());
        let mut flipped = blob.clone();
        let i = bit % (flipped.ciphertext.len() * 8);
        flipped.ciphertext[i / 8] ^= 1 << (i % 8);
        prop_assert!(a.unseal(&flipped).is_err());

        let (k1, k2) = (EdgeKey::generate(&mut rng), EdgeKey::generate(&mut rng));
        let e = k1.seal(&msg, &mut rng);
        prop_assert_eq!(k1.open(&e).unwrap(), msg);
        prop_assert!(k2.open(&e).is_err());
    }

    #[test]
    fn attestation_valid_iff_measurement_and_root_match(seed in any::<u64>(), m in prop::array::uniform32(any::<u8>()), other in prop::array::uniform32(any::<u8>())) {
        let mut rng = seeded_rng(seed, "prop/attest", 0);
        let mut root = ManufacturerRoot::new(KeyPair::generate(&mut rng));
        let inst = KeyPair::generate(&mut rng).public();
        root.register(inst, SecurityLevel::MidLevel);
        let report = root.attest(&inst, Digest(m)).unwrap();
        prop_assert!(check_attestation(&report, &Digest(m), &root.public()));
        prop_assert_eq!(check_attestation(&report, &Digest(other), &root.public()), m == other);
        prop_assert!(!check_attestation(&report, &Digest(m), &KeyPair::generate(&mut rng).public()));
    }

    #[test]
    fn records_round_trip_canonically(ints in prop::collection::btree_map("[a-z]{1,6}", any::<i64>(), 0..6), text in "[ -~]{0,24}") {
        let mut json = serde_json::Map::new();
        for (k, v) in &ints {
            json.insert(k.clone(), (*v).into());
        }
        json.insert("text".into(), text.into());
        let r: Record = record_from_json(&json).unwrap();
        let v = pixiu_core::Value::Record(r);
        let bytes = v.to_canonical();
        prop_assert_eq!(pixiu_core::Value::from_canonical(&bytes).unwrap(), v.clone());
        prop_assert_eq!(v.to_canonical(), bytes);
    }

    #[test]
    fn comparisons_need_matching_tags(n in any::<i64>(), s in "[a-z]{1,8}") {
        let r = record_from_json(serde_json::json!({ "n": n, "s": s }).as_object().unwrap()).unwrap();
        let mixed = matches!(eval_predicate(&parse("n == s").unwrap(), &r), Err(EvalError::TypeMismatch { .. }));
        prop_assert!(mixed);
        let literal = matches!(eval_predicate(&parse("n < \"x\"").unwrap(), &r), Err(EvalError::TypeMismatch { .. }));
        prop_assert!(literal);
        prop_assert_eq!(eval_predicate(&parse("n == n").unwrap(), &r), Ok(true));
    }

    #[test]
    fn laplace_is_odd_and_monotone(b in 0.01f64..100.0, u in -0.4999f64..0.4999, d in 0.0f64..0.0001) {
        let x = laplace_sample(b, u).unwrap();
        prop_assert_eq!(laplace_sample(b, -u).unwrap(), -x);
        prop_assert!(laplace_sample(b, (u + d).min(0.49995)).unwrap() >= x);
    }

    #[test]
    fn budget_never_increases(charges in prop::collection::vec((prop::collection::vec(0u8..5, 1..5), 0.01f64..1.0), 1..40)) {
        let pods: Vec<KeyId> = (0..5u8).map(|i| KeyId([i; 32])).collect();
        let ledger = BudgetLedger::new(pods.iter().map(|p| (*p, 2.0)));
        let mut spent = [0.0f64; 5];
        for (who, eps) in charges {
            let ids: Vec<KeyId> = who.iter().map(|i| pods[*i as usize]).collect();
            let before = ledger.snapshot();
            let ok = ledger.charge(&ids, eps).is_ok();
            let after = ledger.snapshot();
            for p in &pods {
                prop_assert!(after[p] <= before[p]);
                prop_assert!(after[p] >= 0.0);
            }
            if ok {
                let mut uniq = who.clone();
                uniq.sort();
                uniq.dedup();
                for i in uniq {
                    spent[i as usize] += eps;
                }
            } else {
                prop_assert_eq!(before, after);
            }
        }
        for (i, p) in pods.iter().enumerate() {
            prop_assert!(spent[i] <= 2.0 + 1e-9);
            prop_assert!((ledger.remaining(p).unwrap() - (2.0 - spent[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn proof_lines_round_trip(seed in any::<u64>(), step in 0u32..8, failed in any::<bool>()) {
        let mut rng = seeded_rng(seed, "prop/proof", 0);
        let k = KeyPair::generate(&mut rng);
        let failure = failed.then_some(pixiu_core::FailureReason::DigestMismatch);
        let d = |s: &str| hash(format!("{seed}{s}").as_bytes());
        let p = ExecutionProof::sign(&k, TaskId([1; 16]), step, pixiu_core::LambdaKind::TaskExec, failure, d("i"), d("f"), d("o"), d("p"));
        let line = p.to_line();
        let back: ExecutionProof = line.parse().unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert!(back.verify_signature());
        prop_assert_eq!(line.split('|').count(), 9);
    }
}

struct Honest {
    text: String,
    annex: Vec<AnnexRecord>,
    plan: PipelinePlan,
    registry: KeyDirectory,
    task: TaskId,
}

fn honest() -> &'static Honest {
    static H: OnceLock<Honest> = OnceLock::new();
    H.get_or_init(|| {
        let run = run_scenario(&builtin_scenario("ads").unwrap(), 11, ProofLog::in_memory(), Annex::in_memory()).unwrap();
        assert!(run.outcome.result.is_ok());
        Honest {
            text: run.world.log.text(),
            annex: run.world.annex.entries(),
            plan: run.outcome.plan.clone().unwrap(),
            registry: run.world.net.registry(),
            task: run.spec.task_id,
        }
    })
}

#[derive(Clone, Debug)]
enum Mutation {
    /// Replace the character at a position with another from the line alphabet.
    Substitute {
        line: usize,
        pos: usize,
        with: char,
    },
    Delete {
        line: usize,
    },
    Truncate {
        line: usize,
        keep: usize,
    },
    /// Re-sign a line's fields, with one field changed, under a key that is
    /// not the planned instance and insert it.
    InsertForged {
        line: usize,
        at: usize,
        field: usize,
        key: u8,
    },
}

fn mutation() -> impl Strategy<Value = Mutation> {
    let alphabet = prop::sample::select("0123456789abcdefABCDEFGHIJKLMNOPQRSTUVWXYZ_|:!".chars().collect::<Vec<_>>());
    prop_oneof![
        4 => (0usize..3, any::<usize>(), alphabet).prop_map(|(line, pos, with)| Mutation::Substitute { line, pos, with }),
        1 => (0usize..3).prop_map(|line| Mutation::Delete { line }),
        1 => (0usize..3, any::<usize>()).prop_map(|(line, keep)| Mutation::Truncate { line, keep }),
        2 => (0usize..3, 0usize..4, 0usize..7, any::<u8>()).prop_map(|(line, at, field, key)| Mutation::InsertForged { line, at, field, key }),
    ]
}

fn apply(text: &str, m: &Mutation) -> Option<String> {
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    match *m {
        Mutation::Substitute { line, pos, with } => {
            let l = &mut lines[line];
            let pos = pos % l.len();
            if l.as_bytes()[pos] as char == with {
                return None;
            }
            l.replace_range(pos..pos + 1, &with.to_string());
        }
        Mutation::Delete { line } => {
            lines.remove(line);
        }
        Mutation::Truncate { line, keep } => {
            let l = &mut lines[line];
            l.truncate(keep % l.len());
        }
        Mutation::InsertForged { line, at, field, key } => {
            let p: ExecutionProof = lines[line].parse().ok()?;
            let rogue = KeyPair::from_seed([key; 32]);
            let bump = |d: Digest| hash(&d.0);
            let (mut input, mut f, mut out, mut prev, mut step) =
                (p.input_digest, p.fn_digest, p.output_digest, p.prev_proof_digest, p.step_index);
            match field {
                0 => input = bump(input),
                1 => f = bump(f),
                2 => out = bump(out),
                3 => prev = bump(prev),
                4 => step += 1,
                _ => {}
            }
            let forged = ExecutionProof::sign(&rogue, p.task_id, step, p.kind, p.failure, input, f, out, prev);
            lines.insert(at.min(lines.len()), forged.to_line());
        }
    }
    Some(lines.iter().map(|l| format!("{l}\n")).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// Any edit to an honest log is refused by the parser or caught by
    /// verification, and the reported first bad step is the first non-Ok one.
    #[test]
    fn log_tampering_is_always_detected(m in mutation()) {
        let h = honest();
        let Some(text) = apply(&h.text, &m) else { return Ok(()) };
        prop_assume!(text != h.text);
        let Ok(log) = ProofLog::parse(&text) else { return Ok(()) };
        match verify_chain(&log.entries(), &h.annex, h.task, &h.plan, &h.registry) {
            Err(_) => {}
            Ok(r) => {
                prop_assert!(!r.all_ok(), "undetected: {m:?}");
                let first = r.steps.iter().position(|s| s.verdict != pixiu_core::StepVerdict::Ok).map(|i| i as u32);
                prop_assert_eq!(r.first_bad_step, first);
            }
        }
    }
}

#[test]
fn honest_log_verifies() {
    let h = honest();
    let log = ProofLog::parse(&h.text).unwrap();
    let r = verify_chain(&log.entries(), &h.annex, h.task, &h.plan, &h.registry).unwrap();
    assert!(r.all_ok(), "{}", r.render());
}
