//! Laplace mechanism and per-POD privacy budget accounting.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use rand::RngCore;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::crypto::KeyId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("laplace scale must be positive, got {0}")]
    InvalidScale(f64),
    #[error("invalid privacy parameters: epsilon {epsilon}, sensitivity {sensitivity}")]
    InvalidParams { epsilon: f64, sensitivity: f64 },
    #[error("declared sensitivity {declared} does not match clip width {expected}")]
    SensitivityMismatch { declared: f64, expected: f64 },
    #[error("privacy budget exhausted for {} pods", .0.len())]
    BudgetExhausted(Vec<KeyId>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub sensitivity: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, sensitivity: f64) -> Result<Self, DpError> {
        if !(epsilon > 0.0 && epsilon.is_finite() && sensitivity > 0.0 && sensitivity.is_finite()) {
            return Err(DpError::InvalidParams { epsilon, sensitivity });
        }
        Ok(Self { epsilon, sensitivity })
    }

    /// Laplace scale b = sensitivity / epsilon.
    pub fn scale(&self) -> f64 {
        self.sensitivity / self.epsilon
    }
}

/// Supplies uniform samples in the open interval (-1/2, 1/2).
pub trait NoiseSource {
    fn uniform(&mut self) -> f64;
}

/// Always returns the median, so every release is exact.
#[derive(Debug, Default, Clone, Copy)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn uniform(&mut self) -> f64 {
        0.0
    }
}

pub struct SeededNoise {
    rng: ChaCha20Rng,
}

impl SeededNoise {
    pub fn new(rng: ChaCha20Rng) -> Self {
        Self { rng }
    }
}

impl NoiseSource for SeededNoise {
    fn uniform(&mut self) -> f64 {
        // 53 random bits mapped to bucket midpoints: never exactly ±1/2
        let k = (self.rng.next_u64() >> 11) as f64;
        (k + 0.5) / (1u64 << 53) as f64 - 0.5
    }
}

/// Inverse-CDF Laplace sample: -b·sign(u)·ln(1 - 2|u|).
pub fn laplace_sample(b: f64, u: f64) -> Result<f64, DpError> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(DpError::InvalidScale(b));
    }
    if u == 0.0 {
        return Ok(0.0);
    }
    Ok(-b * u.signum() * (-2.0 * u.abs()).ln_1p())
}

pub fn dp_count(count: u64, params: &PrivacyParams, noise: &mut dyn NoiseSource) -> Result<f64, DpError> {
    if params.sensitivity != 1.0 {
        return Err(DpError::SensitivityMismatch { declared: params.sensitivity, expected: 1.0 });
    }
    Ok(count as f64 + laplace_sample(params.scale(), noise.uniform())?)
}

pub fn dp_sum(clipped_sum: f64, clip_lo: f64, clip_hi: f64, params: &PrivacyParams, noise: &mut dyn NoiseSource) -> Result<f64, DpError> {
    let width = clip_hi - clip_lo;
    if params.sensitivity != width {
        return Err(DpError::SensitivityMismatch { declared: params.sensitivity, expected: width });
    }
    Ok(clipped_sum + laplace_sample(params.scale(), noise.uniform())?)
}

/// Element-wise noisy release of a vector sum with L1 sensitivity
/// `dim * (clip_hi - clip_lo)`.
pub fn dp_vector_sum(
    sum: &[f64],
    clip_lo: f64,
    clip_hi: f64,
    params: &PrivacyParams,
    noise: &mut dyn NoiseSource,
) -> Result<Vec<f64>, DpError> {
    let l1 = sum.len() as f64 * (clip_hi - clip_lo);
    if params.sensitivity != l1 {
        return Err(DpError::SensitivityMismatch { declared: params.sensitivity, expected: l1 });
    }
    let b = params.scale();
    sum.iter().map(|s| Ok(s + laplace_sample(b, noise.uniform())?)).collect()
}

/// Remaining epsilon per POD. Charges are all-or-nothing and serialised.
#[derive(Debug, Default)]
pub struct BudgetLedger {
    remaining: Mutex<BTreeMap<KeyId, f64>>,
}

impl BudgetLedger {
    pub fn new<I: IntoIterator<Item = (KeyId, f64)>>(initial: I) -> Self {
        Self { remaining: Mutex::new(initial.into_iter().collect()) }
    }

    /// Sets a POD's remaining budget.
    pub fn fund(&self, pod: KeyId, epsilon: f64) {
        self.lock().insert(pod, epsilon);
    }

    pub fn remaining(&self, pod: &KeyId) -> Option<f64> {
        self.lock().get(pod).copied()
    }

    pub fn snapshot(&self) -> BTreeMap<KeyId, f64> {
        self.lock().clone()
    }

    /// Debits `epsilon` once from every distinct listed POD, or from none of
    /// them. PODs the ledger has never seen count as having no budget.
    pub fn charge(&self, pods: &[KeyId], epsilon: f64) -> Result<(), DpError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(DpError::InvalidParams { epsilon, sensitivity: f64::NAN });
        }
        let unique: BTreeSet<KeyId> = pods.iter().copied().collect();
        let mut map = self.lock();
        let short: Vec<KeyId> = unique.iter().filter(|p| map.get(*p).is_none_or(|r| *r < epsilon)).copied().collect();
        if !short.is_empty() {
            return Err(DpError::BudgetExhausted(short));
        }
        for p in &unique {
            let r = map.get_mut(p).expect("checked above");
            *r -= epsilon;
        }
        Ok(())
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, BTreeMap<KeyId, f64>> {
        self.remaining.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub fn charge_budget(ledger: &BudgetLedger, pods: &[KeyId], epsilon: f64) -> Result<(), DpError> {
    ledger.charge(pods, epsilon)
}
