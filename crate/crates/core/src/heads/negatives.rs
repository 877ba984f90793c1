use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::HeadError;
use crate::ctdg::{Event, Label, NodeId};

/// Re-wired copies of positive events with sampled Gaussian targets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NegativeBatch {
    /// Corrupted events; both endpoints replaced, time and features kept.
    pub events: Vec<Event>,
    /// One target `μ̂ ∼ N(0, Σ_neg)` of dimension `N` per negative.
    pub targets: Vec<Vec<f64>>,
}

impl NegativeBatch {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// `⌈ratio · batch_len⌉`, robust to representation error in `ratio`.
pub fn negative_count(batch_len: usize, ratio: f64) -> usize {
    let raw = ratio * batch_len as f64;
    (raw - 1e-9).ceil().max(0.0) as usize
}

/// Draws `⌈neg_ratio · |batch|⌉` negatives. Negative `k` copies the timestamp
/// and features of batch event `⌊k · |batch| / count⌋` and takes two
/// endpoints drawn uniformly with replacement from `nodes`.
pub fn sample_negatives<R: Rng + ?Sized>(
    batch: &[Event],
    nodes: &[NodeId],
    neg_ratio: f64,
    neg_variance: f64,
    event_dim: usize,
    rng: &mut R,
) -> Result<NegativeBatch, HeadError> {
    if !(0.0..=1.0).contains(&neg_ratio) {
        return Err(HeadError::Config(format!("neg_ratio {neg_ratio} outside [0, 1]")));
    }
    if !(neg_variance > 0.0) {
        return Err(HeadError::Config(format!(
            "negative variance {neg_variance} must be positive"
        )));
    }
    let count = negative_count(batch.len(), neg_ratio);
    if count == 0 {
        return Ok(NegativeBatch::default());
    }
    if nodes.is_empty() {
        return Err(HeadError::EmptyNodeSet);
    }
    let normal = Normal::new(0.0, neg_variance.sqrt()).map_err(|e| HeadError::Config(e.to_string()))?;
    let mut out = NegativeBatch::default();
    for k in 0..count {
        let base = &batch[k * batch.len() / count];
        let v = nodes[rng.random_range(0..nodes.len())];
        let w = nodes[rng.random_range(0..nodes.len())];
        out.events.push(Event {
            src: v,
            dst: w,
            t: base.t,
            features: base.features.clone(),
            label: Label::Noise,
        });
        out.targets.push((0..event_dim).map(|_| normal.sample(rng)).collect());
    }
    Ok(out)
}
