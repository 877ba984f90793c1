//! Synthetic noise events for stress-testing a detector on its test stream.
//!
//! A noise event joins two nodes drawn independently and uniformly from the
//! dataset's node set, carries zero-mean Gaussian features and a timestamp
//! uniform over the test window.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::ctdg::{Event, Label, NodeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("cannot draw noise endpoints from an empty node set")]
    EmptyNodeSet,
    #[error("invalid noise config: {0}")]
    Config(String),
    #[error("noise event {index} at t = {t} lies outside the test window [{start}, {end}]")]
    OutsideWindow { index: usize, t: f64, start: f64, end: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Noise count relative to the number of normal test events.
    pub ratio: f64,
    /// Per-dimension feature variance.
    pub variance: f64,
    /// Test window `[t_test, T]`.
    pub window: (f64, f64),
    pub seed: u64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), NoiseError> {
        let (a, b) = self.window;
        if !(self.ratio >= 0.0) || !self.ratio.is_finite() {
            return Err(NoiseError::Config(format!("ratio must be >= 0, got {}", self.ratio)));
        }
        if !(self.variance > 0.0) || !self.variance.is_finite() {
            return Err(NoiseError::Config(format!(
                "variance must be > 0, got {}",
                self.variance
            )));
        }
        if !(a.is_finite() && b.is_finite() && a <= b) {
            return Err(NoiseError::Config(format!("window [{a}, {b}] is empty")));
        }
        Ok(())
    }

    /// `round(ratio * normal_count)`.
    pub fn count_for(&self, normal_count: usize) -> usize {
        (self.ratio * normal_count as f64).round() as usize
    }
}

/// Draws `count` noise events. Endpoints are independent uniform draws, so
/// self-loops occur. The result is in draw order, not time order.
pub fn craft_noise_events<R: Rng + ?Sized>(
    node_set: &BTreeSet<NodeId>,
    count: usize,
    feature_dim: usize,
    config: &NoiseConfig,
    rng: &mut R,
) -> Result<Vec<Event>, NoiseError> {
    config.validate()?;
    if node_set.is_empty() {
        return Err(NoiseError::EmptyNodeSet);
    }
    let nodes: Vec<NodeId> = node_set.iter().copied().collect();
    let feature = Normal::new(0.0, config.variance.sqrt()).expect("validated variance");
    let (start, end) = config.window;
    Ok((0..count)
        .map(|_| {
            let src = nodes[rng.random_range(0..nodes.len())];
            let dst = nodes[rng.random_range(0..nodes.len())];
            let t = if start < end {
                rng.random_range(start..=end)
            } else {
                start
            };
            Event {
                src,
                dst,
                t,
                features: (0..feature_dim).map(|_| feature.sample(rng)).collect(),
                label: Label::Noise,
            }
        })
        .collect())
}

/// Merges noise into a time-sorted test split. Ties keep originals first.
pub fn inject(test: &[Event], noise: &[Event], window: (f64, f64)) -> Result<Vec<Event>, NoiseError> {
    let (start, end) = window;
    if let Some((index, e)) = noise.iter().enumerate().find(|(_, e)| !(e.t >= start && e.t <= end)) {
        return Err(NoiseError::OutsideWindow {
            index,
            t: e.t,
            start,
            end,
        });
    }
    let mut merged: Vec<Event> = test.iter().chain(noise).cloned().collect();
    merged.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(merged)
}

/// Crafts `round(ratio * |normal events in test|)` noise events over the
/// given node set and merges them into `test`.
pub fn noisy_test_split<R: Rng + ?Sized>(
    test: &[Event],
    node_set: &BTreeSet<NodeId>,
    feature_dim: usize,
    config: &NoiseConfig,
    rng: &mut R,
) -> Result<Vec<Event>, NoiseError> {
    let normal = test.iter().filter(|e| e.label == Label::Normal).count();
    let noise = craft_noise_events(node_set, config.count_for(normal), feature_dim, config, rng)?;
    inject(test, &noise, config.window)
}
