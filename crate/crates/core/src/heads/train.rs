use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    init_center, negative_nll_on_tape, positive_nll_on_tape, sample_negatives, svdd_score_on_tape, Center, HeadError,
    NegativeBatch,
};
use crate::ctdg::{Event, Label, NodeId};
use crate::diffcore::{Adam, AdamConfig, ParamSlot, Tape};
use crate::encoder::{apply_event, embed_node_on_tape, EncoderParams, HeadKind, NodeOutput, StreamState};

/// Gradients of one batch are accumulated over this many independent tapes.
/// Fixed so results do not depend on the machine's thread count.
const GRAD_SHARDS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Decoupled weight decay λ on encoder parameters (never on the center).
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Negatives per positive event (Gaussian head only).
    pub neg_ratio: f64,
    /// Diagonal entry of the covariance of the negative targets `μ̂`.
    pub neg_variance: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-4,
            epochs: 30,
            batch_size: 200,
            neg_ratio: 0.30,
            neg_variance: 5.0,
            clip_norm: Some(5.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HeadError> {
        if self.epochs == 0 {
            return Err(HeadError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(HeadError::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.neg_ratio) {
            return Err(HeadError::Config(format!(
                "neg_ratio {} outside [0, 1]",
                self.neg_ratio
            )));
        }
        if !(self.neg_variance > 0.0) {
            return Err(HeadError::Config("neg_variance must be positive".into()));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(HeadError::Config("lr and weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// Encoder weights plus hypersphere center.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: EncoderParams,
    pub center: Center,
}

impl Model {
    pub fn head(&self) -> HeadKind {
        self.params.head
    }
}

/// Mean losses of one epoch. `negative` is zero for the hypersphere head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub positive: f64,
    pub negative: f64,
}

struct ShardResult {
    grads: Vec<Vec<f64>>,
    center_grad: Vec<f64>,
    positive: f64,
    negative: f64,
}

/// Trains `params` on a normal-only, time-sorted stream.
///
/// Every epoch resets memory and replays the stream in batches. Embeddings of
/// a batch use the pre-batch memory and adjacency; the batch's events are then
/// applied in order. The per-batch loss is
/// `(1/B) Σ_pos ℓ⁺ + (n_neg/B) · (1/n_neg) Σ_neg ℓ⁻`.
pub fn train(
    mut params: EncoderParams,
    events: &[Event],
    config: &TrainConfig,
) -> Result<(Model, Vec<LossRecord>), HeadError> {
    config.validate()?;
    if events.is_empty() {
        return Err(HeadError::Empty("train"));
    }
    if let Some((index, e)) = events.iter().enumerate().find(|(_, e)| e.label != Label::Normal) {
        return Err(HeadError::ContaminatedTrain { index, label: e.label });
    }
    let gaussian = params.head == HeadKind::Gaussian;
    let event_dim = params.dims.event_dim();
    let k = params.dims.neighbors;
    let t0 = events[0].t;
    let nodes: Vec<NodeId> = events
        .iter()
        .flat_map(|e| [e.src, e.dst])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        clip_norm: config.clip_norm,
        ..AdamConfig::default()
    });
    let mut center: Option<Center> = None;
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut state = StreamState::new(params.dims.memory, t0);
        let (mut pos_total, mut neg_total, mut neg_count) = (0.0, 0.0, 0usize);

        for batch in events.chunks(config.batch_size) {
            let c = match &center {
                Some(c) => c.clone(),
                None => first_batch_center(&params, &state, batch)?,
            };
            let negatives = if gaussian {
                sample_negatives(
                    batch,
                    &nodes,
                    config.neg_ratio,
                    config.neg_variance,
                    event_dim,
                    &mut rng,
                )?
            } else {
                NegativeBatch::default()
            };

            let b = batch.len() as f64;
            let pos_shards = shard_ranges(batch.len());
            let neg_shards = shard_ranges(negatives.len());
            let shards: Vec<ShardResult> = pos_shards
                .into_par_iter()
                .zip(neg_shards)
                .map(|(pr, nr)| {
                    run_shard(
                        &params,
                        &c,
                        &state,
                        &batch[pr],
                        &negatives.events[nr.clone()],
                        &negatives.targets[nr],
                        k,
                        b,
                    )
                })
                .collect::<Result<_, _>>()?;

            let mut grads: Vec<Vec<f64>> = params.trainable_mut().iter().map(|v| vec![0.0; v.len()]).collect();
            let mut center_grad = vec![0.0; c.dim()];
            for s in &shards {
                for (acc, g) in grads.iter_mut().zip(&s.grads) {
                    add_into(acc, g);
                }
                add_into(&mut center_grad, &s.center_grad);
                pos_total += s.positive;
                neg_total += s.negative;
            }
            neg_count += negatives.len();

            // memory and adjacency advance with the weights used in the forward pass
            for e in batch {
                apply_event(e, &mut state.bank, &mut state.store, &params, true)?;
            }

            let mut center_value = c.0.clone();
            {
                let mut slots: Vec<ParamSlot<'_>> = params
                    .trainable_mut()
                    .into_iter()
                    .zip(&grads)
                    .map(|(value, grad)| ParamSlot {
                        value,
                        grad,
                        decay: true,
                    })
                    .collect();
                slots.push(ParamSlot {
                    value: &mut center_value,
                    grad: &center_grad,
                    decay: false,
                });
                adam.step(&mut slots)?;
            }
            center = Some(Center(center_value));
        }

        trace.push(LossRecord {
            epoch: epoch + 1,
            positive: pos_total / events.len() as f64,
            negative: if neg_count > 0 {
                neg_total / neg_count as f64
            } else {
                0.0
            },
        });
    }

    let center = center.ok_or(HeadError::Empty("train"))?;
    Ok((Model { params, center }, trace))
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, x) in acc.iter_mut().zip(g) {
        *a += x;
    }
}

fn shard_ranges(len: usize) -> Vec<std::ops::Range<usize>> {
    (0..GRAD_SHARDS)
        .map(|s| (s * len / GRAD_SHARDS)..((s + 1) * len / GRAD_SHARDS))
        .collect()
}

fn first_batch_center(params: &EncoderParams, state: &StreamState, batch: &[Event]) -> Result<Center, HeadError> {
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape, false);
    let k = params.dims.neighbors;
    let mut rows = Vec::with_capacity(batch.len());
    for e in batch {
        let zi = embed_node_on_tape(&mut tape, &vars, e.src, e.t, &state.bank, &state.store, k)?;
        let zj = embed_node_on_tape(&mut tape, &vars, e.dst, e.t, &state.bank, &state.store, k)?;
        let mut row = tape.data(zi.center()).to_vec();
        row.extend_from_slice(tape.data(zj.center()));
        rows.push(row);
    }
    init_center(&rows)
}

#[allow(clippy::too_many_arguments)]
fn run_shard(
    params: &EncoderParams,
    center: &Center,
    state: &StreamState,
    positives: &[Event],
    negatives: &[Event],
    targets: &[Vec<f64>],
    k: usize,
    batch_len: f64,
) -> Result<ShardResult, HeadError> {
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape, true);
    let c = tape.param(center.0.clone());
    let mut terms = Vec::with_capacity(positives.len() + negatives.len());
    let mut positive = 0.0;
    let mut negative = 0.0;

    for e in positives {
        let oi = embed_node_on_tape(&mut tape, &vars, e.src, e.t, &state.bank, &state.store, k)?;
        let oj = embed_node_on_tape(&mut tape, &vars, e.dst, e.t, &state.bank, &state.store, k)?;
        let term = match (oi, oj) {
            (NodeOutput::Point(zi), NodeOutput::Point(zj)) => svdd_score_on_tape(&mut tape, zi, zj, c)?,
            (NodeOutput::Gaussian { mu: mi, sigma: si }, NodeOutput::Gaussian { mu: mj, sigma: sj }) => {
                positive_nll_on_tape(&mut tape, mi, si, mj, sj, c)?
            }
            _ => return Err(HeadError::WrongHead("mixed node outputs")),
        };
        positive += tape.value(term).item();
        terms.push(term);
    }
    for (e, target) in negatives.iter().zip(targets) {
        let ov = embed_node_on_tape(&mut tape, &vars, e.src, e.t, &state.bank, &state.store, k)?;
        let ow = embed_node_on_tape(&mut tape, &vars, e.dst, e.t, &state.bank, &state.store, k)?;
        let (Some(sv), Some(sw)) = (ov.sigma(), ow.sigma()) else {
            return Err(HeadError::WrongHead("negatives need a Gaussian head"));
        };
        let term = negative_nll_on_tape(&mut tape, sv, sw, target)?;
        negative += tape.value(term).item();
        terms.push(term);
    }

    if terms.is_empty() {
        return Ok(ShardResult {
            grads: vars
                .trainable()
                .iter()
                .map(|v| vec![0.0; tape.value(*v).len()])
                .collect(),
            center_grad: vec![0.0; center.dim()],
            positive,
            negative,
        });
    }
    let total = tape.sum_n(&terms)?;
    let root = tape.scale(total, 1.0 / batch_len);
    let g = tape.backward(root)?;
    Ok(ShardResult {
        grads: vars.trainable().iter().map(|v| g.get(*v).to_vec()).collect(),
        center_grad: g.get(c).to_vec(),
        positive,
        negative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderDims;

    fn toy_dims() -> EncoderDims {
        EncoderDims {
            memory: 4,
            time: 3,
            embed: 3,
            features: 2,
            neighbors: 3,
            hidden: 6,
        }
    }

    /// Four nodes, two pairs that talk repeatedly.
    fn toy_stream(n: usize) -> Vec<Event> {
        (0..n)
            .map(|i| {
                let (src, dst) = if i % 2 == 0 { (0, 1) } else { (2, 3) };
                Event {
                    src,
                    dst,
                    t: i as f64,
                    features: vec![(i as f64 * 0.3).sin(), 0.5],
                    label: Label::Normal,
                }
            })
            .collect()
    }

    fn cfg(epochs: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            lr,
            epochs,
            batch_size: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        for head in [HeadKind::Svdd, HeadKind::Gaussian] {
            let init = EncoderParams::init(toy_dims(), head, 1);
            let (model, trace) = train(init.clone(), &toy_stream(24), &cfg(1, 0.0)).unwrap();
            assert_eq!(model.params, init);
            assert_eq!(trace.len(), 1);
        }
    }

    #[test]
    fn contaminated_train_split_is_rejected() {
        let mut events = toy_stream(10);
        events[4].label = Label::Attack;
        let err = train(
            EncoderParams::init(toy_dims(), HeadKind::Svdd, 1),
            &events,
            &cfg(1, 1e-3),
        )
        .unwrap_err();
        assert_eq!(
            err,
            HeadError::ContaminatedTrain {
                index: 4,
                label: Label::Attack
            }
        );
    }

    #[test]
    fn same_seed_same_model() {
        let run = || {
            let p = EncoderParams::init(toy_dims(), HeadKind::Gaussian, 3);
            train(p, &toy_stream(40), &cfg(3, 1e-2)).unwrap()
        };
        let (a, ta) = run();
        let (b, tb) = run();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn training_reduces_loss_on_toy_stream() {
        let run = |head, neg_ratio| {
            let p = EncoderParams::init(toy_dims(), head, 5);
            let config = TrainConfig {
                neg_ratio,
                ..cfg(30, 1e-2)
            };
            train(p, &toy_stream(64), &config).unwrap().1
        };
        for (head, ratio) in [(HeadKind::Svdd, 0.3), (HeadKind::Gaussian, 0.0)] {
            let trace = run(head, ratio);
            let (first, last) = (trace[0].positive, trace[29].positive);
            assert!(last < first, "{head:?}: {first} -> {last}");
        }
        // with negatives the positive term alone rises while σ grows toward
        // the negative-target scale; the joint objective still falls
        let trace = run(HeadKind::Gaussian, 0.3);
        let joint = |r: &LossRecord| r.positive + 0.3 * r.negative;
        assert!(joint(&trace[29]) < joint(&trace[0]), "{trace:?}");
    }

    #[test]
    fn svdd_objective_descends_on_frozen_embeddings() {
        use crate::diffcore::Value;
        use crate::heads::svdd_objective;
        // frozen encoder output: fixed event embeddings, only the center moves
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..4).map(|m| ((i * 4 + m) as f64 * 0.9).cos()).collect())
            .collect();
        let mut c = Value::vector(vec![2.0, -2.0, 2.0, -2.0]);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.02,
            ..AdamConfig::default()
        });
        let mut history = Vec::new();
        for _ in 0..50 {
            let mut tape = Tape::new();
            let cv = tape.param(c.clone());
            let terms: Vec<_> = rows
                .iter()
                .map(|r| {
                    let z = tape.constant(Value::vector(r.clone()));
                    tape.sq_dist(z, cv).unwrap()
                })
                .collect();
            let scores: Vec<f64> = terms.iter().map(|t| tape.value(*t).item()).collect();
            history.push(svdd_objective(&scores).unwrap());
            let total = tape.sum_n(&terms).unwrap();
            let root = tape.scale(total, 1.0 / rows.len() as f64);
            let g = tape.backward(root).unwrap();
            let grad = g.get(cv).to_vec();
            adam.step(&mut [ParamSlot {
                value: &mut c,
                grad: &grad,
                decay: false,
            }])
            .unwrap();
        }
        assert!(history.windows(2).all(|w| w[1] < w[0]), "{history:?}");
    }

    #[test]
    fn svdd_epoch_loss_trends_down() {
        // one repeated batch; memory is reset every epoch so inputs repeat
        let p = EncoderParams::init(toy_dims(), HeadKind::Svdd, 6);
        let (_, trace) = train(p, &toy_stream(8), &cfg(50, 5e-3)).unwrap();
        let s: Vec<f64> = trace.iter().map(|r| r.positive).collect();
        let head: f64 = s[..10].iter().sum();
        let tail: f64 = s[40..].iter().sum();
        assert!(tail < head / 5.0, "{s:?}");
    }

    #[test]
    fn gaussian_training_reports_negative_loss() {
        let p = EncoderParams::init(toy_dims(), HeadKind::Gaussian, 7);
        let (_, trace) = train(p, &toy_stream(32), &cfg(2, 1e-3)).unwrap();
        assert!(trace.iter().all(|r| r.negative != 0.0 && r.negative.is_finite()));
        let p = EncoderParams::init(toy_dims(), HeadKind::Svdd, 7);
        let (_, trace) = train(p, &toy_stream(32), &cfg(2, 1e-3)).unwrap();
        assert!(trace.iter().all(|r| r.negative == 0.0));
    }
}
