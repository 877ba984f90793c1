//! Temporal graph encoder: per-node GRU memory, harmonic time encoding and a
//! mean-aggregated neighborhood feeding a two-layer embedding network.
//!
//! Embeddings of an event's endpoints are always computed from the memory and
//! adjacency state *before* that event is applied. Memory updates run outside
//! the gradient tape: stored memory enters every forward pass as a constant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctdg::{Event, NodeId, StoreError, TemporalAdjacencyStore};
use crate::diffcore::{affine_into, sigmoid_scalar, DiffError, Tape, Value, Var};

/// Lower bound applied to every predicted standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("negative time delta {0}; the event clock moved backwards")]
    NegativeDelta(f64),
    #[error("memory time regression on node {node}: update at {t} after last update {last}")]
    TimeRegression { node: NodeId, last: f64, t: f64 },
    #[error("feature dimension mismatch: event has {got}, encoder expects {expected}")]
    FeatureDim { expected: usize, got: usize },
    #[error("batch is not sorted by timestamp at position {0}")]
    UnsortedBatch(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    /// Point embeddings scored against a hypersphere center.
    Svdd,
    /// Mean and standard-deviation embeddings.
    Gaussian,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Svdd => "svdd",
            HeadKind::Gaussian => "gaussian",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "svdd" => Some(HeadKind::Svdd),
            "gaussian" => Some(HeadKind::Gaussian),
            _ => None,
        }
    }
}

/// Encoder dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    /// Memory size `d_m`.
    pub memory: usize,
    /// Time-encoding size `d_t`.
    pub time: usize,
    /// Node embedding size `p`; event embeddings have `2p` components.
    pub embed: usize,
    /// Edge feature size `f`.
    pub features: usize,
    /// Neighbors aggregated per node.
    pub neighbors: usize,
    /// Width of the embedding network's hidden layer.
    pub hidden: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self {
            memory: 32,
            time: 8,
            embed: 32,
            features: 8,
            neighbors: 10,
            hidden: 64,
        }
    }
}

impl EncoderDims {
    pub fn message(&self) -> usize {
        2 * self.memory + self.time + self.features
    }

    pub fn neighbor_row(&self) -> usize {
        self.memory + self.time + self.features
    }

    pub fn embed_input(&self) -> usize {
        self.memory + self.neighbor_row()
    }

    /// Event-level embedding size `N = 2p`.
    pub fn event_dim(&self) -> usize {
        2 * self.embed
    }
}

/// GRU weights: input matrices are `d_m × msg`, hidden matrices `d_m × d_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub w_r: Value,
    pub u_r: Value,
    pub b_r: Value,
    pub w_u: Value,
    pub u_u: Value,
    pub b_u: Value,
    pub w_n: Value,
    pub u_n: Value,
    pub b_n: Value,
    pub b_hn: Value,
}

impl GruParams {
    fn init(rng: &mut ChaCha8Rng, d: usize, m: usize) -> Self {
        Self {
            w_r: glorot(rng, d, m),
            u_r: glorot(rng, d, d),
            b_r: Value::zeros(&[d]),
            w_u: glorot(rng, d, m),
            u_u: glorot(rng, d, d),
            b_u: Value::zeros(&[d]),
            w_n: glorot(rng, d, m),
            u_n: glorot(rng, d, d),
            b_n: Value::zeros(&[d]),
            b_hn: Value::zeros(&[d]),
        }
    }

    /// Plain forward pass; numerically identical to [`Tape::gru_cell`].
    pub fn forward(&self, h: &[f64], msg: &[f64]) -> Vec<f64> {
        let d = h.len();
        let zero = vec![0.0; d];
        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d];

        affine_into(self.w_r.data(), msg, self.b_r.data(), &mut a);
        affine_into(self.u_r.data(), h, &zero, &mut b);
        let r: Vec<f64> = a.iter().zip(&b).map(|(x, y)| sigmoid_scalar(x + y)).collect();

        affine_into(self.w_u.data(), msg, self.b_u.data(), &mut a);
        affine_into(self.u_u.data(), h, &zero, &mut b);
        let u: Vec<f64> = a.iter().zip(&b).map(|(x, y)| sigmoid_scalar(x + y)).collect();

        affine_into(self.w_n.data(), msg, self.b_n.data(), &mut a);
        affine_into(self.u_n.data(), h, self.b_hn.data(), &mut b);
        (0..d)
            .map(|i| {
                let n = (a[i] + r[i] * b[i]).tanh();
                u[i] * h[i] + (n - u[i] * n)
            })
            .collect()
    }
}

/// All encoder weights. GRU weights drive memory updates only and receive no
/// gradient; everything else is trainable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub dims: EncoderDims,
    pub head: HeadKind,
    pub gru: GruParams,
    pub time_freq: Value,
    pub time_phase: Value,
    pub w1: Value,
    pub b1: Value,
    pub w2: Value,
    pub b2: Value,
    /// Point head, or the mean projection of the Gaussian head.
    pub w_out: Value,
    pub b_out: Value,
    /// Standard-deviation pre-activation (Gaussian head only).
    pub w_sigma: Option<Value>,
    pub b_sigma: Option<Value>,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Value {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Value::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-a..a)).collect())
}

impl EncoderParams {
    /// Seeded initialization: Glorot-uniform weights, zero biases, log-spaced
    /// time frequencies `10^(-4k/(d_t-1))`, and a σ bias of `softplus⁻¹(1)`.
    pub fn init(dims: EncoderDims, head: HeadKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gru = GruParams::init(&mut rng, dims.memory, dims.message());
        let span = if dims.time > 1 {
            4.0 / (dims.time - 1) as f64
        } else {
            0.0
        };
        let time_freq = Value::vector((0..dims.time).map(|k| 10f64.powf(-span * k as f64)).collect());
        let time_phase = Value::zeros(&[dims.time]);
        let w1 = glorot(&mut rng, dims.hidden, dims.embed_input());
        let w2 = glorot(&mut rng, dims.hidden, dims.hidden);
        let w_out = glorot(&mut rng, dims.embed, dims.hidden);
        let (w_sigma, b_sigma) = match head {
            HeadKind::Svdd => (None, None),
            HeadKind::Gaussian => (
                Some(glorot(&mut rng, dims.embed, dims.hidden)),
                Some(Value::vector(vec![(1f64.exp() - 1.0).ln(); dims.embed])),
            ),
        };
        Self {
            dims,
            head,
            gru,
            time_freq,
            time_phase,
            w1,
            b1: Value::zeros(&[dims.hidden]),
            w2,
            b2: Value::zeros(&[dims.hidden]),
            w_out,
            b_out: Value::zeros(&[dims.embed]),
            w_sigma,
            b_sigma,
        }
    }

    /// Named parameter blocks in a fixed order (checkpoint layout).
    pub fn blocks(&self) -> Vec<(&'static str, &Value)> {
        let g = &self.gru;
        let mut out = vec![
            ("gru.w_r", &g.w_r),
            ("gru.u_r", &g.u_r),
            ("gru.b_r", &g.b_r),
            ("gru.w_u", &g.w_u),
            ("gru.u_u", &g.u_u),
            ("gru.b_u", &g.b_u),
            ("gru.w_n", &g.w_n),
            ("gru.u_n", &g.u_n),
            ("gru.b_n", &g.b_n),
            ("gru.b_hn", &g.b_hn),
        ];
        out.extend(self.trainable_blocks());
        out
    }

    /// Parameters that receive gradients, in tape order.
    pub fn trainable_blocks(&self) -> Vec<(&'static str, &Value)> {
        let mut out = vec![
            ("time.freq", &self.time_freq),
            ("time.phase", &self.time_phase),
            ("embed.w1", &self.w1),
            ("embed.b1", &self.b1),
            ("embed.w2", &self.w2),
            ("embed.b2", &self.b2),
            ("head.w_out", &self.w_out),
            ("head.b_out", &self.b_out),
        ];
        if let (Some(w), Some(b)) = (&self.w_sigma, &self.b_sigma) {
            out.push(("head.w_sigma", w));
            out.push(("head.b_sigma", b));
        }
        out
    }

    /// Mutable counterpart of [`EncoderParams::trainable_blocks`], same order.
    pub fn trainable_mut(&mut self) -> Vec<&mut Value> {
        let mut out = vec![
            &mut self.time_freq,
            &mut self.time_phase,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w_out,
            &mut self.b_out,
        ];
        if let (Some(w), Some(b)) = (&mut self.w_sigma, &mut self.b_sigma) {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Mutable access to every block by checkpoint name.
    pub fn block_mut(&mut self, name: &str) -> Option<&mut Value> {
        let g = &mut self.gru;
        Some(match name {
            "gru.w_r" => &mut g.w_r,
            "gru.u_r" => &mut g.u_r,
            "gru.b_r" => &mut g.b_r,
            "gru.w_u" => &mut g.w_u,
            "gru.u_u" => &mut g.u_u,
            "gru.b_u" => &mut g.b_u,
            "gru.w_n" => &mut g.w_n,
            "gru.u_n" => &mut g.u_n,
            "gru.b_n" => &mut g.b_n,
            "gru.b_hn" => &mut g.b_hn,
            "time.freq" => &mut self.time_freq,
            "time.phase" => &mut self.time_phase,
            "embed.w1" => &mut self.w1,
            "embed.b1" => &mut self.b1,
            "embed.w2" => &mut self.w2,
            "embed.b2" => &mut self.b2,
            "head.w_out" => &mut self.w_out,
            "head.b_out" => &mut self.b_out,
            "head.w_sigma" => self.w_sigma.as_mut()?,
            "head.b_sigma" => self.b_sigma.as_mut()?,
            _ => return None,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, v)| v.is_finite())
    }

    /// Loads the trainable blocks onto `tape`, as parameters or constants.
    pub fn to_tape(&self, tape: &mut Tape, trainable: bool) -> EncoderVars {
        let mut load = |v: &Value| {
            if trainable {
                tape.param(v.clone())
            } else {
                tape.constant(v.clone())
            }
        };
        let time_freq = load(&self.time_freq);
        let time_phase = load(&self.time_phase);
        let w1 = load(&self.w1);
        let b1 = load(&self.b1);
        let w2 = load(&self.w2);
        let b2 = load(&self.b2);
        let w_out = load(&self.w_out);
        let b_out = load(&self.b_out);
        let sigma = match (&self.w_sigma, &self.b_sigma) {
            (Some(w), Some(b)) => Some((load(w), load(b))),
            _ => None,
        };
        let zero_neighbor = tape.constant(Value::zeros(&[self.dims.neighbor_row()]));
        EncoderVars {
            time_freq,
            time_phase,
            w1,
            b1,
            w2,
            b2,
            w_out,
            b_out,
            sigma,
            zero_neighbor,
        }
    }

    /// `cos(ω·Δt + φ)` without a tape.
    pub fn time_encode(&self, delta_t: f64) -> Result<Vec<f64>, EncoderError> {
        check_delta(delta_t)?;
        Ok(self
            .time_freq
            .data()
            .iter()
            .zip(self.time_phase.data())
            .map(|(w, p)| (w * delta_t + p).cos())
            .collect())
    }
}

fn check_delta(delta_t: f64) -> Result<(), EncoderError> {
    if !(delta_t >= 0.0) || !delta_t.is_finite() {
        return Err(EncoderError::NegativeDelta(delta_t));
    }
    Ok(())
}

/// Handles to the trainable encoder blocks on one tape.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub time_freq: Var,
    pub time_phase: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub w_out: Var,
    pub b_out: Var,
    pub sigma: Option<(Var, Var)>,
    zero_neighbor: Var,
}

impl EncoderVars {
    /// Trainable handles in the order of [`EncoderParams::trainable_mut`].
    pub fn trainable(&self) -> Vec<Var> {
        let mut v = vec![
            self.time_freq,
            self.time_phase,
            self.w1,
            self.b1,
            self.w2,
            self.b2,
            self.w_out,
            self.b_out,
        ];
        if let Some((w, b)) = self.sigma {
            v.push(w);
            v.push(b);
        }
        v
    }
}

/// Harmonic time encoding on a tape.
pub fn time_encode(tape: &mut Tape, vars: &EncoderVars, delta_t: f64) -> Result<Var, EncoderError> {
    check_delta(delta_t)?;
    let scaled = tape.scale(vars.time_freq, delta_t);
    let shifted = tape.add(scaled, vars.time_phase)?;
    Ok(tape.cos(shifted))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEmbedding {
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNodeEmbedding {
    pub mu: Vec<f64>,
    /// Standard deviations, each at least [`SIGMA_FLOOR`].
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Embedding {
    Point(NodeEmbedding),
    Gaussian(GaussianNodeEmbedding),
}

impl Embedding {
    /// The point embedding, or the mean of a Gaussian one.
    pub fn center(&self) -> &[f64] {
        match self {
            Embedding::Point(p) => &p.z,
            Embedding::Gaussian(g) => &g.mu,
        }
    }

    pub fn sigma(&self) -> Option<&[f64]> {
        match self {
            Embedding::Point(_) => None,
            Embedding::Gaussian(g) => Some(&g.sigma),
        }
    }
}

/// Node output on a tape.
#[derive(Debug, Clone, Copy)]
pub enum NodeOutput {
    Point(Var),
    Gaussian { mu: Var, sigma: Var },
}

impl NodeOutput {
    pub fn center(self) -> Var {
        match self {
            NodeOutput::Point(z) => z,
            NodeOutput::Gaussian { mu, .. } => mu,
        }
    }

    pub fn sigma(self) -> Option<Var> {
        match self {
            NodeOutput::Point(_) => None,
            NodeOutput::Gaussian { sigma, .. } => Some(sigma),
        }
    }

    pub fn read(self, tape: &Tape) -> Embedding {
        match self {
            NodeOutput::Point(z) => Embedding::Point(NodeEmbedding {
                z: tape.data(z).to_vec(),
            }),
            NodeOutput::Gaussian { mu, sigma } => Embedding::Gaussian(GaussianNodeEmbedding {
                mu: tape.data(mu).to_vec(),
                sigma: tape.data(sigma).to_vec(),
            }),
        }
    }
}

/// Per-node memory vectors with last-update timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    dim: usize,
    t0: f64,
    memory: Vec<f64>,
    last_update: Vec<f64>,
    zero: Vec<f64>,
}

impl MemoryBank {
    /// All-zero memory for `node_count` nodes, last update at `t0`.
    pub fn new(node_count: usize, dim: usize, t0: f64) -> Self {
        Self {
            dim,
            t0,
            memory: vec![0.0; node_count * dim],
            last_update: vec![t0; node_count],
            zero: vec![0.0; dim],
        }
    }

    pub fn len(&self) -> usize {
        self.last_update.len()
    }

    pub fn is_empty(&self) -> bool {
        self.last_update.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn start_time(&self) -> f64 {
        self.t0
    }

    /// Memory of `node`; zeros for nodes never seen.
    pub fn memory(&self, node: NodeId) -> &[f64] {
        if node < self.len() {
            &self.memory[node * self.dim..(node + 1) * self.dim]
        } else {
            &self.zero
        }
    }

    pub fn last_update(&self, node: NodeId) -> f64 {
        self.last_update.get(node).copied().unwrap_or(self.t0)
    }

    fn ensure(&mut self, node: NodeId) {
        if node >= self.len() {
            self.memory.resize((node + 1) * self.dim, 0.0);
            self.last_update.resize(node + 1, self.t0);
        }
    }

    /// Zeroes every memory vector and resets timestamps to the start time.
    pub fn reset(&mut self) {
        self.memory.iter_mut().for_each(|x| *x = 0.0);
        self.last_update.iter_mut().for_each(|x| *x = self.t0);
    }

    /// FNV-1a over the bit patterns of all memory and timestamps.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for x in self.memory.iter().chain(&self.last_update) {
            for b in x.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    pub fn is_finite(&self) -> bool {
        self.memory.iter().all(|x| x.is_finite())
    }
}

/// Builds `(msg_src, msg_dst)` for `event` from the current memory:
/// `[h_self ⊕ h_other ⊕ time_encode(t − last_update(self)) ⊕ f]`.
pub fn compute_messages(
    event: &Event,
    bank: &MemoryBank,
    params: &EncoderParams,
) -> Result<(Vec<f64>, Vec<f64>), EncoderError> {
    check_features(event, &params.dims)?;
    let build = |me: NodeId, other: NodeId| -> Result<Vec<f64>, EncoderError> {
        let mut msg = Vec::with_capacity(params.dims.message());
        msg.extend_from_slice(bank.memory(me));
        msg.extend_from_slice(bank.memory(other));
        msg.extend(params.time_encode(event.t - bank.last_update(me))?);
        msg.extend_from_slice(&event.features);
        Ok(msg)
    };
    Ok((build(event.src, event.dst)?, build(event.dst, event.src)?))
}

fn check_features(event: &Event, dims: &EncoderDims) -> Result<(), EncoderError> {
    if event.features.len() != dims.features {
        return Err(EncoderError::FeatureDim {
            expected: dims.features,
            got: event.features.len(),
        });
    }
    Ok(())
}

/// `h_node ← GRU(h_node, msg)` and `last_update(node) ← t`.
pub fn update_memory(
    bank: &mut MemoryBank,
    node: NodeId,
    msg: &[f64],
    params: &EncoderParams,
    t: f64,
) -> Result<(), EncoderError> {
    let last = bank.last_update(node);
    if t < last {
        return Err(EncoderError::TimeRegression { node, last, t });
    }
    bank.ensure(node);
    let next = params.gru.forward(bank.memory(node), msg);
    let d = bank.dim;
    bank.memory[node * d..(node + 1) * d].copy_from_slice(&next);
    bank.last_update[node] = t;
    Ok(())
}

/// Applies one event: both memory updates (messages taken from pre-event
/// memory) when `update_memory` is set, then inserts it into the store.
pub fn apply_event(
    event: &Event,
    bank: &mut MemoryBank,
    store: &mut TemporalAdjacencyStore,
    params: &EncoderParams,
    update_memory_flag: bool,
) -> Result<(), EncoderError> {
    if update_memory_flag {
        let (msg_src, msg_dst) = compute_messages(event, bank, params)?;
        update_memory(bank, event.src, &msg_src, params, event.t)?;
        update_memory(bank, event.dst, &msg_dst, params, event.t)?;
    } else {
        check_features(event, &params.dims)?;
    }
    store.insert_event(event.clone())?;
    Ok(())
}

/// Embeds `node` at time `t` on `tape` from memory and the `K` most recent
/// strictly earlier incident events.
pub fn embed_node_on_tape(
    tape: &mut Tape,
    vars: &EncoderVars,
    node: NodeId,
    t: f64,
    bank: &MemoryBank,
    store: &TemporalAdjacencyStore,
    k: usize,
) -> Result<NodeOutput, EncoderError> {
    let mut rows = Vec::new();
    for inc in store.neighbors(node, t, k) {
        let h = tape.constant(Value::vector(bank.memory(inc.other).to_vec()));
        let te = time_encode(tape, vars, t - inc.t)?;
        let f = tape.constant(Value::vector(store.event(inc.event).features.clone()));
        rows.push(tape.concat_all(&[h, te, f])?);
    }
    let aggregate = if rows.is_empty() {
        vars.zero_neighbor
    } else {
        let total = tape.sum_n(&rows)?;
        tape.scale(total, 1.0 / rows.len() as f64)
    };
    let own = tape.constant(Value::vector(bank.memory(node).to_vec()));
    let input = tape.concat(own, aggregate)?;
    let a1 = tape.linear(input, vars.w1, vars.b1)?;
    let hidden = tape.tanh(a1);
    let raw = tape.linear(hidden, vars.w2, vars.b2)?;
    let center = tape.linear(raw, vars.w_out, vars.b_out)?;
    Ok(match vars.sigma {
        None => NodeOutput::Point(center),
        Some((ws, bs)) => {
            let pre = tape.linear(raw, ws, bs)?;
            let sp = tape.softplus(pre);
            let sigma = tape.floor_at(sp, SIGMA_FLOOR);
            NodeOutput::Gaussian { mu: center, sigma }
        }
    })
}

/// Embeds one node outside of training.
pub fn embed_node(
    node: NodeId,
    t: f64,
    bank: &MemoryBank,
    store: &TemporalAdjacencyStore,
    params: &EncoderParams,
) -> Result<Embedding, EncoderError> {
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape, false);
    let out = embed_node_on_tape(&mut tape, &vars, node, t, bank, store, params.dims.neighbors)?;
    Ok(out.read(&tape))
}

/// Streaming encoder state: memory plus the adjacency store of applied events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamState {
    pub bank: MemoryBank,
    pub store: TemporalAdjacencyStore,
}

impl StreamState {
    pub fn new(memory_dim: usize, t0: f64) -> Self {
        Self {
            bank: MemoryBank::new(0, memory_dim, t0),
            store: TemporalAdjacencyStore::new(),
        }
    }

    /// Clears memory and adjacency.
    pub fn reset(&mut self) {
        self.bank.reset();
        self.store = TemporalAdjacencyStore::new();
    }
}

/// How a batch's embeddings see memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    /// Each event is embedded right before it is applied.
    PerEvent,
    /// Every event of the batch is embedded against the pre-batch state.
    PreBatch,
}

/// Embeds both endpoints of every event, then applies the events to `state`.
pub fn process_batch(
    events: &[Event],
    state: &mut StreamState,
    params: &EncoderParams,
    mode: BatchMode,
    update_memory_flag: bool,
) -> Result<Vec<(Embedding, Embedding)>, EncoderError> {
    if let Some(pos) = events.windows(2).position(|w| w[1].t < w[0].t) {
        return Err(EncoderError::UnsortedBatch(pos + 1));
    }
    let embed_pair = |state: &StreamState, e: &Event| -> Result<(Embedding, Embedding), EncoderError> {
        Ok((
            embed_node(e.src, e.t, &state.bank, &state.store, params)?,
            embed_node(e.dst, e.t, &state.bank, &state.store, params)?,
        ))
    };
    let mut out = Vec::with_capacity(events.len());
    match mode {
        BatchMode::PerEvent => {
            for e in events {
                out.push(embed_pair(state, e)?);
                apply_event(e, &mut state.bank, &mut state.store, params, update_memory_flag)?;
            }
        }
        BatchMode::PreBatch => {
            for e in events {
                out.push(embed_pair(state, e)?);
            }
            for e in events {
                apply_event(e, &mut state.bank, &mut state.store, params, update_memory_flag)?;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctdg::Label;
    use crate::diffcore::{grad_check, softplus_scalar, GruVars};

    fn small_dims() -> EncoderDims {
        EncoderDims {
            memory: 4,
            time: 3,
            embed: 3,
            features: 2,
            neighbors: 3,
            hidden: 5,
        }
    }

    fn ev(src: NodeId, dst: NodeId, t: f64, f: [f64; 2]) -> Event {
        Event {
            src,
            dst,
            t,
            features: f.to_vec(),
            label: Label::Normal,
        }
    }

    fn stream() -> Vec<Event> {
        vec![
            ev(0, 1, 1.0, [0.5, -0.3]),
            ev(1, 2, 2.0, [0.1, 0.9]),
            ev(0, 2, 3.5, [-1.2, 0.4]),
            ev(3, 0, 4.0, [0.0, 0.2]),
            ev(2, 3, 6.0, [0.7, -0.8]),
            ev(0, 1, 6.0, [0.3, 0.3]),
            ev(1, 3, 9.0, [-0.4, 1.1]),
        ]
    }

    #[test]
    fn init_memory_is_zero() {
        let bank = MemoryBank::new(0, 8, 0.0);
        assert!(bank.is_empty());
        let bank = MemoryBank::new(3, 4, 2.5);
        assert_eq!(bank.memory(2), &[0.0; 4]);
        assert_eq!(bank.memory(99), &[0.0; 4]);
        assert_eq!(bank.last_update(1), 2.5);
        let json = serde_json::to_string(&bank).unwrap();
        assert_eq!(serde_json::from_str::<MemoryBank>(&json).unwrap(), bank);
    }

    #[test]
    fn time_encode_values_and_bounds() {
        let p = EncoderParams::init(small_dims(), HeadKind::Svdd, 0);
        assert_eq!(p.time_encode(0.0).unwrap(), vec![1.0; 3]);
        for dt in [0.1, 3.0, 1e5, 77.7] {
            assert!(p.time_encode(dt).unwrap().iter().all(|x| x.abs() <= 1.0));
        }
        assert!(matches!(p.time_encode(-1.0), Err(EncoderError::NegativeDelta(_))));
    }

    #[test]
    fn time_encode_frequency_gradient() {
        let dt = 1.7;
        let err = grad_check(
            |t, w| {
                let phase = t.constant(Value::vector(vec![0.1, -0.2, 0.3]));
                let s = t.scale(w, dt);
                let a = t.add(s, phase)?;
                let c = t.cos(a);
                Ok(t.sum(c))
            },
            &[1.0, 0.1, 0.01],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn messages_layout_and_symmetry() {
        let dims = small_dims();
        let p = EncoderParams::init(dims, HeadKind::Svdd, 0);
        let bank = MemoryBank::new(0, dims.memory, 0.0);
        let e = ev(0, 1, 2.0, [0.0, 0.0]);
        let (ms, md) = compute_messages(&e, &bank, &p).unwrap();
        assert_eq!(ms.len(), dims.message());
        let te = p.time_encode(2.0).unwrap();
        let mut expect = vec![0.0; 2 * dims.memory];
        expect.extend(&te);
        expect.extend([0.0, 0.0]);
        assert_eq!(ms, expect);
        assert_eq!(md, expect);

        let mut bank = MemoryBank::new(2, dims.memory, 0.0);
        bank.memory[..4].copy_from_slice(&[0.1, 0.2, 0.3, 0.4]);
        bank.memory[4..].copy_from_slice(&[-0.1, -0.2, -0.3, -0.4]);
        let (a_src, a_dst) = compute_messages(&ev(0, 1, 1.0, [1.0, 2.0]), &bank, &p).unwrap();
        let (b_src, b_dst) = compute_messages(&ev(1, 0, 1.0, [1.0, 2.0]), &bank, &p).unwrap();
        assert_eq!(a_src, b_dst);
        assert_eq!(a_dst, b_src);

        let bad = Event {
            features: vec![1.0],
            ..ev(0, 1, 1.0, [0.0, 0.0])
        };
        assert!(matches!(
            compute_messages(&bad, &bank, &p),
            Err(EncoderError::FeatureDim { .. })
        ));
    }

    #[test]
    fn gru_forward_matches_tape_cell() {
        let dims = small_dims();
        let p = EncoderParams::init(dims, HeadKind::Svdd, 4);
        let h = vec![0.2, -0.5, 0.1, 0.9];
        let msg: Vec<f64> = (0..dims.message()).map(|i| (i as f64 * 0.37).sin()).collect();
        let plain = p.gru.forward(&h, &msg);

        let mut t = Tape::new();
        let g = &p.gru;
        let mut c = |v: &Value| t.constant(v.clone());
        let vars = GruVars {
            w_r: c(&g.w_r),
            u_r: c(&g.u_r),
            b_r: c(&g.b_r),
            w_u: c(&g.w_u),
            u_u: c(&g.u_u),
            b_u: c(&g.b_u),
            w_n: c(&g.w_n),
            u_n: c(&g.u_n),
            b_n: c(&g.b_n),
            b_hn: c(&g.b_hn),
        };
        let hv = t.constant(Value::vector(h));
        let mv = t.constant(Value::vector(msg));
        let out = t.gru_cell(hv, mv, &vars).unwrap();
        for (a, b) in t.data(out).iter().zip(&plain) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn memory_is_stateful_and_bounded() {
        let dims = small_dims();
        let p = EncoderParams::init(dims, HeadKind::Svdd, 1);
        let mut state = StreamState::new(dims.memory, 0.0);
        let e = ev(0, 1, 1.0, [2.0, -1.0]);
        apply_event(&e, &mut state.bank, &mut state.store, &p, true).unwrap();
        let after_one = state.bank.memory(0).to_vec();
        apply_event(&e, &mut state.bank, &mut state.store, &p, true).unwrap();
        assert_ne!(after_one, state.bank.memory(0));
        assert!(state.bank.memory(0).iter().all(|x| x.abs() < 1.0));
        assert_eq!(state.bank.last_update(0), 1.0);

        let mut bank = state.bank.clone();
        let msg = vec![0.0; dims.message()];
        let err = update_memory(&mut bank, 0, &msg, &p, 0.5).unwrap_err();
        assert!(matches!(err, EncoderError::TimeRegression { .. }));
    }

    #[test]
    fn replay_is_bitwise_deterministic() {
        let dims = small_dims();
        let run = || {
            let p = EncoderParams::init(dims, HeadKind::Gaussian, 9);
            let mut s = StreamState::new(dims.memory, 0.0);
            process_batch(&stream(), &mut s, &p, BatchMode::PerEvent, true).unwrap();
            s.bank
        };
        assert_eq!(run().fingerprint(), run().fingerprint());
        assert_eq!(run(), run());
    }

    #[test]
    fn isolated_node_with_zero_output_layer_yields_bias() {
        let dims = small_dims();
        let mut p = EncoderParams::init(dims, HeadKind::Svdd, 2);
        p.w_out = Value::zeros(&[dims.embed, dims.hidden]);
        p.b_out = Value::vector(vec![0.25, -1.0, 3.0]);
        let bank = MemoryBank::new(0, dims.memory, 0.0);
        let store = TemporalAdjacencyStore::new();
        let emb = embed_node(5, 10.0, &bank, &store, &p).unwrap();
        assert_eq!(emb.center(), &[0.25, -1.0, 3.0]);
    }

    #[test]
    fn sigma_respects_floor() {
        let dims = small_dims();
        let mut p = EncoderParams::init(dims, HeadKind::Gaussian, 2);
        // push the pre-activation far negative so softplus underflows
        p.b_sigma = Some(Value::vector(vec![-500.0; dims.embed]));
        let mut s = StreamState::new(dims.memory, 0.0);
        let out = process_batch(&stream(), &mut s, &p, BatchMode::PerEvent, true).unwrap();
        for (a, b) in out {
            for sg in a.sigma().unwrap().iter().chain(b.sigma().unwrap()) {
                assert!(*sg >= SIGMA_FLOOR && sg.is_finite());
            }
        }
        assert!(softplus_scalar(-500.0) < SIGMA_FLOOR);
    }

    #[test]
    fn embeddings_ignore_future_events() {
        let dims = small_dims();
        let p = EncoderParams::init(dims, HeadKind::Gaussian, 3);
        let events = stream();
        let mut full = StreamState::new(dims.memory, 0.0);
        let all = process_batch(&events, &mut full, &p, BatchMode::PerEvent, true).unwrap();
        for cut in 1..events.len() {
            let mut s = StreamState::new(dims.memory, 0.0);
            let part = process_batch(&events[..cut], &mut s, &p, BatchMode::PerEvent, true).unwrap();
            assert_eq!(part, all[..cut]);
        }
    }

    #[test]
    fn batch_of_one_equals_manual_composition() {
        let dims = small_dims();
        let p = EncoderParams::init(dims, HeadKind::Svdd, 5);
        let e = ev(0, 1, 1.0, [0.4, 0.4]);
        let mut s = StreamState::new(dims.memory, 0.0);
        let got = process_batch(std::slice::from_ref(&e), &mut s, &p, BatchMode::PerEvent, true).unwrap();

        let mut bank = MemoryBank::new(0, dims.memory, 0.0);
        let store = TemporalAdjacencyStore::new();
        let zs = embed_node(0, 1.0, &bank, &store, &p).unwrap();
        let zd = embed_node(1, 1.0, &bank, &store, &p).unwrap();
        let (ms, md) = compute_messages(&e, &bank, &p).unwrap();
        update_memory(&mut bank, 0, &ms, &p, 1.0).unwrap();
        update_memory(&mut bank, 1, &md, &p, 1.0).unwrap();
        assert_eq!(got, vec![(zs, zd)]);
        assert_eq!(s.bank, bank);
    }

    #[test]
    fn second_event_sees_first_update() {
        let dims = small_dims();
        let p = EncoderParams::init(dims, HeadKind::Svdd, 6);
        let e1 = ev(0, 1, 1.0, [0.4, 0.4]);
        let e2 = ev(1, 2, 2.0, [0.1, -0.4]);
        let mut s = StreamState::new(dims.memory, 0.0);
        let got = process_batch(&[e1.clone(), e2.clone()], &mut s, &p, BatchMode::PerEvent, true).unwrap();

        // manual trace
        let mut bank = MemoryBank::new(0, dims.memory, 0.0);
        let mut store = TemporalAdjacencyStore::new();
        let (ms, md) = compute_messages(&e1, &bank, &p).unwrap();
        update_memory(&mut bank, 0, &ms, &p, 1.0).unwrap();
        update_memory(&mut bank, 1, &md, &p, 1.0).unwrap();
        store.insert_event(e1).unwrap();
        let z1 = embed_node(1, 2.0, &bank, &store, &p).unwrap();
        assert_eq!(got[1].0, z1);
        // and differs from the embedding against fresh state
        let fresh = embed_node(
            1,
            2.0,
            &MemoryBank::new(0, dims.memory, 0.0),
            &TemporalAdjacencyStore::new(),
            &p,
        )
        .unwrap();
        assert_ne!(got[1].0, fresh);
    }

    #[test]
    fn per_event_batching_is_invariant() {
        let dims = small_dims();
        let p = EncoderParams::init(dims, HeadKind::Gaussian, 7);
        let events = stream();
        let mut one = StreamState::new(dims.memory, 0.0);
        let whole = process_batch(&events, &mut one, &p, BatchMode::PerEvent, true).unwrap();
        for split in [1, 2, 3, 5] {
            let mut s = StreamState::new(dims.memory, 0.0);
            let mut got = Vec::new();
            for chunk in events.chunks(split) {
                got.extend(process_batch(chunk, &mut s, &p, BatchMode::PerEvent, true).unwrap());
            }
            assert_eq!(got, whole);
            assert_eq!(s.bank, one.bank);
        }
    }

    #[test]
    fn pre_batch_mode_uses_pre_batch_state() {
        let dims = small_dims();
        let p = EncoderParams::init(dims, HeadKind::Svdd, 8);
        let events = stream();
        let mut s = StreamState::new(dims.memory, 0.0);
        let out = process_batch(&events[..3], &mut s, &p, BatchMode::PreBatch, true).unwrap();
        let fresh_bank = MemoryBank::new(0, dims.memory, 0.0);
        let fresh_store = TemporalAdjacencyStore::new();
        for (e, (a, _)) in events[..3].iter().zip(&out) {
            assert_eq!(*a, embed_node(e.src, e.t, &fresh_bank, &fresh_store, &p).unwrap());
        }
        // memory ends in the same place as per-event processing
        let mut q = StreamState::new(dims.memory, 0.0);
        process_batch(&events[..3], &mut q, &p, BatchMode::PerEvent, true).unwrap();
        assert_eq!(q.bank, s.bank);
    }

    #[test]
    fn frozen_memory_flag_leaves_bank_untouched() {
        let dims = small_dims();
        let p = EncoderParams::init(dims, HeadKind::Svdd, 8);
        let mut s = StreamState::new(dims.memory, 0.0);
        let before = s.bank.fingerprint();
        process_batch(&stream(), &mut s, &p, BatchMode::PerEvent, false).unwrap();
        assert_eq!(s.bank.fingerprint(), before);
        assert_eq!(s.store.len(), stream().len());
    }

    #[test]
    fn unsorted_batch_is_rejected() {
        let dims = small_dims();
        let p = EncoderParams::init(dims, HeadKind::Svdd, 0);
        let mut s = StreamState::new(dims.memory, 0.0);
        let events = vec![ev(0, 1, 2.0, [0.0, 0.0]), ev(0, 1, 1.0, [0.0, 0.0])];
        assert_eq!(
            process_batch(&events, &mut s, &p, BatchMode::PerEvent, true).unwrap_err(),
            EncoderError::UnsortedBatch(1)
        );
    }
}
