use super::{score_mu, score_sigma, svdd_score, HeadError, Model};
use crate::ctdg::Event;
use crate::diffcore::Tape;
use crate::encoder::{apply_event, embed_node_on_tape, Embedding, StreamState};

/// Scores of one event. `s_sigma` is `None` for the hypersphere head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScorePair {
    /// `s_μ` for the Gaussian head, `s` for the hypersphere head.
    pub s_mu: f64,
    pub s_sigma: Option<f64>,
}

/// Replays `events` into a fresh stream state (memory starts at the first
/// event's timestamp) without scoring them.
pub fn warm_state(model: &Model, events: &[Event]) -> Result<StreamState, HeadError> {
    let t0 = events.first().map(|e| e.t).unwrap_or(0.0);
    let mut state = StreamState::new(model.params.dims.memory, t0);
    for e in events {
        apply_event(e, &mut state.bank, &mut state.store, &model.params, true)?;
    }
    Ok(state)
}

/// Scores each event from the state right before it, then applies it.
/// With `update_memory` unset, events still enter the adjacency store but
/// leave memory untouched.
pub fn score_events(
    model: &Model,
    state: &mut StreamState,
    events: &[Event],
    update_memory: bool,
) -> Result<Vec<ScorePair>, HeadError> {
    let k = model.params.dims.neighbors;
    let mut out = Vec::with_capacity(events.len());
    for e in events {
        let mut tape = Tape::new();
        let vars = model.params.to_tape(&mut tape, false);
        let a = embed_node_on_tape(&mut tape, &vars, e.src, e.t, &state.bank, &state.store, k)?.read(&tape);
        let b = embed_node_on_tape(&mut tape, &vars, e.dst, e.t, &state.bank, &state.store, k)?.read(&tape);
        out.push(pair_scores(model, &a, &b)?);
        apply_event(e, &mut state.bank, &mut state.store, &model.params, update_memory)?;
    }
    Ok(out)
}

fn pair_scores(model: &Model, a: &Embedding, b: &Embedding) -> Result<ScorePair, HeadError> {
    Ok(match (a, b) {
        (Embedding::Point(x), Embedding::Point(y)) => ScorePair {
            s_mu: svdd_score(&x.z, &y.z, &model.center)?,
            s_sigma: None,
        },
        (Embedding::Gaussian(x), Embedding::Gaussian(y)) => ScorePair {
            s_mu: score_mu(&x.mu, &y.mu, &model.center)?,
            s_sigma: Some(score_sigma(&x.sigma, &y.sigma)),
        },
        _ => return Err(HeadError::WrongHead("mixed node outputs")),
    })
}
