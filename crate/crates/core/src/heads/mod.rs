//! Detection heads and their objectives.
//!
//! The hypersphere head scores an event by the squared distance of its
//! concatenated endpoint embeddings to a trainable center `c`. The Gaussian
//! head predicts a mean and a standard deviation per node and is trained by a
//! diagonal Gaussian negative log-likelihood on observed events plus a second
//! likelihood term on randomly re-wired negative events. It yields two scores:
//! `s_μ` (distance of the means to `c`, the attack score) and `s_σ` (mean
//! predicted standard deviation, the noise score).

mod checkpoint;
mod negatives;
mod scoring;
mod train;

pub use checkpoint::{write_loss_csv, Checkpoint, CheckpointError, FORMAT_VERSION, MAGIC};
pub use negatives::{negative_count, sample_negatives, NegativeBatch};
pub use scoring::{score_events, warm_state, ScorePair};
pub use train::{train, LossRecord, Model, TrainConfig};

use thiserror::Error;

use crate::ctdg::Label;
use crate::diffcore::{DiffError, Tape, Value, Var};
use crate::encoder::{EncoderError, SIGMA_FLOOR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeadError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("dimension mismatch: embeddings give {embedding}, center has {center}")]
    DimMismatch { embedding: usize, center: usize },
    #[error("standard deviation {value} below floor {floor} at component {index}")]
    SigmaBelowFloor { index: usize, value: f64, floor: f64 },
    #[error("empty input to {0}")]
    Empty(&'static str),
    #[error("training split contains a {label} event at index {index}; training expects normal traffic only")]
    ContaminatedTrain { index: usize, label: Label },
    #[error("cannot sample negatives from an empty node set")]
    EmptyNodeSet,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("head mismatch: {0}")]
    WrongHead(&'static str),
}

/// Trainable hypersphere center of dimension `N = 2p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Center(pub Value);

impl Center {
    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Minimum magnitude of every initial center component.
pub const CENTER_CLAMP: f64 = 0.01;

/// Mean of the concatenated event embeddings, with components of magnitude
/// below [`CENTER_CLAMP`] pushed out to `±CENTER_CLAMP` (`+` for exact zeros).
pub fn init_center(event_embeddings: &[Vec<f64>]) -> Result<Center, HeadError> {
    let first = event_embeddings.first().ok_or(HeadError::Empty("init_center"))?;
    let n = first.len();
    let mut mean = vec![0.0; n];
    for e in event_embeddings {
        if e.len() != n {
            return Err(HeadError::DimMismatch {
                embedding: e.len(),
                center: n,
            });
        }
        for (m, x) in mean.iter_mut().zip(e) {
            *m += x;
        }
    }
    let k = event_embeddings.len() as f64;
    for m in mean.iter_mut() {
        *m /= k;
        if m.abs() < CENTER_CLAMP {
            *m = if *m < 0.0 { -CENTER_CLAMP } else { CENTER_CLAMP };
        }
    }
    Ok(Center(Value::vector(mean)))
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

fn check_center(len: usize, c: &Center) -> Result<(), HeadError> {
    if len != c.dim() {
        return Err(HeadError::DimMismatch {
            embedding: len,
            center: c.dim(),
        });
    }
    Ok(())
}

fn check_floor(sigma: &[f64]) -> Result<(), HeadError> {
    for (index, &value) in sigma.iter().enumerate() {
        // tolerate the rounding of a value that sits exactly on the floor
        if !(value >= SIGMA_FLOOR * (1.0 - 1e-12)) {
            return Err(HeadError::SigmaBelowFloor {
                index,
                value,
                floor: SIGMA_FLOOR,
            });
        }
    }
    Ok(())
}

/// `‖(z_i ⊕ z_j) − c‖²`.
pub fn svdd_score(z_i: &[f64], z_j: &[f64], c: &Center) -> Result<f64, HeadError> {
    check_center(z_i.len() + z_j.len(), c)?;
    Ok(z_i
        .iter()
        .chain(z_j)
        .zip(c.data())
        .map(|(z, cm)| (z - cm) * (z - cm))
        .sum())
}

/// Attack score: [`svdd_score`] applied to the predicted means.
pub fn score_mu(mu_i: &[f64], mu_j: &[f64], c: &Center) -> Result<f64, HeadError> {
    svdd_score(mu_i, mu_j, c)
}

/// Noise score: mean of the concatenated standard deviations.
pub fn score_sigma(sigma_i: &[f64], sigma_j: &[f64]) -> f64 {
    let n = sigma_i.len() + sigma_j.len();
    sigma_i.iter().chain(sigma_j).sum::<f64>() / n as f64
}

/// Mean hypersphere score over a batch. Weight decay is applied by the
/// optimizer and is not part of this value.
pub fn svdd_objective(scores: &[f64]) -> Result<f64, HeadError> {
    if scores.is_empty() {
        return Err(HeadError::Empty("svdd_objective"));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Per-event Gaussian NLL, averaged over the `N` event dimensions:
/// `(1/N) Σ_m [log σ_m² + (z_m − c_m)² / σ_m²]` with `z = μ_i ⊕ μ_j`,
/// `σ = σ_i ⊕ σ_j`.
pub fn positive_nll(
    mu_i: &[f64],
    sigma_i: &[f64],
    mu_j: &[f64],
    sigma_j: &[f64],
    c: &Center,
) -> Result<f64, HeadError> {
    let z = concat(mu_i, mu_j);
    let s = concat(sigma_i, sigma_j);
    check_center(z.len(), c)?;
    check_center(s.len(), c)?;
    check_floor(&s)?;
    let n = z.len() as f64;
    Ok(z.iter()
        .zip(&s)
        .zip(c.data())
        .map(|((zm, sm), cm)| {
            let var = sm * sm;
            var.ln() + (zm - cm) * (zm - cm) / var
        })
        .sum::<f64>()
        / n)
}

/// Per-negative NLL against a sampled target `μ̂`:
/// `(1/N) Σ_m [log σ̂_m² + μ̂_m² / σ̂_m²]`.
pub fn negative_nll(sigma_v: &[f64], sigma_w: &[f64], mu_hat: &[f64]) -> Result<f64, HeadError> {
    let s = concat(sigma_v, sigma_w);
    if s.len() != mu_hat.len() {
        return Err(HeadError::DimMismatch {
            embedding: s.len(),
            center: mu_hat.len(),
        });
    }
    check_floor(&s)?;
    let n = s.len() as f64;
    Ok(s.iter()
        .zip(mu_hat)
        .map(|(sm, mh)| {
            let var = sm * sm;
            var.ln() + mh * mh / var
        })
        .sum::<f64>()
        / n)
}

/// Tape form of [`svdd_score`].
pub fn svdd_score_on_tape(tape: &mut Tape, z_i: Var, z_j: Var, c: Var) -> Result<Var, HeadError> {
    let z = tape.concat(z_i, z_j)?;
    Ok(tape.sq_dist(z, c)?)
}

/// Tape form of [`positive_nll`].
pub fn positive_nll_on_tape(
    tape: &mut Tape,
    mu_i: Var,
    sigma_i: Var,
    mu_j: Var,
    sigma_j: Var,
    c: Var,
) -> Result<Var, HeadError> {
    let z = tape.concat(mu_i, mu_j)?;
    let s = tape.concat(sigma_i, sigma_j)?;
    let diff = tape.sub(z, c)?;
    let sq = tape.square(diff);
    gaussian_terms(tape, s, sq)
}

/// Tape form of [`negative_nll`] with a constant target.
pub fn negative_nll_on_tape(tape: &mut Tape, sigma_v: Var, sigma_w: Var, mu_hat: &[f64]) -> Result<Var, HeadError> {
    let s = tape.concat(sigma_v, sigma_w)?;
    let sq = tape.constant(Value::vector(mu_hat.iter().map(|m| m * m).collect()));
    gaussian_terms(tape, s, sq)
}

fn gaussian_terms(tape: &mut Tape, sigma: Var, sq: Var) -> Result<Var, HeadError> {
    let var = tape.square(sigma);
    let log_var = tape.ln(var);
    let ratio = tape.div(sq, var)?;
    let terms = tape.add(log_var, ratio)?;
    Ok(tape.mean(terms))
}
