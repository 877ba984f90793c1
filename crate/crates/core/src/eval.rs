//! Ranking metrics, the two-fold noise/attack decision and report output.
//!
//! Attacks are the positive class; normal and noise events together form the
//! negative class. For the Gaussian head each threshold `τ_σ` of a grid first
//! flags events with `s_σ > τ_σ` as noise (final score 0) and ranks the rest
//! by `s_μ`; the ROC-AUC values are averaged over the grid.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ctdg::{Event, Label, NodeId};
use crate::data::Splits;
use crate::encoder::{HeadKind, StreamState};
use crate::heads::{score_events, warm_state, HeadError, Model, ScorePair};
use crate::noise::{noisy_test_split, NoiseConfig, NoiseError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ROC-AUC needs both classes, got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty threshold grid")]
    EmptyGrid,
    #[error("summary needs at least 2 trials for a standard deviation, got {0}")]
    TooFewTrials(usize),
    #[error("gaussian head produced no s_sigma")]
    MissingSigma,
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Mann-Whitney ROC-AUC with midranks for ties.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let positives = labels.iter().filter(|l| **l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::SingleClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let (np, nn) = (positives as f64, negatives as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Curve {
    pub best_threshold: f64,
    pub best_f1: f64,
    /// `(threshold, f1)` per grid point.
    pub curve: Vec<(f64, f64)>,
}

/// F1 of the rule "positive when score > τ" at each threshold. The first
/// threshold attaining the maximum is reported as best.
pub fn f1_grid(scores: &[f64], labels: &[bool], thresholds: &[f64]) -> Result<F1Curve, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    if thresholds.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let mut curve = Vec::with_capacity(thresholds.len());
    let (mut best_threshold, mut best_f1) = (thresholds[0], f64::NEG_INFINITY);
    for &tau in thresholds {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (&s, &l) in scores.iter().zip(labels) {
            match (s > tau, l) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if tp + fn_ > 0 {
            tp as f64 / (tp + fn_) as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if f1 > best_f1 {
            best_f1 = f1;
            best_threshold = tau;
        }
        curve.push((tau, f1));
    }
    Ok(F1Curve {
        best_threshold,
        best_f1,
        curve,
    })
}

/// Events with `s_σ > τ_σ` get final score 0; the rest keep `s_μ`.
pub fn twofold_scores(s_mu: &[f64], s_sigma: &[f64], tau_sigma: f64) -> Result<Vec<f64>, EvalError> {
    if s_mu.len() != s_sigma.len() {
        return Err(EvalError::LengthMismatch(s_mu.len(), s_sigma.len()));
    }
    Ok(s_mu
        .iter()
        .zip(s_sigma)
        .map(|(&m, &s)| if s > tau_sigma { 0.0 } else { m })
        .collect())
}

/// `n` evenly spaced points on `[lo, hi]` (just `lo` when `n == 1`).
pub fn tau_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let (i, frac) = (pos.floor() as usize, pos.fract());
    match sorted.get(i + 1) {
        Some(next) if frac > 0.0 => sorted[i] + frac * (next - sorted[i]),
        _ => sorted[i],
    }
}

/// Layout of the `τ_σ` grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauGrid {
    /// `steps` evenly spaced thresholds on `[lo, hi]`.
    Absolute { lo: f64, hi: f64, steps: usize },
    /// Thresholds at `steps` evenly spaced quantile levels on `[lo, hi]` of
    /// the model's `s_σ` over the validation split, scored after replaying
    /// the training split.
    ValidationQuantile { lo: f64, hi: f64, steps: usize },
}

impl Default for TauGrid {
    fn default() -> Self {
        TauGrid::Absolute {
            lo: 5.0,
            hi: 25.0,
            steps: 21,
        }
    }
}

impl TauGrid {
    /// The thresholds when they do not depend on a model.
    pub fn resolve_absolute(&self) -> Option<Vec<f64>> {
        match *self {
            TauGrid::Absolute { lo, hi, steps } => Some(tau_grid(lo, hi, steps)),
            TauGrid::ValidationQuantile { .. } => None,
        }
    }

    pub fn resolve(&self, model: &Model, splits: &Splits, update_memory: bool) -> Result<Vec<f64>, EvalError> {
        match *self {
            TauGrid::Absolute { lo, hi, steps } => Ok(tau_grid(lo, hi, steps)),
            TauGrid::ValidationQuantile { lo, hi, steps } => {
                if splits.val.is_empty() {
                    return Err(EvalError::EmptyGrid);
                }
                let mut state = warm_state(model, &splits.train)?;
                let pairs = score_events(model, &mut state, &splits.val, update_memory)?;
                let mut sigma: Vec<f64> = pairs
                    .iter()
                    .map(|p| p.s_sigma.ok_or(EvalError::MissingSigma))
                    .collect::<Result<_, _>>()?;
                sigma.sort_by(f64::total_cmp);
                Ok(tau_grid(lo, hi, steps)
                    .into_iter()
                    .map(|q| quantile(&sigma, q))
                    .collect())
            }
        }
    }
}

pub fn model_name(head: HeadKind) -> &'static str {
    match head {
        HeadKind::Svdd => "TGN-SVDD",
        HeadKind::Gaussian => "RTGN-SVDD",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub noise_ratio: f64,
    pub seed: u64,
    /// ROC-AUC per `τ_σ`; a single entry for the hypersphere head.
    pub aucs: Vec<f64>,
    pub mean_auc: f64,
}

/// Attack is positive; normal and noise are negative.
pub fn attack_labels(events: &[Event]) -> Vec<bool> {
    events.iter().map(|e| e.label == Label::Attack).collect()
}

/// Per-τ ROC-AUC over precomputed scores. Without `s_σ` the grid collapses
/// to one entry computed on the raw score.
pub fn auc_over_grid(pairs: &[ScorePair], labels: &[bool], taus: &[f64]) -> Result<Vec<f64>, EvalError> {
    let s_mu: Vec<f64> = pairs.iter().map(|p| p.s_mu).collect();
    if pairs.iter().all(|p| p.s_sigma.is_none()) {
        return Ok(vec![roc_auc(&s_mu, labels)?]);
    }
    if taus.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let s_sigma: Vec<f64> = pairs
        .iter()
        .map(|p| p.s_sigma.ok_or(EvalError::MissingSigma))
        .collect::<Result<_, _>>()?;
    taus.iter()
        .map(|&tau| roc_auc(&twofold_scores(&s_mu, &s_sigma, tau)?, labels))
        .collect()
}

/// Scores a noisy test split from a private copy of `warm` (the state after
/// replaying the history) and averages ROC-AUC over the τ grid.
pub fn evaluate_trial(
    model: &Model,
    warm: &StreamState,
    test: &[Event],
    taus: &[f64],
    update_memory: bool,
    noise_ratio: f64,
    seed: u64,
) -> Result<TrialResult, EvalError> {
    let labels = attack_labels(test);
    let mut state = warm.clone();
    let pairs = score_events(model, &mut state, test, update_memory)?;
    let grid = match model.head() {
        HeadKind::Svdd => &taus[..0],
        HeadKind::Gaussian => taus,
    };
    let aucs = auc_over_grid(&pairs, &labels, grid)?;
    let mean_auc = aucs.iter().sum::<f64>() / aucs.len() as f64;
    Ok(TrialResult {
        noise_ratio,
        seed,
        aucs,
        mean_auc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub noise_ratio: f64,
    pub model: String,
    pub mean_auc: f64,
    pub std_auc: f64,
}

/// Mean and sample standard deviation (n − 1) of per-trial mean AUCs.
pub fn summarize(model: &str, trials: &[TrialResult]) -> Result<SummaryRow, EvalError> {
    if trials.len() < 2 {
        return Err(EvalError::TooFewTrials(trials.len()));
    }
    let n = trials.len() as f64;
    let mean = trials.iter().map(|t| t.mean_auc).sum::<f64>() / n;
    let var = trials.iter().map(|t| (t.mean_auc - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(SummaryRow {
        noise_ratio: trials[0].noise_ratio,
        model: model.to_owned(),
        mean_auc: mean,
        std_auc: var.sqrt(),
    })
}

fn percent(ratio: f64) -> String {
    let p = ratio * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}", p.round())
    } else {
        format!("{p}")
    }
}

/// Text table (one line per noise ratio, one column per model, AUC × 100 as
/// `mean ± std`) and the machine-readable CSV.
pub fn render_report(rows: &[SummaryRow]) -> (String, String) {
    let mut models: Vec<&str> = Vec::new();
    let mut ratios: Vec<f64> = Vec::new();
    for r in rows {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
        if !ratios.contains(&r.noise_ratio) {
            ratios.push(r.noise_ratio);
        }
    }
    let mut table = String::from("noise");
    for m in &models {
        let _ = write!(table, " & {m}");
    }
    table.push('\n');
    for &ratio in &ratios {
        table.push_str(&percent(ratio));
        for m in &models {
            match rows.iter().find(|r| r.noise_ratio == ratio && r.model == *m) {
                Some(r) => {
                    let _ = write!(table, " & {:.1} ± {:.1}", r.mean_auc * 100.0, r.std_auc * 100.0);
                }
                None => table.push_str(" & -"),
            }
        }
        table.push('\n');
    }

    let mut csv = String::from("noise_ratio,model,mean_auc,std_auc\n");
    for r in rows {
        let _ = writeln!(csv, "{},{},{},{}", r.noise_ratio, r.model, r.mean_auc, r.std_auc);
    }
    (table, csv)
}

pub fn parse_report_csv(text: &str) -> Result<Vec<SummaryRow>, EvalError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    Ok(rdr.deserialize().collect::<Result<Vec<SummaryRow>, _>>()?)
}

/// One row per event: `t,s_mu,s_sigma,label`. `s_sigma` is empty for the
/// hypersphere head.
pub fn write_traces<W: Write>(out: W, events: &[Event], pairs: &[ScorePair]) -> Result<(), EvalError> {
    if events.len() != pairs.len() {
        return Err(EvalError::LengthMismatch(events.len(), pairs.len()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "s_mu", "s_sigma", "label"])?;
    for (e, p) in events.iter().zip(pairs) {
        let sigma = p.s_sigma.map(|s| s.to_string()).unwrap_or_default();
        w.write_record([e.t.to_string(), p.s_mu.to_string(), sigma, e.label.as_str().to_owned()])?;
    }
    w.flush()?;
    Ok(())
}

/// Scores `events` in order from a fresh state and writes the trace CSV.
pub fn export_traces<W: Write>(model: &Model, events: &[Event], out: W) -> Result<Vec<ScorePair>, EvalError> {
    let t0 = events.first().map_or(0.0, |e| e.t);
    let mut state = StreamState::new(model.params.dims.memory, t0);
    let pairs = score_events(model, &mut state, events, true)?;
    write_traces(out, events, &pairs)?;
    Ok(pairs)
}

/// Noise levels, resampling and threshold grid of a robustness study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub ratios: Vec<f64>,
    pub resamples: usize,
    pub taus: Vec<f64>,
    pub noise_variance: f64,
    pub update_memory: bool,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            ratios: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            resamples: 5,
            taus: tau_grid(5.0, 25.0, 21),
            noise_variance: 5.0,
            update_memory: true,
            seed: 0,
        }
    }
}

/// Seed of the noise draw for one (ratio, resample) cell. Independent of the
/// model, so every model sees the same noisy test splits.
pub fn trial_seed(base: u64, ratio_index: usize, resample: usize) -> u64 {
    let mut h = base ^ 0x9e37_79b9_7f4a_7c15;
    for v in [ratio_index as u64, resample as u64] {
        h = (h ^ v).wrapping_mul(0x0100_0000_01b3).rotate_left(29) ^ 0xbf58_476d_1ce4_e5b9;
    }
    h
}

/// The noisy test split for one (ratio, resample) cell. Noise endpoints are
/// drawn from every node of the dataset, timestamps from `[t_test, T]`.
pub fn noisy_split(
    splits: &Splits,
    node_set: &BTreeSet<NodeId>,
    feature_dim: usize,
    ratio: f64,
    variance: f64,
    seed: u64,
) -> Result<Vec<Event>, EvalError> {
    let config = NoiseConfig {
        ratio,
        variance,
        window: (splits.t_test, splits.t_end),
        seed,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(noisy_test_split(
        &splits.test,
        node_set,
        feature_dim,
        &config,
        &mut rng,
    )?)
}

/// Runs every (ratio, resample) trial for each model and summarizes them,
/// one row per (ratio, model) in ratio-major order. Trials run in parallel;
/// results do not depend on the thread count.
pub fn noise_study(models: &[&Model], splits: &Splits, study: &StudyConfig) -> Result<Vec<SummaryRow>, EvalError> {
    if study.resamples < 2 {
        return Err(EvalError::TooFewTrials(study.resamples));
    }
    let node_set: BTreeSet<NodeId> = splits.all().flat_map(|e| [e.src, e.dst]).collect();
    let feature_dim = splits.train.first().map_or(0, |e| e.features.len());
    let history = splits.history();
    let warm: Vec<StreamState> = models
        .par_iter()
        .map(|m| warm_state(m, &history))
        .collect::<Result<_, _>>()?;
    let cells: Vec<(usize, usize)> = (0..study.ratios.len())
        .flat_map(|i| (0..study.resamples).map(move |r| (i, r)))
        .collect();
    let trials: Vec<Vec<TrialResult>> = cells
        .par_iter()
        .map(|&(i, r)| {
            let seed = trial_seed(study.seed, i, r);
            let ratio = study.ratios[i];
            let test = noisy_split(splits, &node_set, feature_dim, ratio, study.noise_variance, seed)?;
            models
                .iter()
                .zip(&warm)
                .map(|(m, w)| evaluate_trial(m, w, &test, &study.taus, study.update_memory, ratio, seed))
                .collect()
        })
        .collect::<Result<_, EvalError>>()?;
    let mut rows = Vec::new();
    for (i, _) in study.ratios.iter().enumerate() {
        for (k, m) in models.iter().enumerate() {
            let cell: Vec<TrialResult> = trials[i * study.resamples..(i + 1) * study.resamples]
                .iter()
                .map(|t| t[k].clone())
                .collect();
            rows.push(summarize(model_name(m.head()), &cell)?);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(1..20);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        labels[0] = true;
        labels[1] = false;
        let scores = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.5).collect();
        (scores, labels)
    }

    #[test]
    fn auc_anchors() {
        assert_eq!(
            roc_auc(&[1.0, 2.0, 3.0, 4.0], &[false, false, true, true]).unwrap(),
            1.0
        );
        assert_eq!(
            roc_auc(&[7.0; 6], &[true, false, true, false, false, true]).unwrap(),
            0.5
        );
        assert!(matches!(
            roc_auc(&[1.0, 2.0], &[true, true]),
            Err(EvalError::SingleClass {
                positives: 2,
                negatives: 0
            })
        ));
    }

    #[test]
    fn quantile_interpolates_linearly() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert!((quantile(&v, 1.0 / 3.0) - 2.0).abs() < 1e-12);
        assert_eq!(quantile(&[7.0], 0.3), 7.0);
        assert_eq!(TauGrid::default().resolve_absolute(), Some(tau_grid(5.0, 25.0, 21)));
    }

    proptest! {
        #[test]
        fn quantile_is_monotone_and_bounded(
            mut v in proptest::collection::vec(-1e3f64..1e3, 1..40),
            a in 0.0f64..=1.0,
            b in 0.0f64..=1.0,
        ) {
            v.sort_by(f64::total_cmp);
            let (lo, hi) = (a.min(b), a.max(b));
            let (x, y) = (quantile(&v, lo), quantile(&v, hi));
            prop_assert!(x <= y);
            prop_assert!(v[0] <= x && y <= v[v.len() - 1]);
        }
    }

    #[test]
    fn auc_matches_pair_counting_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let (s, l) = random_instance(&mut rng);
            let got = roc_auc(&s, &l).unwrap();
            assert!((got - pair_oracle(&s, &l)).abs() < 1e-12);
        }
    }

    #[test]
    fn f1_anchors() {
        let s = [0.1, 0.2, 0.8, 0.9];
        let l = [false, false, true, true];
        let c = f1_grid(&s, &l, &[0.0, 0.5, 0.95]).unwrap();
        assert_eq!(c.best_f1, 1.0);
        assert_eq!(c.best_threshold, 0.5);
        assert_eq!(c.curve[2], (0.95, 0.0));
    }

    #[test]
    fn f1_matches_confusion_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (s, l) = random_instance(&mut rng);
            let taus = tau_grid(-0.5, 10.0, 15);
            let c = f1_grid(&s, &l, &taus).unwrap();
            for (tau, f1) in c.curve {
                let pred: Vec<bool> = s.iter().map(|x| *x > tau).collect();
                let tp = pred.iter().zip(&l).filter(|(p, y)| **p && **y).count() as f64;
                let predicted = pred.iter().filter(|p| **p).count() as f64;
                let actual = l.iter().filter(|y| **y).count() as f64;
                // F1 = 2TP / (predicted + actual)
                let want = if tp == 0.0 {
                    0.0
                } else {
                    2.0 * tp / (predicted + actual)
                };
                assert!((f1 - want).abs() < 1e-15, "{f1} vs {want}");
            }
        }
    }

    #[test]
    fn twofold_rules() {
        let mu = [1.0, 2.0, 3.0];
        let sg = [0.5, 1.5, 2.5];
        assert_eq!(twofold_scores(&mu, &sg, f64::INFINITY).unwrap(), mu.to_vec());
        assert_eq!(twofold_scores(&mu, &sg, -1.0).unwrap(), vec![0.0; 3]);
        assert_eq!(twofold_scores(&mu, &sg, 1.5).unwrap(), vec![1.0, 2.0, 0.0]);
        assert!(twofold_scores(&mu, &sg[..2], 1.0).is_err());
    }

    #[test]
    fn grid_helpers() {
        assert_eq!(tau_grid(5.0, 25.0, 21), (5..=25).map(f64::from).collect::<Vec<_>>());
        assert_eq!(tau_grid(3.0, 9.0, 1), vec![3.0]);
    }

    #[test]
    fn hand_traced_grid_auc() {
        // events: attack, normal, noise, attack
        let pairs = [(4.0, 1.0), (1.0, 1.0), (5.0, 3.0), (0.5, 1.0)].map(|(m, s)| ScorePair {
            s_mu: m,
            s_sigma: Some(s),
        });
        let labels = [true, false, false, true];
        // τ=2 zeroes the noise event: scores [4,1,0,0.5] -> pairs (4>1,4>0,0.5<1,0.5>0) = 3/4
        // τ=10 keeps it: scores [4,1,5,0.5] -> (4>1,4<5,0.5<1,0.5<5) = 1/4
        let aucs = auc_over_grid(&pairs, &labels, &[2.0, 10.0]).unwrap();
        assert_eq!(aucs, vec![0.75, 0.25]);
        let same = auc_over_grid(&pairs, &labels, &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(same, vec![0.75; 3]);

        let baseline = pairs.map(|p| ScorePair { s_sigma: None, ..p });
        assert_eq!(auc_over_grid(&baseline, &labels, &[]).unwrap(), vec![0.25]);
    }

    fn trial(mean_auc: f64) -> TrialResult {
        TrialResult {
            noise_ratio: 0.1,
            seed: 0,
            aucs: vec![mean_auc],
            mean_auc,
        }
    }

    #[test]
    fn summarize_anchors() {
        let row = summarize("m", &[trial(0.8), trial(0.9)]).unwrap();
        assert!((row.mean_auc - 0.85).abs() < 1e-15);
        assert!((row.std_auc - 0.005f64.sqrt()).abs() < 1e-12);
        assert_eq!(summarize("m", &vec![trial(0.7); 4]).unwrap().std_auc, 0.0);
        assert!(matches!(summarize("m", &[trial(0.7)]), Err(EvalError::TooFewTrials(1))));
    }

    #[test]
    fn report_layout_and_round_trip() {
        let (table, csv) = render_report(&[]);
        assert_eq!(table, "noise\n");
        assert_eq!(csv, "noise_ratio,model,mean_auc,std_auc\n");

        let rows = vec![
            SummaryRow {
                noise_ratio: 0.1,
                model: "TGN-SVDD".into(),
                mean_auc: 0.830,
                std_auc: 0.005,
            },
            SummaryRow {
                noise_ratio: 0.1,
                model: "RTGN-SVDD".into(),
                mean_auc: 0.927,
                std_auc: 0.001,
            },
        ];
        let (table, csv) = render_report(&rows);
        assert_eq!(table.lines().nth(1).unwrap(), "10 & 83.0 ± 0.5 & 92.7 ± 0.1");
        assert_eq!(parse_report_csv(&csv).unwrap(), rows);
    }

    #[test]
    fn trace_csv_layout() {
        let events: Vec<Event> = (0..3)
            .map(|i| Event {
                src: 0,
                dst: 1,
                t: i as f64,
                features: vec![],
                label: Label::Normal,
            })
            .collect();
        let pairs = [
            ScorePair {
                s_mu: 1.5,
                s_sigma: Some(0.25),
            },
            ScorePair {
                s_mu: 0.0,
                s_sigma: Some(1.0),
            },
            ScorePair {
                s_mu: 2.0,
                s_sigma: None,
            },
        ];
        let mut out = Vec::new();
        write_traces(&mut out, &events, &pairs).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "t,s_mu,s_sigma,label\n0,1.5,0.25,normal\n1,0,1,normal\n2,2,,normal\n"
        );
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_maps(seed in 0u64..1000) {
            let (s, l) = random_instance(&mut ChaCha8Rng::seed_from_u64(seed));
            let a = roc_auc(&s, &l).unwrap();
            let mapped: Vec<f64> = s.iter().map(|x| (x * 0.7).exp() + 3.0).collect();
            prop_assert!((a - roc_auc(&mapped, &l).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn auc_complement_without_ties(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..100);
            let s: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let mut l: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            l[0] = true;
            l[1] = false;
            let neg: Vec<f64> = s.iter().map(|x| -x).collect();
            prop_assert!((roc_auc(&s, &l).unwrap() + roc_auc(&neg, &l).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn high_tau_reduces_to_single_score(seed in 0u64..500) {
            let (s, l) = random_instance(&mut ChaCha8Rng::seed_from_u64(seed));
            let sigma: Vec<f64> = s.iter().map(|x| x + 0.3).collect();
            let tau = sigma.iter().cloned().fold(f64::MIN, f64::max) + 1e-9;
            let twofold = twofold_scores(&s, &sigma, tau).unwrap();
            prop_assert_eq!(roc_auc(&twofold, &l).unwrap(), roc_auc(&s, &l).unwrap());
        }

        #[test]
        fn summary_mean_is_permutation_invariant(vals in proptest::collection::vec(0.0f64..1.0, 2..8), rot in 0usize..8) {
            let trials: Vec<TrialResult> = vals.iter().map(|v| trial(*v)).collect();
            let mut rotated = trials.clone();
            rotated.rotate_left(rot % trials.len());
            let a = summarize("m", &trials).unwrap();
            let b = summarize("m", &rotated).unwrap();
            prop_assert!((a.mean_auc - b.mean_auc).abs() < 1e-12);
            prop_assert!(a.std_auc >= 0.0);
        }
    }
}
