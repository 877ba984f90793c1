//! Flow-record ingestion, chronological splitting, feature standardization
//! and a seeded synthetic benchmark generator.
//!
//! CSV schema: header `src,dst,timestamp,label,f_1,...,f_k`. Endpoints are
//! arbitrary strings (IP addresses, host names) mapped to dense node ids in
//! order of first appearance in the time-sorted stream. Labels are
//! case-insensitive: `benign`/`normal` are normal traffic, `noise` marks an
//! injected event, anything else is an attack.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctdg::{Event, Label, NodeId};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("unexpected column `{0}` in header (expected src,dst,timestamp,label,f_1..f_k)")]
    UnexpectedColumn(String),
    #[error("row {row}: unparseable timestamp `{value}`")]
    BadTimestamp { row: u64, value: String },
    #[error("row {row}: non-numeric feature `{column}` = `{value}`")]
    BadFeature { row: u64, column: String, value: String },
    #[error("row {row}: expected {expected} fields, found {got}")]
    RowLength { row: u64, expected: usize, got: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid split: {0}")]
    Split(String),
    #[error(
        "attack event at index {index} (t = {t}) precedes the test boundary t_test = {t_test}; \
         move the boundary earlier (larger test fraction) so attacks are reserved for testing"
    )]
    AttackBeforeTest { index: usize, t: f64, t_test: f64 },
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    FeatureDim { expected: usize, got: usize },
    #[error("invalid synthetic config: {0}")]
    Synth(String),
}

/// Bidirectional map between external endpoint keys and dense node ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeIdMap {
    keys: Vec<String>,
    index: HashMap<String, NodeId>,
}

impl NodeIdMap {
    pub fn intern(&mut self, key: &str) -> NodeId {
        if let Some(&id) = self.index.get(key) {
            return id;
        }
        let id = self.keys.len();
        self.keys.push(key.to_owned());
        self.index.insert(key.to_owned(), id);
        id
    }

    pub fn get(&self, key: &str) -> Option<NodeId> {
        self.index.get(key).copied()
    }

    pub fn key(&self, id: NodeId) -> &str {
        &self.keys[id]
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LabelCounts {
    pub normal: usize,
    pub attack: usize,
    pub noise: usize,
}

impl LabelCounts {
    pub fn of(events: &[Event]) -> Self {
        let mut c = Self::default();
        for e in events {
            match e.label {
                Label::Normal => c.normal += 1,
                Label::Attack => c.attack += 1,
                Label::Noise => c.noise += 1,
            }
        }
        c
    }
}

/// A time-sorted event stream with its node-key map.
#[derive(Debug, Clone, PartialEq)]
pub struct EventDataset {
    pub events: Vec<Event>,
    pub nodes: NodeIdMap,
    pub feature_dim: usize,
}

/// One row of the external schema, before id assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyedEvent {
    pub src: String,
    pub dst: String,
    pub t: f64,
    pub features: Vec<f64>,
    pub label: Label,
}

impl EventDataset {
    /// Stable-sorts `rows` by timestamp and assigns dense ids in order of
    /// first appearance (source before destination).
    pub fn from_keyed(mut rows: Vec<KeyedEvent>, feature_dim: usize) -> Result<Self, DataError> {
        if let Some(r) = rows.iter().find(|r| r.features.len() != feature_dim) {
            return Err(DataError::FeatureDim {
                expected: feature_dim,
                got: r.features.len(),
            });
        }
        rows.sort_by(|a, b| a.t.total_cmp(&b.t));
        let mut nodes = NodeIdMap::default();
        let events = rows
            .into_iter()
            .map(|r| {
                let src = nodes.intern(&r.src);
                let dst = nodes.intern(&r.dst);
                Event {
                    src,
                    dst,
                    t: r.t,
                    features: r.features,
                    label: r.label,
                }
            })
            .collect();
        Ok(Self {
            events,
            nodes,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn label_counts(&self) -> LabelCounts {
        LabelCounts::of(&self.events)
    }

    pub fn keyed(&self, e: &Event) -> KeyedEvent {
        KeyedEvent {
            src: self.nodes.key(e.src).to_owned(),
            dst: self.nodes.key(e.dst).to_owned(),
            t: e.t,
            features: e.features.clone(),
            label: e.label,
        }
    }
}

fn parse_header(headers: &csv::StringRecord) -> Result<([usize; 4], Vec<usize>), DataError> {
    let names = ["src", "dst", "timestamp", "label"];
    let mut fixed = [usize::MAX; 4];
    let mut features: Vec<(usize, usize)> = Vec::new();
    for (col, name) in headers.iter().enumerate() {
        let name = name.trim();
        if let Some(slot) = names.iter().position(|n| n.eq_ignore_ascii_case(name)) {
            fixed[slot] = col;
        } else if let Some(k) = name.strip_prefix("f_").and_then(|k| k.parse::<usize>().ok()) {
            features.push((k, col));
        } else {
            return Err(DataError::UnexpectedColumn(name.to_owned()));
        }
    }
    for (slot, name) in names.iter().enumerate() {
        if fixed[slot] == usize::MAX {
            return Err(DataError::MissingColumn((*name).to_owned()));
        }
    }
    features.sort_unstable();
    for (i, (k, _)) in features.iter().enumerate() {
        if *k != i + 1 {
            return Err(DataError::MissingColumn(format!("f_{}", i + 1)));
        }
    }
    Ok((fixed, features.into_iter().map(|(_, c)| c).collect()))
}

/// Reads the flow CSV schema from any reader.
pub fn read_csv<R: Read>(reader: R) -> Result<EventDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let (fixed, feature_cols) = parse_header(rdr.headers()?)?;
    let width = 4 + feature_cols.len();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(DataError::RowLength {
                row,
                expected: width,
                got: record.len(),
            });
        }
        let ts = &record[fixed[2]];
        let t: f64 = ts
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite())
            .ok_or_else(|| DataError::BadTimestamp {
                row,
                value: ts.to_owned(),
            })?;
        let features = feature_cols
            .iter()
            .enumerate()
            .map(|(k, &col)| {
                let v = &record[col];
                v.parse::<f64>().map_err(|_| DataError::BadFeature {
                    row,
                    column: format!("f_{}", k + 1),
                    value: v.to_owned(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(KeyedEvent {
            src: record[fixed[0]].to_owned(),
            dst: record[fixed[1]].to_owned(),
            t,
            features,
            label: Label::parse(&record[fixed[3]]),
        });
    }
    EventDataset::from_keyed(rows, feature_cols.len())
}

pub fn ingest_csv(path: impl AsRef<Path>) -> Result<EventDataset, DataError> {
    read_csv(std::fs::File::open(path)?)
}

/// Writes events in the flow schema. Floats use the shortest representation
/// that parses back to the same bits.
pub fn write_csv<W: Write>(writer: W, dataset: &EventDataset, events: &[Event]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["src".to_owned(), "dst".into(), "timestamp".into(), "label".into()];
    header.extend((1..=dataset.feature_dim).map(|k| format!("f_{k}")));
    w.write_record(&header)?;
    for e in events {
        let mut rec = vec![
            dataset.nodes.key(e.src).to_owned(),
            dataset.nodes.key(e.dst).to_owned(),
            e.t.to_string(),
            e.label.as_str().to_owned(),
        ];
        rec.extend(e.features.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(path: impl AsRef<Path>, dataset: &EventDataset) -> Result<(), DataError> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(file, dataset, &dataset.events)
}

/// Chronological train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let fr = [self.train, self.val, self.test];
        if fr.iter().any(|f| !(*f > 0.0)) {
            return Err(DataError::Split("fractions must be positive".into()));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DataError::Split("fractions must sum to 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<Event>,
    pub val: Vec<Event>,
    pub test: Vec<Event>,
    /// First test timestamp.
    pub t_test: f64,
    /// Largest timestamp in the dataset.
    pub t_end: f64,
}

impl Splits {
    /// Train, validation and test in stream order.
    pub fn all(&self) -> impl Iterator<Item = &Event> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    /// Train followed by validation: the history replayed before scoring test.
    pub fn history(&self) -> Vec<Event> {
        self.train.iter().chain(&self.val).cloned().collect()
    }
}

fn extend_past_ties(events: &[Event], mut b: usize) -> usize {
    while b > 0 && b < events.len() && events[b].t == events[b - 1].t {
        b += 1;
    }
    b
}

/// Contiguous time-ordered split. A boundary never separates equal
/// timestamps: tied events all go to the earlier split.
pub fn chronological_split(dataset: &EventDataset, spec: &SplitSpec) -> Result<Splits, DataError> {
    spec.validate()?;
    let ev = &dataset.events;
    if ev.is_empty() {
        return Err(DataError::Empty);
    }
    let n = ev.len() as f64;
    let b1 = extend_past_ties(ev, (spec.train * n).round() as usize);
    let b2 = extend_past_ties(ev, ((spec.train + spec.val) * n).round() as usize).max(b1);
    if b1 == 0 || b2 >= ev.len() {
        return Err(DataError::Split(format!(
            "{} events too few for fractions {:?} after tie extension",
            ev.len(),
            spec
        )));
    }
    let t_test = ev[b2].t;
    if let Some(index) = ev[..b2].iter().position(|e| e.label == Label::Attack) {
        return Err(DataError::AttackBeforeTest {
            index,
            t: ev[index].t,
            t_test,
        });
    }
    Ok(Splits {
        train: ev[..b1].to_vec(),
        val: ev[b1..b2].to_vec(),
        test: ev[b2..].to_vec(),
        t_test,
        t_end: ev[ev.len() - 1].t,
    })
}

pub const STD_FLOOR: f64 = 1e-8;

/// Per-dimension affine standardization fit on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Population mean and standard deviation, std floored at [`STD_FLOOR`].
    pub fn fit(train: &[Event]) -> Result<Self, DataError> {
        let first = train.first().ok_or(DataError::Empty)?;
        let f = first.features.len();
        let n = train.len() as f64;
        let mut mean = vec![0.0; f];
        for e in train {
            if e.features.len() != f {
                return Err(DataError::FeatureDim {
                    expected: f,
                    got: e.features.len(),
                });
            }
            for (m, x) in mean.iter_mut().zip(&e.features) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; f];
        for e in train {
            for ((v, x), m) in var.iter_mut().zip(&e.features).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Maps features to `(x - mean) / std` in place. Not idempotent.
    pub fn apply(&self, events: &mut [Event]) -> Result<(), DataError> {
        for e in events {
            if e.features.len() != self.dim() {
                return Err(DataError::FeatureDim {
                    expected: self.dim(),
                    got: e.features.len(),
                });
            }
            for ((x, m), s) in e.features.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
        Ok(())
    }
}

/// Fits a scaler on `splits.train` and applies it to all three splits.
pub fn standardize(splits: &mut Splits) -> Result<Scaler, DataError> {
    let scaler = Scaler::fit(&splits.train)?;
    scaler.apply(&mut splits.train)?;
    scaler.apply(&mut splits.val)?;
    scaler.apply(&mut splits.test)?;
    Ok(scaler)
}

/// Parameters of the synthetic community-structured flow stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub nodes: usize,
    pub communities: usize,
    /// Number of normal events over the whole duration.
    pub normal_events: usize,
    pub attack_events: usize,
    pub feature_dim: usize,
    pub duration: f64,
    /// Probability that a normal event stays inside the source's community.
    pub intra_prob: f64,
    /// Zipf exponent of node activity within a community.
    pub activity_skew: f64,
    /// Standard deviation of community feature means.
    pub community_spread: f64,
    /// Mean shift added to the attacked feature dimensions.
    pub attack_shift: f64,
    /// Fraction of feature dimensions carrying the attack shift.
    pub attack_dim_fraction: f64,
    pub victims: usize,
    pub attackers: usize,
    /// Attacks occupy the last `attack_window` fraction of the duration.
    pub attack_window: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            nodes: 100,
            communities: 5,
            normal_events: 20_000,
            attack_events: 300,
            feature_dim: 8,
            duration: 20_000.0,
            intra_prob: 0.9,
            activity_skew: 1.5,
            community_spread: 1.5,
            attack_shift: 3.0,
            attack_dim_fraction: 0.25,
            victims: 3,
            attackers: 2,
            attack_window: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let err = |m: &str| Err(DataError::Synth(m.into()));
        if self.communities == 0 || self.nodes < 2 * self.communities {
            return err("need at least two nodes per community");
        }
        if self.feature_dim == 0 {
            return err("feature_dim must be positive");
        }
        if !(self.duration > 0.0) {
            return err("duration must be positive");
        }
        if !(0.0..=1.0).contains(&self.intra_prob) {
            return err("intra_prob must lie in [0, 1]");
        }
        if !(self.attack_window > 0.0 && self.attack_window <= 1.0) {
            return err("attack_window must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.attack_dim_fraction) {
            return err("attack_dim_fraction must lie in [0, 1]");
        }
        if self.attack_events > 0 && (self.victims == 0 || self.attackers == 0) {
            return err("attacks need at least one victim and one attacker");
        }
        if self.victims + self.attackers > self.nodes {
            return err("victims and attackers exceed node count");
        }
        Ok(())
    }

    /// Attack mean shift vector: `attack_shift` on the leading
    /// `ceil(attack_dim_fraction * f)` dimensions.
    pub fn attack_signature(&self) -> Vec<f64> {
        let k = (self.attack_dim_fraction * self.feature_dim as f64).ceil() as usize;
        (0..self.feature_dim)
            .map(|d| if d < k { self.attack_shift } else { 0.0 })
            .collect()
    }
}

/// Generates a labelled stream. Node `i` belongs to community
/// `i % communities`; activity within a community follows a Zipf law. Normal
/// features are `N(m_c, I)` for the source community `c`. Attacks run from the
/// busiest nodes of one community to the busiest nodes of another during the
/// final `attack_window` of the duration, carrying the attack signature.
pub fn synth_generate<R: Rng + ?Sized>(config: &SynthConfig, rng: &mut R) -> Result<EventDataset, DataError> {
    config.validate()?;
    let c = config.communities;
    let f = config.feature_dim;
    let community_of = |node: usize| node % c;
    // rank of a node inside its community: 0 is the busiest
    let rank = |node: usize| node / c;
    let activity: Vec<f64> = (0..config.nodes)
        .map(|i| 1.0 / ((rank(i) + 1) as f64).powf(config.activity_skew))
        .collect();
    let members: Vec<Vec<usize>> = (0..c)
        .map(|k| (0..config.nodes).filter(|&i| community_of(i) == k).collect())
        .collect();
    let within: Vec<WeightedIndex<f64>> = members
        .iter()
        .map(|m| WeightedIndex::new(m.iter().map(|&i| activity[i])).expect("nonempty community"))
        .collect();
    let global = WeightedIndex::new(&activity).expect("positive weights");
    let means: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            (0..f)
                .map(|_| config.community_spread * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let gaussian = |rng: &mut R, mean: &[f64]| -> Vec<f64> {
        mean.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let key = |node: usize| format!("n{node}");

    let mut rows = Vec::with_capacity(config.normal_events + config.attack_events);
    for _ in 0..config.normal_events {
        let src = global.sample(rng);
        let home = community_of(src);
        let dst = loop {
            let dst = if rng.random::<f64>() < config.intra_prob || c == 1 {
                members[home][within[home].sample(rng)]
            } else {
                let other = (home + rng.random_range(1..c)) % c;
                members[other][within[other].sample(rng)]
            };
            if dst != src {
                break dst;
            }
        };
        rows.push(KeyedEvent {
            src: key(src),
            dst: key(dst),
            t: rng.random_range(0.0..config.duration),
            features: gaussian(rng, &means[home]),
            label: Label::Normal,
        });
    }

    // victims: busiest nodes of community 0; attackers: busiest of community 1
    // (or the next-busiest of community 0 when there is a single community)
    let victim_set: Vec<usize> = members[0].iter().copied().take(config.victims).collect();
    let attacker_pool = if c > 1 {
        &members[1]
    } else {
        &members[0][config.victims..]
    };
    let attacker_set: Vec<usize> = attacker_pool.iter().copied().take(config.attackers).collect();
    let signature = config.attack_signature();
    let start = config.duration * (1.0 - config.attack_window);
    for _ in 0..config.attack_events {
        let src = attacker_set[rng.random_range(0..attacker_set.len())];
        let dst = victim_set[rng.random_range(0..victim_set.len())];
        let mean: Vec<f64> = means[community_of(src)]
            .iter()
            .zip(&signature)
            .map(|(m, s)| m + s)
            .collect();
        rows.push(KeyedEvent {
            src: key(src),
            dst: key(dst),
            t: rng.random_range(start..config.duration),
            features: gaussian(rng, &mean),
            label: Label::Attack,
        });
    }
    EventDataset::from_keyed(rows, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn normal(src: usize, dst: usize, t: f64) -> Event {
        Event {
            src,
            dst,
            t,
            features: vec![t, 1.0],
            label: Label::Normal,
        }
    }

    fn dataset(events: Vec<Event>) -> EventDataset {
        let mut nodes = NodeIdMap::default();
        let n = events.iter().map(|e| e.src.max(e.dst) + 1).max().unwrap_or(0);
        for i in 0..n {
            nodes.intern(&format!("h{i}"));
        }
        let feature_dim = events.first().map_or(0, |e| e.features.len());
        EventDataset {
            events,
            nodes,
            feature_dim,
        }
    }

    #[test]
    fn two_row_file() {
        let csv = "src,dst,timestamp,label,f_1\n10.0.0.1,10.0.0.2,1.5,BENIGN,0.25\n10.0.0.2,10.0.0.3,2.0,DDoS,-1\n";
        let ds = read_csv(csv.as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.node_count(), 3);
        assert_eq!(ds.feature_dim, 1);
        assert_eq!(ds.events[1].label, Label::Attack);
        assert_eq!(ds.nodes.get("10.0.0.3"), Some(2));
    }

    #[test]
    fn unsorted_rows_sort_stably() {
        let csv = "src,dst,timestamp,label\na,b,3,normal\nc,d,1,normal\ne,f,1,normal\n";
        let ds = read_csv(csv.as_bytes()).unwrap();
        let order: Vec<&str> = ds.events.iter().map(|e| ds.nodes.key(e.src)).collect();
        assert_eq!(order, vec!["c", "e", "a"]);
    }

    #[test]
    fn header_and_row_errors_are_reported() {
        let e = read_csv("src,dst,label\n".as_bytes()).unwrap_err();
        assert!(matches!(e, DataError::MissingColumn(ref c) if c == "timestamp"));
        let e = read_csv("src,dst,timestamp,label,f_2\n".as_bytes()).unwrap_err();
        assert!(matches!(e, DataError::MissingColumn(ref c) if c == "f_1"));
        let e = read_csv("src,dst,timestamp,label,f_1\na,b,1,normal,2\na,b,x,normal,2\n".as_bytes()).unwrap_err();
        assert!(matches!(e, DataError::BadTimestamp { row: 3, .. }), "{e}");
        let e = read_csv("src,dst,timestamp,label,f_1\na,b,1,normal,nope\n".as_bytes()).unwrap_err();
        assert!(e.to_string().contains("row 2"), "{e}");
    }

    #[test]
    fn export_ingest_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let config = SynthConfig {
            normal_events: 500,
            attack_events: 20,
            ..SynthConfig::default()
        };
        let mut ds = synth_generate(&config, &mut rng).unwrap();
        ds.events[3].features[0] = 0.1 + 0.2;
        ds.events[4].features[1] = f64::MIN_POSITIVE;
        ds.events[5].features[2] = -1.0e300 / 3.0;
        let mut buf = Vec::new();
        write_csv(&mut buf, &ds, &ds.events).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn split_sizes_and_partition() {
        let ds = dataset((0..100).map(|i| normal(0, 1, i as f64)).collect());
        let s = chronological_split(&ds, &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 15, 15));
        assert_eq!(s.t_test, 85.0);
        assert_eq!(s.t_end, 99.0);
        let joined: Vec<Event> = s.all().cloned().collect();
        assert_eq!(joined, ds.events);
    }

    #[test]
    fn ties_at_boundary_go_left() {
        // timestamps 0..68 distinct, then five events at t=69
        let mut events: Vec<Event> = (0..69).map(|i| normal(0, 1, i as f64)).collect();
        events.extend((0..5).map(|_| normal(1, 2, 69.0)));
        events.extend((74..100).map(|i| normal(0, 1, i as f64)));
        let s = chronological_split(&dataset(events), &SplitSpec::default()).unwrap();
        assert_eq!(s.train.len(), 74);
        assert!(s.val.iter().all(|e| e.t > 69.0));
    }

    #[test]
    fn attack_before_test_is_rejected() {
        let mut events: Vec<Event> = (0..100).map(|i| normal(0, 1, i as f64)).collect();
        events[50].label = Label::Attack;
        let err = chronological_split(&dataset(events), &SplitSpec::default()).unwrap_err();
        assert!(matches!(err, DataError::AttackBeforeTest { index: 50, .. }));
        assert!(err.to_string().contains("boundary"));
    }

    #[test]
    fn bad_split_spec() {
        let ds = dataset(vec![normal(0, 1, 0.0)]);
        let spec = SplitSpec {
            train: 0.5,
            val: 0.5,
            test: 0.5,
        };
        assert!(chronological_split(&ds, &spec).is_err());
        assert!(matches!(
            chronological_split(&dataset(vec![]), &SplitSpec::default()),
            Err(DataError::Empty)
        ));
    }

    #[test]
    fn standardize_centers_train_and_floors_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let events: Vec<Event> = (0..200)
            .map(|i| Event {
                features: vec![rng.random_range(-3.0..9.0), 4.0],
                ..normal(0, 1, i as f64)
            })
            .collect();
        let mut s = chronological_split(&dataset(events), &SplitSpec::default()).unwrap();
        let scaler = standardize(&mut s).unwrap();
        let n = s.train.len() as f64;
        let mean: f64 = s.train.iter().map(|e| e.features[0]).sum::<f64>() / n;
        let var: f64 = s.train.iter().map(|e| (e.features[0] - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert!(s.all().all(|e| e.features[1] == 0.0));
        assert_eq!(scaler.std[1], STD_FLOOR);
    }

    #[test]
    fn scaler_is_not_idempotent() {
        let events: Vec<Event> = (0..10).map(|i| normal(0, 1, i as f64 * 3.0)).collect();
        let scaler = Scaler::fit(&events).unwrap();
        let mut once = events.clone();
        scaler.apply(&mut once).unwrap();
        let mut twice = once.clone();
        scaler.apply(&mut twice).unwrap();
        assert_ne!(once, twice);
    }

    #[test]
    fn scaler_depends_on_train_only() {
        let events: Vec<Event> = (0..100).map(|i| normal(0, 1, (i * i) as f64)).collect();
        let mut a = chronological_split(&dataset(events), &SplitSpec::default()).unwrap();
        let mut b = a.clone();
        for e in b.val.iter_mut().chain(b.test.iter_mut()) {
            e.features[1] = 1e6;
        }
        assert_eq!(standardize(&mut a).unwrap(), standardize(&mut b).unwrap());
    }

    #[test]
    fn synth_counts_determinism_and_attack_window() {
        let config = SynthConfig {
            normal_events: 3000,
            attack_events: 45,
            ..SynthConfig::default()
        };
        let gen = |seed| synth_generate(&config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let ds = gen(4);
        assert_eq!(ds, gen(4));
        assert_ne!(ds, gen(5));
        let counts = ds.label_counts();
        assert_eq!((counts.normal, counts.attack, counts.noise), (3000, 45, 0));
        assert!(ds.node_count() <= config.nodes);
        assert!(ds.events.windows(2).all(|w| w[0].t <= w[1].t));
        let start = config.duration * (1.0 - config.attack_window);
        assert!(ds
            .events
            .iter()
            .filter(|e| e.label == Label::Attack)
            .all(|e| e.t >= start));
        assert!(ds.events.iter().all(|e| e.src != e.dst));

        let none = SynthConfig {
            attack_events: 0,
            ..config
        };
        let ds = synth_generate(&none, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(ds.events.iter().all(|e| e.label == Label::Normal));
    }

    #[test]
    fn default_synth_splits_cleanly() {
        let ds = synth_generate(&SynthConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let s = chronological_split(&ds, &SplitSpec::default()).unwrap();
        assert_eq!(LabelCounts::of(&s.test).attack, 300);
    }

    #[test]
    fn attack_signature_covers_a_quarter_of_dims() {
        let sig = SynthConfig::default().attack_signature();
        assert_eq!(sig, vec![3.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
