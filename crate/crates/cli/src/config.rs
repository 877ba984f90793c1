//! INI-style run configuration.
//!
//! ```text
//! seed = 0
//! head = gaussian
//!
//! [train]
//! lr = 0.003
//! epochs = 30
//! ```
//!
//! Keys before the first section header are top-level. `#` and `;` start a
//! comment. Unknown sections, unknown keys, repeated keys and malformed
//! values are errors reported as `file:line`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rtgn_core::data::{SplitSpec, SynthConfig};
use rtgn_core::encoder::{EncoderDims, HeadKind};
use rtgn_core::eval::TauGrid;
use rtgn_core::heads::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauMode {
    Absolute,
    ValQuantile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub head: HeadKind,
    pub synth: SynthConfig,
    pub dims: EncoderDims,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub noise_variance: f64,
    /// Noise ratios in percent of the normal test events.
    pub ratios: Vec<f64>,
    pub resamples: usize,
    pub update_memory: bool,
    pub tau_mode: TauMode,
    pub tau_lo: f64,
    pub tau_hi: f64,
    pub tau_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            head: HeadKind::Gaussian,
            synth: SynthConfig::default(),
            dims: EncoderDims::default(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            noise_variance: 5.0,
            ratios: vec![10.0, 20.0, 30.0, 40.0, 50.0],
            resamples: 5,
            update_memory: true,
            tau_mode: TauMode::Absolute,
            tau_lo: 5.0,
            tau_hi: 25.0,
            tau_steps: 21,
        }
    }
}

trait Value: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
plain_value!(usize, u64, f64, bool);

impl Value for HeadKind {
    fn parse_value(s: &str) -> Result<Self, String> {
        HeadKind::parse(s).ok_or_else(|| format!("expected svdd or gaussian, got {s:?}"))
    }
    fn render(&self) -> String {
        self.as_str().to_owned()
    }
}

impl Value for TauMode {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "absolute" => Ok(TauMode::Absolute),
            "val_quantile" => Ok(TauMode::ValQuantile),
            _ => Err(format!("expected absolute or val_quantile, got {s:?}")),
        }
    }
    fn render(&self) -> String {
        match self {
            TauMode::Absolute => "absolute",
            TauMode::ValQuantile => "val_quantile",
        }
        .to_owned()
    }
}

/// `none` disables clipping.
impl Value for Option<f64> {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(None),
            _ => f64::parse_value(s).map(Some),
        }
    }
    fn render(&self) -> String {
        self.map_or_else(|| "none".to_owned(), |v| v.to_string())
    }
}

/// Comma-separated list.
impl Value for Vec<f64> {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.split(',').map(|p| f64::parse_value(p.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

// (section, key, field path, doc). Section "" is top-level.
macro_rules! keys {
    ($( ($section:literal, $key:literal, $($field:ident).+, $doc:literal) ),* $(,)?) => {
        /// Every key as `(section, key, doc)`, in file order.
        pub const KEYS: &[(&str, &str, &str)] = &[$(($section, $key, $doc)),*];

        impl RunConfig {
            fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
                match (section, key) {
                    $(($section, $key) => self.$($field).+ = Value::parse_value(value)?,)*
                    _ => return Err(unknown_key(section, key)),
                }
                Ok(())
            }

            fn get(&self, section: &str, key: &str) -> String {
                match (section, key) {
                    $(($section, $key) => self.$($field).+.render(),)*
                    _ => unreachable!("key table out of sync"),
                }
            }
        }
    };
}

keys! {
    ("", "seed", seed, "drives data generation, initialization, training and noise draws"),
    ("", "head", head, "svdd (baseline) or gaussian (noise-robust)"),
    ("synth", "nodes", synth.nodes, "number of hosts"),
    ("synth", "communities", synth.communities, "host communities; node i belongs to i mod communities"),
    ("synth", "normal_events", synth.normal_events, "normal flows over the whole duration"),
    ("synth", "attack_events", synth.attack_events, "attack flows"),
    ("synth", "feature_dim", synth.feature_dim, "flow feature dimension"),
    ("synth", "duration", synth.duration, "time span of the stream"),
    ("synth", "intra_prob", synth.intra_prob, "probability a normal flow stays in its community"),
    ("synth", "activity_skew", synth.activity_skew, "Zipf exponent of host activity"),
    ("synth", "community_spread", synth.community_spread, "std of community feature means"),
    ("synth", "attack_shift", synth.attack_shift, "feature shift carried by attacks"),
    ("synth", "attack_dim_fraction", synth.attack_dim_fraction, "fraction of feature dims that are shifted"),
    ("synth", "victims", synth.victims, "attacked hosts"),
    ("synth", "attackers", synth.attackers, "attacking hosts"),
    ("synth", "attack_window", synth.attack_window, "attacks fall in this final fraction of the duration"),
    ("encoder", "memory", dims.memory, "per-node memory size"),
    ("encoder", "time", dims.time, "time encoding size"),
    ("encoder", "embed", dims.embed, "embedding size"),
    ("encoder", "features", dims.features, "event feature dimension; must match the data"),
    ("encoder", "neighbors", dims.neighbors, "most recent neighbors aggregated per node"),
    ("encoder", "hidden", dims.hidden, "hidden width of the embedding network"),
    ("train", "lr", train.lr, "AdamW learning rate"),
    ("train", "weight_decay", train.weight_decay, "decoupled weight decay (center excluded)"),
    ("train", "epochs", train.epochs, "passes over the training split"),
    ("train", "batch_size", train.batch_size, "events per batch"),
    ("train", "neg_ratio", train.neg_ratio, "negatives per positive event (gaussian head)"),
    ("train", "neg_variance", train.neg_variance, "diagonal variance of negative targets"),
    ("train", "clip_norm", train.clip_norm, "global gradient norm clip, or none"),
    ("split", "train", split.train, "fraction of events for training"),
    ("split", "val", split.val, "fraction of events for validation"),
    ("split", "test", split.test, "fraction of events for testing"),
    ("noise", "variance", noise_variance, "per-dimension variance of noise features"),
    ("eval", "ratios", ratios, "noise ratios in percent, comma separated"),
    ("eval", "resamples", resamples, "noise draws per ratio (at least 2)"),
    ("eval", "update_memory", update_memory, "test events update node memory while scoring"),
    ("eval", "tau_mode", tau_mode, "absolute: tau_lo..tau_hi are thresholds; val_quantile: they are quantile levels of validation s_sigma"),
    ("eval", "tau_lo", tau_lo, "lower end of the s_sigma threshold grid"),
    ("eval", "tau_hi", tau_hi, "upper end of the s_sigma threshold grid"),
    ("eval", "tau_steps", tau_steps, "evenly spaced grid points"),
}

fn unknown_key(section: &str, key: &str) -> String {
    let known: Vec<&str> = KEYS.iter().filter(|k| k.0 == section).map(|k| k.1).collect();
    match (section, known.is_empty()) {
        (_, true) => format!("unknown section [{section}]"),
        ("", false) => format!("unknown key {key:?}; top-level keys: {}", known.join(", ")),
        (_, false) => format!(
            "unknown key {key:?} in [{section}]; expected one of: {}",
            known.join(", ")
        ),
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        let mut section = String::new();
        let mut seen: HashMap<(String, String), usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let at = |msg: String| anyhow::anyhow!("{origin}:{line_no}: {msg}");
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| at(format!("malformed section header {line:?}")))?;
                let name = name.trim();
                if !KEYS.iter().any(|k| k.0 == name) || name.is_empty() {
                    return Err(at(format!("unknown section [{name}]")));
                }
                section = name.to_owned();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.iter().any(|k| k.0 == section && k.1 == key) {
                return Err(at(unknown_key(&section, key)));
            }
            if let Some(first) = seen.insert((section.clone(), key.to_owned()), line_no) {
                return Err(at(format!("{key:?} already set on line {first}")));
            }
            config
                .set(&section, key, value)
                .map_err(|e| at(format!("{}: {e}", qualified(&section, key))))?;
        }
        config.validate().map_err(|e| anyhow::anyhow!("{origin}: {e}"))?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Checks cross-key constraints.
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.split.validate()?;
        self.train.validate()?;
        if !(self.noise_variance > 0.0) {
            bail!("noise.variance must be positive");
        }
        if self.ratios.is_empty() || self.ratios.iter().any(|r| !(*r >= 0.0)) {
            bail!("eval.ratios must be a non-empty list of non-negative percentages");
        }
        if self.tau_steps == 0 || !(self.tau_lo <= self.tau_hi) {
            bail!("eval.tau_lo..tau_hi must be a non-empty interval with tau_steps >= 1");
        }
        if self.tau_mode == TauMode::ValQuantile && !(0.0 <= self.tau_lo && self.tau_hi <= 1.0) {
            bail!("eval.tau_lo and eval.tau_hi are quantile levels in val_quantile mode and must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn tau_grid(&self) -> TauGrid {
        let (lo, hi, steps) = (self.tau_lo, self.tau_hi, self.tau_steps);
        match self.tau_mode {
            TauMode::Absolute => TauGrid::Absolute { lo, hi, steps },
            TauMode::ValQuantile => TauGrid::ValidationQuantile { lo, hi, steps },
        }
    }

    /// `TrainConfig` with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Full config in the file format; parsing it gives back `self`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for &(section, key, _) in KEYS {
            if section != current {
                let _ = write!(out, "\n[{section}]\n");
                current = section;
            }
            let _ = writeln!(out, "{key} = {}", self.get(section, key));
        }
        out
    }
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_owned()
    } else {
        format!("{section}.{key}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("", "x").unwrap(), RunConfig::default());
        assert_eq!(
            RunConfig::parse("# only a comment\n\n", "x").unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn render_round_trips() {
        let mut c = RunConfig::default();
        c.seed = 9;
        c.head = HeadKind::Svdd;
        c.train.lr = 3e-3;
        c.train.clip_norm = None;
        c.ratios = vec![5.0, 12.5];
        c.tau_mode = TauMode::ValQuantile;
        c.tau_lo = 0.6;
        c.tau_hi = 0.8;
        assert_eq!(RunConfig::parse(&c.render(), "echo").unwrap(), c);
        assert_eq!(
            RunConfig::parse(&RunConfig::default().render(), "echo").unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn sections_comments_and_overrides() {
        let text = "seed = 4 # inline\n[train]\nlr = 0.5\n; note\nepochs=2\n[eval]\nratios = 10, 50\n";
        let c = RunConfig::parse(text, "run.ini").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.train.lr, 0.5);
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.ratios, vec![10.0, 50.0]);
        assert_eq!(c.train_config().seed, 4);
    }

    #[test]
    fn errors_carry_file_and_line() {
        let cases = [
            ("seed = 1\nbogus = 2\n", "run.ini:2: unknown key \"bogus\""),
            ("[train]\nlr = 1\n[nope]\n", "run.ini:3: unknown section [nope]"),
            ("[train]\n\nlr = fast\n", "run.ini:3: train.lr:"),
            ("[train]\nlr = 1\nlr = 2\n", "run.ini:3: \"lr\" already set on line 2"),
            ("[train]\nlr\n", "run.ini:2: expected key = value"),
            ("[encoder]\nseed = 3\n", "run.ini:2: unknown key \"seed\" in [encoder]"),
            ("head = tree\n", "run.ini:1: head: expected svdd or gaussian"),
        ];
        for (text, want) in cases {
            let err = RunConfig::parse(text, "run.ini").unwrap_err().to_string();
            assert!(err.starts_with(want), "{err:?} should start with {want:?}");
        }
    }

    #[test]
    fn cross_key_validation() {
        assert!(RunConfig::parse("[split]\ntrain = 0.9\n", "x").is_err());
        assert!(RunConfig::parse("[eval]\ntau_mode = val_quantile\n", "x").is_err());
        assert!(RunConfig::parse("[eval]\ntau_mode = val_quantile\ntau_lo = 0.6\ntau_hi = 0.8\n", "x").is_ok());
        assert!(RunConfig::parse("[eval]\ntau_lo = 30\n", "x").is_err());
    }

    #[test]
    fn every_key_is_documented_once() {
        let mut seen = std::collections::HashSet::new();
        for (section, key, doc) in KEYS {
            assert!(!doc.is_empty());
            assert!(seen.insert((section, key)), "{section}.{key} listed twice");
        }
    }
}
