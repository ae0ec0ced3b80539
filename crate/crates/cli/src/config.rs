//! Flat `key=value` configuration shared by the config file and the
//! command-line flags.

use std::fmt;
use std::path::PathBuf;

use vlad_vsa::data::SyntheticParams;
use vlad_vsa::harness::{TrainConfig, Variant};
use vlad_vsa::metrics::ThresholdMode;
use vlad_vsa::model::PoolingKind;
use vlad_vsa::objective::LossWeights;
use vlad_vsa::vocabulary::InitMode;

/// Every accepted key with a one-line description, in render order.
pub const KEYS: &[(&str, &str)] = &[
    ("domains", "number of synthetic domains S"),
    ("locals", "local descriptors per sample N"),
    ("d_raw", "raw descriptor width"),
    ("rho_cue", "fraction of locals carrying the fake cue"),
    ("noise_sigma", "per-coordinate noise standard deviation"),
    ("samples_per_domain_per_class", "generated samples per domain and class"),
    ("cue_scale", "norm of the shared fake cue"),
    ("shift_scale", "norm of each domain shift"),
    ("specific_scale", "norm of each domain-specific attack"),
    ("data_seed", "seed of the synthetic generator"),
    ("per_domain_real", "real samples per source domain in a batch"),
    ("per_domain_fake", "fake samples per source domain in a batch"),
    ("iterations", "training iterations"),
    ("lr", "initial learning rate"),
    ("momentum", "SGD momentum"),
    ("lr_drop_at", "iteration at which the learning rate drops"),
    ("lr_dropped", "learning rate after the drop"),
    ("pooling", "gap | vlad"),
    ("k", "vocabulary size K"),
    ("k2", "domain-specific words K2"),
    ("d", "encoded descriptor width"),
    ("hidden", "encoder hidden width"),
    ("disc_hidden", "discriminator hidden width"),
    ("vocab_init", "random | kmeans"),
    ("kmeans_iters", "Lloyd iterations for kmeans vocabulary init"),
    ("intra_normalize", "normalize residual centers in the intra loss"),
    ("t", "soft-assignment temperature"),
    ("m", "triplet margin"),
    ("grl_coeff", "gradient reversal coefficient"),
    ("lambda1", "triplet weight"),
    ("lambda2", "adversarial weight"),
    ("lambda3", "orthogonality weight"),
    ("lambda4", "centroid adaptation weight"),
    ("lambda5", "intra-cluster weight"),
    ("seed", "training seed"),
    ("eval_every", "evaluate on the holdout every n iterations (0 = never)"),
    ("holdout", "held-out target domain (1-based)"),
    ("threshold", "eer | fixed numeric threshold"),
    ("seeds", "comma-separated ablation seeds"),
    ("variants", "comma-separated ablation variants"),
    ("sample_count", "samples used by stats (0 = all)"),
    ("instances", "gradcheck instances per loss"),
    ("export_csv", "gen-data also writes CSV exports"),
    ("data_dir", "directory of domain_<s>.feat files"),
    ("out_dir", "directory for outputs"),
    ("checkpoint", "checkpoint path"),
];

/// Extra key accepted on input only: sets lambda1..lambda5 at once.
pub const LAMBDA_ALIAS: &str = "lambda";

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub data: SyntheticParams,
    pub train: TrainConfig,
    pub holdout: usize,
    pub threshold: ThresholdMode,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub sample_count: usize,
    pub instances: usize,
    pub export_csv: bool,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub checkpoint: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        let data = SyntheticParams::default();
        Self {
            holdout: data.domains,
            data,
            train: TrainConfig::default(),
            threshold: ThresholdMode::Eer,
            seeds: vec![0, 1, 2, 3, 4],
            variants: Variant::ALL.to_vec(),
            sample_count: 0,
            instances: 20,
            export_csv: false,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            checkpoint: PathBuf::from("out/model.bin"),
        }
    }
}

/// Why a single `key=value` entry was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntryError {
    UnknownKey(String),
    BadValue { key: String, value: String, expected: &'static str },
}

impl fmt::Display for EntryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntryError::UnknownKey(k) => write!(f, "unknown key `{k}`"),
            EntryError::BadValue { key, value, expected } => {
                write!(f, "malformed value `{value}` for `{key}`: expected {expected}")
            }
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, EntryError> {
    value.trim().parse().map_err(|_| EntryError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        expected,
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str, expected: &'static str) -> Result<Vec<T>, EntryError> {
    let items: Vec<&str> = value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(EntryError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            expected,
        });
    }
    items.into_iter().map(|s| parse(key, s, expected)).collect()
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Accepts `--data-dir` style spelling for `data_dir`.
pub fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Config {
    /// Applies one entry. `lambda` sets all five loss weights.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), EntryError> {
        const UINT: &str = "a non-negative integer";
        const FLOAT: &str = "a number";
        const BOOL: &str = "true or false";
        let w: &mut LossWeights = &mut self.train.weights;
        match key {
            "domains" => self.data.domains = parse(key, value, UINT)?,
            "locals" => self.data.locals = parse(key, value, UINT)?,
            "d_raw" => self.data.d_raw = parse(key, value, UINT)?,
            "rho_cue" => self.data.rho_cue = parse(key, value, FLOAT)?,
            "noise_sigma" => self.data.noise_sigma = parse(key, value, FLOAT)?,
            "samples_per_domain_per_class" => self.data.samples_per_domain_per_class = parse(key, value, UINT)?,
            "cue_scale" => self.data.cue_scale = parse(key, value, FLOAT)?,
            "shift_scale" => self.data.shift_scale = parse(key, value, FLOAT)?,
            "specific_scale" => self.data.specific_scale = parse(key, value, FLOAT)?,
            "data_seed" => self.data.seed = parse(key, value, UINT)?,
            "per_domain_real" => self.train.per_domain_real = parse(key, value, UINT)?,
            "per_domain_fake" => self.train.per_domain_fake = parse(key, value, UINT)?,
            "iterations" => self.train.iterations = parse(key, value, UINT)?,
            "lr" => self.train.learning_rate = parse(key, value, FLOAT)?,
            "momentum" => self.train.momentum = parse(key, value, FLOAT)?,
            "lr_drop_at" => self.train.lr_drop_at = parse(key, value, UINT)?,
            "lr_dropped" => self.train.lr_dropped = parse(key, value, FLOAT)?,
            "pooling" => {
                self.train.pooling = match value.trim() {
                    "gap" => PoolingKind::Gap,
                    "vlad" => PoolingKind::Vlad,
                    _ => return Err(bad(key, value, "gap or vlad")),
                }
            }
            "k" => self.train.k = parse(key, value, UINT)?,
            "k2" => self.train.k_specific = parse(key, value, UINT)?,
            "d" => self.train.d = parse(key, value, UINT)?,
            "hidden" => self.train.hidden = parse(key, value, UINT)?,
            "disc_hidden" => self.train.disc_hidden = parse(key, value, UINT)?,
            "vocab_init" => {
                self.train.vocab_init = match value.trim() {
                    "random" => InitMode::Random,
                    "kmeans" => InitMode::KMeans,
                    _ => return Err(bad(key, value, "random or kmeans")),
                }
            }
            "kmeans_iters" => self.train.kmeans_iters = parse(key, value, UINT)?,
            "intra_normalize" => self.train.intra_normalize = parse(key, value, BOOL)?,
            "t" => w.temperature = parse(key, value, FLOAT)?,
            "m" => w.margin = parse(key, value, FLOAT)?,
            "grl_coeff" => w.grl_coeff = parse(key, value, FLOAT)?,
            "lambda1" => w.triplet = parse(key, value, FLOAT)?,
            "lambda2" => w.adversarial = parse(key, value, FLOAT)?,
            "lambda3" => w.ortho = parse(key, value, FLOAT)?,
            "lambda4" => w.c_adapt = parse(key, value, FLOAT)?,
            "lambda5" => w.intra = parse(key, value, FLOAT)?,
            LAMBDA_ALIAS => *w = w.with_uniform_lambda(parse(key, value, FLOAT)?),
            "seed" => self.train.seed = parse(key, value, UINT)?,
            "eval_every" => self.train.eval_every = parse(key, value, UINT)?,
            "holdout" => self.holdout = parse(key, value, UINT)?,
            "threshold" => {
                self.threshold = match value.trim() {
                    "eer" => ThresholdMode::Eer,
                    v => ThresholdMode::Fixed(parse(key, v, "eer or a number")?),
                }
            }
            "seeds" => self.seeds = parse_list(key, value, "comma-separated integers")?,
            "variants" => {
                self.variants = parse_list(key, value, "comma-separated names from gap,vlad,vlad_vs,vlad_va,vlad_vsa")?
            }
            "sample_count" => self.sample_count = parse(key, value, UINT)?,
            "instances" => self.instances = parse(key, value, UINT)?,
            "export_csv" => self.export_csv = parse(key, value, BOOL)?,
            "data_dir" => self.data_dir = PathBuf::from(value.trim()),
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "checkpoint" => self.checkpoint = PathBuf::from(value.trim()),
            _ => return Err(EntryError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let w = &self.train.weights;
        Some(match key {
            "domains" => self.data.domains.to_string(),
            "locals" => self.data.locals.to_string(),
            "d_raw" => self.data.d_raw.to_string(),
            "rho_cue" => self.data.rho_cue.to_string(),
            "noise_sigma" => self.data.noise_sigma.to_string(),
            "samples_per_domain_per_class" => self.data.samples_per_domain_per_class.to_string(),
            "cue_scale" => self.data.cue_scale.to_string(),
            "shift_scale" => self.data.shift_scale.to_string(),
            "specific_scale" => self.data.specific_scale.to_string(),
            "data_seed" => self.data.seed.to_string(),
            "per_domain_real" => self.train.per_domain_real.to_string(),
            "per_domain_fake" => self.train.per_domain_fake.to_string(),
            "iterations" => self.train.iterations.to_string(),
            "lr" => self.train.learning_rate.to_string(),
            "momentum" => self.train.momentum.to_string(),
            "lr_drop_at" => self.train.lr_drop_at.to_string(),
            "lr_dropped" => self.train.lr_dropped.to_string(),
            "pooling" => match self.train.pooling {
                PoolingKind::Gap => "gap".into(),
                PoolingKind::Vlad => "vlad".into(),
            },
            "k" => self.train.k.to_string(),
            "k2" => self.train.k_specific.to_string(),
            "d" => self.train.d.to_string(),
            "hidden" => self.train.hidden.to_string(),
            "disc_hidden" => self.train.disc_hidden.to_string(),
            "vocab_init" => match self.train.vocab_init {
                InitMode::Random => "random".into(),
                InitMode::KMeans => "kmeans".into(),
            },
            "kmeans_iters" => self.train.kmeans_iters.to_string(),
            "intra_normalize" => self.train.intra_normalize.to_string(),
            "t" => w.temperature.to_string(),
            "m" => w.margin.to_string(),
            "grl_coeff" => w.grl_coeff.to_string(),
            "lambda1" => w.triplet.to_string(),
            "lambda2" => w.adversarial.to_string(),
            "lambda3" => w.ortho.to_string(),
            "lambda4" => w.c_adapt.to_string(),
            "lambda5" => w.intra.to_string(),
            "seed" => self.train.seed.to_string(),
            "eval_every" => self.train.eval_every.to_string(),
            "holdout" => self.holdout.to_string(),
            "threshold" => match self.threshold {
                ThresholdMode::Eer => "eer".into(),
                ThresholdMode::Fixed(t) => t.to_string(),
            },
            "seeds" => join(&self.seeds),
            "variants" => join(&self.variants),
            "sample_count" => self.sample_count.to_string(),
            "instances" => self.instances.to_string(),
            "export_csv" => self.export_csv.to_string(),
            "data_dir" => self.data_dir.display().to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "checkpoint" => self.checkpoint.display().to_string(),
            _ => return None,
        })
    }

    /// One `key=value` line per key, in [`KEYS`] order.
    pub fn render(&self) -> String {
        KEYS.iter()
            .map(|(k, _)| format!("{k}={}\n", self.get(k).expect("every listed key renders")))
            .collect()
    }

    /// Single-line form for output headers.
    pub fn render_inline(&self) -> String {
        KEYS.iter()
            .map(|(k, _)| format!("{k}={}", self.get(k).expect("every listed key renders")))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Applies a config file. Blank lines and `#` comments are ignored.
    /// Errors carry the 1-based line number.
    pub fn apply_file(&mut self, text: &str) -> Result<(), (usize, String)> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| (i + 1, format!("expected key=value, found `{line}`")))?;
            self.set(&normalize_key(key), value.trim())
                .map_err(|e| (i + 1, e.to_string()))?;
        }
        Ok(())
    }
}

fn bad(key: &str, value: &str, expected: &'static str) -> EntryError {
    EntryError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        expected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut c = Config::default();
        c.set("lr", "0.0123456789").unwrap();
        c.set("threshold", "0.3").unwrap();
        c.set("variants", "vlad,gap").unwrap();
        c.set("pooling", "gap").unwrap();
        let mut back = Config::default();
        back.apply_file(&c.render()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.render(), c.render());
    }

    #[test]
    fn lambda_alias_sets_all_five() {
        let mut c = Config::default();
        c.set("lambda", "0.25").unwrap();
        for k in ["lambda1", "lambda2", "lambda3", "lambda4", "lambda5"] {
            assert_eq!(c.get(k).unwrap(), "0.25");
        }
    }

    #[test]
    fn built_in_defaults() {
        let c = Config::default();
        assert_eq!(c.get("k").unwrap(), "32");
        assert_eq!(c.get("k2").unwrap(), "4");
        assert_eq!(c.get("t").unwrap(), "3");
        assert_eq!(c.get("lambda3").unwrap(), "0.1");
        let mut d = Config::default();
        for (k, v) in [("k", "32"), ("k2", "4"), ("t", "3"), ("lambda", "0.1")] {
            d.set(k, v).unwrap();
        }
        assert_eq!(c, d);
    }

    #[test]
    fn file_errors_name_the_line() {
        let mut c = Config::default();
        let err = c.apply_file("k=8\n\n# fine\nbogus=1\n").unwrap_err();
        assert_eq!(err.0, 4);
        assert!(err.1.contains("unknown key `bogus`"));
        let err = c.apply_file("k=eight\n").unwrap_err();
        assert_eq!(err.0, 1);
        assert!(err.1.contains("malformed value"));
        assert_eq!(c.apply_file("just words").unwrap_err().0, 1);
    }

    #[test]
    fn every_key_renders() {
        let c = Config::default();
        for (k, _) in KEYS {
            assert!(c.get(k).is_some(), "{k}");
        }
        assert!(c.get(LAMBDA_ALIAS).is_none());
    }
}
