//! Flat `section.key = value` run configuration.

use std::collections::BTreeMap;
use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tmae::model::{Activation, ModelConfig};
use tmae::train::{OptimizerKind, TrainConfig};
use tmae::{Error, Result};

const REQUIRED: &[&str] = &[
    "model.d",
    "model.heads",
    "model.lambda",
    "train.epochs",
    "train.batch_size",
    "train.learning_rate",
    "train.seed",
];

const OPTIONAL: &[&str] = &[
    "model.ff_width",
    "model.enc_layers",
    "model.dec_layers",
    "model.dropout",
    "model.activation",
    "model.use_category_concat",
    "model.use_cost_loss",
    "model.learned_date_cost",
    "model.cross_attend",
    "model.scale_cost_target",
    "model.layer_norm_eps",
    "train.max_steps",
    "train.optimizer",
    "train.shuffle",
    "train.pretrain_embeddings",
    "train.pretrain_epochs",
    "train.pretrain_negatives",
    "train.log_every",
    "train.holdout",
    "data.claims",
    "data.categories",
    "eval.k_range",
    "eval.metrics",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub claims: Option<PathBuf>,
    pub categories: Option<PathBuf>,
    pub k_range: RangeInclusive<usize>,
    pub metrics: Vec<String>,
}

fn invalid(key: &str, value: &str, why: impl std::fmt::Display) -> Error {
    Error::invalid(format!("config key {key} = {value:?}: {why}"))
}

struct Entries(BTreeMap<String, String>);

impl Entries {
    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.0
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| invalid(key, v, e)))
            .transpose()
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| Error::invalid(format!("missing config key {key}")))
    }
}

fn parse_k_range(v: &str) -> Result<RangeInclusive<usize>> {
    let bad = || invalid("eval.k_range", v, "expected LO..HI");
    let (lo, hi) = v.split_once("..").ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
    if lo < 1 || lo > hi {
        return Err(bad());
    }
    Ok(lo..=hi)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `section.key = value`, found {line:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !REQUIRED.contains(&key) && !OPTIONAL.contains(&key) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("unknown config key {key}"),
                });
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate config key {key}"),
                });
            }
        }
        let e = Entries(entries);

        let d: usize = e.required("model.d")?;
        let heads: usize = e.required("model.heads")?;
        let base = ModelConfig::with_width(d, heads);
        let model = ModelConfig {
            lambda: e.required("model.lambda")?,
            ff_width: e.get("model.ff_width")?.unwrap_or(base.ff_width),
            enc_layers: e.get("model.enc_layers")?.unwrap_or(base.enc_layers),
            dec_layers: e.get("model.dec_layers")?.unwrap_or(base.dec_layers),
            dropout: e.get("model.dropout")?.unwrap_or(base.dropout),
            activation: e.get::<Activation>("model.activation")?.unwrap_or(base.activation),
            use_category_concat: e.get("model.use_category_concat")?.unwrap_or(base.use_category_concat),
            use_cost_loss: e.get("model.use_cost_loss")?.unwrap_or(base.use_cost_loss),
            learned_date_cost: e.get("model.learned_date_cost")?.unwrap_or(base.learned_date_cost),
            cross_attend: e.get("model.cross_attend")?.unwrap_or(base.cross_attend),
            scale_cost_target: e.get("model.scale_cost_target")?.unwrap_or(base.scale_cost_target),
            layer_norm_eps: e.get("model.layer_norm_eps")?.unwrap_or(base.layer_norm_eps),
            ..base
        };
        model.validate()?;

        let defaults = TrainConfig::default();
        let optimizer = match e.0.get("train.optimizer").map(String::as_str) {
            None | Some("adam") => OptimizerKind::default(),
            Some("sgd") => OptimizerKind::Sgd,
            Some(other) => return Err(invalid("train.optimizer", other, "expected adam or sgd")),
        };
        let mut pretrain = defaults.pretrain.clone();
        pretrain.epochs = e.get("train.pretrain_epochs")?.unwrap_or(pretrain.epochs);
        pretrain.negatives = e.get("train.pretrain_negatives")?.unwrap_or(pretrain.negatives);
        let learning_rate: f64 = e.required("train.learning_rate")?;
        if learning_rate <= 0.0 {
            return Err(invalid("train.learning_rate", &learning_rate.to_string(), "must be positive"));
        }
        let train = TrainConfig {
            epochs: e.required("train.epochs")?,
            max_steps: e.get("train.max_steps")?,
            batch_size: e.required("train.batch_size")?,
            learning_rate,
            optimizer,
            seed: e.required("train.seed")?,
            shuffle: e.get("train.shuffle")?.unwrap_or(defaults.shuffle),
            pretrain_embeddings: e.get("train.pretrain_embeddings")?.unwrap_or(defaults.pretrain_embeddings),
            pretrain,
            log_every: e.get("train.log_every")?.unwrap_or(defaults.log_every),
            holdout: e.get("train.holdout")?.unwrap_or(defaults.holdout),
        };
        train.validate()?;

        let k_range = match e.0.get("eval.k_range") {
            Some(v) => parse_k_range(v)?,
            None => 1..=10,
        };
        let metrics = match e.0.get("eval.metrics") {
            Some(v) => {
                let list: Vec<String> = v.split(',').map(|m| m.trim().to_lowercase()).collect();
                if let Some(bad) = list.iter().find(|m| !matches!(m.as_str(), "ch" | "db")) {
                    return Err(invalid("eval.metrics", v, format!("unknown metric {bad:?}")));
                }
                list
            }
            None => vec!["ch".into(), "db".into()],
        };
        Ok(RunConfig {
            model,
            train,
            claims: e.get("data.claims")?,
            categories: e.get("data.categories")?,
            k_range,
            metrics,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
