use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::model::{ClampBounds, ModelDims, Priors};

use super::TrainError;

/// Every training knob. Layer sizes come from the tree; `layers`, when set,
/// is only checked against it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: String,
    pub layers: Option<Vec<usize>>,
    pub embed_dim: usize,
    pub hidden: usize,
    pub gcn_layers: usize,
    pub beta: f64,
    pub threshold: f64,
    pub anneal_period: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Overrides `epochs` when set: run exactly this many optimizer steps.
    pub iterations: Option<usize>,
    pub seed: u64,
    pub gamma: f64,
    pub rate: f64,
    pub k_min: f64,
    pub k_max: f64,
    pub lam_min: f64,
    pub lam_max: f64,
    pub init_std: f64,
    pub log_every: usize,
    /// Save a checkpoint every this many iterations (0 disables periodic saves).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let clamps = ClampBounds::default();
        let priors = Priors::default();
        Self {
            mode: "topickg".into(),
            layers: None,
            embed_dim: 50,
            hidden: 256,
            gcn_layers: 2,
            beta: 50.0,
            threshold: 0.4,
            anneal_period: 200,
            batch_size: 200,
            learning_rate: 0.01,
            weight_decay: 0.01,
            epochs: 100,
            iterations: None,
            seed: 0,
            gamma: priors.gamma,
            rate: priors.rate,
            k_min: clamps.k_min,
            k_max: clamps.k_max,
            lam_min: clamps.lam_min,
            lam_max: clamps.lam_max,
            init_std: 0.02,
            log_every: 1,
            checkpoint_every: 0,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "mode",
    "layers",
    "embed_dim",
    "hidden",
    "gcn_layers",
    "beta",
    "threshold",
    "anneal_period",
    "batch_size",
    "learning_rate",
    "weight_decay",
    "epochs",
    "iterations",
    "seed",
    "gamma",
    "rate",
    "k_min",
    "k_max",
    "lam_min",
    "lam_max",
    "init_std",
    "log_every",
    "checkpoint_every",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| format!("`{key}`: cannot parse `{value}`: {e}"))
}

impl TrainConfig {
    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "mode" => self.mode = v.to_string(),
            "layers" => {
                self.layers = if v.is_empty() || v == "auto" {
                    None
                } else {
                    Some(v.split(',').map(|s| parse(key, s.trim())).collect::<Result<_, _>>()?)
                }
            }
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "gcn_layers" => self.gcn_layers = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            "anneal_period" => self.anneal_period = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "iterations" => {
                self.iterations = if v.is_empty() || v == "none" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "seed" => self.seed = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "rate" => self.rate = parse(key, v)?,
            "k_min" => self.k_min = parse(key, v)?,
            "k_max" => self.k_max = parse(key, v)?,
            "lam_min" => self.lam_min = parse(key, v)?,
            "lam_max" => self.lam_max = parse(key, v)?,
            "init_std" => self.init_std = parse(key, v)?,
            "log_every" => self.log_every = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            other => return Err(format!("unknown key `{other}` (known: {})", CONFIG_KEYS.join(", "))),
        }
        Ok(())
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| TrainError::Config {
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(k.trim(), v).map_err(|reason| TrainError::Config { line: i + 1, reason })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_str(&text)
    }

    /// All keys with their values, in [`CONFIG_KEYS`] order. Floats use the
    /// shortest round-tripping representation.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let opt = |o: Option<String>| o.unwrap_or_else(|| "none".into());
        let layers = self
            .layers
            .as_ref()
            .map(|l| l.iter().map(usize::to_string).collect::<Vec<_>>().join(","))
            .unwrap_or_else(|| "auto".into());
        let values = [
            self.mode.clone(),
            layers,
            self.embed_dim.to_string(),
            self.hidden.to_string(),
            self.gcn_layers.to_string(),
            format!("{:?}", self.beta),
            format!("{:?}", self.threshold),
            self.anneal_period.to_string(),
            self.batch_size.to_string(),
            format!("{:?}", self.learning_rate),
            format!("{:?}", self.weight_decay),
            self.epochs.to_string(),
            opt(self.iterations.map(|n| n.to_string())),
            self.seed.to_string(),
            format!("{:?}", self.gamma),
            format!("{:?}", self.rate),
            format!("{:?}", self.k_min),
            format!("{:?}", self.k_max),
            format!("{:?}", self.lam_min),
            format!("{:?}", self.lam_max),
            format!("{:?}", self.init_std),
            self.log_every.to_string(),
            self.checkpoint_every.to_string(),
        ];
        CONFIG_KEYS.iter().map(|k| k.to_string()).zip(values).collect()
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, String> {
        let mut cfg = Self::default();
        for (k, v) in pairs {
            if CONFIG_KEYS.contains(&k) {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |reason: String| Err(TrainError::Invalid(reason));
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive".into());
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be finite and non-negative, got {}", self.beta));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        if self.anneal_period == 0 || self.batch_size == 0 || self.log_every == 0 {
            return bad("anneal_period, batch_size and log_every must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return bad("learning_rate must be positive and weight_decay non-negative".into());
        }
        if !(self.gamma > 0.0 && self.rate > 0.0) {
            return bad("gamma and rate must be positive".into());
        }
        if !(0.0 < self.k_min && self.k_min <= self.k_max && 0.0 < self.lam_min && self.lam_min <= self.lam_max) {
            return bad("clamp bounds must be positive and ordered".into());
        }
        Ok(())
    }

    pub fn dims(&self, layer_sizes: Vec<usize>) -> ModelDims {
        ModelDims {
            layer_sizes,
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            gcn_layers: self.gcn_layers,
            init_std: self.init_std,
        }
    }

    pub fn priors(&self) -> Priors {
        Priors {
            gamma: self.gamma,
            rate: self.rate,
        }
    }

    pub fn clamps(&self) -> ClampBounds {
        ClampBounds {
            k_min: self.k_min,
            k_max: self.k_max,
            lam_min: self.lam_min,
            lam_max: self.lam_max,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.mode = "topickga".into();
        c.layers = Some(vec![10, 3, 1]);
        c.iterations = Some(7);
        c.beta = 0.1 + 0.2;
        let back = TrainConfig::parse_str(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn comments_and_errors() {
        let c = TrainConfig::parse_str("# header\nbeta = 3 # inline\n\nseed=9\n").unwrap();
        assert_eq!((c.beta, c.seed), (3.0, 9));
        let err = TrainConfig::parse_str("beta = 1\nnonsense\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(TrainConfig::parse_str("bogus = 1").is_err());
        assert!(TrainConfig::parse_str("seed = -1").is_err());
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for (k, v) in [("threshold", "1"), ("threshold", "0"), ("beta", "-1"), ("embed_dim", "0"), ("anneal_period", "0")] {
            let mut c = TrainConfig::default();
            c.set(k, v).unwrap();
            assert!(c.validate().is_err(), "{k}={v}");
        }
    }
}
