//! Flat `key = value` run configuration.
//!
//! One file drives corpus generation, pre-training, and adaptation; unknown
//! keys are rejected and every value is validated when parsed, so a rejected
//! run fails before any output is written. The resolved map is echoed next to
//! each run's outputs for exact reproduction.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Activation, ModelConfig};
use crate::synth::ParamRanges;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    UInt,
    U64,
    Float,
    Bool,
    Text,
    Choice(&'static [&'static str]),
}

/// Every accepted key with its value kind.
const KNOWN_KEYS: &[(&str, Kind)] = &[
    ("gen.count", Kind::UInt),
    ("gen.seed", Kind::U64),
    ("gen.out", Kind::Text),
    ("gen.force_regimes", Kind::Bool),
    ("gen.n_min", Kind::UInt),
    ("gen.n_max", Kind::UInt),
    ("gen.clusters_min", Kind::UInt),
    ("gen.clusters_max", Kind::UInt),
    ("gen.p_div_q_min", Kind::Float),
    ("gen.p_div_q_max", Kind::Float),
    ("gen.k_min", Kind::Float),
    ("gen.k_max", Kind::Float),
    ("gen.gamma_min", Kind::Float),
    ("gen.gamma_max", Kind::Float),
    ("gen.mean_degree_min", Kind::Float),
    ("gen.mean_degree_max", Kind::Float),
    ("gen.theta_min", Kind::Float),
    ("gen.theta_max", Kind::Float),
    ("model.hidden_dim", Kind::UInt),
    ("model.layers", Kind::UInt),
    ("model.activation", Kind::Choice(&["relu", "tanh"])),
    ("pretrain.corpus", Kind::Text),
    ("pretrain.out", Kind::Text),
    ("pretrain.mask_fraction", Kind::Float),
    ("pretrain.graphs_per_step", Kind::UInt),
    ("pretrain.n_pos", Kind::UInt),
    ("pretrain.n_neg", Kind::UInt),
    ("pretrain.lr", Kind::Float),
    ("pretrain.max_steps", Kind::UInt),
    ("pretrain.val_every", Kind::UInt),
    ("pretrain.seed", Kind::U64),
    ("pretrain.cluster_support_fraction", Kind::Float),
    ("adapt.task", Kind::Choice(&["node", "link", "graph"])),
    ("adapt.checkpoint", Kind::Text),
    ("adapt.out", Kind::Text),
    ("adapt.boundary", Kind::UInt),
    ("adapt.boundaries", Kind::Text),
    ("adapt.epochs", Kind::UInt),
    ("adapt.lr", Kind::Float),
    ("adapt.seed", Kind::U64),
    ("adapt.task_seed", Kind::U64),
    ("adapt.sweep_seeds", Kind::UInt),
    ("adapt.n_min", Kind::UInt),
    ("adapt.n_max", Kind::UInt),
    ("runtime.threads", Kind::UInt),
    ("runtime.deterministic", Kind::Bool),
];

fn kind_of(key: &str) -> Option<Kind> {
    KNOWN_KEYS.iter().find(|(k, _)| *k == key).map(|(_, kind)| *kind)
}

fn validate_value(key: &str, value: &str) -> Result<()> {
    let Some(kind) = kind_of(key) else {
        return Err(Error::config(format!("unknown config key `{key}`")));
    };
    let ok = match kind {
        Kind::UInt => value.parse::<usize>().is_ok(),
        Kind::U64 => value.parse::<u64>().is_ok(),
        Kind::Float => value.parse::<f64>().map(|v| v.is_finite()).unwrap_or(false),
        Kind::Bool => matches!(value, "true" | "false"),
        Kind::Text => !value.is_empty(),
        Kind::Choice(options) => options.contains(&value),
    };
    if !ok {
        return Err(Error::config(format!("invalid value `{value}` for key `{key}`")));
    }
    Ok(())
}

/// Parsed, validated key/value configuration.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    map: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        RunConfig::default()
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Format {
                    line: i + 1,
                    msg: format!("expected `key = value`, found `{raw}`"),
                });
            };
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        validate_value(key, value)?;
        self.map.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn get_usize(&self, key: &str, default: usize) -> usize {
        self.get(key).map(|v| v.parse().unwrap()).unwrap_or(default)
    }

    pub fn get_u64(&self, key: &str, default: u64) -> u64 {
        self.get(key).map(|v| v.parse().unwrap()).unwrap_or(default)
    }

    pub fn get_f64(&self, key: &str, default: f64) -> f64 {
        self.get(key).map(|v| v.parse().unwrap()).unwrap_or(default)
    }

    pub fn get_bool(&self, key: &str, default: bool) -> bool {
        self.get(key).map(|v| v == "true").unwrap_or(default)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::config(format!("missing required config key `{key}`")))
    }

    /// Generator ranges with defaults filled in.
    pub fn param_ranges(&self) -> Result<ParamRanges> {
        let d = ParamRanges::default();
        let ranges = ParamRanges {
            n: (self.get_usize("gen.n_min", d.n.0), self.get_usize("gen.n_max", d.n.1)),
            clusters: (
                self.get_usize("gen.clusters_min", d.clusters.0),
                self.get_usize("gen.clusters_max", d.clusters.1),
            ),
            p_div_q: (
                self.get_f64("gen.p_div_q_min", d.p_div_q.0),
                self.get_f64("gen.p_div_q_max", d.p_div_q.1),
            ),
            k: (self.get_f64("gen.k_min", d.k.0), self.get_f64("gen.k_max", d.k.1)),
            gamma: (self.get_f64("gen.gamma_min", d.gamma.0), self.get_f64("gen.gamma_max", d.gamma.1)),
            mean_degree: (
                self.get_f64("gen.mean_degree_min", d.mean_degree.0),
                self.get_f64("gen.mean_degree_max", d.mean_degree.1),
            ),
            theta_min: self.get_f64("gen.theta_min", d.theta_min),
            theta_max: self.get_f64("gen.theta_max", d.theta_max),
        };
        ranges.validate()?;
        Ok(ranges)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let d = ModelConfig::default();
        let cfg = ModelConfig {
            hidden_dim: self.get_usize("model.hidden_dim", d.hidden_dim),
            layers: self.get_usize("model.layers", d.layers),
            activation: match self.get("model.activation") {
                Some(s) => Activation::parse(s)?,
                None => d.activation,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serialized echo, one sorted `key = value` line each.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn write_echo(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.echo())?;
        Ok(())
    }

    pub fn map(&self) -> &BTreeMap<String, String> {
        &self.map
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_known_keys_and_comments() {
        let cfg = RunConfig::parse(
            "# corpus\n gen.count = 8 \n gen.seed=1\npretrain.lr = 0.001 # default\n",
        )
        .unwrap();
        assert_eq!(cfg.get_usize("gen.count", 0), 8);
        assert_eq!(cfg.get_u64("gen.seed", 0), 1);
        assert_eq!(cfg.get_f64("pretrain.lr", 0.0), 0.001);
    }

    #[test]
    fn rejects_unknown_keys() {
        let err = RunConfig::parse("gen.cout = 8\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn rejects_invalid_values_at_parse_time() {
        assert!(RunConfig::parse("gen.count = -3\n").is_err());
        assert!(RunConfig::parse("pretrain.lr = fast\n").is_err());
        assert!(RunConfig::parse("adapt.task = edge\n").is_err());
        assert!(RunConfig::parse("runtime.deterministic = yes\n").is_err());
    }

    #[test]
    fn echo_roundtrips() {
        let mut cfg = RunConfig::new();
        cfg.set("gen.count", "12").unwrap();
        cfg.set("model.activation", "tanh").unwrap();
        let echoed = RunConfig::parse(&cfg.echo()).unwrap();
        assert_eq!(cfg.map(), echoed.map());
    }

    #[test]
    fn ranges_and_model_from_config() {
        let cfg = RunConfig::parse("gen.n_min = 30\ngen.n_max = 60\nmodel.hidden_dim = 16\n").unwrap();
        let ranges = cfg.param_ranges().unwrap();
        assert_eq!(ranges.n, (30, 60));
        let model = cfg.model_config().unwrap();
        assert_eq!(model.hidden_dim, 16);
        assert_eq!(model.layers, 3);
    }

    #[test]
    fn inverted_ranges_fail_validation() {
        let cfg = RunConfig::parse("gen.n_min = 60\ngen.n_max = 30\n").unwrap();
        assert!(cfg.param_ranges().is_err());
    }
}
