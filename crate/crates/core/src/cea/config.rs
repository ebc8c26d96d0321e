use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

/// Shape and objective hyper-parameters of the anticipator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeaConfig {
    /// Input feature dimension `D`.
    pub feature_dim: usize,
    /// Number of past frames `L` in each window.
    pub window_len: usize,
    /// Hidden width of the decoder.
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Width of the feed-forward sublayer.
    pub ff_dim: usize,
    /// Region size `K`: the region-level loss averages `K + 1` errors.
    pub region_k: usize,
    /// Weight of the region-level term in the combined loss.
    pub alpha: f64,
}

impl Default for CeaConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            window_len: 8,
            model_dim: 64,
            layers: 3,
            heads: 4,
            ff_dim: 128,
            region_k: 9,
            alpha: 0.5,
        }
    }
}

impl CeaConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("feature_dim", self.feature_dim),
            ("window_len", self.window_len),
            ("model_dim", self.model_dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ff_dim", self.ff_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError(format!("{name} must be positive")));
            }
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(ConfigError(format!("model_dim {} not divisible by heads {}", self.model_dim, self.heads)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(ConfigError(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Positions per decoder input: `L` frames plus the query token.
    pub fn seq_len(&self) -> usize {
        self.window_len + 1
    }

    pub fn region_len(&self) -> usize {
        self.region_k + 1
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("feature_dim", self.feature_dim.to_string()),
            ("window_len", self.window_len.to_string()),
            ("model_dim", self.model_dim.to_string()),
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("ff_dim", self.ff_dim.to_string()),
            ("region_k", self.region_k.to_string()),
            ("alpha", format!("{:?}", self.alpha)),
        ]
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V, ConfigError> {
            value.trim().parse().map_err(|_| ConfigError(format!("bad value {value:?} for {key}")))
        }
        match key {
            "feature_dim" => self.feature_dim = parse(key, value)?,
            "window_len" => self.window_len = parse(key, value)?,
            "model_dim" => self.model_dim = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "ff_dim" => self.ff_dim = parse(key, value)?,
            "region_k" => self.region_k = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

impl fmt::Display for CeaConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(" "))
    }
}
