//! Configuration resolution: defaults, then the settings file, then flags.

use anyhow::{bail, Context, Result};
use log::info;

use crate::Common;

/// Ordered `key=value` overrides; later entries win.
pub struct Overrides(Vec<(String, String)>);

impl Overrides {
    /// Settings-file entries, then explicit flags, then `--set` pairs.
    pub fn collect(common: &Common, flags: Vec<(&str, Option<String>)>) -> Result<Self> {
        let mut pairs = Vec::new();
        if let Some(path) = &common.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            pairs.extend(gebd::io::parse_settings(&text).with_context(|| format!("parsing {}", path.display()))?);
        }
        pairs.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
        for raw in &common.set {
            let Some((k, v)) = raw.split_once('=') else {
                bail!("--set expects key=value, got {raw:?}");
            };
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Self(pairs))
    }

    /// Feeds every pair to `set`, which reports whether it recognised the key.
    pub fn apply(&self, mut set: impl FnMut(&str, &str) -> Result<bool>) -> Result<()> {
        for (k, v) in &self.0 {
            if !set(k, v).with_context(|| format!("setting {k}={v}"))? {
                bail!("unknown setting {k:?}");
            }
        }
        Ok(())
    }
}

/// Logs the complete configuration a command runs with.
pub fn log_resolved<K: AsRef<str>>(command: &str, pairs: &[(K, String)]) {
    let line: Vec<String> = pairs.iter().map(|(k, v)| format!("{}={v}", k.as_ref())).collect();
    info!("{command} configuration: {}", line.join(" "));
}
