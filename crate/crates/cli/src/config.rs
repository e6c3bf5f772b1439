//! Resolved run configuration, JSON overrides and the manifest hash.

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::Path;

use vegpattern::continuation::ContinuationOptions;
use vegpattern::integrate::IntegratorOptions;
use vegpattern::presets::PresetOptions;
use vegpattern::Params;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSet {
    /// The tabulated rate constants.
    Tabulated,
    /// Tabulated constants with `q = 0.025`; reproduces the reference
    /// critical values.
    Calibrated,
}

impl ParamSet {
    pub fn params(self) -> Params {
        match self {
            ParamSet::Tabulated => Params::default(),
            ParamSet::Calibrated => Params::calibrated(),
        }
    }
}

/// Everything a run depends on, with all defaults filled in.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub tool_version: &'static str,
    pub command: String,
    pub arguments: Value,
    pub param_set: ParamSet,
    pub params: Params,
    pub grid_n: usize,
    pub seed: u64,
    pub integrator: IntegratorOptions,
    pub continuation: ContinuationOptions,
    pub presets: PresetOptions,
}

impl RunConfig {
    /// Canonical JSON (sorted keys) of the configuration.
    pub fn canonical(&self) -> Result<Vec<u8>> {
        let v = serde_json::to_value(self)?;
        Ok(serde_json::to_vec(&v)?)
    }

    pub fn sha256(&self) -> Result<String> {
        let digest = Sha256::digest(self.canonical()?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Reads a JSON argument given inline (starting with `{`) or as a path.
pub fn read_json_arg(arg: &str) -> Result<Value> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(Path::new(arg)).with_context(|| format!("reading {arg}"))?
    };
    serde_json::from_str(&text).with_context(|| format!("parsing JSON from {arg}"))
}

/// Applies the keys of `overrides` on top of `base`. Unknown keys are an
/// error where the target type rejects them.
pub fn merge<T: Serialize + DeserializeOwned>(base: &T, overrides: Option<&Value>) -> Result<T> {
    let Some(over) = overrides else {
        return Ok(serde_json::from_value(serde_json::to_value(base)?)?);
    };
    let Value::Object(over) = over else {
        anyhow::bail!(crate::UsageError("overrides must be a JSON object".into()));
    };
    let mut v = serde_json::to_value(base)?;
    let obj = v.as_object_mut().expect("options serialize to objects");
    for (k, val) in over {
        obj.insert(k.clone(), val.clone());
    }
    serde_json::from_value(v).map_err(|e| crate::UsageError(format!("invalid override: {e}")).into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_replace_single_keys() {
        let base = Params::calibrated();
        let v: Value = serde_json::from_str(r#"{"L": 2.0, "D_B": 0.02}"#).unwrap();
        let p: Params = merge(&base, Some(&v)).unwrap();
        assert_eq!(p.length, 2.0);
        assert_eq!(p.diff_b, 0.02);
        assert_eq!(p.q, base.q);
        let bad: Value = serde_json::from_str(r#"{"nonsense": 1}"#).unwrap();
        assert!(merge(&base, Some(&bad)).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let cfg = RunConfig {
            schema_version: SCHEMA_VERSION,
            tool_version: "0",
            command: "x".into(),
            arguments: Value::Null,
            param_set: ParamSet::Calibrated,
            params: Params::calibrated(),
            grid_n: 40,
            seed: 0,
            integrator: IntegratorOptions::default(),
            continuation: ContinuationOptions::default(),
            presets: PresetOptions::default(),
        };
        let h = cfg.sha256().unwrap();
        assert_eq!(h, cfg.clone().sha256().unwrap());
        assert_eq!(h.len(), 64);
        let other = RunConfig { seed: 1, ..cfg };
        assert_ne!(h, other.sha256().unwrap());
    }
}
