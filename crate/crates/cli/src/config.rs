use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Seed from the command line, else `CTRM_PLAN_SEED`, else the config file.
pub fn seed_fallback(cli: Option<u64>) -> Result<Option<u64>, CliError> {
    if cli.is_some() {
        return Ok(cli);
    }
    match std::env::var("CTRM_PLAN_SEED") {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| CliError::Usage(format!("CTRM_PLAN_SEED=`{s}` is not a seed"))),
        Err(_) => Ok(None),
    }
}

/// Overlay the explicitly given flags on the config file section for
/// `command`, then fill the rest from the resolved type's defaults.
pub fn resolve<C: Serialize, R: DeserializeOwned>(cli: &C, file: Option<&Path>, command: &str) -> Result<R, CliError> {
    let mut base = Map::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Op(anyhow::anyhow!("{}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let section = v.get(command).cloned().unwrap_or(v);
        match section {
            Value::Object(m) => base = m,
            _ => return Err(CliError::Usage(format!("{}: expected a JSON object", path.display()))),
        }
    }
    if let Value::Object(flags) = serde_json::to_value(cli).expect("flags serialize") {
        for (k, v) in flags {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| CliError::Usage(format!("invalid {command} configuration: {e}")))
}
