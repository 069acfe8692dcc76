pub mod correlate;
pub mod demo;
pub mod equivariance;
pub mod flops;
pub mod gradcheck;
pub mod scale;

use std::path::PathBuf;

use sepc_core::config::{parse_config, ConfigMap};
use sepc_core::Result;

/// Load the optional --config file.
pub fn load_config(path: &Option<PathBuf>) -> Result<ConfigMap> {
    match path {
        Some(p) => parse_config(&std::fs::read_to_string(p)?),
        None => Ok(ConfigMap::default()),
    }
}

/// Seed precedence: explicit flag, then the config file, then 0.
pub fn resolve_seed(flag: Option<u64>, config: &ConfigMap) -> Result<u64> {
    Ok(match flag {
        Some(s) => s,
        None => config.seed()?.unwrap_or(0),
    })
}
