//! Layered run configuration: profile defaults, then the TOML file, then flags.

use std::path::Path;

use rpred_core::config::RunConfig;
use toml::{Table, Value};

use crate::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    /// d = 128, batch 32.
    Full,
    /// d = 64, batch 64.
    Desk,
}

impl Profile {
    pub fn defaults(self) -> RunConfig {
        match self {
            Profile::Full => RunConfig::default(),
            Profile::Desk => RunConfig::desk(),
        }
    }
}

fn to_table(cfg: &RunConfig) -> CliResult<Table> {
    match Value::try_from(cfg).map_err(|e| CliError::Config(e.to_string()))? {
        Value::Table(t) => Ok(t),
        _ => unreachable!("structs serialize to tables"),
    }
}

/// Recursively overlays `top` onto `base`; tables merge, anything else replaces.
pub fn merge(base: &mut Table, top: Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// `base` with the contents of the TOML file at `path` (if any) on top.
pub fn layered(base: &RunConfig, path: Option<&Path>) -> CliResult<RunConfig> {
    let Some(path) = path else { return Ok(base.clone()) };
    let text = std::fs::read_to_string(path)?;
    let file: Table = text.parse().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut table = to_table(base)?;
    merge(&mut table, file);
    Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn to_toml(cfg: &RunConfig) -> CliResult<String> {
    toml::to_string_pretty(cfg).map_err(|e| CliError::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_only_what_it_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 5\n[model.proposer]\nmodes = 3\n").unwrap();
        let cfg = layered(&Profile::Desk.defaults(), Some(&path)).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.model.proposer.modes, 3);
        assert_eq!(cfg.model.proposer.d, 64);
        assert_eq!(cfg.training.batch_size, 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[model]\nwidth = 3\n").unwrap();
        assert!(layered(&RunConfig::default(), Some(&path)).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = Profile::Full.defaults();
        let text = to_toml(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
