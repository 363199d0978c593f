//! Run configuration: defaults, overridden by a flat `key = value` file,
//! overridden by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context};
use clap::parser::ValueSource;
use clap::ArgMatches;
use sha2::{Digest, Sha256};

use crate::Failure;

/// Keys that name files or directories. They are excluded from the run
/// configuration; the digests of their contents are recorded instead, so
/// the same inputs at different paths give identical outputs.
const PATH_KEYS: [&str; 10] =
    ["config", "corpus", "dataset", "checkpoint", "pred", "ref", "stoplist", "vocab", "groups", "out"];

/// Keys that change neither the computation nor its outputs.
const TRANSIENT_KEYS: [&str; 2] = ["workers", "deterministic"];

#[derive(Debug, Clone)]
pub struct Settings {
    command: String,
    values: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(format!("line {}: duplicate key `{key}`", i + 1));
        }
    }
    Ok(out)
}

fn raw_value(m: &ArgMatches, id: &str) -> Option<String> {
    let raw = m.get_raw(id)?;
    let parts: Vec<String> = raw.map(|s| s.to_string_lossy().into_owned()).collect();
    Some(parts.join(","))
}

impl Settings {
    /// Merges defaults, the config file named by `--config` and the flags
    /// given on the command line. File keys not accepted by the subcommand
    /// are ignored so one file can serve every subcommand.
    /// `def` must be built so that global arguments are included.
    pub fn resolve(def: &clap::Command, sub: &ArgMatches, defaults: &[(&str, &str)]) -> Result<Self, Failure> {
        let command = def.get_name();
        // clap ids use underscores, flags and config keys use dashes
        let ids: Vec<(String, String)> = def
            .get_arguments()
            .map(|a| a.get_id().as_str().to_string())
            .filter(|id| id != "help" && id != "version")
            .map(|id| {
                let key = id.replace('_', "-");
                (id, key)
            })
            .collect();
        let known: Vec<String> = ids.iter().map(|(_, k)| k.clone()).collect();
        let mut values: BTreeMap<String, String> =
            defaults.iter().filter(|(k, _)| known.iter().any(|x| x == k)).map(|(k, v)| (k.to_string(), v.to_string())).collect();
        for (id, key) in &ids {
            if sub.value_source(id) == Some(ValueSource::DefaultValue) {
                if let Some(v) = raw_value(sub, id) {
                    values.entry(key.clone()).or_insert(v);
                }
            }
        }
        if let Some(path) = sub.get_one::<PathBuf>("config") {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))
                .map_err(Failure::Data)?;
            let file = parse_config_file(&text)
                .map_err(|e| Failure::Usage(format!("config file {}: {e}", path.display())))?;
            for (k, v) in file {
                if known.contains(&k) {
                    values.insert(k, v);
                } else {
                    log::debug!("config key `{k}` not used by `{command}`");
                }
            }
        }
        for (id, key) in &ids {
            if sub.value_source(id) == Some(ValueSource::CommandLine) {
                if let Some(v) = raw_value(sub, id) {
                    values.insert(key.clone(), v);
                }
            }
        }
        Ok(Settings { command: command.to_string(), values, inputs: BTreeMap::new() })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, Failure>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| Failure::Usage(format!("invalid value `{v}` for `{key}`: {e}"))))
            .transpose()
    }

    /// A value that has a default or was checked by the parser.
    pub fn value<T: FromStr>(&self, key: &str) -> Result<T, Failure>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| Failure::Usage(format!("missing value for `--{key}`")))
    }

    pub fn flag(&self, key: &str) -> Result<bool, Failure> {
        Ok(self.get::<bool>(key)?.unwrap_or(false))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    /// A path that must be present, from the flag or the config file.
    pub fn required_path(&self, key: &str) -> Result<PathBuf, Failure> {
        self.path(key).ok_or_else(|| Failure::MissingArg { command: self.command.clone(), arg: key.to_string() })
    }

    /// Records the content digest of an input file or directory.
    pub fn record_input(&mut self, key: &str, path: &Path) -> Result<(), Failure> {
        let digest = digest_path(path).map_err(Failure::Data)?;
        self.inputs.insert(key.to_string(), digest);
        Ok(())
    }

    /// The configuration that determines the outputs: every non-path,
    /// non-transient setting plus `input.<key>` content digests.
    pub fn run_config(&self) -> BTreeMap<String, String> {
        let mut out: BTreeMap<String, String> = self
            .values
            .iter()
            .filter(|(k, _)| !PATH_KEYS.contains(&k.as_str()) && !TRANSIENT_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        out.insert("command".into(), self.command.clone());
        for (k, d) in &self.inputs {
            out.insert(format!("input.{k}"), d.clone());
        }
        out
    }

    /// Hex sha256 of the sorted `key=value` lines of [`Settings::run_config`].
    pub fn digest(&self) -> String {
        let text: String = self.run_config().iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        nomen_core::sha256_hex(text.as_bytes())
    }

    /// The run configuration with its digest, as embedded in outputs.
    pub fn meta_json(&self) -> serde_json::Value {
        serde_json::json!({
            "run_config": self.run_config(),
            "run_config_digest": self.digest(),
        })
    }
}

/// sha256 of a file, or of a directory's files (sorted by name, each
/// contributing its name and content digest).
pub fn digest_path(path: &Path) -> anyhow::Result<String> {
    let meta = std::fs::metadata(path).with_context(|| format!("reading {}", path.display()))?;
    if meta.is_file() {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(nomen_core::sha256_hex(&bytes));
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    let mut hasher = Sha256::new();
    for entry in entries.iter().filter(|p| p.is_file()) {
        let name = entry.file_name().ok_or_else(|| anyhow!("bad entry {}", entry.display()))?;
        hasher.update(name.to_string_lossy().as_bytes());
        hasher.update(b"\0");
        hasher.update(digest_path(entry)?.as_bytes());
        hasher.update(b"\n");
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_syntax() {
        let kv = parse_config_file("# comment\n tau = 3\nimm_threshold=10\n\n").unwrap();
        assert_eq!(kv["tau"], "3");
        assert_eq!(kv["imm-threshold"], "10");
        assert!(parse_config_file("tau 3").is_err());
        assert!(parse_config_file("tau=1\ntau=2").is_err());
    }
}
