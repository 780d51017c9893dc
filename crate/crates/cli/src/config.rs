//! Option resolution: command line, then `BANDIT_GNN_OUT_DIR`, then a
//! `key = value` config file, then built-in defaults.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::Path;

use clap::{ArgMatches, Command};

use crate::error::CliError;

pub const OUT_DIR_ENV: &str = "BANDIT_GNN_OUT_DIR";

/// Parses a config file into `(key, value)` pairs. Blank lines and lines
/// starting with `#` are skipped.
pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "{}:{}: expected `key = value`",
                path.display(),
                i + 1
            )));
        };
        pairs.push((key.trim().replace('_', "-"), value.trim().to_string()));
    }
    Ok(pairs)
}

fn option_names(cmd: &Command, sub: &str) -> Vec<String> {
    let mut names: Vec<String> = cmd
        .get_arguments()
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect();
    if let Some(sc) = cmd.find_subcommand(sub) {
        names.extend(sc.get_arguments().filter_map(|a| a.get_long().map(str::to_string)));
    }
    names.retain(|n| n != "config" && n != "help" && n != "version");
    names
}

/// Rewrites `argv` so that config-file values sit right after the
/// subcommand token, ahead of any flags the user typed. Later occurrences
/// of an option override earlier ones, so flags win over the file.
pub fn merge_config(
    cmd: &Command,
    argv: &[OsString],
    sub: &str,
    pairs: &[(String, String)],
) -> Result<Vec<OsString>, CliError> {
    let known = option_names(cmd, sub);
    let env_out = std::env::var_os(OUT_DIR_ENV).is_some();
    let mut injected = Vec::new();
    for (key, value) in pairs {
        if !known.iter().any(|k| k == key) {
            return Err(CliError::Usage(format!("unknown config key `{key}` for `{sub}`")));
        }
        if key == "out-dir" && env_out {
            continue;
        }
        injected.push(OsString::from(format!("--{key}={value}")));
    }
    let pos = argv
        .iter()
        .skip(1)
        .position(|a| a == sub)
        .map(|p| p + 2)
        .ok_or_else(|| CliError::Usage(format!("subcommand `{sub}` not found in arguments")))?;
    let mut out = argv[..pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[pos..]);
    Ok(out)
}

/// Fully resolved options of a run, as `key = value` lines.
pub fn manifest(cmd: &Command, version: &str, sub: &str, sub_matches: &ArgMatches) -> String {
    let mut text = format!("# bandit-gnn {version}\n# command = {sub}\n");
    let Some(sc) = cmd.find_subcommand(sub) else {
        return text;
    };
    let mut lines = BTreeMap::new();
    for arg in cmd.get_arguments().chain(sc.get_arguments()) {
        let (Some(long), id) = (arg.get_long(), arg.get_id().as_str()) else {
            continue;
        };
        if long == "config" {
            continue;
        }
        if let Ok(Some(values)) = sub_matches.try_get_raw(id) {
            let joined: Vec<String> = values.map(|v| v.to_string_lossy().into_owned()).collect();
            lines.insert(long.to_string(), joined.join(","));
        }
    }
    for (key, value) in lines {
        text.push_str(&format!("{key} = {value}\n"));
    }
    text
}
