//! Flat `key=value` config files merged under command-line flags.

use std::ffi::OsString;

use clap::parser::ValueSource;
use clap::{ArgMatches, Command};

/// Parses `key=value` lines. Blank lines and lines starting with `#` are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value, got '{line}'", n + 1))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(format!("config line {}: empty key", n + 1));
        }
        entries.push((key.to_string(), value.trim().to_string()));
    }
    Ok(entries)
}

/// Extra arguments that apply `entries` to subcommand `sub` wherever the
/// command line did not already set the same option.
pub fn as_args(sub: &Command, matches: &ArgMatches, entries: &[(String, String)]) -> Result<Vec<OsString>, String> {
    let mut extra = Vec::new();
    for (key, value) in entries {
        let id = key.replace('-', "_");
        let arg = sub
            .get_arguments()
            .find(|a| a.get_id() == id.as_str() && a.get_long().is_some() && !a.is_positional())
            .filter(|_| id != "config" && id != "print_config")
            .ok_or_else(|| format!("unknown config key '{key}' for '{}'", sub.get_name()))?;
        if matches.value_source(&id) == Some(ValueSource::CommandLine) {
            continue;
        }
        let flag = format!("--{}", arg.get_long().expect("checked above"));
        if arg.get_action().takes_values() {
            extra.push(flag.into());
            extra.push(value.into());
        } else {
            let on: bool = value
                .parse()
                .map_err(|_| format!("config key '{key}' expects true or false, got '{value}'"))?;
            if on {
                extra.push(flag.into());
            }
        }
    }
    Ok(extra)
}

/// Resolved options of `sub` as `key=value` lines, in declaration order.
pub fn render(sub: &Command, matches: &ArgMatches) -> String {
    let mut out = String::new();
    for arg in sub.get_arguments() {
        let id = arg.get_id().as_str();
        if arg.is_positional() || matches!(id, "config" | "print_config" | "help" | "version") {
            continue;
        }
        let Ok(Some(raw)) = matches.try_get_raw(id) else { continue };
        let values: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
        if let Some(long) = arg.get_long() {
            out.push_str(&format!("{long}={}\n", values.join(",")));
        }
    }
    out
}
