//! Flat `key = value` config files merged beneath explicit flags.
//!
//! A bare key (`overlap = 0.25`) applies to every subcommand that has a flag
//! of that name; a qualified key (`infer.overlap = 0.25`) applies to one
//! subcommand only. Boolean flags take `true`/`false`. Lines starting with
//! `#` are comments.

use std::collections::BTreeMap;

use clap::{ArgAction, Command};

use crate::CliError;

pub fn parse(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value, got {line:?}", n + 1)))?;
        let k = k.trim().replace('_', "-");
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Usage(format!("config line {}: duplicate key {k:?}", n + 1)));
        }
    }
    Ok(out)
}

/// Value of `--config` in `argv`, if present.
pub fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

fn flag_given(argv: &[String], long: &str) -> bool {
    let flag = format!("--{long}");
    let eq = format!("{flag}=");
    argv.iter().any(|a| a == &flag || a.starts_with(&eq))
}

/// Appends config-file settings for the selected subcommand that were not
/// given on the command line.
pub fn merge(argv: &[String], cmd: &Command, config: &BTreeMap<String, String>) -> Result<Vec<String>, CliError> {
    let sub_name = argv.iter().skip(1).find(|a| !a.starts_with('-') && cmd.find_subcommand(a.as_str()).is_some());
    let sub = sub_name.and_then(|n| cmd.find_subcommand(n.as_str()));
    let mut out = argv.to_vec();
    for (key, value) in config {
        let (scope, name) = match key.split_once('.') {
            Some((s, n)) => (Some(s), n),
            None => (None, key.as_str()),
        };
        if let Some(s) = scope {
            if Some(s) != sub.map(|c| c.get_name()) {
                if cmd.find_subcommand(s).is_none() {
                    return Err(CliError::Usage(format!("config key {key:?} names an unknown subcommand")));
                }
                continue;
            }
        }
        if name == "config" {
            return Err(CliError::Usage("config files cannot include other config files".into()));
        }
        let arg = sub
            .and_then(|c| c.get_arguments().find(|a| a.get_long() == Some(name)))
            .or_else(|| cmd.get_arguments().find(|a| a.get_long() == Some(name)));
        let Some(arg) = arg else {
            if scope.is_some() {
                return Err(CliError::Usage(format!("config key {key:?} is not a flag of that subcommand")));
            }
            continue;
        };
        if flag_given(argv, name) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" | "1" | "yes" => out.push(format!("--{name}")),
                "false" | "0" | "no" => {}
                _ => return Err(CliError::Usage(format!("config key {key:?} expects true or false"))),
            },
            ArgAction::Append => {
                for v in value.split(';').map(str::trim).filter(|v| !v.is_empty()) {
                    out.push(format!("--{name}"));
                    out.push(v.to_string());
                }
            }
            _ => {
                out.push(format!("--{name}"));
                out.push(value.clone());
            }
        }
    }
    Ok(out)
}
