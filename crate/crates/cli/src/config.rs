//! `key = value` config files, merged into the argument list as flags.

use std::collections::HashSet;
use std::ffi::OsString;
use std::path::Path;

use clap::CommandFactory;

use crate::args::Cli;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; keys may be written with or without a leading `--`.
pub fn parse(text: &str) -> Result<Vec<Entry>, String> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value, got {line:?}", i + 1))?;
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        entries.push(Entry {
            line: i + 1,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(entries)
}

/// Value of `--config` in raw arguments, and the position of the subcommand.
fn scan(args: &[OsString]) -> (Option<OsString>, Option<usize>) {
    let mut config = None;
    let mut subcommand = None;
    let mut i = 1;
    while i < args.len() {
        let arg = args[i].to_string_lossy();
        if arg == "--config" {
            config = args.get(i + 1).cloned();
            i += 2;
            continue;
        }
        if let Some(v) = arg.strip_prefix("--config=") {
            config = Some(v.into());
        } else if subcommand.is_none() && !arg.starts_with('-') {
            subcommand = Some(i);
        }
        i += 1;
    }
    (config, subcommand)
}

/// Long flag names given explicitly after the subcommand.
fn explicit_flags(args: &[OsString]) -> HashSet<String> {
    args.iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split_once('=').map_or(a, |(k, _)| k).to_string())
        .collect()
}

/// Inserts the entries of the `--config` file, if any, right after the
/// subcommand. Keys also given on the command line are dropped, so explicit
/// flags always win. Keys unknown to the subcommand are an error.
pub fn expand_args(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let (config, sub_pos) = scan(&args);
    let (Some(path), Some(sub_pos)) = (config, sub_pos) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| format!("cannot read config file {}: {e}", Path::new(&path).display()))?;
    let entries = parse(&text)?;

    let sub_name = args[sub_pos].to_string_lossy().into_owned();
    let root = Cli::command();
    let Some(sub) = root.find_subcommand(&sub_name) else {
        return Ok(args);
    };
    let explicit = explicit_flags(&args[sub_pos + 1..]);

    let mut injected = Vec::new();
    for e in entries {
        if e.key == "config" || explicit.contains(&e.key) {
            continue;
        }
        let arg = sub
            .get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(e.key.as_str()))
            .ok_or_else(|| format!("config line {}: unknown key {:?} for {sub_name}", e.line, e.key))?;
        if arg.get_action().takes_values() {
            injected.push(OsString::from(format!("--{}={}", e.key, e.value)));
        } else {
            match e.value.as_str() {
                "true" | "1" | "yes" => injected.push(OsString::from(format!("--{}", e.key))),
                "false" | "0" | "no" => {}
                other => {
                    return Err(format!(
                        "config line {}: {:?} expects true or false, got {other:?}",
                        e.line, e.key
                    ))
                }
            }
        }
    }

    let mut out = args;
    out.splice(sub_pos + 1..sub_pos + 1, injected);
    Ok(out)
}
