//! Merging a TOML config file into the argument list.
//!
//! Every key becomes `--key value` appended after the command line, unless
//! the command line already sets that flag, so flags always win. Arrays are
//! joined with commas; `true` booleans become bare switches.

use std::ffi::OsString;
use std::path::Path;

use clap::{ArgAction, Command};

#[derive(Debug)]
pub struct ConfigError(pub String);

fn usage(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// The value of `--config` in `args`, if any.
pub fn find_config(args: &[OsString]) -> Result<Option<OsString>, ConfigError> {
    let mut found = None;
    let mut i = 1;
    while i < args.len() {
        let s = args[i].to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            let v = args
                .get(i + 1)
                .ok_or_else(|| usage("--config needs a value"))?;
            found = Some(v.clone());
            i += 2;
            continue;
        }
        if let Some(v) = s.strip_prefix("--config=") {
            found = Some(OsString::from(v));
        }
        i += 1;
    }
    Ok(found)
}

fn subcommand_name<'a>(args: &[OsString], cmd: &'a Command) -> Option<&'a Command> {
    let mut i = 1;
    while i < args.len() {
        let s = args[i].to_string_lossy();
        if s == "--config" {
            i += 2;
            continue;
        }
        if !s.starts_with('-') {
            return cmd.find_subcommand(s.as_ref());
        }
        i += 1;
    }
    None
}

fn scalar(key: &str, v: &toml::Value) -> Result<String, ConfigError> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        toml::Value::Array(items) => items
            .iter()
            .map(|x| match x {
                toml::Value::Array(_) | toml::Value::Table(_) => Err(usage(format!(
                    "config key {key}: nested values are not supported"
                ))),
                other => scalar(key, other),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(|xs| xs.join(",")),
        toml::Value::Datetime(d) => Ok(d.to_string()),
        toml::Value::Table(_) => Err(usage(format!("config key {key}: unexpected table"))),
    }
}

fn given(args: &[OsString], extra: &[OsString], flag: &str) -> bool {
    args.iter().chain(extra).any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&format!("{flag}="))
    })
}

fn push_key(
    out: &mut Vec<OsString>,
    original: &[OsString],
    sub: &Command,
    key: &str,
    value: &toml::Value,
) -> Result<bool, ConfigError> {
    let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(key)) else {
        return Ok(false);
    };
    let flag = format!("--{key}");
    if given(original, out, &flag) {
        return Ok(true);
    }
    match arg.get_action() {
        ArgAction::SetTrue => match value {
            toml::Value::Boolean(true) => out.push(flag.into()),
            toml::Value::Boolean(false) => {}
            _ => return Err(usage(format!("config key {key} must be a boolean"))),
        },
        _ => {
            out.push(flag.into());
            out.push(scalar(key, value)?.into());
        }
    }
    Ok(true)
}

/// `args` with the settings of the config file at `path` appended.
pub fn merge(
    args: Vec<OsString>,
    path: &Path,
    cmd: &Command,
) -> Result<Vec<OsString>, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let Some(sub) = subcommand_name(&args, cmd) else {
        return Ok(args);
    };
    let mut extra = Vec::new();
    // The command's own table first, so it wins over top-level keys.
    for (key, value) in &table {
        if key == "config" {
            return Err(usage("config files cannot name another config"));
        }
        let toml::Value::Table(section) = value else {
            continue;
        };
        let Some(target) = cmd.find_subcommand(key) else {
            return Err(usage(format!("config table [{key}] names no command")));
        };
        if target.get_name() != sub.get_name() {
            continue;
        }
        for (k, v) in section {
            if !push_key(&mut extra, &args, sub, k, v)? {
                return Err(usage(format!("[{key}] {k}: no such flag")));
            }
        }
    }
    for (key, value) in &table {
        if matches!(value, toml::Value::Table(_)) {
            continue;
        }
        let known_anywhere = cmd.get_subcommands().any(|c| {
            c.get_arguments()
                .any(|a| a.get_long() == Some(key.as_str()))
        });
        if !known_anywhere {
            return Err(usage(format!("config key {key}: no such flag")));
        }
        push_key(&mut extra, &args, sub, key, value)?;
    }
    let mut args = args;
    args.extend(extra);
    Ok(args)
}
