//! `--config` files: a flat JSON object whose keys are flag names. Values are
//! spliced into the argument list after the subcommand unless the flag is
//! already given on the command line.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, Context};
use serde_json::Value;

/// Path given with `--config`, if any.
pub fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn flag_name(key: &str) -> String {
    key.trim_start_matches('-').replace('_', "-")
}

fn given(argv: &[OsString], flag: &str) -> bool {
    let long = format!("--{flag}");
    let with_value = format!("--{flag}=");
    argv.iter().any(|a| {
        let s = a.to_string_lossy();
        s == long || s.starts_with(&with_value)
    })
}

fn scalar(key: &str, v: &Value) -> anyhow::Result<String> {
    Ok(match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        _ => bail!("config key `{key}`: expected a string, number or boolean"),
    })
}

/// Argument list with the config file's flags inserted.
pub fn expand(argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let Value::Object(map) = value else {
        bail!("config {} must hold a JSON object", path.display());
    };

    let mut extra: Vec<OsString> = Vec::new();
    for (key, v) in &map {
        let flag = flag_name(key);
        if flag == "config" || given(&argv, &flag) {
            continue;
        }
        match v {
            Value::Bool(true) => extra.push(format!("--{flag}").into()),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                for item in items {
                    extra.push(format!("--{flag}").into());
                    extra.push(scalar(key, item)?.into());
                }
            }
            other => {
                extra.push(format!("--{flag}").into());
                extra.push(scalar(key, other)?.into());
            }
        }
    }

    // the subcommand is the first bare word after the program name that is
    // not the value of --config
    let mut at = None;
    let mut i = 1;
    while i < argv.len() {
        let s = argv[i].to_string_lossy();
        if s == "--config" {
            i += 2;
            continue;
        }
        if !s.starts_with('-') {
            at = Some(i + 1);
            break;
        }
        i += 1;
    }
    let Some(at) = at else {
        return Ok(argv);
    };
    let mut out = argv[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}
