//! Flat `key = value` config files.
//!
//! Keys are long flag names without the leading dashes; `#` starts a comment.
//! The file's entries are spliced in right after the subcommand, so any flag
//! given on the command line later in the argument list wins.

use std::ffi::OsString;
use std::path::Path;

use crate::CliError;

pub fn parse_config(text: &str, origin: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "{}:{}: expected key = value",
                origin.display(),
                i + 1
            )));
        };
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(CliError::Usage(format!(
                "{}:{}: invalid key '{}'",
                origin.display(),
                i + 1,
                k.trim()
            )));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

/// Argument list with the `--config` file's entries inserted after the
/// subcommand; unchanged when no config is given.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    if args.len() < 2 {
        return Ok(args);
    }
    let Some(path) = config_path(&args[2..]) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out: Vec<OsString> = args[..2].to_vec();
    for (k, v) in parse_config(&text, path)? {
        out.push(format!("--{k}").into());
        out.push(v.into());
    }
    out.extend(args[2..].iter().cloned());
    Ok(out)
}
