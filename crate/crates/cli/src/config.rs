//! Key-value config files merged into the argument list.
//!
//! Each non-comment line is `key = value` where `key` is a long flag name
//! without dashes. A value of `true` turns on a switch and `false` leaves it
//! off. Flags given on the command line take precedence.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// `(key, value)` pairs in file order.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else { bail!("line {}: expected `key = value`", i + 1) };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || k.starts_with('-') {
            bail!("line {}: bad key `{k}`", i + 1);
        }
        out.push((k.to_string(), v.to_string()));
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
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

fn given(args: &[OsString], key: &str) -> bool {
    let flag = format!("--{key}");
    args.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&format!("{flag}="))
    })
}

/// Append config-file entries for flags missing from `args`.
pub fn merge(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else { return Ok(args) };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = args.clone();
    for (k, v) in parse(&text).with_context(|| path.display().to_string())? {
        if given(&args, &k) {
            continue;
        }
        match v.as_str() {
            "true" => out.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{k}").into());
                out.push(v.into());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn parses_pairs_and_comments() {
        let kv = parse("# comment\nseed = 7\n\nout=/tmp/x\n").unwrap();
        assert_eq!(kv, vec![("seed".into(), "7".into()), ("out".into(), "/tmp/x".into())]);
        assert!(parse("seed 7").is_err());
        assert!(parse("--seed = 7").is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        std::fs::write(&cfg, "seed = 7\nscenes = 3\nsequential = true\nno-augment = false\n").unwrap();
        let args = os(&["bevclick", "synth", "--config", cfg.to_str().unwrap(), "--seed=9", "--out", "d"]);
        let merged = merge(args.clone()).unwrap();
        assert_eq!(&merged[..args.len()], &args[..]);
        assert_eq!(&merged[args.len()..], &os(&["--scenes", "3", "--sequential"])[..]);
    }

    #[test]
    fn no_config_is_identity() {
        let args = os(&["bevclick", "eval", "--pred", "p"]);
        assert_eq!(merge(args.clone()).unwrap(), args);
    }
}
