//! `--config` files: flat `key = value` lines whose keys are flag names.

use std::fs;
use std::path::Path;

use crate::error::CliError;

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// keys may be written with or without the leading dashes.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("config line {}: expected key = value", i + 1)))?;
        let key = key.trim().trim_start_matches('-');
        if key.is_empty() {
            return Err(CliError::usage(format!("config line {}: empty key", i + 1)));
        }
        out.push((key.to_owned(), value.trim().to_owned()));
    }
    Ok(out)
}

fn mentions(args: &[String], key: &str) -> bool {
    let flag = format!("--{key}");
    args.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
}

/// Removes `--config <path>` from `args` and appends the file's settings
/// for every key the command line does not already set. Boolean flags are
/// written `key = true` or `key = false`.
pub fn expand(args: &[String]) -> Result<Vec<String>, CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut path = None;
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            path = Some(it.next().ok_or_else(|| CliError::usage("--config needs a path"))?.clone());
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_owned());
        } else {
            rest.push(a.clone());
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let text = fs::read_to_string(Path::new(&path)).map_err(|e| CliError::data(format!("{path}: {e}")))?;
    let from_file = parse(&text)?;
    let mut extra = Vec::new();
    for (key, value) in from_file {
        if mentions(&rest, &key) {
            continue;
        }
        match value.as_str() {
            "true" => extra.push(format!("--{key}")),
            "false" => {}
            _ => {
                extra.push(format!("--{key}"));
                extra.push(value);
            }
        }
    }
    rest.extend(extra);
    Ok(rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_comments_and_dashes() {
        let kv = parse("# run\nepochs = 5\n\n--loss=sce\n").unwrap();
        assert_eq!(kv, [("epochs".into(), "5".into()), ("loss".into(), "sce".into())]);
        assert!(parse("nonsense").is_err());
    }

    #[test]
    fn command_line_wins() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "epochs = 5\nloss = ce\npaper-scale = true\nno-batchnorm = false\n").unwrap();
        let args = strings(&["train", "--config", cfg.to_str().unwrap(), "--loss=sce"]);
        let out = expand(&args).unwrap();
        assert_eq!(out, strings(&["train", "--loss=sce", "--epochs", "5", "--paper-scale"]));
        assert_eq!(expand(&strings(&["train"])).unwrap(), strings(&["train"]));
        assert!(expand(&strings(&["train", "--config", "/no/such/file"])).is_err());
    }
}
