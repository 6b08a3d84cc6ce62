//! `key = value` config files, merged into the command line as flags.
//!
//! File entries are inserted right after the subcommand, so any flag given
//! on the command line comes later and wins.

use crate::error::{Error, Result};

/// Parsed `key = value` pairs in file order. Blank lines and `#` comments
/// are skipped; keys may use `_` or `-`.
pub fn parse_config(text: &str, context: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(context, i + 1, format!("expected `key = value`, got `{line}`")))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(Error::format(context, i + 1, "empty key"));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// How a config key maps onto the command's flags.
pub struct FlagSpec {
    pub name: String,
    /// Takes a value (otherwise a boolean switch).
    pub takes_value: bool,
}

/// Turns config entries into flags, rejecting keys the command lacks.
pub fn entries_to_args(entries: &[(String, String)], flags: &[FlagSpec], context: &str) -> Result<Vec<String>> {
    let mut args = Vec::new();
    for (key, value) in entries {
        let spec = flags.iter().find(|f| &f.name == key).ok_or_else(|| {
            let mut valid: Vec<&str> = flags.iter().map(|f| f.name.as_str()).collect();
            valid.sort_unstable();
            Error::usage(format!(
                "{context}: invalid config key `{key}`; valid keys: {}",
                valid.join(", ")
            ))
        })?;
        if spec.takes_value {
            args.push(format!("--{key}"));
            args.push(value.clone());
        } else {
            match value.as_str() {
                "true" | "1" | "yes" | "" => args.push(format!("--{key}")),
                "false" | "0" | "no" => {}
                other => {
                    return Err(Error::usage(format!(
                        "{context}: `{key}` is a switch; expected true or false, got `{other}`"
                    )))
                }
            }
        }
    }
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags() -> Vec<FlagSpec> {
        vec![
            FlagSpec {
                name: "seed".into(),
                takes_value: true,
            },
            FlagSpec {
                name: "tune".into(),
                takes_value: false,
            },
            FlagSpec {
                name: "learning-rate".into(),
                takes_value: true,
            },
        ]
    }

    #[test]
    fn parses_comments_and_underscores() {
        let e = parse_config("# run\nseed = 7\n\nlearning_rate=0.01 # fast\n", "c").unwrap();
        assert_eq!(e, vec![("seed".into(), "7".into()), ("learning-rate".into(), "0.01".into())]);
    }

    #[test]
    fn missing_equals_reports_line() {
        let err = parse_config("seed = 1\nbogus\n", "c.cfg").unwrap_err().to_string();
        assert!(err.contains("c.cfg: line 2"), "{err}");
    }

    #[test]
    fn switches_and_values() {
        let e = vec![("tune".into(), "true".into()), ("seed".into(), "3".into())];
        assert_eq!(entries_to_args(&e, &flags(), "c").unwrap(), vec!["--tune", "--seed", "3"]);
        let off = vec![("tune".into(), "false".into())];
        assert!(entries_to_args(&off, &flags(), "c").unwrap().is_empty());
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let e = vec![("sed".into(), "3".into())];
        let err = entries_to_args(&e, &flags(), "c").unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("valid keys: learning-rate, seed, tune"), "{err}");
    }
}
