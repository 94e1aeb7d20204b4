//! Key-value config files merged under command-line flags.
//!
//! A config file is TOML. Top-level keys apply to every subcommand; a
//! table named after the subcommand (`[transfer]`) overrides them. Each key
//! becomes `--key value`, so anything a flag accepts a config key accepts.
//! Flags given on the command line always win.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use toml::Value;

/// Global flags that take a value; needed to find the subcommand token.
const VALUE_GLOBALS: [&str; 2] = ["--config", "--jobs"];

/// Position of the subcommand and the `--config` path, if any.
fn scan(args: &[String]) -> (Option<usize>, Option<String>) {
    let mut config = None;
    let mut sub = None;
    let mut i = 1;
    while i < args.len() {
        let a = &args[i];
        if let Some(v) = a.strip_prefix("--config=") {
            config = Some(v.to_string());
        } else if VALUE_GLOBALS.contains(&a.as_str()) {
            if a == "--config" {
                config = args.get(i + 1).cloned();
            }
            i += 1;
        } else if sub.is_none() && !a.starts_with('-') {
            sub = Some(i);
        }
        i += 1;
    }
    (sub, config)
}

fn flag_names(args: &[String]) -> Vec<String> {
    args.iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect()
}

fn value_text(v: &Value) -> Result<Option<String>, String> {
    Ok(match v {
        Value::Boolean(false) => None,
        Value::Boolean(true) => Some(String::new()),
        Value::String(s) => Some(s.clone()),
        Value::Integer(i) => Some(i.to_string()),
        Value::Float(f) => Some(f.to_string()),
        Value::Array(items) => {
            let parts: Result<Vec<String>, String> = items
                .iter()
                .map(|x| value_text(x)?.ok_or_else(|| "booleans are not allowed in lists".to_string()))
                .collect();
            Some(parts?.join(","))
        }
        other => return Err(format!("unsupported config value `{other}`")),
    })
}

fn config_entries(path: &Path, subcommand: &str) -> Result<BTreeMap<String, Value>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let table: toml::Table = text.parse().map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = BTreeMap::new();
    let mut section = None;
    for (key, value) in table {
        match value {
            Value::Table(t) if key == subcommand => section = Some(t),
            Value::Table(_) => {}
            v => {
                out.insert(key.replace('_', "-"), v);
            }
        }
    }
    for (key, value) in section.into_iter().flatten() {
        out.insert(key.replace('_', "-"), value);
    }
    Ok(out)
}

/// Splices config-file entries in right after the subcommand, skipping any
/// key the command line already sets.
pub fn merge_config(args: Vec<String>) -> Result<Vec<String>, String> {
    let (Some(sub), Some(config)) = scan(&args) else {
        return Ok(args);
    };
    let entries = config_entries(Path::new(&config), &args[sub])?;
    let given = flag_names(&args);
    let mut injected = Vec::new();
    for (key, value) in entries {
        if given.contains(&key) || key == "config" {
            continue;
        }
        if let Some(text) = value_text(&value).map_err(|e| format!("{config}: `{key}`: {e}"))? {
            injected.push(format!("--{key}"));
            if !matches!(value, Value::Boolean(true)) {
                injected.push(text);
            }
        }
    }
    let mut merged = args[..=sub].to_vec();
    merged.extend(injected);
    merged.extend_from_slice(&args[sub + 1..]);
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn flags_win_and_sections_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            "seed = 1\nmethods = [\"logr\", \"ccs\"]\nablate = true\nquiet = false\n[transfer]\nseed = 2\nlayers = [3, 4]\n[gen-world]\nn = 9\n",
        )
        .unwrap();
        let args = argv(&format!("quirky --config {} transfer --seed 5 --store w", path.display()));
        let merged = merge_config(args).unwrap();
        assert_eq!(
            merged[3..],
            argv("transfer --ablate --layers 3,4 --methods logr,ccs --seed 5 --store w")[..]
        );
    }

    #[test]
    fn no_config_is_identity() {
        let args = argv("quirky --jobs 2 report --in runs");
        assert_eq!(merge_config(args.clone()).unwrap(), args);
    }

    #[test]
    fn bad_file_is_reported() {
        let err = merge_config(argv("quirky --config /nonexistent/x.toml report")).unwrap_err();
        assert!(err.contains("/nonexistent/x.toml"));
    }
}
