//! `--config` support: the file's values are spliced into the argument list
//! right after the subcommand name, ahead of the user's own flags, so the
//! command line wins and clap still does all validation.

use std::path::Path;

use anyhow::{bail, Context};

const SUBCOMMANDS: [&str; 6] = ["gen-task", "run", "compare", "train-irl", "serve", "session"];

fn config_path(argv: &[String]) -> Option<String> {
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

fn render(value: &toml::Value) -> anyhow::Result<String> {
    Ok(match value {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Array(items) => items.iter().map(render).collect::<anyhow::Result<Vec<_>>>()?.join(","),
        other => bail!("unsupported config value {other}"),
    })
}

/// Flags for `subcommand` from a parsed config document.
pub fn config_flags(doc: &toml::Table, subcommand: &str) -> anyhow::Result<Vec<String>> {
    let mut merged = toml::Table::new();
    for (k, v) in doc {
        if !v.is_table() {
            merged.insert(k.clone(), v.clone());
        }
    }
    if let Some(toml::Value::Table(section)) = doc.get(subcommand) {
        for (k, v) in section {
            merged.insert(k.clone(), v.clone());
        }
    }
    let mut flags = Vec::new();
    for (k, v) in merged {
        let flag = format!("--{}", k.replace('_', "-"));
        match v {
            toml::Value::Boolean(true) => flags.push(flag),
            toml::Value::Boolean(false) => {}
            other => {
                flags.push(flag);
                flags.push(render(&other).with_context(|| format!("config key '{k}'"))?);
            }
        }
    }
    Ok(flags)
}

pub fn merge_config(mut argv: Vec<String>) -> anyhow::Result<Vec<String>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let Some(pos) = argv.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(Path::new(&path)).with_context(|| format!("reading config {path}"))?;
    let doc: toml::Table = text.parse().with_context(|| format!("parsing config {path}"))?;
    let flags = config_flags(&doc, &argv[pos])?;
    argv.splice(pos + 1..pos + 1, flags);
    Ok(argv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn section_overrides_top_level() {
        let doc: toml::Table = "seed = 1\nforce = true\n[run]\nseed = 2\nbudgets = [25, 500]\n".parse().unwrap();
        let flags = config_flags(&doc, "run").unwrap();
        assert_eq!(flags, ["--budgets", "25,500", "--force", "--seed", "2"]);
        let flags = config_flags(&doc, "gen-task").unwrap();
        assert_eq!(flags, ["--force", "--seed", "1"]);
    }

    #[test]
    fn splices_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 9\n").unwrap();
        let argv: Vec<String> = ["envaware", "--config", p.to_str().unwrap(), "run", "--seed", "3"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let merged = merge_config(argv).unwrap();
        assert_eq!(&merged[3..], ["run", "--seed", "9", "--seed", "3"]);
    }
}
