//! Flat `key = value` configuration merged from defaults, an optional file and
//! command-line flags (highest precedence).

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// A recognized configuration key.
pub struct Key {
    pub name: &'static str,
    /// `None` marks a key that must be supplied.
    pub default: Option<&'static str>,
    /// Written to the resolved config; false for knobs that cannot change any
    /// output (thread count).
    pub persist: bool,
}

pub const fn key(name: &'static str, default: &'static str) -> Key {
    Key {
        name,
        default: Some(default),
        persist: true,
    }
}

pub const fn required(name: &'static str) -> Key {
    Key {
        name,
        default: None,
        persist: true,
    }
}

pub const fn transient(name: &'static str, default: &'static str) -> Key {
    Key {
        name,
        default: Some(default),
        persist: false,
    }
}

/// Parses config text. Blank lines and `#` comments are skipped; everything
/// after a `#` on a line is ignored.
pub fn parse_config(text: &str, origin: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "{origin}:{}: expected `key = value`, got `{line}`",
                i + 1
            )));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(CliError::Usage(format!("{origin}:{}: empty key", i + 1)));
        }
        out.push((k.to_owned(), v.to_owned()));
    }
    Ok(out)
}

pub struct Settings {
    keys: &'static [Key],
    values: BTreeMap<&'static str, String>,
}

impl Settings {
    /// Layers defaults, then the config file, then the flags that were given.
    pub fn resolve(
        keys: &'static [Key],
        config: Option<&Path>,
        flags: Vec<(&'static str, Option<String>)>,
    ) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for k in keys {
            if let Some(d) = k.default {
                values.insert(k.name, d.to_owned());
            }
        }
        if let Some(path) = config {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in parse_config(&text, &path.display().to_string())? {
                let Some(known) = keys.iter().find(|key| key.name == k) else {
                    return Err(CliError::Usage(format!(
                        "{}: unknown key `{k}` for this command; known keys: {}",
                        path.display(),
                        keys.iter().map(|k| k.name).collect::<Vec<_>>().join(", ")
                    )));
                };
                values.insert(known.name, v);
            }
        }
        for (name, value) in flags {
            debug_assert!(keys.iter().any(|k| k.name == name), "flag {name} has no key");
            if let Some(v) = value {
                values.insert(name, v);
            }
        }
        for k in keys {
            if !values.contains_key(k.name) {
                return Err(CliError::Usage(format!(
                    "missing required setting `{}` (flag --{} or config key)",
                    k.name,
                    k.name.replace('_', "-")
                )));
            }
        }
        Ok(Settings { keys, values })
    }

    pub fn raw(&self, name: &str) -> &str {
        self.values
            .get(name)
            .unwrap_or_else(|| panic!("setting `{name}` is not declared"))
    }

    pub fn get<T>(&self, name: &str) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.raw(name);
        raw.parse()
            .map_err(|e| CliError::Usage(format!("invalid value `{raw}` for `{name}`: {e}")))
    }

    /// `auto` maps to `None`.
    pub fn get_auto<T>(&self, name: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if self.raw(name) == "auto" {
            Ok(None)
        } else {
            self.get(name).map(Some)
        }
    }

    /// Comma-separated list; empty items are dropped.
    pub fn list(&self, name: &str) -> Vec<String> {
        self.raw(name)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect()
    }

    /// The resolved configuration in declaration order, loadable with
    /// `--config`.
    pub fn render(&self, command: &str) -> String {
        let mut out = format!("# resolved configuration for `fbp {command}`\n");
        for k in self.keys.iter().filter(|k| k.persist) {
            out.push_str(&format!("{} = {}\n", k.name, self.values[k.name]));
        }
        out
    }

    pub fn write(&self, command: &str, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.render(command))
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("{}: {e}", path.display())))
    }
}
