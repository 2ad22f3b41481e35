//! Flat `key = value` configuration with dotted section prefixes.
//!
//! ```text
//! # comment
//! solver.eps = 0.015
//! eval.corruptions = gaussian:0.1, cutout:0.3
//! ```
//!
//! Every key must appear in the desk preset, except `family.<id>.*` keys
//! which define synthetic series families. Later assignments override
//! earlier ones; list values are comma separated and may be empty.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const DESK_PRESET: &str = include_str!("desk.conf");

/// Differences from the desk preset for the original experiment scale.
pub const PAPER_PRESET_OVERRIDES: &str = "\
ddpm.steps = 500
ddpm.fine_tuned_steps = 15
ddpm.beta_min = 0.0001
ddpm.beta_max = 0.02
solver.outer_lr = 0.00001
solver.inner_lr = 0.00001
solver.samples = 64
solver.batch = 64
solver.eps = 0.015
solver.kappa = 0.4
solver.eta = 0.01
train.lr = 0.00001
";

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = Self::parse_text(DESK_PRESET, Path::new("<desk preset>"), false)?;
        match name {
            "desk" => {}
            "paper" => cfg.merge_text(PAPER_PRESET_OVERRIDES, Path::new("<paper preset>"))?,
            other => return Err(Error::config(format!("unknown preset {other:?}; expected desk or paper"))),
        }
        Ok(cfg)
    }

    fn parse_text(text: &str, path: &Path, strict: bool) -> Result<Self> {
        let mut cfg = Config { entries: BTreeMap::new() };
        cfg.apply_lines(text, path, strict)?;
        Ok(cfg)
    }

    fn apply_lines(&mut self, text: &str, path: &Path, strict: bool) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: "empty key".into(),
                });
            }
            if strict {
                self.check_known(k).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            }
            self.entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(())
    }

    fn check_known(&self, key: &str) -> Result<()> {
        if self.entries.contains_key(key) || key.starts_with("family.") {
            Ok(())
        } else {
            Err(Error::config(format!("unknown config key {key:?}")))
        }
    }

    /// Applies a config file on top of this one.
    pub fn merge_text(&mut self, text: &str, path: &Path) -> Result<()> {
        self.apply_lines(text, path, true)
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merge_text(&text, path)
    }

    /// Overrides one key; the key must already be known.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.check_known(key)?;
        self.entries.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// `key=value` override as given on the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {pair:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::config(format!("missing config key {key:?}")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| Error::config(format!("config key {key:?}: cannot parse {raw:?}")))
    }

    pub fn get_bool(&self, key: &str) -> Result<bool> {
        match self.raw(key)? {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            other => Err(Error::config(format!("config key {key:?}: {other:?} is not a boolean"))),
        }
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.raw(key)?;
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::config(format!("config key {key:?}: cannot parse item {s:?}")))
            })
            .collect()
    }

    /// Keys under `prefix.`, with the prefix removed.
    pub fn section(&self, prefix: &str) -> BTreeMap<&str, &str> {
        let p = format!("{prefix}.");
        self.entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&p).map(|rest| (rest, v.as_str())))
            .collect()
    }

    /// Canonical text form, one sorted `key = value` per line.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        let desk = Config::preset("desk").unwrap();
        let paper = Config::preset("paper").unwrap();
        assert_eq!(paper.get::<usize>("ddpm.steps").unwrap(), 500);
        assert_eq!(desk.get::<f64>("solver.eps").unwrap(), 0.015);
        assert!(Config::preset("huge").is_err());
    }

    #[test]
    fn overrides_and_errors() {
        let mut c = Config::preset("desk").unwrap();
        c.set_pair("solver.eps = 0.2").unwrap();
        assert_eq!(c.get::<f64>("solver.eps").unwrap(), 0.2);
        assert!(c.set_pair("solver.epz=1").is_err());
        assert!(c.set_pair("noequals").is_err());
        c.set("family.x.noise_std", "0.3").unwrap();
        assert_eq!(c.section("family.x").get("noise_std"), Some(&"0.3"));
        let err = c.merge_text("seed = 1\nbogus line\n", Path::new("t.conf")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(c.get::<usize>("solver.eps").is_err());
    }

    #[test]
    fn lists_and_bools() {
        let mut c = Config::preset("desk").unwrap();
        c.set("sweep.eps", " 0.1, 0.2 ,").unwrap();
        assert_eq!(c.get_list::<f64>("sweep.eps").unwrap(), vec![0.1, 0.2]);
        c.set("sweep.eps", "").unwrap();
        assert!(c.get_list::<f64>("sweep.eps").unwrap().is_empty());
        c.set("solver.refresh_reference", "maybe").unwrap();
        assert!(c.get_bool("solver.refresh_reference").is_err());
    }

    #[test]
    fn text_round_trip() {
        let c = Config::preset("paper").unwrap();
        let mut d = Config::preset("desk").unwrap();
        d.merge_text(&c.to_text(), Path::new("mem")).unwrap();
        assert_eq!(c, d);
    }
}
