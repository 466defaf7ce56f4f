//! Plain-text key-value configuration files.
//!
//! Format: one `key value` pair per line; `#` starts a comment. A
//! `preset <name>` line expands to a named bundle of model and training
//! defaults; later keys override preset values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Parsed key-value pairs, insertion-ordered by key for canonical output.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut raw: Vec<(String, String)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| Error::data(path, lineno + 1, format!("expected `key value`, got '{line}'")))?;
            raw.push((key.trim().to_string(), value.trim().to_string()));
        }

        let mut map = BTreeMap::new();
        // Expand presets first so explicit keys override them.
        for (k, v) in &raw {
            if k == "preset" {
                for (pk, pv) in preset(v)? {
                    map.insert(pk.to_string(), pv.to_string());
                }
            }
        }
        for (k, v) in raw {
            if k != "preset" {
                map.insert(k, v);
            }
        }
        Ok(KeyValues { map })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value '{v}' for key '{key}'"))),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Canonical serialization: sorted `key value` lines.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            out.push_str(k);
            out.push(' ');
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

/// Named hyperparameter bundles. Values follow the published training
/// table: kappa_star, learning rate, dropout, weight decay, gradient norm
/// clip 0.25, and the epsilon ramp length per system.
fn preset(name: &str) -> Result<Vec<(&'static str, &'static str)>> {
    let common_imdb: Vec<(&'static str, &'static str)> = vec![
        ("classes", "2"),
        ("dropout", "0.2"),
        ("kappa_star", "0.8"),
        ("lr", "1e-3"),
        ("weight_decay", "1e-4"),
        ("grad_clip", "0.25"),
    ];
    let common_snli: Vec<(&'static str, &'static str)> = vec![
        ("classes", "3"),
        ("dropout", "0.1"),
        ("kappa_star", "0.5"),
        ("grad_clip", "0.25"),
    ];
    let mut out = Vec::new();
    match name {
        "imdb_bow" => {
            out.extend(common_imdb);
            out.extend([
                ("arch", "bow"),
                ("hidden_dim", "100"),
                ("ff_layers", "2"),
                ("t_init", "40"),
            ]);
        }
        "imdb_cnn" => {
            out.extend(common_imdb);
            out.extend([
                ("arch", "cnn"),
                ("hidden_dim", "100"),
                ("ff_layers", "2"),
                ("kernel_width", "3"),
                ("t_init", "40"),
            ]);
        }
        "imdb_lstm" => {
            out.extend(common_imdb);
            out.extend([
                ("arch", "lstm"),
                ("hidden_dim", "100"),
                ("ff_layers", "2"),
                ("lstm_bidirectional", "true"),
                ("lstm_pool", "mean"),
                ("t_init", "20"),
            ]);
        }
        "snli_bow" => {
            out.extend(common_snli);
            out.extend([
                ("arch", "bow"),
                ("hidden_dim", "100"),
                ("ff_layers", "3"),
                ("lr", "5e-4"),
                ("weight_decay", "1e-4"),
                ("t_init", "35"),
            ]);
        }
        "snli_attn" => {
            out.extend(common_snli);
            out.extend([
                ("arch", "attn"),
                ("hidden_dim", "300"),
                ("ff_layers", "2"),
                ("lr", "1e-4"),
                ("weight_decay", "0"),
                ("t_init", "50"),
            ]);
        }
        "memory_lstm" => {
            out.extend([
                ("arch", "lstm"),
                ("classes", "2"),
                ("hidden_dim", "300"),
                ("ff_layers", "2"),
                ("lstm_bidirectional", "false"),
                ("lstm_pool", "final"),
                ("dropout", "0"),
                ("kappa_star", "0.5"),
                ("lr", "1e-3"),
                ("weight_decay", "0"),
                ("grad_clip", "0.25"),
                ("t_init", "50"),
            ]);
        }
        other => {
            return Err(Error::Config(format!("unknown preset '{other}'")));
        }
    }
    Ok(out)
}
