//! Flat `key = value` run configuration.
//!
//! Training keys appear bare (`iterations = 5000`, `render.n_fine = 64`),
//! model keys under `model.` (`model.field.width = 128`). Lines starting
//! with `#` and blank lines are ignored. Lists are comma-separated.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::error::{config, Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub model: ModelConfig,
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        Value::Array(a) => out.push((
            prefix.to_string(),
            a.iter().map(leaf_text).collect::<Vec<_>>().join(", "),
        )),
        leaf => out.push((prefix.to_string(), leaf_text(leaf))),
    }
}

fn leaf_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Parse `text` in the shape of `like`.
fn parse_like(like: &Value, text: &str) -> Option<Value> {
    let text = text.trim();
    match like {
        Value::Bool(_) => text.parse().ok().map(Value::Bool),
        Value::Number(n) if n.is_u64() => text.parse::<u64>().ok().map(|x| Value::Number(x.into())),
        Value::Number(n) if n.is_i64() => text.parse::<i64>().ok().map(|x| Value::Number(x.into())),
        Value::Number(_) => text.parse::<f64>().ok().and_then(Number::from_f64).map(Value::Number),
        Value::String(_) => Some(Value::String(text.to_string())),
        Value::Array(a) => {
            let elem = a.first().cloned().unwrap_or(Value::Number(Number::from_f64(0.0)?));
            text.split(',')
                .map(|t| parse_like(&elem, t))
                .collect::<Option<Vec<_>>>()
                .map(Value::Array)
        }
        _ => None,
    }
}

fn lookup<'a>(root: &'a mut Map<String, Value>, key: &str) -> Option<&'a mut Value> {
    let mut parts = key.split('.');
    let mut cur = root.get_mut(parts.next()?)?;
    for p in parts {
        cur = cur.as_object_mut()?.get_mut(p)?;
    }
    (!cur.is_object()).then_some(cur)
}

impl RunConfig {
    /// Every settable key with its current value, in a stable order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let v = serde_json::to_value(self).expect("config serializes");
        let mut out = Vec::new();
        flatten("", &v, &mut out);
        out
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut v = serde_json::to_value(&*self).expect("config serializes");
        let root = v.as_object_mut().expect("config is an object");
        let slot = lookup(root, key).ok_or_else(|| config(format!("unknown config key `{key}`")))?;
        *slot = parse_like(slot, value).ok_or_else(|| config(format!("bad value `{value}` for `{key}`")))?;
        *self = serde_json::from_value(v).map_err(|e| config(format!("`{key}`: {e}")))?;
        Ok(())
    }

    /// Apply every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(origin, format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v.trim()).map_err(|e| match e {
                Error::Config(msg) => Error::format(origin, format!("line {}: {msg}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text, origin)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.encoder.validate()?;
        self.model.field.validate()
    }
}
