//! Flat dotted-key settings merged from a TOML file and command-line flags.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use toml::Value;

use crate::error::{CliError, CliResult};

const KNOWN: &[&str] = &[
    "task",
    "mesh.shape",
    "mesh.refine",
    "mesh.aspect",
    "mesh.file",
    "material.kind",
    "material.lambda",
    "material.mu",
    "material.matrix66",
    "profile.F12",
    "profile.F13",
    "profile.F23",
    "profile.t",
    "cell.penalty",
    "cell.fields",
    "solver.tol",
    "solver.constraint_tol",
    "solver.linear",
    "solver.max_iter",
    "rod.regime",
    "rod.qstar",
    "rod.profile",
    "rod.frame",
    "rod.force",
    "rod.length",
    "rod.nodes",
    "rod.method",
    "rod.tol",
    "rod.max_iter",
    "gamma.k_grid",
    "output.out",
    "output.csv",
    "output.phi",
];

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, Value>,
    from_file: BTreeSet<String>,
    base: Option<PathBuf>,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

impl Settings {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let table: toml::Table =
            text.parse().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut values = BTreeMap::new();
        flatten("", &table, &mut values);
        for key in values.keys() {
            if !KNOWN.contains(&key.as_str()) {
                return Err(CliError::Config(format!("{}: unknown key `{key}`", path.display())));
            }
        }
        let from_file = values.keys().cloned().collect();
        Ok(Self { values, from_file, base: path.parent().map(Path::to_path_buf) })
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        debug_assert!(KNOWN.contains(&key), "{key}");
        self.from_file.remove(key);
        self.values.insert(key.to_string(), value.into());
    }

    pub fn set_opt<T: Into<Value>>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    pub fn remove(&mut self, key: &str) {
        self.values.remove(key);
        self.from_file.remove(key);
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn wrong(key: &str, want: &str, v: &Value) -> CliError {
        CliError::Config(format!("`{key}` must be {want}, got {v}"))
    }

    pub fn opt_f64(&self, key: &str) -> CliResult<Option<f64>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(*x)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(Value::String(s)) => s.trim().parse().map(Some).map_err(|_| Self::wrong(key, "a number", &Value::String(s.clone()))),
            Some(v) => Err(Self::wrong(key, "a number", v)),
        }
    }

    pub fn f64(&self, key: &str, default: f64) -> CliResult<f64> {
        Ok(self.opt_f64(key)?.unwrap_or(default))
    }

    pub fn opt_usize(&self, key: &str) -> CliResult<Option<usize>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as usize)),
            Some(v) => Err(Self::wrong(key, "a nonnegative integer", v)),
        }
    }

    pub fn usize(&self, key: &str, default: usize) -> CliResult<usize> {
        Ok(self.opt_usize(key)?.unwrap_or(default))
    }

    pub fn bool(&self, key: &str) -> CliResult<bool> {
        match self.values.get(key) {
            None => Ok(false),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(v) => Err(Self::wrong(key, "a boolean", v)),
        }
    }

    pub fn opt_str(&self, key: &str) -> CliResult<Option<&str>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(Self::wrong(key, "a string", v)),
        }
    }

    pub fn str<'a>(&'a self, key: &str, default: &'a str) -> CliResult<&'a str> {
        Ok(self.opt_str(key)?.unwrap_or(default))
    }

    /// Paths in a config file are relative to the file; flags are relative to the working directory.
    pub fn opt_path(&self, key: &str) -> CliResult<Option<PathBuf>> {
        Ok(self.opt_str(key)?.map(|s| {
            let p = PathBuf::from(s);
            match &self.base {
                Some(b) if p.is_relative() && self.from_file.contains(key) => b.join(p),
                _ => p,
            }
        }))
    }

    pub fn opt_f64_list(&self, key: &str) -> CliResult<Option<Vec<f64>>> {
        let v = match self.values.get(key) {
            None => return Ok(None),
            Some(v) => v,
        };
        let items: Vec<Value> = match v {
            Value::Array(a) => a.clone(),
            Value::String(s) => s
                .split([',', ' '])
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map(Value::Float).map_err(|_| Self::wrong(key, "a list of numbers", v)))
                .collect::<CliResult<_>>()?,
            _ => return Err(Self::wrong(key, "a list of numbers", v)),
        };
        items
            .iter()
            .map(|x| match x {
                Value::Float(f) => Ok(*f),
                Value::Integer(i) => Ok(*i as f64),
                _ => Err(Self::wrong(key, "a list of numbers", v)),
            })
            .collect::<CliResult<Vec<f64>>>()
            .map(Some)
    }

    /// Resolved settings without output locations, for the meta block.
    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .values
            .iter()
            .filter(|(k, _)| !k.starts_with("output."))
            .map(|(k, v)| (k.clone(), serde_json::to_value(v).unwrap_or(serde_json::Value::Null)))
            .collect();
        serde_json::Value::Object(map)
    }
}
