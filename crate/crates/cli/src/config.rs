//! `--config` files: JSON mirroring the global flags plus per-command options.
//!
//! ```json
//! {
//!   "net": "nets/places-alexnet.json",
//!   "weights": "places.blob",
//!   "dataset": "images/",
//!   "seed": 7,
//!   "out": "results",
//!   "threads": 4,
//!   "options": { "rf-estimate": { "k": 10, "units": ["conv5:3", "conv5:9"] } }
//! }
//! ```
//!
//! Relative paths are resolved against the config file's directory. Values
//! are merged as extra command-line flags, skipped when the flag is already
//! present, so explicit flags always win.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;
use serde_json::Value;

use crate::data::BUILTIN_NETS;

/// Per-command options whose values are file paths.
const PATH_OPTIONS: &[&str] = &[
    "image", "segments", "names", "tags", "thresholds", "truth", "mapping", "index", "records", "store",
];

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub net: Option<String>,
    pub weights: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    /// Subcommand name to `{flag: value}`.
    #[serde(default)]
    pub options: BTreeMap<String, BTreeMap<String, Value>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.weights.as_mut().map(resolve);
        cfg.dataset.as_mut().map(resolve);
        cfg.out.as_mut().map(resolve);
        if let Some(net) = &mut cfg.net {
            if !BUILTIN_NETS.contains(&net.as_str()) && Path::new(net).is_relative() {
                *net = base.join(&*net).to_string_lossy().into_owned();
            }
        }
        for (cmd, opts) in &mut cfg.options {
            for (key, value) in opts.iter_mut() {
                if value.is_object() || value.is_null() {
                    bail!("config option {cmd}.{key}: expected a scalar or a list");
                }
                if let (true, Value::String(s)) = (PATH_OPTIONS.contains(&key.as_str()), &mut *value) {
                    if Path::new(s.as_str()).is_relative() {
                        *s = base.join(&*s).to_string_lossy().into_owned();
                    }
                }
            }
        }
        Ok(cfg)
    }

    /// `argv` with config values appended for every flag it does not set.
    pub fn merge_into(&self, argv: &[OsString], command: &str) -> Vec<OsString> {
        let mut out = argv.to_vec();
        let mut add = |flag: &str, value: Option<String>| {
            let long = format!("--{flag}");
            let prefix = format!("{long}=");
            let present = argv.iter().any(|a| {
                let a = a.to_string_lossy();
                a == long || a.starts_with(&prefix)
            });
            if !present {
                out.push(long.into());
                if let Some(v) = value {
                    out.push(v.into());
                }
            }
        };
        let path = |p: &PathBuf| Some(p.to_string_lossy().into_owned());
        if let Some(v) = &self.net {
            add("net", Some(v.clone()));
        }
        if let Some(v) = &self.weights {
            add("weights", path(v));
        }
        if let Some(v) = &self.dataset {
            add("dataset", path(v));
        }
        if let Some(v) = self.seed {
            add("seed", Some(v.to_string()));
        }
        if let Some(v) = &self.out {
            add("out", path(v));
        }
        if let Some(v) = self.threads {
            add("threads", Some(v.to_string()));
        }
        for (key, value) in self.options.get(command).into_iter().flatten() {
            match value {
                Value::Bool(true) => add(key, None),
                Value::Bool(false) => {}
                Value::String(s) => add(key, Some(s.clone())),
                Value::Array(items) => {
                    let joined: Vec<String> = items.iter().map(scalar).collect();
                    add(key, Some(joined.join(",")));
                }
                other => add(key, Some(scalar(other))),
            }
        }
        out
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
