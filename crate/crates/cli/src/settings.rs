//! Flag values that need parsing, and `--config` files.
//!
//! A config file is a JSON object holding any subset of a command's
//! parameters. Explicit flags win over the file, the file wins over
//! built-in defaults.

use std::fs;
use std::path::Path;

use rbm_gradlab::Strategy;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Parses `1..10` (inclusive), `1..=10`, `3`, or comma-separated mixtures
/// such as `1..3,5,10`. The result is sorted and deduplicated.
pub fn parse_list(text: &str) -> Result<Vec<usize>, CliError> {
    let bad = |part: &str| CliError::Usage(format!("cannot parse {part:?} in list {text:?}"));
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((lo, hi)) = part.split_once("..") {
            let hi = hi.strip_prefix('=').unwrap_or(hi);
            let lo: usize = lo.trim().parse().map_err(|_| bad(part))?;
            let hi: usize = hi.trim().parse().map_err(|_| bad(part))?;
            if lo > hi {
                return Err(bad(part));
            }
            out.extend(lo..=hi);
        } else {
            out.push(part.parse().map_err(|_| bad(part))?);
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("empty list {text:?}")));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

pub fn parse_strategies(text: &str) -> Result<Vec<Strategy>, CliError> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let s: Strategy = part
            .parse()
            .map_err(|e: rbm_gradlab::Error| CliError::Usage(e.to_string()))?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    Ok(out)
}

/// A list given either as text (`"1..10"`) or as a JSON array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ListValue {
    Text(String),
    Items(Vec<usize>),
}

impl ListValue {
    pub fn resolve(&self) -> Result<Vec<usize>, CliError> {
        match self {
            ListValue::Text(t) => parse_list(t),
            ListValue::Items(v) => {
                let mut v = v.clone();
                v.sort_unstable();
                v.dedup();
                Ok(v)
            }
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub epochs: Option<usize>,
    pub minibatch: Option<usize>,
    pub lr: Option<f64>,
    pub lr_mode: Option<rbm_gradlab::LrMode>,
    pub seed: Option<u64>,
    pub checkpoints: Option<ListValue>,
    pub jobs: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileFile {
    pub strategies: Option<Vec<Strategy>>,
    pub k: Option<ListValue>,
    pub k_baseline: Option<usize>,
    pub repeats: Option<usize>,
    pub inits: Option<usize>,
    pub subset: Option<usize>,
    pub seed: Option<u64>,
    pub pcd_lengths: Option<ListValue>,
    pub pcd_burn_in: Option<usize>,
    pub binarization: Option<rbm_gradlab::variance::Binarization>,
    pub icd_start: Option<rbm_gradlab::variance::IcdStart>,
    pub jobs: Option<usize>,
}

pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Builds a rayon pool; `None` keeps rayon's default thread count.
pub fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| CliError::Usage(format!("cannot start worker threads: {e}")))
}
