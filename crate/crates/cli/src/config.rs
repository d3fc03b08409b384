//! Run configuration: a flat TOML file whose keys mirror the command-line
//! flags. Flags override file values, which override built-in defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use varbound::MixtureSpec;

use crate::CliError;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<String>,
    pub spec_file: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    // surface
    pub t_axis: Option<String>,
    pub x_axis: Option<String>,
    // price
    pub model: Option<String>,
    pub payoff: Option<String>,
    pub strike: Option<f64>,
    pub paths: Option<usize>,
    pub steps_per_unit: Option<usize>,
    pub epsilon: Option<f64>,
    pub hist: Option<String>,
    pub records: Option<bool>,
    // bound
    pub corridor: Option<String>,
    pub t_resolution: Option<usize>,
    pub x_resolution: Option<usize>,
    // dloc-check
    pub time: Option<f64>,
    pub samples: Option<usize>,
    pub x_bins: Option<String>,
    pub a_bins: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }
}

/// Flag value if given, else file value, else `default`.
pub fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>, default: T) -> T {
    flag.clone().or_else(|| file.clone()).unwrap_or(default)
}

pub fn pick_opt<T: Clone>(flag: &Option<T>, file: &Option<T>) -> Option<T> {
    flag.clone().or_else(|| file.clone())
}

/// Model selection: a named preset or a TOML model file.
pub fn load_spec(
    preset: Option<String>,
    spec_file: Option<PathBuf>,
) -> Result<MixtureSpec, CliError> {
    match (preset, spec_file) {
        (Some(_), Some(_)) => Err(CliError::usage(
            "give either a preset or a spec file, not both",
        )),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(&path).map_err(|e| {
                CliError::usage(format!("cannot read model {}: {e}", path.display()))
            })?;
            Ok(MixtureSpec::from_toml_str(&text)?)
        }
        (Some(name), None) => Ok(MixtureSpec::preset(&name)?),
        (None, None) => Ok(MixtureSpec::toy3()),
    }
}

/// Fully resolved settings that determine a command's output. Worker count
/// and output location are excluded: they never change results.
#[derive(Debug, Serialize)]
pub struct Resolved {
    pub command: &'static str,
    pub model: String,
    pub seed: Option<u64>,
    pub settings: toml::Table,
}

impl Resolved {
    pub fn new(command: &'static str, spec: &MixtureSpec, seed: Option<u64>) -> Self {
        Self {
            command,
            model: spec.fingerprint(),
            seed,
            settings: toml::Table::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<toml::Value>) -> &mut Self {
        self.settings.insert(key.into(), value.into());
        self
    }

    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("resolved config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Comment line opening every output.
    pub fn header(&self) -> String {
        let seed = self
            .seed
            .map_or_else(|| "none".to_string(), |s| s.to_string());
        format!(
            "# varbound {} command={} seed={seed} config_hash={}",
            varbound::VERSION,
            self.command,
            self.hash()
        )
    }
}
