//! Experiment description files (TOML or JSON, chosen by extension).

use std::path::{Path, PathBuf};

use rcpolar::channels::ChannelSpec;
use rcpolar::construction::{DEFAULT_DELTA, DEFAULT_MU};
use rcpolar::ratecompat::{parse_rate, Rate, SchemeParams};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ChannelEntry {
    File { file: PathBuf },
    Spec(ChannelSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RateValue {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub channels: Vec<ChannelEntry>,
    pub k: Option<u64>,
    #[serde(default)]
    pub rates: Vec<RateValue>,
    /// Block length for `construct`.
    pub m: Option<usize>,
    /// Allow a non-power-of-two `m` in `construct` by puncturing.
    #[serde(default)]
    pub puncture: bool,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_mu")]
    pub mu: usize,
    #[serde(default = "default_t_max")]
    pub t_max: u32,
    #[serde(default = "default_puncture_trials")]
    pub puncture_trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub trials: Option<usize>,
    /// 1-based scheme channel used as the link in `simulate`.
    pub true_channel: Option<usize>,
    #[serde(default)]
    pub fer_targets: Vec<f64>,
    /// Existing scheme file for `simulate` / `align-report`.
    pub scheme: Option<PathBuf>,
    /// Default output path when `--out` is not given.
    pub output: Option<PathBuf>,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_mu() -> usize {
    DEFAULT_MU
}
fn default_t_max() -> u32 {
    8
}
fn default_puncture_trials() -> usize {
    16
}

/// A parsed config with its source text and the directory relative paths
/// resolve against.
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub text: String,
    pub base: PathBuf,
}

fn parse_by_extension<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, CliError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "toml" => toml::from_str(text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display()))),
        "json" => serde_json::from_str(text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display()))),
        _ => Err(CliError::Validation(format!(
            "{}: unknown config format (use .toml or .json)",
            path.display()
        ))),
    }
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = read_file(path)?;
    let config = parse_by_extension(path, &text)?;
    Ok(LoadedConfig {
        config,
        text,
        base: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn channels(&self) -> Result<Vec<ChannelSpec>, CliError> {
        let c = &self.config;
        if c.channels.is_empty() {
            return Err(CliError::Validation("no channels given".into()));
        }
        c.channels
            .iter()
            .map(|entry| {
                let spec = match entry {
                    ChannelEntry::Spec(s) => s.clone(),
                    ChannelEntry::File { file } => {
                        let path = self.resolve(file);
                        if !path.is_file() {
                            return Err(CliError::Validation(format!(
                                "channel file not found: {}",
                                path.display()
                            )));
                        }
                        parse_by_extension(&path, &read_file(&path)?)?
                    }
                };
                spec.build().map_err(|e| CliError::Validation(e.to_string()))?;
                Ok(spec)
            })
            .collect()
    }

    pub fn rates(&self) -> Result<Vec<Rate>, CliError> {
        if self.config.rates.is_empty() {
            return Err(CliError::Validation("no rates given".into()));
        }
        self.config
            .rates
            .iter()
            .map(|r| {
                let text = match r {
                    RateValue::Number(x) => format!("{x}"),
                    RateValue::Text(s) => s.clone(),
                };
                parse_rate(&text).map_err(|e| CliError::Validation(e.to_string()))
            })
            .collect()
    }

    pub fn k(&self) -> Result<u64, CliError> {
        self.config
            .k
            .filter(|&k| k > 0)
            .ok_or_else(|| CliError::Validation("k must be given and positive".into()))
    }

    /// Checks numeric ranges shared by all commands.
    pub fn validate(&self) -> Result<(), CliError> {
        let c = &self.config;
        let bad = |msg: String| Err(CliError::Validation(msg));
        if !(0.0..1.0).contains(&c.delta) {
            return bad(format!("delta {} outside [0, 1)", c.delta));
        }
        if c.mu < 2 || !c.mu.is_multiple_of(2) {
            return bad(format!("mu {} must be even and at least 2", c.mu));
        }
        if c.t_max > 16 {
            return bad(format!("t_max {} above 16", c.t_max));
        }
        if c.puncture_trials == 0 {
            return bad("puncture_trials must be at least 1".into());
        }
        if c.trials == Some(0) {
            return bad("trials must be at least 1".into());
        }
        if let Some(f) = c.fer_targets.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return bad(format!("FER target {f} outside [0, 1]"));
        }
        Ok(())
    }

    pub fn scheme_params(&self) -> SchemeParams {
        let c = &self.config;
        SchemeParams {
            delta: c.delta,
            mu: c.mu,
            t_max: c.t_max,
            puncture_trials: c.puncture_trials,
            seed: c.seed,
        }
    }

    /// The config source and effective seed as `# ` comment lines.
    pub fn header(&self) -> String {
        let mut s = String::new();
        for line in self.text.lines() {
            s.push_str("# ");
            s.push_str(line);
            s.push('\n');
        }
        s.push_str(&format!("# effective seed: {}\n", self.config.seed));
        s
    }
}
