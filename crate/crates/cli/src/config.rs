//! Experiment configuration: one JSON document with `model`, `method` (or
//! `methods`), `sampler`, `seeds` and `output` sections.

use std::path::PathBuf;

use mcem::mcem::{BoothHobertConfig, CaffoConfig, ChanLedolterConfig, WeiTannerConfig};
use mcem::saem::SaemConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<MethodConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub seeds: SeedConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    /// ABO phenotype counts (O, A, B, AB).
    Blood {
        #[serde(default = "default_counts")]
        counts: [u64; 4],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        start: Option<[f64; 2]>,
    },
    /// Right-censored normal sample; the bundled dataset when `observed` is absent.
    Censored {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        observed: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        censored: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        threshold: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        start: Option<[f64; 2]>,
    },
}

fn default_counts() -> [u64; 4] {
    [10, 16, 7, 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmSettings {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for EmSettings {
    fn default() -> Self {
        Self { tol: 1e-10, max_iters: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmlSettings {
    pub mc_size: usize,
    /// Reference parameter; the model start when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<[f64; 2]>,
    /// Further surfaces, each built at the previous estimate.
    pub reruns: usize,
}

impl Default for McmlSettings {
    fn default() -> Self {
        Self { mc_size: 1000, reference: None, reruns: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MethodConfig {
    Em(EmSettings),
    WeiTanner(WeiTannerConfig),
    ChanLedolter(ChanLedolterConfig),
    BoothHobert(BoothHobertConfig),
    Caffo(CaffoConfig),
    SaemGuKong(SaemConfig),
    SaemDelyon(SaemConfig),
    Mcml(McmlSettings),
}

impl MethodConfig {
    pub fn label(&self) -> &'static str {
        match self {
            MethodConfig::Em(_) => "em",
            MethodConfig::WeiTanner(_) => "wei-tanner",
            MethodConfig::ChanLedolter(_) => "chan-ledolter",
            MethodConfig::BoothHobert(_) => "booth-hobert",
            MethodConfig::Caffo(_) => "caffo",
            MethodConfig::SaemGuKong(_) => "saem-gu-kong",
            MethodConfig::SaemDelyon(_) => "saem-delyon",
            MethodConfig::Mcml(_) => "mcml",
        }
    }

    fn validate(&self, key: &str) -> Result<(), CliError> {
        let res = match self {
            MethodConfig::Em(s) => {
                if !(s.tol > 0.0) || s.max_iters == 0 {
                    Err(mcem::Error::Config("tol and max_iters must be positive".into()))
                } else {
                    Ok(())
                }
            }
            MethodConfig::WeiTanner(c) => c.validate(),
            MethodConfig::ChanLedolter(c) => c.validate(),
            MethodConfig::BoothHobert(c) => c.validate(),
            MethodConfig::Caffo(c) => c.validate(),
            MethodConfig::SaemGuKong(c) | MethodConfig::SaemDelyon(c) => {
                if c.mc_size == 0 {
                    Err(mcem::Error::Config("mc_size must be positive".into()))
                } else {
                    c.schedule.validate()
                }
            }
            MethodConfig::Mcml(s) => {
                if s.mc_size < 2 {
                    Err(mcem::Error::Config("mc_size must be at least 2".into()))
                } else {
                    Ok(())
                }
            }
        };
        res.map_err(|e| CliError::config(key, e.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SamplerConfig {
    #[default]
    Direct,
    /// Full conditional support with exact probabilities (blood model only).
    Exact,
    /// Self-normalized importance sampling from the model's conditional at a fixed parameter.
    Importance {
        #[serde(default)]
        truncate: bool,
        /// Proposal parameter; the model start when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        proposal: Option<[f64; 2]>,
    },
    /// Exponential-envelope rejection sampling (censored model only).
    Rejection {
        #[serde(default = "default_budget")]
        budget_factor: usize,
    },
    /// Random-walk Metropolis–Hastings.
    Mh {
        #[serde(default = "default_burn_in")]
        burn_in: usize,
        #[serde(default = "default_thinning")]
        thinning: usize,
        /// Integer step bound (blood, default 2) or Gaussian step SD
        /// (censored, default 0.3 sigma at the current parameter).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step: Option<f64>,
    },
}

fn default_budget() -> usize {
    1000
}

fn default_burn_in() -> usize {
    100
}

fn default_thinning() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub base: u64,
    pub replicates: usize,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self { base: 1, replicates: 1 }
    }
}

impl SeedConfig {
    pub fn list(&self) -> Vec<u64> {
        (0..self.replicates as u64).map(|i| self.base + i).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Louis-identity standard errors on a fresh sample at each final estimate.
    pub inference: bool,
    pub inference_mc_size: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), inference: false, inference_mc_size: 10_000 }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Config {
    /// Parses a config document; errors name the offending key path.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let key = if path == "." { "<root>".to_string() } else { path };
            CliError::config(&key, e.into_inner().to_string())
        })?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seeds.base = s;
        }
        if let Some(r) = o.replicates {
            self.seeds.replicates = r;
        }
        if let Some(d) = &o.out {
            self.output.dir = d.clone();
        }
    }

    /// Methods to run: `methods` when given, otherwise the single `method`.
    pub fn method_list(&self) -> Vec<MethodConfig> {
        if self.methods.is_empty() {
            self.method.iter().cloned().collect()
        } else {
            self.methods.clone()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.method.is_some() && !self.methods.is_empty() {
            return Err(CliError::config("methods", "give either `method` or `methods`, not both"));
        }
        let methods = self.method_list();
        if methods.is_empty() {
            return Err(CliError::config("method", "no method configured"));
        }
        for (i, m) in methods.iter().enumerate() {
            let key = if self.methods.is_empty() { "method".to_string() } else { format!("methods[{i}]") };
            m.validate(&key)?;
        }
        if self.seeds.replicates == 0 {
            return Err(CliError::config("seeds.replicates", "must be at least 1"));
        }
        if self.output.inference && self.output.inference_mc_size < 2 {
            return Err(CliError::config("output.inference_mc_size", "must be at least 2"));
        }
        let blood = matches!(self.model, ModelConfig::Blood { .. });
        match &self.sampler {
            SamplerConfig::Exact if !blood => {
                return Err(CliError::config("sampler.kind", "`exact` needs a finite support (blood model)"));
            }
            SamplerConfig::Rejection { .. } if blood => {
                return Err(CliError::config("sampler.kind", "`rejection` is available for the censored model only"));
            }
            SamplerConfig::Rejection { budget_factor: 0 } => {
                return Err(CliError::config("sampler.budget_factor", "must be positive"));
            }
            SamplerConfig::Mh { thinning: 0, .. } => {
                return Err(CliError::config("sampler.thinning", "must be at least 1"));
            }
            SamplerConfig::Mh { step: Some(s), .. } if !(*s > 0.0) => {
                return Err(CliError::config("sampler.step", "must be positive"));
            }
            _ => {}
        }
        if let ModelConfig::Censored { observed, censored, threshold, .. } = &self.model {
            let given = [observed.is_some(), censored.is_some(), threshold.is_some()];
            if given.iter().any(|&g| g) && !given.iter().all(|&g| g) {
                return Err(CliError::config("model", "give all of `observed`, `censored` and `threshold`, or none"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = Config::parse(r#"{"model": {"kind": "blood"}, "method": {"kind": "em"}}"#).unwrap();
        assert_eq!(cfg.seeds.list(), vec![1]);
        assert_eq!(cfg.sampler, SamplerConfig::Direct);
        assert_eq!(cfg.method, Some(MethodConfig::Em(EmSettings::default())));
        cfg.validate().unwrap();
    }

    #[test]
    fn controller_settings_pass_through() {
        let cfg =
            Config::parse(r#"{"model": {"kind": "blood"}, "method": {"kind": "booth-hobert", "m0": 20, "r": 4}}"#)
                .unwrap();
        match cfg.method.unwrap() {
            MethodConfig::BoothHobert(c) => {
                assert_eq!((c.m0, c.r), (20, 4));
                assert_eq!(c.alpha, BoothHobertConfig::default().alpha);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn serialized_config_parses_back() {
        let text = r#"{"model": {"kind": "censored"}, "methods": [{"kind": "saem-delyon"}, {"kind": "mcml", "reruns": 1}],
            "sampler": {"kind": "mh", "step": 0.4}, "seeds": {"base": 5, "replicates": 3}}"#;
        let cfg = Config::parse(text).unwrap();
        let again = Config::parse(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }
}
