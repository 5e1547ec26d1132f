//! Experiment files: which models to load and how each command is parameterized.

use std::path::{Path, PathBuf};

use fictdisc_core::audit::{AuditSuite, EstimatorProbe, GammaChoice};
use fictdisc_core::fixtures::{by_name, generate};
use fictdisc_core::train::TrainConfig;
use fictdisc_core::Mdp;
use serde::Deserialize;

use crate::error::CliError;

/// Where a model comes from.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// A shipped fixture by name.
    Fixture(String),
    /// A model file, relative to the config file's directory.
    Path(PathBuf),
    Generate(GeneratorSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub states: usize,
    pub actions: usize,
    pub seed: u64,
    pub floor: f64,
}

impl ModelSpec {
    pub fn label(&self) -> String {
        match self {
            ModelSpec::Fixture(name) => name.clone(),
            ModelSpec::Path(p) => {
                p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
            }
            ModelSpec::Generate(g) => format!("gen-s{}a{}-seed{}", g.states, g.actions, g.seed),
        }
    }

    pub fn load(&self, base: &Path) -> Result<Mdp, CliError> {
        match self {
            ModelSpec::Fixture(name) => {
                by_name(name).ok_or_else(|| CliError::Config(format!("unknown fixture `{name}`")))
            }
            ModelSpec::Path(p) => {
                let path = if p.is_absolute() { p.clone() } else { base.join(p) };
                if !path.exists() {
                    return Err(CliError::Config(format!("model file {} does not exist", path.display())));
                }
                Ok(Mdp::from_json_file(&path)?)
            }
            ModelSpec::Generate(g) => Ok(generate(g.states, g.actions, g.seed, g.floor)?),
        }
    }
}

/// A discount grid entry: a number or `"inverse-horizon"` for `1 − 1/H`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum GammaEntry {
    Value(f64),
    Named(NamedGamma),
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NamedGamma {
    InverseHorizon,
}

impl From<GammaEntry> for GammaChoice {
    fn from(g: GammaEntry) -> Self {
        match g {
            GammaEntry::Value(v) => GammaChoice::Value(v),
            GammaEntry::Named(NamedGamma::InverseHorizon) => GammaChoice::InverseHorizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    pub h_grid: Vec<usize>,
    pub gamma_grid: Vec<GammaEntry>,
    #[serde(default = "default_policies")]
    pub policies: usize,
    #[serde(default = "default_dobrushin")]
    pub dobrushin_h_max: usize,
    #[serde(default = "default_policies")]
    pub pairs: usize,
    #[serde(default = "default_thetas")]
    pub thetas: usize,
    #[serde(default)]
    pub probes: Option<Vec<EstimatorProbe>>,
    #[serde(default = "default_norm_samples")]
    pub norm_samples: usize,
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    /// Also run the span-trace audit per model.
    #[serde(default = "default_true")]
    pub span: bool,
    /// Certified training runs whose composed bounds are audited.
    #[serde(default)]
    pub compose: Vec<ComposeProbe>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeProbe {
    pub horizon: usize,
    pub sigma: f64,
    pub epsilon: f64,
    pub k_max: usize,
}

fn default_policies() -> usize {
    5
}

fn default_dobrushin() -> usize {
    50
}

fn default_thetas() -> usize {
    2
}

fn default_norm_samples() -> usize {
    50
}

fn default_true() -> bool {
    true
}

impl AuditSection {
    pub fn suite(&self, seed: u64) -> Result<AuditSuite, CliError> {
        if self.h_grid.is_empty() || self.gamma_grid.is_empty() {
            return Err(CliError::Config("audit grids must be non-empty".into()));
        }
        if self.h_grid.contains(&0) {
            return Err(CliError::Config("horizons must be positive".into()));
        }
        let defaults = AuditSuite::default();
        Ok(AuditSuite {
            h_grid: self.h_grid.clone(),
            gamma_grid: self.gamma_grid.iter().map(|&g| g.into()).collect(),
            policies: self.policies,
            dobrushin_h_max: self.dobrushin_h_max,
            pairs: self.pairs,
            thetas: self.thetas,
            probes: self.probes.clone().unwrap_or(defaults.probes),
            norm_samples: self.norm_samples,
            lambdas: self.lambdas.clone().unwrap_or(defaults.lambdas),
            seed,
        })
    }
}

/// Unknown keys are rejected by the flattened [`TrainConfig`].
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TrainSection {
    #[serde(flatten)]
    pub config: TrainConfig,
    /// Extra seeds run alongside `seed`; each gets its own trace.
    #[serde(default)]
    pub extra_seeds: Vec<u64>,
    /// Replace sampled estimates with their exact expectation.
    #[serde(default)]
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasSection {
    pub h_grid: Vec<usize>,
    pub sigma: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Logits at which the biases are measured; zero when absent.
    #[serde(default)]
    pub theta: Option<Vec<Vec<f64>>>,
}

fn default_beta() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub audit: Option<AuditSection>,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub bias: Option<BiasSection>,
    /// Directory that relative model paths resolve against; the config file's own directory.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
            CliError::Config(format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column()))
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if cfg.models.is_empty() {
            return Err(CliError::Config("`models` must list at least one model".into()));
        }
        Ok(cfg)
    }

    pub fn load_models(&self) -> Result<Vec<(String, Mdp)>, CliError> {
        self.models.iter().map(|m| Ok((m.label(), m.load(&self.base_dir)?))).collect()
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf).or_else(|| self.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_models_and_grids() {
        let text = r#"{
            "seed": 3,
            "models": [{"fixture": "fix2"}, {"generate": {"states": 3, "actions": 2, "seed": 5, "floor": 0.01}}],
            "audit": {"h_grid": [1, 2], "gamma_grid": [0.9, "inverse-horizon"]}
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.models.len(), 2);
        assert_eq!(cfg.models[1].label(), "gen-s3a2-seed5");
        let suite = cfg.audit.unwrap().suite(cfg.seed).unwrap();
        assert_eq!(suite.gamma_grid, vec![GammaChoice::Value(0.9), GammaChoice::InverseHorizon]);
    }

    #[test]
    fn rejects_empty_grid_and_unknown_keys() {
        let section: AuditSection = serde_json::from_str(r#"{"h_grid": [], "gamma_grid": [0.5]}"#).unwrap();
        assert!(matches!(section.suite(0), Err(CliError::Config(_))));
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"seed": 1, "models": [], "bogus": 1}"#).is_err());
    }

    #[test]
    fn train_section_flattens_config() {
        let text = r#"{"algorithm": "dd", "horizon": 32, "sigma": 0.5, "epsilon": 0.05, "k_max": 10, "seed": 1, "exact": true}"#;
        let t: TrainSection = serde_json::from_str(text).unwrap();
        assert!(t.exact);
        assert_eq!(t.config.horizon, 32);
    }
}
