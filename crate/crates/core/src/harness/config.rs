use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::trainer::EtaPolicy;

/// A complete experiment description, read from TOML:
///
/// ```toml
/// seed = 7
/// activation = "softplus"
/// delta = 0.01
/// trials = 50
/// out = "runs/acceptance"
///
/// [dataset]
/// kind = "orthonormal"      # orthonormal | sphere_random | file
/// n = 4
/// d = 4
/// kappa = 1.0
/// seed = 3
///
/// [model]
/// m = 8192
/// m_grid = [256, 1024, 4096, 8192]
///
/// [train]
/// eta = "auto"              # or a positive number
/// horizon = 25.0            # t_end = horizon / λ₀
/// record_stride = 10
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_activation")]
    pub activation: String,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub seed: u64,
    /// Orthonormal only: apply a seeded random rotation to the basis.
    #[serde(default)]
    pub rotate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetKind {
    Orthonormal { rotate: bool },
    SphereRandom,
    File { path: PathBuf },
}

impl DatasetSpec {
    pub fn kind(&self) -> Result<DatasetKind> {
        match self.kind.as_str() {
            "orthonormal" => Ok(DatasetKind::Orthonormal { rotate: self.rotate }),
            "sphere_random" => Ok(DatasetKind::SphereRandom),
            "file" => match &self.path {
                Some(p) => Ok(DatasetKind::File { path: p.clone() }),
                None => Err(Error::InvalidConfig("dataset kind `file` needs `path`".into())),
            },
            other => Err(Error::InvalidConfig(format!("unknown dataset kind `{other}`"))),
        }
    }

    pub fn build(&self) -> Result<crate::model::Dataset> {
        let kind = self.kind()?;
        super::gen_dataset(&kind, self.n.unwrap_or(0), self.d.unwrap_or(0), self.kappa, self.seed)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub m_grid: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSetting {
    Value(f64),
    Word(String),
}

impl Default for EtaSetting {
    fn default() -> Self {
        EtaSetting::Word("auto".into())
    }
}

impl EtaSetting {
    pub fn policy(&self) -> Result<EtaPolicy> {
        match self {
            EtaSetting::Value(v) if *v > 0.0 && v.is_finite() => Ok(EtaPolicy::Fixed(*v)),
            EtaSetting::Value(v) => Err(Error::InvalidConfig(format!("eta must be positive, got {v}"))),
            EtaSetting::Word(w) if w == "auto" => Ok(EtaPolicy::Auto),
            EtaSetting::Word(w) => Err(Error::InvalidConfig(format!("eta must be `auto` or a number, got `{w}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    #[serde(default)]
    pub eta: EtaSetting,
    /// Training horizon in units of `1/λ₀`; ignored when `steps` is set.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            eta: EtaSetting::default(),
            horizon: default_horizon(),
            steps: None,
            record_stride: default_stride(),
        }
    }
}

impl TrainSpec {
    /// Step count covering `horizon/λ₀` time units at step size `eta`.
    pub fn resolve_steps(&self, lambda0: f64, eta: f64) -> usize {
        match self.steps {
            Some(s) => s,
            None => ((self.horizon / (lambda0 * eta)).ceil() as usize).max(1),
        }
    }
}

fn default_activation() -> String {
    "softplus".into()
}
fn default_delta() -> f64 {
    0.01
}
fn default_trials() -> usize {
    1
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_kappa() -> f64 {
    1.0
}
fn default_horizon() -> f64 {
    25.0
}
fn default_stride() -> usize {
    crate::trainer::DEFAULT_RECORD_STRIDE
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Parse a config file. A relative dataset `path` is taken relative to
    /// the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(p), Some(dir)) = (&cfg.dataset.path, path.parent()) {
            if p.is_relative() {
                cfg.dataset.path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn activation(&self) -> Result<Activation> {
        Activation::by_name(&self.activation)
    }

    pub fn validate(&self) -> Result<()> {
        self.activation()?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidConfig("workers must be positive".into()));
        }
        match self.dataset.kind()? {
            DatasetKind::File { path } => {
                if !path.exists() {
                    return Err(Error::InvalidConfig(format!("dataset file {} does not exist", path.display())));
                }
            }
            kind => {
                let (n, d) = match (self.dataset.n, self.dataset.d) {
                    (Some(n), Some(d)) if n > 0 && d > 0 => (n, d),
                    _ => return Err(Error::InvalidConfig("dataset needs positive `n` and `d`".into())),
                };
                if matches!(kind, DatasetKind::Orthonormal { .. }) && n > d {
                    return Err(Error::InvalidConfig(format!("orthonormal dataset needs n ≤ d (n={n}, d={d})")));
                }
            }
        }
        if !(self.dataset.kappa > 0.0) {
            return Err(Error::InvalidConfig("dataset kappa must be positive".into()));
        }
        if self.model.m == Some(0) || self.model.m_grid.contains(&0) {
            return Err(Error::InvalidConfig("widths must be positive".into()));
        }
        self.train.eta.policy()?;
        if !(self.train.horizon > 0.0 && self.train.horizon.is_finite()) {
            return Err(Error::InvalidConfig("train horizon must be positive".into()));
        }
        if self.train.steps == Some(0) {
            return Err(Error::InvalidConfig("train steps must be positive".into()));
        }
        if self.train.record_stride == 0 {
            return Err(Error::InvalidConfig("record_stride must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 7
delta = 0.01
trials = 3

[dataset]
kind = "orthonormal"
n = 4
d = 4

[model]
m = 512

[train]
eta = 0.5
record_stride = 2
"#;

    #[test]
    fn parse_and_defaults() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.activation, "softplus");
        assert_eq!(cfg.train.eta.policy().unwrap(), EtaPolicy::Fixed(0.5));
        assert_eq!(cfg.train.horizon, 25.0);
        assert_eq!(cfg.dataset.kind().unwrap(), DatasetKind::Orthonormal { rotate: false });
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn auto_eta_and_bad_words() {
        let text = SAMPLE.replace("eta = 0.5", "eta = \"auto\"");
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap().train.eta.policy().unwrap(), EtaPolicy::Auto);
        let text = SAMPLE.replace("eta = 0.5", "eta = \"fast\"");
        assert!(ExperimentConfig::from_toml(&text).unwrap().validate().is_err());
    }

    #[test]
    fn invalid_configs() {
        let cases = [
            SAMPLE.replace("n = 4", "n = 5"),
            SAMPLE.replace("delta = 0.01", "delta = 1.5"),
            SAMPLE.replace("trials = 3", "trials = 0"),
            SAMPLE.replace("kind = \"orthonormal\"", "kind = \"file\"\npath = \"/nonexistent/data.csv\""),
            SAMPLE.replace("kind = \"orthonormal\"", "kind = \"cube\""),
        ];
        for text in cases {
            let cfg = ExperimentConfig::from_toml(&text).unwrap();
            assert!(cfg.validate().is_err(), "{text}");
        }
        assert!(ExperimentConfig::from_toml("seed = 1\n").is_err());
        assert!(ExperimentConfig::from_toml(&format!("{SAMPLE}\n[extra]\nx = 1\n")).is_err());
    }

    #[test]
    fn steps_from_horizon() {
        let t = TrainSpec::default();
        assert_eq!(t.resolve_steps(0.25, 2.0), 50);
        let fixed = TrainSpec { steps: Some(7), ..TrainSpec::default() };
        assert_eq!(fixed.resolve_steps(0.25, 2.0), 7);
    }
}
