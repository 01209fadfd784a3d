//! JSON experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::model::{default_thresholds, InitialData, ModelError, ProblemConfig};
use crate::selfsimilar::Interpolation;
use crate::solver::Corrector;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("data section must give exactly one of {{u0_prime, u1}} or {{f, g}}")]
    DataShape,
    #[error("data expression `{field}`: {source}")]
    Expr {
        field: &'static str,
        source: ExprError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid setting: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub p: f64,
    pub mu: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub r_star: f64,
    pub t_star: f64,
    pub eps0: f64,
    pub eps1: f64,
}

/// Either the wave data `(u0', u1)` or the Riemann invariants `(f, g)`.
/// `u0` is only used to reconstruct `u` and defaults to `0`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0_prime: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<String>,
}

fn default_density() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    pub h: f64,
    /// Defaults to 100 times the largest threshold.
    #[serde(default)]
    pub v_max: Option<f64>,
    /// Defaults to `{50, 100, 200, 400} * (gamma1 + gamma2)`.
    #[serde(default)]
    pub thresholds: Option<Vec<f64>>,
    #[serde(default)]
    pub corrector: Corrector,
    #[serde(default)]
    pub picard_iterations: usize,
    #[serde(default = "default_density")]
    pub sampling_density: usize,
    #[serde(default)]
    pub interpolation: Interpolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileOutput {
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
}

fn default_lambdas() -> Vec<f64> {
    vec![0.1, 0.05, 0.025]
}

impl Default for ProfileOutput {
    fn default() -> Self {
        ProfileOutput {
            x0: 0.0,
            lambdas: default_lambdas(),
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsSection {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default = "yes")]
    pub emit_field: bool,
    #[serde(default = "yes")]
    pub emit_curve: bool,
    #[serde(default = "yes")]
    pub emit_rates: bool,
    #[serde(default)]
    pub emit_profile: Option<ProfileOutput>,
}

impl Default for OutputsSection {
    fn default() -> Self {
        OutputsSection {
            dir: None,
            emit_field: true,
            emit_curve: true,
            emit_rates: true,
            emit_profile: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub data: DataSection,
    pub numerics: NumericsSection,
    #[serde(default)]
    pub outputs: OutputsSection,
}

fn parse_field(field: &'static str, src: &str) -> Result<Expr, ConfigError> {
    Expr::parse(src).map_err(|source| ConfigError::Expr { field, source })
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Constant-data reference experiment (`f = g = 5`, `p = 2`, `mu = 1`).
    pub fn reference() -> Self {
        let pc = ProblemConfig::reference();
        ExperimentConfig {
            problem: ProblemSection {
                p: pc.p,
                mu: pc.mu,
                gamma1: pc.gamma1,
                gamma2: pc.gamma2,
                r_star: pc.r_star,
                t_star: pc.t_star,
                eps0: pc.eps0,
                eps1: pc.eps1,
            },
            data: DataSection {
                f: Some("5".into()),
                g: Some("5".into()),
                ..DataSection::default()
            },
            numerics: NumericsSection {
                h: pc.h,
                v_max: Some(pc.v_max),
                thresholds: None,
                corrector: Corrector::Adams4,
                picard_iterations: 10,
                sampling_density: 10,
                interpolation: Interpolation::default(),
            },
            outputs: OutputsSection {
                emit_profile: Some(ProfileOutput::default()),
                ..OutputsSection::default()
            },
        }
    }

    /// Re-checks everything that can be checked without solving.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.initial_data()?;
        self.problem_config().check()?;
        if let Some(u0) = &self.data.u0 {
            parse_field("u0", u0)?;
        }
        if let Some(pr) = &self.outputs.emit_profile {
            if pr.lambdas.is_empty() || pr.lambdas.iter().any(|l| !(*l > 0.0)) {
                return Err(ConfigError::Invalid(
                    "profile lambdas must be positive and nonempty".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn problem_config(&self) -> ProblemConfig {
        let pr = &self.problem;
        let nu = &self.numerics;
        let thresholds = nu
            .thresholds
            .clone()
            .unwrap_or_else(|| default_thresholds(pr.gamma1 + pr.gamma2));
        let top = thresholds.iter().copied().fold(0.0, f64::max);
        ProblemConfig {
            p: pr.p,
            mu: pr.mu,
            gamma1: pr.gamma1,
            gamma2: pr.gamma2,
            r_star: pr.r_star,
            t_star: pr.t_star,
            eps0: pr.eps0,
            eps1: pr.eps1,
            h: nu.h,
            v_max: nu.v_max.unwrap_or(100.0 * top),
            thresholds,
            corrector: nu.corrector,
            sampling_density: nu.sampling_density,
        }
    }

    pub fn initial_data(&self) -> Result<InitialData, ConfigError> {
        let d = &self.data;
        match (&d.u0_prime, &d.u1, &d.f, &d.g) {
            (Some(a), Some(b), None, None) => Ok(InitialData::from_wave(
                &parse_field("u0_prime", a)?,
                &parse_field("u1", b)?,
            )),
            (None, None, Some(f), Some(g)) => Ok(InitialData::from_riemann(
                parse_field("f", f)?,
                parse_field("g", g)?,
            )),
            _ => Err(ConfigError::DataShape),
        }
    }

    pub fn u0(&self) -> Result<Expr, ConfigError> {
        parse_field("u0", self.data.u0.as_deref().unwrap_or("0"))
    }

    /// Whether both invariants are free of `x`.
    pub fn constant_data(&self) -> bool {
        self.initial_data()
            .map(|d| !d.f.depends_on_x() && !d.g.depends_on_x())
            .unwrap_or(false)
    }

    /// Same experiment with a different lattice spacing.
    pub fn with_h(&self, h: f64) -> Self {
        let mut c = self.clone();
        c.numerics.h = h;
        c
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_roundtrip() {
        let cfg = ExperimentConfig::reference();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, back);
        assert!(cfg.constant_data());
        assert_eq!(
            cfg.problem_config().thresholds,
            vec![500.0, 1000.0, 2000.0, 4000.0]
        );
    }

    #[test]
    fn data_shape_is_exclusive() {
        let mut cfg = ExperimentConfig::reference();
        cfg.data.u1 = Some("1".into());
        assert!(matches!(cfg.validate(), Err(ConfigError::DataShape)));
        cfg.data = DataSection {
            u0_prime: Some("0".into()),
            u1: Some("5".into()),
            ..DataSection::default()
        };
        cfg.validate().unwrap();
        cfg.data.g = Some("1".into());
        assert!(matches!(cfg.validate(), Err(ConfigError::DataShape)));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_expressions() {
        let mut v: serde_json::Value =
            serde_json::from_str(&ExperimentConfig::reference().to_json()).unwrap();
        v["problem"]["gama1"] = 1.0.into();
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
        let mut cfg = ExperimentConfig::reference();
        cfg.data.f = Some("5 + foo(x)".into());
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::Expr { field: "f", .. })
        ));
    }

    #[test]
    fn corrector_strings_in_json() {
        let mut v: serde_json::Value =
            serde_json::from_str(&ExperimentConfig::reference().to_json()).unwrap();
        v["numerics"]["corrector"] = "fixed_point_3".into();
        let cfg = ExperimentConfig::from_json(&v.to_string()).unwrap();
        assert_eq!(cfg.numerics.corrector, Corrector::FixedPoint(3));
        v["numerics"]["corrector"] = "euler".into();
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }
}
