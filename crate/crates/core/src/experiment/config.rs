//! Experiment configuration files.
//!
//! TOML is the primary format; a file ending in `.json` is read as JSON
//! with the same schema, which is how `metadata.json` from a previous run
//! can be fed back in. Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::IgnoredAny;
use serde::{Deserialize, Serialize};

use crate::diagnostics::EstimatorChoice;
use crate::estimators::{LearningRate, SigmaMode, UnbiasedVariant};
use crate::models::{by_name, ModelSpec};
use crate::simulate::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Run the configured estimators on simulated data.
    Estimation,
    /// Autocovariances of the rescaled innovations.
    XiStats,
    /// Shifted and unshifted gain-innovation sums.
    Martingale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "one")]
    pub replicates: usize,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Replicates (counted from 0) whose estimator histories are written.
    #[serde(default = "one")]
    pub history_replicates: usize,
    /// Write the positions of replicate 0 to `trajectory.csv`.
    #[serde(default = "yes")]
    pub write_trajectory: bool,
    pub model: ModelSection,
    pub sim: SimSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<LearningRate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standard_sgd: Option<SgdSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unbiased_sgd: Option<UnbiasedSgdSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kalman: Option<KalmanSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mle: Option<MleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_stats: Option<XiStatsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub martingale: Option<MartingaleSection>,
    /// Written to `metadata.json` by the runner; ignored when loading.
    #[serde(default, skip_serializing)]
    pub run_info: Option<IgnoredAny>,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `"ou"` or `"cubic"`.
    pub name: String,
    pub theta_star: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub tau: f64,
    pub h: f64,
    pub n_obs: usize,
    /// Defaults to the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Defaults to rest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
    #[serde(default)]
    pub burn_in: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSection {
    pub theta0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnbiasedSgdSection {
    pub theta0: Vec<f64>,
    #[serde(default = "default_variant")]
    pub variant: UnbiasedVariant,
}

fn default_variant() -> UnbiasedVariant {
    UnbiasedVariant::ShiftedInnovation
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KalmanSigma {
    /// Gain uses `σ = 1`; the scale is carried by the prior.
    InPrior,
    /// Gain uses `sigma` (defaults to the model's σ).
    Known,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KalmanSection {
    pub m_prior: Vec<f64>,
    /// Row-major prior covariance.
    pub sigma_prior: Vec<f64>,
    pub sigma_mode: KalmanSigma,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MleSection {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiStatsSection {
    #[serde(default = "three")]
    pub max_lag: usize,
}

fn three() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleSection {
    /// Parameter at which the sums are evaluated; defaults to `theta_star`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
}

/// A parse or validation failure, located in the source when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    /// Dotted key path such as `sim.h`.
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if let Some(field) = &self.field {
            write!(f, "{field}: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Toml,
    Json,
}

/// Original text of a config, kept to attach line numbers to errors.
#[derive(Debug, Clone)]
pub struct Source {
    text: String,
    format: Format,
}

impl Source {
    /// 1-based line of `field` (a dotted path `section.key` or a
    /// top-level `key`).
    pub fn line_of(&self, field: &str) -> Option<usize> {
        let (section, key) = match field.rsplit_once('.') {
            Some((s, k)) => (Some(s), k),
            None => (None, field),
        };
        match self.format {
            Format::Toml => toml_line(&self.text, section, key),
            Format::Json => json_line(&self.text, section, key),
        }
    }
}

fn toml_line(text: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('[') {
            current = Some(header.trim_end_matches(']').trim().to_string());
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else {
            continue;
        };
        let lhs = lhs.trim();
        let in_section = current.as_deref() == section;
        // Also accept dotted keys such as `sim.h = ...` at top level.
        let dotted = current.is_none() && section.is_some_and(|s| lhs == format!("{s}.{key}"));
        if (in_section && lhs == key) || dotted {
            return Some(i + 1);
        }
    }
    // Fall back to the section header for missing keys.
    section.and_then(|s| {
        text.lines()
            .position(|l| l.trim() == format!("[{s}]"))
            .map(|i| i + 1)
    })
}

fn json_line(text: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let quoted_key = format!("\"{key}\"");
    let start = match section {
        Some(s) => text.find(&format!("\"{s}\""))?,
        None => 0,
    };
    let offset = start + text[start..].find(&quoted_key)?;
    Some(line_at(text, offset))
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// A config that passed validation, with the model and simulation
/// template resolved.
#[derive(Debug, Clone)]
pub struct Validated {
    pub model: ModelSpec,
    pub sim: SimConfig,
    /// `(label, choice)` in the order standard, unbiased, Kalman, MLE.
    pub estimators: Vec<(&'static str, EstimatorChoice)>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<(Self, Source), ConfigError> {
        let source = Source {
            text: text.to_string(),
            format: Format::Toml,
        };
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError {
            line: e.span().map(|s| line_at(text, s.start)),
            field: None,
            message: e.message().to_string(),
        })?;
        Ok((cfg, source))
    }

    pub fn from_json_str(text: &str) -> Result<(Self, Source), ConfigError> {
        let source = Source {
            text: text.to_string(),
            format: Format::Json,
        };
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError {
            line: Some(e.line()),
            field: None,
            message: e.to_string(),
        })?;
        Ok((cfg, source))
    }

    /// Reads a config file; `.json` files are parsed as JSON, anything
    /// else as TOML.
    pub fn from_path(path: &Path) -> Result<(Self, Source), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            field: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"))
        {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Checks every field and resolves the model; errors carry the line
    /// of the offending key when `source` is given.
    pub fn validate(&self, source: Option<&Source>) -> Result<Validated, ConfigError> {
        let fail = |field: &str, message: String| ConfigError {
            line: source.and_then(|s| s.line_of(field)),
            field: Some(field.to_string()),
            message,
        };

        let model =
            by_name(&self.model.name, self.model.theta_star, self.model.sigma).map_err(|e| {
                let field = if PRESET_MODEL_NAMES.contains(&self.model.name.as_str()) {
                    "model.sigma"
                } else {
                    "model.name"
                };
                fail(field, plain(e))
            })?;
        let (d, p) = (model.d(), model.d_theta());

        let sim = self.sim_config(d);
        if !(sim.h > 0.0) || !sim.h.is_finite() {
            return Err(fail("sim.h", format!("must be positive, got {}", sim.h)));
        }
        if !(sim.tau > 0.0) || !sim.tau.is_finite() {
            return Err(fail(
                "sim.tau",
                format!("must be positive, got {}", sim.tau),
            ));
        }
        if let Err(e) = sim.substeps() {
            return Err(fail("sim.h", plain(e)));
        }
        if sim.n_obs < 4 {
            return Err(fail(
                "sim.n_obs",
                format!("must be at least 4, got {}", sim.n_obs),
            ));
        }
        for (key, v) in [("sim.x0", &sim.x0), ("sim.u0", &sim.u0)] {
            if v.len() != d {
                return Err(fail(key, format!("expected {d} entries, got {}", v.len())));
            }
        }
        if !(sim.burn_in >= 0.0) || !sim.burn_in.is_finite() {
            return Err(fail(
                "sim.burn_in",
                format!("must be >= 0, got {}", sim.burn_in),
            ));
        }

        let min_reps = match self.kind {
            ExperimentKind::Estimation => 1,
            _ => 2,
        };
        if self.replicates < min_reps {
            return Err(fail(
                "replicates",
                format!(
                    "must be at least {min_reps} for this kind, got {}",
                    self.replicates
                ),
            ));
        }

        let check_len = |field: &str, v: &[f64], n: usize| {
            if v.len() != n {
                Err(fail(
                    field,
                    format!("expected {n} entries, got {}", v.len()),
                ))
            } else {
                Ok(())
            }
        };

        let mut estimators = Vec::new();
        let needs_lr = self.standard_sgd.is_some() || self.unbiased_sgd.is_some();
        let lr = match (self.lr, needs_lr) {
            (Some(lr), _) => {
                lr.validate().map_err(|e| fail(lr_field(&lr), plain(e)))?;
                Some(lr)
            }
            (None, true) => {
                return Err(fail("lr", "an SGD estimator needs an [lr] section".into()))
            }
            (None, false) => None,
        };
        if let Some(s) = &self.standard_sgd {
            check_len("standard_sgd.theta0", &s.theta0, p)?;
            estimators.push((
                "standard_sgd",
                EstimatorChoice::StandardSgd {
                    theta0: s.theta0.clone(),
                    lr: lr.expect("checked above"),
                },
            ));
        }
        if let Some(s) = &self.unbiased_sgd {
            check_len("unbiased_sgd.theta0", &s.theta0, p)?;
            estimators.push((
                "unbiased_sgd",
                EstimatorChoice::UnbiasedSgd {
                    theta0: s.theta0.clone(),
                    lr: lr.expect("checked above"),
                    variant: s.variant,
                },
            ));
        }
        if let Some(k) = &self.kalman {
            check_len("kalman.m_prior", &k.m_prior, p)?;
            check_len("kalman.sigma_prior", &k.sigma_prior, p * p)?;
            if k.sigma_prior.iter().any(|v| !v.is_finite()) {
                return Err(fail("kalman.sigma_prior", "entries must be finite".into()));
            }
            if (0..p).any(|i| !(k.sigma_prior[i * p + i] > 0.0)) {
                return Err(fail(
                    "kalman.sigma_prior",
                    "diagonal entries must be positive".into(),
                ));
            }
            let sigma_mode = match k.sigma_mode {
                KalmanSigma::InPrior => {
                    if k.sigma.is_some() {
                        return Err(fail(
                            "kalman.sigma",
                            "only allowed with sigma_mode = \"known\"".into(),
                        ));
                    }
                    SigmaMode::InPrior
                }
                KalmanSigma::Known => {
                    let sigma = k.sigma.unwrap_or(self.model.sigma);
                    if !(sigma > 0.0) || !sigma.is_finite() {
                        return Err(fail(
                            "kalman.sigma",
                            format!("must be positive, got {sigma}"),
                        ));
                    }
                    SigmaMode::Known { sigma }
                }
            };
            estimators.push((
                "kalman",
                EstimatorChoice::Kalman {
                    m_prior: k.m_prior.clone(),
                    sigma_prior: k.sigma_prior.clone(),
                    sigma_mode,
                },
            ));
        }
        if self.mle.is_some() {
            estimators.push(("mle", EstimatorChoice::Mle));
        }

        match self.kind {
            ExperimentKind::Estimation if estimators.is_empty() => {
                return Err(fail(
                    "kind",
                    "an estimation run needs at least one of [standard_sgd], [unbiased_sgd], [kalman], [mle]"
                        .into(),
                ));
            }
            ExperimentKind::XiStats => {
                let max_lag = self.xi_stats.as_ref().map_or(3, |x| x.max_lag);
                if max_lag + 2 > sim.n_obs - 1 {
                    return Err(fail(
                        "xi_stats.max_lag",
                        format!("too large for n_obs = {}", sim.n_obs),
                    ));
                }
                if !(self.model.sigma > 0.0) {
                    return Err(fail(
                        "model.sigma",
                        "must be positive to rescale innovations".into(),
                    ));
                }
            }
            ExperimentKind::Martingale => {
                if let Some(theta) = self.martingale.as_ref().and_then(|m| m.theta.as_ref()) {
                    check_len("martingale.theta", theta, p)?;
                }
            }
            _ => {}
        }

        Ok(Validated {
            model,
            sim,
            estimators,
        })
    }

    /// Simulation template with defaults filled in; the seed is set per
    /// replicate.
    pub fn sim_config(&self, d: usize) -> SimConfig {
        SimConfig {
            h: self.sim.h,
            tau: self.sim.tau,
            n_obs: self.sim.n_obs,
            x0: self.sim.x0.clone().unwrap_or_else(|| vec![0.0; d]),
            u0: self.sim.u0.clone().unwrap_or_else(|| vec![0.0; d]),
            burn_in: self.sim.burn_in,
            seed: self.master_seed,
            record_velocities: false,
        }
    }

    /// The same config with every defaulted value written out.
    pub fn resolved(&self) -> Result<Self, ConfigError> {
        let v = self.validate(None)?;
        let mut out = self.clone();
        out.sim.x0 = Some(v.sim.x0);
        out.sim.u0 = Some(v.sim.u0);
        if out.kind == ExperimentKind::XiStats && out.xi_stats.is_none() {
            out.xi_stats = Some(XiStatsSection { max_lag: 3 });
        }
        if out.kind == ExperimentKind::Martingale {
            let theta = out
                .martingale
                .as_ref()
                .and_then(|m| m.theta.clone())
                .unwrap_or_else(|| {
                    v.model
                        .theta_star()
                        .map(<[f64]>::to_vec)
                        .unwrap_or_default()
                });
            out.martingale = Some(MartingaleSection { theta: Some(theta) });
        }
        if let Some(k) = out.kalman.as_mut() {
            if k.sigma_mode == KalmanSigma::Known && k.sigma.is_none() {
                k.sigma = Some(out.model.sigma);
            }
        }
        out.run_info = None;
        Ok(out)
    }
}

fn plain(e: crate::Error) -> String {
    match e {
        crate::Error::InvalidArgument(m) => m,
        other => other.to_string(),
    }
}

const PRESET_MODEL_NAMES: &[&str] = crate::models::PRESET_NAMES;

fn lr_field(lr: &LearningRate) -> &'static str {
    match lr {
        LearningRate::Hyperbolic { .. } => "lr.c1",
        LearningRate::Harmonic { .. } => "lr.a",
    }
}
