//! Run configuration. Field names carry their units.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use dtesim::boundaries::{compute_boundaries, SpendingSpec};
use dtesim::bpp_engine::PosteriorConfig;
use dtesim::oc_engine::{PriorOverride, UtilityWeights};
use dtesim::priors::{fit_from_quantiles, ControlPrior, Distribution, Family, FitScale, PriorSpec};
use dtesim::trial_engine::TrialDesign;

use crate::error::ConfigError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_sims")]
    pub n_sims: usize,
    pub priors: PriorsConfig,
    pub design: DesignConfig,
    #[serde(default)]
    pub spending: SpendingSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub bpp: BppConfig,
    /// Mixture-weight overrides for a coupled sensitivity rerun.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<PriorOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<UtilityWeights>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seed() -> u64 {
    1
}
fn default_sims() -> usize {
    10_000
}

/// A distribution given directly or fitted to elicited quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistributionConfig {
    Elicited { elicit: Elicitation },
    Explicit(Distribution),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elicitation {
    #[serde(flatten)]
    pub family: Family,
    /// `[probability, value]` pairs.
    pub quantiles: Vec<[f64; 2]>,
    #[serde(default)]
    pub scale: FitScale,
}

impl DistributionConfig {
    pub fn resolve(&self, field: &str) -> Result<Distribution, ConfigError> {
        match self {
            DistributionConfig::Explicit(d) => Ok(*d),
            DistributionConfig::Elicited { elicit } => {
                let pairs: Vec<(f64, f64)> =
                    elicit.quantiles.iter().map(|q| (q[0], q[1])).collect();
                fit_from_quantiles(elicit.family, &pairs, elicit.scale)
                    .map_err(|e| ConfigError::from_core(field, e))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub lambda_per_month: DistributionConfig,
    pub gamma: DistributionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorsConfig {
    pub p_separate: f64,
    pub p_dte: f64,
    pub post_hr: DistributionConfig,
    pub delay_months: DistributionConfig,
    pub control: ControlConfig,
}

impl PriorsConfig {
    pub fn resolve(&self) -> Result<PriorSpec, ConfigError> {
        let spec = PriorSpec {
            p_separate: self.p_separate,
            p_dte: self.p_dte,
            post_hr: self.post_hr.resolve("priors.post_hr")?,
            delay_months: self.delay_months.resolve("priors.delay_months")?,
            control: ControlPrior {
                lambda_per_month: self
                    .control
                    .lambda_per_month
                    .resolve("priors.control.lambda_per_month")?,
                gamma: self.control.gamma.resolve("priors.control.gamma")?,
            },
        };
        spec.validate()
            .map_err(|e| ConfigError::from_core("priors", e))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub n_control: usize,
    pub n_experimental: usize,
    pub total_events: usize,
    pub recruitment_duration_months: f64,
    /// Interim information fractions; the final analysis at 1 is implied.
    #[serde(default)]
    pub interim_fractions: Vec<f64>,
}

impl DesignConfig {
    pub fn fractions(&self) -> Vec<f64> {
        let mut f = self.interim_fractions.clone();
        f.push(1.0);
        f
    }

    pub fn build(
        &self,
        spending: &SpendingSpec,
        interims: &[f64],
    ) -> Result<TrialDesign, ConfigError> {
        let mut fractions = interims.to_vec();
        fractions.push(1.0);
        let bounds = compute_boundaries(spending, &fractions)
            .map_err(|e| ConfigError::from_core("spending", e))?;
        TrialDesign::new(
            self.n_control,
            self.n_experimental,
            self.total_events,
            self.recruitment_duration_months,
            bounds,
        )
        .map_err(|e| ConfigError::from_core("design", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// One design per entry, each with a single interim at that fraction.
    pub one_look_fractions: Vec<f64>,
    #[serde(default = "default_true")]
    pub include_no_interim: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BppConfig {
    #[serde(default = "default_bpp_trials")]
    pub n_trials: usize,
    #[serde(default = "default_bpp_draws")]
    pub m_draws: usize,
    /// Interim fractions to evaluate; each uses the one-look design at that
    /// fraction. Empty means the design's interim fractions.
    #[serde(default)]
    pub fractions: Vec<f64>,
    #[serde(default = "default_lower")]
    pub lower_threshold: f64,
    #[serde(default = "default_upper")]
    pub upper_threshold: f64,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default)]
    pub posterior: PosteriorConfig,
}

fn default_bpp_trials() -> usize {
    500
}
fn default_bpp_draws() -> usize {
    500
}
fn default_lower() -> f64 {
    0.05
}
fn default_upper() -> f64 {
    0.95
}
fn default_bins() -> usize {
    20
}

impl Default for BppConfig {
    fn default() -> Self {
        Self {
            n_trials: default_bpp_trials(),
            m_draws: default_bpp_draws(),
            fractions: Vec::new(),
            lower_threshold: default_lower(),
            upper_threshold: default_upper(),
            histogram_bins: default_bins(),
            posterior: PosteriorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Json,
    JsonPretty,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_json(text: &[u8]) -> Result<Self, ConfigError> {
        let cfg: RunConfig =
            serde_json::from_slice(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Structural checks that do not need any computation.
    pub fn check(&self) -> Result<(), ConfigError> {
        if self.n_sims == 0 {
            return Err(ConfigError::field("n_sims", "must be at least 1"));
        }
        if self.bpp.n_trials == 0 {
            return Err(ConfigError::field("bpp.n_trials", "must be at least 1"));
        }
        if self.bpp.m_draws < 100 {
            return Err(ConfigError::field("bpp.m_draws", "must be at least 100"));
        }
        if !(self.bpp.lower_threshold <= self.bpp.upper_threshold) {
            return Err(ConfigError::field(
                "bpp.lower_threshold",
                "must not exceed upper_threshold",
            ));
        }
        if self.bpp.histogram_bins == 0 {
            return Err(ConfigError::field(
                "bpp.histogram_bins",
                "must be at least 1",
            ));
        }
        if !(self.design.recruitment_duration_months >= 0.0) {
            return Err(ConfigError::field(
                "design.recruitment_duration_months",
                "must be nonnegative",
            ));
        }
        self.priors.resolve()?;
        self.spending
            .validate()
            .map_err(|e| ConfigError::from_core("spending", e))?;
        if let Some(s) = &self.sweep {
            if s.one_look_fractions.is_empty() && !s.include_no_interim {
                return Err(ConfigError::field(
                    "sweep.one_look_fractions",
                    "sweep has no designs",
                ));
            }
            if s.one_look_fractions.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
                return Err(ConfigError::field(
                    "sweep.one_look_fractions",
                    "must lie in (0, 1)",
                ));
            }
        }
        Ok(())
    }

    /// Designs evaluated by `sweep`, in output order.
    pub fn sweep_grid(&self) -> Result<Vec<TrialDesign>, ConfigError> {
        let sweep = self
            .sweep
            .as_ref()
            .ok_or_else(|| ConfigError::field("sweep", "section required by the sweep command"))?;
        let mut grid = Vec::new();
        for &f in &sweep.one_look_fractions {
            grid.push(self.design.build(&self.spending, &[f])?);
        }
        if sweep.include_no_interim {
            grid.push(self.design.build(&self.spending, &[])?);
        }
        Ok(grid)
    }

    pub fn bpp_fractions(&self) -> Vec<f64> {
        if self.bpp.fractions.is_empty() {
            self.design.interim_fractions.clone()
        } else {
            self.bpp.fractions.clone()
        }
    }
}
