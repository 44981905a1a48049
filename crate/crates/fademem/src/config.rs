//! Engine configuration: every dynamics hyperparameter plus layer capacities,
//! with validation and a flat TOML file format.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// All tunables of the memory engine.
///
/// Defaults are the calibrated values the engine ships with; every field can
/// be overridden from a flat TOML file whose keys mirror the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Importance weight on contextual relevance.
    pub alpha: f64,
    /// Importance weight on the saturated access rate.
    pub beta_freq: f64,
    /// Importance weight on recency.
    pub gamma: f64,
    /// Recency decay rate per day.
    pub delta: f64,
    /// Access-rate decay per day (time-decayed access counting).
    pub kappa: f64,
    /// Promotion threshold into the long-term layer.
    pub theta_promote: f64,
    /// Demotion threshold into the short-term layer.
    pub theta_demote: f64,
    /// Base decay rate per day.
    pub lambda_base: f64,
    /// How strongly importance slows decay.
    pub mu: f64,
    /// Decay shape exponent for the long-term layer (sub-linear).
    pub shape_lml: f64,
    /// Decay shape exponent for the short-term layer (super-linear).
    pub shape_sml: f64,
    /// Base reinforcement applied on access.
    pub delta_v: f64,
    /// Sliding window (days) for counting recent accesses.
    pub window_days: f64,
    /// Diminishing-returns constant for repeated in-window accesses.
    pub big_n: f64,
    /// Strength floor below which records are pruned. Zero disables
    /// strength-based pruning.
    pub eps_prune: f64,
    /// Dormancy limit in days.
    pub t_max_days: f64,
    /// Similarity gate for conflict detection.
    pub theta_sim: f64,
    /// Redundancy penalty weight for compatible overlaps.
    pub omega: f64,
    /// Suppression strength for contradicted memories.
    pub rho: f64,
    /// Age-normalization window (days) for suppression.
    pub w_age_days: f64,
    /// Similarity gate for fusion clustering.
    pub theta_fusion: f64,
    /// Temporal locality window (days) for fusion clustering.
    pub t_window_days: f64,
    /// Minimum cluster size to attempt fusion.
    pub cluster_min_size: usize,
    /// Variance bonus weight on fused strength.
    pub eps_var: f64,
    /// Minimum preservation score for a fusion to be accepted.
    pub theta_preserve: f64,
    /// Long-term layer capacity.
    pub cap_lml: usize,
    /// Short-term layer capacity.
    pub cap_sml: usize,
    /// Number of recent query embeddings kept as context.
    pub context_window_len: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            alpha: 0.5,
            beta_freq: 0.3,
            gamma: 0.2,
            delta: 0.1,
            kappa: 0.1,
            theta_promote: 0.7,
            theta_demote: 0.3,
            lambda_base: 0.1,
            mu: 1.0,
            shape_lml: 0.8,
            shape_sml: 1.2,
            delta_v: 0.2,
            window_days: 7.0,
            big_n: 5.0,
            eps_prune: 0.05,
            t_max_days: 45.0,
            theta_sim: 0.8,
            omega: 0.25,
            rho: 0.5,
            w_age_days: 30.0,
            theta_fusion: 0.75,
            t_window_days: 3.0,
            cluster_min_size: 3,
            eps_var: 0.1,
            theta_preserve: 0.8,
            cap_lml: 1000,
            cap_sml: 500,
            context_window_len: 5,
        }
    }
}

/// Configuration errors; validation reports the first violated invariant by
/// name.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config file: {0}")]
    Parse(#[from] toml::de::Error),
}

impl EngineConfig {
    /// Checks every invariant and returns the config unchanged when they all
    /// hold. The error message names the first violated invariant.
    pub fn validate(self) -> Result<EngineConfig, ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));

        for (name, v) in [
            ("alpha", self.alpha),
            ("beta_freq", self.beta_freq),
            ("gamma", self.gamma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return invalid(format!("{name} must be a non-negative finite number"));
            }
        }
        let weight_sum = self.alpha + self.beta_freq + self.gamma;
        if (weight_sum - 1.0).abs() > 1e-9 {
            return invalid(format!(
                "importance weights must sum to 1 (alpha + beta_freq + gamma = {weight_sum})"
            ));
        }

        for (name, v) in [("theta_promote", self.theta_promote), ("theta_demote", self.theta_demote)]
        {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return invalid(format!("{name} must lie in [0,1]"));
            }
        }
        if self.theta_promote <= self.theta_demote {
            return invalid(format!(
                "hysteresis violated: theta_promote must exceed theta_demote \
                 ({} <= {})",
                self.theta_promote, self.theta_demote
            ));
        }

        for (name, v) in [
            ("delta", self.delta),
            ("kappa", self.kappa),
            ("lambda_base", self.lambda_base),
            ("mu", self.mu),
            ("shape_lml", self.shape_lml),
            ("shape_sml", self.shape_sml),
            ("window_days", self.window_days),
            ("big_n", self.big_n),
            ("t_max_days", self.t_max_days),
            ("rho", self.rho),
            ("w_age_days", self.w_age_days),
            ("t_window_days", self.t_window_days),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return invalid(format!("{name} must be positive"));
            }
        }

        if !self.delta_v.is_finite() || !(self.delta_v > 0.0 && self.delta_v <= 1.0) {
            return invalid(format!("delta_v must lie in (0,1], got {}", self.delta_v));
        }
        // eps_prune = 0 is allowed: it turns strength-based pruning off,
        // which the benchmark uses for its no-forgetting baseline runs.
        if !self.eps_prune.is_finite() || !(0.0..1.0).contains(&self.eps_prune) {
            return invalid(format!("eps_prune must lie in [0,1), got {}", self.eps_prune));
        }
        for (name, v) in [
            ("theta_sim", self.theta_sim),
            ("omega", self.omega),
            ("theta_fusion", self.theta_fusion),
            ("theta_preserve", self.theta_preserve),
        ] {
            if !v.is_finite() || !(v > 0.0 && v <= 1.0) {
                return invalid(format!("{name} must lie in (0,1]"));
            }
        }
        if !self.eps_var.is_finite() || self.eps_var < 0.0 {
            return invalid(format!("eps_var must be non-negative, got {}", self.eps_var));
        }

        if self.cluster_min_size == 0 {
            return invalid("cluster_min_size must be at least 1".to_string());
        }
        if self.cap_lml == 0 || self.cap_sml == 0 {
            return invalid("layer capacities must be at least 1".to_string());
        }
        if self.context_window_len == 0 {
            return invalid("context_window_len must be at least 1".to_string());
        }

        Ok(self)
    }

    /// Parses a flat TOML document. Missing keys fall back to defaults;
    /// unknown keys are an error.
    pub fn from_toml_str(text: &str) -> Result<EngineConfig, ConfigError> {
        let cfg: EngineConfig = toml::from_str(text)?;
        cfg.validate()
    }

    pub fn load(path: &Path) -> Result<EngineConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        EngineConfig::from_toml_str(&text)
    }

    pub fn shape_for(&self, layer: crate::record::Layer) -> f64 {
        match layer {
            crate::record::Layer::Lml => self.shape_lml,
            crate::record::Layer::Sml => self.shape_sml,
        }
    }

    pub fn cap_for(&self, layer: crate::record::Layer) -> usize {
        match layer {
            crate::record::Layer::Lml => self.cap_lml,
            crate::record::Layer::Sml => self.cap_sml,
        }
    }
}
