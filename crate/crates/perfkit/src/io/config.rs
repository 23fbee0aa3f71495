//! Run configuration: one JSON document with `model`, `priors`, `sampler`,
//! `noise` and `phantom` sections. Omitted fields take the standard defaults
//! and the fully resolved document is echoed into every run summary; unknown
//! keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_to_string, IoError};
use crate::model::{
    elicit_noise_prior, NoisePrior, SpatialPriorConfig, VoxelwisePriorConfig, VpPrior,
};
use crate::phantom::PhantomConfig;
use crate::sampler::{ModelKind, PriorSpec, SamplerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub priors: PriorsSection,
    pub sampler: SamplerSection,
    pub noise: NoiseSection,
    pub phantom: PhantomSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { kind: ModelKind::TwoComp }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PriorsSection {
    pub voxelwise: VoxelwisePriorConfig,
    pub spatial: SpatialPriorConfig,
    pub vp: VpPrior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub burn_in: usize,
    pub iterations: usize,
    pub thin: usize,
    pub target_acceptance: f64,
    pub adapt_window: usize,
    pub initial_proposal_sd: f64,
    pub seed: u64,
    pub progress_interval: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            burn_in: 5000,
            iterations: 5000,
            thin: 3,
            target_acceptance: 0.2,
            adapt_window: 50,
            initial_proposal_sd: 0.5,
            seed: 1,
            progress_interval: 500,
        }
    }
}

/// Either an explicit Inverse-Gamma prior `(a, b)` on the noise variance or
/// an elicitation pair `(expected_peak, target_snr)`; exactly one of the two.
/// An empty section resolves to the elicitation defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_peak: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_snr: Option<f64>,
}

const DEFAULT_EXPECTED_PEAK: f64 = 0.85;
const DEFAULT_TARGET_SNR: f64 = 17.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct PhantomSection(pub PhantomConfig);

impl RunConfig {
    pub fn validate(&self) -> Result<(), IoError> {
        let nope = |message: String| IoError::Config { path: String::new(), message };
        self.priors.voxelwise.validate().map_err(|e| nope(format!("priors.voxelwise: {e}")))?;
        self.priors.spatial.validate().map_err(|e| nope(format!("priors.spatial: {e}")))?;
        if !self.priors.vp.tau.is_finite() || self.priors.vp.tau <= 0.0 {
            return Err(nope(format!("priors.vp.tau must be positive, got {}", self.priors.vp.tau)));
        }
        let s = &self.sampler;
        if s.burn_in == 0 || s.iterations == 0 || s.thin == 0 || s.adapt_window == 0 {
            return Err(nope("sampler: all iteration counts must be at least 1".into()));
        }
        if s.iterations / s.thin == 0 {
            return Err(nope(format!(
                "sampler: {} iterations at stride {} store no draws",
                s.iterations, s.thin
            )));
        }
        if !(s.target_acceptance > 0.0 && s.target_acceptance < 1.0) {
            return Err(nope(format!(
                "sampler.target_acceptance must lie in (0,1), got {}",
                s.target_acceptance
            )));
        }
        if !s.initial_proposal_sd.is_finite() || s.initial_proposal_sd <= 0.0 {
            return Err(nope(format!(
                "sampler.initial_proposal_sd must be positive, got {}",
                s.initial_proposal_sd
            )));
        }
        match (&self.noise.a, &self.noise.b, &self.noise.expected_peak, &self.noise.target_snr) {
            (Some(a), Some(b), None, None) => {
                NoisePrior { a: *a, b: *b }.validate().map_err(|e| nope(format!("noise: {e}")))?;
            }
            (None, None, Some(peak), Some(snr)) => {
                if !peak.is_finite() || *peak <= 0.0 {
                    return Err(nope(format!("noise.expected_peak must be positive, got {peak}")));
                }
                if !snr.is_finite() || *snr <= 0.0 {
                    return Err(nope(format!("noise.target_snr must be positive, got {snr}")));
                }
            }
            (None, None, None, None) => {}
            _ => {
                return Err(nope(
                    "noise: give either {a, b} or {expected_peak, target_snr}, not a mixture"
                        .into(),
                ))
            }
        }
        self.phantom.0.validate().map_err(|e| nope(format!("phantom: {e}")))?;
        Ok(())
    }

    /// Resolves the noise prior for a region of `n_masked` voxels.
    pub fn noise_prior(&self, n_masked: usize) -> Result<NoisePrior, IoError> {
        match (&self.noise.a, &self.noise.b, &self.noise.expected_peak, &self.noise.target_snr) {
            (Some(a), Some(b), _, _) => Ok(NoisePrior { a: *a, b: *b }),
            (_, _, Some(peak), Some(snr)) => Ok(elicit_noise_prior(n_masked, *peak, *snr)?),
            _ => Ok(elicit_noise_prior(n_masked, DEFAULT_EXPECTED_PEAK, DEFAULT_TARGET_SNR)?),
        }
    }

    /// Materialises the sampler configuration for a fit over `n_masked`
    /// voxels. `seed` overrides the configured seed when given.
    pub fn sampler_config(
        &self,
        model: ModelKind,
        spatial: bool,
        seed: Option<u64>,
        n_masked: usize,
    ) -> Result<SamplerConfig, IoError> {
        let prior = if spatial {
            PriorSpec::Spatial(self.priors.spatial)
        } else {
            PriorSpec::Voxelwise(self.priors.voxelwise)
        };
        let mut cfg = SamplerConfig::new(model, prior, self.noise_prior(n_masked)?);
        cfg.vp_prior = self.priors.vp;
        cfg.burn_in = self.sampler.burn_in;
        cfg.iterations = self.sampler.iterations;
        cfg.thin = self.sampler.thin;
        cfg.target_acceptance = self.sampler.target_acceptance;
        cfg.adapt_window = self.sampler.adapt_window;
        cfg.initial_proposal_sd = self.sampler.initial_proposal_sd;
        cfg.seed = seed.unwrap_or(self.sampler.seed);
        cfg.progress_interval = self.sampler.progress_interval;
        cfg.validate().map_err(|e| IoError::Config {
            path: String::new(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }
}

/// Parses and validates a run-configuration document, applying defaults for
/// every omitted field.
pub fn read_config(path: &Path) -> Result<RunConfig, IoError> {
    let text = read_to_string(path)?;
    let mut config: RunConfig = serde_json::from_str(&text).map_err(|e| IoError::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    config.validate().map_err(|e| match e {
        IoError::Config { message, .. } => {
            IoError::Config { path: path.display().to_string(), message }
        }
        other => other,
    })?;
    if config.noise == NoiseSection::default() {
        config.noise.expected_peak = Some(DEFAULT_EXPECTED_PEAK);
        config.noise.target_snr = Some(DEFAULT_TARGET_SNR);
    }
    Ok(config)
}
