//! Log-likelihood and log-prior terms of the hierarchical regression model.
//!
//! The Gaussian log-likelihood is fully normalised (the `2 pi` term enters
//! negatively) so that deviance-based diagnostics are comparable across
//! models; additive constants are never dropped.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinetics::KineticParams;
use crate::lattice::{Lattice, LatticeError};

pub const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("series length mismatch: observed {observed}, model {model}")]
    LengthMismatch { observed: usize, model: usize },
    #[error("noise precision must be finite and positive, got {0}")]
    InvalidPrecision(f64),
    #[error("{name} must be finite and positive, got {value}")]
    InvalidConstant { name: &'static str, value: f64 },
    #[error("voxel count must be at least 1")]
    NoVoxels,
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Gaussian prior means and fixed precisions for the independent voxelwise
/// model; index 0 is the slow compartment, index 1 the fast one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VoxelwisePriorConfig {
    pub mu_theta: [f64; 2],
    pub mu_gamma: [f64; 2],
    pub tau_theta: [f64; 2],
    pub tau_gamma: [f64; 2],
}

impl Default for VoxelwisePriorConfig {
    fn default() -> Self {
        VoxelwisePriorConfig {
            mu_theta: [0.0, 5.0f64.ln()],
            mu_gamma: [0.0, 0.0],
            tau_theta: [1.0, 1.0],
            tau_gamma: [1.0, 1.0],
        }
    }
}

impl VoxelwisePriorConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("tau_theta1", self.tau_theta[0]),
            ("tau_theta2", self.tau_theta[1]),
            ("tau_gamma1", self.tau_gamma[0]),
            ("tau_gamma2", self.tau_gamma[1]),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(ModelError::InvalidConstant { name, value: v });
            }
        }
        for (name, v) in [
            ("mu_theta1", self.mu_theta[0]),
            ("mu_theta2", self.mu_theta[1]),
            ("mu_gamma1", self.mu_gamma[0]),
            ("mu_gamma2", self.mu_gamma[1]),
        ] {
            if !v.is_finite() {
                return Err(ModelError::InvalidConstant { name, value: v });
            }
        }
        Ok(())
    }
}

/// Gamma hyperprior constants (rate parameterisation) on the four GMRF field
/// precisions of the spatial model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpatialPriorConfig {
    pub a_theta: [f64; 2],
    pub b_theta: [f64; 2],
    pub a_gamma: [f64; 2],
    pub b_gamma: [f64; 2],
}

impl Default for SpatialPriorConfig {
    fn default() -> Self {
        SpatialPriorConfig {
            a_theta: [1000.0, 1000.0],
            b_theta: [1.0, 1.0],
            a_gamma: [1e-4, 1e-4],
            b_gamma: [0.01, 0.01],
        }
    }
}

impl SpatialPriorConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("a_theta1", self.a_theta[0]),
            ("a_theta2", self.a_theta[1]),
            ("b_theta1", self.b_theta[0]),
            ("b_theta2", self.b_theta[1]),
            ("a_gamma1", self.a_gamma[0]),
            ("a_gamma2", self.a_gamma[1]),
            ("b_gamma1", self.b_gamma[0]),
            ("b_gamma2", self.b_gamma[1]),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(ModelError::InvalidConstant { name, value: v });
            }
        }
        Ok(())
    }
}

/// Gaussian prior on the logit plasma volume fraction of the extended Tofts
/// model. Centred so the prior median of `v_p` is 0.05.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VpPrior {
    pub mu: f64,
    pub tau: f64,
}

impl Default for VpPrior {
    fn default() -> Self {
        VpPrior { mu: crate::kinetics::logit(0.05), tau: 1.0 }
    }
}

/// Inverse-Gamma prior `IG(a, b)` on the noise variance, equivalently a
/// Gamma prior (rate parameterisation) on the precision `tau_eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisePrior {
    pub a: f64,
    pub b: f64,
}

impl NoisePrior {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.a.is_finite() || self.a <= 0.0 {
            return Err(ModelError::InvalidConstant { name: "noise a", value: self.a });
        }
        if !self.b.is_finite() || self.b <= 0.0 {
            return Err(ModelError::InvalidConstant { name: "noise b", value: self.b });
        }
        Ok(())
    }

    /// Prior mean of the precision `tau_eps`.
    pub fn mean_precision(&self) -> f64 {
        self.a / self.b
    }

    /// Prior mean of the variance (requires `a > 1`).
    pub fn mean_variance(&self) -> f64 {
        self.b / (self.a - 1.0)
    }
}

/// Noise prior elicitation: prior mean of `sigma^2` is `(peak / snr)^2` and
/// the shape grows with the number of voxels, `a = 1 + 0.1 N`, so the prior
/// is more informative for larger regions of interest.
pub fn elicit_noise_prior(
    n_voxels: usize,
    expected_peak: f64,
    target_snr: f64,
) -> Result<NoisePrior, ModelError> {
    if n_voxels == 0 {
        return Err(ModelError::NoVoxels);
    }
    if !expected_peak.is_finite() || expected_peak <= 0.0 {
        return Err(ModelError::InvalidConstant { name: "expected_peak", value: expected_peak });
    }
    if !target_snr.is_finite() || target_snr <= 0.0 {
        return Err(ModelError::InvalidConstant { name: "target_snr", value: target_snr });
    }
    let a = 1.0 + 0.1 * n_voxels as f64;
    let sigma2 = (expected_peak / target_snr).powi(2);
    Ok(NoisePrior { a, b: (a - 1.0) * sigma2 })
}

/// Normalised Gaussian log-likelihood of one voxel's series:
/// `(T/2) log(tau) - (T/2) log(2 pi) - (tau/2) sum (y_j - c_j)^2`.
pub fn log_likelihood_voxel(y: &[f64], ctc: &[f64], tau_eps: f64) -> Result<f64, ModelError> {
    if y.len() != ctc.len() {
        return Err(ModelError::LengthMismatch { observed: y.len(), model: ctc.len() });
    }
    if !tau_eps.is_finite() || tau_eps <= 0.0 {
        return Err(ModelError::InvalidPrecision(tau_eps));
    }
    let sse: f64 = y.iter().zip(ctc).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(log_likelihood_from_sse(y.len(), sse, tau_eps))
}

/// Likelihood evaluated from a precomputed residual sum of squares.
pub fn log_likelihood_from_sse(n_times: usize, sse: f64, tau_eps: f64) -> f64 {
    let t = n_times as f64;
    0.5 * t * tau_eps.ln() - 0.5 * t * LN_2PI - 0.5 * tau_eps * sse
}

fn gaussian_log_density(x: f64, mu: f64, tau: f64) -> f64 {
    0.5 * (tau.ln() - LN_2PI) - 0.5 * tau * (x - mu) * (x - mu)
}

/// Sum of independent Gaussian log-densities on the log rate and transfer
/// constants, constants included. The extended-Tofts plasma fraction has its
/// own prior, see [`log_prior_vp`].
pub fn log_prior_voxelwise(params: &KineticParams, cfg: &VoxelwisePriorConfig) -> f64 {
    match *params {
        KineticParams::OneComp { theta, gamma } | KineticParams::ExtTofts { theta, gamma, .. } => {
            gaussian_log_density(theta, cfg.mu_theta[0], cfg.tau_theta[0])
                + gaussian_log_density(gamma, cfg.mu_gamma[0], cfg.tau_gamma[0])
        }
        KineticParams::TwoComp { theta1, theta2, gamma1, gamma2 } => {
            gaussian_log_density(theta1, cfg.mu_theta[0], cfg.tau_theta[0])
                + gaussian_log_density(theta2, cfg.mu_theta[1], cfg.tau_theta[1])
                + gaussian_log_density(gamma1, cfg.mu_gamma[0], cfg.tau_gamma[0])
                + gaussian_log_density(gamma2, cfg.mu_gamma[1], cfg.tau_gamma[1])
        }
    }
}

/// Gaussian log-density of the logit plasma fraction, constants included.
pub fn log_prior_vp(logit_vp: f64, prior: &VpPrior) -> f64 {
    gaussian_log_density(logit_vp, prior.mu, prior.tau)
}

/// Log full-conditional kernel of one voxel's field value under the GMRF
/// prior, up to an additive constant:
/// `-(tau/2) sum_{j in d(i)} (field_i - field_j)^2`.
pub fn log_prior_spatial_local(
    lattice: &Lattice,
    i: usize,
    field: &[f64],
    tau_field: f64,
) -> Result<f64, ModelError> {
    Ok(-0.5 * tau_field * lattice.local_diff_sumsq(i, field)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{Continuous, ContinuousCDF, Normal};

    #[test]
    fn zero_residual_single_point_likelihood() {
        let v = log_likelihood_voxel(&[0.3], &[0.3], 1.0).unwrap();
        assert_abs_diff_eq!(v, -0.5 * LN_2PI, epsilon = 1e-15);
        assert_abs_diff_eq!(v, -0.9189385332046727, epsilon = 1e-12);
    }

    #[test]
    fn doubling_residuals_subtracts_three_halves_of_quadratic_form() {
        let y = [1.0, 2.0, 0.5];
        let c = [0.8, 1.7, 0.9];
        let tau = 2.5;
        let sse: f64 = y.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
        let base = log_likelihood_voxel(&y, &c, tau).unwrap();
        let c2: Vec<f64> = y.iter().zip(&c).map(|(a, b)| a - 2.0 * (a - b)).collect();
        let doubled = log_likelihood_voxel(&y, &c2, tau).unwrap();
        assert_relative_eq!(base - doubled, 0.5 * tau * 3.0 * sse, max_relative = 1e-12);
    }

    #[test]
    fn likelihood_matches_density_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let t = rng.random_range(1..20usize);
            let tau: f64 = rng.random_range(0.1..30.0);
            let sigma = tau.sqrt().recip();
            let y: Vec<f64> = (0..t).map(|_| rng.random_range(-2.0..2.0)).collect();
            let c: Vec<f64> = (0..t).map(|_| rng.random_range(-2.0..2.0)).collect();
            let oracle: f64 = y
                .iter()
                .zip(&c)
                .map(|(&yi, &ci)| Normal::new(ci, sigma).unwrap().ln_pdf(yi))
                .sum();
            let v = log_likelihood_voxel(&y, &c, tau).unwrap();
            assert_relative_eq!(v, oracle, max_relative = 1e-12);
        }
    }

    #[test]
    fn likelihood_rejects_mismatched_lengths_and_bad_precision() {
        assert!(log_likelihood_voxel(&[1.0, 2.0], &[1.0], 1.0).is_err());
        assert!(log_likelihood_voxel(&[1.0], &[1.0], 0.0).is_err());
        assert!(log_likelihood_voxel(&[1.0], &[1.0], f64::NAN).is_err());
    }

    #[test]
    fn likelihood_maximised_at_score_equation_root() {
        let y = [0.4, 1.1, 0.9, 0.2];
        let c = [0.5, 1.0, 0.7, 0.3];
        let sse: f64 = y.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
        let tau_star = y.len() as f64 / sse;
        let at = log_likelihood_voxel(&y, &c, tau_star).unwrap();
        for tau in [0.5 * tau_star, 0.9 * tau_star, 1.1 * tau_star, 2.0 * tau_star] {
            assert!(log_likelihood_voxel(&y, &c, tau).unwrap() < at);
        }
    }

    #[test]
    fn voxelwise_prior_at_means() {
        let cfg = VoxelwisePriorConfig::default();
        let p = KineticParams::TwoComp {
            theta1: 0.0,
            theta2: 5.0f64.ln(),
            gamma1: 0.0,
            gamma2: 0.0,
        };
        let v = log_prior_voxelwise(&p, &cfg);
        // Each at-mean term contributes (1/2) log(tau / 2 pi).
        assert_relative_eq!(v, 4.0 * 0.5 * (1.0f64.ln() - LN_2PI), max_relative = 1e-12);
    }

    #[test]
    fn prior_mass_below_rate_twenty() {
        // Under N(0, 1) on theta1, P(k_ep1 <= 20) = Phi(log 20) ~ 0.9986.
        let phi = Normal::new(0.0, 1.0).unwrap().cdf(20.0f64.ln());
        assert_abs_diff_eq!(phi, 0.9986, epsilon = 2e-4);
    }

    #[test]
    fn voxelwise_prior_matches_density_product_oracle() {
        let cfg = VoxelwisePriorConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let p = KineticParams::TwoComp {
                theta1: rng.random_range(-3.0..3.0),
                theta2: rng.random_range(-3.0..3.0),
                gamma1: rng.random_range(-3.0..3.0),
                gamma2: rng.random_range(-3.0..3.0),
            };
            let (t1, t2, g1, g2) = match p {
                KineticParams::TwoComp { theta1, theta2, gamma1, gamma2 } => {
                    (theta1, theta2, gamma1, gamma2)
                }
                _ => unreachable!(),
            };
            let oracle = Normal::new(0.0, 1.0).unwrap().ln_pdf(t1)
                + Normal::new(5.0f64.ln(), 1.0).unwrap().ln_pdf(t2)
                + Normal::new(0.0, 1.0).unwrap().ln_pdf(g1)
                + Normal::new(0.0, 1.0).unwrap().ln_pdf(g2);
            assert_relative_eq!(log_prior_voxelwise(&p, &cfg), oracle, max_relative = 1e-12);
        }
    }

    #[test]
    fn spatial_local_kernel_basics() {
        let lattice = Lattice::new(3, 3, &[true; 9]).unwrap();
        let field = vec![1.2; 9];
        assert_eq!(log_prior_spatial_local(&lattice, 4, &field, 3.0).unwrap(), 0.0);

        let mut field = vec![0.0; 9];
        field[4] = 0.7;
        let v1 = log_prior_spatial_local(&lattice, 4, &field, 2.0).unwrap();
        let v2 = log_prior_spatial_local(&lattice, 4, &field, 4.0).unwrap();
        assert_relative_eq!(v2, 2.0 * v1, max_relative = 1e-14);
    }

    #[test]
    fn spatial_local_kernel_is_conjugate_gaussian() {
        // Normalising exp of the kernel over a grid of centre values must
        // reproduce a Gaussian with mean = neighbour average and
        // precision = tau * degree.
        let lattice = Lattice::new(3, 3, &[true; 9]).unwrap();
        let mut field = vec![0.0; 9];
        field[1] = 0.4;
        field[3] = -0.3;
        field[5] = 1.1;
        field[7] = 0.2;
        let tau = 2.3;
        let degree = 4.0;
        let nbr_mean = (0.4 - 0.3 + 1.1 + 0.2) / degree;

        let n = 40_001;
        let (lo, hi) = (nbr_mean - 6.0, nbr_mean + 6.0);
        let step = (hi - lo) / (n - 1) as f64;
        let mut weights = Vec::with_capacity(n);
        for k in 0..n {
            let x = lo + k as f64 * step;
            field[4] = x;
            weights.push(log_prior_spatial_local(&lattice, 4, &field, tau).unwrap().exp());
        }
        let total: f64 = weights.iter().sum();
        let mean: f64 =
            weights.iter().enumerate().map(|(k, w)| (lo + k as f64 * step) * w).sum::<f64>() / total;
        let var: f64 = weights
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let d = lo + k as f64 * step - mean;
                d * d * w
            })
            .sum::<f64>()
            / total;
        assert_abs_diff_eq!(mean, nbr_mean, epsilon = 1e-6);
        assert_relative_eq!(1.0 / var, tau * degree, max_relative = 1e-4);
    }

    #[test]
    fn local_kernels_double_count_the_joint_pairwise_kernel() {
        let lattice = Lattice::new(4, 4, &[true; 16]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let field: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tau = 1.7;
        let local_sum: f64 = (0..16)
            .map(|i| log_prior_spatial_local(&lattice, i, &field, tau).unwrap())
            .sum();
        let joint = -0.5 * tau * lattice.pair_diff_sumsq(&field);
        assert_relative_eq!(local_sum, 2.0 * joint, max_relative = 1e-12);
    }

    #[test]
    fn noise_prior_elicitation() {
        let p = elicit_noise_prior(10, 0.75, 15.0).unwrap();
        assert_abs_diff_eq!(p.a, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.b, 0.0025, epsilon = 1e-15);
        assert_abs_diff_eq!(p.mean_variance(), 0.0025, epsilon = 1e-15);

        // Prior mean of sigma^2 does not depend on N.
        for n in [1, 5, 100, 625] {
            let p = elicit_noise_prior(n, 0.75, 15.0).unwrap();
            assert_relative_eq!(p.mean_variance(), 0.0025, max_relative = 1e-12);
        }

        // The clinical SNR range brackets the elicited targets.
        let lo = elicit_noise_prior(100, 0.75, 10.0).unwrap();
        let hi = elicit_noise_prior(100, 0.75, 20.0).unwrap();
        assert!(hi.mean_variance() < lo.mean_variance());

        assert!(elicit_noise_prior(0, 0.75, 15.0).is_err());
        assert!(elicit_noise_prior(10, 0.0, 15.0).is_err());
        assert!(elicit_noise_prior(10, 0.75, -1.0).is_err());
    }
}
