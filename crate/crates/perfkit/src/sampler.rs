//! Metropolis-within-Gibbs engine: random-walk MH updates for the log
//! kinetic parameters, Gibbs updates for all precisions, multiplicative
//! proposal tuning during burn-in and deterministic seeding.
//!
//! Within a sweep the masked voxels are visited in a fresh random order and
//! every kinetic parameter gets one single-site update; the precision Gibbs
//! steps run once per sweep afterwards. Proposal scales are frozen at the end
//! of burn-in so the post-burn-in chain is time-homogeneous.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::Dataset;
use crate::kinetics::{aif_value, conv_exp_unit, sigmoid, KineticParams};
use crate::lattice::{Lattice, LatticeError};
use crate::model::{
    log_likelihood_from_sse, ModelError, NoisePrior, SpatialPriorConfig, VoxelwisePriorConfig,
    VpPrior,
};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("non-finite likelihood at voxel {voxel} (row {row}, col {col})")]
    NonFiniteLikelihood { voxel: usize, row: usize, col: usize },
    #[error("voxel {0} is outside the mask")]
    OutsideMask(usize),
    #[error("field precision updates require the spatial prior")]
    NotSpatial,
    #[error("parameter index {0} has no spatial field")]
    NoField(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "1comp")]
    OneComp,
    #[serde(rename = "2comp")]
    TwoComp,
    #[serde(rename = "exttofts")]
    ExtTofts,
}

impl ModelKind {
    pub fn n_params(self) -> usize {
        match self {
            ModelKind::OneComp => 2,
            ModelKind::TwoComp => 4,
            ModelKind::ExtTofts => 3,
        }
    }

    pub fn n_compartments(self) -> usize {
        match self {
            ModelKind::TwoComp => 2,
            _ => 1,
        }
    }

    /// Number of leading parameters that carry a GMRF field in spatial mode;
    /// the extended-Tofts plasma fraction keeps an independent prior.
    pub fn n_spatial_fields(self) -> usize {
        match self {
            ModelKind::TwoComp => 4,
            _ => 2,
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::OneComp => &["theta1", "gamma1"],
            ModelKind::TwoComp => &["theta1", "theta2", "gamma1", "gamma2"],
            ModelKind::ExtTofts => &["theta1", "gamma1", "logit_vp"],
        }
    }

    pub fn param_role(self, p: usize) -> ParamRole {
        match (self, p) {
            (ModelKind::OneComp, 0) | (ModelKind::ExtTofts, 0) => ParamRole::Theta(0),
            (ModelKind::OneComp, 1) | (ModelKind::ExtTofts, 1) => ParamRole::Gamma(0),
            (ModelKind::ExtTofts, 2) => ParamRole::LogitVp,
            (ModelKind::TwoComp, 0) => ParamRole::Theta(0),
            (ModelKind::TwoComp, 1) => ParamRole::Theta(1),
            (ModelKind::TwoComp, 2) => ParamRole::Gamma(0),
            (ModelKind::TwoComp, 3) => ParamRole::Gamma(1),
            _ => panic!("parameter index {p} out of range for {self:?}"),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::OneComp => "1comp",
            ModelKind::TwoComp => "2comp",
            ModelKind::ExtTofts => "exttofts",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1comp" => Ok(ModelKind::OneComp),
            "2comp" => Ok(ModelKind::TwoComp),
            "exttofts" => Ok(ModelKind::ExtTofts),
            other => Err(format!("unknown model `{other}` (expected 1comp, 2comp or exttofts)")),
        }
    }
}

/// What a parameter index means: log exchange rate or log transfer constant
/// of compartment `k`, or the logit plasma fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Theta(usize),
    Gamma(usize),
    LogitVp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorSpec {
    Voxelwise(VoxelwisePriorConfig),
    Spatial(SpatialPriorConfig),
}

impl PriorSpec {
    pub fn is_spatial(&self) -> bool {
        matches!(self, PriorSpec::Spatial(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub model: ModelKind,
    pub prior: PriorSpec,
    pub vp_prior: VpPrior,
    pub noise: NoisePrior,
    pub burn_in: usize,
    pub iterations: usize,
    pub thin: usize,
    pub target_acceptance: f64,
    pub adapt_window: usize,
    pub initial_proposal_sd: f64,
    pub seed: u64,
    /// Status line every this many sweeps on stderr; 0 disables.
    pub progress_interval: usize,
    /// Test hook: drop the likelihood contribution (and the posterior
    /// ordering truncation) so the chain targets the prior exactly.
    pub prior_only: bool,
}

impl SamplerConfig {
    pub fn new(model: ModelKind, prior: PriorSpec, noise: NoisePrior) -> Self {
        SamplerConfig {
            model,
            prior,
            vp_prior: VpPrior::default(),
            noise,
            burn_in: 5000,
            iterations: 5000,
            thin: 3,
            target_acceptance: 0.2,
            adapt_window: 50,
            initial_proposal_sd: 0.5,
            seed: 1,
            progress_interval: 500,
            prior_only: false,
        }
    }

    pub fn stored_draws(&self) -> usize {
        if self.thin == 0 {
            0
        } else {
            self.iterations / self.thin
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |msg: String| Err(SamplerError::InvalidConfig(msg));
        if self.burn_in == 0 || self.iterations == 0 || self.thin == 0 || self.adapt_window == 0 {
            return bad("all iteration counts must be at least 1".into());
        }
        if self.stored_draws() == 0 {
            return bad(format!(
                "{} iterations at thinning stride {} store no draws",
                self.iterations, self.thin
            ));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return bad(format!(
                "target acceptance must lie in (0,1), got {}",
                self.target_acceptance
            ));
        }
        if !self.initial_proposal_sd.is_finite() || self.initial_proposal_sd <= 0.0 {
            return bad(format!(
                "initial proposal sd must be positive, got {}",
                self.initial_proposal_sd
            ));
        }
        if self.prior_only && self.prior.is_spatial() {
            return bad("prior-only sampling requires the voxelwise prior (the GMRF is improper)".into());
        }
        self.noise.validate()?;
        match &self.prior {
            PriorSpec::Voxelwise(cfg) => cfg.validate()?,
            PriorSpec::Spatial(cfg) => cfg.validate()?,
        }
        if !self.vp_prior.tau.is_finite() || self.vp_prior.tau <= 0.0 {
            return bad(format!("vp prior precision must be positive, got {}", self.vp_prior.tau));
        }
        Ok(())
    }
}

/// Full state of one chain: per-voxel log-parameters, precisions, proposal
/// scales, acceptance counters, cached curves and the RNG.
#[derive(Debug, Clone)]
pub struct ChainState {
    model: ModelKind,
    nx: usize,
    n_voxels: usize,
    n_times: usize,
    masked: Vec<u32>,
    fields: Vec<Vec<f64>>,
    tau_fields: Vec<f64>,
    tau_eps: f64,
    prop_sd: Vec<Vec<f64>>,
    win_accepted: Vec<Vec<u32>>,
    win_proposed: Vec<Vec<u32>>,
    post_accepted: Vec<Vec<u64>>,
    post_proposed: Vec<Vec<u64>>,
    total_accepted: u64,
    total_proposed: u64,
    units: Vec<Vec<f64>>,
    aif_at: Vec<f64>,
    ctc: Vec<f64>,
    sse: Vec<f64>,
    iteration: u64,
    rng: ChaCha8Rng,
    scratch_unit: Vec<f64>,
    scratch_ctc: Vec<f64>,
}

impl ChainState {
    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn tau_eps(&self) -> f64 {
        self.tau_eps
    }

    pub fn tau_fields(&self) -> &[f64] {
        &self.tau_fields
    }

    pub fn masked(&self) -> &[u32] {
        &self.masked
    }

    pub fn param(&self, p: usize, voxel: usize) -> f64 {
        self.fields[p][voxel]
    }

    pub fn proposal_sd(&self, p: usize, voxel: usize) -> f64 {
        self.prop_sd[p][voxel]
    }

    pub fn ctc_voxel(&self, voxel: usize) -> &[f64] {
        &self.ctc[voxel * self.n_times..(voxel + 1) * self.n_times]
    }

    pub fn sse_voxel(&self, voxel: usize) -> f64 {
        self.sse[voxel]
    }

    /// Post-burn-in acceptance rate of one parameter at one voxel.
    pub fn post_acceptance_rate(&self, p: usize, voxel: usize) -> f64 {
        let proposed = self.post_proposed[p][voxel];
        if proposed == 0 {
            0.0
        } else {
            self.post_accepted[p][voxel] as f64 / proposed as f64
        }
    }

    /// Current kinetic parameters of one voxel.
    pub fn kinetic_params(&self, voxel: usize) -> KineticParams {
        match self.model {
            ModelKind::OneComp => KineticParams::OneComp {
                theta: self.fields[0][voxel],
                gamma: self.fields[1][voxel],
            },
            ModelKind::TwoComp => KineticParams::TwoComp {
                theta1: self.fields[0][voxel],
                theta2: self.fields[1][voxel],
                gamma1: self.fields[2][voxel],
                gamma2: self.fields[3][voxel],
            },
            ModelKind::ExtTofts => KineticParams::ExtTofts {
                theta: self.fields[0][voxel],
                gamma: self.fields[1][voxel],
                logit_vp: self.fields[2][voxel],
            },
        }
    }

    fn mean_acceptance(&self) -> f64 {
        if self.total_proposed == 0 {
            0.0
        } else {
            self.total_accepted as f64 / self.total_proposed as f64
        }
    }

    /// Recomputes the unit curves, combined curve and residual sum of
    /// squares of one voxel from its current parameters.
    fn refresh_voxel(&mut self, dataset: &Dataset, voxel: usize) {
        let t = self.n_times;
        let base = voxel * t;
        let times = dataset.grid().times();
        let aif = dataset.aif();
        for k in 0..self.model.n_compartments() {
            let k_ep = self.fields[theta_index(self.model, k)][voxel].exp();
            for j in 0..t {
                self.units[k][base + j] = conv_exp_unit(aif, k_ep, times[j]);
            }
        }
        let mut ctc = std::mem::take(&mut self.scratch_ctc);
        self.combine_into(voxel, &mut ctc, None);
        self.ctc[base..base + t].copy_from_slice(&ctc);
        self.scratch_ctc = ctc;
        self.sse[voxel] = sse_of(dataset.y_voxel(voxel), &self.ctc[base..base + t]);
    }

    /// Combines cached unit curves into the model curve of `voxel`,
    /// optionally overriding one parameter (and, for a theta override, the
    /// freshly proposed unit curve in `self.scratch_unit`).
    fn combine_into(&self, voxel: usize, out: &mut Vec<f64>, over: Option<(usize, f64)>) {
        let t = self.n_times;
        let base = voxel * t;
        out.clear();
        let value = |p: usize| -> f64 {
            match over {
                Some((q, v)) if q == p => v,
                _ => self.fields[p][voxel],
            }
        };
        let unit = |k: usize, j: usize| -> f64 {
            match over {
                Some((q, _)) if q == theta_index(self.model, k) => self.scratch_unit[j],
                _ => self.units[k][base + j],
            }
        };
        match self.model {
            ModelKind::OneComp => {
                let k_trans = value(1).exp();
                for j in 0..t {
                    out.push(k_trans * unit(0, j));
                }
            }
            ModelKind::TwoComp => {
                let k1 = value(2).exp();
                let k2 = value(3).exp();
                for j in 0..t {
                    out.push(k1 * unit(0, j) + k2 * unit(1, j));
                }
            }
            ModelKind::ExtTofts => {
                let k_trans = value(1).exp();
                let v_p = sigmoid(value(2));
                for j in 0..t {
                    out.push(v_p * self.aif_at[j] + k_trans * unit(0, j));
                }
            }
        }
    }

    #[cfg(test)]
    pub(crate) fn set_param_for_test(&mut self, p: usize, voxel: usize, value: f64) {
        self.fields[p][voxel] = value;
    }

    #[cfg(test)]
    pub(crate) fn window_counts(&self, p: usize, voxel: usize) -> (u32, u32) {
        (self.win_accepted[p][voxel], self.win_proposed[p][voxel])
    }
}

fn theta_index(model: ModelKind, compartment: usize) -> usize {
    match model {
        ModelKind::TwoComp => compartment,
        _ => 0,
    }
}

fn sse_of(y: &[f64], c: &[f64]) -> f64 {
    y.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Draws the starting state: per-voxel uniform volumes and exchange rates,
/// precisions at their prior means. Bit-identical for identical inputs.
pub fn init_state(
    dataset: &Dataset,
    config: &SamplerConfig,
    seed: u64,
) -> Result<ChainState, SamplerError> {
    config.validate()?;
    let n = dataset.n_voxels();
    let t = dataset.n_times();
    let p_count = config.model.n_params();
    let masked: Vec<u32> =
        (0..n).filter(|&i| dataset.mask()[i]).map(|i| i as u32).collect();
    if masked.is_empty() {
        return Err(SamplerError::InvalidConfig("dataset mask is empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fields = vec![vec![0.0; n]; p_count];
    const EPS: f64 = 1e-6;
    for &i in &masked {
        let i = i as usize;
        match config.model {
            ModelKind::TwoComp => {
                let v1 = rng.random_range(0.0f64..1.0).clamp(EPS, 1.0 - EPS);
                let v2 = 1.0 - v1;
                let kep1: f64 = rng.random_range(0.1..0.3);
                let kep2: f64 = rng.random_range(1.75..5.25);
                fields[0][i] = kep1.ln();
                fields[1][i] = kep2.ln();
                fields[2][i] = (kep1 * v1).ln();
                fields[3][i] = (kep2 * v2).ln();
            }
            ModelKind::OneComp => {
                let v = rng.random_range(0.0f64..1.0).clamp(EPS, 1.0 - EPS);
                let kep: f64 = rng.random_range(0.1..5.25);
                fields[0][i] = kep.ln();
                fields[1][i] = (kep * v).ln();
            }
            ModelKind::ExtTofts => {
                let v = rng.random_range(0.0f64..1.0).clamp(EPS, 1.0 - EPS);
                let kep: f64 = rng.random_range(0.1..5.25);
                let vp = rng.random_range(0.0f64..0.1).clamp(EPS, 1.0 - EPS);
                fields[0][i] = kep.ln();
                fields[1][i] = (kep * v).ln();
                fields[2][i] = crate::kinetics::logit(vp);
            }
        }
    }

    let tau_fields = match &config.prior {
        PriorSpec::Voxelwise(_) => Vec::new(),
        PriorSpec::Spatial(cfg) => (0..config.model.n_spatial_fields())
            .map(|p| match config.model.param_role(p) {
                ParamRole::Theta(k) => cfg.a_theta[k] / cfg.b_theta[k],
                ParamRole::Gamma(k) => cfg.a_gamma[k] / cfg.b_gamma[k],
                ParamRole::LogitVp => unreachable!("vp carries no field"),
            })
            .collect(),
    };

    let mut state = ChainState {
        model: config.model,
        nx: dataset.nx(),
        n_voxels: n,
        n_times: t,
        masked,
        fields,
        tau_fields,
        tau_eps: config.noise.mean_precision(),
        prop_sd: vec![vec![config.initial_proposal_sd; n]; p_count],
        win_accepted: vec![vec![0; n]; p_count],
        win_proposed: vec![vec![0; n]; p_count],
        post_accepted: vec![vec![0; n]; p_count],
        post_proposed: vec![vec![0; n]; p_count],
        total_accepted: 0,
        total_proposed: 0,
        units: vec![vec![0.0; n * t]; config.model.n_compartments()],
        aif_at: dataset.grid().times().iter().map(|&tj| aif_value(dataset.aif(), tj)).collect(),
        ctc: vec![0.0; n * t],
        sse: vec![0.0; n],
        iteration: 0,
        rng,
        scratch_unit: vec![0.0; t],
        scratch_ctc: Vec::with_capacity(t),
    };
    for m in 0..state.masked.len() {
        let i = state.masked[m] as usize;
        state.refresh_voxel(dataset, i);
        if !state.sse[i].is_finite() {
            return Err(SamplerError::NonFiniteLikelihood {
                voxel: i,
                row: i / state.nx + 1,
                col: i % state.nx + 1,
            });
        }
    }
    Ok(state)
}

/// Log prior ratio of replacing parameter `p` of `voxel` by `proposed`;
/// antisymmetric under swapping current and proposed values.
pub(crate) fn log_prior_delta(
    state: &ChainState,
    lattice: &Lattice,
    config: &SamplerConfig,
    voxel: usize,
    p: usize,
    current: f64,
    proposed: f64,
) -> f64 {
    let role = config.model.param_role(p);
    let gaussian = |mu: f64, tau: f64| -> f64 {
        0.5 * tau * ((current - mu) * (current - mu) - (proposed - mu) * (proposed - mu))
    };
    match (&config.prior, role) {
        (_, ParamRole::LogitVp) => gaussian(config.vp_prior.mu, config.vp_prior.tau),
        (PriorSpec::Voxelwise(cfg), ParamRole::Theta(k)) => {
            gaussian(cfg.mu_theta[k], cfg.tau_theta[k])
        }
        (PriorSpec::Voxelwise(cfg), ParamRole::Gamma(k)) => {
            gaussian(cfg.mu_gamma[k], cfg.tau_gamma[k])
        }
        (PriorSpec::Spatial(_), _) => {
            let tau = state.tau_fields[p];
            let field = &state.fields[p];
            let mut delta = 0.0;
            for &j in lattice.neighbors(voxel) {
                let fj = field[j as usize];
                delta += (current - fj) * (current - fj) - (proposed - fj) * (proposed - fj);
            }
            0.5 * tau * delta
        }
    }
}

/// One random-walk MH update of a single log parameter at a single voxel.
/// Returns whether the proposal was accepted.
pub fn mh_update_logparam(
    state: &mut ChainState,
    voxel: usize,
    p: usize,
    dataset: &Dataset,
    lattice: &Lattice,
    config: &SamplerConfig,
) -> Result<bool, SamplerError> {
    if voxel >= state.n_voxels || !dataset.mask()[voxel] {
        return Err(SamplerError::OutsideMask(voxel));
    }
    let in_burn_in = state.iteration < config.burn_in as u64;
    if in_burn_in {
        state.win_proposed[p][voxel] += 1;
    } else {
        state.post_proposed[p][voxel] += 1;
    }
    state.total_proposed += 1;

    let current = state.fields[p][voxel];
    let z: f64 = StandardNormal.sample(&mut state.rng);
    let proposed = current + state.prop_sd[p][voxel] * z;

    // Hard ordering theta1 < theta2: out-of-order proposals are rejected,
    // which truncates the target to the ordered posterior.
    if state.model == ModelKind::TwoComp && !config.prior_only {
        let violates = (p == 0 && proposed >= state.fields[1][voxel])
            || (p == 1 && proposed <= state.fields[0][voxel]);
        if violates {
            return Ok(false);
        }
    }

    let mut log_ratio = log_prior_delta(state, lattice, config, voxel, p, current, proposed);

    let t = state.n_times;
    let base = voxel * t;
    let mut ctc_new = std::mem::take(&mut state.scratch_ctc);
    if matches!(config.model.param_role(p), ParamRole::Theta(_)) {
        let k_ep = proposed.exp();
        let times = dataset.grid().times();
        let aif = dataset.aif();
        for j in 0..t {
            state.scratch_unit[j] = conv_exp_unit(aif, k_ep, times[j]);
        }
    }
    state.combine_into(voxel, &mut ctc_new, Some((p, proposed)));
    let sse_new = sse_of(dataset.y_voxel(voxel), &ctc_new);
    if !config.prior_only {
        if sse_new.is_nan() {
            state.scratch_ctc = ctc_new;
            return Err(SamplerError::NonFiniteLikelihood {
                voxel,
                row: voxel / state.nx + 1,
                col: voxel % state.nx + 1,
            });
        }
        log_ratio += 0.5 * state.tau_eps * (state.sse[voxel] - sse_new);
    }

    let accept = log_ratio >= 0.0 || {
        let u: f64 = state.rng.random();
        u.ln() < log_ratio
    };
    if accept {
        state.fields[p][voxel] = proposed;
        if let ParamRole::Theta(k) = config.model.param_role(p) {
            state.units[k][base..base + t].copy_from_slice(&state.scratch_unit);
        }
        state.ctc[base..base + t].copy_from_slice(&ctc_new);
        state.sse[voxel] = sse_new;
        if in_burn_in {
            state.win_accepted[p][voxel] += 1;
        } else {
            state.post_accepted[p][voxel] += 1;
        }
        state.total_accepted += 1;
    }
    state.scratch_ctc = ctc_new;
    Ok(accept)
}

/// Gibbs draw of the noise precision from its Gamma full conditional
/// `Ga(a + NT/2, b + sum of squared residuals / 2)`.
pub fn gibbs_update_tau_eps(
    state: &mut ChainState,
    dataset: &Dataset,
    config: &SamplerConfig,
) -> f64 {
    let (shape, rate) = if config.prior_only {
        (config.noise.a, config.noise.b)
    } else {
        let n = state.masked.len();
        let total_sse: f64 = state.masked.iter().map(|&i| state.sse[i as usize]).sum();
        (
            config.noise.a + 0.5 * (n * dataset.n_times()) as f64,
            config.noise.b + 0.5 * total_sse,
        )
    };
    let draw = Gamma::new(shape, 1.0 / rate).expect("valid Gamma").sample(&mut state.rng);
    state.tau_eps = draw;
    draw
}

/// Gibbs draw of one GMRF field precision from
/// `Ga(a_field + |edges|/2, b_field + pairwise difference sum / 2)`.
pub fn gibbs_update_tau_field(
    state: &mut ChainState,
    p: usize,
    lattice: &Lattice,
    config: &SamplerConfig,
) -> Result<f64, SamplerError> {
    let PriorSpec::Spatial(cfg) = &config.prior else {
        return Err(SamplerError::NotSpatial);
    };
    if p >= config.model.n_spatial_fields() {
        return Err(SamplerError::NoField(p));
    }
    let (a, b) = match config.model.param_role(p) {
        ParamRole::Theta(k) => (cfg.a_theta[k], cfg.b_theta[k]),
        ParamRole::Gamma(k) => (cfg.a_gamma[k], cfg.b_gamma[k]),
        ParamRole::LogitVp => return Err(SamplerError::NoField(p)),
    };
    let stat = lattice.pair_diff_sumsq(&state.fields[p]);
    let shape = a + 0.5 * lattice.n_edges() as f64;
    let rate = b + 0.5 * stat;
    let draw = Gamma::new(shape, 1.0 / rate).expect("valid Gamma").sample(&mut state.rng);
    state.tau_fields[p] = draw;
    Ok(draw)
}

/// Multiplicative proposal-scale adaptation toward the target acceptance
/// rate, clamped to `[1e-4, 10]`.
pub fn adapt_proposal(sd: f64, observed_acceptance: f64, target: f64) -> f64 {
    (sd * (observed_acceptance - target).exp()).clamp(1e-4, 10.0)
}

fn adapt_all(state: &mut ChainState, config: &SamplerConfig) {
    for p in 0..config.model.n_params() {
        for m in 0..state.masked.len() {
            let i = state.masked[m] as usize;
            let proposed = state.win_proposed[p][i];
            if proposed > 0 {
                let observed = state.win_accepted[p][i] as f64 / proposed as f64;
                state.prop_sd[p][i] =
                    adapt_proposal(state.prop_sd[p][i], observed, config.target_acceptance);
            }
            state.win_proposed[p][i] = 0;
            state.win_accepted[p][i] = 0;
        }
    }
}

/// One full sweep: every kinetic parameter of every masked voxel in a fresh
/// random voxel order, then one Gibbs update per precision.
pub fn sweep(
    state: &mut ChainState,
    dataset: &Dataset,
    lattice: &Lattice,
    config: &SamplerConfig,
) -> Result<(), SamplerError> {
    let mut order = state.masked.clone();
    order.shuffle(&mut state.rng);
    for &i in &order {
        for p in 0..config.model.n_params() {
            mh_update_logparam(state, i as usize, p, dataset, lattice, config)?;
        }
    }
    gibbs_update_tau_eps(state, dataset, config);
    if config.prior.is_spatial() {
        for p in 0..config.model.n_spatial_fields() {
            gibbs_update_tau_field(state, p, lattice, config)?;
        }
    }
    state.iteration += 1;
    Ok(())
}

/// Thinned posterior draws of every per-voxel parameter and every precision,
/// with the per-draw per-voxel deviances needed for pD and DIC.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStore {
    pub model: ModelKind,
    pub spatial: bool,
    pub nx: usize,
    pub ny: usize,
    pub masked: Vec<u32>,
    pub n_params: usize,
    pub n_fields: usize,
    /// Flattened `[draw][masked voxel][param]`, log/logit scale.
    pub params: Vec<f64>,
    /// Flattened `[draw][masked voxel]`.
    pub deviance: Vec<f64>,
    pub tau_eps: Vec<f64>,
    /// Flattened `[draw][field]` (spatial mode only).
    pub tau_fields: Vec<f64>,
    /// Flattened `[param][masked voxel]`, post-burn-in.
    pub accept_rate: Vec<f64>,
    /// Flattened `[param][masked voxel]`, frozen at burn-in end.
    pub proposal_sd: Vec<f64>,
}

impl SampleStore {
    pub fn n_draws(&self) -> usize {
        self.tau_eps.len()
    }

    pub fn n_masked(&self) -> usize {
        self.masked.len()
    }

    pub fn param_draw(&self, draw: usize, m: usize, p: usize) -> f64 {
        self.params[(draw * self.masked.len() + m) * self.n_params + p]
    }

    /// All draws of one parameter at one masked voxel.
    pub fn param_draws(&self, m: usize, p: usize) -> Vec<f64> {
        (0..self.n_draws()).map(|d| self.param_draw(d, m, p)).collect()
    }

    pub fn deviance_draw(&self, draw: usize, m: usize) -> f64 {
        self.deviance[draw * self.masked.len() + m]
    }

    pub fn deviance_draws(&self, m: usize) -> Vec<f64> {
        (0..self.n_draws()).map(|d| self.deviance_draw(d, m)).collect()
    }

    pub fn accept_rate(&self, p: usize, m: usize) -> f64 {
        self.accept_rate[p * self.masked.len() + m]
    }

    pub fn proposal_sd(&self, p: usize, m: usize) -> f64 {
        self.proposal_sd[p * self.masked.len() + m]
    }

    fn record(&mut self, state: &ChainState, dataset: &Dataset) {
        for &i in &state.masked {
            let i = i as usize;
            for p in 0..self.n_params {
                self.params.push(state.fields[p][i]);
            }
            self.deviance.push(
                -2.0 * log_likelihood_from_sse(dataset.n_times(), state.sse[i], state.tau_eps),
            );
        }
        self.tau_eps.push(state.tau_eps);
        self.tau_fields.extend_from_slice(&state.tau_fields);
    }

    /// Pools draws from several chains over the same problem. Acceptance
    /// rates and proposal scales are averaged.
    pub fn merge(stores: Vec<SampleStore>) -> Result<SampleStore, SamplerError> {
        let mut iter = stores.into_iter();
        let mut merged =
            iter.next().ok_or_else(|| SamplerError::InvalidConfig("no chains to merge".into()))?;
        let mut count = 1.0;
        for s in iter {
            if s.model != merged.model
                || s.nx != merged.nx
                || s.ny != merged.ny
                || s.masked != merged.masked
                || s.spatial != merged.spatial
            {
                return Err(SamplerError::InvalidConfig(
                    "cannot merge chains over different problems".into(),
                ));
            }
            merged.params.extend_from_slice(&s.params);
            merged.deviance.extend_from_slice(&s.deviance);
            merged.tau_eps.extend_from_slice(&s.tau_eps);
            merged.tau_fields.extend_from_slice(&s.tau_fields);
            for (a, b) in merged.accept_rate.iter_mut().zip(&s.accept_rate) {
                *a += b;
            }
            for (a, b) in merged.proposal_sd.iter_mut().zip(&s.proposal_sd) {
                *a += b;
            }
            count += 1.0;
        }
        for a in &mut merged.accept_rate {
            *a /= count;
        }
        for a in &mut merged.proposal_sd {
            *a /= count;
        }
        Ok(merged)
    }
}

/// Runs one chain to completion: burn-in with proposal adaptation, then
/// sampling with frozen proposals, storing every `thin`-th state.
pub fn run_chain(dataset: &Dataset, config: &SamplerConfig) -> Result<SampleStore, SamplerError> {
    config.validate()?;
    let lattice = Lattice::new(dataset.nx(), dataset.ny(), dataset.mask())?;
    let mut state = init_state(dataset, config, config.seed)?;

    let n_fields = if config.prior.is_spatial() { config.model.n_spatial_fields() } else { 0 };
    let stored = config.stored_draws();
    let mut store = SampleStore {
        model: config.model,
        spatial: config.prior.is_spatial(),
        nx: dataset.nx(),
        ny: dataset.ny(),
        masked: state.masked.clone(),
        n_params: config.model.n_params(),
        n_fields,
        params: Vec::with_capacity(stored * state.masked.len() * config.model.n_params()),
        deviance: Vec::with_capacity(stored * state.masked.len()),
        tau_eps: Vec::with_capacity(stored),
        tau_fields: Vec::with_capacity(stored * n_fields),
        accept_rate: Vec::new(),
        proposal_sd: Vec::new(),
    };

    let total = config.burn_in + config.iterations;
    for it in 0..total {
        sweep(&mut state, dataset, &lattice, config)?;
        let done = it + 1;
        if done <= config.burn_in {
            if done % config.adapt_window == 0 {
                adapt_all(&mut state, config);
            }
        } else {
            let post = done - config.burn_in;
            if post % config.thin == 0 {
                store.record(&state, dataset);
            }
        }
        if config.progress_interval > 0 && done % config.progress_interval == 0 {
            eprintln!(
                "[perfkit] seed {} iter {done}/{total} tau_eps {:.4} mean_accept {:.3}",
                config.seed,
                state.tau_eps,
                state.mean_acceptance()
            );
        }
    }

    debug_assert_eq!(store.n_draws(), stored);
    for p in 0..config.model.n_params() {
        for &i in &state.masked {
            store.accept_rate.push(state.post_acceptance_rate(p, i as usize));
            store.proposal_sd.push(state.prop_sd[p][i as usize]);
        }
    }
    Ok(store)
}
