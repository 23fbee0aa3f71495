//! Posterior summarisation and model fit/complexity measures: medians,
//! central 80% intervals, SSE, deviance, pD and DIC.
//!
//! Point estimates are componentwise medians of the log-scale draws,
//! exponentiated afterwards; the plug-in deviance uses the joint median of
//! the kinetic parameters and the noise precision. pD may legitimately be
//! negative when the plug-in estimate sits between posterior modes.

use thiserror::Error;

use crate::io::Dataset;
use crate::kinetics::{model_ctc, AifParams, KineticParams, KineticsError, TimeGrid};
use crate::model::{log_likelihood_voxel, ModelError};
use crate::sampler::{ModelKind, ParamRole, SampleStore};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("sample store holds no draws")]
    EmptyStore,
    #[error("store and dataset disagree: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Kinetics(#[from] KineticsError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Deviance `-2 l(phi, tau_eps)` of one voxel at the given parameter values.
pub fn deviance_voxel(
    params: &KineticParams,
    tau_eps: f64,
    y: &[f64],
    grid: &TimeGrid,
    aif: &AifParams,
) -> Result<f64, DiagnosticsError> {
    let ctc = model_ctc(params, aif, grid)?;
    Ok(-2.0 * log_likelihood_voxel(y, &ctc, tau_eps)?)
}

/// Residual sum of squares of one voxel at the given parameter values.
pub fn sse_voxel(
    params: &KineticParams,
    y: &[f64],
    grid: &TimeGrid,
    aif: &AifParams,
) -> Result<f64, DiagnosticsError> {
    let ctc = model_ctc(params, aif, grid)?;
    if y.len() != ctc.len() {
        return Err(ModelError::LengthMismatch { observed: y.len(), model: ctc.len() }.into());
    }
    Ok(y.iter().zip(&ctc).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Quantile with linear interpolation between order statistics; `sorted`
/// must be ascending. Exact middle element for odd lengths at `q = 0.5`.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_unstable_by(|a, b| a.partial_cmp(b).expect("draws are never NaN"));
    v
}

fn kinetic_params_from(model: ModelKind, values: &[f64]) -> KineticParams {
    match model {
        ModelKind::OneComp => KineticParams::OneComp { theta: values[0], gamma: values[1] },
        ModelKind::TwoComp => KineticParams::TwoComp {
            theta1: values[0],
            theta2: values[1],
            gamma1: values[2],
            gamma2: values[3],
        },
        ModelKind::ExtTofts => {
            KineticParams::ExtTofts { theta: values[0], gamma: values[1], logit_vp: values[2] }
        }
    }
}

fn natural_scale(model: ModelKind, p: usize, x: f64) -> f64 {
    match model.param_role(p) {
        ParamRole::Theta(_) | ParamRole::Gamma(_) => x.exp(),
        ParamRole::LogitVp => crate::kinetics::sigmoid(x),
    }
}

/// Joint plug-in point estimate of one masked voxel: componentwise log-scale
/// medians of the kinetic parameters together with the median noise
/// precision.
fn plugin_estimate(store: &SampleStore, m: usize) -> (Vec<f64>, f64) {
    let medians: Vec<f64> =
        (0..store.n_params).map(|p| quantile(&sorted(store.param_draws(m, p)), 0.5)).collect();
    let tau = quantile(&sorted(store.tau_eps.clone()), 0.5);
    (medians, tau)
}

/// Effective number of parameters of one masked voxel: posterior median of
/// the deviance minus the deviance at the posterior median.
pub fn pd_voxel(
    store: &SampleStore,
    dataset: &Dataset,
    m: usize,
) -> Result<f64, DiagnosticsError> {
    if store.n_draws() == 0 {
        return Err(DiagnosticsError::EmptyStore);
    }
    let median_dev = quantile(&sorted(store.deviance_draws(m)), 0.5);
    let (medians, tau) = plugin_estimate(store, m);
    let voxel = store.masked[m] as usize;
    let dev_at_median = deviance_voxel(
        &kinetic_params_from(store.model, &medians),
        tau,
        dataset.y_voxel(voxel),
        dataset.grid(),
        dataset.aif(),
    )?;
    Ok(median_dev - dev_at_median)
}

/// DIC = posterior median deviance + pD, per masked voxel and summed
/// globally.
pub fn dic(store: &SampleStore, dataset: &Dataset) -> Result<(f64, Vec<f64>), DiagnosticsError> {
    if store.n_draws() == 0 {
        return Err(DiagnosticsError::EmptyStore);
    }
    let mut per_voxel = Vec::with_capacity(store.n_masked());
    for m in 0..store.n_masked() {
        let median_dev = quantile(&sorted(store.deviance_draws(m)), 0.5);
        let pd = pd_voxel(store, dataset, m)?;
        per_voxel.push(median_dev + pd);
    }
    Ok((per_voxel.iter().sum(), per_voxel))
}

/// Posterior medians, central 80% intervals, derived volumes and all fit
/// diagnostics for every masked voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub model: ModelKind,
    pub nx: usize,
    pub ny: usize,
    pub masked: Vec<u32>,
    /// Log/logit-scale plug-in medians, `[param][masked voxel]`.
    pub median_log: Vec<Vec<f64>>,
    /// Natural-scale medians (rates, transfers, plasma fraction).
    pub median_nat: Vec<Vec<f64>>,
    pub q10_nat: Vec<Vec<f64>>,
    pub q90_nat: Vec<Vec<f64>>,
    /// Volumes `v_tk` from the median estimates, `[compartment][masked voxel]`.
    pub v_t: Vec<Vec<f64>>,
    pub v_t_q10: Vec<Vec<f64>>,
    pub v_t_q90: Vec<Vec<f64>>,
    pub sse: Vec<f64>,
    pub median_deviance: Vec<f64>,
    pub pd: Vec<f64>,
    pub dic: Vec<f64>,
    /// Post-burn-in acceptance rates, `[param][masked voxel]`.
    pub accept_rate: Vec<Vec<f64>>,
    pub global_pd: f64,
    pub global_dic: f64,
    pub global_sse: f64,
    pub median_tau_eps: f64,
}

impl FitSummary {
    pub fn n_masked(&self) -> usize {
        self.masked.len()
    }

    /// Mean acceptance rate over parameters, per masked voxel.
    pub fn mean_accept(&self) -> Vec<f64> {
        let p_count = self.accept_rate.len() as f64;
        (0..self.n_masked())
            .map(|m| self.accept_rate.iter().map(|per| per[m]).sum::<f64>() / p_count)
            .collect()
    }
}

/// Summarises a sample store against its dataset.
pub fn summarize_fit(store: &SampleStore, dataset: &Dataset) -> Result<FitSummary, DiagnosticsError> {
    if store.n_draws() == 0 {
        return Err(DiagnosticsError::EmptyStore);
    }
    if store.nx != dataset.nx() || store.ny != dataset.ny() {
        return Err(DiagnosticsError::Mismatch(format!(
            "store grid {}x{} vs dataset {}x{}",
            store.nx,
            store.ny,
            dataset.nx(),
            dataset.ny()
        )));
    }
    let n_m = store.n_masked();
    let p_count = store.n_params;
    let k_count = store.model.n_compartments();
    let median_tau_eps = quantile(&sorted(store.tau_eps.clone()), 0.5);

    let mut summary = FitSummary {
        model: store.model,
        nx: store.nx,
        ny: store.ny,
        masked: store.masked.clone(),
        median_log: vec![vec![0.0; n_m]; p_count],
        median_nat: vec![vec![0.0; n_m]; p_count],
        q10_nat: vec![vec![0.0; n_m]; p_count],
        q90_nat: vec![vec![0.0; n_m]; p_count],
        v_t: vec![vec![0.0; n_m]; k_count],
        v_t_q10: vec![vec![0.0; n_m]; k_count],
        v_t_q90: vec![vec![0.0; n_m]; k_count],
        sse: vec![0.0; n_m],
        median_deviance: vec![0.0; n_m],
        pd: vec![0.0; n_m],
        dic: vec![0.0; n_m],
        accept_rate: (0..p_count)
            .map(|p| (0..n_m).map(|m| store.accept_rate(p, m)).collect())
            .collect(),
        global_pd: 0.0,
        global_dic: 0.0,
        global_sse: 0.0,
        median_tau_eps,
    };

    for m in 0..n_m {
        let voxel = store.masked[m] as usize;
        for p in 0..p_count {
            let draws = sorted(store.param_draws(m, p));
            let med = quantile(&draws, 0.5);
            summary.median_log[p][m] = med;
            summary.median_nat[p][m] = natural_scale(store.model, p, med);
            summary.q10_nat[p][m] = natural_scale(store.model, p, quantile(&draws, 0.10));
            summary.q90_nat[p][m] = natural_scale(store.model, p, quantile(&draws, 0.90));
        }
        for k in 0..k_count {
            let (tp, gp) = match store.model {
                ModelKind::TwoComp => (k, 2 + k),
                _ => (0, 1),
            };
            // Point volume from the medians; interval from per-draw ratios.
            summary.v_t[k][m] =
                (summary.median_log[gp][m] - summary.median_log[tp][m]).exp();
            let ratios: Vec<f64> = (0..store.n_draws())
                .map(|d| (store.param_draw(d, m, gp) - store.param_draw(d, m, tp)).exp())
                .collect();
            let ratios = sorted(ratios);
            summary.v_t_q10[k][m] = quantile(&ratios, 0.10);
            summary.v_t_q90[k][m] = quantile(&ratios, 0.90);
        }

        let plugin: Vec<f64> = (0..p_count).map(|p| summary.median_log[p][m]).collect();
        let params = kinetic_params_from(store.model, &plugin);
        let median_dev = quantile(&sorted(store.deviance_draws(m)), 0.5);
        let dev_at_median = deviance_voxel(
            &params,
            median_tau_eps,
            dataset.y_voxel(voxel),
            dataset.grid(),
            dataset.aif(),
        )?;
        summary.median_deviance[m] = median_dev;
        summary.pd[m] = median_dev - dev_at_median;
        summary.dic[m] = median_dev + summary.pd[m];
        summary.sse[m] =
            sse_voxel(&params, dataset.y_voxel(voxel), dataset.grid(), dataset.aif())?;
    }
    summary.global_pd = summary.pd.iter().sum();
    summary.global_dic = summary.dic.iter().sum();
    summary.global_sse = summary.sse.iter().sum();
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::Dataset;
    use crate::model::{NoisePrior, LN_2PI};
    use crate::sampler::{run_chain, PriorSpec, SamplerConfig};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{Continuous, Normal};

    fn toy_dataset(seed: u64) -> Dataset {
        let grid = TimeGrid::uniform(10, 0.4).unwrap();
        let aif = AifParams::tofts(0.1, 0.0);
        let truth = KineticParams::one_comp_from_rates(1.0, 0.5);
        let clean = model_ctc(&truth, &aif, &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = clean.iter().map(|c| c + 0.02 * rng.random_range(-1.0..1.0)).collect();
        Dataset::new(1, 1, vec![true], grid, aif, y).unwrap()
    }

    fn toy_store(dataset: &Dataset, iterations: usize, thin: usize) -> SampleStore {
        let mut cfg = SamplerConfig::new(
            ModelKind::OneComp,
            PriorSpec::Voxelwise(Default::default()),
            NoisePrior { a: 3.0, b: 0.0008 },
        );
        cfg.burn_in = 50;
        cfg.iterations = iterations;
        cfg.thin = thin;
        cfg.progress_interval = 0;
        cfg.seed = 17;
        run_chain(dataset, &cfg).unwrap()
    }

    #[test]
    fn deviance_is_minus_two_log_likelihood() {
        // Zero residuals at tau = 1: each time point contributes log(2 pi).
        let ll = log_likelihood_voxel(&[0.4], &[0.4], 1.0).unwrap();
        assert_abs_diff_eq!(-2.0 * ll, LN_2PI, epsilon = 1e-12);
        assert_abs_diff_eq!(-2.0 * ll, 1.8379, epsilon = 1e-4);

        let grid = TimeGrid::uniform(2, 0.5).unwrap();
        let aif = AifParams::tofts(0.1, 0.0);
        let params = KineticParams::one_comp_from_rates(1.0, 0.5);
        let fitted = model_ctc(&params, &aif, &grid).unwrap();
        let dev = deviance_voxel(&params, 1.0, &fitted, &grid, &aif).unwrap();
        assert_abs_diff_eq!(dev, 2.0 * LN_2PI, epsilon = 1e-12);
    }

    #[test]
    fn deviance_difference_is_log_likelihood_ratio() {
        let grid = TimeGrid::uniform(8, 0.4).unwrap();
        let aif = AifParams::tofts(0.1, 0.0);
        let y: Vec<f64> = (0..8).map(|j| 0.1 * j as f64).collect();
        let a = KineticParams::one_comp_from_rates(0.8, 0.4);
        let b = KineticParams::one_comp_from_rates(1.6, 0.7);
        let tau = 5.0;
        let dev_a = deviance_voxel(&a, tau, &y, &grid, &aif).unwrap();
        let dev_b = deviance_voxel(&b, tau, &y, &grid, &aif).unwrap();
        let ll_a = log_likelihood_voxel(&y, &model_ctc(&a, &aif, &grid).unwrap(), tau).unwrap();
        let ll_b = log_likelihood_voxel(&y, &model_ctc(&b, &aif, &grid).unwrap(), tau).unwrap();
        assert_relative_eq!(dev_a - dev_b, -2.0 * (ll_a - ll_b), max_relative = 1e-12);
    }

    #[test]
    fn deviance_matches_density_product_oracle() {
        let grid = TimeGrid::uniform(6, 0.5).unwrap();
        let aif = AifParams::tofts(0.1, 0.0);
        let params = KineticParams::one_comp_from_rates(1.2, 0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        let tau: f64 = 7.3;
        let ctc = model_ctc(&params, &aif, &grid).unwrap();
        let oracle: f64 = y
            .iter()
            .zip(&ctc)
            .map(|(&yi, &ci)| Normal::new(ci, tau.sqrt().recip()).unwrap().ln_pdf(yi))
            .sum();
        let dev = deviance_voxel(&params, tau, &y, &grid, &aif).unwrap();
        assert_relative_eq!(dev, -2.0 * oracle, max_relative = 1e-12);
    }

    #[test]
    fn sse_zero_when_observation_equals_fit() {
        let grid = TimeGrid::uniform(5, 0.5).unwrap();
        let aif = AifParams::tofts(0.1, 0.0);
        let params = KineticParams::one_comp_from_rates(0.9, 0.3);
        let fitted = model_ctc(&params, &aif, &grid).unwrap();
        assert_eq!(sse_voxel(&params, &fitted, &grid, &aif).unwrap(), 0.0);
    }

    #[test]
    fn single_draw_store_has_zero_pd_and_dic_equal_to_deviance() {
        let dataset = toy_dataset(1);
        let store = toy_store(&dataset, 1, 1);
        assert_eq!(store.n_draws(), 1);
        let pd = pd_voxel(&store, &dataset, 0).unwrap();
        assert_eq!(pd, 0.0);
        let (global, per_voxel) = dic(&store, &dataset).unwrap();
        assert_eq!(per_voxel[0], store.deviance_draw(0, 0));
        assert_eq!(global, per_voxel.iter().sum::<f64>());
    }

    #[test]
    fn pd_additivity_with_deviance() {
        let dataset = toy_dataset(2);
        let store = toy_store(&dataset, 90, 3);
        let summary = summarize_fit(&store, &dataset).unwrap();
        let (global_dic, per_voxel) = dic(&store, &dataset).unwrap();
        for m in 0..store.n_masked() {
            assert_eq!(summary.dic[m] - summary.median_deviance[m], summary.pd[m]);
            assert_relative_eq!(per_voxel[m], summary.dic[m], max_relative = 1e-12);
        }
        assert_relative_eq!(global_dic, summary.global_dic, max_relative = 1e-12);
        assert_relative_eq!(
            summary.global_dic - summary.median_deviance.iter().sum::<f64>(),
            summary.global_pd,
            max_relative = 1e-9
        );
    }

    #[test]
    fn identical_draws_give_zero_width_intervals() {
        let dataset = toy_dataset(3);
        let base = toy_store(&dataset, 3, 3);
        assert_eq!(base.n_draws(), 1);
        let mut store = base.clone();
        for _ in 0..4 {
            store.params.extend(base.params.clone());
            store.deviance.extend(base.deviance.clone());
            store.tau_eps.extend(base.tau_eps.clone());
        }
        let summary = summarize_fit(&store, &dataset).unwrap();
        for p in 0..store.n_params {
            assert_eq!(summary.q10_nat[p][0], summary.q90_nat[p][0]);
            assert_eq!(summary.median_nat[p][0], summary.q10_nat[p][0]);
        }
        assert_eq!(summary.pd[0], 0.0);
    }

    #[test]
    fn median_is_monotone_invariant_for_odd_draw_counts() {
        let dataset = toy_dataset(4);
        let store = toy_store(&dataset, 15, 3); // 5 draws
        assert_eq!(store.n_draws() % 2, 1);
        let summary = summarize_fit(&store, &dataset).unwrap();
        for p in 0..store.n_params {
            let mut nat: Vec<f64> = store.param_draws(0, p).iter().map(|x| x.exp()).collect();
            nat.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            let median_of_nat = nat[nat.len() / 2];
            assert_eq!(summary.median_nat[p][0], median_of_nat);
        }
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_abs_diff_eq!(quantile(&v, 0.10), 1.3, epsilon = 1e-12);
    }
}
