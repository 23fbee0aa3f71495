//! Arterial input function and closed-form concentration-time curves for the
//! one-tissue, two-tissue and extended-Tofts compartment models.
//!
//! All curves are driven by a bi-exponential AIF and evaluated analytically;
//! the adaptive quadrature routine exists as an independent cross-check of the
//! closed-form convolution and is not used by the samplers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative half-width of the window around each AIF rate in which the
/// convolution switches to its analytic `k_ep -> m_l` limit.
const SINGULAR_REL_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum KineticsError {
    #[error("{name} must be finite and nonnegative, got {value}")]
    InvalidRate { name: &'static str, value: f64 },
    #[error("quadrature tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("quadrature failed to reach tolerance {tol} within the evaluation budget")]
    QuadratureBudget { tol: f64 },
    #[error("invalid AIF parameters: {0}")]
    InvalidAif(String),
    #[error("invalid time grid: {0}")]
    InvalidTimeGrid(String),
}

/// Dose and bi-exponential arterial input function constants.
///
/// `a1`, `a2` are amplitudes in kg/l, `m1`, `m2` decay rates in 1/min and
/// `t0` the bolus arrival time in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AifParams {
    pub dose: f64,
    pub a1: f64,
    pub a2: f64,
    pub m1: f64,
    pub m2: f64,
    pub t0: f64,
}

impl AifParams {
    /// Standard Tofts population constants with the given dose and onset.
    pub fn tofts(dose: f64, t0: f64) -> Self {
        AifParams { dose, a1: 3.99, a2: 4.78, m1: 0.144, m2: 0.0111, t0 }
    }

    pub fn validate(&self) -> Result<(), KineticsError> {
        let positive = [
            ("dose", self.dose),
            ("a1", self.a1),
            ("a2", self.a2),
            ("m1", self.m1),
            ("m2", self.m2),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(KineticsError::InvalidAif(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if !self.t0.is_finite() || self.t0 < 0.0 {
            return Err(KineticsError::InvalidAif(format!(
                "t0 must be finite and nonnegative, got {}",
                self.t0
            )));
        }
        Ok(())
    }
}

/// Strictly increasing acquisition times in minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid(Vec<f64>);

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self, KineticsError> {
        if times.len() < 2 {
            return Err(KineticsError::InvalidTimeGrid(format!(
                "need at least 2 acquisition times, got {}",
                times.len()
            )));
        }
        for (j, &t) in times.iter().enumerate() {
            if !t.is_finite() || t < 0.0 {
                return Err(KineticsError::InvalidTimeGrid(format!(
                    "time {j} must be finite and nonnegative, got {t}"
                )));
            }
            if j > 0 && t <= times[j - 1] {
                return Err(KineticsError::InvalidTimeGrid(format!(
                    "times must be strictly increasing, violated at index {j}"
                )));
            }
        }
        Ok(TimeGrid(times))
    }

    /// Uniform grid `dt, 2*dt, ..., n*dt`.
    pub fn uniform(n: usize, dt: f64) -> Result<Self, KineticsError> {
        TimeGrid::new((1..=n).map(|j| j as f64 * dt).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = KineticsError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        TimeGrid::new(v)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Vec<f64> {
        g.0
    }
}

/// Per-voxel kinetic parameters on the sampling scale: log rates, log
/// transfer constants and (extended Tofts) logit plasma fraction.
///
/// Zero transfer is representable as `gamma = -inf`; the curve evaluators
/// treat it as an absent compartment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KineticParams {
    OneComp { theta: f64, gamma: f64 },
    TwoComp { theta1: f64, theta2: f64, gamma1: f64, gamma2: f64 },
    ExtTofts { theta: f64, gamma: f64, logit_vp: f64 },
}

impl KineticParams {
    pub fn one_comp_from_rates(k_ep: f64, k_trans: f64) -> Self {
        KineticParams::OneComp { theta: k_ep.ln(), gamma: k_trans.ln() }
    }

    pub fn two_comp_from_rates(k_ep1: f64, k_trans1: f64, k_ep2: f64, k_trans2: f64) -> Self {
        KineticParams::TwoComp {
            theta1: k_ep1.ln(),
            theta2: k_ep2.ln(),
            gamma1: k_trans1.ln(),
            gamma2: k_trans2.ln(),
        }
    }

    pub fn ext_tofts_from_rates(k_ep: f64, k_trans: f64, v_p: f64) -> Self {
        KineticParams::ExtTofts {
            theta: k_ep.ln(),
            gamma: k_trans.ln(),
            logit_vp: logit(v_p),
        }
    }

    /// Tissue volume fractions `v_tk = K_trans_k / k_ep_k`.
    pub fn derived_volumes(&self) -> DerivedVolumes {
        match *self {
            KineticParams::OneComp { theta, gamma } | KineticParams::ExtTofts { theta, gamma, .. } => {
                DerivedVolumes { v_t1: (gamma - theta).exp(), v_t2: 0.0 }
            }
            KineticParams::TwoComp { theta1, theta2, gamma1, gamma2 } => DerivedVolumes {
                v_t1: (gamma1 - theta1).exp(),
                v_t2: (gamma2 - theta2).exp(),
            },
        }
    }
}

/// Unitless tissue volume fractions of the (up to) two compartments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedVolumes {
    pub v_t1: f64,
    pub v_t2: f64,
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plasma concentration `C_p(t)`: zero before bolus arrival, bi-exponential
/// decay afterwards.
pub fn aif_value(aif: &AifParams, t: f64) -> f64 {
    let u = t - aif.t0;
    if u < 0.0 {
        return 0.0;
    }
    aif.dose * (aif.a1 * (-aif.m1 * u).exp() + aif.a2 * (-aif.m2 * u).exp())
}

/// Convolution of the AIF with a unit-transfer exponential kernel
/// `exp(-k_ep * t)`, evaluated in closed form.
///
/// Terms with `k_ep` within the singular window of an AIF rate use the
/// analytic limit `a_l * u * exp(-m_l * u)` so the value stays continuous
/// across `k_ep = m_l`.
pub fn conv_exp_unit(aif: &AifParams, k_ep: f64, t: f64) -> f64 {
    let u = t - aif.t0;
    if u <= 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for (a, m) in [(aif.a1, aif.m1), (aif.a2, aif.m2)] {
        if (k_ep - m).abs() < SINGULAR_REL_THRESHOLD * m {
            total += a * u * (-m * u).exp();
        } else {
            total += a * ((-m * u).exp() - (-k_ep * u).exp()) / (k_ep - m);
        }
    }
    aif.dose * total
}

/// Tissue concentration `C_p * k_trans exp(-k_ep t)` at time `t`, closed form.
pub fn conv_exp(aif: &AifParams, k_trans: f64, k_ep: f64, t: f64) -> Result<f64, KineticsError> {
    if !k_ep.is_finite() || k_ep < 0.0 {
        return Err(KineticsError::InvalidRate { name: "k_ep", value: k_ep });
    }
    if k_trans.is_nan() || k_trans < 0.0 {
        return Err(KineticsError::InvalidRate { name: "k_trans", value: k_trans });
    }
    Ok(k_trans * conv_exp_unit(aif, k_ep, t))
}

/// Same convolution by adaptive Simpson quadrature to absolute tolerance
/// `tol`. Independent of the closed form; used to validate it.
pub fn conv_exp_quadrature(
    aif: &AifParams,
    k_trans: f64,
    k_ep: f64,
    t: f64,
    tol: f64,
) -> Result<f64, KineticsError> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(KineticsError::InvalidTolerance(tol));
    }
    if !k_ep.is_finite() || k_ep < 0.0 {
        return Err(KineticsError::InvalidRate { name: "k_ep", value: k_ep });
    }
    if t <= aif.t0 || k_trans == 0.0 {
        return Ok(0.0);
    }
    let f = |s: f64| aif_value(aif, s) * k_trans * (-k_ep * (t - s)).exp();
    let mut budget: u64 = 2_000_000;
    let (a, b) = (aif.t0, t);
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive_simpson(&f, a, b, fa, fm, fb, whole, tol, 60, &mut budget)
        .ok_or(KineticsError::QuadratureBudget { tol })
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    budget: &mut u64,
) -> Option<f64> {
    if *budget < 2 {
        return None;
    }
    *budget -= 2;
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let err = left + right - whole;
    if err.abs() <= 15.0 * tol {
        return Some(left + right + err / 15.0);
    }
    if depth == 0 {
        return None;
    }
    let l = adaptive_simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1, budget)?;
    let r = adaptive_simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1, budget)?;
    Some(l + r)
}

/// Model concentration-time curve over the whole grid.
pub fn model_ctc(
    params: &KineticParams,
    aif: &AifParams,
    grid: &TimeGrid,
) -> Result<Vec<f64>, KineticsError> {
    let mut out = Vec::with_capacity(grid.len());
    match *params {
        KineticParams::OneComp { theta, gamma } => {
            let (k_ep, k_trans) = (theta.exp(), gamma.exp());
            for &t in grid.times() {
                out.push(conv_exp(aif, k_trans, k_ep, t)?);
            }
        }
        KineticParams::TwoComp { theta1, theta2, gamma1, gamma2 } => {
            let (k1, kt1) = (theta1.exp(), gamma1.exp());
            let (k2, kt2) = (theta2.exp(), gamma2.exp());
            for &t in grid.times() {
                out.push(conv_exp(aif, kt1, k1, t)? + conv_exp(aif, kt2, k2, t)?);
            }
        }
        KineticParams::ExtTofts { theta, gamma, logit_vp } => {
            let (k_ep, k_trans, v_p) = (theta.exp(), gamma.exp(), sigmoid(logit_vp));
            for &t in grid.times() {
                out.push(v_p * aif_value(aif, t) + conv_exp(aif, k_trans, k_ep, t)?);
            }
        }
    }
    Ok(out)
}
