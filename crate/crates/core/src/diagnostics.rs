//! Convergence-bound components and the privacy-utility trade-off.
//!
//! The bound is an order statement, so every term is evaluated with its
//! hidden constant set to one. Only limits and monotonicity of the evaluated
//! terms are meaningful; absolute domination of measured gradient norms is not
//! claimed.
//!
//! ```text
//! C1 = gap / (eta c T) + sqrt(gap / (eta T))                      gap = f(theta_0) - f*
//! C2 = sqrt(eta L s2 / (p q n)) + min{eta L sqrt(s2), c}          s2  = sigma_l^2 + sigma_g^2
//! C3 = min{sigma_l + sigma_g, s2 / c}
//! C4 = d eta L sigma^2 / (p q n c) * mean_t 1/gamma_t^2 + sqrt(d eta L / (p q n)) * mean_t sigma/gamma_t
//! ```

use alloc::vec::Vec;

use crate::accountant::PrivacyLedger;
use crate::error::{Error, Result};
use crate::losses::LossModel;
use crate::simulator::TrainingTrace;
use crate::{math, HyperParams};

/// Task-dependent inputs of the bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossProfile {
    /// `f(theta_0) - f*`.
    pub initial_gap: f64,
    /// `sigma_l`.
    pub sigma_l: f64,
    /// `sigma_g`.
    pub sigma_g: f64,
}

impl LossProfile {
    /// Build from explicit values; fails when `f(theta_0) < f*`.
    pub fn new(initial_loss: f64, f_star: f64, sigma_l: f64, sigma_g: f64) -> Result<Self> {
        // f* may equal f(theta_0) up to rounding when starting at the optimum.
        let slack = 1e-12 * initial_loss.abs().max(f_star.abs()).max(1.0);
        if initial_loss < f_star - slack {
            return Err(Error::BelowOptimum { initial: initial_loss, optimum: f_star });
        }
        if !(sigma_l >= 0.0 && sigma_g >= 0.0) {
            return Err(Error::domain("sigma_l/sigma_g", "must be non-negative"));
        }
        Ok(Self { initial_gap: (initial_loss - f_star).max(0.0), sigma_l, sigma_g })
    }

    /// Read `f(theta_0)` from the model and the rest from its constants.
    pub fn from_model<M: LossModel + ?Sized>(model: &M, theta0: &[f64]) -> Result<Self> {
        let c = model.constants();
        Self::new(model.loss(theta0), c.f_star, c.sigma_l, c.sigma_g)
    }

    fn spread_sq(&self) -> f64 {
        self.sigma_l * self.sigma_l + self.sigma_g * self.sigma_g
    }
}

/// Evaluated components of the convergence bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    /// `T`.
    pub rounds: usize,
    /// Initialization error.
    pub c1: f64,
    /// Stochastic noise, dissimilarity and clipping error.
    pub c2: f64,
    /// Unavoidable clipping bias.
    pub c3: f64,
    /// Estimation and channel noise error.
    pub c4: f64,
    /// `c1 + c2 + c3 + c4`.
    pub total: f64,
    /// `min_t ||grad f(theta^(t))||` of a matching run, when attached.
    pub measured_min_grad_norm: Option<f64>,
}

fn check_gammas(gammas: &[f64]) -> Result<()> {
    if gammas.is_empty() {
        return Err(Error::EmptyLedger);
    }
    if let Some(g) = gammas.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
        return Err(Error::domain("gamma", alloc::format!("bound needs positive alignment factors, got {g}")));
    }
    Ok(())
}

/// Evaluate `C1..C4` for the schedule `gammas` (`T = gammas.len()`).
pub fn bound_components(params: &HyperParams, profile: &LossProfile, gammas: &[f64]) -> Result<BoundReport> {
    params.validate()?;
    check_gammas(gammas)?;
    let t = gammas.len() as f64;
    let eta = params.step_size;
    let l = params.smoothness;
    let c = params.clip_norm;
    let sigma = params.noise_std;
    let pqn = params.update_divisor();
    let d = params.dim as f64;
    let s2 = profile.spread_sq();

    let c1 = profile.initial_gap / (eta * c * t) + math::sqrt(profile.initial_gap / (eta * t));
    let c2 = math::sqrt(eta * l * s2 / pqn) + (eta * l * math::sqrt(s2)).min(c);
    let c3 = (profile.sigma_l + profile.sigma_g).min(s2 / c);
    let inv_sq_mean = gammas.iter().map(|g| 1.0 / (g * g)).sum::<f64>() / t;
    let inv_mean = gammas.iter().map(|g| sigma / g).sum::<f64>() / t;
    let c4 = d * eta * l * sigma * sigma / (pqn * c) * inv_sq_mean + math::sqrt(d * eta * l / pqn) * inv_mean;

    Ok(BoundReport { rounds: gammas.len(), c1, c2, c3, c4, total: c1 + c2 + c3 + c4, measured_min_grad_norm: None })
}

/// Which constants to use for the privacy terms of the trade-off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TradeoffForm {
    /// `(alpha d eta L / (n eps)) (c/T) sum Gamma/gamma^2 + sqrt(alpha d eta L / (n eps)) (c/T) sum sqrt(Gamma)/gamma`,
    /// constants absorbed into the order symbol.
    #[default]
    Stated,
    /// What substituting `sigma^2 = 2 alpha p q c^2 Gamma / eps` into `C4`
    /// yields literally: factor 2 on the first term, `sqrt(2)` on the second.
    Substituted,
}

/// The two privacy-dependent terms replacing `C4` in the trade-off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyTerms {
    /// Term linear in `1/eps`.
    pub linear: f64,
    /// Term in `1/sqrt(eps)`.
    pub root: f64,
}

impl PrivacyTerms {
    /// `linear + root`.
    pub fn sum(&self) -> f64 {
        self.linear + self.root
    }
}

/// Privacy terms at target `(alpha, eps)`-RDP, with `Gamma` from the accountant.
pub fn privacy_terms(
    params: &HyperParams,
    gammas: &[f64],
    alpha: f64,
    eps_target: f64,
    form: TradeoffForm,
) -> Result<PrivacyTerms> {
    if !(alpha > 1.0) {
        return Err(Error::domain("alpha", "Renyi order must exceed 1"));
    }
    if !(eps_target > 0.0) {
        return Err(Error::domain("eps_target", "must be positive"));
    }
    check_gammas(gammas)?;
    let gamma_total = PrivacyLedger::from_gammas(gammas.iter().copied())?.gamma_total(params)?;
    let t = gammas.len() as f64;
    let c = params.clip_norm;
    let a = alpha * params.dim as f64 * params.step_size * params.smoothness / (params.devices as f64 * eps_target);
    let (k_lin, k_root) = match form {
        TradeoffForm::Stated => (1.0, 1.0),
        TradeoffForm::Substituted => (2.0, math::sqrt(2.0)),
    };
    let linear = k_lin * a * c / t * gammas.iter().map(|g| gamma_total / (g * g)).sum::<f64>();
    let root = k_root * math::sqrt(a) * c / t * gammas.iter().map(|g| math::sqrt(gamma_total) / g).sum::<f64>();
    Ok(PrivacyTerms { linear, root })
}

/// Right-hand side of the privacy-utility trade-off: `C1 + C2 + C3 + privacy terms`.
pub fn tradeoff_bound(
    params: &HyperParams,
    profile: &LossProfile,
    gammas: &[f64],
    alpha: f64,
    eps_target: f64,
    form: TradeoffForm,
) -> Result<f64> {
    let r = bound_components(params, profile, gammas)?;
    Ok(r.c1 + r.c2 + r.c3 + privacy_terms(params, gammas, alpha, eps_target, form)?.sum())
}

/// Measured versus evaluated bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceComparison {
    /// `min_t ||grad f(theta^(t))||` from the trace.
    pub measured_min_grad_norm: f64,
    /// Evaluated bound total.
    pub bound_total: f64,
    /// `measured / bound`.
    pub ratio: f64,
}

/// Compare a trace against a report.
pub fn compare_trace(trace: &TrainingTrace, report: &BoundReport) -> Result<TraceComparison> {
    if trace.records.is_empty() {
        return Err(Error::domain("trace", "must contain at least one round"));
    }
    let measured = trace.min_grad_norm();
    Ok(TraceComparison { measured_min_grad_norm: measured, bound_total: report.total, ratio: measured / report.total })
}

impl BoundReport {
    /// Attach the measured minimum gradient norm of `trace`.
    pub fn with_trace(mut self, trace: &TrainingTrace) -> Self {
        self.measured_min_grad_norm = Some(trace.min_grad_norm());
        self
    }
}

/// Direction of a sweep of measured or evaluated values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    /// Every step strictly up.
    Increasing,
    /// Never down, some step flat.
    NonDecreasing,
    /// Every step strictly down.
    Decreasing,
    /// Never up, some step flat.
    NonIncreasing,
    /// All equal (or fewer than two points).
    Constant,
    /// Both directions occur.
    Mixed,
}

impl Trend {
    /// True for `Increasing`, `NonDecreasing` and `Constant`.
    pub fn is_non_decreasing(self) -> bool {
        matches!(self, Trend::Increasing | Trend::NonDecreasing | Trend::Constant)
    }

    /// True for `Decreasing`, `NonIncreasing` and `Constant`.
    pub fn is_non_increasing(self) -> bool {
        matches!(self, Trend::Decreasing | Trend::NonIncreasing | Trend::Constant)
    }
}

/// Classify the ordering of consecutive values.
pub fn trend(values: &[f64]) -> Trend {
    let (mut up, mut down, mut flat) = (false, false, false);
    for w in values.windows(2) {
        if w[1] > w[0] {
            up = true;
        } else if w[1] < w[0] {
            down = true;
        } else {
            flat = true;
        }
    }
    match (up, down, flat) {
        (true, true, _) => Trend::Mixed,
        (true, false, false) => Trend::Increasing,
        (true, false, true) => Trend::NonDecreasing,
        (false, true, false) => Trend::Decreasing,
        (false, true, true) => Trend::NonIncreasing,
        (false, false, _) => Trend::Constant,
    }
}

/// Median (mean of the middle pair for even lengths). `NaN` for empty input.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Arithmetic mean. `NaN` for empty input.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn profile(sl: f64, sg: f64) -> LossProfile {
        LossProfile::new(5.0, 1.0, sl, sg).unwrap()
    }

    #[test]
    fn noiseless_exact_terms_vanish() {
        let p = HyperParams { noise_std: 0.0, ..Default::default() };
        let r = bound_components(&p, &profile(0.0, 0.0), &vec![1.0; 50]).unwrap();
        assert_eq!((r.c2, r.c3, r.c4), (0.0, 0.0, 0.0));
        assert_eq!(r.total, r.c1);
        let long = bound_components(&p, &profile(0.0, 0.0), &vec![1.0; 50_000]).unwrap();
        assert!(long.c1 < r.c1 && long.c1 < 0.1);
    }

    #[test]
    fn infinite_clip_limits() {
        let p = HyperParams { clip_norm: f64::INFINITY, ..Default::default() };
        let pr = profile(0.3, 0.4);
        let r = bound_components(&p, &pr, &[1.0; 10]).unwrap();
        assert_eq!(r.c3, 0.0);
        let expected_c2 = math::sqrt(0.1 * 0.25 / 10.0) + 0.1 * 0.5;
        assert!((r.c2 - expected_c2).abs() < 1e-15);
    }

    #[test]
    fn c4_desk_value() {
        let p = HyperParams::default();
        let r = bound_components(&p, &profile(0.0, 0.0), &[1.0; 17]).unwrap();
        // 2*0.1*100/(10*2) + sqrt(2*0.1/10)*10
        assert!((r.c4 - 2.414_213_562_373_095).abs() < 1e-4);
    }

    #[test]
    fn below_optimum_rejected() {
        assert!(matches!(LossProfile::new(0.5, 1.0, 0.0, 0.0), Err(Error::BelowOptimum { .. })));
    }

    #[test]
    fn tradeoff_limits_and_monotonicity() {
        let p = HyperParams::default();
        let pr = profile(0.2, 0.1);
        let g = vec![1.0; 30];
        let base = bound_components(&p, &pr, &g).unwrap();
        let huge = tradeoff_bound(&p, &pr, &g, 2.0, 1e30, TradeoffForm::Stated).unwrap();
        assert!((huge - (base.c1 + base.c2 + base.c3)).abs() < 1e-9);
        let at_1 = tradeoff_bound(&p, &pr, &g, 2.0, 1.0, TradeoffForm::Stated).unwrap();
        let at_half = tradeoff_bound(&p, &pr, &g, 2.0, 0.5, TradeoffForm::Stated).unwrap();
        assert!(at_half > at_1);
        assert!(tradeoff_bound(&p, &pr, &g, 1.0, 1.0, TradeoffForm::Stated).is_err());
        assert!(tradeoff_bound(&p, &pr, &g, 2.0, 0.0, TradeoffForm::Stated).is_err());
    }

    #[test]
    fn trend_classification() {
        assert_eq!(trend(&[1.0, 2.0, 3.0]), Trend::Increasing);
        assert_eq!(trend(&[1.0, 1.0, 3.0]), Trend::NonDecreasing);
        assert_eq!(trend(&[3.0, 1.0]), Trend::Decreasing);
        assert_eq!(trend(&[3.0, 3.0, 1.0]), Trend::NonIncreasing);
        assert_eq!(trend(&[1.0, 3.0, 2.0]), Trend::Mixed);
        assert_eq!(trend(&[2.0]), Trend::Constant);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
