//! Privacy accounting for the over-the-air protocol.
//!
//! The RDP bound after `T` rounds is
//!
//! ```text
//! eps_rdp(alpha) = (2 alpha p q c^2 / sigma^2) * min{ sum_t gamma_t^2, Phi }
//! Phi            = (gamma_{T-1} * (1 + (1 + eta L) sqrt(pq) D n / (2 eta c)))^2
//! ```
//!
//! so with a bounded parameter domain the loss stops growing once the running
//! sum of squared alignment factors passes `Phi`. Conversion to `(eps, delta)`
//! uses the standard `eps + ln(1/delta) / (alpha - 1)` step; minimizing over
//! `alpha` gives the closed form `K + 2 sqrt(K ln(1/delta))` with
//! `K = 2 p q c^2 Gamma / sigma^2`.
//!
//! All functions are pure and take the [`PrivacyLedger`] as input, so a
//! recorded gamma sequence can be replayed offline.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::HyperParams;

/// Ordered record of the per-round alignment factors `gamma^(t)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrivacyLedger {
    gammas: Vec<f64>,
    gamma_sq_sum: f64,
}

impl PrivacyLedger {
    /// Empty ledger.
    pub fn new() -> Self {
        Self::default()
    }

    /// Build a ledger from a recorded schedule.
    pub fn from_gammas(gammas: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut ledger = Self::new();
        for g in gammas {
            ledger.push(g)?;
        }
        Ok(ledger)
    }

    /// Constant schedule of `rounds` entries.
    pub fn constant(gamma: f64, rounds: usize) -> Result<Self> {
        Self::from_gammas(core::iter::repeat_n(gamma, rounds))
    }

    /// Append one round. `gamma = 0` records a silent round.
    pub fn push(&mut self, gamma: f64) -> Result<()> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::domain("gamma", alloc::format!("must be finite and non-negative, got {gamma}")));
        }
        self.gammas.push(gamma);
        self.gamma_sq_sum += gamma * gamma;
        Ok(())
    }

    /// Recorded schedule.
    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    /// Number of rounds recorded.
    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    /// True when no round has been recorded.
    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    /// `gamma^(T-1)`.
    pub fn last(&self) -> Option<f64> {
        self.gammas.last().copied()
    }

    /// Running `sum_t gamma_t^2`.
    pub fn gamma_sq_sum(&self) -> f64 {
        self.gamma_sq_sum
    }

    /// `Phi` evaluated at the last recorded gamma.
    pub fn phi(&self, params: &HyperParams) -> Result<f64> {
        let last = self.last().ok_or(Error::EmptyLedger)?;
        Ok(phi_factor(params)? * last * last)
    }

    /// `Gamma = min{ sum_t gamma_t^2, Phi }`.
    pub fn gamma_total(&self, params: &HyperParams) -> Result<f64> {
        Ok(self.gamma_sq_sum.min(self.phi(params)?))
    }

    /// Whether the domain term has taken over (`sum gamma^2 >= Phi`).
    pub fn is_saturated(&self, params: &HyperParams) -> Result<bool> {
        Ok(self.gamma_sq_sum >= self.phi(params)?)
    }

    /// True when the last gamma is below the schedule's peak. `Phi` uses the
    /// last value, so such schedules deserve a warning in reports.
    pub fn last_below_peak(&self) -> bool {
        match self.last() {
            Some(last) => self.gammas.iter().any(|&g| g > last),
            None => false,
        }
    }
}

/// `(1 + (1 + eta L) sqrt(pq) D n / (2 eta c))^2`, i.e. `Phi / gamma^2`.
pub fn phi_factor(params: &HyperParams) -> Result<f64> {
    params.validate_for_accounting()?;
    let pq = params.device_rate * params.batch_rate;
    let reach = (1.0 + params.step_size * params.smoothness) * math::sqrt(pq) * params.diameter * params.devices as f64
        / (2.0 * params.step_size * params.clip_norm);
    let base = 1.0 + reach;
    Ok(base * base)
}

/// Saturation value `Phi` for a final alignment factor `gamma_last > 0`.
pub fn phi(params: &HyperParams, gamma_last: f64) -> Result<f64> {
    if !(gamma_last.is_finite() && gamma_last > 0.0) {
        return Err(Error::domain("gamma_last", alloc::format!("must be positive and finite, got {gamma_last}")));
    }
    Ok(phi_factor(params)? * gamma_last * gamma_last)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 1.0 && !alpha.is_nan() {
        Ok(())
    } else {
        Err(Error::domain("alpha", alloc::format!("Renyi order must exceed 1, got {alpha}")))
    }
}

/// Order-`alpha` RDP guarantee after the rounds in `ledger`.
pub fn rdp_epsilon(params: &HyperParams, ledger: &PrivacyLedger, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let gamma_total = ledger.gamma_total(params)?;
    Ok(alpha * params.rdp_slope() * gamma_total)
}

/// RDP to `(eps, delta)`-DP: `eps_rdp + ln(1/delta) / (alpha - 1)`.
pub fn rdp_to_dp(eps_rdp: f64, alpha: f64, delta: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain("delta", alloc::format!("must lie in (0, 1), got {delta}")));
    }
    if !(eps_rdp >= 0.0) {
        return Err(Error::domain("eps_rdp", alloc::format!("must be non-negative, got {eps_rdp}")));
    }
    Ok(eps_rdp - math::ln(delta) / (alpha - 1.0))
}

fn dp_from_k(k: f64, delta: f64) -> f64 {
    k + 2.0 * math::sqrt(k * -math::ln(delta))
}

/// Closed-form `(eps, delta)`-DP guarantee. Returns 0 when `Gamma = 0`.
pub fn dp_epsilon(params: &HyperParams, ledger: &PrivacyLedger) -> Result<f64> {
    let gamma_total = ledger.gamma_total(params)?;
    Ok(dp_from_k(params.rdp_slope() * gamma_total, params.delta))
}

/// The order at which the RDP-to-DP conversion attains [`dp_epsilon`]:
/// `1 + sqrt(ln(1/delta) / K)`.
pub fn optimal_alpha(params: &HyperParams, ledger: &PrivacyLedger) -> Result<f64> {
    let k = params.rdp_slope() * ledger.gamma_total(params)?;
    if k == 0.0 {
        return Err(Error::NoSignal);
    }
    Ok(1.0 + math::sqrt(-math::ln(params.delta) / k))
}

/// Plain RDP composition without the domain term: grows linearly in the
/// accumulated `sum gamma^2`.
pub fn baseline_composition_epsilon(params: &HyperParams, ledger: &PrivacyLedger, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    params.validate_for_accounting()?;
    if ledger.is_empty() {
        return Err(Error::EmptyLedger);
    }
    Ok(alpha * params.rdp_slope() * ledger.gamma_sq_sum())
}

/// [`baseline_composition_epsilon`] converted to `(eps, delta)`-DP at its best order.
pub fn baseline_composition_dp(params: &HyperParams, ledger: &PrivacyLedger) -> Result<f64> {
    params.validate_for_accounting()?;
    if ledger.is_empty() {
        return Err(Error::EmptyLedger);
    }
    Ok(dp_from_k(params.rdp_slope() * ledger.gamma_sq_sum(), params.delta))
}

/// First round count `T` at which a constant schedule saturates: `ceil(Phi / gamma^2)`.
pub fn crossover_round(params: &HyperParams, gamma_const: f64) -> Result<u64> {
    phi(params, gamma_const)?;
    // Phi / gamma^2 is independent of gamma; use the factor directly so the
    // answer is exactly scale invariant.
    Ok((math::ceil(phi_factor(params)?) as u64).max(1))
}

/// Whether anything was transmitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalStatus {
    /// `Gamma > 0`.
    Transmitted,
    /// `Gamma = 0`: the guarantee degenerates to `(0, delta)`.
    NoSignal,
}

/// Summary of the privacy state of a ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyAssessment {
    /// Rounds recorded.
    pub rounds: usize,
    /// `sum gamma^2`.
    pub gamma_sq_sum: f64,
    /// `Phi` at the last gamma.
    pub phi: f64,
    /// `min{sum gamma^2, Phi}`.
    pub gamma_total: f64,
    /// Order-2 RDP epsilon.
    pub eps_rdp_alpha2: f64,
    /// `(eps, delta)`-DP epsilon.
    pub eps_dp: f64,
    /// Optimal order, absent when nothing was transmitted.
    pub optimal_alpha: Option<f64>,
    /// Signal status.
    pub status: SignalStatus,
    /// True when the last gamma is below the schedule's peak.
    pub last_below_peak: bool,
}

/// Evaluate every accountant quantity for `ledger`.
pub fn assess(params: &HyperParams, ledger: &PrivacyLedger) -> Result<PrivacyAssessment> {
    let phi = ledger.phi(params)?;
    let gamma_total = ledger.gamma_sq_sum().min(phi);
    let status = if gamma_total > 0.0 { SignalStatus::Transmitted } else { SignalStatus::NoSignal };
    Ok(PrivacyAssessment {
        rounds: ledger.len(),
        gamma_sq_sum: ledger.gamma_sq_sum(),
        phi,
        gamma_total,
        eps_rdp_alpha2: rdp_epsilon(params, ledger, 2.0)?,
        eps_dp: dp_epsilon(params, ledger)?,
        optimal_alpha: match status {
            SignalStatus::Transmitted => Some(optimal_alpha(params, ledger)?),
            SignalStatus::NoSignal => None,
        },
        status,
        last_below_peak: ledger.last_below_peak(),
    })
}

/// One row per prefix of the ledger: the state after round `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerRow {
    /// Round index (0-based).
    pub t: usize,
    /// `gamma^(t)`.
    pub gamma: f64,
    /// `sum_{s <= t} gamma_s^2`.
    pub gamma_sq_sum: f64,
    /// `Phi` at `gamma^(t)`.
    pub phi: f64,
    /// `min{gamma_sq_sum, phi}`.
    pub gamma_total: f64,
    /// Order-2 RDP epsilon after `t + 1` rounds.
    pub eps_rdp_alpha2: f64,
    /// DP epsilon after `t + 1` rounds.
    pub eps_dp: f64,
}

/// Replay the ledger round by round.
pub fn ledger_rows(params: &HyperParams, ledger: &PrivacyLedger) -> Result<Vec<LedgerRow>> {
    let factor = phi_factor(params)?;
    let slope = params.rdp_slope();
    let mut prefix = PrivacyLedger::new();
    let mut rows = Vec::with_capacity(ledger.len());
    for (t, &gamma) in ledger.gammas().iter().enumerate() {
        prefix.push(gamma)?;
        let phi = factor * gamma * gamma;
        let gamma_total = prefix.gamma_sq_sum().min(phi);
        rows.push(LedgerRow {
            t,
            gamma,
            gamma_sq_sum: prefix.gamma_sq_sum(),
            phi,
            gamma_total,
            eps_rdp_alpha2: 2.0 * slope * gamma_total,
            eps_dp: dp_from_k(slope * gamma_total, params.delta),
        });
    }
    Ok(rows)
}
