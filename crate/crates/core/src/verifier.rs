//! One-step numerical privacy oracle on a one-dimensional model.
//!
//! For a single round the law of `theta^(1)` is an exact, finite Gaussian
//! mixture: one component per (active set, mini-batches) outcome, each with
//! standard deviation `eta / (p q n) * sigma / gamma`. Enumerating the
//! outcomes for two adjacent datasets and integrating the Rényi divergence by
//! trapezoid quadrature gives a direct check of the per-round bound
//! `2 alpha p q c^2 gamma^2 / sigma^2`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::{math, DeviceId, HyperParams};

/// Largest number of sampling outcomes enumerated for one distribution.
pub const OUTCOME_LIMIT: u128 = 10_000;

/// Edge-to-peak ratio of the quadrature integrand above which the grid is too narrow.
const EDGE_TOLERANCE: f64 = 1e-10;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Uniform quadrature grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    /// Left end.
    pub lo: f64,
    /// Right end.
    pub hi: f64,
    /// Number of points (at least 2).
    pub points: usize,
}

impl Grid {
    /// Spacing between points.
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    /// Grid abscissae.
    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        let h = self.step();
        (0..self.points).map(move |k| self.lo + h * k as f64)
    }

    /// Same range, half the spacing.
    pub fn refined(&self) -> Self {
        Self { points: 2 * self.points - 1, ..*self }
    }
}

/// Equal-variance Gaussian mixture over the 1-D output `theta^(1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputDistribution {
    /// `(mean, weight)` pairs; weights sum to one.
    pub components: Vec<(f64, f64)>,
    /// Common component standard deviation.
    pub std: f64,
}

impl OutputDistribution {
    /// Mixture from raw components; identical means are merged.
    pub fn new(components: impl IntoIterator<Item = (f64, f64)>, std: f64) -> Result<Self> {
        if !(std.is_finite() && std > 0.0) {
            return Err(Error::domain("std", "component standard deviation must be positive"));
        }
        let mut merged: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
        for (m, w) in components {
            let key = (m + 0.0).to_bits();
            merged.entry(key).or_insert((m, 0.0)).1 += w;
        }
        let total: f64 = merged.values().map(|c| c.1).sum();
        if !(total > 0.0) {
            return Err(Error::domain("weights", "mixture needs positive total weight"));
        }
        let mut components: Vec<(f64, f64)> = merged.into_values().map(|(m, w)| (m, w / total)).collect();
        components.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { components, std })
    }

    /// Single Gaussian `N(mean, std^2)`.
    pub fn gaussian(mean: f64, std: f64) -> Result<Self> {
        Self::new([(mean, 1.0)], std)
    }

    /// Log density at `x`.
    pub fn ln_density(&self, x: f64) -> f64 {
        let mut terms: Vec<f64> = Vec::with_capacity(self.components.len());
        let norm = -math::ln(self.std) - LN_SQRT_2PI;
        for &(m, w) in &self.components {
            let z = (x - m) / self.std;
            terms.push(math::ln(w) + norm - 0.5 * z * z);
        }
        math::log_sum_exp(&terms)
    }

    /// Density values on `grid`.
    pub fn density_on(&self, grid: &Grid) -> Vec<f64> {
        grid.nodes().map(|x| math::exp(self.ln_density(x))).collect()
    }

    /// Trapezoid mass on `grid`.
    pub fn mass_on(&self, grid: &Grid) -> f64 {
        trapezoid(&self.density_on(grid), grid.step())
    }

    fn mean_range(&self) -> (f64, f64) {
        (self.components[0].0, self.components[self.components.len() - 1].0)
    }
}

fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    h * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1]))
}

/// Grid wide enough for the order-`alpha` integrand of `p` against `q`:
/// the tilted density can sit up to `(alpha - 1)` mixture widths outside the
/// component means, plus a 12-sigma margin; spacing is `std / 16`.
pub fn grid_for(p: &OutputDistribution, q: &OutputDistribution, alpha: f64) -> Grid {
    let (plo, phi) = p.mean_range();
    let (qlo, qhi) = q.mean_range();
    let lo = plo.min(qlo);
    let hi = phi.max(qhi);
    let spread = hi - lo;
    let std = p.std.min(q.std);
    let pad = (alpha - 1.0).max(1.0) * spread + 12.0 * p.std.max(q.std);
    let (lo, hi) = (lo - pad, hi + pad);
    let points = (math::ceil((hi - lo) / (std / 16.0)) as usize + 1).max(3);
    Grid { lo, hi, points }
}

/// `D_alpha(P || Q)` by trapezoid quadrature on `grid`.
pub fn renyi_divergence_on_grid(
    p: &OutputDistribution,
    q: &OutputDistribution,
    alpha: f64,
    grid: &Grid,
) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(Error::domain("alpha", "Renyi order must exceed 1"));
    }
    let logs: Vec<f64> = grid.nodes().map(|x| alpha * p.ln_density(x) + (1.0 - alpha) * q.ln_density(x)).collect();
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let edge = logs[0].max(logs[logs.len() - 1]);
    let edge_ratio = math::exp(edge - peak);
    if !(edge_ratio <= EDGE_TOLERANCE) {
        return Err(Error::QuadratureSupport { edge_ratio });
    }
    let scaled: Vec<f64> = logs.iter().map(|v| math::exp(v - peak)).collect();
    let integral_ln = peak + math::ln(trapezoid(&scaled, grid.step()));
    Ok((integral_ln / (alpha - 1.0)).max(0.0))
}

/// `D_alpha(P || Q)` on an automatically sized grid.
pub fn renyi_divergence_numeric(p: &OutputDistribution, q: &OutputDistribution, alpha: f64) -> Result<f64> {
    renyi_divergence_on_grid(p, q, alpha, &grid_for(p, q, alpha))
}

/// Order-`alpha` Rényi divergence between equal-variance Gaussians.
pub fn gaussian_renyi(mean_gap: f64, variance: f64, alpha: f64) -> f64 {
    alpha * mean_gap * mean_gap / (2.0 * variance)
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

fn clip_scalar(g: f64, c: f64) -> f64 {
    if g.abs() <= c {
        g
    } else {
        c * g.signum()
    }
}

/// A 1-D one-round instance: per-device, per-sample raw gradients at `theta0`.
#[derive(Debug, Clone, PartialEq)]
pub struct OneStepInstance {
    /// Protocol parameters; `devices` and `dataset_size` must match `gradients`.
    pub params: HyperParams,
    /// Alignment factor of the round.
    pub gamma: f64,
    /// Starting model.
    pub theta0: f64,
    /// `gradients[i][k] = l'(theta0; xi_ik)` before clipping.
    pub gradients: Vec<Vec<f64>>,
}

/// Replace one sample's gradient on one device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adjacency {
    /// Device holding the changed sample.
    pub device: DeviceId,
    /// Index of the changed sample.
    pub sample: usize,
    /// Gradient of the replacement sample.
    pub replacement: f64,
}

impl OneStepInstance {
    /// Instance where every sample has gradient `background`, except
    /// sample 0 of device 0 which has gradient `c`.
    pub fn uniform(params: HyperParams, gamma: f64, background: f64) -> Self {
        let mut gradients = vec![vec![background; params.dataset_size]; params.devices];
        gradients[0][0] = params.clip_norm;
        Self { params, gamma, theta0: 0.0, gradients }
    }

    /// The adjacent instance.
    pub fn neighbour(&self, adjacency: Adjacency) -> Result<Self> {
        let mut other = self.clone();
        let slot = other
            .gradients
            .get_mut(adjacency.device)
            .and_then(|d| d.get_mut(adjacency.sample))
            .ok_or_else(|| Error::domain("adjacency", "device or sample index out of range"))?;
        *slot = adjacency.replacement;
        Ok(other)
    }

    /// Number of (active set, batches) outcomes.
    pub fn outcome_count(&self) -> u128 {
        let p = &self.params;
        binomial(p.devices, p.active_count()).saturating_mul(
            (0..p.active_count()).fold(1u128, |acc, _| acc.saturating_mul(binomial(p.dataset_size, p.batch_size()))),
        )
    }

    /// Exact law of `theta^(1)`.
    pub fn output_distribution(&self) -> Result<OutputDistribution> {
        let p = &self.params;
        p.validate_for_accounting()?;
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::domain("gamma", "must be positive"));
        }
        if self.gradients.len() != p.devices {
            return Err(Error::DimensionMismatch { expected: p.devices, found: self.gradients.len() });
        }
        if let Some(d) = self.gradients.iter().find(|d| d.len() != p.dataset_size) {
            return Err(Error::DimensionMismatch { expected: p.dataset_size, found: d.len() });
        }
        let outcomes = self.outcome_count();
        if outcomes > OUTCOME_LIMIT {
            return Err(Error::OutcomeLimit { outcomes, limit: OUTCOME_LIMIT });
        }
        // batch sums per device
        let batches = combinations(p.dataset_size, p.batch_size());
        let sums: Vec<Vec<f64>> = self
            .gradients
            .iter()
            .map(|local| batches.iter().map(|b| b.iter().map(|&k| clip_scalar(local[k], p.clip_norm)).sum()).collect())
            .collect();
        let scale = p.step_size / p.update_divisor();
        let mut components = Vec::new();
        for active in combinations(p.devices, p.active_count()) {
            let mut totals = vec![0.0];
            for &i in &active {
                totals = totals.iter().flat_map(|t| sums[i].iter().map(move |s| t + s)).collect();
            }
            components.extend(totals.into_iter().map(|s| (self.theta0 - scale * s, 1.0)));
        }
        OutputDistribution::new(components, scale * p.noise_std / self.gamma)
    }
}

/// Outcome of a bound check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// `numeric <= bound * (1 + 1e-3)`.
    Pass,
    /// The numeric divergence exceeds the bound.
    Fail,
}

/// Result of [`one_step_bound_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    /// `max(D_alpha(P||Q), D_alpha(Q||P))`.
    pub numeric: f64,
    /// `2 alpha p q c^2 gamma^2 / sigma^2`.
    pub bound: f64,
    /// `(bound - numeric) / bound`.
    pub margin: f64,
    /// Pass/fail at relative tolerance `1e-3`.
    pub verdict: Verdict,
    /// True when `p q = 1` or `sigma / (c gamma) >= 5`.
    pub in_regime: bool,
}

/// One-round bound `2 alpha p q c^2 gamma^2 / sigma^2`.
pub fn one_step_bound(params: &HyperParams, gamma: f64, alpha: f64) -> f64 {
    2.0 * alpha * params.device_rate * params.batch_rate * params.clip_norm * params.clip_norm * gamma * gamma
        / (params.noise_std * params.noise_std)
}

/// Compare the exact one-round divergence between `instance` and its
/// neighbour under `adjacency` with the per-round bound. Both directions of
/// the divergence are evaluated and the larger one is reported.
pub fn one_step_bound_check(instance: &OneStepInstance, adjacency: Adjacency, alpha: f64) -> Result<BoundCheck> {
    let p_dist = instance.output_distribution()?;
    let q_dist = instance.neighbour(adjacency)?.output_distribution()?;
    let numeric =
        renyi_divergence_numeric(&p_dist, &q_dist, alpha)?.max(renyi_divergence_numeric(&q_dist, &p_dist, alpha)?);
    let params = &instance.params;
    let bound = one_step_bound(params, instance.gamma, alpha);
    let pq = params.device_rate * params.batch_rate;
    Ok(BoundCheck {
        numeric,
        bound,
        margin: (bound - numeric) / bound,
        verdict: if numeric <= bound * (1.0 + 1e-3) { Verdict::Pass } else { Verdict::Fail },
        in_regime: pq >= 1.0 || params.noise_std / (params.clip_norm * instance.gamma) >= 5.0,
    })
}

/// One point of a verifier sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifierCase {
    /// Rényi order.
    pub alpha: f64,
    /// Alignment factor.
    pub gamma: f64,
    /// Device sampling rate.
    pub device_rate: f64,
    /// Mini-batch sampling rate.
    pub batch_rate: f64,
}

/// Result of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseResult {
    /// The case.
    pub case: VerifierCase,
    /// Worst check over the tested backgrounds.
    pub check: BoundCheck,
}

/// `alpha in {1.5, 2, 4, 8}`, `gamma in {0.5, 1, 2}`,
/// `(p, q) in {(1, 1), (1, 0.5), (0.5, 1), (0.5, 0.5)}`.
pub fn default_sweep() -> Vec<VerifierCase> {
    let mut cases = Vec::new();
    for (p, q) in [(1.0, 1.0), (1.0, 0.5), (0.5, 1.0), (0.5, 0.5)] {
        for gamma in [0.5, 1.0, 2.0] {
            for alpha in [1.5, 2.0, 4.0, 8.0] {
                cases.push(VerifierCase { alpha, gamma, device_rate: p, batch_rate: q });
            }
        }
    }
    cases
}

/// Run one sweep point on the smallest instance that exhibits the sampling
/// (two devices when `p < 1`, two samples per device when `q < 1`).
///
/// The changed sample moves from `+c` to `-c`; every other sample takes a
/// background gradient in `{-c, 0, +c}` and the worst background is kept.
pub fn run_case(base: &HyperParams, case: VerifierCase) -> Result<CaseResult> {
    let params = HyperParams {
        device_rate: case.device_rate,
        batch_rate: case.batch_rate,
        devices: if case.device_rate < 1.0 { 2 } else { 1 },
        dataset_size: if case.batch_rate < 1.0 { 2 } else { 1 },
        dim: 1,
        ..base.clone()
    };
    let c = params.clip_norm;
    let adjacency = Adjacency { device: 0, sample: 0, replacement: -c };
    let mut worst: Option<BoundCheck> = None;
    for background in [-c, 0.0, c] {
        let instance = OneStepInstance::uniform(params.clone(), case.gamma, background);
        let check = one_step_bound_check(&instance, adjacency, case.alpha)?;
        if worst.is_none_or(|w| check.numeric > w.numeric) {
            worst = Some(check);
        }
    }
    Ok(CaseResult { case, check: worst.expect("three backgrounds checked") })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_distributions_have_zero_divergence() {
        let p = OutputDistribution::new([(0.0, 0.5), (1.0, 0.5)], 0.7).unwrap();
        for alpha in [1.5, 2.0, 8.0] {
            assert!(renyi_divergence_numeric(&p, &p, alpha).unwrap() < 1e-12);
        }
    }

    #[test]
    fn unit_gaussians_order_two() {
        let p = OutputDistribution::gaussian(0.0, 1.0).unwrap();
        let q = OutputDistribution::gaussian(1.0, 1.0).unwrap();
        let d = renyi_divergence_numeric(&p, &q, 2.0).unwrap();
        assert!((d - 1.0).abs() < 1e-4);
        assert!((d - gaussian_renyi(1.0, 1.0, 2.0)).abs() < 1e-9);
    }

    #[test]
    fn order_near_one_approaches_kl() {
        let p = OutputDistribution::gaussian(0.0, 1.0).unwrap();
        let q = OutputDistribution::gaussian(1.0, 1.0).unwrap();
        let d = renyi_divergence_numeric(&p, &q, 1.0 + 1e-6).unwrap();
        assert!((d - 0.5).abs() < 1e-5);
    }

    #[test]
    fn too_narrow_grid_is_reported() {
        let p = OutputDistribution::gaussian(0.0, 1.0).unwrap();
        let q = OutputDistribution::gaussian(1.0, 1.0).unwrap();
        let g = Grid { lo: -3.0, hi: 3.0, points: 601 };
        assert!(matches!(renyi_divergence_on_grid(&p, &q, 2.0, &g), Err(Error::QuadratureSupport { .. })));
    }

    #[test]
    fn mixture_integrates_to_one() {
        let p = OutputDistribution::new([(-1.0, 0.25), (0.0, 0.25), (2.0, 0.5)], 0.3).unwrap();
        let g = grid_for(&p, &p, 2.0);
        assert!((p.mass_on(&g) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn full_participation_matches_closed_form() {
        let params = HyperParams { devices: 1, dataset_size: 1, dim: 1, ..Default::default() };
        let inst = OneStepInstance::uniform(params.clone(), 1.0, 0.0);
        let adj = Adjacency { device: 0, sample: 0, replacement: -params.clip_norm };
        let check = one_step_bound_check(&inst, adj, 2.0).unwrap();
        assert!((check.numeric - check.bound).abs() <= 1e-4 * check.bound);
        assert_eq!(check.verdict, Verdict::Pass);
        assert!(check.margin.abs() < 1e-4);
    }

    #[test]
    fn identical_datasets_pass_trivially() {
        let params = HyperParams { devices: 1, dataset_size: 2, batch_rate: 0.5, dim: 1, ..Default::default() };
        let inst = OneStepInstance::uniform(params.clone(), 1.0, 0.0);
        let adj = Adjacency { device: 0, sample: 0, replacement: params.clip_norm };
        let check = one_step_bound_check(&inst, adj, 4.0).unwrap();
        assert!(check.numeric < 1e-12);
        assert_eq!(check.verdict, Verdict::Pass);
    }

    #[test]
    fn outcome_cap_enforced() {
        let params = HyperParams {
            devices: 20,
            device_rate: 0.5,
            dataset_size: 8,
            batch_rate: 0.5,
            dim: 1,
            ..Default::default()
        };
        let inst = OneStepInstance::uniform(params, 1.0, 0.0);
        assert!(matches!(inst.output_distribution(), Err(Error::OutcomeLimit { .. })));
    }

    #[test]
    fn combinatorics() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(combinations(4, 2).len(), 6);
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
    }
}
