//! The training loop: device selection, mini-batch sampling, per-sample
//! clipping, over-the-air aggregation and the noisy server update
//!
//! ```text
//! theta' = theta - eta / (p q n) * ( sum_{i in I} sum_{xi in B_i} clip_c(grad l(theta; xi)) + zeta / gamma )
//! ```
//!
//! The divisor `p q n` is used as written. Because each device contributes
//! `|B_i| = q |D_i|` clipped gradients, the effective step then scales with
//! `|D_i|`; [`Normalization::MeanOfClipped`] divides by the number of
//! contributing samples instead, which is what the convergence experiments use.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::accountant::PrivacyLedger;
use crate::channel::{channel_noise, draw_round, ChannelRound, Fading, GammaPolicy};
use crate::error::{Error, Result};
use crate::losses::LossModel;
use crate::rng::{stream, Purpose};
use crate::{math, DeviceId, HyperParams};

/// `clip_c(g) = g * min(1, c / ||g||)`; the zero vector maps to itself.
pub fn clip(g: &[f64], c: f64) -> Vec<f64> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, c);
    out
}

/// In-place [`clip`]. Returns `true` when the vector was scaled down.
pub fn clip_in_place(g: &mut [f64], c: f64) -> bool {
    let n = math::norm(g);
    if n <= c {
        return false;
    }
    let s = c / n;
    g.iter_mut().for_each(|v| *v *= s);
    true
}

/// Uniform subset of `round(p n)` devices, sorted ascending.
pub fn select_devices<R: Rng + ?Sized>(rng: &mut R, params: &HyperParams) -> Vec<DeviceId> {
    let mut ids = index::sample(rng, params.devices, params.active_count()).into_vec();
    ids.sort_unstable();
    ids
}

/// Uniform subset of `round(q |D_i|)` sample indices of one device, sorted ascending.
pub fn sample_batch<R: Rng + ?Sized>(rng: &mut R, params: &HyperParams, _device: DeviceId) -> Vec<usize> {
    let mut ids = index::sample(rng, params.dataset_size, params.batch_size()).into_vec();
    ids.sort_unstable();
    ids
}

/// Divisor applied to the aggregated gradient estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// `p q n`, as in the protocol's update rule.
    #[default]
    Verbatim,
    /// Number of clipped sample gradients in the aggregate, `|I| |B|`.
    MeanOfClipped,
}

/// Euclidean ball of diameter `D` the iterates are projected onto.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// Ball center (the initial model).
    pub center: Vec<f64>,
    /// Radius `D / 2`.
    pub radius: f64,
}

impl Projection {
    /// Ball of diameter `diameter` around `center`.
    pub fn ball(center: Vec<f64>, diameter: f64) -> Self {
        Self { center, radius: diameter / 2.0 }
    }

    /// Project `theta` onto the ball.
    pub fn apply(&self, theta: &mut [f64]) {
        let dist = math::sqrt(math::dist_sq(theta, &self.center));
        if dist > self.radius {
            let s = self.radius / dist;
            for (t, c) in theta.iter_mut().zip(&self.center) {
                *t = c + (*t - c) * s;
            }
        }
    }
}

/// Global model after `round` updates.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// `theta^(t)`.
    pub theta: Vec<f64>,
    /// `t`.
    pub round: usize,
}

/// What happened in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// Round index `t`.
    pub t: usize,
    /// Active set `I^(t)`, ascending.
    pub active_set: Vec<DeviceId>,
    /// Mini-batch indices, aligned with `active_set`.
    pub batch_indices: Vec<Vec<usize>>,
    /// Sample gradients whose norm exceeded `c`.
    pub clipped_count: usize,
    /// `gamma^(t)`.
    pub gamma: f64,
    /// `||grad-hat f(theta^(t))||`, the server's estimate `y / gamma`.
    pub grad_estimate_norm: f64,
    /// `||grad f(theta^(t))||`.
    pub true_grad_norm: f64,
    /// `f(theta^(t))`.
    pub loss: f64,
    /// Largest transmit norm `||x_i||` over the active devices.
    pub max_transmit_norm: f64,
}

/// Per-round switches.
#[derive(Debug, Clone, Default)]
pub struct RoundOptions {
    /// Update divisor.
    pub normalization: Normalization,
    /// Optional domain projection.
    pub projection: Option<Projection>,
}

/// Execute one round from `state`.
#[allow(clippy::too_many_arguments)]
pub fn run_round<M, R>(
    state: &ModelState,
    params: &HyperParams,
    loss: &M,
    channel: &ChannelRound,
    active: &[DeviceId],
    batches: &[Vec<usize>],
    rng: &mut R,
    options: &RoundOptions,
) -> Result<(ModelState, RoundRecord)>
where
    M: LossModel + ?Sized,
    R: Rng + ?Sized,
{
    let d = loss.dim();
    if state.theta.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: state.theta.len() });
    }
    if params.dim != d {
        return Err(Error::DimensionMismatch { expected: d, found: params.dim });
    }
    if active.len() != batches.len() {
        return Err(Error::DimensionMismatch { expected: active.len(), found: batches.len() });
    }
    if channel.alignment_error() > 1e-12 {
        return Err(Error::domain("channel", "scalings violate h_i s_i = gamma"));
    }
    let theta = &state.theta;
    let mut g = vec![0.0; d];
    let mut clipped_count = 0;
    let mut contributions = 0usize;
    let mut transmissions = Vec::with_capacity(active.len());
    for (&device, batch) in active.iter().zip(batches) {
        let local = loss.dataset().device(device);
        let mut payload = vec![0.0; d];
        for &k in batch {
            let sample = local
                .get(k)
                .ok_or_else(|| Error::domain("batch", alloc::format!("sample {k} out of range for device {device}")))?;
            loss.sample_gradient(theta, sample, &mut g);
            if clip_in_place(&mut g, params.clip_norm) {
                clipped_count += 1;
            }
            math::axpy(1.0, &g, &mut payload);
        }
        contributions += batch.len();
        let x = channel
            .transmit(device, &payload)
            .ok_or_else(|| Error::domain("channel", alloc::format!("device {device} has no scaling factor")))?;
        transmissions.push((device, x));
    }
    let max_transmit_norm = transmissions.iter().map(|(_, x)| math::norm(x)).fold(0.0, f64::max);

    let zeta = channel_noise(rng, d, channel.noise_std);
    let received = channel.receive(transmissions.iter().map(|(i, x)| (*i, x.as_slice())), &zeta);
    let estimate = channel.estimate(&received);

    let divisor = match options.normalization {
        Normalization::Verbatim => params.update_divisor(),
        Normalization::MeanOfClipped => contributions as f64,
    };
    let mut next = theta.clone();
    math::axpy(-params.step_size / divisor, &estimate, &mut next);
    if let Some(p) = &options.projection {
        p.apply(&mut next);
    }

    let record = RoundRecord {
        t: state.round,
        active_set: active.to_vec(),
        batch_indices: batches.to_vec(),
        clipped_count,
        gamma: channel.gamma,
        grad_estimate_norm: math::norm(&estimate),
        true_grad_norm: math::norm(&loss.gradient(theta)),
        loss: loss.loss(theta),
        max_transmit_norm,
    };
    Ok((ModelState { theta: next, round: state.round + 1 }, record))
}

/// Settings of a training run beyond the scalar hyper-parameters.
#[derive(Debug, Clone)]
pub struct TrainingConfig {
    /// Number of rounds `T`.
    pub rounds: usize,
    /// `theta^(0)`; zeros when `None`.
    pub initial: Option<Vec<f64>>,
    /// Alignment policy.
    pub policy: GammaPolicy,
    /// Fading model.
    pub fading: Fading,
    /// Update divisor.
    pub normalization: Normalization,
    /// Project onto the diameter-`D` ball around `theta^(0)`.
    pub project: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            initial: None,
            policy: GammaPolicy::default(),
            fading: Fading::default(),
            normalization: Normalization::default(),
            project: false,
        }
    }
}

/// Full record of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    /// `theta^(0) .. theta^(T)`.
    pub thetas: Vec<Vec<f64>>,
    /// One record per round.
    pub records: Vec<RoundRecord>,
    /// `f(theta^(T))`.
    pub final_loss: f64,
    /// `||grad f(theta^(T))||`.
    pub final_grad_norm: f64,
}

impl TrainingTrace {
    /// `min_{t in [1, T]} ||grad f(theta^(t))||`.
    pub fn min_grad_norm(&self) -> f64 {
        self.records.iter().skip(1).map(|r| r.true_grad_norm).fold(self.final_grad_norm, f64::min)
    }

    /// Number of rounds executed.
    pub fn rounds(&self) -> usize {
        self.records.len()
    }
}

/// Run `config.rounds` rounds, recording every `gamma^(t)` in a ledger.
///
/// Randomness for round `t` comes from the `(seed, t, purpose)` sub-streams
/// of [`crate::rng`], so identical inputs replay bit-identically.
pub fn run_training<M: LossModel + ?Sized>(
    params: &HyperParams,
    loss: &M,
    config: &TrainingConfig,
    seed: u64,
) -> Result<(TrainingTrace, PrivacyLedger)> {
    params.validate()?;
    if config.rounds == 0 {
        return Err(Error::domain("rounds", "T >= 1 required"));
    }
    let data = loss.dataset();
    if data.num_devices() != params.devices {
        return Err(Error::DimensionMismatch { expected: params.devices, found: data.num_devices() });
    }
    if data.samples_per_device() != params.dataset_size {
        return Err(Error::DimensionMismatch { expected: params.dataset_size, found: data.samples_per_device() });
    }
    let initial = config.initial.clone().unwrap_or_else(|| vec![0.0; loss.dim()]);
    let options = RoundOptions {
        normalization: config.normalization,
        projection: config.project.then(|| Projection::ball(initial.clone(), params.diameter)),
    };
    let mut state = ModelState { theta: initial, round: 0 };
    let mut thetas = Vec::with_capacity(config.rounds + 1);
    let mut records = Vec::with_capacity(config.rounds);
    let mut ledger = PrivacyLedger::new();
    thetas.push(state.theta.clone());
    for t in 0..config.rounds as u64 {
        let active = select_devices(&mut stream(seed, t, Purpose::Devices), params);
        let mut batch_rng = stream(seed, t, Purpose::Batches);
        let batches: Vec<Vec<usize>> = active.iter().map(|&i| sample_batch(&mut batch_rng, params, i)).collect();
        let channel = draw_round(&mut stream(seed, t, Purpose::Fading), params, &active, config.policy, config.fading)?;
        let (next, record) = run_round(
            &state,
            params,
            loss,
            &channel,
            &active,
            &batches,
            &mut stream(seed, t, Purpose::Noise),
            &options,
        )?;
        ledger.push(channel.gamma)?;
        records.push(record);
        thetas.push(next.theta.clone());
        state = next;
    }
    Ok((
        TrainingTrace {
            final_loss: loss.loss(&state.theta),
            final_grad_norm: math::norm(&loss.gradient(&state.theta)),
            thetas,
            records,
        },
        ledger,
    ))
}
