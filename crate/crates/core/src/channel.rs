//! Block flat-fading multiple-access uplink.
//!
//! Each active device pre-scales its signal by `s_i = gamma / h_i` so that all
//! contributions arrive with the common amplitude `gamma`; the server then
//! divides the superposed signal plus noise by `gamma`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::{math, DeviceId, HyperParams};

/// Distribution of the per-round channel gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fading {
    /// Rayleigh magnitude with the given scale, conditioned on `h >= floor`.
    Rayleigh {
        /// Rayleigh scale parameter.
        scale: f64,
        /// Truncation floor `h_min`.
        floor: f64,
    },
    /// Every gain equals the given value.
    Fixed(f64),
}

impl Default for Fading {
    fn default() -> Self {
        Fading::Rayleigh { scale: 1.0, floor: 0.1 }
    }
}

impl Fading {
    /// Reject specs that cannot produce positive gains.
    pub fn validate(&self) -> Result<()> {
        match *self {
            Fading::Rayleigh { scale, floor } => {
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(Error::Fading(alloc::format!("Rayleigh scale must be positive, got {scale}")));
                }
                if !(floor.is_finite() && floor >= 0.0) {
                    return Err(Error::Fading(alloc::format!("truncation floor must be non-negative, got {floor}")));
                }
            }
            Fading::Fixed(h) => {
                if !(h.is_finite() && h > 0.0) {
                    return Err(Error::Fading(alloc::format!("fixed gain must be positive, got {h}")));
                }
            }
        }
        Ok(())
    }

    /// Draw one gain.
    ///
    /// For the truncated Rayleigh case `h^2 - floor^2` is exponential with
    /// mean `2 scale^2` (the squared Rayleigh is memoryless), which gives an
    /// exact sampler without rejection.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Fading::Rayleigh { scale, floor } => {
                let e: f64 = Exp1.sample(rng);
                math::sqrt(floor * floor + 2.0 * scale * scale * e)
            }
            Fading::Fixed(h) => h,
        }
    }
}

/// How the common received amplitude `gamma^(t)` is chosen each round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaPolicy {
    /// Same `gamma` every round.
    Constant(f64),
    /// Largest `gamma` such that every active device's transmit norm stays
    /// within `sqrt(power)`: `sqrt(P) * min_i h_i / (c |B|)`.
    PowerLimited {
        /// Per-device power budget `P`.
        power: f64,
    },
}

impl Default for GammaPolicy {
    fn default() -> Self {
        GammaPolicy::Constant(1.0)
    }
}

/// Channel state for one communication round.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRound {
    /// `h_i^(t)` for every device `0..n`.
    pub gains: Vec<f64>,
    /// Alignment factor `gamma^(t)`.
    pub gamma: f64,
    /// `s_i^(t) = gamma / h_i^(t)` for the active devices.
    pub scalings: BTreeMap<DeviceId, f64>,
    /// Channel noise standard deviation `sigma`.
    pub noise_std: f64,
}

/// Sample the gains for round `t` and derive `gamma` and the scalings.
pub fn draw_round<R: Rng + ?Sized>(
    rng: &mut R,
    params: &HyperParams,
    active: &[DeviceId],
    policy: GammaPolicy,
    fading: Fading,
) -> Result<ChannelRound> {
    params.validate()?;
    fading.validate()?;
    if active.is_empty() {
        return Err(Error::domain("active", "at least one device must be active"));
    }
    if let Some(&bad) = active.iter().find(|&&i| i >= params.devices) {
        return Err(Error::domain("active", alloc::format!("device {bad} out of range 0..{}", params.devices)));
    }
    let gains: Vec<f64> = (0..params.devices).map(|_| fading.sample(rng)).collect();
    if gains.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::Fading("non-positive gain drawn".into()));
    }
    let gamma = match policy {
        GammaPolicy::Constant(g) => {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::domain("gamma", alloc::format!("constant gamma must be positive, got {g}")));
            }
            g
        }
        GammaPolicy::PowerLimited { power } => {
            if !(power.is_finite() && power > 0.0) {
                return Err(Error::domain("power", alloc::format!("power budget must be positive, got {power}")));
            }
            if !params.clip_norm.is_finite() {
                return Err(Error::domain("clip_norm", "power-limited alignment needs a finite clipping norm"));
            }
            let weakest = active.iter().map(|&i| gains[i]).fold(f64::INFINITY, f64::min);
            math::sqrt(power) * weakest / (params.clip_norm * params.batch_size() as f64)
        }
    };
    let scalings = active.iter().map(|&i| (i, gamma / gains[i])).collect();
    Ok(ChannelRound { gains, gamma, scalings, noise_std: params.noise_std })
}

impl ChannelRound {
    /// Transmitted signal `x_i = s_i * payload` for active device `device`.
    pub fn transmit(&self, device: DeviceId, payload: &[f64]) -> Option<Vec<f64>> {
        let s = *self.scalings.get(&device)?;
        Some(payload.iter().map(|v| s * v).collect())
    }

    /// Superposed received signal `y = sum_i h_i x_i + zeta`.
    pub fn receive<'a>(
        &self,
        transmissions: impl IntoIterator<Item = (DeviceId, &'a [f64])>,
        noise: &[f64],
    ) -> Vec<f64> {
        let mut y = noise.to_vec();
        for (device, x) in transmissions {
            math::axpy(self.gains[device], x, &mut y);
        }
        y
    }

    /// Server-side estimate `y / gamma`.
    pub fn estimate(&self, received: &[f64]) -> Vec<f64> {
        received.iter().map(|v| v / self.gamma).collect()
    }

    /// Largest relative violation of `h_i s_i = gamma` over the active set.
    pub fn alignment_error(&self) -> f64 {
        self.scalings.iter().map(|(&i, &s)| ((self.gains[i] * s - self.gamma) / self.gamma).abs()).fold(0.0, f64::max)
    }
}

/// Additive channel noise `zeta ~ N(0, sigma^2 I)`. `sigma = 0` yields zeros.
pub fn channel_noise<R: Rng + ?Sized>(rng: &mut R, dim: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; dim];
    }
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}
