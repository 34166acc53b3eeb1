use crate::error::{Error, Result};
use crate::math;

/// Protocol, privacy and model scalars shared by every module.
///
/// `Default` gives the desk-scale setting used for the privacy-curve
/// presets: `p = q = 1`, `c = 2`, `D = 0.5`, `L = 1`, `sigma = 10`,
/// `|D_i| = 8`, `eta = 0.1`, `delta = 1e-5`, with `n = 10` and `d = 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Number of client devices `n`.
    pub devices: usize,
    /// Device sampling rate `p` in (0, 1].
    pub device_rate: f64,
    /// Mini-batch sampling rate `q` in (0, 1].
    pub batch_rate: f64,
    /// Per-sample clipping norm `c`. `f64::INFINITY` disables clipping (simulation only).
    pub clip_norm: f64,
    /// Parameter-domain diameter `D`.
    pub diameter: f64,
    /// Smoothness constant `L`.
    pub smoothness: f64,
    /// Step size `eta`.
    pub step_size: f64,
    /// Channel noise standard deviation `sigma`. Zero is allowed for noiseless simulation.
    pub noise_std: f64,
    /// DP failure probability `delta` in (0, 1).
    pub delta: f64,
    /// Samples per device `|D_i|`.
    pub dataset_size: usize,
    /// Model dimension `d`.
    pub dim: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            devices: 10,
            device_rate: 1.0,
            batch_rate: 1.0,
            clip_norm: 2.0,
            diameter: 0.5,
            smoothness: 1.0,
            step_size: 0.1,
            noise_std: 10.0,
            delta: 1e-5,
            dataset_size: 8,
            dim: 2,
        }
    }
}

fn positive_finite(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(field, alloc::format!("must be a positive finite number, got {v}")))
    }
}

fn rate(field: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::domain(field, alloc::format!("must lie in (0, 1], got {v}")))
    }
}

impl HyperParams {
    /// Check the structural invariants. `noise_std = 0` and `clip_norm = inf`
    /// pass here; the accountant rejects them separately.
    pub fn validate(&self) -> Result<()> {
        if self.devices == 0 {
            return Err(Error::domain("devices", "must be at least 1"));
        }
        if self.dataset_size == 0 {
            return Err(Error::domain("dataset_size", "must be at least 1"));
        }
        if self.dim == 0 {
            return Err(Error::domain("dim", "must be at least 1"));
        }
        rate("device_rate", self.device_rate)?;
        rate("batch_rate", self.batch_rate)?;
        if !(self.clip_norm > 0.0) {
            return Err(Error::domain("clip_norm", alloc::format!("must be positive, got {}", self.clip_norm)));
        }
        positive_finite("diameter", self.diameter)?;
        positive_finite("smoothness", self.smoothness)?;
        positive_finite("step_size", self.step_size)?;
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::domain(
                "noise_std",
                alloc::format!("must be finite and non-negative, got {}", self.noise_std),
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::domain("delta", alloc::format!("must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }

    /// Stricter check for privacy accounting: finite clipping and positive noise.
    pub fn validate_for_accounting(&self) -> Result<()> {
        self.validate()?;
        positive_finite("clip_norm", self.clip_norm)?;
        positive_finite("noise_std", self.noise_std)?;
        Ok(())
    }

    /// `|I^(t)| = max(1, round(p n))`.
    pub fn active_count(&self) -> usize {
        (math::round(self.device_rate * self.devices as f64) as usize).clamp(1, self.devices.max(1))
    }

    /// `|B_i^(t)| = max(1, round(q |D_i|))`.
    pub fn batch_size(&self) -> usize {
        (math::round(self.batch_rate * self.dataset_size as f64) as usize).clamp(1, self.dataset_size.max(1))
    }

    /// `p q n`, the divisor of the server update as written in the protocol.
    pub fn update_divisor(&self) -> f64 {
        self.device_rate * self.batch_rate * self.devices as f64
    }

    /// `2 p q c^2 / sigma^2`, the per-unit-Gamma RDP slope at `alpha = 1`.
    pub(crate) fn rdp_slope(&self) -> f64 {
        2.0 * self.device_rate * self.batch_rate * self.clip_norm * self.clip_norm / (self.noise_std * self.noise_std)
    }
}
