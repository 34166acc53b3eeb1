//! Smooth tasks with known (or plug-in) constants.
//!
//! Every device holds the same number of samples, drawn i.i.d. from one
//! shared distribution. The global objective is the average of the device
//! objectives, each of which is the average per-sample loss.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use crate::error::{Error, Result};
use crate::{math, DeviceId};

/// One data point `xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Label (`+1`/`-1` for logistic; unused by the quadratic task).
    pub label: f64,
    /// Feature vector (the anchor `a_xi` for the quadratic task).
    pub features: Vec<f64>,
}

/// Equal-size local datasets, one per device.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    devices: Vec<Vec<Sample>>,
    dim: usize,
}

impl Dataset {
    /// Validate equal per-device sizes and a common feature dimension.
    pub fn new(devices: Vec<Vec<Sample>>) -> Result<Self> {
        let first = devices.first().ok_or_else(|| Error::domain("devices", "dataset needs at least one device"))?;
        let per_device = first.len();
        if per_device == 0 {
            return Err(Error::domain("dataset_size", "devices must hold at least one sample"));
        }
        let dim = first[0].features.len();
        for local in &devices {
            if local.len() != per_device {
                return Err(Error::domain("dataset_size", "every device must hold the same number of samples"));
            }
            if let Some(s) = local.iter().find(|s| s.features.len() != dim) {
                return Err(Error::DimensionMismatch { expected: dim, found: s.features.len() });
            }
        }
        Ok(Self { devices, dim })
    }

    /// Number of devices.
    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    /// Samples per device.
    pub fn samples_per_device(&self) -> usize {
        self.devices[0].len()
    }

    /// Feature dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Local dataset of `device`.
    pub fn device(&self, device: DeviceId) -> &[Sample] {
        &self.devices[device]
    }

    /// All local datasets.
    pub fn devices(&self) -> &[Vec<Sample>] {
        &self.devices
    }
}

/// Constants of the smoothness, variance and dissimilarity assumptions.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConstants {
    /// Per-sample smoothness `L`.
    pub smoothness: f64,
    /// Sample-gradient variance bound `sigma_l`.
    pub sigma_l: f64,
    /// Device dissimilarity bound `sigma_g`.
    pub sigma_g: f64,
    /// Optimal value `f*` (exact or estimated).
    pub f_star: f64,
    /// Whether `f_star` is exact.
    pub f_star_exact: bool,
}

/// A differentiable per-sample loss over a federated dataset.
pub trait LossModel {
    /// Model dimension `d`.
    fn dim(&self) -> usize;

    /// Underlying data.
    fn dataset(&self) -> &Dataset;

    /// `l(theta; xi)`.
    fn sample_loss(&self, theta: &[f64], sample: &Sample) -> f64;

    /// Writes `grad l(theta; xi)` into `out`.
    fn sample_gradient(&self, theta: &[f64], sample: &Sample, out: &mut [f64]);

    /// Analytic or plug-in constants.
    fn constants(&self) -> &LossConstants;

    /// `f_i(theta)`.
    fn device_loss(&self, theta: &[f64], device: DeviceId) -> f64 {
        let local = self.dataset().device(device);
        local.iter().map(|s| self.sample_loss(theta, s)).sum::<f64>() / local.len() as f64
    }

    /// `f(theta) = (1/n) sum_i f_i(theta)`.
    fn loss(&self, theta: &[f64]) -> f64 {
        let n = self.dataset().num_devices();
        (0..n).map(|i| self.device_loss(theta, i)).sum::<f64>() / n as f64
    }

    /// `grad f_i(theta)`.
    fn device_gradient(&self, theta: &[f64], device: DeviceId) -> Vec<f64> {
        let local = self.dataset().device(device);
        let mut acc = vec![0.0; self.dim()];
        let mut g = vec![0.0; self.dim()];
        for s in local {
            self.sample_gradient(theta, s, &mut g);
            math::axpy(1.0, &g, &mut acc);
        }
        let m = local.len() as f64;
        acc.iter_mut().for_each(|v| *v /= m);
        acc
    }

    /// `grad f(theta)`.
    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.dataset().num_devices();
        let mut acc = vec![0.0; self.dim()];
        for i in 0..n {
            math::axpy(1.0, &self.device_gradient(theta, i), &mut acc);
        }
        acc.iter_mut().for_each(|v| *v /= n as f64);
        acc
    }
}

/// Empirical `(sigma_l, sigma_g)` at `theta`: the worst device's mean squared
/// deviation of sample gradients from its local gradient, and the worst
/// squared deviation of a local gradient from the global one.
pub fn gradient_spread<M: LossModel + ?Sized>(model: &M, theta: &[f64]) -> (f64, f64) {
    let global = model.gradient(theta);
    let mut g = vec![0.0; model.dim()];
    let mut var_l: f64 = 0.0;
    let mut var_g: f64 = 0.0;
    for i in 0..model.dataset().num_devices() {
        let local = model.device_gradient(theta, i);
        let samples = model.dataset().device(i);
        let v = samples
            .iter()
            .map(|s| {
                model.sample_gradient(theta, s, &mut g);
                math::dist_sq(&g, &local)
            })
            .sum::<f64>()
            / samples.len() as f64;
        var_l = var_l.max(v);
        var_g = var_g.max(math::dist_sq(&local, &global));
    }
    (math::sqrt(var_l), math::sqrt(var_g))
}

/// Anchor distribution for [`make_quadratic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnchorDistribution {
    /// `a ~ N(0, spread^2 I)`.
    Gaussian {
        /// Per-coordinate standard deviation.
        spread: f64,
    },
    /// `a = spread * t_dof` per coordinate: heavy-tailed sample gradients.
    StudentT {
        /// Scale.
        spread: f64,
        /// Degrees of freedom.
        dof: f64,
    },
}

/// `l(theta; xi) = 0.5 ||theta - a_xi||^2`, so `L = 1` and every constant is
/// available in closed form from the anchors.
#[derive(Debug, Clone)]
pub struct Quadratic {
    data: Dataset,
    constants: LossConstants,
    minimizer: Vec<f64>,
}

impl Quadratic {
    /// Build from explicit per-device anchor sets.
    pub fn from_anchors(anchors: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let devices = anchors
            .into_iter()
            .map(|local| local.into_iter().map(|a| Sample { label: 0.0, features: a }).collect())
            .collect();
        Self::from_dataset(Dataset::new(devices)?)
    }

    /// Build from a dataset whose features are the anchors.
    pub fn from_dataset(data: Dataset) -> Result<Self> {
        let dim = data.dim();
        if dim == 0 {
            return Err(Error::domain("dim", "must be at least 1"));
        }
        let mean_of = |pts: &mut dyn Iterator<Item = &Vec<f64>>| {
            let mut acc = vec![0.0; dim];
            let mut k = 0usize;
            for p in pts {
                math::axpy(1.0, p, &mut acc);
                k += 1;
            }
            acc.iter_mut().for_each(|v| *v /= k as f64);
            acc
        };
        let device_means: Vec<Vec<f64>> =
            data.devices().iter().map(|local| mean_of(&mut local.iter().map(|s| &s.features))).collect();
        let overall = mean_of(&mut device_means.iter());
        let total = data.num_devices() * data.samples_per_device();
        let f_star = 0.5 * data.devices().iter().flatten().map(|s| math::dist_sq(&s.features, &overall)).sum::<f64>()
            / total as f64;
        let var_l = data
            .devices()
            .iter()
            .zip(&device_means)
            .map(|(local, mu)| local.iter().map(|s| math::dist_sq(&s.features, mu)).sum::<f64>() / local.len() as f64)
            .fold(0.0, f64::max);
        let var_g = device_means.iter().map(|mu| math::dist_sq(mu, &overall)).fold(0.0, f64::max);
        Ok(Self {
            data,
            constants: LossConstants {
                smoothness: 1.0,
                sigma_l: math::sqrt(var_l),
                sigma_g: math::sqrt(var_g),
                f_star,
                f_star_exact: true,
            },
            minimizer: overall,
        })
    }

    /// `argmin f`, the mean anchor.
    pub fn minimizer(&self) -> &[f64] {
        &self.minimizer
    }
}

impl LossModel for Quadratic {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn dataset(&self) -> &Dataset {
        &self.data
    }

    fn sample_loss(&self, theta: &[f64], sample: &Sample) -> f64 {
        0.5 * math::dist_sq(theta, &sample.features)
    }

    fn sample_gradient(&self, theta: &[f64], sample: &Sample, out: &mut [f64]) {
        for ((o, t), a) in out.iter_mut().zip(theta).zip(&sample.features) {
            *o = t - a;
        }
    }

    fn constants(&self) -> &LossConstants {
        &self.constants
    }
}

/// Synthetic quadratic task with i.i.d. anchors.
pub fn make_quadratic<R: Rng + ?Sized>(
    dim: usize,
    devices: usize,
    samples_per_device: usize,
    anchors: AnchorDistribution,
    rng: &mut R,
) -> Result<Quadratic> {
    if dim == 0 {
        return Err(Error::domain("dim", "must be at least 1"));
    }
    let draw = |rng: &mut R| -> Result<f64> {
        Ok(match anchors {
            AnchorDistribution::Gaussian { spread } => {
                let z: f64 = StandardNormal.sample(rng);
                spread * z
            }
            AnchorDistribution::StudentT { spread, dof } => {
                let t = StudentT::new(dof).map_err(|_| Error::domain("dof", "must be positive"))?;
                spread * t.sample(rng)
            }
        })
    };
    let mut all = Vec::with_capacity(devices);
    for _ in 0..devices {
        let mut local = Vec::with_capacity(samples_per_device);
        for _ in 0..samples_per_device {
            local.push((0..dim).map(|_| draw(rng)).collect::<Result<Vec<f64>>>()?);
        }
        all.push(local);
    }
    Quadratic::from_anchors(all)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + math::ln_1p(math::exp(-x))
    } else {
        math::ln_1p(math::exp(x))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + math::exp(-x))
    } else {
        let e = math::exp(x);
        e / (1.0 + e)
    }
}

/// Binary logistic regression, `l(theta; (x, y)) = ln(1 + exp(-y theta.x))`
/// with `||x|| <= R`, hence `L = R^2 / 4`.
///
/// `sigma_l`, `sigma_g` are plug-in estimates at a reference point and `f*`
/// is estimated by full-batch gradient descent.
#[derive(Debug, Clone)]
pub struct Logistic {
    data: Dataset,
    radius: f64,
    constants: LossConstants,
}

impl Logistic {
    /// Wrap a dataset whose features already satisfy `||x|| <= radius`.
    pub fn from_dataset(data: Dataset, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(Error::domain("radius", "must be finite and non-negative"));
        }
        if let Some(s) = data.devices().iter().flatten().find(|s| math::norm(&s.features) > radius * (1.0 + 1e-12)) {
            return Err(Error::domain(
                "radius",
                alloc::format!("feature norm {} exceeds radius {radius}", math::norm(&s.features)),
            ));
        }
        let mut model = Self {
            data,
            radius,
            constants: LossConstants {
                smoothness: radius * radius / 4.0,
                sigma_l: 0.0,
                sigma_g: 0.0,
                f_star: 0.0,
                f_star_exact: false,
            },
        };
        let origin = vec![0.0; model.dim()];
        model.refresh_constants(&origin);
        model.constants.f_star = model.estimate_f_star(&origin, 500);
        Ok(model)
    }

    /// Feature radius `R`.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Re-estimate `sigma_l` and `sigma_g` at `theta`.
    pub fn refresh_constants(&mut self, theta: &[f64]) {
        let (sl, sg) = gradient_spread(self, theta);
        self.constants.sigma_l = sl;
        self.constants.sigma_g = sg;
    }

    /// Lowest loss reached by `iterations` full-batch steps of size `1/L` from `start`.
    pub fn estimate_f_star(&self, start: &[f64], iterations: usize) -> f64 {
        let step = if self.constants.smoothness > 0.0 { 1.0 / self.constants.smoothness } else { 0.0 };
        let mut theta = start.to_vec();
        let mut best = self.loss(&theta);
        for _ in 0..iterations {
            let g = self.gradient(&theta);
            math::axpy(-step, &g, &mut theta);
            best = best.min(self.loss(&theta));
        }
        best
    }
}

impl LossModel for Logistic {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn dataset(&self) -> &Dataset {
        &self.data
    }

    fn sample_loss(&self, theta: &[f64], sample: &Sample) -> f64 {
        softplus(-sample.label * math::dot(theta, &sample.features))
    }

    fn sample_gradient(&self, theta: &[f64], sample: &Sample, out: &mut [f64]) {
        let margin = sample.label * math::dot(theta, &sample.features);
        let w = -sample.label * sigmoid(-margin);
        for (o, x) in out.iter_mut().zip(&sample.features) {
            *o = w * x;
        }
    }

    fn constants(&self) -> &LossConstants {
        &self.constants
    }
}

/// Synthetic logistic task: Gaussian features projected into the radius-`R`
/// ball, labels drawn from a logistic model around a random ground truth.
pub fn make_logistic<R: Rng + ?Sized>(
    dim: usize,
    devices: usize,
    samples_per_device: usize,
    radius: f64,
    rng: &mut R,
) -> Result<Logistic> {
    if dim == 0 {
        return Err(Error::domain("dim", "must be at least 1"));
    }
    let truth: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let mut all = Vec::with_capacity(devices);
    for _ in 0..devices {
        let mut local = Vec::with_capacity(samples_per_device);
        for _ in 0..samples_per_device {
            let mut x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let nx = math::norm(&x);
            if nx > radius {
                x.iter_mut().for_each(|v| *v *= radius / nx);
            }
            let prob = sigmoid(math::dot(&truth, &x));
            let label = if rng.random::<f64>() < prob { 1.0 } else { -1.0 };
            local.push(Sample { label, features: x });
        }
        all.push(local);
    }
    Logistic::from_dataset(Dataset::new(all)?, radius)
}
