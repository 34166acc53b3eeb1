//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comments start with '#'
//! D = 0.5
//! gamma_policy = constant 1
//! sweep.D = 0.25, 0.5, 1.0
//! ```
//!
//! Unknown keys are rejected. At most two `sweep.*` axes may be given; the
//! sweep is their Cartesian product, first axis outermost.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use dpwfl_core::channel::{Fading, GammaPolicy};
use dpwfl_core::simulator::Normalization;
use dpwfl_core::HyperParams;

/// Configuration problems, reported per field.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    /// Line without `=`.
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax {
        /// 1-based line number.
        line: usize,
        /// Offending text.
        text: String,
    },
    /// Key not recognised.
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey {
        /// 1-based line number.
        line: usize,
        /// Key.
        key: String,
    },
    /// Value failed to parse or validate.
    #[error("field `{key}`: {message}")]
    Field {
        /// Key.
        key: String,
        /// What went wrong.
        message: String,
    },
    /// More than two sweep axes or a repeated axis.
    #[error("sweep: {0}")]
    Sweep(String),
    /// Could not read the file.
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

fn field_err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { key: key.to_string(), message: message.into() }
}

/// Experiment kind; at most one per invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    /// `privacy-curve`
    PrivacyCurve,
    /// `simulate`
    Simulate,
    /// `tradeoff`
    Tradeoff,
    /// `verify`
    Verify,
}

impl ExperimentKind {
    /// Subcommand name.
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::PrivacyCurve => "privacy-curve",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Tradeoff => "tradeoff",
            ExperimentKind::Verify => "verify",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "privacy-curve" => Ok(Self::PrivacyCurve),
            "simulate" => Ok(Self::Simulate),
            "tradeoff" => Ok(Self::Tradeoff),
            "verify" => Ok(Self::Verify),
            other => Err(format!("unknown experiment `{other}`")),
        }
    }
}

/// Which task the simulator trains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// `0.5 ||theta - a||^2` with Gaussian anchors.
    Quadratic,
    /// Quadratic with Student-t anchors (heavy-tailed sample gradients).
    QuadraticHeavy,
    /// Logistic regression on synthetic features.
    Logistic,
}

impl LossKind {
    fn name(self) -> &'static str {
        match self {
            LossKind::Quadratic => "quadratic",
            LossKind::QuadraticHeavy => "quadratic_heavy",
            LossKind::Logistic => "logistic",
        }
    }
}

/// Scalar fields that may be swept.
pub const SWEEPABLE: &[&str] =
    &["n", "p", "q", "c", "D", "L", "eta", "sigma", "delta", "dataset_size", "dim", "gamma", "T"];

/// One sweep axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    /// Field name, one of [`SWEEPABLE`].
    pub key: String,
    /// Values in order.
    pub values: Vec<f64>,
}

/// Everything one invocation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Declared experiment kind, checked against the subcommand.
    pub experiment: Option<ExperimentKind>,
    /// Scalar hyper-parameters.
    pub params: HyperParams,
    /// Alignment policy.
    pub gamma_policy: GammaPolicy,
    /// Fading model.
    pub fading: Fading,
    /// Task.
    pub loss: LossKind,
    /// Anchor scale of the quadratic tasks.
    pub anchor_spread: f64,
    /// Student-t degrees of freedom for `quadratic_heavy`.
    pub anchor_dof: f64,
    /// Feature radius of the logistic task.
    pub logistic_radius: f64,
    /// Optional dataset CSV to load instead of generating data.
    pub dataset: Option<PathBuf>,
    /// `theta_0`, broadcast when a single value is given.
    pub initial: Vec<f64>,
    /// Update divisor.
    pub normalization: Normalization,
    /// Project iterates onto the diameter-`D` ball.
    pub projection: bool,
    /// Rounds `T`.
    pub rounds: usize,
    /// Base seed.
    pub seed: u64,
    /// Training replicates per sweep point (seeds `seed .. seed + replicates`).
    pub replicates: usize,
    /// Rényi orders for `verify`.
    pub alphas: Vec<f64>,
    /// Alignment factors for `verify`.
    pub gammas: Vec<f64>,
    /// `(p, q)` pairs for `verify`.
    pub sampling: Vec<(f64, f64)>,
    /// Rényi order for `tradeoff`.
    pub tradeoff_alpha: f64,
    /// Target epsilons for `tradeoff`.
    pub eps_targets: Vec<f64>,
    /// Sweep axes (at most two).
    pub sweep: Vec<SweepAxis>,
    /// Output directory.
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            params: HyperParams::default(),
            gamma_policy: GammaPolicy::Constant(1.0),
            fading: Fading::default(),
            loss: LossKind::Quadratic,
            anchor_spread: 1.0,
            anchor_dof: 2.0,
            logistic_radius: 2.0,
            dataset: None,
            initial: vec![0.0],
            normalization: Normalization::Verbatim,
            projection: false,
            rounds: 1000,
            seed: 0,
            replicates: 1,
            alphas: vec![1.5, 2.0, 4.0, 8.0],
            gammas: vec![0.5, 1.0, 2.0],
            sampling: vec![(1.0, 1.0), (1.0, 0.5), (0.5, 1.0), (0.5, 0.5)],
            tradeoff_alpha: 2.0,
            eps_targets: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            sweep: Vec::new(),
            output: PathBuf::from("out"),
        }
    }
}

/// Named presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Privacy curves for `D in {0.25, 0.5, 1.0}`.
    Fig1a,
    /// Privacy curves for `(p, q) in {1, 0.5}^2`.
    Fig1b,
}

impl ExperimentConfig {
    /// Base configuration of a preset.
    pub fn preset(preset: Preset) -> Self {
        let mut cfg = Self { rounds: 1000, ..Self::default() };
        cfg.sweep = match preset {
            Preset::Fig1a => vec![SweepAxis { key: "D".into(), values: vec![0.25, 0.5, 1.0] }],
            Preset::Fig1b => vec![
                SweepAxis { key: "p".into(), values: vec![1.0, 0.5] },
                SweepAxis { key: "q".into(), values: vec![1.0, 0.5] },
            ],
        };
        cfg
    }

    /// Read and parse a file on top of `self`.
    pub fn merge_file(self, path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        self.merge_str(&text)
    }

    /// Parse `text` on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::default().merge_str(text)
    }

    /// Parse `text` on top of `self`.
    pub fn merge_str(mut self, text: &str) -> Result<Self, ConfigError> {
        let mut sweep_seen = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: idx + 1, text: raw.to_string() })?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(axis) = key.strip_prefix("sweep.") {
                if !SWEEPABLE.contains(&axis) {
                    return Err(ConfigError::UnknownKey { line: idx + 1, key: key.to_string() });
                }
                if sweep_seen.is_empty() {
                    // a file's sweep replaces any preset sweep
                    self.sweep.clear();
                }
                if sweep_seen.contains(&axis.to_string()) {
                    return Err(ConfigError::Sweep(format!("axis `{axis}` given twice")));
                }
                sweep_seen.push(axis.to_string());
                let values = parse_list(key, value)?;
                if values.is_empty() {
                    return Err(field_err(key, "sweep needs at least one value"));
                }
                self.sweep.push(SweepAxis { key: axis.to_string(), values });
                continue;
            }
            self.set(key, value).map_err(|e| match e {
                SetError::Unknown => ConfigError::UnknownKey { line: idx + 1, key: key.to_string() },
                SetError::Bad(m) => field_err(key, m),
            })?;
        }
        self.validate()?;
        Ok(self)
    }

    /// Check cross-field constraints.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.sweep.len() > 2 {
            return Err(ConfigError::Sweep(format!("at most 2 axes allowed, got {}", self.sweep.len())));
        }
        for axis in &self.sweep {
            for &v in &axis.values {
                let mut probe = self.clone();
                probe.sweep.clear();
                probe.apply_axis(&axis.key, v).map_err(|m| field_err(&format!("sweep.{}", axis.key), m))?;
                probe.check_scalars().map_err(|m| field_err(&format!("sweep.{}", axis.key), m))?;
            }
        }
        self.check_scalars().map_err(|m| field_err("params", m))?;
        if self.replicates == 0 {
            return Err(field_err("replicates", "must be at least 1"));
        }
        if self.initial.is_empty() {
            return Err(field_err("initial", "needs at least one value"));
        }
        if self.initial.len() != 1 && self.initial.len() != self.params.dim {
            return Err(field_err(
                "initial",
                format!("has {} values but dim = {}", self.initial.len(), self.params.dim),
            ));
        }
        Ok(())
    }

    fn check_scalars(&self) -> Result<(), String> {
        self.params.validate().map_err(|e| e.to_string())?;
        self.fading.validate().map_err(|e| e.to_string())?;
        if self.rounds == 0 {
            return Err("T must be at least 1".into());
        }
        match self.gamma_policy {
            GammaPolicy::Constant(g) if !(g > 0.0 && g.is_finite()) => Err(format!("gamma must be positive, got {g}")),
            GammaPolicy::PowerLimited { power } if !(power > 0.0 && power.is_finite()) => {
                Err(format!("power must be positive, got {power}"))
            }
            _ => Ok(()),
        }
    }

    /// Set one swept scalar.
    pub fn apply_axis(&mut self, key: &str, v: f64) -> Result<(), String> {
        let as_count = |v: f64| -> Result<usize, String> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(format!("expected a positive integer, got {v}"))
            }
        };
        match key {
            "n" => self.params.devices = as_count(v)?,
            "p" => self.params.device_rate = v,
            "q" => self.params.batch_rate = v,
            "c" => self.params.clip_norm = v,
            "D" => self.params.diameter = v,
            "L" => self.params.smoothness = v,
            "eta" => self.params.step_size = v,
            "sigma" => self.params.noise_std = v,
            "delta" => self.params.delta = v,
            "dataset_size" => self.params.dataset_size = as_count(v)?,
            "dim" => self.params.dim = as_count(v)?,
            "gamma" => self.gamma_policy = GammaPolicy::Constant(v),
            "T" => self.rounds = as_count(v)?,
            other => return Err(format!("`{other}` is not sweepable")),
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), SetError> {
        let num = |v: &str| v.parse::<f64>().map_err(|e| SetError::Bad(format!("{v:?} is not a number ({e})")));
        let count = |v: &str| v.parse::<usize>().map_err(|e| SetError::Bad(format!("{v:?} is not a count ({e})")));
        match key {
            "experiment" => self.experiment = Some(value.parse().map_err(SetError::Bad)?),
            "n" | "p" | "q" | "c" | "D" | "L" | "eta" | "sigma" | "delta" | "dataset_size" | "dim" | "T" => {
                self.apply_axis(key, num(value)?).map_err(SetError::Bad)?
            }
            "seed" => self.seed = value.parse().map_err(|e| SetError::Bad(format!("{value:?} is not a u64 ({e})")))?,
            "replicates" => self.replicates = count(value)?,
            "gamma_policy" => self.gamma_policy = parse_policy(value).map_err(SetError::Bad)?,
            "fading" => self.fading = parse_fading(value).map_err(SetError::Bad)?,
            "loss" => {
                self.loss = match value {
                    "quadratic" => LossKind::Quadratic,
                    "quadratic_heavy" => LossKind::QuadraticHeavy,
                    "logistic" => LossKind::Logistic,
                    other => return Err(SetError::Bad(format!("unknown loss `{other}`"))),
                }
            }
            "anchor_spread" => self.anchor_spread = num(value)?,
            "anchor_dof" => self.anchor_dof = num(value)?,
            "logistic_radius" => self.logistic_radius = num(value)?,
            "dataset" => self.dataset = if value.is_empty() { None } else { Some(PathBuf::from(value)) },
            "initial" => self.initial = parse_list(key, value).map_err(|e| SetError::Bad(e.to_string()))?,
            "normalization" => {
                self.normalization = match value {
                    "verbatim" => Normalization::Verbatim,
                    "mean" => Normalization::MeanOfClipped,
                    other => return Err(SetError::Bad(format!("expected `verbatim` or `mean`, got `{other}`"))),
                }
            }
            "projection" => {
                self.projection =
                    value.parse().map_err(|_| SetError::Bad(format!("expected true/false, got `{value}`")))?
            }
            "alphas" => self.alphas = parse_list(key, value).map_err(|e| SetError::Bad(e.to_string()))?,
            "gammas" => self.gammas = parse_list(key, value).map_err(|e| SetError::Bad(e.to_string()))?,
            "sampling" => self.sampling = parse_pairs(value).map_err(SetError::Bad)?,
            "tradeoff_alpha" => self.tradeoff_alpha = num(value)?,
            "eps_targets" => self.eps_targets = parse_list(key, value).map_err(|e| SetError::Bad(e.to_string()))?,
            "output" => self.output = PathBuf::from(value),
            _ => return Err(SetError::Unknown),
        }
        Ok(())
    }

    /// Every sweep point as `(label, config)`, first axis outermost.
    pub fn sweep_points(&self) -> Vec<(String, ExperimentConfig)> {
        let mut points = vec![(String::new(), self.clone())];
        for axis in &self.sweep {
            points = points
                .into_iter()
                .flat_map(|(label, cfg)| {
                    axis.values.iter().map(move |&v| {
                        let mut next = cfg.clone();
                        next.apply_axis(&axis.key, v).expect("validated sweep value");
                        let part = format!("{}={}", axis.key, v);
                        (if label.is_empty() { part } else { format!("{label};{part}") }, next)
                    })
                })
                .collect();
        }
        for (_, cfg) in &mut points {
            cfg.sweep.clear();
        }
        points
    }

    /// `theta_0` expanded to `dim` entries.
    pub fn initial_theta(&self) -> Vec<f64> {
        if self.initial.len() == 1 {
            vec![self.initial[0]; self.params.dim]
        } else {
            self.initial.clone()
        }
    }

    /// Serialized form, parseable by [`ExperimentConfig::parse`].
    pub fn to_lines(&self) -> Vec<String> {
        let p = &self.params;
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let mut out = Vec::new();
        if let Some(kind) = self.experiment {
            out.push(format!("experiment = {}", kind.name()));
        }
        out.extend([
            format!("n = {}", p.devices),
            format!("p = {}", p.device_rate),
            format!("q = {}", p.batch_rate),
            format!("c = {}", p.clip_norm),
            format!("D = {}", p.diameter),
            format!("L = {}", p.smoothness),
            format!("eta = {}", p.step_size),
            format!("sigma = {}", p.noise_std),
            format!("delta = {}", p.delta),
            format!("dataset_size = {}", p.dataset_size),
            format!("dim = {}", p.dim),
            format!("T = {}", self.rounds),
            format!("seed = {}", self.seed),
            format!("replicates = {}", self.replicates),
            format!("gamma_policy = {}", PolicyDisplay(self.gamma_policy)),
            format!("fading = {}", FadingDisplay(self.fading)),
            format!("loss = {}", self.loss.name()),
            format!("anchor_spread = {}", self.anchor_spread),
            format!("anchor_dof = {}", self.anchor_dof),
            format!("logistic_radius = {}", self.logistic_radius),
            format!("dataset = {}", self.dataset.as_ref().map(|d| d.display().to_string()).unwrap_or_default()),
            format!("initial = {}", list(&self.initial)),
            format!(
                "normalization = {}",
                match self.normalization {
                    Normalization::Verbatim => "verbatim",
                    Normalization::MeanOfClipped => "mean",
                }
            ),
            format!("projection = {}", self.projection),
            format!("alphas = {}", list(&self.alphas)),
            format!("gammas = {}", list(&self.gammas)),
            format!(
                "sampling = {}",
                self.sampling.iter().map(|(p, q)| format!("{p}:{q}")).collect::<Vec<_>>().join(", ")
            ),
            format!("tradeoff_alpha = {}", self.tradeoff_alpha),
            format!("eps_targets = {}", list(&self.eps_targets)),
            format!("output = {}", self.output.display()),
        ]);
        for axis in &self.sweep {
            out.push(format!("sweep.{} = {}", axis.key, list(&axis.values)));
        }
        out
    }
}

enum SetError {
    Unknown,
    Bad(String),
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| field_err(key, format!("{s:?} is not a number ({e})"))))
        .collect()
}

fn parse_pairs(value: &str) -> Result<Vec<(f64, f64)>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (p, q) = s.split_once(':').ok_or_else(|| format!("expected `p:q`, got {s:?}"))?;
            let p = p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"))?;
            let q = q.trim().parse::<f64>().map_err(|e| format!("{q:?}: {e}"))?;
            Ok((p, q))
        })
        .collect()
}

fn parse_policy(value: &str) -> Result<GammaPolicy, String> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    match parts.as_slice() {
        ["constant", g] => Ok(GammaPolicy::Constant(g.parse().map_err(|e| format!("{g:?}: {e}"))?)),
        ["power_limited", p] => Ok(GammaPolicy::PowerLimited { power: p.parse().map_err(|e| format!("{p:?}: {e}"))? }),
        _ => Err(format!("expected `constant <gamma>` or `power_limited <P>`, got {value:?}")),
    }
}

fn parse_fading(value: &str) -> Result<Fading, String> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    let f = |s: &str| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
    match parts.as_slice() {
        ["rayleigh", scale, floor] => Ok(Fading::Rayleigh { scale: f(scale)?, floor: f(floor)? }),
        ["fixed", h] => Ok(Fading::Fixed(f(h)?)),
        _ => Err(format!("expected `rayleigh <scale> <floor>` or `fixed <gain>`, got {value:?}")),
    }
}

struct PolicyDisplay(GammaPolicy);

impl fmt::Display for PolicyDisplay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            GammaPolicy::Constant(g) => write!(f, "constant {g}"),
            GammaPolicy::PowerLimited { power } => write!(f, "power_limited {power}"),
        }
    }
}

struct FadingDisplay(Fading);

impl fmt::Display for FadingDisplay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Fading::Rayleigh { scale, floor } => write!(f, "rayleigh {scale} {floor}"),
            Fading::Fixed(h) => write!(f, "fixed {h}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_desk_setting() {
        let cfg = ExperimentConfig::default();
        let p = &cfg.params;
        assert_eq!((p.device_rate, p.batch_rate, p.clip_norm, p.diameter), (1.0, 1.0, 2.0, 0.5));
        assert_eq!((p.smoothness, p.noise_std, p.dataset_size, p.step_size), (1.0, 10.0, 8, 0.1));
        assert_eq!((p.devices, p.delta), (10, 1e-5));
        assert_eq!(cfg.gamma_policy, GammaPolicy::Constant(1.0));
    }

    #[test]
    fn round_trip_through_text() {
        let mut cfg = ExperimentConfig::preset(Preset::Fig1b);
        cfg.gamma_policy = GammaPolicy::PowerLimited { power: 3.5 };
        cfg.fading = Fading::Fixed(0.7);
        cfg.params.delta = 1e-7;
        cfg.normalization = Normalization::MeanOfClipped;
        let text = cfg.to_lines().join("\n");
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = ExperimentConfig::parse("# c\nsigma = 3\nfoo = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: 3, ref key } if key == "foo"));
    }

    #[test]
    fn bad_value_names_field() {
        let err = ExperimentConfig::parse("p = 1.5").unwrap_err();
        assert!(err.to_string().contains("device_rate"), "{err}");
        let err = ExperimentConfig::parse("sigma = abc").unwrap_err();
        assert!(matches!(err, ConfigError::Field { ref key, .. } if key == "sigma"));
        let err = ExperimentConfig::parse("sweep.q = 1, 2").unwrap_err();
        assert!(matches!(err, ConfigError::Field { ref key, .. } if key == "sweep.q"));
    }

    #[test]
    fn at_most_two_axes() {
        let err = ExperimentConfig::parse("sweep.p = 1\nsweep.q = 1\nsweep.D = 1").unwrap_err();
        assert!(matches!(err, ConfigError::Sweep(_)));
    }

    #[test]
    fn sweep_is_cartesian_first_axis_outermost() {
        let cfg = ExperimentConfig::preset(Preset::Fig1b);
        let labels: Vec<String> = cfg.sweep_points().into_iter().map(|(l, _)| l).collect();
        assert_eq!(labels, ["p=1;q=1", "p=1;q=0.5", "p=0.5;q=1", "p=0.5;q=0.5"]);
    }
}
