//! Experiment runners. Each returns its artifacts as bytes, so a run is a pure
//! function of the configuration.

use anyhow::{Context, Result};
use rayon::prelude::*;

use dpwfl_core::accountant::{self, LedgerRow, PrivacyLedger};
use dpwfl_core::channel::{draw_round, GammaPolicy};
use dpwfl_core::diagnostics::{self, BoundReport, LossProfile, TradeoffForm};
use dpwfl_core::losses::{
    make_logistic, make_quadratic, AnchorDistribution, Dataset, Logistic, LossConstants, LossModel, Quadratic, Sample,
};
use dpwfl_core::rng::{stream, Purpose};
use dpwfl_core::simulator::{run_training, select_devices, TrainingConfig, TrainingTrace};
use dpwfl_core::verifier::{self, CaseResult, VerifierCase};
use dpwfl_core::HyperParams;

use crate::config::{ExperimentConfig, ExperimentKind, LossKind};
use crate::formats;

/// A named output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    /// File name inside the output directory.
    pub name: String,
    /// Contents.
    pub bytes: Vec<u8>,
}

/// Result of one subcommand.
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Files to write.
    pub artifacts: Vec<Artifact>,
    /// In-regime verifier failures (always 0 for other subcommands).
    pub in_regime_failures: usize,
}

/// Run `kind` on `cfg`.
pub fn run(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<RunOutput> {
    if let Some(declared) = cfg.experiment {
        anyhow::ensure!(
            declared == kind,
            "config declares experiment `{}` but `{}` was requested",
            declared.name(),
            kind.name()
        );
    }
    let header = header_lines(kind, cfg);
    let mut failures = 0;
    let artifacts = match kind {
        ExperimentKind::PrivacyCurve => privacy_curve_artifacts(cfg, &header)?,
        ExperimentKind::Simulate => simulate_artifacts(cfg, &header)?,
        ExperimentKind::Tradeoff => tradeoff_artifacts(cfg, &header)?,
        ExperimentKind::Verify => {
            let results = verify(cfg)?;
            failures = results.iter().filter(|r| formats::verdict_label(r) == "FAIL").count();
            vec![table("verdicts.csv", &header, formats::VERDICT_HEADER, formats::verdict_table(&results))?]
        }
    };
    Ok(RunOutput { artifacts, in_regime_failures: failures })
}

fn header_lines(kind: ExperimentKind, cfg: &ExperimentConfig) -> Vec<String> {
    let mut lines = vec![format!("dpwfl {} {}", kind.name(), env!("CARGO_PKG_VERSION"))];
    lines.extend(cfg.to_lines());
    lines
}

fn table(name: &str, comments: &[String], header: &[&str], rows: Vec<Vec<String>>) -> Result<Artifact> {
    let mut bytes = Vec::new();
    formats::write_table(&mut bytes, comments, header, rows)?;
    Ok(Artifact { name: name.to_string(), bytes })
}

fn suffixed(base: &str, index: usize, multi: bool) -> String {
    if multi {
        let (stem, ext) = base.rsplit_once('.').expect("artifact names carry an extension");
        format!("{stem}_{index}.{ext}")
    } else {
        base.to_string()
    }
}

/// Training task selected by the config.
#[derive(Debug, Clone)]
pub enum Task {
    /// Quadratic loss.
    Quadratic(Quadratic),
    /// Logistic loss.
    Logistic(Logistic),
}

impl LossModel for Task {
    fn dim(&self) -> usize {
        match self {
            Task::Quadratic(m) => m.dim(),
            Task::Logistic(m) => m.dim(),
        }
    }
    fn dataset(&self) -> &Dataset {
        match self {
            Task::Quadratic(m) => m.dataset(),
            Task::Logistic(m) => m.dataset(),
        }
    }
    fn sample_loss(&self, theta: &[f64], sample: &Sample) -> f64 {
        match self {
            Task::Quadratic(m) => m.sample_loss(theta, sample),
            Task::Logistic(m) => m.sample_loss(theta, sample),
        }
    }
    fn sample_gradient(&self, theta: &[f64], sample: &Sample, out: &mut [f64]) {
        match self {
            Task::Quadratic(m) => m.sample_gradient(theta, sample, out),
            Task::Logistic(m) => m.sample_gradient(theta, sample, out),
        }
    }
    fn constants(&self) -> &LossConstants {
        match self {
            Task::Quadratic(m) => m.constants(),
            Task::Logistic(m) => m.constants(),
        }
    }
}

/// Load or generate the task for `cfg`, drawing synthetic data from `seed`.
pub fn build_task(cfg: &ExperimentConfig, seed: u64) -> Result<Task> {
    let p = &cfg.params;
    if let Some(path) = &cfg.dataset {
        let file = std::fs::File::open(path).with_context(|| format!("opening dataset {}", path.display()))?;
        let data = formats::read_dataset(file)?;
        return Ok(match cfg.loss {
            LossKind::Quadratic | LossKind::QuadraticHeavy => Task::Quadratic(Quadratic::from_dataset(data)?),
            LossKind::Logistic => {
                let radius = data
                    .devices()
                    .iter()
                    .flatten()
                    .map(|s| s.features.iter().map(|x| x * x).sum::<f64>().sqrt())
                    .fold(0.0, f64::max);
                Task::Logistic(Logistic::from_dataset(data, radius)?)
            }
        });
    }
    let mut rng = stream(seed, 0, Purpose::Data);
    Ok(match cfg.loss {
        LossKind::Quadratic => Task::Quadratic(make_quadratic(
            p.dim,
            p.devices,
            p.dataset_size,
            AnchorDistribution::Gaussian { spread: cfg.anchor_spread },
            &mut rng,
        )?),
        LossKind::QuadraticHeavy => Task::Quadratic(make_quadratic(
            p.dim,
            p.devices,
            p.dataset_size,
            AnchorDistribution::StudentT { spread: cfg.anchor_spread, dof: cfg.anchor_dof },
            &mut rng,
        )?),
        LossKind::Logistic => {
            Task::Logistic(make_logistic(p.dim, p.devices, p.dataset_size, cfg.logistic_radius, &mut rng)?)
        }
    })
}

/// Bound inputs for `task` started at `theta0`. For the logistic task the
/// estimated `f*` is lowered to what gradient descent reaches from `theta0`.
pub fn loss_profile(task: &Task, theta0: &[f64]) -> Result<LossProfile> {
    let c = task.constants();
    let f_star = match task {
        Task::Quadratic(_) => c.f_star,
        Task::Logistic(m) => c.f_star.min(m.estimate_f_star(theta0, 500)),
    };
    Ok(LossProfile::new(task.loss(theta0), f_star, c.sigma_l, c.sigma_g)?)
}

/// Alignment factors over `cfg.rounds` rounds without training: the constant
/// policy directly, the power-limited one from seeded channel draws.
pub fn gamma_schedule(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    match cfg.gamma_policy {
        GammaPolicy::Constant(g) => Ok(vec![g; cfg.rounds]),
        policy => (0..cfg.rounds as u64)
            .map(|t| {
                let active = select_devices(&mut stream(cfg.seed, t, Purpose::Devices), &cfg.params);
                let round =
                    draw_round(&mut stream(cfg.seed, t, Purpose::Fading), &cfg.params, &active, policy, cfg.fading)?;
                Ok(round.gamma)
            })
            .collect(),
    }
}

/// One privacy curve.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyCurve {
    /// Sweep label, empty without a sweep.
    pub label: String,
    /// Parameters of this curve.
    pub params: HyperParams,
    /// Crossover round for a constant alignment factor.
    pub crossover: Option<u64>,
    /// Ledger replay; `rows[t - 1]` is the state after `t` rounds.
    pub rows: Vec<LedgerRow>,
    /// Plain composition `(eps, delta)` epsilon after each round.
    pub baseline: Vec<f64>,
}

impl PrivacyCurve {
    /// `eps_DP(t)` for `t = 1..T`.
    pub fn eps_dp(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.eps_dp).collect()
    }
}

/// Curves for every sweep point, in sweep order.
pub fn privacy_curves(cfg: &ExperimentConfig) -> Result<Vec<PrivacyCurve>> {
    cfg.sweep_points()
        .into_par_iter()
        .map(|(label, point)| {
            let params = point.params.clone();
            params.validate_for_accounting()?;
            let ledger = PrivacyLedger::from_gammas(gamma_schedule(&point)?)?;
            let rows = accountant::ledger_rows(&params, &ledger)?;
            let mut prefix = PrivacyLedger::new();
            let mut baseline = Vec::with_capacity(ledger.len());
            for &g in ledger.gammas() {
                prefix.push(g)?;
                baseline.push(accountant::baseline_composition_dp(&params, &prefix)?);
            }
            let crossover = match point.gamma_policy {
                GammaPolicy::Constant(g) => Some(accountant::crossover_round(&params, g)?),
                GammaPolicy::PowerLimited { .. } => None,
            };
            Ok(PrivacyCurve { label, params, crossover, rows, baseline })
        })
        .collect()
}

fn privacy_curve_artifacts(cfg: &ExperimentConfig, header: &[String]) -> Result<Vec<Artifact>> {
    let curves = privacy_curves(cfg)?;
    let mut comments = header.to_vec();
    let mut rows = Vec::new();
    for (k, curve) in curves.iter().enumerate() {
        let crossover = curve.crossover.map(|c| c.to_string()).unwrap_or_else(|| "n/a".into());
        let converged = curve.rows.last().map(|r| r.eps_dp).unwrap_or(f64::NAN);
        comments.push(format!("series {k}: {} crossover={crossover} eps_dp(T)={converged}", curve.label));
        for (row, base) in curve.rows.iter().zip(&curve.baseline) {
            rows.push(vec![
                k.to_string(),
                curve.label.clone(),
                (row.t + 1).to_string(),
                row.eps_dp.to_string(),
                row.eps_rdp_alpha2.to_string(),
                base.to_string(),
            ]);
        }
    }
    Ok(vec![table("privacy_curve.csv", &comments, formats::CURVE_HEADER, rows)?])
}

/// One seeded training run with its accounting and bound report.
#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    /// Seed used for data and training.
    pub seed: u64,
    /// The task trained on.
    pub task: Task,
    /// Per-round trace.
    pub trace: TrainingTrace,
    /// Recorded alignment factors.
    pub ledger: PrivacyLedger,
    /// Evaluated bound with the measured minimum attached.
    pub report: BoundReport,
}

impl SimulationOutcome {
    /// `(eps, delta)` epsilon of the run, infinite without accountable noise.
    pub fn eps_dp(&self, params: &HyperParams) -> f64 {
        if params.validate_for_accounting().is_err() {
            return f64::INFINITY;
        }
        accountant::dp_epsilon(params, &self.ledger).unwrap_or(f64::INFINITY)
    }
}

/// Train once at `seed` (synthetic data is drawn from the same seed).
pub fn simulate_once(cfg: &ExperimentConfig, seed: u64) -> Result<SimulationOutcome> {
    let task = build_task(cfg, seed)?;
    let theta0 = cfg.initial_theta();
    let training = TrainingConfig {
        rounds: cfg.rounds,
        initial: Some(theta0.clone()),
        policy: cfg.gamma_policy,
        fading: cfg.fading,
        normalization: cfg.normalization,
        project: cfg.projection,
    };
    let (trace, ledger) = run_training(&cfg.params, &task, &training, seed)?;
    let profile = loss_profile(&task, &theta0)?;
    let report = diagnostics::bound_components(&cfg.params, &profile, ledger.gammas())?.with_trace(&trace);
    Ok(SimulationOutcome { seed, task, trace, ledger, report })
}

/// All replicates of one sweep point.
#[derive(Debug, Clone)]
pub struct PointRuns {
    /// Sweep label.
    pub label: String,
    /// Configuration of the point.
    pub config: ExperimentConfig,
    /// Replicates at seeds `seed, seed + 1, ..`.
    pub runs: Vec<SimulationOutcome>,
}

impl PointRuns {
    /// Median over replicates of `min_t ||grad f(theta_t)||`.
    pub fn median_min_grad_norm(&self) -> f64 {
        diagnostics::median(&self.runs.iter().map(|r| r.trace.min_grad_norm()).collect::<Vec<_>>())
    }

    /// Mean over replicates of `min_t ||grad f(theta_t)||`.
    pub fn mean_min_grad_norm(&self) -> f64 {
        diagnostics::mean(&self.runs.iter().map(|r| r.trace.min_grad_norm()).collect::<Vec<_>>())
    }

    /// Median over replicates of `f(theta_T)`.
    pub fn median_final_loss(&self) -> f64 {
        diagnostics::median(&self.runs.iter().map(|r| r.trace.final_loss).collect::<Vec<_>>())
    }
}

/// Every sweep point times `cfg.replicates` seeds, run in parallel and
/// returned in sweep order.
pub fn simulate_sweep(cfg: &ExperimentConfig) -> Result<Vec<PointRuns>> {
    let points = cfg.sweep_points();
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|k| (0..cfg.replicates as u64).map(move |r| (k, cfg.seed.wrapping_add(r))))
        .collect();
    let outcomes: Vec<SimulationOutcome> =
        jobs.par_iter().map(|&(k, seed)| simulate_once(&points[k].1, seed)).collect::<Result<_>>()?;
    let mut outcomes = outcomes.into_iter();
    Ok(points
        .into_iter()
        .map(|(label, config)| PointRuns { label, config, runs: outcomes.by_ref().take(cfg.replicates).collect() })
        .collect())
}

/// Ledger rows; without accountable noise the epsilon columns are infinite
/// and `phi` is infinite when clipping is disabled.
fn ledger_rows_lenient(params: &HyperParams, ledger: &PrivacyLedger) -> Result<Vec<LedgerRow>> {
    if params.validate_for_accounting().is_ok() {
        return Ok(accountant::ledger_rows(params, ledger)?);
    }
    // phi does not depend on sigma; evaluate it at unit noise when possible
    let probe = HyperParams { noise_std: 1.0, ..params.clone() };
    let mut rows = match probe.validate_for_accounting() {
        Ok(()) => accountant::ledger_rows(&probe, ledger)?,
        Err(_) => {
            let mut sum = 0.0;
            ledger
                .gammas()
                .iter()
                .enumerate()
                .map(|(t, &gamma)| {
                    sum += gamma * gamma;
                    LedgerRow {
                        t,
                        gamma,
                        gamma_sq_sum: sum,
                        phi: f64::INFINITY,
                        gamma_total: sum,
                        eps_rdp_alpha2: 0.0,
                        eps_dp: 0.0,
                    }
                })
                .collect()
        }
    };
    for row in &mut rows {
        row.eps_rdp_alpha2 = f64::INFINITY;
        row.eps_dp = f64::INFINITY;
    }
    Ok(rows)
}

fn simulate_artifacts(cfg: &ExperimentConfig, header: &[String]) -> Result<Vec<Artifact>> {
    let points = simulate_sweep(cfg)?;
    let multi = points.len() > 1;
    let mut artifacts = Vec::new();
    let mut summary = Vec::new();
    for (k, point) in points.iter().enumerate() {
        let first = &point.runs[0];
        let mut comments = header.to_vec();
        if multi {
            comments.push(format!("sweep point {k}: {}", point.label));
        }
        comments.push(format!("replicate seed = {}", first.seed));
        artifacts.push(table(
            &suffixed("trace.csv", k, multi),
            &comments,
            formats::TRACE_HEADER,
            formats::trace_table(&first.trace),
        )?);
        let rows = ledger_rows_lenient(&point.config.params, &first.ledger)?;
        artifacts.push(table(
            &suffixed("ledger.csv", k, multi),
            &comments,
            formats::LEDGER_HEADER,
            formats::ledger_table(&rows),
        )?);
        artifacts.push(table(
            &suffixed("bound.csv", k, multi),
            &comments,
            formats::BOUND_HEADER,
            vec![formats::bound_row(&first.report)],
        )?);
        let mut bytes = Vec::new();
        formats::write_dataset(&mut bytes, &comments, first.task.dataset())?;
        artifacts.push(Artifact { name: suffixed("dataset.csv", k, multi), bytes });

        let r = &first.report;
        summary.push(vec![
            point.label.clone(),
            point.runs.len().to_string(),
            point.median_min_grad_norm().to_string(),
            point.mean_min_grad_norm().to_string(),
            point.median_final_loss().to_string(),
            first.eps_dp(&point.config.params).to_string(),
            r.c1.to_string(),
            r.c2.to_string(),
            r.c3.to_string(),
            r.c4.to_string(),
            r.total.to_string(),
        ]);
    }
    artifacts.push(table("summary.csv", header, formats::SUMMARY_HEADER, summary)?);
    Ok(artifacts)
}

/// One trade-off evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffRow {
    /// Sweep label.
    pub label: String,
    /// Rényi order.
    pub alpha: f64,
    /// Target RDP epsilon.
    pub eps: f64,
    /// `sigma` attaining `eps` at order `alpha`: `sqrt(2 alpha p q c^2 Gamma / eps)`.
    pub matched_sigma: f64,
    /// Components `C1..C3`.
    pub c: [f64; 3],
    /// Privacy terms.
    pub terms: diagnostics::PrivacyTerms,
    /// `C1 + C2 + C3 + terms`.
    pub bound: f64,
}

/// Trade-off rows for every sweep point and target epsilon.
pub fn tradeoff(cfg: &ExperimentConfig) -> Result<Vec<TradeoffRow>> {
    let per_point: Vec<Vec<TradeoffRow>> = cfg
        .sweep_points()
        .into_par_iter()
        .map(|(label, point)| {
            let params = &point.params;
            params.validate_for_accounting()?;
            let task = build_task(&point, point.seed)?;
            let profile = loss_profile(&task, &point.initial_theta())?;
            let gammas = gamma_schedule(&point)?;
            let report = diagnostics::bound_components(params, &profile, &gammas)?;
            let gamma_total = PrivacyLedger::from_gammas(gammas.iter().copied())?.gamma_total(params)?;
            let pq = params.device_rate * params.batch_rate;
            let c = params.clip_norm;
            point
                .eps_targets
                .iter()
                .map(|&eps| {
                    let alpha = point.tradeoff_alpha;
                    let terms = diagnostics::privacy_terms(params, &gammas, alpha, eps, TradeoffForm::Stated)?;
                    Ok(TradeoffRow {
                        label: label.clone(),
                        alpha,
                        eps,
                        matched_sigma: (2.0 * alpha * pq * c * c * gamma_total / eps).sqrt(),
                        c: [report.c1, report.c2, report.c3],
                        bound: report.c1 + report.c2 + report.c3 + terms.sum(),
                        terms,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_point.into_iter().flatten().collect())
}

fn tradeoff_artifacts(cfg: &ExperimentConfig, header: &[String]) -> Result<Vec<Artifact>> {
    let rows = tradeoff(cfg)?
        .into_iter()
        .map(|r| {
            vec![
                r.label,
                r.alpha.to_string(),
                r.eps.to_string(),
                r.matched_sigma.to_string(),
                r.c[0].to_string(),
                r.c[1].to_string(),
                r.c[2].to_string(),
                r.terms.linear.to_string(),
                r.terms.root.to_string(),
                r.bound.to_string(),
            ]
        })
        .collect();
    Ok(vec![table("tradeoff.csv", header, formats::TRADEOFF_HEADER, rows)?])
}

/// Verifier sweep over `sampling x gammas x alphas`.
pub fn verify(cfg: &ExperimentConfig) -> Result<Vec<CaseResult>> {
    cfg.params.validate_for_accounting()?;
    let mut cases = Vec::new();
    for &(p, q) in &cfg.sampling {
        for &gamma in &cfg.gammas {
            for &alpha in &cfg.alphas {
                cases.push(VerifierCase { alpha, gamma, device_rate: p, batch_rate: q });
            }
        }
    }
    cases.into_par_iter().map(|case| Ok(verifier::run_case(&cfg.params, case)?)).collect()
}
