//! CSV artifacts.
//!
//! Every file starts with `#` comment lines (the echoed configuration) and a
//! mandatory header row. Floats use Rust's `Display`, which is the shortest
//! decimal that round-trips.

use std::io::{Read, Write};

use anyhow::{bail, Context, Result};
use dpwfl_core::accountant::{LedgerRow, PrivacyLedger};
use dpwfl_core::diagnostics::BoundReport;
use dpwfl_core::losses::{Dataset, Sample};
use dpwfl_core::simulator::TrainingTrace;
use dpwfl_core::verifier::{CaseResult, Verdict};

/// Ledger columns.
pub const LEDGER_HEADER: &[&str] = &["t", "gamma", "gamma_sq_sum", "phi", "Gamma", "eps_rdp_alpha2", "eps_dp"];
/// Trace columns.
pub const TRACE_HEADER: &[&str] = &["t", "loss", "true_grad_norm", "grad_estimate_norm", "clipped_count", "gamma"];
/// Bound report columns.
pub const BOUND_HEADER: &[&str] = &["T", "C1", "C2", "C3", "C4", "total", "measured_min_grad_norm"];
/// Verifier columns.
pub const VERDICT_HEADER: &[&str] = &["alpha", "gamma", "p", "q", "numeric", "bound", "margin", "verdict"];
/// Privacy curve columns.
pub const CURVE_HEADER: &[&str] = &["series", "sweep", "t", "eps_dp", "eps_rdp_alpha2", "baseline_eps_dp"];
/// Trade-off columns.
pub const TRADEOFF_HEADER: &[&str] =
    &["sweep", "alpha", "eps", "matched_sigma", "C1", "C2", "C3", "privacy_linear", "privacy_root", "bound"];
/// Per-sweep-point summary of `simulate`.
pub const SUMMARY_HEADER: &[&str] = &[
    "sweep",
    "replicates",
    "median_min_grad_norm",
    "mean_min_grad_norm",
    "median_final_loss",
    "eps_dp",
    "C1",
    "C2",
    "C3",
    "C4",
    "total",
];

/// Header comments plus a CSV table.
pub fn write_table<W: Write>(
    mut out: W,
    comments: &[String],
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    for line in comments {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn f(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map(f).unwrap_or_default()
}

/// Ledger rows.
pub fn ledger_table(rows: &[LedgerRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.t.to_string(),
                f(r.gamma),
                f(r.gamma_sq_sum),
                f(r.phi),
                f(r.gamma_total),
                f(r.eps_rdp_alpha2),
                f(r.eps_dp),
            ]
        })
        .collect()
}

/// Trace rows, one per round.
pub fn trace_table(trace: &TrainingTrace) -> Vec<Vec<String>> {
    trace
        .records
        .iter()
        .map(|r| {
            vec![
                r.t.to_string(),
                f(r.loss),
                f(r.true_grad_norm),
                f(r.grad_estimate_norm),
                r.clipped_count.to_string(),
                f(r.gamma),
            ]
        })
        .collect()
}

/// One bound report row.
pub fn bound_row(r: &BoundReport) -> Vec<String> {
    vec![r.rounds.to_string(), f(r.c1), f(r.c2), f(r.c3), f(r.c4), f(r.total), opt(r.measured_min_grad_norm)]
}

/// Verdict label: out-of-regime failures are informational.
pub fn verdict_label(r: &CaseResult) -> &'static str {
    match (r.check.verdict, r.check.in_regime) {
        (Verdict::Pass, _) => "PASS",
        (Verdict::Fail, true) => "FAIL",
        (Verdict::Fail, false) => "INFO",
    }
}

/// Verifier rows.
pub fn verdict_table(results: &[CaseResult]) -> Vec<Vec<String>> {
    results
        .iter()
        .map(|r| {
            vec![
                f(r.case.alpha),
                f(r.case.gamma),
                f(r.case.device_rate),
                f(r.case.batch_rate),
                f(r.check.numeric),
                f(r.check.bound),
                f(r.check.margin),
                verdict_label(r).to_string(),
            ]
        })
        .collect()
}

/// Read the `gamma` column of a ledger CSV back into a ledger.
pub fn read_ledger<R: Read>(input: R) -> Result<PrivacyLedger> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != LEDGER_HEADER {
        bail!("ledger header mismatch: {:?}", headers);
    }
    let mut ledger = PrivacyLedger::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let t: usize = rec[0].parse().with_context(|| format!("row {i}: bad t"))?;
        if t != i {
            bail!("row {i}: expected t = {i}, found {t}");
        }
        let gamma: f64 = rec[1].parse().with_context(|| format!("row {i}: bad gamma"))?;
        ledger.push(gamma)?;
    }
    Ok(ledger)
}

/// Dataset as `device,label,x0,x1,..`.
pub fn write_dataset<W: Write>(out: W, comments: &[String], data: &Dataset) -> Result<()> {
    let mut header = vec!["device".to_string(), "label".to_string()];
    header.extend((0..data.dim()).map(|j| format!("x{j}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = data.devices().iter().enumerate().flat_map(|(i, local)| {
        local.iter().map(move |s| {
            let mut row = vec![i.to_string(), f(s.label)];
            row.extend(s.features.iter().copied().map(f));
            row
        })
    });
    write_table(out, comments, &header_refs, rows)
}

/// Inverse of [`write_dataset`]. Devices must appear as `0..n` in order.
pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "device" || &headers[1] != "label" {
        bail!("dataset header must start with `device,label,x0`");
    }
    let dim = headers.len() - 2;
    let mut devices: Vec<Vec<Sample>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let device: usize = rec[0].parse().with_context(|| format!("row {i}: bad device id"))?;
        if device == devices.len() {
            devices.push(Vec::new());
        } else if device + 1 != devices.len() {
            bail!("row {i}: device ids must be contiguous and ascending, found {device}");
        }
        let label: f64 = rec[1].parse().with_context(|| format!("row {i}: bad label"))?;
        let features = (0..dim)
            .map(|j| rec[j + 2].parse::<f64>().with_context(|| format!("row {i}: bad x{j}")))
            .collect::<Result<Vec<_>>>()?;
        devices.last_mut().expect("pushed above").push(Sample { label, features });
    }
    Ok(Dataset::new(devices)?)
}
