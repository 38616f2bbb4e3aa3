//! Machine-readable reports and plot-ready CSV data.
//!
//! Every CSV has a header row and rectangular shape; every JSON report embeds
//! the configuration fingerprint. Wall-clock quantities live in dedicated
//! fields so deterministic comparisons can ignore them.

use anyhow::{Context, Result};
use serde::Serialize;
use std::path::Path;

use braggsynth::bragg::RobustnessReport;
use braggsynth::synth::SynthesisReport;

/// Write one rectangular CSV with a header row.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            anyhow::bail!(
                "ragged CSV row: {} fields, header has {}",
                row.len(),
                header.len()
            );
        }
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn fmt_float(v: f64) -> String {
    format!("{v:.12e}")
}

/// Synthesis outcome serialized into reports.
#[derive(Debug, Serialize)]
pub struct SynthesisSummary {
    pub seed: u64,
    pub converged: bool,
    pub final_error: f64,
    pub iterations_stage1: usize,
    pub iterations_stage2: usize,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub stage2_error_drift: f64,
    pub max_u: f64,
    pub pulse_area: f64,
    pub wall_clock_seconds: f64,
}

impl SynthesisSummary {
    pub fn from_report(seed: u64, report: &SynthesisReport) -> Self {
        let dt = report.final_pulse.grid().dt();
        let max_u = report
            .final_pulse
            .values()
            .iter()
            .fold(f64::MIN, |a, v| a.max(*v));
        let area: f64 = report.final_pulse.values().iter().sum::<f64>() * dt;
        Self {
            seed,
            converged: report.converged,
            final_error: report.final_error,
            iterations_stage1: report.iterations_stage1,
            iterations_stage2: report.iterations_stage2,
            initial_energy: *report.energy_trace.first().unwrap_or(&0.0),
            final_energy: *report.energy_trace.last().unwrap_or(&0.0),
            stage2_error_drift: report.stage2_error_drift,
            max_u,
            pulse_area: area,
            wall_clock_seconds: report.wall_clock_seconds,
        }
    }
}

/// Grid-verification outcome serialized into reports; mirrors the summary
/// rows printed for robustness studies.
#[derive(Debug, Serialize, Clone)]
pub struct GridSummary {
    pub max_error: f64,
    pub mean_error: f64,
    pub min_error: f64,
    pub max_u: f64,
    pub mean_u: f64,
    pub max_du: f64,
    pub mean_du: f64,
    pub clock_minutes: f64,
}

impl From<&RobustnessReport> for GridSummary {
    fn from(r: &RobustnessReport) -> Self {
        Self {
            max_error: r.max_error,
            mean_error: r.mean_error,
            min_error: r.min_error,
            max_u: r.max_u,
            mean_u: r.mean_u,
            max_du: r.max_du,
            mean_du: r.mean_du,
            clock_minutes: r.clock_minutes,
        }
    }
}

/// Print the robustness summary with the standard row labels.
pub fn print_grid_summary(label: &str, g: &GridSummary) {
    println!("--- {label} ---");
    println!("max Error              {:.3}", g.max_error);
    println!("mean Error             {:.3}", g.mean_error);
    println!("min Error              {:.2e}", g.min_error);
    println!("max u_k/omega_r        {:.2}", g.max_u);
    println!("mean u_k/omega_r       {:.2}", g.mean_u);
    println!("max |du_k|/omega_r     {:.2}", g.max_du);
    println!("mean |du_k|/omega_r    {:.3}", g.mean_du);
    println!("Clock (min)            {:.2}", g.clock_minutes);
}

/// Write the top-level JSON report.
pub fn write_report<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(report).context("serializing report")?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
