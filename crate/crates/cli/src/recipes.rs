//! The five experiment recipes: one-shot synthesis, warm-started ladder,
//! grid verification, filter sweep, and the expansion-versus-sampling
//! comparison.
//!
//! Non-convergent runs are reported per seed with partial artifacts; a
//! nonzero exit is reserved for configuration and IO failures.

use anyhow::{Context, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};

use braggsynth::bragg::{self, BraggConfig};
use braggsynth::synth::{self, SynthesisReport};
use braggsynth::DomainMode;
use ndarray::Array1;

use crate::config::{config_fingerprint, model_fingerprint, ExperimentConfig, Recipe};
use crate::pulsefile::PulseFile;
use crate::report::{
    fmt_float, print_grid_summary, write_csv, write_report, GridSummary, SynthesisSummary,
};

#[derive(Debug, Serialize)]
struct TopReport<R: Serialize> {
    recipe: String,
    fingerprint: String,
    config: ExperimentConfig,
    results: R,
}

fn ensure_outdir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn synthesize_one(
    bragg_cfg: &BraggConfig,
    solver: &braggsynth::SolverConfig,
    seed: u64,
) -> Result<SynthesisReport> {
    let model = bragg::build_design_model(bragg_cfg)?;
    let psi0 = bragg::initial_state(&model)?;
    let psi_t = bragg::target_state(bragg_cfg, &model)?;
    let grid = bragg_cfg.grid()?;
    let pulse0 = synth::random_initial_pulse(
        grid,
        &Array1::from_elem(1, 0.0),
        &Array1::from_elem(1, bragg_cfg.amplitude_bound),
        seed,
    )?;
    Ok(synth::synthesize(&model, &pulse0, &psi0, &psi_t, solver)?)
}

fn write_trace_csvs(dir: &Path, tag: &str, report: &SynthesisReport) -> Result<()> {
    let fidelity_rows: Vec<Vec<String>> = report
        .error_trace
        .iter()
        .zip(&report.surrogate_trace)
        .enumerate()
        .map(|(i, (e, s))| vec![i.to_string(), fmt_float(*e), fmt_float(*s)])
        .collect();
    write_csv(
        &dir.join(format!("fidelity_trace_{tag}.csv")),
        &["iteration", "error", "surrogate"],
        &fidelity_rows,
    )?;
    let energy_rows: Vec<Vec<String>> = report
        .energy_trace
        .iter()
        .enumerate()
        .map(|(i, e)| vec![i.to_string(), fmt_float(*e)])
        .collect();
    write_csv(
        &dir.join(format!("energy_trace_{tag}.csv")),
        &["iteration", "energy"],
        &energy_rows,
    )?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SynthResults {
    runs: Vec<SynthesisSummary>,
    nominal_errors: Vec<f64>,
}

/// One synthesis per seed at the configured design point.
pub fn run_synth(cfg: &ExperimentConfig) -> Result<()> {
    let dir = ensure_outdir(cfg)?;
    let bragg_cfg = cfg.bragg.to_core()?;
    let fp = model_fingerprint(&bragg_cfg);
    let mut runs = Vec::new();
    let mut nominal_errors = Vec::new();
    for &seed in &cfg.seeds {
        let solver = cfg.solver.to_core(seed);
        let report = synthesize_one(&bragg_cfg, &solver, seed)?;
        let tag = format!("seed{seed}");
        PulseFile::from_pulse(&report.final_pulse, &fp)?
            .write(&dir.join(format!("pulse_{tag}.pulse")))?;
        write_trace_csvs(&dir, &tag, &report)?;
        let nominal =
            bragg::simulate_signed(&report.final_pulse, 0.0, 1.0, bragg_cfg.n0, bragg_cfg.n_trunc())?;
        println!(
            "seed {seed}: converged={} error={:.3e} nominal signed error={:.3e} max_u={:.2}",
            report.converged,
            report.final_error,
            nominal,
            report.final_pulse.values().iter().fold(f64::MIN, |a, v| a.max(*v)),
        );
        runs.push(SynthesisSummary::from_report(seed, &report));
        nominal_errors.push(nominal);
    }
    let top = TopReport {
        recipe: Recipe::Robust.to_string(),
        fingerprint: config_fingerprint(cfg),
        config: cfg.clone(),
        results: SynthResults {
            runs,
            nominal_errors,
        },
    };
    write_report(&dir.join("report.json"), &top)
}

#[derive(Debug, Serialize)]
struct LadderRungSummary {
    rung: usize,
    max_u_mean: f64,
    max_u_var: f64,
    area_mean: f64,
    area_var: f64,
    energy_mean: f64,
    energy_var: f64,
    converged_seeds: usize,
}

#[derive(Debug, Serialize)]
struct LadderResults {
    per_seed: Vec<Vec<SynthesisSummary>>,
    rungs: Vec<LadderRungSummary>,
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / values.len() as f64;
    (mean, var)
}

/// Warm-started ladder to the configured target index, one ladder per seed.
pub fn run_ladder(cfg: &ExperimentConfig) -> Result<()> {
    let dir = ensure_outdir(cfg)?;
    let bragg_cfg = cfg.bragg.to_core()?;
    let n0_target = bragg_cfg.n0;
    let mut per_seed: Vec<Vec<SynthesisSummary>> = Vec::new();
    let mut convergence_rows: Vec<Vec<String>> = Vec::new();
    // reports[rung][seed]
    let mut by_rung: Vec<Vec<SynthesisReport>> = vec![Vec::new(); n0_target];
    for &seed in &cfg.seeds {
        let solver = cfg.solver.to_core(seed);
        let reports = synth::momentum_ladder(&bragg_cfg, n0_target, &solver)?;
        let mut summaries = Vec::new();
        for (i, report) in reports.iter().enumerate() {
            let rung = i + 1;
            let rung_cfg = BraggConfig {
                n0: rung,
                ..bragg_cfg.clone()
            };
            let fp = model_fingerprint(&rung_cfg);
            PulseFile::from_pulse(&report.final_pulse, &fp)?
                .write(&dir.join(format!("pulse_n0{rung}_seed{seed}.pulse")))?;
            for (it, err) in report.error_trace.iter().enumerate() {
                convergence_rows.push(vec![
                    seed.to_string(),
                    rung.to_string(),
                    it.to_string(),
                    fmt_float(*err),
                ]);
            }
            println!(
                "seed {seed} rung {rung}: converged={} error={:.3e} iters={}",
                report.converged, report.final_error, report.iterations_stage1
            );
            summaries.push(SynthesisSummary::from_report(seed, report));
            by_rung[i].push(report.clone());
        }
        per_seed.push(summaries);
    }
    write_csv(
        &dir.join("convergence.csv"),
        &["seed", "rung", "iteration", "error"],
        &convergence_rows,
    )?;
    // Cross-seed intensity and time-integration statistics per rung.
    let mut rung_summaries = Vec::new();
    let mut energy_rows = Vec::new();
    for (i, reports) in by_rung.iter().enumerate() {
        if reports.is_empty() {
            continue;
        }
        let max_us: Vec<f64> = reports
            .iter()
            .map(|r| r.final_pulse.values().iter().fold(f64::MIN, |a, v| a.max(*v)))
            .collect();
        let areas: Vec<f64> = reports
            .iter()
            .map(|r| r.final_pulse.values().iter().sum::<f64>() * r.final_pulse.grid().dt())
            .collect();
        let energies: Vec<f64> = reports.iter().map(|r| r.final_pulse.energy()).collect();
        let (mu, vu) = mean_var(&max_us);
        let (ma, va) = mean_var(&areas);
        let (me, ve) = mean_var(&energies);
        let converged = reports.iter().filter(|r| r.converged).count();
        energy_rows.push(vec![
            (i + 1).to_string(),
            fmt_float(mu),
            fmt_float(vu),
            fmt_float(ma),
            fmt_float(va),
            fmt_float(me),
            fmt_float(ve),
        ]);
        rung_summaries.push(LadderRungSummary {
            rung: i + 1,
            max_u_mean: mu,
            max_u_var: vu,
            area_mean: ma,
            area_var: va,
            energy_mean: me,
            energy_var: ve,
            converged_seeds: converged,
        });
    }
    write_csv(
        &dir.join("energy_summary.csv"),
        &[
            "rung",
            "max_u_mean",
            "max_u_var",
            "area_mean",
            "area_var",
            "energy_mean",
            "energy_var",
        ],
        &energy_rows,
    )?;
    let top = TopReport {
        recipe: Recipe::Ladder.to_string(),
        fingerprint: config_fingerprint(cfg),
        config: cfg.clone(),
        results: LadderResults {
            per_seed,
            rungs: rung_summaries,
        },
    };
    write_report(&dir.join("report.json"), &top)
}

#[derive(Debug, Serialize)]
struct VerifyResults {
    fingerprint_match: bool,
    summary: GridSummary,
}

/// Evaluate a stored pulse on the verification grid.
pub fn run_verify(cfg: &ExperimentConfig, pulse_path: &Path) -> Result<()> {
    let dir = ensure_outdir(cfg)?;
    let bragg_cfg = cfg.bragg.to_core()?;
    let pf = PulseFile::read(pulse_path)?;
    let pulse = pf.to_pulse()?;
    let expected_fp = model_fingerprint(&bragg_cfg);
    let fingerprint_match = pf.fingerprint == expected_fp;
    if !fingerprint_match {
        eprintln!(
            "warning: pulse fingerprint {} does not match the configured model {}",
            pf.fingerprint, expected_fp
        );
    }
    let shape = (cfg.verify.grid[0], cfg.verify.grid[1]);
    let rep = bragg::robustness_grid(&pulse, &bragg_cfg, shape)?;
    let rows: Vec<Vec<String>> = rep
        .grid
        .iter()
        .zip(&rep.terminal_errors)
        .map(|((d, g), e)| vec![fmt_float(*d), fmt_float(*g), fmt_float(*e)])
        .collect();
    write_csv(
        &dir.join("grid_errors.csv"),
        &["doppler", "intensity", "error"],
        &rows,
    )?;
    let summary = GridSummary::from(&rep);
    print_grid_summary(
        &format!("verification grid {}x{}", shape.0, shape.1),
        &summary,
    );
    let top = TopReport {
        recipe: Recipe::Verify.to_string(),
        fingerprint: config_fingerprint(cfg),
        config: cfg.clone(),
        results: VerifyResults {
            fingerprint_match,
            summary,
        },
    };
    write_report(&dir.join("report.json"), &top)
}

#[derive(Debug, Serialize)]
struct FilterResults {
    cutoff_fractions: Vec<f64>,
    probabilities: Vec<f64>,
    skipped: Vec<usize>,
    sampling_rate: f64,
}

/// Butterworth bandwidth sweep of a stored pulse.
pub fn run_filtersweep(cfg: &ExperimentConfig, pulse_path: &Path) -> Result<()> {
    let dir = ensure_outdir(cfg)?;
    let bragg_cfg = cfg.bragg.to_core()?;
    let pf = PulseFile::read(pulse_path)?;
    let pulse = pf.to_pulse()?;
    let rep = bragg::filter_sweep(&pulse, bragg_cfg.n0, bragg_cfg.n_trunc(), cfg.filter.order)?;
    let rows: Vec<Vec<String>> = rep
        .cutoff_fractions
        .iter()
        .zip(&rep.probabilities)
        .enumerate()
        .map(|(i, (c, p))| vec![(i + 1).to_string(), fmt_float(*c), fmt_float(*p)])
        .collect();
    write_csv(
        &dir.join("filter_sweep.csv"),
        &["index", "cutoff_fraction", "probability"],
        &rows,
    )?;
    println!(
        "filter sweep: {} cutoffs, probability {:.3} at lowest, {:.3} at highest",
        rep.cutoff_fractions.len(),
        rep.probabilities.first().unwrap_or(&f64::NAN),
        rep.probabilities.last().unwrap_or(&f64::NAN)
    );
    let top = TopReport {
        recipe: Recipe::Filtersweep.to_string(),
        fingerprint: config_fingerprint(cfg),
        config: cfg.clone(),
        results: FilterResults {
            cutoff_fractions: rep.cutoff_fractions,
            probabilities: rep.probabilities,
            skipped: rep.skipped,
            sampling_rate: rep.sampling_rate,
        },
    };
    write_report(&dir.join("report.json"), &top)
}

#[derive(Debug, Serialize, Clone)]
struct CompareCell {
    method: String,
    size: usize,
    converged: bool,
    synthesis_error: f64,
    grid: GridSummary,
    synth_clock_minutes: f64,
}

#[derive(Debug, Serialize)]
struct CompareResults {
    cells: Vec<CompareCell>,
}

/// Expansion-versus-sampling comparison at matched representation sizes.
pub fn run_compare(cfg: &ExperimentConfig) -> Result<()> {
    let dir = ensure_outdir(cfg)?;
    let base = cfg.bragg.to_core()?;
    let seed = *cfg.seeds.first().unwrap_or(&1);
    let shape = (cfg.verify.grid[0], cfg.verify.grid[1]);
    let mut cells: Vec<CompareCell> = Vec::new();
    let run_cell = |method: &str, size: usize, bragg_cfg: BraggConfig| -> Result<CompareCell> {
        let solver = cfg.solver.to_core(seed);
        let report = synthesize_one(&bragg_cfg, &solver, seed)?;
        let fp = model_fingerprint(&bragg_cfg);
        PulseFile::from_pulse(&report.final_pulse, &fp)?
            .write(&dir.join(format!("pulse_{method}{size}.pulse")))?;
        let grid_rep = bragg::robustness_grid(&report.final_pulse, &bragg_cfg, shape)?;
        println!(
            "{method} size {size}: synth error {:.3e}, grid mean {:.3}, max {:.3}",
            report.final_error, grid_rep.mean_error, grid_rep.max_error
        );
        Ok(CompareCell {
            method: method.to_string(),
            size,
            converged: report.converged,
            synthesis_error: report.final_error,
            grid: GridSummary::from(&grid_rep),
            synth_clock_minutes: report.wall_clock_seconds / 60.0,
        })
    };
    for &d in &cfg.compare.degrees {
        let bragg_cfg = BraggConfig {
            degrees: (d, d),
            mode: DomainMode::Legendre,
            ..base.clone()
        };
        cells.push(run_cell("legendre", d, bragg_cfg)?);
    }
    for &s in &cfg.compare.samples {
        let bragg_cfg = BraggConfig {
            degrees: (s.saturating_sub(1), s.saturating_sub(1)),
            mode: DomainMode::Sampling,
            ..base.clone()
        };
        cells.push(run_cell("sampling", s, bragg_cfg)?);
    }
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                c.method.clone(),
                c.size.to_string(),
                fmt_float(c.grid.max_error),
                fmt_float(c.grid.mean_error),
                fmt_float(c.grid.min_error),
                fmt_float(c.grid.max_u),
                fmt_float(c.grid.mean_u),
                fmt_float(c.grid.max_du),
                fmt_float(c.grid.mean_du),
                fmt_float(c.synth_clock_minutes),
            ]
        })
        .collect();
    write_csv(
        &dir.join("compare_summary.csv"),
        &[
            "method",
            "size",
            "max_error",
            "mean_error",
            "min_error",
            "max_u",
            "mean_u",
            "max_du",
            "mean_du",
            "clock_min",
        ],
        &rows,
    )?;
    print_compare_table(&cells);
    let top = TopReport {
        recipe: Recipe::Compare.to_string(),
        fingerprint: config_fingerprint(cfg),
        config: cfg.clone(),
        results: CompareResults { cells },
    };
    write_report(&dir.join("report.json"), &top)
}

fn print_compare_table(cells: &[CompareCell]) {
    for method in ["legendre", "sampling"] {
        let group: Vec<&CompareCell> = cells.iter().filter(|c| c.method == method).collect();
        if group.is_empty() {
            continue;
        }
        let title = match method {
            "legendre" => "Compensation using Legendre expansion",
            _ => "Compensation using equidistant sampling",
        };
        println!("\n{title}");
        let header: Vec<String> = group.iter().map(|c| format!("{:>9}", c.size)).collect();
        let label = match method {
            "legendre" => "Poly. Degree/Interval",
            _ => "No. Samples/Interval",
        };
        println!("{label:<22} {}", header.join(" "));
        let rows: [(&str, Box<dyn Fn(&CompareCell) -> String>); 8] = [
            ("max Error", Box::new(|c| format!("{:>9.2}", c.grid.max_error))),
            ("mean Error", Box::new(|c| format!("{:>9.2}", c.grid.mean_error))),
            ("min Error", Box::new(|c| format!("{:>9.1e}", c.grid.min_error))),
            ("max u_k/omega_r", Box::new(|c| format!("{:>9.1}", c.grid.max_u))),
            ("mean u_k/omega_r", Box::new(|c| format!("{:>9.1}", c.grid.mean_u))),
            ("max |du_k|/omega_r", Box::new(|c| format!("{:>9.1}", c.grid.max_du))),
            ("mean |du_k|/omega_r", Box::new(|c| format!("{:>9.2}", c.grid.mean_du))),
            ("Clock (min)", Box::new(|c| format!("{:>9.1}", c.synth_clock_minutes))),
        ];
        for (label, fmt) in rows {
            let cells_text: Vec<String> = group.iter().map(|c| fmt(c)).collect();
            println!("{label:<22} {}", cells_text.join(" "));
        }
    }
}

/// Dispatch a recipe; `pulse_path` is required by verify and filtersweep.
pub fn run_recipe(
    cfg: &ExperimentConfig,
    recipe: Recipe,
    pulse_path: Option<&Path>,
) -> Result<()> {
    match recipe {
        Recipe::Robust => run_synth(cfg),
        Recipe::Ladder => run_ladder(cfg),
        Recipe::Compare => run_compare(cfg),
        Recipe::Verify => {
            let path = pulse_path.context("verify requires --pulse <path>")?;
            run_verify(cfg, path)
        }
        Recipe::Filtersweep => {
            let path = pulse_path.context("filtersweep requires --pulse <path>")?;
            run_filtersweep(cfg, path)
        }
    }
}
