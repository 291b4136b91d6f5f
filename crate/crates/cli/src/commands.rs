//! Subcommand implementations. Each returns a summary; printing and exit
//! codes are left to the binary.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::{bail, Context, Result};
use irs_slp::baselines::{design_scheme, Scheme, SchemeDesign};
use irs_slp::channel::{generate_scenario, Scenario};
use irs_slp::constellation::Constellation;
use irs_slp::diagnostics::{
    gradient_check, projection_check, sandwich_check, GradientCheck, GradientReport, ProjectionReports, SandwichReport,
};
use irs_slp::model::SymbolBlock;
use irs_slp::objective::Objective;
use irs_slp::optimizer::warm_start;
use irs_slp::sim::{aggregate, failure_counts, run_realization, run_trials, worst_margin, write_csv, RealizationSeeds};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Resolved, RunConfig};
use crate::files::{
    encode_matrix, encode_vector, read_json, write_atomic, write_json, DesignFile, FailureCount, Manifest, Provenance,
    ScenarioFile, TraceFile, COMPLEX_ENCODING, DESIGN_FORMAT, MANIFEST_FORMAT, TRACE_FORMAT,
};

/// A loaded configuration together with its resolved form.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub resolved: Resolved,
}

impl Run {
    pub fn new(config: RunConfig) -> Result<Self> {
        let resolved = config.resolve().context("invalid configuration")?;
        Ok(Self { config, resolved })
    }

    fn seeds(&self) -> RealizationSeeds {
        RealizationSeeds::new(self.resolved.seed, 0)
    }

    fn output(&self, explicit: Option<&Path>, default: &Path) -> PathBuf {
        explicit.map_or_else(|| self.config.output.path(default), Path::to_path_buf)
    }

    /// Channel realization 0 of a sweep with this configuration.
    pub fn scenario(&self) -> Result<Scenario> {
        let r = &self.resolved;
        Ok(generate_scenario(
            &r.dims,
            &r.geometry,
            &r.path_loss,
            &r.rician,
            self.seeds().channel,
        )?)
    }

    fn load_or_generate(&self, scenario: Option<&Path>) -> Result<Scenario> {
        let Some(path) = scenario else {
            return self.scenario();
        };
        let file: ScenarioFile = read_json(path)?;
        let sc = file
            .to_scenario()
            .with_context(|| format!("invalid scenario {}", path.display()))?;
        let dims = &self.resolved.dims;
        if sc.channels.n_users() != dims.n_users {
            bail!(
                "scenario {} has {} users but the configuration has {}",
                path.display(),
                sc.channels.n_users(),
                dims.n_users
            );
        }
        if sc.channels.n_tx() != dims.n_tx || sc.channels.n_irs() != dims.n_irs {
            warn!(
                "scenario dimensions (N = {}, M = {}) override the configuration (N = {}, M = {})",
                sc.channels.n_tx(),
                sc.channels.n_irs(),
                dims.n_tx,
                dims.n_irs
            );
        }
        Ok(sc)
    }

    fn symbols(&self) -> SymbolBlock {
        let d = &self.resolved.dims;
        self.seeds().symbol_block(d.constellation, d.n_users, d.block_len)
    }
}

pub fn gen_scenario(run: &Run, out: Option<&Path>) -> Result<PathBuf> {
    let path = run.output(out, &run.config.output.scenario);
    let sc = run.scenario()?;
    write_json(&path, &ScenarioFile::new(&sc, &run.config))?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveSummary {
    pub scheme: Scheme,
    pub exact_objective: f64,
    pub smoothed_objective: f64,
    pub worst_margin: f64,
    /// Monte-Carlo BER of the design at the configured noise power.
    pub ber: f64,
    pub ber_trials: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    pub design_path: PathBuf,
    pub trace_path: Option<PathBuf>,
}

/// Default scheme: the joint design, or SLP without IRS when `M = 0`.
pub fn default_scheme(n_irs: usize) -> Scheme {
    if n_irs == 0 {
        Scheme::SlpNoIrs
    } else {
        Scheme::SlpIrs
    }
}

pub fn solve(
    run: &Run,
    scenario: Option<&Path>,
    scheme: Option<Scheme>,
    design_out: Option<&Path>,
    trace_out: Option<&Path>,
) -> Result<SolveSummary> {
    let sc = run.load_or_generate(scenario)?;
    let scheme = scheme.unwrap_or_else(|| default_scheme(sc.channels.n_irs()));
    let sym = run.symbols();
    let solver = &run.resolved.solver;
    let designed = design_scheme(scheme, &sc.channels, &sym, solver, run.seeds().warm_start)
        .with_context(|| format!("{scheme} design failed"))?;
    let SchemeDesign {
        channels,
        design,
        trace,
        ..
    } = &designed;
    let obj = Objective::new(channels, &sym, solver.smoothing)?;
    let exact = obj.exact(design)?;
    let smoothed = obj.value(design)?;
    let margin = worst_margin(channels, design, &sym)?;
    let ber_trials = run.resolved.sweep.n_trials;
    let counts = run_trials(
        channels,
        design,
        &sym,
        run.resolved.power.noise_var,
        ber_trials,
        &mut run.seeds().noise_stream(0),
    )?;

    let design_path = run.output(design_out, &run.config.output.design);
    let file = DesignFile {
        provenance: Provenance::new(DESIGN_FORMAT, &run.config),
        complex_encoding: COMPLEX_ENCODING.to_string(),
        scheme,
        constellation: sym.constellation().name(),
        symbols: sym.indices().row_iter().map(|r| r.iter().copied().collect()).collect(),
        precode: encode_matrix(&design.precode),
        spacing: design.spacing.as_ref().map(|d| d.iter().copied().collect()),
        theta: encode_vector(&design.theta),
        exact_objective: exact,
        smoothed_objective: Some(smoothed),
        worst_margin: margin,
    };
    write_json(&design_path, &file)?;
    let trace_path = match trace {
        Some(t) => {
            let p = run.output(trace_out, &run.config.output.solve_trace);
            write_json(
                &p,
                &TraceFile {
                    provenance: Provenance::new(TRACE_FORMAT, &run.config),
                    scheme,
                    trace: t.clone(),
                },
            )?;
            Some(p)
        }
        None => None,
    };
    Ok(SolveSummary {
        scheme,
        exact_objective: exact,
        smoothed_objective: smoothed,
        worst_margin: margin,
        ber: counts.ber(),
        ber_trials,
        outer_iterations: trace.as_ref().map_or(0, |t| t.objective.len()),
        converged: trace.as_ref().is_none_or(|t| t.converged),
        design_path,
        trace_path,
    })
}

pub const TRACE_HEADER: &str =
    "iteration,f,g,successive_diff,apg_iterations_precode,apg_iterations_theta,seed,config_hash";

/// Per-iteration objective values of the joint design as plot-ready CSV.
/// Row 0 is the starting point.
pub fn trace(run: &Run, scenario: Option<&Path>, out: Option<&Path>) -> Result<(PathBuf, Vec<f64>)> {
    let sc = run.load_or_generate(scenario)?;
    let sym = run.symbols();
    let solver = &run.resolved.solver;
    let seed = run.seeds().warm_start;
    let init = warm_start(&sc.channels, &sym, solver.p_total, seed)?;
    let obj = Objective::new(&sc.channels, &sym, solver.smoothing)?;
    let g0 = obj.exact(&init)?;
    let scheme = default_scheme(sc.channels.n_irs());
    let t = design_scheme(scheme, &sc.channels, &sym, solver, seed)?
        .trace
        .expect("SLP schemes record a trace");
    let hash = run.config.hash();
    let mut text = String::new();
    text.push_str(TRACE_HEADER);
    text.push('\n');
    text.push_str(&format!(
        "0,{},{},,,,{},{}\n",
        t.initial_objective, g0, run.resolved.seed, hash
    ));
    for k in 0..t.objective.len() {
        let theta_iters = t.apg_iterations_theta.get(k).map_or(String::new(), |v| v.to_string());
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            k + 1,
            t.objective[k],
            t.exact_objective[k],
            t.successive_diff[k],
            t.apg_iterations_precode[k],
            theta_iters,
            run.resolved.seed,
            hash
        ));
    }
    let path = run.output(out, &run.config.output.trace_csv);
    write_atomic(&path, text.as_bytes())?;
    let mut f = vec![t.initial_objective];
    f.extend(&t.objective);
    Ok((path, f))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub csv: PathBuf,
    pub manifest: PathBuf,
    pub records: usize,
    pub failures: Vec<FailureCount>,
}

/// Builds the worker pool; `None` or 0 uses one thread per core.
pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()?)
}

/// Runs the BER sweep in checkpointed chunks. After every chunk the CSV is
/// rewritten from all finished realizations and the manifest is marked
/// partial until the last one.
pub fn sweep(
    run: &Run,
    threads: Option<usize>,
    csv_out: Option<&Path>,
    manifest_out: Option<&Path>,
) -> Result<SweepSummary> {
    let spec = &run.resolved.sweep;
    let csv_path = run.output(csv_out, &run.config.output.sweep_csv);
    let manifest_path = run.output(manifest_out, &run.config.output.manifest);
    let pool = thread_pool(threads)?;
    let total = spec.n_realizations;
    let step = run.resolved.checkpoint_every;
    let done = AtomicUsize::new(0);
    let mut results = Vec::with_capacity(total);

    let checkpoint = |results: &[_]| -> Result<Vec<FailureCount>> {
        let records = aggregate(spec, results);
        let mut buf = Vec::new();
        write_csv(&records, &mut buf)?;
        write_atomic(&csv_path, &buf)?;
        let failures: Vec<FailureCount> = failure_counts(spec, results)
            .into_iter()
            .map(|((scheme, n_irs), n)| FailureCount {
                scheme,
                n_irs,
                failed_realizations: n,
            })
            .collect();
        write_json(
            &manifest_path,
            &Manifest {
                provenance: Provenance::new(MANIFEST_FORMAT, &run.config),
                partial: results.len() < total,
                completed_realizations: results.len(),
                total_realizations: total,
                threads,
                csv: csv_path.display().to_string(),
                failures: failures.clone(),
                config: run.config.clone(),
            },
        )?;
        Ok(failures)
    };

    checkpoint(&results)?;
    let mut failures = Vec::new();
    for start in (0..total).step_by(step) {
        let end = (start + step).min(total);
        let chunk = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|r| {
                    let out = run_realization(spec, r);
                    let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                    info!("realization {r} finished ({n}/{total})");
                    out
                })
                .collect::<irs_slp::Result<Vec<_>>>()
        })?;
        results.extend(chunk);
        failures = checkpoint(&results)?;
    }
    for f in &failures {
        if f.failed_realizations > 0 {
            warn!(
                "{} (M = {}): {} realization(s) failed and were excluded",
                f.scheme, f.n_irs, f.failed_realizations
            );
        }
    }
    Ok(SweepSummary {
        csv: csv_path,
        manifest: manifest_path,
        records: spec.cases().len() * spec.noise_levels.len(),
        failures,
    })
}

/// Pass thresholds of the gradient check, per smoothing parameter.
pub const GRADIENT_TOLERANCES: [(f64, f64); 2] = [(0.1, 1e-5), (0.01, 1e-4)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckOptions {
    pub gradient_instances: usize,
    pub projection_inputs: usize,
    pub feasible_samples: usize,
    pub sandwich_instances: usize,
    /// Relative error injected into analytic gradients.
    pub corrupt_gradient: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            gradient_instances: 100,
            projection_inputs: 100,
            feasible_samples: 100,
            sandwich_instances: 1000,
            corrupt_gradient: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientLine {
    pub constellation: String,
    pub report: GradientReport,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichLine {
    pub constellation: String,
    pub report: SandwichReport,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub seed: u64,
    pub config_hash: String,
    pub gradients: Vec<GradientLine>,
    /// Largest relative gradient error over all runs.
    pub max_gradient_rel_error: f64,
    pub projections: ProjectionReports,
    pub sandwich: Vec<SandwichLine>,
    pub passed: bool,
}

/// Runs the randomized self-checks on the configured constellation and on
/// the other family's default (16-QAM or 8-PSK).
pub fn check(run: &Run, opts: &CheckOptions) -> Result<CheckReport> {
    let seed = run.resolved.seed;
    let primary = run.resolved.dims.constellation;
    let other = if primary.is_qam() {
        Constellation::psk8()
    } else {
        Constellation::qam16()
    };
    let mut gradients = Vec::new();
    let mut sandwich = Vec::new();
    for (ci, c) in [primary, other].into_iter().enumerate() {
        for (ei, &(eta, tol)) in GRADIENT_TOLERANCES.iter().enumerate() {
            let mut g = GradientCheck::new(eta, opts.gradient_instances);
            g.corruption = opts.corrupt_gradient;
            let report = gradient_check(c, &g, seed.wrapping_add((10 * ci + ei) as u64))?;
            gradients.push(GradientLine {
                constellation: c.name(),
                passed: report.max_rel_error <= tol,
                report,
                tolerance: tol,
            });
        }
        let report = sandwich_check(c, opts.sandwich_instances, seed.wrapping_add(100 + ci as u64))?;
        sandwich.push(SandwichLine {
            constellation: c.name(),
            passed: report.violations == 0,
            report,
        });
    }
    let projections = projection_check(opts.projection_inputs, opts.feasible_samples, seed.wrapping_add(200));
    let max_gradient_rel_error = gradients.iter().map(|g| g.report.max_rel_error).fold(0.0, f64::max);
    let passed = gradients.iter().all(|g| g.passed) && sandwich.iter().all(|s| s.passed) && projections.passed();
    Ok(CheckReport {
        seed,
        config_hash: run.config.hash(),
        gradients,
        max_gradient_rel_error,
        projections,
        sandwich,
        passed,
    })
}

/// Human-readable check report, one line per check.
pub fn format_check(report: &CheckReport) -> String {
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let mut out = String::new();
    for g in &report.gradients {
        out.push_str(&format!(
            "{} gradient {:>6} eta={:<5} instances={} max_rel_error={:.3e} (tol {:.0e})\n",
            verdict(g.passed),
            g.constellation,
            g.report.eta,
            g.report.instances,
            g.report.max_rel_error,
            g.tolerance
        ));
    }
    let p = &report.projections;
    for (name, r) in [("precode", &p.precode), ("spacing", &p.spacing), ("theta", &p.theta)] {
        out.push_str(&format!(
            "{} projection {name:<7} inputs={} samples={} idempotence_failures={} nearest_point_violations={} infeasible={}\n",
            verdict(r.passed()),
            r.inputs,
            r.feasible_samples,
            r.idempotence_failures,
            r.nearest_point_violations,
            r.infeasible_outputs
        ));
    }
    for s in &report.sandwich {
        out.push_str(&format!(
            "{} sandwich {:>6} instances={} violations={} max_gap_ratio={:.3}\n",
            verdict(s.passed),
            s.constellation,
            s.report.instances,
            s.report.violations,
            s.report.max_gap_ratio
        ));
    }
    out.push_str(&format!(
        "max gradient relative error: {:.3e}\n{}\n",
        report.max_gradient_rel_error,
        if report.passed {
            "all checks passed"
        } else {
            "CHECKS FAILED"
        }
    ));
    out
}
