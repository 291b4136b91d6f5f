//! Projections, the accelerated projected gradient (APG) solver and the
//! alternating minimization driver.
//!
//! The APG solver works on flat real coordinates. Each block problem packs
//! its complex variables as interleaved `(re, im)` pairs so gradients and
//! inner products are the ones of the real parameterization.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{ChannelSet, DesignVariables, SymbolBlock};
use crate::objective::{GradBlocks, Objective, SmoothingConfig};
use crate::C64;

/// Per-column projection onto `‖x_t‖² ≤ P`.
pub fn project_precode(x: &DMatrix<C64>, p_total: f64) -> DMatrix<C64> {
    let mut out = x.clone();
    project_precode_in_place(&mut out, p_total);
    out
}

// Rounding slack under which a point counts as already projected, so that
// every projection is exactly idempotent.
const FIXED_POINT_SLACK: f64 = 8.0 * f64::EPSILON;

pub fn project_precode_in_place(x: &mut DMatrix<C64>, p_total: f64) {
    let radius = p_total.sqrt();
    for mut col in x.column_iter_mut() {
        let norm_sq = col.norm_squared();
        if norm_sq > p_total * (1.0 + FIXED_POINT_SLACK) {
            col *= C64::from(radius / norm_sq.sqrt());
        }
    }
}

/// Elementwise `max(0, d)`.
pub fn project_spacing(d: &DVector<f64>) -> DVector<f64> {
    d.map(|v| v.max(0.0))
}

/// Unit-modulus projection; zero entries map to 1.
pub fn project_theta(theta: &DVector<C64>) -> DVector<C64> {
    theta.map(unit_phase)
}

fn unit_phase(z: C64) -> C64 {
    let r = z.norm();
    if r == 0.0 {
        C64::new(1.0, 0.0)
    } else if (r - 1.0).abs() <= FIXED_POINT_SLACK {
        z
    } else {
        z / r
    }
}

/// A smooth objective over flat real coordinates with an easy projection.
pub trait ApgProblem {
    fn dim(&self) -> usize;

    fn value(&self, z: &[f64]) -> f64;

    /// Writes the gradient into `grad` and returns the value.
    fn value_grad(&self, z: &[f64], grad: &mut [f64]) -> f64;

    fn project(&self, z: &mut [f64]);

    /// Distance between successive iterates used by the stopping rule.
    fn step_norm(&self, a: &[f64], b: &[f64]) -> f64 {
        euclid_dist(a, b)
    }

    fn is_feasible(&self, _z: &[f64]) -> bool {
        true
    }
}

fn euclid_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Backtracking parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSearchConfig {
    /// Factor applied to the inverse step β on every rejected trial.
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Starting β; probed from the local gradient variation when absent.
    pub initial_beta: Option<f64>,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            shrink: 2.0,
            max_backtracks: 50,
            initial_beta: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApgConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Reset the momentum whenever an iterate increases the objective.
    pub restart: bool,
    /// Return the best iterate seen rather than the last one.
    pub keep_best: bool,
}

impl Default for ApgConfig {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-5,
            restart: false,
            keep_best: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ApgTrace {
    /// Objective at the initial point followed by one value per iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub backtracks: usize,
    pub restarts: usize,
    pub final_beta: f64,
    pub converged: bool,
}

/// FISTA momentum sequence: `ξ_j = (1 + √(1 + 4ξ_{j−1}²)) / 2`.
#[derive(Debug, Clone, Copy)]
pub struct Momentum {
    xi: f64,
}

impl Default for Momentum {
    fn default() -> Self {
        Self { xi: 1.0 }
    }
}

impl Momentum {
    /// Advances the sequence and returns `α_j = (ξ_{j−1} − 1) / ξ_j`.
    pub fn next_alpha(&mut self) -> f64 {
        let prev = self.xi;
        self.xi = (1.0 + (1.0 + 4.0 * prev * prev).sqrt()) / 2.0;
        (prev - 1.0) / self.xi
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn reset(&mut self) {
        self.xi = 1.0;
    }
}

fn solver_failure(reason: impl Into<String>, trace: &ApgTrace) -> Error {
    Error::SolverFailure {
        reason: reason.into(),
        trace: trace.objective.clone(),
    }
}

/// Estimates the gradient Lipschitz constant from two nearby feasible points.
pub fn probe_lipschitz<P: ApgProblem>(problem: &P, x: &[f64], seed: u64) -> f64 {
    let dim = problem.dim();
    if dim == 0 {
        return 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
    let dir_norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = 1e-3 * (x.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-3);
    let mut y: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + scale * d / dir_norm).collect();
    problem.project(&mut y);
    let mut g1 = vec![0.0; dim];
    let mut g2 = vec![0.0; dim];
    problem.value_grad(x, &mut g1);
    problem.value_grad(&y, &mut g2);
    let dx = euclid_dist(x, &y);
    let dg = euclid_dist(&g1, &g2);
    if dx > 0.0 && dg.is_finite() && dg > 0.0 {
        (dg / dx).max(1e-8)
    } else {
        1.0
    }
}

/// Accelerated projected gradient with backtracking on the quadratic upper
/// bound. `init` must be feasible.
pub fn apg_solve<P: ApgProblem>(
    problem: &P,
    init: &[f64],
    ls: &LineSearchConfig,
    cfg: &ApgConfig,
) -> Result<(Vec<f64>, ApgTrace)> {
    let dim = problem.dim();
    if init.len() != dim {
        return invalid(format!("initial point has length {}, expected {dim}", init.len()));
    }
    if !(ls.shrink > 1.0) {
        return invalid("line-search shrink factor must exceed 1");
    }
    let mut trace = ApgTrace::default();
    let mut x = init.to_vec();
    let mut x_prev = x.clone();
    let mut f_x = problem.value(&x);
    trace.objective.push(f_x);
    if !f_x.is_finite() {
        return Err(solver_failure("non-finite objective at the initial point", &trace));
    }
    let mut best = (x.clone(), f_x);
    let mut beta = match ls.initial_beta {
        Some(b) if b > 0.0 => b,
        _ => probe_lipschitz(problem, &x, 0x5eed ^ dim as u64),
    };
    let mut momentum = Momentum::default();
    let mut z = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut cand = vec![0.0; dim];

    for _ in 0..cfg.max_iter {
        let alpha = momentum.next_alpha();
        for j in 0..dim {
            z[j] = x[j] + alpha * (x[j] - x_prev[j]);
        }
        let f_z = problem.value_grad(&z, &mut grad);
        if !f_z.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(solver_failure("non-finite objective or gradient", &trace));
        }
        let mut accepted = None;
        for _ in 0..=ls.max_backtracks {
            for j in 0..dim {
                cand[j] = z[j] - grad[j] / beta;
            }
            problem.project(&mut cand);
            let f_c = problem.value(&cand);
            let mut lin = 0.0;
            let mut sq = 0.0;
            for j in 0..dim {
                let d = cand[j] - z[j];
                lin += grad[j] * d;
                sq += d * d;
            }
            let bound = f_z + lin + 0.5 * beta * sq;
            if f_c.is_finite() && f_c <= bound + 1e-12 * (1.0 + f_z.abs()) {
                accepted = Some(f_c);
                break;
            }
            beta *= ls.shrink;
            trace.backtracks += 1;
        }
        let Some(f_c) = accepted else {
            return Err(solver_failure("line search exhausted its backtracks", &trace));
        };
        debug_assert!(problem.is_feasible(&cand), "projected iterate left the feasible set");

        std::mem::swap(&mut x_prev, &mut x);
        x.copy_from_slice(&cand);
        if cfg.restart && f_c > f_x {
            momentum.reset();
            trace.restarts += 1;
        }
        f_x = f_c;
        trace.objective.push(f_x);
        trace.iterations += 1;
        if f_x < best.1 {
            best = (x.clone(), f_x);
        }
        if problem.step_norm(&x, &x_prev) <= cfg.tol {
            trace.converged = true;
            break;
        }
    }
    trace.final_beta = beta;
    let out = if cfg.keep_best { best.0 } else { x };
    Ok((out, trace))
}

fn pack_complex<'a>(values: impl Iterator<Item = &'a C64>, out: &mut Vec<f64>) {
    for z in values {
        out.push(z.re);
        out.push(z.im);
    }
}

fn complex_at(z: &[f64], j: usize) -> C64 {
    C64::new(z[2 * j], z[2 * j + 1])
}

/// The `(X, d)` block for a fixed `θ`.
///
/// The spacings are stored internally as `d / κ` with `κ = max_i ‖h_i‖ / 2B`,
/// which equalizes the curvature of the two sub-blocks; nonnegativity is
/// unaffected by the scaling, so the projection is unchanged.
pub struct PrecodeSpacingProblem<'o, 'a> {
    obj: &'o Objective<'a>,
    heff: DMatrix<C64>,
    theta: DVector<C64>,
    p_total: f64,
    n_tx: usize,
    block_len: usize,
    n_spacing: usize,
    spacing_scale: f64,
}

impl<'o, 'a> PrecodeSpacingProblem<'o, 'a> {
    pub fn new(obj: &'o Objective<'a>, theta: &DVector<C64>, p_total: f64) -> Result<Self> {
        let ch = obj.channel();
        let heff = ch.effective_channels(theta)?;
        let spacing_scale = match obj.symbols().constellation().qam() {
            Some(q) => {
                let h = heff.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
                let k = h / q.levels() as f64;
                if k > 0.0 && k.is_finite() {
                    k
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        Ok(Self {
            obj,
            heff,
            theta: theta.clone(),
            p_total,
            n_tx: ch.n_tx(),
            block_len: obj.symbols().block_len(),
            n_spacing: if obj.is_qam() { 2 * ch.n_users() } else { 0 },
            spacing_scale,
        })
    }

    /// Factor `κ` between stored and actual spacings.
    pub fn spacing_scale(&self) -> f64 {
        self.spacing_scale
    }

    fn n_x(&self) -> usize {
        2 * self.n_tx * self.block_len
    }

    pub fn pack(&self, precode: &DMatrix<C64>, spacing: Option<&DVector<f64>>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        pack_complex(precode.iter(), &mut out);
        if let Some(d) = spacing {
            out.extend(d.iter().map(|v| v / self.spacing_scale));
        }
        out
    }

    pub fn unpack(&self, z: &[f64]) -> (DMatrix<C64>, Option<DVector<f64>>) {
        let x = DMatrix::from_fn(self.n_tx, self.block_len, |n, t| complex_at(z, t * self.n_tx + n));
        let d = (self.n_spacing > 0).then(|| DVector::from_column_slice(&z[self.n_x()..]) * self.spacing_scale);
        (x, d)
    }
}

impl ApgProblem for PrecodeSpacingProblem<'_, '_> {
    fn dim(&self) -> usize {
        self.n_x() + self.n_spacing
    }

    fn value(&self, z: &[f64]) -> f64 {
        let (x, d) = self.unpack(z);
        self.obj.value_with_channels(&self.heff, &x, d.as_ref())
    }

    fn value_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let (x, d) = self.unpack(z);
        let eval = self
            .obj
            .evaluate_with_channels(&self.heff, &x, d.as_ref(), &self.theta, GradBlocks::PrecodeSpacing);
        for (j, g) in eval.grad_x.iter().enumerate() {
            grad[2 * j] = g.re;
            grad[2 * j + 1] = g.im;
        }
        if let Some(gd) = eval.grad_d {
            for (g, v) in grad[self.n_x()..].iter_mut().zip(gd.iter()) {
                *g = v * self.spacing_scale;
            }
        }
        eval.value
    }

    fn project(&self, z: &mut [f64]) {
        let radius = self.p_total.sqrt();
        let (xs, ds) = z.split_at_mut(self.n_x());
        for col in xs.chunks_exact_mut(2 * self.n_tx) {
            let norm_sq: f64 = col.iter().map(|v| v * v).sum();
            if norm_sq > self.p_total * (1.0 + FIXED_POINT_SLACK) {
                let s = radius / norm_sq.sqrt();
                col.iter_mut().for_each(|v| *v *= s);
            }
        }
        ds.iter_mut().for_each(|v| *v = v.max(0.0));
    }

    fn step_norm(&self, a: &[f64], b: &[f64]) -> f64 {
        let n = self.n_x();
        euclid_dist(&a[..n], &b[..n]) + self.spacing_scale * euclid_dist(&a[n..], &b[n..])
    }

    fn is_feasible(&self, z: &[f64]) -> bool {
        let (xs, ds) = z.split_at(self.n_x());
        xs.chunks_exact(2 * self.n_tx)
            .all(|c| c.iter().map(|v| v * v).sum::<f64>() <= self.p_total * (1.0 + 1e-12))
            && ds.iter().all(|&v| v >= 0.0)
    }
}

/// The `θ` block for fixed `(X, d)`.
pub struct ThetaProblem<'o, 'a> {
    obj: &'o Objective<'a>,
    precode: DMatrix<C64>,
    spacing: Option<DVector<f64>>,
}

impl<'o, 'a> ThetaProblem<'o, 'a> {
    pub fn new(obj: &'o Objective<'a>, precode: &DMatrix<C64>, spacing: Option<&DVector<f64>>) -> Self {
        Self {
            obj,
            precode: precode.clone(),
            spacing: spacing.cloned(),
        }
    }

    pub fn pack(theta: &DVector<C64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * theta.len());
        pack_complex(theta.iter(), &mut out);
        out
    }

    pub fn unpack(z: &[f64]) -> DVector<C64> {
        DVector::from_fn(z.len() / 2, |j, _| complex_at(z, j))
    }

    fn heff(&self, theta: &DVector<C64>) -> DMatrix<C64> {
        self.obj
            .channel()
            .effective_channels(theta)
            .expect("theta length fixed by the problem")
    }
}

impl ApgProblem for ThetaProblem<'_, '_> {
    fn dim(&self) -> usize {
        2 * self.obj.channel().n_irs()
    }

    fn value(&self, z: &[f64]) -> f64 {
        let theta = Self::unpack(z);
        self.obj
            .value_with_channels(&self.heff(&theta), &self.precode, self.spacing.as_ref())
    }

    fn value_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let theta = Self::unpack(z);
        let eval = self.obj.evaluate_with_channels(
            &self.heff(&theta),
            &self.precode,
            self.spacing.as_ref(),
            &theta,
            GradBlocks::Theta,
        );
        for (j, g) in eval.grad_theta.iter().enumerate() {
            grad[2 * j] = g.re;
            grad[2 * j + 1] = g.im;
        }
        eval.value
    }

    fn project(&self, z: &mut [f64]) {
        for pair in z.chunks_exact_mut(2) {
            let u = unit_phase(C64::new(pair[0], pair[1]));
            pair[0] = u.re;
            pair[1] = u.im;
        }
    }

    fn is_feasible(&self, z: &[f64]) -> bool {
        z.chunks_exact(2).all(|p| (p[0].hypot(p[1]) - 1.0).abs() <= 1e-12)
    }
}

/// Alternating minimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuterConfig {
    pub smoothing: SmoothingConfig,
    /// Per-slot transmit power limit (linear).
    pub p_total: f64,
    pub max_outer: usize,
    pub outer_tol: f64,
    pub apg: ApgConfig,
    pub line_search: LineSearchConfig,
    /// Momentum restart on the `θ` block.
    pub theta_restart: bool,
    /// Smoothing values solved in order before the final `smoothing.eta`;
    /// empty disables continuation.
    #[serde(default)]
    pub eta_continuation: Vec<f64>,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            smoothing: SmoothingConfig::default(),
            p_total: 100.0,
            max_outer: 20,
            outer_tol: 1e-5,
            apg: ApgConfig::default(),
            line_search: LineSearchConfig::default(),
            theta_restart: true,
            eta_continuation: Vec::new(),
        }
    }
}

impl OuterConfig {
    pub fn validate(&self) -> Result<()> {
        SmoothingConfig::new(self.smoothing.eta)?;
        for &eta in &self.eta_continuation {
            SmoothingConfig::new(eta)?;
        }
        if !(self.p_total > 0.0) {
            return invalid("power budget must be positive");
        }
        if self.max_outer == 0 || self.apg.max_iter == 0 {
            return invalid("iteration limits must be at least 1");
        }
        if !(self.line_search.shrink > 1.0) {
            return invalid("line-search shrink factor must exceed 1");
        }
        Ok(())
    }
}

/// Per-outer-iteration record of the alternating minimization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    /// Smoothed objective at the starting point.
    pub initial_objective: f64,
    /// Smoothed objective after each outer iteration.
    pub objective: Vec<f64>,
    /// Exact minimax objective after each outer iteration.
    pub exact_objective: Vec<f64>,
    /// `‖ΔX‖_F + ‖Δd‖ + ‖Δθ‖` per outer iteration.
    pub successive_diff: Vec<f64>,
    pub apg_iterations_precode: Vec<usize>,
    pub apg_iterations_theta: Vec<usize>,
    pub converged: bool,
}

fn check_init(ch: &ChannelSet, sym: &SymbolBlock, init: &DesignVariables, p_total: f64) -> Result<()> {
    if init.theta.len() != ch.n_irs() {
        return invalid(format!(
            "theta has length {}, expected {}",
            init.theta.len(),
            ch.n_irs()
        ));
    }
    if init.precode.shape() != (ch.n_tx(), sym.block_len()) {
        return invalid("initial precoder shape does not match the problem");
    }
    if sym.constellation().is_qam() != init.spacing.is_some() {
        return invalid("spacing vector must be present exactly for QAM");
    }
    if !init.is_feasible(p_total, 1e-9) {
        return invalid("initial design is infeasible");
    }
    Ok(())
}

/// One APG solve of the `(X, d)` block at the design's `θ`.
pub fn solve_precode_spacing(
    obj: &Objective<'_>,
    design: &DesignVariables,
    cfg: &OuterConfig,
) -> Result<(DesignVariables, ApgTrace)> {
    let problem = PrecodeSpacingProblem::new(obj, &design.theta, cfg.p_total)?;
    let start = problem.pack(&design.precode, design.spacing.as_ref());
    let (sol, trace) = apg_solve(&problem, &start, &cfg.line_search, &cfg.apg)?;
    let (precode, spacing) = problem.unpack(&sol);
    Ok((
        DesignVariables {
            precode,
            spacing,
            theta: design.theta.clone(),
        },
        trace,
    ))
}

/// One APG solve of the `θ` block at the design's `(X, d)`.
pub fn solve_theta(
    obj: &Objective<'_>,
    design: &DesignVariables,
    cfg: &OuterConfig,
) -> Result<(DesignVariables, ApgTrace)> {
    let problem = ThetaProblem::new(obj, &design.precode, design.spacing.as_ref());
    let apg = ApgConfig {
        restart: cfg.theta_restart,
        ..cfg.apg
    };
    let (sol, trace) = apg_solve(&problem, &ThetaProblem::pack(&design.theta), &cfg.line_search, &apg)?;
    Ok((
        DesignVariables {
            theta: ThetaProblem::unpack(&sol),
            ..design.clone()
        },
        trace,
    ))
}

fn design_distance(a: &DesignVariables, b: &DesignVariables) -> f64 {
    let dx = (&a.precode - &b.precode).norm();
    let dd = match (&a.spacing, &b.spacing) {
        (Some(x), Some(y)) => (x - y).norm(),
        _ => 0.0,
    };
    dx + dd + (&a.theta - &b.theta).norm()
}

fn run_stage(
    ch: &ChannelSet,
    sym: &SymbolBlock,
    init: DesignVariables,
    cfg: &OuterConfig,
    eta: f64,
) -> Result<(DesignVariables, SolverTrace)> {
    let obj = Objective::new(ch, sym, SmoothingConfig::new(eta)?)?;
    let mut design = init;
    let mut trace = SolverTrace {
        initial_objective: obj.value(&design)?,
        ..SolverTrace::default()
    };
    for _ in 0..cfg.max_outer {
        let prev = design.clone();
        let (next, tr) = solve_precode_spacing(&obj, &design, cfg).map_err(|e| with_outer(e, &trace))?;
        design = next;
        trace.apg_iterations_precode.push(tr.iterations);
        if ch.n_irs() > 0 {
            let (next, tr) = solve_theta(&obj, &design, cfg).map_err(|e| with_outer(e, &trace))?;
            design = next;
            trace.apg_iterations_theta.push(tr.iterations);
        }
        let f = obj.value(&design)?;
        if !f.is_finite() {
            return Err(with_outer(
                Error::SolverFailure {
                    reason: "non-finite outer objective".into(),
                    trace: Vec::new(),
                },
                &trace,
            ));
        }
        trace.objective.push(f);
        trace.exact_objective.push(obj.exact(&design)?);
        let diff = design_distance(&design, &prev);
        trace.successive_diff.push(diff);
        debug_assert!(design.is_feasible(cfg.p_total, 1e-9));
        if diff <= cfg.outer_tol {
            trace.converged = true;
            break;
        }
    }
    Ok((design, trace))
}

fn with_outer(err: Error, trace: &SolverTrace) -> Error {
    match err {
        Error::SolverFailure { reason, .. } => Error::SolverFailure {
            reason,
            trace: std::iter::once(trace.initial_objective)
                .chain(trace.objective.iter().copied())
                .collect(),
        },
        other => other,
    }
}

/// Alternates `(X, d)` and `θ` APG solves until the successive difference
/// falls below `outer_tol` or `max_outer` iterations have run. With `M = 0`
/// only the `(X, d)` block is solved.
pub fn alternating_minimize(
    ch: &ChannelSet,
    sym: &SymbolBlock,
    init: &DesignVariables,
    cfg: &OuterConfig,
) -> Result<(DesignVariables, SolverTrace)> {
    cfg.validate()?;
    check_init(ch, sym, init, cfg.p_total)?;
    let mut design = init.clone();
    for &eta in &cfg.eta_continuation {
        design = run_stage(ch, sym, design, cfg, eta)?.0;
    }
    run_stage(ch, sym, design, cfg, cfg.smoothing.eta)
}

/// Starting point: random IRS phases, a zero-forcing precoder toward the
/// nominal constellation scaled so the strongest slot meets the power limit,
/// and spacings equal to that scale. Falls back to matched filtering when
/// the effective channel is rank deficient.
pub fn warm_start(ch: &ChannelSet, sym: &SymbolBlock, p_total: f64, seed: u64) -> Result<DesignVariables> {
    if !(p_total > 0.0) {
        return invalid("power budget must be positive");
    }
    if sym.n_users() != ch.n_users() {
        return invalid("symbol block and channel disagree on the number of users");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = project_theta(&DVector::from_fn(ch.n_irs(), |_, _| {
        C64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU)
    }));
    let h = ch.effective_channels(&theta)?.adjoint();
    let target = sym.symbols();
    let raw = zero_forcing(&h, target).unwrap_or_else(|_| h.adjoint() * target);
    let peak = raw.column_iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    let gain = if peak > 0.0 && peak.is_finite() {
        p_total.sqrt() / peak
    } else {
        1.0
    };
    let mut precode = if peak.is_finite() {
        raw * C64::from(gain)
    } else {
        DMatrix::zeros(ch.n_tx(), sym.block_len())
    };
    project_precode_in_place(&mut precode, p_total);
    let spacing = sym
        .constellation()
        .is_qam()
        .then(|| DVector::from_element(2 * ch.n_users(), gain));
    Ok(DesignVariables {
        precode,
        spacing,
        theta,
    })
}

/// `Hᴴ (H Hᴴ)⁻¹ S` for a K×N channel `H`.
pub(crate) fn zero_forcing(h: &DMatrix<C64>, target: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let (k, n) = h.shape();
    if k > n {
        return Err(Error::RankDeficient);
    }
    let gram = h * h.adjoint();
    let inv = gram.clone().try_inverse().ok_or(Error::RankDeficient)?;
    // Reject numerically singular Gram matrices.
    let residual = (&gram * &inv - DMatrix::<C64>::identity(k, k)).norm();
    if !residual.is_finite() || residual > 1e-6 {
        return Err(Error::RankDeficient);
    }
    Ok(h.adjoint() * inv * target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{complex_normal, iid_channels};
    use crate::constellation::Constellation;
    use approx::assert_relative_eq;
    use rand::Rng;

    struct Quadratic1d;

    impl ApgProblem for Quadratic1d {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, z: &[f64]) -> f64 {
            (z[0] - 3.0).powi(2)
        }
        fn value_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
            grad[0] = 2.0 * (z[0] - 3.0);
            self.value(z)
        }
        fn project(&self, z: &mut [f64]) {
            z[0] = z[0].clamp(-1.0, 1.0);
        }
    }

    #[test]
    fn apg_solves_clamped_quadratic() {
        let cfg = ApgConfig {
            tol: 1e-12,
            ..ApgConfig::default()
        };
        let (x, trace) = apg_solve(&Quadratic1d, &[-0.5], &LineSearchConfig::default(), &cfg).unwrap();
        assert!((x[0] - 1.0).abs() <= 1e-8);
        assert!(trace.converged);
    }

    #[test]
    fn momentum_recursion() {
        let mut m = Momentum::default();
        let mut xi_prev = 1.0f64;
        let first = m.next_alpha();
        assert_eq!(first, 0.0);
        assert_relative_eq!(m.xi(), (1.0 + 5f64.sqrt()) / 2.0, epsilon = 1e-15);
        xi_prev = (1.0 + (1.0 + 4.0 * xi_prev * xi_prev).sqrt()) / 2.0;
        let mut alpha = 0.0;
        for _ in 0..10_000 {
            let xi = (1.0 + (1.0 + 4.0 * xi_prev * xi_prev).sqrt()) / 2.0;
            let expect = (xi_prev - 1.0) / xi;
            alpha = m.next_alpha();
            assert_eq!(alpha, expect);
            xi_prev = xi;
        }
        assert!(alpha > 0.999);
        m.reset();
        assert_eq!(m.next_alpha(), 0.0);
    }

    #[test]
    fn precode_projection() {
        let p = 2.0;
        let feasible = DMatrix::from_fn(3, 4, |n, t| C64::new(0.3 * n as f64, -0.2 * t as f64));
        assert_eq!(project_precode(&feasible, p), feasible);
        let mut big = DMatrix::zeros(2, 1);
        big[(0, 0)] = C64::new(2.0 * p.sqrt(), 0.0);
        let proj = project_precode(&big, p);
        assert_relative_eq!(proj[(0, 0)].re, p.sqrt(), epsilon = 1e-15);
        let zero = DMatrix::<C64>::zeros(2, 2);
        assert_eq!(project_precode(&zero, p), zero);
    }

    #[test]
    fn spacing_and_theta_projections() {
        let d = DVector::from_vec(vec![-1.0, 2.0]);
        assert_eq!(project_spacing(&d), DVector::from_vec(vec![0.0, 2.0]));
        let th = DVector::from_vec(vec![C64::new(0.0, 0.0), C64::from_polar(3.0, 0.7)]);
        let p = project_theta(&th);
        assert_eq!(p[0], C64::new(1.0, 0.0));
        assert_relative_eq!((p[1] - C64::from_polar(1.0, 0.7)).norm(), 0.0, epsilon = 1e-15);
        let unit = DVector::from_fn(5, |j, _| C64::from_polar(1.0, j as f64));
        assert!((project_theta(&unit) - &unit).norm() <= 1e-15);
    }

    fn small_problem(c: Constellation, seed: u64) -> (ChannelSet, SymbolBlock, DesignVariables) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = iid_channels(3, 2, 4, &mut rng).unwrap();
        let sym = SymbolBlock::random(c, 2, 3, &mut rng);
        let init = warm_start(&ch, &sym, 1.0, seed).unwrap();
        (ch, sym, init)
    }

    #[test]
    fn warm_start_is_feasible_and_deterministic() {
        for c in [Constellation::qam16(), Constellation::psk8()] {
            let (ch, sym, init) = small_problem(c, 3);
            assert!(init.is_feasible(1.0, 1e-12));
            assert_eq!(project_theta(&init.theta), init.theta);
            assert_eq!(project_precode(&init.precode, 1.0), init.precode);
            if let Some(d) = &init.spacing {
                assert_eq!(&project_spacing(d), d);
            }
            assert_eq!(warm_start(&ch, &sym, 1.0, 3).unwrap(), init);
        }
    }

    #[test]
    fn warm_start_zero_forcing_has_positive_margins() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ch = iid_channels(6, 3, 2, &mut rng).unwrap();
        let sym = SymbolBlock::random(Constellation::qam16(), 3, 5, &mut rng);
        let init = warm_start(&ch, &sym, 1e4, 1).unwrap();
        let m = crate::constellation::qam_margins(&ch, &init, &sym).unwrap();
        assert!(m.worst_margin() > 0.0);
        let gain = init.spacing.as_ref().unwrap()[0];
        assert_relative_eq!(m.worst_margin(), gain, max_relative = 1e-8);
    }

    #[test]
    fn warm_start_falls_back_to_matched_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // More users than antennas: zero forcing is impossible.
        let ch = iid_channels(2, 4, 3, &mut rng).unwrap();
        let sym = SymbolBlock::random(Constellation::psk8(), 4, 2, &mut rng);
        let init = warm_start(&ch, &sym, 1.0, 2).unwrap();
        assert!(init.is_feasible(1.0, 1e-12));
        assert!(init.precode.norm() > 0.0);
    }

    /// Plain projected gradient with a fixed 1/L step, run long.
    fn projected_gradient_reference<P: ApgProblem>(problem: &P, init: &[f64], iters: usize) -> f64 {
        let mut x = init.to_vec();
        let mut g = vec![0.0; x.len()];
        let mut step_inv = 1.0;
        for _ in 0..iters {
            let f = problem.value_grad(&x, &mut g);
            loop {
                let mut cand: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - b / step_inv).collect();
                problem.project(&mut cand);
                let d2: f64 = cand.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum();
                let lin: f64 = cand.iter().zip(&x).zip(&g).map(|((a, b), gg)| (a - b) * gg).sum();
                if problem.value(&cand) <= f + lin + 0.5 * step_inv * d2 {
                    x = cand;
                    break;
                }
                step_inv *= 2.0;
            }
        }
        problem.value(&x)
    }

    #[test]
    fn apg_matches_projected_gradient_on_convex_block() {
        for seed in 0..3 {
            let (ch, sym, init) = small_problem(Constellation::qam16(), 20 + seed);
            let obj = Objective::new(&ch, &sym, SmoothingConfig::new(0.1).unwrap()).unwrap();
            let problem = PrecodeSpacingProblem::new(&obj, &init.theta, 1.0).unwrap();
            let start = problem.pack(&init.precode, init.spacing.as_ref());
            let cfg = ApgConfig {
                max_iter: 20_000,
                tol: 1e-12,
                ..ApgConfig::default()
            };
            let (sol, _) = apg_solve(&problem, &start, &LineSearchConfig::default(), &cfg).unwrap();
            let reference = projected_gradient_reference(&problem, &start, 1_000_000);
            assert!(
                (problem.value(&sol) - reference).abs() <= 1e-6,
                "{} vs {reference}",
                problem.value(&sol)
            );
        }
    }

    #[test]
    fn alternating_minimization_descends() {
        for c in [Constellation::qam16(), Constellation::psk8()] {
            let (ch, sym, init) = small_problem(c, 30);
            let cfg = OuterConfig {
                p_total: 1.0,
                smoothing: SmoothingConfig::new(0.05).unwrap(),
                ..OuterConfig::default()
            };
            let (design, trace) = alternating_minimize(&ch, &sym, &init, &cfg).unwrap();
            assert!(design.is_feasible(1.0, 1e-9));
            let mut prev = trace.initial_objective;
            for &f in &trace.objective {
                assert!(f <= prev + 1e-9);
                prev = f;
            }
            assert!(trace.objective.len() <= cfg.max_outer);
            assert_eq!(trace.apg_iterations_theta.len(), trace.objective.len());
        }
    }

    #[test]
    fn no_irs_skips_theta_block() {
        let (ch, sym, _) = small_problem(Constellation::qam16(), 31);
        let direct = ch.without_irs();
        let init = warm_start(&direct, &sym, 1.0, 1).unwrap();
        let cfg = OuterConfig {
            p_total: 1.0,
            ..OuterConfig::default()
        };
        let (design, trace) = alternating_minimize(&direct, &sym, &init, &cfg).unwrap();
        assert!(trace.apg_iterations_theta.is_empty());
        assert_eq!(design.theta.len(), 0);
    }

    #[test]
    fn single_user_high_power_is_error_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let ch = ChannelSet::direct_only(vec![DVector::from_fn(3, |_, _| complex_normal(&mut rng))]).unwrap();
        let sym = SymbolBlock::random(Constellation::qam16(), 1, 1, &mut rng);
        let cfg = OuterConfig {
            p_total: 1e3,
            ..OuterConfig::default()
        };
        let init = warm_start(&ch, &sym, cfg.p_total, 0).unwrap();
        let (design, _) = alternating_minimize(&ch, &sym, &init, &cfg).unwrap();
        let m = crate::constellation::qam_margins(&ch, &design, &sym).unwrap();
        assert!(m.worst_margin() > 0.0);
        let counts = crate::sim::run_block_trial(&ch, &design, &sym, 0.0, &mut rng).unwrap();
        assert_eq!(counts.bit_errors, 0);
    }

    #[test]
    fn determinism() {
        let (ch, sym, init) = small_problem(Constellation::psk8(), 50);
        let cfg = OuterConfig {
            p_total: 1.0,
            ..OuterConfig::default()
        };
        let a = alternating_minimize(&ch, &sym, &init, &cfg).unwrap();
        let b = alternating_minimize(&ch, &sym, &init, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let (ch, sym, mut init) = small_problem(Constellation::qam16(), 60);
        init.theta[0] *= C64::from(2.0);
        assert!(alternating_minimize(
            &ch,
            &sym,
            &init,
            &OuterConfig {
                p_total: 1.0,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn non_finite_objective_is_a_solver_failure() {
        struct Broken;
        impl ApgProblem for Broken {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, z: &[f64]) -> f64 {
                if z[0] > 0.5 {
                    f64::NAN
                } else {
                    z[0]
                }
            }
            fn value_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
                grad[0] = f64::NAN;
                self.value(z)
            }
            fn project(&self, _z: &mut [f64]) {}
        }
        let err = apg_solve(&Broken, &[0.0], &LineSearchConfig::default(), &ApgConfig::default()).unwrap_err();
        assert!(matches!(err, Error::SolverFailure { .. }));
    }

    #[test]
    fn nearest_point_property_of_precode_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let p = 1.5;
        for _ in 0..20 {
            let x = DMatrix::from_fn(3, 2, |_, _| complex_normal(&mut rng) * 2.0);
            let px = project_precode(&x, p);
            let dist = (&x - &px).norm();
            for _ in 0..100 {
                let y = project_precode(&DMatrix::from_fn(3, 2, |_, _| complex_normal(&mut rng)), p);
                assert!(dist <= (&x - &y).norm() + 1e-12);
            }
        }
        let _ = rng.random::<f64>();
    }
}
