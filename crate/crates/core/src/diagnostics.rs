//! Randomized self-checks: analytic gradients against finite differences,
//! projection properties and the smoothing sandwich bound.
//!
//! Every check draws small random instances (all dimensions at most 4) from
//! a seeded generator, so reports are reproducible.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{complex_normal, iid_channels};
use crate::constellation::Constellation;
use crate::error::Result;
use crate::model::{ChannelSet, DesignVariables, SymbolBlock};
use crate::objective::{
    finite_diff_gradient, pack_design, pack_gradient, unpack_design, GradBlocks, Objective, SmoothingConfig,
};
use crate::optimizer::{project_precode, project_spacing, project_theta};
use crate::C64;

/// Largest value of N, K, M and T in random instances.
pub const MAX_DIM: usize = 4;

/// A random channel, design and symbol block with dimensions in `1..=max_dim`.
///
/// The design is generally infeasible; the objective is defined everywhere.
pub fn random_instance<R: Rng + ?Sized>(
    constellation: Constellation,
    max_dim: usize,
    rng: &mut R,
) -> Result<(ChannelSet, DesignVariables, SymbolBlock)> {
    let max_dim = max_dim.max(1);
    let n = rng.random_range(1..=max_dim);
    let k = rng.random_range(1..=max_dim);
    let m = rng.random_range(1..=max_dim);
    let t = rng.random_range(1..=max_dim);
    let ch = iid_channels(n, k, m, rng)?;
    let design = DesignVariables {
        precode: DMatrix::from_fn(n, t, |_, _| complex_normal(rng)),
        spacing: constellation
            .is_qam()
            .then(|| DVector::from_fn(2 * k, |_, _| rng.random::<f64>())),
        theta: DVector::from_fn(m, |_, _| {
            C64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU)
        }),
    };
    let sym = SymbolBlock::random(constellation, k, t, rng);
    Ok((ch, design, sym))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub eta: f64,
    pub instances: usize,
    /// Central-difference step.
    pub step: f64,
    /// Relative perturbation added to the analytic gradient before the
    /// comparison; nonzero only to exercise failure reporting.
    pub corruption: f64,
}

impl GradientCheck {
    pub fn new(eta: f64, instances: usize) -> Self {
        Self {
            eta,
            instances,
            step: 1e-6,
            corruption: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub eta: f64,
    pub instances: usize,
    /// Largest `‖∇f − ∇_FD f‖ / ‖∇_FD f‖` observed.
    pub max_rel_error: f64,
}

/// Compares the analytic gradient of the smoothed objective with central
/// differences over the real parameterization of `(X, d, θ)`.
pub fn gradient_check(constellation: Constellation, check: &GradientCheck, seed: u64) -> Result<GradientReport> {
    let smoothing = SmoothingConfig::new(check.eta)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..check.instances {
        let (ch, design, sym) = random_instance(constellation, MAX_DIM, &mut rng)?;
        let obj = Objective::new(&ch, &sym, smoothing)?;
        let eval = obj.evaluate(&design, GradBlocks::All)?;
        let mut analytic = pack_gradient(&eval);
        if check.corruption != 0.0 {
            for (j, g) in analytic.iter_mut().enumerate() {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                *g *= 1.0 + sign * check.corruption;
            }
        }
        let point = pack_design(&design);
        // Evaluation errors surface as a NaN and hence an infinite error.
        let fd = finite_diff_gradient(
            |z| obj.value(&unpack_design(z, &design)).unwrap_or(f64::NAN),
            &point,
            check.step,
        );
        let err = norm(analytic.iter().zip(&fd).map(|(a, b)| a - b));
        let scale = norm(fd.iter().copied()).max(f64::MIN_POSITIVE);
        let rel = err / scale;
        worst = if rel.is_nan() { f64::INFINITY } else { worst.max(rel) };
    }
    Ok(GradientReport {
        eta: check.eta,
        instances: check.instances,
        max_rel_error: worst,
    })
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub inputs: usize,
    pub feasible_samples: usize,
    /// Inputs whose projection moved when projected again.
    pub idempotence_failures: usize,
    /// Sampled feasible points strictly closer to an input than its projection.
    pub nearest_point_violations: usize,
    /// Projections that were themselves infeasible.
    pub infeasible_outputs: usize,
}

impl ProjectionReport {
    pub fn passed(&self) -> bool {
        self.idempotence_failures == 0 && self.nearest_point_violations == 0 && self.infeasible_outputs == 0
    }
}

/// Per-projection results, in the order precoder, spacing, phases.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReports {
    pub precode: ProjectionReport,
    pub spacing: ProjectionReport,
    pub theta: ProjectionReport,
}

impl ProjectionReports {
    pub fn passed(&self) -> bool {
        self.precode.passed() && self.spacing.passed() && self.theta.passed()
    }
}

/// Tolerance for counting a sampled point as strictly closer.
const DISTANCE_SLACK: f64 = 1e-12;

/// Checks exact idempotence and samples the nearest-point property of the
/// three feasible-set projections. Half of the feasible samples are drawn
/// near the projection itself, the rest across the whole set.
pub fn projection_check(inputs: usize, feasible_samples: usize, seed: u64) -> ProjectionReports {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = ProjectionReports::default();
    for r in [&mut out.precode, &mut out.spacing, &mut out.theta] {
        r.inputs = inputs;
        r.feasible_samples = feasible_samples;
    }
    for _ in 0..inputs {
        let n = rng.random_range(1..=MAX_DIM);
        let t = rng.random_range(1..=MAX_DIM);
        let p_total = 10f64.powf(rng.random_range(-2.0..2.0));
        let scale = 10f64.powf(rng.random_range(-1.0..1.0)) * p_total.sqrt();
        let x = DMatrix::from_fn(n, t, |_, _| complex_normal(&mut rng) * scale);
        let px = project_precode(&x, p_total);
        let feasible_x = |y: &DMatrix<C64>| y.column_iter().all(|c| c.norm_squared() <= p_total * (1.0 + 1e-12));
        tally(
            &mut out.precode,
            &x,
            &px,
            &project_precode(&px, p_total),
            feasible_x(&px),
            (0..feasible_samples).map(|s| {
                let y = if s % 2 == 0 {
                    let r = 10f64.powf(rng.random_range(-6.0..0.0)) * scale;
                    px.clone() + DMatrix::from_fn(n, t, |_, _| complex_normal(&mut rng) * r)
                } else {
                    DMatrix::from_fn(n, t, |_, _| complex_normal(&mut rng))
                };
                // Pulling each column into the ball keeps samples feasible.
                project_precode(&y, p_total)
            }),
            |a, b| (a - b).norm(),
        );

        let len = rng.random_range(1..=2 * MAX_DIM);
        let d = DVector::from_fn(len, |_, _| rng.random_range(-2.0..2.0));
        let pd = project_spacing(&d);
        tally(
            &mut out.spacing,
            &d,
            &pd,
            &project_spacing(&pd),
            pd.iter().all(|&v| v >= 0.0),
            (0..feasible_samples).map(|s| {
                if s % 2 == 0 {
                    let r = 10f64.powf(rng.random_range(-6.0..0.0));
                    pd.map(|v| (v + rng.random_range(-r..r)).max(0.0))
                } else {
                    DVector::from_fn(len, |_, _| rng.random_range(0.0..2.0))
                }
            }),
            |a, b| (a - b).norm(),
        );

        let m = rng.random_range(1..=MAX_DIM);
        let theta = DVector::from_fn(m, |_, _| complex_normal(&mut rng) * scale);
        let ptheta = project_theta(&theta);
        tally(
            &mut out.theta,
            &theta,
            &ptheta,
            &project_theta(&ptheta),
            ptheta.iter().all(|z| (z.norm() - 1.0).abs() <= 1e-12),
            (0..feasible_samples).map(|s| {
                if s % 2 == 0 {
                    let r = 10f64.powf(rng.random_range(-6.0..0.0));
                    ptheta.map(|z| z * C64::from_polar(1.0, rng.random_range(-r..r)))
                } else {
                    DVector::from_fn(m, |_, _| {
                        C64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU)
                    })
                }
            }),
            |a, b| (a - b).norm(),
        );
    }
    out
}

fn tally<T: PartialEq>(
    report: &mut ProjectionReport,
    input: &T,
    projected: &T,
    reprojected: &T,
    feasible: bool,
    samples: impl Iterator<Item = T>,
    dist: impl Fn(&T, &T) -> f64,
) {
    if reprojected != projected {
        report.idempotence_failures += 1;
    }
    if !feasible {
        report.infeasible_outputs += 1;
    }
    let own = dist(input, projected);
    for y in samples {
        if dist(input, &y) < own - DISTANCE_SLACK * (1.0 + own) {
            report.nearest_point_violations += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub instances: usize,
    pub violations: usize,
    /// Largest `(f − g) / (η log #terms)`; at most 1 when the bound holds.
    pub max_gap_ratio: f64,
}

/// Checks `g ≤ f ≤ g + η log(#terms)` on random instances, with η drawn
/// log-uniformly from `[1e-3, 1]`.
pub fn sandwich_check(constellation: Constellation, instances: usize, seed: u64) -> Result<SandwichReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut max_ratio = 0.0f64;
    for _ in 0..instances {
        let (ch, design, sym) = random_instance(constellation, MAX_DIM, &mut rng)?;
        let eta = 10f64.powf(rng.random_range(-3.0..0.0));
        let obj = Objective::new(&ch, &sym, SmoothingConfig::new(eta)?)?;
        let g = obj.exact(&design)?;
        let f = obj.value(&design)?;
        let width = eta * (obj.term_count() as f64).ln();
        let slack = 1e-12 * (1.0 + g.abs());
        if !(g <= f + slack && f <= g + width + slack) {
            violations += 1;
        }
        if width > 0.0 {
            max_ratio = max_ratio.max((f - g) / width);
        }
    }
    Ok(SandwichReport {
        instances,
        violations,
        max_gap_ratio: max_ratio,
    })
}
