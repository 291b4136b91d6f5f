//! Exact minimax objective, its log-sum-exp smoothing and analytic gradients.
//!
//! Every term of the smoothed objective is a negated decision margin that is
//! affine in the received sample `r_{i,t} = h_iᴴ x_t` (and in the spacing
//! vector for QAM). Writing `∂f/∂Re r + j·∂f/∂Im r = g_{i,t}`, the gradients
//! over the real parameterization are
//!
//! ```text
//! ∇_{x_t} f = Σ_i h_i g_{i,t}
//! ∇_θ f     = Σ_{i,t} conj(g_{i,t}) H_{r,i}ᴴ x_t
//! ```
//!
//! Complex gradients are packed as `∂f/∂Re z + j·∂f/∂Im z`, so a step
//! `z − μ·∇f` is a descent step in the real coordinates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constellation::{self, qam_masks, Constellation, PskSpec, QamMasks, QamSpec};
use crate::error::{invalid, Error, Result};
use crate::model::{ChannelSet, DesignVariables, SymbolBlock};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub eta: f64,
}

impl SmoothingConfig {
    pub fn new(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return invalid(format!("smoothing parameter must be positive, got {eta}"));
        }
        Ok(Self { eta })
    }
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { eta: 0.01 }
    }
}

/// Smoothed objective value with its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub grad_x: DMatrix<C64>,
    /// Absent for PSK.
    pub grad_d: Option<DVector<f64>>,
    pub grad_theta: DVector<C64>,
}

/// Which gradient blocks to populate. Skipped blocks are returned as zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradBlocks {
    PrecodeSpacing,
    Theta,
    All,
}

impl GradBlocks {
    fn precode(self) -> bool {
        !matches!(self, GradBlocks::Theta)
    }

    fn theta(self) -> bool {
        !matches!(self, GradBlocks::PrecodeSpacing)
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Qam,
    Psk(PskSpec),
}

/// Objective bound to one channel realization and symbol block.
pub struct Objective<'a> {
    ch: &'a ChannelSet,
    sym: &'a SymbolBlock,
    eta: f64,
    kind: Kind,
    masks: Option<QamMasks>,
}

/// Running log-sum-exp accumulator over a fixed term list.
struct Lse {
    eta: f64,
    max: f64,
    sum: f64,
}

impl Lse {
    fn new(eta: f64, terms: impl Iterator<Item = f64>) -> Self {
        let values: Vec<f64> = terms.collect();
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum = values.iter().map(|&z| ((z - max) / eta).exp()).sum();
        Self { eta, max, sum }
    }

    fn value(&self) -> f64 {
        self.max + self.eta * self.sum.ln()
    }

    /// Softmax weight of term `z`.
    fn weight(&self, z: f64) -> f64 {
        ((z - self.max) / self.eta).exp() / self.sum
    }
}

impl<'a> Objective<'a> {
    pub fn new(ch: &'a ChannelSet, sym: &'a SymbolBlock, cfg: SmoothingConfig) -> Result<Self> {
        SmoothingConfig::new(cfg.eta)?;
        if sym.n_users() != ch.n_users() {
            return invalid(format!(
                "symbol block has {} users, channel has {}",
                sym.n_users(),
                ch.n_users()
            ));
        }
        let (kind, masks) = match sym.constellation() {
            Constellation::Qam { b_level } => {
                let spec = QamSpec::new(b_level)?;
                (Kind::Qam, Some(qam_masks(spec, sym)))
            }
            Constellation::Psk { order } => (Kind::Psk(PskSpec::new(order)?), None),
        };
        Ok(Self {
            ch,
            sym,
            eta: cfg.eta,
            kind,
            masks,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn channel(&self) -> &ChannelSet {
        self.ch
    }

    pub fn symbols(&self) -> &SymbolBlock {
        self.sym
    }

    pub fn is_qam(&self) -> bool {
        matches!(self.kind, Kind::Qam)
    }

    /// Number of exponential terms in the log-sum-exp.
    pub fn term_count(&self) -> usize {
        match &self.masks {
            Some(m) => [&m.b_re, &m.c_re, &m.b_im, &m.c_im]
                .iter()
                .map(|mask| mask.iter().filter(|&&a| a).count())
                .sum(),
            None => 2 * self.sym.n_users() * self.sym.block_len(),
        }
    }

    fn check(&self, precode: &DMatrix<C64>, spacing: Option<&DVector<f64>>) -> Result<()> {
        if precode.nrows() != self.ch.n_tx() || precode.ncols() != self.sym.block_len() {
            return invalid(format!(
                "precoder is {}x{}, expected {}x{}",
                precode.nrows(),
                precode.ncols(),
                self.ch.n_tx(),
                self.sym.block_len()
            ));
        }
        if let Kind::Qam = self.kind {
            let d = spacing.ok_or_else(|| Error::InvalidState("QAM objective needs a spacing vector".into()))?;
            if d.len() != 2 * self.ch.n_users() {
                return invalid(format!(
                    "spacing has length {}, expected {}",
                    d.len(),
                    2 * self.ch.n_users()
                ));
            }
        }
        Ok(())
    }

    /// Negated margins `(active, z)` in a fixed order: QAM as
    /// `(b_re, c_re, b_im, c_im)` per entry, PSK as `(u, v)`.
    fn negated_margins(&self, received: &DMatrix<C64>, spacing: Option<&DVector<f64>>) -> Vec<(bool, f64)> {
        let (k, t) = received.shape();
        let s = self.sym.symbols();
        let mut out = Vec::with_capacity(4 * k * t);
        match self.kind {
            Kind::Qam => {
                let d = spacing.expect("checked");
                let masks = self.masks.as_ref().expect("QAM masks");
                for tt in 0..t {
                    for i in 0..k {
                        let ix = (i, tt);
                        let (dr, di) = (d[i], d[k + i]);
                        let er = received[ix].re - dr * s[ix].re;
                        let ei = received[ix].im - di * s[ix].im;
                        out.push((masks.b_re[ix], er - dr));
                        out.push((masks.c_re[ix], -dr - er));
                        out.push((masks.b_im[ix], ei - di));
                        out.push((masks.c_im[ix], -di - ei));
                    }
                }
            }
            Kind::Psk(spec) => {
                let cot = spec.cot_half_angle();
                for tt in 0..t {
                    for i in 0..k {
                        let q = received[(i, tt)] * s[(i, tt)].conj();
                        out.push((true, -(q.re - q.im * cot)));
                        out.push((true, -(q.re + q.im * cot)));
                    }
                }
            }
        }
        out
    }

    fn lse(&self, terms: &[(bool, f64)]) -> Lse {
        Lse::new(self.eta, terms.iter().filter(|(a, _)| *a).map(|&(_, z)| z))
    }

    /// Exact minimax objective: the largest active negated margin.
    pub fn exact(&self, design: &DesignVariables) -> Result<f64> {
        self.check(&design.precode, design.spacing.as_ref())?;
        let received = self.ch.noiseless_received(&design.theta, &design.precode)?;
        Ok(self
            .negated_margins(&received, design.spacing.as_ref())
            .into_iter()
            .filter(|(a, _)| *a)
            .map(|(_, z)| z)
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// Smoothed value from precomputed effective channels (N×K).
    pub fn value_with_channels(
        &self,
        heff: &DMatrix<C64>,
        precode: &DMatrix<C64>,
        spacing: Option<&DVector<f64>>,
    ) -> f64 {
        let received = heff.adjoint() * precode;
        self.lse(&self.negated_margins(&received, spacing)).value()
    }

    /// Smoothed objective value only.
    pub fn value(&self, design: &DesignVariables) -> Result<f64> {
        self.check(&design.precode, design.spacing.as_ref())?;
        let heff = self.ch.effective_channels(&design.theta)?;
        Ok(self.value_with_channels(&heff, &design.precode, design.spacing.as_ref()))
    }

    /// Smoothed value and the requested gradients.
    pub fn evaluate(&self, design: &DesignVariables, blocks: GradBlocks) -> Result<ObjectiveEval> {
        self.check(&design.precode, design.spacing.as_ref())?;
        let heff = self.ch.effective_channels(&design.theta)?;
        Ok(self.evaluate_with_channels(&heff, &design.precode, design.spacing.as_ref(), &design.theta, blocks))
    }

    pub(crate) fn evaluate_with_channels(
        &self,
        heff: &DMatrix<C64>,
        precode: &DMatrix<C64>,
        spacing: Option<&DVector<f64>>,
        theta: &DVector<C64>,
        blocks: GradBlocks,
    ) -> ObjectiveEval {
        let received = heff.adjoint() * precode;
        let (k, t) = received.shape();
        let terms = self.negated_margins(&received, spacing);
        let lse = self.lse(&terms);
        let w = |(active, z): (bool, f64)| if active { lse.weight(z) } else { 0.0 };
        let s = self.sym.symbols();

        // g = ∂f/∂Re r + j ∂f/∂Im r per (i, t).
        let mut g = DMatrix::<C64>::zeros(k, t);
        let mut grad_d = None;
        match self.kind {
            Kind::Qam => {
                let mut gd = DVector::zeros(2 * k);
                for (n, chunk) in terms.chunks_exact(4).enumerate() {
                    let (tt, i) = (n / k, n % k);
                    let [wbr, wcr, wbi, wci] = [w(chunk[0]), w(chunk[1]), w(chunk[2]), w(chunk[3])];
                    let sv = s[(i, tt)];
                    g[(i, tt)] = C64::new(wbr - wcr, wbi - wci);
                    gd[i] -= wbr * (1.0 + sv.re) + wcr * (1.0 - sv.re);
                    gd[k + i] -= wbi * (1.0 + sv.im) + wci * (1.0 - sv.im);
                }
                grad_d = Some(gd);
            }
            Kind::Psk(spec) => {
                let cot = spec.cot_half_angle();
                for (n, chunk) in terms.chunks_exact(2).enumerate() {
                    let (tt, i) = (n / k, n % k);
                    let (wu, wv) = (w(chunk[0]), w(chunk[1]));
                    let gq = C64::new(-(wu + wv), cot * (wu - wv));
                    g[(i, tt)] = gq * s[(i, tt)];
                }
            }
        }

        let grad_x = if blocks.precode() {
            heff * &g
        } else {
            DMatrix::zeros(precode.nrows(), t)
        };
        if !blocks.precode() {
            grad_d = grad_d.map(|d| d * 0.0);
        }
        let m = theta.len();
        let mut grad_theta = DVector::zeros(m);
        if blocks.theta() && m > 0 {
            let gc = g.map(|z| z.conj());
            for i in 0..k {
                let combined = precode * gc.row(i).transpose();
                grad_theta += self.ch.reflect_mat(i).adjoint() * combined;
            }
        }
        ObjectiveEval {
            value: lse.value(),
            grad_x,
            grad_d,
            grad_theta,
        }
    }
}

/// Exact QAM objective `g`: the largest masked negated margin.
pub fn exact_objective_qam(ch: &ChannelSet, design: &DesignVariables, sym: &SymbolBlock) -> Result<f64> {
    if !sym.constellation().is_qam() {
        return invalid("symbol block is not QAM");
    }
    Objective::new(ch, sym, SmoothingConfig::default())?.exact(design)
}

/// Exact PSK objective `max_{i,t} max(−u, −v)`.
pub fn exact_objective_psk(
    ch: &ChannelSet,
    precode: &DMatrix<C64>,
    theta: &DVector<C64>,
    sym: &SymbolBlock,
) -> Result<f64> {
    if sym.constellation().is_qam() {
        return invalid("symbol block is not PSK");
    }
    let design = DesignVariables {
        precode: precode.clone(),
        spacing: None,
        theta: theta.clone(),
    };
    Objective::new(ch, sym, SmoothingConfig::default())?.exact(&design)
}

/// Smoothed QAM objective with gradients in `X`, `d` and `θ`.
pub fn smoothed_objective_qam(
    ch: &ChannelSet,
    design: &DesignVariables,
    sym: &SymbolBlock,
    cfg: SmoothingConfig,
) -> Result<ObjectiveEval> {
    if !sym.constellation().is_qam() {
        return invalid("symbol block is not QAM");
    }
    Objective::new(ch, sym, cfg)?.evaluate(design, GradBlocks::All)
}

/// Smoothed PSK objective with gradients in `X` and `θ`.
pub fn smoothed_objective_psk(
    ch: &ChannelSet,
    precode: &DMatrix<C64>,
    theta: &DVector<C64>,
    sym: &SymbolBlock,
    cfg: SmoothingConfig,
) -> Result<ObjectiveEval> {
    if sym.constellation().is_qam() {
        return invalid("symbol block is not PSK");
    }
    let design = DesignVariables {
        precode: precode.clone(),
        spacing: None,
        theta: theta.clone(),
    };
    Objective::new(ch, sym, cfg)?.evaluate(&design, GradBlocks::All)
}

/// Exact objective of either constellation.
pub fn exact_objective(ch: &ChannelSet, design: &DesignVariables, sym: &SymbolBlock) -> Result<f64> {
    Objective::new(ch, sym, SmoothingConfig::default())?.exact(design)
}

/// Central finite-difference gradient over every real coordinate.
pub fn finite_diff_gradient<F>(f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    (0..point.len())
        .map(|j| {
            let orig = x[j];
            x[j] = orig + step;
            let up = f(&x);
            x[j] = orig - step;
            let down = f(&x);
            x[j] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Flattens a design into real coordinates: `X` (column-major, re/im
/// interleaved), then `d`, then `θ` (re/im interleaved).
pub fn pack_design(design: &DesignVariables) -> Vec<f64> {
    let mut out = Vec::new();
    out.extend(design.precode.iter().flat_map(|z| [z.re, z.im]));
    if let Some(d) = &design.spacing {
        out.extend(d.iter().copied());
    }
    out.extend(design.theta.iter().flat_map(|z| [z.re, z.im]));
    out
}

/// Inverse of [`pack_design`] using `like` for the shapes.
pub fn unpack_design(values: &[f64], like: &DesignVariables) -> DesignVariables {
    let (n, t) = like.precode.shape();
    let n_x = 2 * n * t;
    let n_d = like.spacing.as_ref().map_or(0, |d| d.len());
    let complex = |v: &[f64]| v.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect::<Vec<_>>();
    DesignVariables {
        precode: DMatrix::from_vec(n, t, complex(&values[..n_x])),
        spacing: like
            .spacing
            .as_ref()
            .map(|_| DVector::from_column_slice(&values[n_x..n_x + n_d])),
        theta: DVector::from_vec(complex(&values[n_x + n_d..])),
    }
}

/// Flattens the gradient blocks in the same order as [`pack_design`].
pub fn pack_gradient(eval: &ObjectiveEval) -> Vec<f64> {
    let mut out = Vec::new();
    out.extend(eval.grad_x.iter().flat_map(|z| [z.re, z.im]));
    if let Some(d) = &eval.grad_d {
        out.extend(d.iter().copied());
    }
    out.extend(eval.grad_theta.iter().flat_map(|z| [z.re, z.im]));
    out
}

/// Number of active log-sum-exp terms of a symbol block.
pub fn term_count(sym: &SymbolBlock) -> usize {
    match sym.constellation().qam() {
        Some(spec) => {
            let m = constellation::qam_masks(spec, sym);
            [&m.b_re, &m.c_re, &m.b_im, &m.c_im]
                .iter()
                .map(|mask| mask.iter().filter(|&&a| a).count())
                .sum()
        }
        None => 2 * sym.n_users() * sym.block_len(),
    }
}
