//! Reference transmission schemes: zero forcing without IRS, SLP without
//! IRS and SLP with random (unoptimized) IRS phases.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{ChannelSet, DesignVariables, SymbolBlock};
use crate::objective::{Objective, SmoothingConfig};
use crate::optimizer::{
    alternating_minimize, solve_precode_spacing, warm_start, zero_forcing, OuterConfig, SolverTrace,
};
use crate::C64;

/// Transmission schemes compared in BER sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    /// Joint SLP and IRS design.
    #[serde(rename = "slp-irs")]
    SlpIrs,
    #[serde(rename = "slp-noirs")]
    SlpNoIrs,
    /// SLP with IRS phases fixed at random.
    #[serde(rename = "slp-random-theta")]
    SlpRandomTheta,
    #[serde(rename = "zf-noirs")]
    ZfNoIrs,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::SlpIrs,
        Scheme::SlpNoIrs,
        Scheme::SlpRandomTheta,
        Scheme::ZfNoIrs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::SlpIrs => "slp-irs",
            Scheme::SlpNoIrs => "slp-noirs",
            Scheme::SlpRandomTheta => "slp-random-theta",
            Scheme::ZfNoIrs => "zf-noirs",
        }
    }

    /// Whether the scheme uses the IRS at all.
    pub fn uses_irs(self) -> bool {
        matches!(self, Scheme::SlpIrs | Scheme::SlpRandomTheta)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme '{s}'")))
    }
}

/// Zero-forcing precoder with a common real gain.
#[derive(Debug, Clone, PartialEq)]
pub struct ZfPrecoder {
    pub precode: DMatrix<C64>,
    /// Receivers see `gain · s` without noise.
    pub gain: f64,
}

/// `X = gain · Hᴴ(HHᴴ)⁻¹ S` with `H` stacking `h_{d,i}ᴴ`; the gain sets the
/// block-average per-slot power to `p_total`.
pub fn zf_precode(direct: &[DVector<C64>], sym: &SymbolBlock, p_total: f64) -> Result<ZfPrecoder> {
    if !(p_total > 0.0) {
        return invalid("power budget must be positive");
    }
    if direct.len() != sym.n_users() {
        return invalid("symbol block and channel disagree on the number of users");
    }
    let h = DMatrix::from_columns(direct).adjoint();
    let raw = zero_forcing(&h, sym.symbols())?;
    let avg_power = raw.norm_squared() / sym.block_len() as f64;
    if !(avg_power > 0.0) {
        return Err(Error::RankDeficient);
    }
    let gain = (p_total / avg_power).sqrt();
    Ok(ZfPrecoder {
        precode: raw * C64::from(gain),
        gain,
    })
}

/// A design together with the channel it is meant for.
#[derive(Debug, Clone)]
pub struct SchemeDesign {
    pub scheme: Scheme,
    pub channels: ChannelSet,
    pub design: DesignVariables,
    pub trace: Option<SolverTrace>,
}

impl SchemeDesign {
    /// Exact minimax objective of the design on its own channel.
    pub fn exact_objective(&self, sym: &SymbolBlock) -> Result<f64> {
        Objective::new(&self.channels, sym, SmoothingConfig::default())?.exact(&self.design)
    }
}

/// Zero forcing on the direct links; QAM receivers use the ZF gain as spacing.
pub fn zf_no_irs(ch: &ChannelSet, sym: &SymbolBlock, p_total: f64) -> Result<SchemeDesign> {
    let zf = zf_precode(ch.direct(), sym, p_total)?;
    let spacing = sym
        .constellation()
        .is_qam()
        .then(|| DVector::from_element(2 * ch.n_users(), zf.gain));
    Ok(SchemeDesign {
        scheme: Scheme::ZfNoIrs,
        channels: ch.without_irs(),
        design: DesignVariables {
            precode: zf.precode,
            spacing,
            theta: DVector::zeros(0),
        },
        trace: None,
    })
}

/// The full joint design.
pub fn slp_irs(ch: &ChannelSet, sym: &SymbolBlock, cfg: &OuterConfig, seed: u64) -> Result<SchemeDesign> {
    let init = warm_start(ch, sym, cfg.p_total, seed)?;
    let (design, trace) = alternating_minimize(ch, sym, &init, cfg)?;
    Ok(SchemeDesign {
        scheme: Scheme::SlpIrs,
        channels: ch.clone(),
        design,
        trace: Some(trace),
    })
}

/// The same solver on the direct links only.
pub fn slp_no_irs(ch: &ChannelSet, sym: &SymbolBlock, cfg: &OuterConfig, seed: u64) -> Result<SchemeDesign> {
    let direct = ch.without_irs();
    let init = warm_start(&direct, sym, cfg.p_total, seed)?;
    let (design, trace) = alternating_minimize(&direct, sym, &init, cfg)?;
    Ok(SchemeDesign {
        scheme: Scheme::SlpNoIrs,
        channels: direct,
        design,
        trace: Some(trace),
    })
}

/// One `(X, d)` solve with `θ` left at the random phases of the warm start.
///
/// Uses the same warm start as [`slp_irs`] for a given seed, so the joint
/// design's first half-iteration reproduces this solve exactly.
pub fn slp_random_theta(ch: &ChannelSet, sym: &SymbolBlock, cfg: &OuterConfig, seed: u64) -> Result<SchemeDesign> {
    cfg.validate()?;
    let init = warm_start(ch, sym, cfg.p_total, seed)?;
    let obj = Objective::new(ch, sym, cfg.smoothing)?;
    let (design, apg) = solve_precode_spacing(&obj, &init, cfg)?;
    let f = obj.value(&design)?;
    let trace = SolverTrace {
        initial_objective: apg.objective[0],
        objective: vec![f],
        exact_objective: vec![obj.exact(&design)?],
        successive_diff: vec![],
        apg_iterations_precode: vec![apg.iterations],
        apg_iterations_theta: vec![],
        converged: apg.converged,
    };
    Ok(SchemeDesign {
        scheme: Scheme::SlpRandomTheta,
        channels: ch.clone(),
        design,
        trace: Some(trace),
    })
}

/// Designs `scheme` for one realization.
pub fn design_scheme(
    scheme: Scheme,
    ch: &ChannelSet,
    sym: &SymbolBlock,
    cfg: &OuterConfig,
    seed: u64,
) -> Result<SchemeDesign> {
    match scheme {
        Scheme::SlpIrs => slp_irs(ch, sym, cfg, seed),
        Scheme::SlpNoIrs => slp_no_irs(ch, sym, cfg, seed),
        Scheme::SlpRandomTheta => slp_random_theta(ch, sym, cfg, seed),
        Scheme::ZfNoIrs => zf_no_irs(ch, sym, cfg.p_total),
    }
}
