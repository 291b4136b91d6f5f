//! QAM and PSK constellations: geometry, detection, Gray labels, decision
//! margins and the Q-function SEP bound.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{ChannelSet, DesignVariables, SymbolBlock};
use crate::C64;

/// Square 4B²-ary QAM with per-axis levels `±1, ±3, …, ±(2B−1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QamSpec {
    pub b_level: u32,
}

/// L-ary PSK with points `e^{j2πn/L}`, `n = 0..L−1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PskSpec {
    pub order: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Constellation {
    Qam { b_level: u32 },
    Psk { order: u32 },
}

fn gray(v: u32) -> u32 {
    v ^ (v >> 1)
}

fn gray_inverse(mut g: u32) -> u32 {
    let mut v = g;
    while g > 0 {
        g >>= 1;
        v ^= g;
    }
    v
}

impl QamSpec {
    pub fn new(b_level: u32) -> Result<Self> {
        if b_level == 0 {
            return invalid("QAM level B must be at least 1");
        }
        Ok(Self { b_level })
    }

    /// Number of levels per axis (2B).
    pub fn levels(&self) -> usize {
        2 * self.b_level as usize
    }

    /// Largest axis coordinate, `2B − 1`.
    pub fn max_coord(&self) -> f64 {
        (2 * self.b_level - 1) as f64
    }

    pub fn order(&self) -> usize {
        self.levels() * self.levels()
    }

    /// Odd-integer coordinate of axis level `a ∈ 0..2B`.
    pub fn coord(&self, a: usize) -> f64 {
        2.0 * a as f64 - self.max_coord()
    }

    /// Splits a point index into (real level, imaginary level).
    pub fn axis_levels(&self, ix: usize) -> (usize, usize) {
        (ix / self.levels(), ix % self.levels())
    }

    pub fn point(&self, ix: usize) -> C64 {
        let (ar, ai) = self.axis_levels(ix);
        C64::new(self.coord(ar), self.coord(ai))
    }

    pub fn points(&self) -> Vec<C64> {
        (0..self.order()).map(|ix| self.point(ix)).collect()
    }

    /// Nearest axis level of a normalized coordinate; ties go to the larger level.
    fn slice(&self, v: f64) -> usize {
        let a = ((v + self.max_coord()) / 2.0 + 0.5).floor();
        a.clamp(0.0, (self.levels() - 1) as f64) as usize
    }

    /// Per-axis decision of `y` given half inter-point spacings `d_r`, `d_i`.
    pub fn detect(&self, y: C64, d_r: f64, d_i: f64) -> Result<usize> {
        if !(d_r > 0.0 && d_i > 0.0) {
            return invalid(format!("spacings must be positive, got ({d_r}, {d_i})"));
        }
        Ok(self.slice(y.re / d_r) * self.levels() + self.slice(y.im / d_i))
    }

    fn bits_per_axis(&self) -> Result<u32> {
        let l = self.levels();
        if !l.is_power_of_two() {
            return Err(Error::Unsupported(format!(
                "Gray labels need 2B to be a power of two, got 2B = {l}"
            )));
        }
        Ok(l.trailing_zeros())
    }

    pub fn label(&self, ix: usize) -> Result<u32> {
        let bpa = self.bits_per_axis()?;
        let (ar, ai) = self.axis_levels(ix);
        Ok((gray(ar as u32) << bpa) | gray(ai as u32))
    }

    pub fn index_of_label(&self, label: u32) -> Result<usize> {
        let bpa = self.bits_per_axis()?;
        let mask = (1u32 << bpa) - 1;
        let ar = gray_inverse(label >> bpa) as usize;
        let ai = gray_inverse(label & mask) as usize;
        if ar >= self.levels() {
            return invalid(format!("label {label} outside constellation"));
        }
        Ok(ar * self.levels() + ai)
    }
}

impl PskSpec {
    pub fn new(order: u32) -> Result<Self> {
        if order < 2 {
            return invalid(format!("PSK order must be at least 2, got {order}"));
        }
        Ok(Self { order })
    }

    pub fn order(&self) -> usize {
        self.order as usize
    }

    pub fn point(&self, ix: usize) -> C64 {
        C64::from_polar(1.0, 2.0 * PI * ix as f64 / self.order as f64)
    }

    pub fn points(&self) -> Vec<C64> {
        (0..self.order()).map(|ix| self.point(ix)).collect()
    }

    /// `cot(π/L)`, taken as exactly zero for BPSK.
    pub fn cot_half_angle(&self) -> f64 {
        if self.order == 2 {
            0.0
        } else {
            1.0 / (PI / self.order as f64).tan()
        }
    }

    /// Minimum-angle decision. `y = 0` maps to index 0.
    pub fn detect(&self, y: C64) -> usize {
        let l = self.order as f64;
        let phase = y.im.atan2(y.re).rem_euclid(2.0 * PI);
        let n = (phase * l / (2.0 * PI) + 0.5).floor() as usize;
        n % self.order()
    }

    fn bits(&self) -> Result<u32> {
        if !self.order.is_power_of_two() {
            return Err(Error::Unsupported(format!(
                "Gray labels need a power-of-two PSK order, got {}",
                self.order
            )));
        }
        Ok(self.order.trailing_zeros())
    }

    pub fn label(&self, ix: usize) -> Result<u32> {
        self.bits()?;
        Ok(gray(ix as u32))
    }

    pub fn index_of_label(&self, label: u32) -> Result<usize> {
        self.bits()?;
        let ix = gray_inverse(label) as usize;
        if ix >= self.order() {
            return invalid(format!("label {label} outside constellation"));
        }
        Ok(ix)
    }
}

impl Constellation {
    pub fn qam16() -> Self {
        Constellation::Qam { b_level: 2 }
    }

    pub fn psk8() -> Self {
        Constellation::Psk { order: 8 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Constellation::Qam { b_level } => QamSpec::new(b_level).map(|_| ()),
            Constellation::Psk { order } => PskSpec::new(order).map(|_| ()),
        }
    }

    pub fn is_qam(&self) -> bool {
        matches!(self, Constellation::Qam { .. })
    }

    /// QAM geometry, `None` for PSK.
    pub fn qam(&self) -> Option<QamSpec> {
        match *self {
            Constellation::Qam { b_level } => Some(QamSpec { b_level }),
            Constellation::Psk { .. } => None,
        }
    }

    pub fn psk(&self) -> Option<PskSpec> {
        match *self {
            Constellation::Psk { order } => Some(PskSpec { order }),
            Constellation::Qam { .. } => None,
        }
    }

    pub fn order(&self) -> usize {
        match *self {
            Constellation::Qam { b_level } => QamSpec { b_level }.order(),
            Constellation::Psk { order } => order as usize,
        }
    }

    pub fn point(&self, ix: usize) -> C64 {
        match *self {
            Constellation::Qam { b_level } => QamSpec { b_level }.point(ix),
            Constellation::Psk { order } => PskSpec { order }.point(ix),
        }
    }

    /// Bits carried per symbol; errors unless the order is a power of two.
    pub fn bits_per_symbol(&self) -> Result<u32> {
        let order = self.order();
        if !order.is_power_of_two() || order < 2 {
            return Err(Error::Unsupported(format!(
                "constellation order {order} is not a power of two"
            )));
        }
        Ok(order.trailing_zeros())
    }

    pub fn label(&self, ix: usize) -> Result<u32> {
        match *self {
            Constellation::Qam { b_level } => QamSpec { b_level }.label(ix),
            Constellation::Psk { order } => PskSpec { order }.label(ix),
        }
    }

    pub fn index_of_label(&self, label: u32) -> Result<usize> {
        match *self {
            Constellation::Qam { b_level } => QamSpec { b_level }.index_of_label(label),
            Constellation::Psk { order } => PskSpec { order }.index_of_label(label),
        }
    }

    /// Short name such as `16qam` or `8psk`.
    pub fn name(&self) -> String {
        match *self {
            Constellation::Qam { .. } => format!("{}qam", self.order()),
            Constellation::Psk { order } => format!("{order}psk"),
        }
    }
}

impl std::str::FromStr for Constellation {
    type Err = Error;

    /// Parses names produced by [`Constellation::name`], e.g. `16qam`, `8psk`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let bad = || Error::InvalidArgument(format!("unknown constellation '{s}' (expected e.g. 16qam or 8psk)"));
        let (digits, kind) = if let Some(d) = lower.strip_suffix("qam") {
            (d, true)
        } else if let Some(d) = lower.strip_suffix("psk") {
            (d, false)
        } else {
            return Err(bad());
        };
        let order: u32 = digits.parse().map_err(|_| bad())?;
        let c = if kind {
            let side = f64::from(order).sqrt().round() as u32;
            if side * side != order || !side.is_multiple_of(2) || side == 0 {
                return Err(bad());
            }
            Constellation::Qam { b_level: side / 2 }
        } else {
            Constellation::Psk { order }
        };
        c.validate()?;
        Ok(c)
    }
}

/// Gray-encodes a symbol stream, most significant bit first.
pub fn symbols_to_bits(constellation: Constellation, indices: &[usize]) -> Result<Vec<u8>> {
    let nbits = constellation.bits_per_symbol()?;
    let mut out = Vec::with_capacity(indices.len() * nbits as usize);
    for &ix in indices {
        if ix >= constellation.order() {
            return invalid(format!("symbol index {ix} out of range"));
        }
        let label = constellation.label(ix)?;
        out.extend((0..nbits).rev().map(|b| ((label >> b) & 1) as u8));
    }
    Ok(out)
}

/// Inverse of [`symbols_to_bits`].
pub fn bits_to_symbols(constellation: Constellation, bits: &[u8]) -> Result<Vec<usize>> {
    let nbits = constellation.bits_per_symbol()? as usize;
    if !bits.len().is_multiple_of(nbits) {
        return invalid(format!(
            "bit stream of length {} is not a multiple of {nbits}",
            bits.len()
        ));
    }
    bits.chunks(nbits)
        .map(|chunk| {
            let label = chunk.iter().fold(0u32, |acc, &b| (acc << 1) | u32::from(b & 1));
            constellation.index_of_label(label)
        })
        .collect()
}

/// Decision margins of a QAM block with the masks that select which of them
/// are active. A margin is the signed distance of the noiseless sample to
/// the relevant decision boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct QamMargins {
    pub b_re: DMatrix<f64>,
    pub c_re: DMatrix<f64>,
    pub b_im: DMatrix<f64>,
    pub c_im: DMatrix<f64>,
    /// False where `Re(s) = 2B − 1` (no boundary above).
    pub mask_b_re: DMatrix<bool>,
    /// False where `Re(s) = −(2B − 1)` (no boundary below).
    pub mask_c_re: DMatrix<bool>,
    pub mask_b_im: DMatrix<bool>,
    pub mask_c_im: DMatrix<bool>,
}

/// PSK wedge margins `u`, `v`; `min(u, v)` is the worst-case margin.
#[derive(Debug, Clone, PartialEq)]
pub struct PskMargins {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum MarginSet {
    Qam(QamMargins),
    Psk(PskMargins),
}

impl MarginSet {
    /// Smallest active margin over the block.
    pub fn worst_margin(&self) -> f64 {
        match self {
            MarginSet::Qam(m) => m.worst_margin(),
            MarginSet::Psk(m) => m.worst_margin(),
        }
    }
}

impl QamMargins {
    /// Iterates over `(active, margin)` for the four families at `(i, t)`.
    pub fn terms(&self, i: usize, t: usize) -> [(bool, f64); 4] {
        let ix = (i, t);
        [
            (self.mask_b_re[ix], self.b_re[ix]),
            (self.mask_c_re[ix], self.c_re[ix]),
            (self.mask_b_im[ix], self.b_im[ix]),
            (self.mask_c_im[ix], self.c_im[ix]),
        ]
    }

    pub fn active_terms(&self) -> usize {
        [&self.mask_b_re, &self.mask_c_re, &self.mask_b_im, &self.mask_c_im]
            .iter()
            .map(|m| m.iter().filter(|&&a| a).count())
            .sum()
    }

    pub fn worst_margin(&self) -> f64 {
        let (k, t) = self.b_re.shape();
        let mut worst = f64::INFINITY;
        for i in 0..k {
            for s in 0..t {
                for (active, m) in self.terms(i, s) {
                    if active {
                        worst = worst.min(m);
                    }
                }
            }
        }
        worst
    }
}

impl PskMargins {
    pub fn worst_margin(&self) -> f64 {
        self.u
            .iter()
            .chain(self.v.iter())
            .fold(f64::INFINITY, |acc, &m| acc.min(m))
    }
}

/// QAM axis masks of a symbol block.
pub(crate) struct QamMasks {
    pub b_re: DMatrix<bool>,
    pub c_re: DMatrix<bool>,
    pub b_im: DMatrix<bool>,
    pub c_im: DMatrix<bool>,
}

pub(crate) fn qam_masks(spec: QamSpec, sym: &SymbolBlock) -> QamMasks {
    let top = spec.levels() - 1;
    let lv = sym.indices().map(|ix| spec.axis_levels(ix));
    QamMasks {
        b_re: lv.map(|(ar, _)| ar != top),
        c_re: lv.map(|(ar, _)| ar != 0),
        b_im: lv.map(|(_, ai)| ai != top),
        c_im: lv.map(|(_, ai)| ai != 0),
    }
}

pub(crate) fn qam_margins_from_received(
    received: &DMatrix<C64>,
    spacing: &DVector<f64>,
    spec: QamSpec,
    sym: &SymbolBlock,
) -> QamMargins {
    let (k, t) = received.shape();
    let s = sym.symbols();
    let mut b_re = DMatrix::zeros(k, t);
    let mut c_re = DMatrix::zeros(k, t);
    let mut b_im = DMatrix::zeros(k, t);
    let mut c_im = DMatrix::zeros(k, t);
    for i in 0..k {
        let (dr, di) = (spacing[i], spacing[k + i]);
        for tt in 0..t {
            let ix = (i, tt);
            let er = received[ix].re - dr * s[ix].re;
            let ei = received[ix].im - di * s[ix].im;
            b_re[ix] = dr - er;
            c_re[ix] = dr + er;
            b_im[ix] = di - ei;
            c_im[ix] = di + ei;
        }
    }
    let masks = qam_masks(spec, sym);
    QamMargins {
        b_re,
        c_re,
        b_im,
        c_im,
        mask_b_re: masks.b_re,
        mask_c_re: masks.c_re,
        mask_b_im: masks.b_im,
        mask_c_im: masks.c_im,
    }
}

fn check_block(ch: &ChannelSet, sym: &SymbolBlock, precode: &DMatrix<C64>) -> Result<()> {
    if sym.n_users() != ch.n_users() {
        return invalid(format!(
            "symbol block has {} users, channel has {}",
            sym.n_users(),
            ch.n_users()
        ));
    }
    if precode.ncols() != sym.block_len() {
        return invalid(format!(
            "precoder has {} slots, symbol block has {}",
            precode.ncols(),
            sym.block_len()
        ));
    }
    Ok(())
}

/// Decision margins `b`, `c` of a QAM design.
pub fn qam_margins(ch: &ChannelSet, design: &DesignVariables, sym: &SymbolBlock) -> Result<QamMargins> {
    let spec = sym
        .constellation()
        .qam()
        .ok_or_else(|| Error::InvalidArgument("symbol block is not QAM".into()))?;
    let spacing = design
        .spacing
        .as_ref()
        .ok_or_else(|| Error::InvalidState("QAM margins need a spacing vector".into()))?;
    if spacing.len() != 2 * ch.n_users() {
        return invalid(format!(
            "spacing has length {}, expected {}",
            spacing.len(),
            2 * ch.n_users()
        ));
    }
    check_block(ch, sym, &design.precode)?;
    let received = ch.noiseless_received(&design.theta, &design.precode)?;
    Ok(qam_margins_from_received(&received, spacing, spec, sym))
}

pub(crate) fn psk_margins_from_received(received: &DMatrix<C64>, spec: PskSpec, sym: &SymbolBlock) -> PskMargins {
    let cot = spec.cot_half_angle();
    let q = received.zip_map(sym.symbols(), |r, s| r * s.conj());
    PskMargins {
        u: q.map(|q| q.re - q.im * cot),
        v: q.map(|q| q.re + q.im * cot),
    }
}

/// Wedge margins `u`, `v` of a PSK design.
pub fn psk_margins(
    ch: &ChannelSet,
    precode: &DMatrix<C64>,
    theta: &DVector<C64>,
    sym: &SymbolBlock,
) -> Result<PskMargins> {
    let spec = sym
        .constellation()
        .psk()
        .ok_or_else(|| Error::InvalidArgument("symbol block is not PSK".into()))?;
    PskSpec::new(spec.order)?;
    check_block(ch, sym, precode)?;
    let received = ch.noiseless_received(theta, precode)?;
    Ok(psk_margins_from_received(&received, spec, sym))
}

/// Margins of any design, dispatching on the block's constellation.
pub fn margins(ch: &ChannelSet, design: &DesignVariables, sym: &SymbolBlock) -> Result<MarginSet> {
    if sym.constellation().is_qam() {
        qam_margins(ch, design, sym).map(MarginSet::Qam)
    } else {
        psk_margins(ch, &design.precode, &design.theta, sym).map(MarginSet::Psk)
    }
}

/// Gaussian tail probability `Q(x) = P(Z > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2)
}

/// Per-axis and combined SEP bounds of a QAM block.
#[derive(Debug, Clone, PartialEq)]
pub struct SepBound {
    pub real: DMatrix<f64>,
    pub imag: DMatrix<f64>,
    /// `min(1, 2·max(real, imag))`.
    pub combined: DMatrix<f64>,
}

/// Q-function SEP bound from decision margins and noise standard deviation.
pub fn sep_bound_qam(m: &QamMargins, sigma: f64) -> Result<SepBound> {
    if !(sigma > 0.0) {
        return invalid(format!("sigma must be positive, got {sigma}"));
    }
    let axis = |mask_b: &DMatrix<bool>, b: &DMatrix<f64>, mask_c: &DMatrix<bool>, c: &DMatrix<f64>| {
        DMatrix::from_fn(b.nrows(), b.ncols(), |i, t| {
            let ix = (i, t);
            let mut p = 0.0;
            if mask_b[ix] {
                p += q_function(std::f64::consts::SQRT_2 * b[ix] / sigma);
            }
            if mask_c[ix] {
                p += q_function(std::f64::consts::SQRT_2 * c[ix] / sigma);
            }
            p
        })
    };
    let real = axis(&m.mask_b_re, &m.b_re, &m.mask_c_re, &m.c_re);
    let imag = axis(&m.mask_b_im, &m.b_im, &m.mask_c_im, &m.c_im);
    let combined = real.zip_map(&imag, |r, i| (2.0 * r.max(i)).min(1.0));
    Ok(SepBound { real, imag, combined })
}
