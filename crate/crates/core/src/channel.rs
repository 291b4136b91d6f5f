//! Scenario geometry, distance-based path loss and Rician channel synthesis.
//!
//! Every link is `√L(d) · (β·G_LOS + √(1−β²)·G_NLOS)` with an all-ones
//! line-of-sight component of phase π/4 and i.i.d. CN(0, 1) scattering.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{ChannelSet, SystemDims};
use crate::{db_to_linear, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Node placement. Users are dropped on a circle around `user_circle_center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub bs_pos: Point2,
    pub irs_pos: Point2,
    pub user_circle_center: Point2,
    pub user_circle_radius: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            bs_pos: Point2::new(0.0, 0.0),
            irs_pos: Point2::new(50.0, 0.0),
            user_circle_center: Point2::new(40.0, 20.0),
            user_circle_radius: 10.0,
        }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.user_circle_radius > 0.0) {
            return invalid("user circle radius must be positive");
        }
        if self.bs_pos.distance(&self.irs_pos) <= 0.0 {
            return invalid("BS and IRS must not coincide");
        }
        Ok(())
    }

    /// User position at angle `phi` on the circle.
    pub fn user_at(&self, phi: f64) -> Point2 {
        Point2::new(
            self.user_circle_center.x + self.user_circle_radius * phi.cos(),
            self.user_circle_center.y + self.user_circle_radius * phi.sin(),
        )
    }
}

/// `L(d) = C₀ (d / 1 m)^{−α}` per link type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathLossParams {
    pub c0_db: f64,
    pub alpha_bi: f64,
    pub alpha_iu: f64,
    pub alpha_bu: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        Self {
            c0_db: 20.0,
            alpha_bi: 2.2,
            alpha_iu: 2.8,
            alpha_bu: 2.8,
        }
    }
}

impl PathLossParams {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha_bi, self.alpha_iu, self.alpha_bu]
            .iter()
            .any(|&a| !(a > 0.0))
        {
            return invalid("path-loss exponents must be positive");
        }
        if !self.c0_db.is_finite() {
            return invalid("reference gain must be finite");
        }
        Ok(())
    }
}

/// Rician mixing weights in `[0, 1]`: 1 is pure line of sight, 0 pure Rayleigh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RicianParams {
    pub beta_bi: f64,
    pub beta_iu: f64,
    pub beta_bu: f64,
}

impl Default for RicianParams {
    fn default() -> Self {
        Self {
            beta_bi: 0.6,
            beta_iu: 0.0,
            beta_bu: 0.0,
        }
    }
}

impl RicianParams {
    pub fn validate(&self) -> Result<()> {
        for beta in [self.beta_bi, self.beta_iu, self.beta_bu] {
            check_beta(beta)?;
        }
        Ok(())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return invalid(format!("Rician factor must lie in [0, 1], got {beta}"));
    }
    Ok(())
}

/// Linear power gain at `dist` meters.
pub fn path_loss(dist: f64, c0_db: f64, alpha: f64) -> Result<f64> {
    if !(dist > 0.0) {
        return invalid(format!("link distance must be positive, got {dist}"));
    }
    Ok(db_to_linear(c0_db) * dist.powf(-alpha))
}

/// One CN(0, 1) sample.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * FRAC_1_SQRT_2
}

/// `β·G_LOS + √(1−β²)·G_NLOS`, filled row by row.
pub fn rician_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, beta: f64, rng: &mut R) -> Result<DMatrix<C64>> {
    check_beta(beta)?;
    let los = C64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2);
    let scatter = (1.0 - beta * beta).sqrt();
    let mut out = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            out[(r, c)] = los * beta + complex_normal(rng) * scatter;
        }
    }
    Ok(out)
}

/// One channel realization with the user drop that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub channels: ChannelSet,
    pub user_positions: Vec<Point2>,
}

// Stream tags; each (tag, user) pair gets its own ChaCha stream.
const STREAM_BS_IRS: u64 = 1;
const STREAM_USER_ANGLE: u64 = 2;
const STREAM_DIRECT: u64 = 3;
const STREAM_IRS_USER: u64 = 4;

fn stream(seed: u64, tag: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((tag << 32) | index);
    rng
}

/// Draws a full channel realization for `dims` from `seed`.
///
/// The BS–IRS matrix and each user's links come from separate streams, so
/// adding users or IRS elements leaves the existing coefficients unchanged.
pub fn generate_scenario(
    dims: &SystemDims,
    geometry: &Geometry,
    pl: &PathLossParams,
    rc: &RicianParams,
    seed: u64,
) -> Result<Scenario> {
    dims.validate()?;
    geometry.validate()?;
    pl.validate()?;
    rc.validate()?;
    let (n, k, m) = (dims.n_tx, dims.n_users, dims.n_irs);

    let d_bi = geometry.bs_pos.distance(&geometry.irs_pos);
    let amp_bi = path_loss(d_bi, pl.c0_db, pl.alpha_bi)?.sqrt();
    let bs_irs = rician_matrix(m, n, rc.beta_bi, &mut stream(seed, STREAM_BS_IRS, 0))? * C64::from(amp_bi);

    let mut user_positions = Vec::with_capacity(k);
    let mut direct = Vec::with_capacity(k);
    let mut irs_user = Vec::with_capacity(k);
    for i in 0..k as u64 {
        let phi = stream(seed, STREAM_USER_ANGLE, i).random::<f64>() * 2.0 * PI;
        let pos = geometry.user_at(phi);
        let amp_bu = path_loss(pos.distance(&geometry.bs_pos), pl.c0_db, pl.alpha_bu)?.sqrt();
        let amp_iu = path_loss(pos.distance(&geometry.irs_pos), pl.c0_db, pl.alpha_iu)?.sqrt();
        let hd = rician_matrix(n, 1, rc.beta_bu, &mut stream(seed, STREAM_DIRECT, i))?;
        let hr = rician_matrix(m, 1, rc.beta_iu, &mut stream(seed, STREAM_IRS_USER, i))?;
        direct.push(DVector::from_column_slice(hd.as_slice()) * C64::from(amp_bu));
        irs_user.push(DVector::from_column_slice(hr.as_slice()) * C64::from(amp_iu));
        user_positions.push(pos);
    }
    Ok(Scenario {
        channels: ChannelSet::new(bs_irs, direct, irs_user)?,
        user_positions,
    })
}

/// Unit-gain i.i.d. CN(0, 1) channels on every link, for tests and diagnostics.
pub fn iid_channels<R: Rng + ?Sized>(n: usize, k: usize, m: usize, rng: &mut R) -> Result<ChannelSet> {
    let g = DMatrix::from_fn(m, n, |_, _| complex_normal(rng));
    let hd = (0..k)
        .map(|_| DVector::from_fn(n, |_, _| complex_normal(rng)))
        .collect();
    let hr = (0..k)
        .map(|_| DVector::from_fn(m, |_, _| complex_normal(rng)))
        .collect();
    ChannelSet::new(g, hd, hr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::Constellation;
    use approx::assert_relative_eq;
    use rand_chacha::ChaCha8Rng;

    fn dims(n: usize, k: usize, m: usize) -> SystemDims {
        SystemDims::new(n, k, m, 4, Constellation::qam16()).unwrap()
    }

    #[test]
    fn path_loss_reference_and_scaling() {
        assert_relative_eq!(path_loss(1.0, 20.0, 2.2).unwrap(), 100.0, max_relative = 1e-15);
        assert_relative_eq!(
            path_loss(1.0, -7.5, 3.0).unwrap(),
            10f64.powf(-0.75),
            max_relative = 1e-15
        );
        let pl = path_loss(50.0, 20.0, 2.2).unwrap();
        let log_domain = (20.0 / 10.0 * 10f64.ln() - 2.2 * 50f64.ln()).exp();
        assert_relative_eq!(pl, log_domain, max_relative = 1e-12);
        for alpha in [2.0, 2.2, 2.8, 3.5] {
            let ratio = path_loss(60.0, 20.0, alpha).unwrap() / path_loss(30.0, 20.0, alpha).unwrap();
            assert_relative_eq!(ratio, 2f64.powf(-alpha), max_relative = 1e-12);
        }
        assert!(path_loss(0.0, 20.0, 2.0).is_err());
        assert!(path_loss(-1.0, 20.0, 2.0).is_err());
    }

    #[test]
    fn rician_pure_los() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = rician_matrix(3, 4, 1.0, &mut rng).unwrap();
        let los = C64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2);
        assert!(g.iter().all(|&z| z == los), "{g} vs {los}");
        assert!(rician_matrix(2, 2, 1.1, &mut rng).is_err());
        assert!(rician_matrix(2, 2, -0.1, &mut rng).is_err());
    }

    #[test]
    fn rician_rayleigh_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = rician_matrix(100_000, 1, 0.0, &mut rng).unwrap();
        let n = g.len() as f64;
        let mean: C64 = g.iter().sum::<C64>() / n;
        let var = g.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / (n - 1.0);
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn rician_mixed_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let beta = 0.6;
        let g = rician_matrix(50_000, 2, beta, &mut rng).unwrap();
        let n = g.len() as f64;
        let mean: C64 = g.iter().sum::<C64>() / n;
        let expect = C64::new(1.0, 1.0) * (beta / 2f64.sqrt());
        // Each axis has variance (1 − β²)/2.
        let se = ((1.0 - beta * beta) / 2.0 / n).sqrt();
        assert!((mean.re - expect.re).abs() < 3.0 * se);
        assert!((mean.im - expect.im).abs() < 3.0 * se);
        let power = g.iter().map(|z| z.norm_sqr()).sum::<f64>() / n;
        assert!((power - 1.0).abs() < 0.02);
    }

    #[test]
    fn scenario_is_deterministic() {
        let d = dims(4, 3, 8);
        let g = Geometry::default();
        let a = generate_scenario(&d, &g, &PathLossParams::default(), &RicianParams::default(), 7).unwrap();
        let b = generate_scenario(&d, &g, &PathLossParams::default(), &RicianParams::default(), 7).unwrap();
        assert_eq!(a, b);
        let c = generate_scenario(&d, &g, &PathLossParams::default(), &RicianParams::default(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn user_positions_lie_on_circle() {
        let g = Geometry::default();
        let s = generate_scenario(
            &dims(2, 8, 2),
            &g,
            &PathLossParams::default(),
            &RicianParams::default(),
            3,
        )
        .unwrap();
        for p in &s.user_positions {
            assert!((p.distance(&g.user_circle_center) - g.user_circle_radius).abs() < 1e-9);
        }
    }

    #[test]
    fn reference_gain_scales_every_link() {
        let d = dims(3, 2, 4);
        let g = Geometry::default();
        let base = PathLossParams::default();
        let hot = PathLossParams {
            c0_db: base.c0_db + 10.0,
            ..base
        };
        let a = generate_scenario(&d, &g, &base, &RicianParams::default(), 11)
            .unwrap()
            .channels;
        let b = generate_scenario(&d, &g, &hot, &RicianParams::default(), 11)
            .unwrap()
            .channels;
        let amp = 10f64.sqrt();
        for (x, y) in a.bs_irs().iter().zip(b.bs_irs().iter()) {
            assert_relative_eq!((x * amp - y).norm(), 0.0, epsilon = 1e-12 * y.norm());
        }
        for i in 0..2 {
            for (x, y) in a.direct()[i].iter().zip(b.direct()[i].iter()) {
                assert_relative_eq!((x * amp - y).norm(), 0.0, epsilon = 1e-12 * y.norm());
            }
            for (x, y) in a.irs_user()[i].iter().zip(b.irs_user()[i].iter()) {
                assert_relative_eq!((x * amp - y).norm(), 0.0, epsilon = 1e-12 * y.norm());
            }
        }
    }

    #[test]
    fn adding_users_and_elements_keeps_existing_draws() {
        let g = Geometry::default();
        let (pl, rc) = (PathLossParams::default(), RicianParams::default());
        let small = generate_scenario(&dims(4, 2, 8), &g, &pl, &rc, 5).unwrap();
        let big = generate_scenario(&dims(4, 3, 16), &g, &pl, &rc, 5).unwrap();
        assert_eq!(small.user_positions[..], big.user_positions[..2]);
        assert_eq!(small.channels.direct()[..], big.channels.direct()[..2]);
        assert_eq!(small.channels.bs_irs(), &big.channels.bs_irs().rows(0, 8).into_owned());
        assert_eq!(
            small.channels.irs_user()[1],
            big.channels.irs_user()[1].rows(0, 8).into_owned()
        );
    }

    #[test]
    fn direct_link_power_matches_path_loss() {
        // Normalized by each drop's own path loss so only the fading power remains.
        let d = dims(4, 1, 0);
        let g = Geometry::default();
        let (pl, rc) = (PathLossParams::default(), RicianParams::default());
        let mut ratio_sum = 0.0;
        let trials = 4000;
        for seed in 0..trials {
            let s = generate_scenario(&d, &g, &pl, &rc, seed).unwrap();
            let dist = s.user_positions[0].distance(&g.bs_pos);
            let expect = 4.0 * path_loss(dist, pl.c0_db, pl.alpha_bu).unwrap();
            ratio_sum += s.channels.direct()[0].norm_squared() / expect;
        }
        let mean_ratio = ratio_sum / trials as f64;
        assert!((mean_ratio - 1.0).abs() < 0.05, "mean ratio {mean_ratio}");
    }
}
