//! Domain types and the received-signal model.
//!
//! A user `i` at slot `t` receives `y = h_iᴴ x_t + n` where the effective
//! channel `h_i = H_{r,i} θ + h_{d,i}` combines the direct link with the
//! IRS-reflected cascade `H_{r,i} = Gᴴ Diag(h_{r,i})`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::error::{invalid, Error, Result};
use crate::C64;

/// Problem sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemDims {
    pub n_tx: usize,
    pub n_users: usize,
    pub n_irs: usize,
    pub block_len: usize,
    pub constellation: Constellation,
}

impl SystemDims {
    pub fn new(
        n_tx: usize,
        n_users: usize,
        n_irs: usize,
        block_len: usize,
        constellation: Constellation,
    ) -> Result<Self> {
        let dims = Self {
            n_tx,
            n_users,
            n_irs,
            block_len,
            constellation,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_users == 0 || self.block_len == 0 {
            return invalid("n_tx, n_users and block_len must be at least 1");
        }
        self.constellation.validate()
    }
}

/// Transmit power budget and receiver noise variance, both linear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerBudget {
    pub p_total: f64,
    pub noise_var: f64,
}

impl PowerBudget {
    pub fn new(p_total: f64, noise_var: f64) -> Result<Self> {
        if !(p_total > 0.0 && p_total.is_finite()) {
            return invalid(format!("power budget must be positive, got {p_total}"));
        }
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return invalid(format!("noise variance must be positive, got {noise_var}"));
        }
        Ok(Self { p_total, noise_var })
    }
}

/// All channel coefficients of one realization.
///
/// The per-user reflection matrices are computed once at construction and
/// never mutated afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    bs_irs: DMatrix<C64>,
    direct: Vec<DVector<C64>>,
    irs_user: Vec<DVector<C64>>,
    reflect: Vec<DMatrix<C64>>,
}

impl ChannelSet {
    /// Builds a channel set from the BS–IRS matrix `G` (M×N), the direct
    /// BS–user channels (length N) and the IRS–user channels (length M).
    pub fn new(bs_irs: DMatrix<C64>, direct: Vec<DVector<C64>>, irs_user: Vec<DVector<C64>>) -> Result<Self> {
        let (m, n) = bs_irs.shape();
        if direct.is_empty() {
            return invalid("at least one user is required");
        }
        if direct.len() != irs_user.len() {
            return invalid(format!(
                "{} direct channels but {} IRS-user channels",
                direct.len(),
                irs_user.len()
            ));
        }
        for (i, (hd, hr)) in direct.iter().zip(&irs_user).enumerate() {
            if hd.len() != n {
                return invalid(format!("direct channel {i} has length {}, expected {n}", hd.len()));
            }
            if hr.len() != m {
                return invalid(format!("IRS channel {i} has length {}, expected {m}", hr.len()));
            }
        }
        if n == 0 {
            return invalid("at least one transmit antenna is required");
        }
        let reflect = irs_user.iter().map(|hr| reflection_matrix(&bs_irs, hr)).collect();
        Ok(Self {
            bs_irs,
            direct,
            irs_user,
            reflect,
        })
    }

    /// Channel set with only direct links (M = 0).
    pub fn direct_only(direct: Vec<DVector<C64>>) -> Result<Self> {
        let n = direct.first().map_or(0, |h| h.len());
        let k = direct.len();
        Self::new(DMatrix::zeros(0, n), direct, vec![DVector::zeros(0); k])
    }

    /// Same direct links with the IRS removed.
    pub fn without_irs(&self) -> Self {
        Self::direct_only(self.direct.clone()).expect("direct links already validated")
    }

    pub fn n_tx(&self) -> usize {
        self.bs_irs.ncols()
    }

    pub fn n_users(&self) -> usize {
        self.direct.len()
    }

    pub fn n_irs(&self) -> usize {
        self.bs_irs.nrows()
    }

    pub fn bs_irs(&self) -> &DMatrix<C64> {
        &self.bs_irs
    }

    pub fn direct(&self) -> &[DVector<C64>] {
        &self.direct
    }

    pub fn irs_user(&self) -> &[DVector<C64>] {
        &self.irs_user
    }

    /// Cached `H_{r,i} = Gᴴ Diag(h_{r,i})`, shape N×M.
    pub fn reflect_mat(&self, i: usize) -> &DMatrix<C64> {
        &self.reflect[i]
    }

    /// Direct channels stacked as columns, shape N×K.
    pub fn direct_matrix(&self) -> DMatrix<C64> {
        DMatrix::from_columns(&self.direct)
    }

    fn check_theta(&self, theta: &DVector<C64>) -> Result<()> {
        if theta.len() != self.n_irs() {
            return invalid(format!("theta has length {}, expected {}", theta.len(), self.n_irs()));
        }
        Ok(())
    }

    /// Effective channel `H_{r,i} θ + h_{d,i}` of user `i` (zero-based).
    pub fn effective_channel(&self, theta: &DVector<C64>, i: usize) -> Result<DVector<C64>> {
        self.check_theta(theta)?;
        if i >= self.n_users() {
            return invalid(format!("user index {i} out of range 0..{}", self.n_users()));
        }
        Ok(&self.reflect[i] * theta + &self.direct[i])
    }

    /// All effective channels as the columns of an N×K matrix.
    pub fn effective_channels(&self, theta: &DVector<C64>) -> Result<DMatrix<C64>> {
        self.check_theta(theta)?;
        let cols: Vec<DVector<C64>> = self
            .reflect
            .iter()
            .zip(&self.direct)
            .map(|(hr, hd)| hr * theta + hd)
            .collect();
        Ok(DMatrix::from_columns(&cols))
    }

    /// Noise-free received samples `h_iᴴ x_t` for every user and slot (K×T).
    pub fn noiseless_received(&self, theta: &DVector<C64>, precode: &DMatrix<C64>) -> Result<DMatrix<C64>> {
        if precode.nrows() != self.n_tx() {
            return invalid(format!(
                "precoder has {} rows, expected {}",
                precode.nrows(),
                self.n_tx()
            ));
        }
        Ok(self.effective_channels(theta)?.adjoint() * precode)
    }

    /// Received sample `h_iᴴ x_t + noise` of user `i` at slot `t`.
    pub fn received_signal(
        &self,
        theta: &DVector<C64>,
        precode: &DMatrix<C64>,
        i: usize,
        t: usize,
        noise: C64,
    ) -> Result<C64> {
        if precode.nrows() != self.n_tx() || t >= precode.ncols() {
            return invalid(format!(
                "slot {t} not available in a {}x{} precoder",
                precode.nrows(),
                precode.ncols()
            ));
        }
        let h = self.effective_channel(theta, i)?;
        Ok(h.dotc(&precode.column(t)) + noise)
    }
}

fn reflection_matrix(bs_irs: &DMatrix<C64>, irs_user: &DVector<C64>) -> DMatrix<C64> {
    let mut out = bs_irs.adjoint();
    for (mut col, h) in out.column_iter_mut().zip(irs_user.iter()) {
        col *= *h;
    }
    out
}

/// Optimization variables: precoder block, QAM spacings and IRS phases.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignVariables {
    /// N×T precoding matrix.
    pub precode: DMatrix<C64>,
    /// `[d_1^R..d_K^R, d_1^I..d_K^I]`; `None` for PSK.
    pub spacing: Option<DVector<f64>>,
    /// IRS coefficients, length M.
    pub theta: DVector<C64>,
}

impl DesignVariables {
    /// Real and imaginary spacing of user `i`.
    pub fn user_spacing(&self, i: usize) -> Result<(f64, f64)> {
        let d = self
            .spacing
            .as_ref()
            .ok_or_else(|| Error::InvalidState("design has no spacing vector".into()))?;
        let k = d.len() / 2;
        if i >= k {
            return invalid(format!("user index {i} out of range 0..{k}"));
        }
        Ok((d[i], d[k + i]))
    }

    /// Checks the power, nonnegativity and unit-modulus constraints.
    pub fn is_feasible(&self, p_total: f64, tol: f64) -> bool {
        let power_ok = self
            .precode
            .column_iter()
            .all(|c| c.norm_squared() <= p_total * (1.0 + tol) + tol);
        let spacing_ok = self.spacing.as_ref().is_none_or(|d| d.iter().all(|&v| v >= 0.0));
        let theta_ok = self.theta.iter().all(|z| (z.norm() - 1.0).abs() <= tol);
        power_ok && spacing_ok && theta_ok
    }
}

/// Intended symbols of one transmission block.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolBlock {
    constellation: Constellation,
    indices: DMatrix<usize>,
    symbols: DMatrix<C64>,
}

impl SymbolBlock {
    /// Builds a block from constellation point indices (K×T).
    pub fn from_indices(constellation: Constellation, indices: DMatrix<usize>) -> Result<Self> {
        let order = constellation.order();
        if let Some(bad) = indices.iter().find(|&&ix| ix >= order) {
            return invalid(format!("symbol index {bad} outside constellation of order {order}"));
        }
        let symbols = indices.map(|ix| constellation.point(ix));
        Ok(Self {
            constellation,
            indices,
            symbols,
        })
    }

    /// Draws every symbol uniformly from the constellation.
    pub fn random<R: Rng + ?Sized>(
        constellation: Constellation,
        n_users: usize,
        block_len: usize,
        rng: &mut R,
    ) -> Self {
        let order = constellation.order();
        let indices = DMatrix::from_fn(n_users, block_len, |_, _| rng.random_range(0..order));
        Self::from_indices(constellation, indices).expect("indices drawn in range")
    }

    pub fn constellation(&self) -> Constellation {
        self.constellation
    }

    /// K×T matrix of constellation points.
    pub fn symbols(&self) -> &DMatrix<C64> {
        &self.symbols
    }

    /// K×T matrix of point indices.
    pub fn indices(&self) -> &DMatrix<usize> {
        &self.indices
    }

    pub fn n_users(&self) -> usize {
        self.symbols.nrows()
    }

    pub fn block_len(&self) -> usize {
        self.symbols.ncols()
    }

    /// Gray label of the symbol at `(i, t)`.
    pub fn bit_label(&self, i: usize, t: usize) -> Result<u32> {
        self.constellation.label(self.indices[(i, t)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn crandn(rng: &mut ChaCha8Rng) -> C64 {
        C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    }

    fn random_set(n: usize, k: usize, m: usize, rng: &mut ChaCha8Rng) -> ChannelSet {
        let g = DMatrix::from_fn(m, n, |_, _| crandn(rng));
        let hd = (0..k).map(|_| DVector::from_fn(n, |_, _| crandn(rng))).collect();
        let hr = (0..k).map(|_| DVector::from_fn(m, |_, _| crandn(rng))).collect();
        ChannelSet::new(g, hd, hr).unwrap()
    }

    #[test]
    fn zero_theta_gives_direct_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ch = random_set(3, 2, 4, &mut rng);
        let h = ch.effective_channel(&DVector::zeros(4), 1).unwrap();
        assert_eq!(h, ch.direct()[1]);
    }

    #[test]
    fn no_irs_gives_direct_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ch = random_set(3, 2, 4, &mut rng).without_irs();
        assert_eq!(ch.n_irs(), 0);
        let h = ch.effective_channel(&DVector::zeros(0), 0).unwrap();
        assert_eq!(h, ch.direct()[0]);
    }

    #[test]
    fn effective_channel_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ch = random_set(2, 2, 3, &mut rng);
        let theta = DVector::from_fn(3, |_, _| crandn(&mut rng));
        for i in 0..2 {
            let h = ch.effective_channel(&theta, i).unwrap();
            for n in 0..2 {
                let mut acc = ch.direct()[i][n];
                for m in 0..3 {
                    acc += ch.bs_irs()[(m, n)].conj() * ch.irs_user()[i][m] * theta[m];
                }
                assert_relative_eq!(h[n].re, acc.re, epsilon = 1e-14);
                assert_relative_eq!(h[n].im, acc.im, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ch = random_set(2, 2, 3, &mut rng);
        assert!(matches!(
            ch.effective_channel(&DVector::zeros(2), 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(ch.effective_channel(&DVector::zeros(3), 2).is_err());
        let x = DMatrix::zeros(3, 1);
        assert!(ch
            .received_signal(&DVector::zeros(3), &x, 0, 0, C64::new(0.0, 0.0))
            .is_err());
    }

    #[test]
    fn received_signal_conjugates_channel() {
        let hd = DVector::from_vec(vec![C64::new(1.0, 1.0), C64::new(0.0, 0.0)]);
        let ch = ChannelSet::direct_only(vec![hd]).unwrap();
        let mut x = DMatrix::zeros(2, 1);
        x[(0, 0)] = C64::new(1.0, 0.0);
        let theta = DVector::zeros(0);
        let y = ch.received_signal(&theta, &x, 0, 0, C64::new(0.0, 0.0)).unwrap();
        assert_eq!(y, C64::new(1.0, -1.0));
        let y0 = ch
            .received_signal(&theta, &DMatrix::zeros(2, 1), 0, 0, C64::new(0.0, 0.0))
            .unwrap();
        assert_eq!(y0, C64::new(0.0, 0.0));
    }

    #[test]
    fn received_signal_matches_explicit_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ch = random_set(4, 3, 5, &mut rng);
        let theta = DVector::from_fn(5, |_, _| crandn(&mut rng));
        let x = DMatrix::from_fn(4, 2, |_, _| crandn(&mut rng));
        let noise = crandn(&mut rng);
        let h = ch.effective_channel(&theta, 2).unwrap();
        let mut expect = noise;
        for n in 0..4 {
            expect += h[n].conj() * x[(n, 1)];
        }
        let y = ch.received_signal(&theta, &x, 2, 1, noise).unwrap();
        assert_relative_eq!(y.re, expect.re, epsilon = 1e-13);
        assert_relative_eq!(y.im, expect.im, epsilon = 1e-13);
        let all = ch.noiseless_received(&theta, &x).unwrap();
        assert_relative_eq!((all[(2, 1)] + noise - y).norm(), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn reflection_term_is_linear_in_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ch = random_set(3, 2, 6, &mut rng);
        let t1 = DVector::from_fn(6, |_, _| crandn(&mut rng));
        let t2 = DVector::from_fn(6, |_, _| crandn(&mut rng));
        let hd = &ch.direct()[0];
        let sum = ch.effective_channel(&(&t1 + &t2), 0).unwrap() - hd;
        let parts = (ch.effective_channel(&t1, 0).unwrap() - hd) + (ch.effective_channel(&t2, 0).unwrap() - hd);
        assert!((&sum - &parts).norm() <= 1e-12 * sum.norm());
    }

    #[test]
    fn cached_reflection_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ch = random_set(3, 2, 4, &mut rng);
        for i in 0..2 {
            let fresh = ch.bs_irs().adjoint() * DMatrix::from_diagonal(&ch.irs_user()[i]);
            assert_eq!(&fresh, ch.reflect_mat(i));
        }
    }
}
