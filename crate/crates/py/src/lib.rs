//! Python bindings: constellations, channels, symbol blocks, the designs of
//! every scheme, Monte-Carlo error counts, sweeps and the gradient check.
//!
//! Matrices cross the boundary as lists of rows of Python `complex`.

use irs_slp::baselines::{design_scheme, Scheme, SchemeDesign};
use irs_slp::channel::{generate_scenario, iid_channels, Geometry, PathLossParams, RicianParams};
use irs_slp::constellation::Constellation;
use irs_slp::diagnostics::{gradient_check as run_gradient_check, GradientCheck};
use irs_slp::model::{ChannelSet, SymbolBlock, SystemDims};
use irs_slp::objective::{Objective, SmoothingConfig};
use irs_slp::optimizer::{ApgConfig, OuterConfig};
use irs_slp::sim::{ber_sweep, run_trials, worst_margin, write_csv};
use irs_slp::{db_to_linear, C64};
use irs_slp_cli::config::RunConfig;
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows<T: nalgebra::Scalar + Copy>(r: &[Vec<T>], what: &str) -> PyResult<DMatrix<T>> {
    let ncols = r.first().map_or(0, Vec::len);
    if r.iter().any(|row| row.len() != ncols) {
        return Err(err(format!("{what}: rows have different lengths")));
    }
    Ok(DMatrix::from_fn(r.len(), ncols, |i, j| r[i][j]))
}

/// A QAM or PSK constellation, e.g. `Constellation("16qam")`.
#[pyclass(name = "Constellation", frozen)]
struct PyConstellation(Constellation);

#[pymethods]
impl PyConstellation {
    #[new]
    fn new(name: &str) -> PyResult<Self> {
        name.parse().map(Self).map_err(err)
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name()
    }

    #[getter]
    fn order(&self) -> usize {
        self.0.order()
    }

    #[getter]
    fn bits_per_symbol(&self) -> PyResult<u32> {
        self.0.bits_per_symbol().map_err(err)
    }

    #[getter]
    fn is_qam(&self) -> bool {
        self.0.is_qam()
    }

    /// Constellation points in index order.
    fn points(&self) -> Vec<C64> {
        (0..self.0.order()).map(|i| self.0.point(i)).collect()
    }

    fn __repr__(&self) -> String {
        format!("Constellation('{}')", self.0.name())
    }
}

/// Channels of one realization: BS-IRS, IRS-user and direct links.
#[pyclass(name = "Channels", frozen)]
struct PyChannels(ChannelSet);

#[pymethods]
impl PyChannels {
    /// Builds channels from an M×N BS-IRS matrix and per-user rows of the
    /// direct (length N) and IRS-user (length M) links.
    #[new]
    fn new(bs_irs: Vec<Vec<C64>>, direct: Vec<Vec<C64>>, irs_user: Vec<Vec<C64>>) -> PyResult<Self> {
        let g = from_rows(&bs_irs, "bs_irs")?;
        let to_vecs = |v: Vec<Vec<C64>>| v.into_iter().map(DVector::from_vec).collect();
        ChannelSet::new(g, to_vecs(direct), to_vecs(irs_user))
            .map(Self)
            .map_err(err)
    }

    /// Unit-variance i.i.d. Rayleigh links.
    #[staticmethod]
    fn iid(n_tx: usize, n_users: usize, n_irs: usize, seed: u64) -> PyResult<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        iid_channels(n_tx, n_users, n_irs, &mut rng).map(Self).map_err(err)
    }

    /// Default geometry with path loss and Rician fading.
    #[staticmethod]
    fn scenario(n_tx: usize, n_users: usize, n_irs: usize, seed: u64) -> PyResult<Self> {
        let dims = SystemDims::new(n_tx, n_users, n_irs, 1, Constellation::qam16()).map_err(err)?;
        let sc = generate_scenario(
            &dims,
            &Geometry::default(),
            &PathLossParams::default(),
            &RicianParams::default(),
            seed,
        )
        .map_err(err)?;
        Ok(Self(sc.channels))
    }

    #[getter]
    fn n_tx(&self) -> usize {
        self.0.n_tx()
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.0.n_users()
    }

    #[getter]
    fn n_irs(&self) -> usize {
        self.0.n_irs()
    }

    fn bs_irs(&self) -> Vec<Vec<C64>> {
        rows(self.0.bs_irs())
    }

    fn direct(&self) -> Vec<Vec<C64>> {
        self.0.direct().iter().map(|v| v.iter().copied().collect()).collect()
    }

    fn irs_user(&self) -> Vec<Vec<C64>> {
        self.0.irs_user().iter().map(|v| v.iter().copied().collect()).collect()
    }

    /// N×K matrix whose column i is user i's effective channel for `theta`.
    fn effective_channels(&self, theta: Vec<C64>) -> PyResult<Vec<Vec<C64>>> {
        self.0
            .effective_channels(&DVector::from_vec(theta))
            .map(|m| rows(&m))
            .map_err(err)
    }

    fn without_irs(&self) -> Self {
        Self(self.0.without_irs())
    }

    fn __repr__(&self) -> String {
        format!(
            "Channels(n_tx={}, n_users={}, n_irs={})",
            self.0.n_tx(),
            self.0.n_users(),
            self.0.n_irs()
        )
    }
}

/// K×T block of symbol indices.
#[pyclass(name = "Symbols", frozen)]
struct PySymbols(SymbolBlock);

#[pymethods]
impl PySymbols {
    #[new]
    fn new(constellation: PyRef<'_, PyConstellation>, indices: Vec<Vec<usize>>) -> PyResult<Self> {
        let ix = from_rows(&indices, "indices")?;
        SymbolBlock::from_indices(constellation.0, ix).map(Self).map_err(err)
    }

    #[staticmethod]
    fn random(constellation: PyRef<'_, PyConstellation>, n_users: usize, block_len: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Self(SymbolBlock::random(constellation.0, n_users, block_len, &mut rng))
    }

    fn indices(&self) -> Vec<Vec<usize>> {
        rows(self.0.indices())
    }

    fn symbols(&self) -> Vec<Vec<C64>> {
        rows(self.0.symbols())
    }

    #[getter]
    fn constellation(&self) -> PyConstellation {
        PyConstellation(self.0.constellation())
    }
}

/// Output of `solve`: the design variables and the channels they apply to.
#[pyclass(name = "Design", frozen)]
struct PyDesign(SchemeDesign);

#[pymethods]
impl PyDesign {
    #[getter]
    fn scheme(&self) -> &'static str {
        self.0.scheme.name()
    }

    /// N×T precoder as rows.
    fn precode(&self) -> Vec<Vec<C64>> {
        rows(&self.0.design.precode)
    }

    /// Detection spacings `[d^R_1..d^R_K, d^I_1..d^I_K]`, or None for PSK.
    fn spacing(&self) -> Option<Vec<f64>> {
        self.0.design.spacing.as_ref().map(|d| d.iter().copied().collect())
    }

    fn theta(&self) -> Vec<C64> {
        self.0.design.theta.iter().copied().collect()
    }

    #[getter]
    fn channels(&self) -> PyChannels {
        PyChannels(self.0.channels.clone())
    }

    /// Smoothed objective after each outer iteration (empty for ZF).
    fn objective_history(&self) -> Vec<f64> {
        self.0.trace.as_ref().map_or_else(Vec::new, |t| t.objective.clone())
    }

    fn exact_objective(&self, symbols: PyRef<'_, PySymbols>) -> PyResult<f64> {
        self.0.exact_objective(&symbols.0).map_err(err)
    }

    fn smoothed_objective(&self, symbols: PyRef<'_, PySymbols>, eta: f64) -> PyResult<f64> {
        let cfg = SmoothingConfig::new(eta).map_err(err)?;
        Objective::new(&self.0.channels, &symbols.0, cfg)
            .and_then(|o| o.value(&self.0.design))
            .map_err(err)
    }

    fn worst_margin(&self, symbols: PyRef<'_, PySymbols>) -> PyResult<f64> {
        worst_margin(&self.0.channels, &self.0.design, &symbols.0).map_err(err)
    }

    #[pyo3(signature = (p_db, tol = 1e-9))]
    fn is_feasible(&self, p_db: f64, tol: f64) -> bool {
        self.0.design.is_feasible(db_to_linear(p_db), tol)
    }
}

/// Designs `scheme` ("slp-irs", "slp-noirs", "slp-random-theta" or
/// "zf-noirs") for one channel realization and symbol block.
#[pyfunction]
#[pyo3(signature = (channels, symbols, scheme = "slp-irs", p_db = 20.0, eta = 0.01, max_outer = 20, apg_max_iter = 1000, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn solve(
    py: Python<'_>,
    channels: PyRef<'_, PyChannels>,
    symbols: PyRef<'_, PySymbols>,
    scheme: &str,
    p_db: f64,
    eta: f64,
    max_outer: usize,
    apg_max_iter: usize,
    seed: u64,
) -> PyResult<PyDesign> {
    let scheme: Scheme = scheme.parse().map_err(err)?;
    let cfg = OuterConfig {
        p_total: db_to_linear(p_db),
        smoothing: SmoothingConfig::new(eta).map_err(err)?,
        max_outer,
        apg: ApgConfig {
            max_iter: apg_max_iter,
            ..ApgConfig::default()
        },
        ..OuterConfig::default()
    };
    let (ch, sym) = (&channels.0, &symbols.0);
    py.detach(|| design_scheme(scheme, ch, sym, &cfg, seed))
        .map(PyDesign)
        .map_err(err)
}

/// Transmits the block `trials` times over AWGN of power `sigma2_db` and
/// counts detection errors.
#[pyfunction]
#[pyo3(signature = (design, symbols, sigma2_db, trials = 1000, seed = 0))]
fn simulate<'py>(
    py: Python<'py>,
    design: PyRef<'_, PyDesign>,
    symbols: PyRef<'_, PySymbols>,
    sigma2_db: f64,
    trials: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let d = &design.0;
    let sym = &symbols.0;
    let c = py
        .detach(|| run_trials(&d.channels, &d.design, sym, db_to_linear(sigma2_db), trials, &mut rng))
        .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("bit_errors", c.bit_errors)?;
    out.set_item("bits_total", c.bits_total)?;
    out.set_item("symbol_errors", c.symbol_errors)?;
    out.set_item("symbols_total", c.symbols_total)?;
    out.set_item("ber", c.ber())?;
    out.set_item("ser", c.ser())?;
    Ok(out)
}

/// Runs a BER sweep from TOML configuration text and returns the CSV.
#[pyfunction]
#[pyo3(signature = (config_toml = "", threads = 1))]
fn sweep(py: Python<'_>, config_toml: &str, threads: usize) -> PyResult<String> {
    let resolved = RunConfig::from_toml(config_toml)
        .and_then(|c| c.resolve())
        .map_err(|e| err(format!("{e:#}")))?;
    let pool = irs_slp_cli::commands::thread_pool(Some(threads)).map_err(|e| err(format!("{e:#}")))?;
    let result = py.detach(|| pool.install(|| ber_sweep(&resolved.sweep))).map_err(err)?;
    let mut buf = Vec::new();
    write_csv(&result.records, &mut buf).map_err(err)?;
    String::from_utf8(buf).map_err(err)
}

/// Largest relative error between the analytic and finite-difference
/// gradients over random instances.
#[pyfunction]
#[pyo3(signature = (constellation, eta = 0.01, instances = 100, seed = 0))]
fn gradient_check(constellation: PyRef<'_, PyConstellation>, eta: f64, instances: usize, seed: u64) -> PyResult<f64> {
    run_gradient_check(constellation.0, &GradientCheck::new(eta, instances), seed)
        .map(|r| r.max_rel_error)
        .map_err(err)
}

#[pymodule]
#[pyo3(name = "irs_slp")]
fn python_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyConstellation>()?;
    m.add_class::<PyChannels>()?;
    m.add_class::<PySymbols>()?;
    m.add_class::<PyDesign>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    Ok(())
}
