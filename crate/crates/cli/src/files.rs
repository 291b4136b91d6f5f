//! JSON file formats. Complex numbers are written as `[re, im]` pairs and
//! matrices as lists of rows; every file names its format and carries the
//! seed and configuration hash it was produced with.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use irs_slp::baselines::Scheme;
use irs_slp::channel::{Point2, Scenario};
use irs_slp::constellation::Constellation;
use irs_slp::model::{ChannelSet, DesignVariables, SymbolBlock};
use irs_slp::optimizer::SolverTrace;
use irs_slp::C64;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const COMPLEX_ENCODING: &str = "[re, im]";
pub const SCENARIO_FORMAT: &str = "irs-slp-scenario";
pub const DESIGN_FORMAT: &str = "irs-slp-design";
pub const TRACE_FORMAT: &str = "irs-slp-trace";
pub const MANIFEST_FORMAT: &str = "irs-slp-manifest";
pub const FORMAT_VERSION: u32 = 1;

pub type Complex = [f64; 2];

fn enc(z: &C64) -> Complex {
    [z.re, z.im]
}

fn dec(p: &Complex) -> C64 {
    C64::new(p[0], p[1])
}

pub fn encode_matrix(m: &DMatrix<C64>) -> Vec<Vec<Complex>> {
    m.row_iter().map(|r| r.iter().map(enc).collect()).collect()
}

pub fn decode_matrix(rows: &[Vec<Complex>], ncols: usize, what: &str) -> Result<DMatrix<C64>> {
    for (i, r) in rows.iter().enumerate() {
        ensure!(
            r.len() == ncols,
            "{what}: row {i} has {} entries, expected {ncols}",
            r.len()
        );
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| dec(&rows[i][j])))
}

pub fn encode_vector(v: &DVector<C64>) -> Vec<Complex> {
    v.iter().map(enc).collect()
}

pub fn decode_vector(v: &[Complex]) -> DVector<C64> {
    DVector::from_iterator(v.len(), v.iter().map(dec))
}

/// Header shared by all JSON outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub format: String,
    pub version: u32,
    pub software: String,
    pub software_version: String,
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(format: &str, cfg: &RunConfig) -> Self {
        Self {
            format: format.to_string(),
            version: FORMAT_VERSION,
            software: env!("CARGO_PKG_NAME").to_string(),
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
        }
    }

    fn check(&self, format: &str) -> Result<()> {
        ensure!(
            self.format == format,
            "expected a '{format}' file, found '{}'",
            self.format
        );
        ensure!(
            self.version == FORMAT_VERSION,
            "unsupported {format} version {} (this build reads {FORMAT_VERSION})",
            self.version
        );
        Ok(())
    }
}

/// A channel realization. `bs_irs` is M×N; `direct` and `irs_user` hold one
/// row per user (lengths N and M).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub complex_encoding: String,
    pub n_tx: usize,
    pub n_users: usize,
    pub n_irs: usize,
    pub bs_irs: Vec<Vec<Complex>>,
    pub direct: Vec<Vec<Complex>>,
    pub irs_user: Vec<Vec<Complex>>,
    /// User coordinates in meters; empty for channels not drawn from geometry.
    pub user_positions: Vec<[f64; 2]>,
}

impl ScenarioFile {
    pub fn new(scenario: &Scenario, cfg: &RunConfig) -> Self {
        let ch = &scenario.channels;
        Self {
            provenance: Provenance::new(SCENARIO_FORMAT, cfg),
            complex_encoding: COMPLEX_ENCODING.to_string(),
            n_tx: ch.n_tx(),
            n_users: ch.n_users(),
            n_irs: ch.n_irs(),
            bs_irs: encode_matrix(ch.bs_irs()),
            direct: ch.direct().iter().map(encode_vector).collect(),
            irs_user: ch.irs_user().iter().map(encode_vector).collect(),
            user_positions: scenario.user_positions.iter().map(|p| [p.x, p.y]).collect(),
        }
    }

    pub fn to_scenario(&self) -> Result<Scenario> {
        self.provenance.check(SCENARIO_FORMAT)?;
        ensure!(
            self.complex_encoding == COMPLEX_ENCODING,
            "unsupported complex encoding '{}'",
            self.complex_encoding
        );
        ensure!(
            self.bs_irs.len() == self.n_irs,
            "bs_irs has {} rows, expected n_irs = {}",
            self.bs_irs.len(),
            self.n_irs
        );
        ensure!(
            self.direct.len() == self.n_users,
            "direct has {} rows, expected n_users = {}",
            self.direct.len(),
            self.n_users
        );
        ensure!(
            self.irs_user.len() == self.n_users,
            "irs_user has {} rows, expected n_users = {}",
            self.irs_user.len(),
            self.n_users
        );
        let bs_irs = decode_matrix(&self.bs_irs, self.n_tx, "bs_irs")?;
        let direct: Vec<_> = self.direct.iter().map(|v| decode_vector(v)).collect();
        let irs_user: Vec<_> = self.irs_user.iter().map(|v| decode_vector(v)).collect();
        let channels = ChannelSet::new(bs_irs, direct, irs_user)?;
        Ok(Scenario {
            channels,
            user_positions: self.user_positions.iter().map(|p| Point2::new(p[0], p[1])).collect(),
        })
    }
}

/// An optimized design with the block it was optimized for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFile {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub complex_encoding: String,
    pub scheme: Scheme,
    pub constellation: String,
    /// Constellation indices, one row per user.
    pub symbols: Vec<Vec<usize>>,
    /// N×T, one column per slot.
    pub precode: Vec<Vec<Complex>>,
    /// `[d^R_1..d^R_K, d^I_1..d^I_K]`; absent for PSK.
    pub spacing: Option<Vec<f64>>,
    pub theta: Vec<Complex>,
    pub exact_objective: f64,
    pub smoothed_objective: Option<f64>,
    pub worst_margin: f64,
}

impl DesignFile {
    pub fn to_design(&self) -> Result<(DesignVariables, SymbolBlock)> {
        self.provenance.check(DESIGN_FORMAT)?;
        let c: Constellation = self.constellation.parse()?;
        let k = self.symbols.len();
        ensure!(k > 0, "design has no users");
        let t = self.symbols[0].len();
        ensure!(self.symbols.iter().all(|r| r.len() == t), "ragged symbol rows");
        let idx = DMatrix::from_fn(k, t, |i, j| self.symbols[i][j]);
        let sym = SymbolBlock::from_indices(c, idx)?;
        let precode = decode_matrix(&self.precode, t, "precode")?;
        let design = DesignVariables {
            precode,
            spacing: self.spacing.as_ref().map(|d| DVector::from_vec(d.clone())),
            theta: decode_vector(&self.theta),
        };
        Ok((design, sym))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub scheme: Scheme,
    pub trace: SolverTrace,
}

/// Failure count of one `(scheme, M)` case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureCount {
    pub scheme: Scheme,
    #[serde(rename = "M")]
    pub n_irs: usize,
    pub failed_realizations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub provenance: Provenance,
    /// True until every realization has been aggregated.
    pub partial: bool,
    pub completed_realizations: usize,
    pub total_realizations: usize,
    pub threads: Option<usize>,
    pub csv: String,
    pub failures: Vec<FailureCount>,
    pub config: RunConfig,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Writes through a temporary sibling and renames it into place, so readers
/// never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let Some(name) = path.file_name() else {
        bail!("output path {} has no file name", path.display());
    };
    let mut tmp_name = name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}
