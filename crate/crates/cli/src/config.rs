//! Run configuration: a TOML file whose every section and key is optional,
//! defaulting to the desk-scale setup. Unknown keys are rejected.
//!
//! Power and noise values are written in dB; [`RunConfig::resolve`] converts
//! them once into the linear values used everywhere else.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use irs_slp::baselines::Scheme;
use irs_slp::channel::{Geometry, PathLossParams, Point2, RicianParams};
use irs_slp::constellation::Constellation;
use irs_slp::model::{PowerBudget, SystemDims};
use irs_slp::objective::SmoothingConfig;
use irs_slp::optimizer::{ApgConfig, LineSearchConfig, OuterConfig};
use irs_slp::sim::{NoiseLevel, SweepSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed of every random draw.
    pub seed: u64,
    pub system: SystemSection,
    pub geometry: GeometrySection,
    pub path_loss: PathLossSection,
    pub rician: RicianSection,
    pub power: PowerSection,
    pub solver: SolverSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            system: SystemSection::default(),
            geometry: GeometrySection::default(),
            path_loss: PathLossSection::default(),
            rician: RicianSection::default(),
            power: PowerSection::default(),
            solver: SolverSection::default(),
            sweep: SweepSection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub n_tx: usize,
    pub n_users: usize,
    pub n_irs: usize,
    pub block_len: usize,
    /// `<order>qam` or `<order>psk`, e.g. `16qam`, `8psk`.
    pub constellation: String,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            n_tx: 4,
            n_users: 4,
            n_irs: 16,
            block_len: 10,
            constellation: "16qam".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub bs: [f64; 2],
    pub irs: [f64; 2],
    pub user_center: [f64; 2],
    pub user_radius: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        let g = Geometry::default();
        Self {
            bs: [g.bs_pos.x, g.bs_pos.y],
            irs: [g.irs_pos.x, g.irs_pos.y],
            user_center: [g.user_circle_center.x, g.user_circle_center.y],
            user_radius: g.user_circle_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathLossSection {
    /// Gain at 1 m in dB.
    pub c0_db: f64,
    pub alpha_bs_irs: f64,
    pub alpha_irs_user: f64,
    pub alpha_bs_user: f64,
}

impl Default for PathLossSection {
    fn default() -> Self {
        let p = PathLossParams::default();
        Self {
            c0_db: p.c0_db,
            alpha_bs_irs: p.alpha_bi,
            alpha_irs_user: p.alpha_iu,
            alpha_bs_user: p.alpha_bu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RicianSection {
    pub beta_bs_irs: f64,
    pub beta_irs_user: f64,
    pub beta_bs_user: f64,
}

impl Default for RicianSection {
    fn default() -> Self {
        let r = RicianParams::default();
        Self {
            beta_bs_irs: r.beta_bi,
            beta_irs_user: r.beta_iu,
            beta_bs_user: r.beta_bu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerSection {
    /// Per-slot transmit power limit.
    pub p_db: f64,
    /// Noise power used by single-design reports.
    pub noise_db: f64,
}

impl Default for PowerSection {
    fn default() -> Self {
        Self {
            p_db: 20.0,
            noise_db: -20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub eta: f64,
    pub eta_continuation: Vec<f64>,
    pub max_outer: usize,
    pub outer_tol: f64,
    pub apg_max_iter: usize,
    pub apg_tol: f64,
    pub apg_restart: bool,
    pub keep_best: bool,
    pub theta_restart: bool,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_beta: Option<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = OuterConfig::default();
        Self {
            eta: o.smoothing.eta,
            eta_continuation: o.eta_continuation,
            max_outer: o.max_outer,
            outer_tol: o.outer_tol,
            apg_max_iter: o.apg.max_iter,
            apg_tol: o.apg.tol,
            apg_restart: o.apg.restart,
            keep_best: o.apg.keep_best,
            theta_restart: o.theta_restart,
            backtrack_factor: o.line_search.shrink,
            max_backtracks: o.line_search.max_backtracks,
            initial_beta: o.line_search.initial_beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub noise_db: Vec<f64>,
    /// IRS sizes for the IRS-aided schemes; the others always use `M = 0`.
    pub irs_sizes: Vec<usize>,
    pub realizations: usize,
    pub trials: usize,
    pub schemes: Vec<Scheme>,
    /// Realizations between partial-result checkpoints.
    pub checkpoint_every: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            noise_db: vec![-32.0, -28.0, -24.0, -20.0, -16.0, -12.0],
            irs_sizes: vec![16],
            realizations: 100,
            trials: 50,
            schemes: Scheme::ALL.to_vec(),
            checkpoint_every: 10,
        }
    }
}

/// Output locations; relative file names are placed under `dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub sweep_csv: PathBuf,
    pub manifest: PathBuf,
    pub design: PathBuf,
    pub solve_trace: PathBuf,
    pub trace_csv: PathBuf,
    pub scenario: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            sweep_csv: "sweep.csv".into(),
            manifest: "sweep.manifest.json".into(),
            design: "design.json".into(),
            solve_trace: "solve_trace.json".into(),
            trace_csv: "trace.csv".into(),
            scenario: "scenario.json".into(),
        }
    }
}

impl OutputSection {
    pub fn path(&self, file: &Path) -> PathBuf {
        if file.is_absolute() {
            file.to_path_buf()
        } else {
            self.dir.join(file)
        }
    }
}

/// Validated configuration with every quantity in linear units.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub seed: u64,
    pub dims: SystemDims,
    pub geometry: Geometry,
    pub path_loss: PathLossParams,
    pub rician: RicianParams,
    pub power: PowerBudget,
    pub solver: OuterConfig,
    pub sweep: SweepSpec,
    pub checkpoint_every: usize,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Loads `path` (or the defaults) and applies `section.key=value`
    /// overrides, each value written as a TOML literal.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
            None => String::new(),
        };
        let mut table: toml::Table = text.parse().context("parsing config")?;
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        let cfg: RunConfig = table.try_into().context("invalid configuration")?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let constellation: Constellation = self.system.constellation.parse()?;
        let s = &self.system;
        let dims = SystemDims::new(s.n_tx, s.n_users, s.n_irs, s.block_len, constellation)?;
        constellation.bits_per_symbol()?;
        let point = |p: [f64; 2]| Point2::new(p[0], p[1]);
        let geometry = Geometry {
            bs_pos: point(self.geometry.bs),
            irs_pos: point(self.geometry.irs),
            user_circle_center: point(self.geometry.user_center),
            user_circle_radius: self.geometry.user_radius,
        };
        geometry.validate()?;
        let path_loss = PathLossParams {
            c0_db: self.path_loss.c0_db,
            alpha_bi: self.path_loss.alpha_bs_irs,
            alpha_iu: self.path_loss.alpha_irs_user,
            alpha_bu: self.path_loss.alpha_bs_user,
        };
        path_loss.validate()?;
        let rician = RicianParams {
            beta_bi: self.rician.beta_bs_irs,
            beta_iu: self.rician.beta_irs_user,
            beta_bu: self.rician.beta_bs_user,
        };
        rician.validate()?;
        let power = PowerBudget::new(
            irs_slp::db_to_linear(self.power.p_db),
            irs_slp::db_to_linear(self.power.noise_db),
        )?;
        let sv = &self.solver;
        if !(sv.backtrack_factor > 1.0) {
            bail!("solver.backtrack_factor must exceed 1");
        }
        if sv.initial_beta.is_some_and(|b| !(b > 0.0)) {
            bail!("solver.initial_beta must be positive");
        }
        let solver = OuterConfig {
            smoothing: SmoothingConfig::new(sv.eta)?,
            p_total: power.p_total,
            max_outer: sv.max_outer,
            outer_tol: sv.outer_tol,
            apg: ApgConfig {
                max_iter: sv.apg_max_iter,
                tol: sv.apg_tol,
                restart: sv.apg_restart,
                keep_best: sv.keep_best,
            },
            line_search: LineSearchConfig {
                shrink: sv.backtrack_factor,
                max_backtracks: sv.max_backtracks,
                initial_beta: sv.initial_beta,
            },
            theta_restart: sv.theta_restart,
            eta_continuation: sv.eta_continuation.clone(),
        };
        solver.validate()?;
        let sweep = SweepSpec {
            dims,
            irs_sizes: self.sweep.irs_sizes.clone(),
            geometry,
            path_loss,
            rician,
            p_db: self.power.p_db,
            noise_levels: self.sweep.noise_db.iter().map(|&db| NoiseLevel::from_db(db)).collect(),
            n_realizations: self.sweep.realizations,
            n_trials: self.sweep.trials,
            schemes: self.sweep.schemes.clone(),
            solver: solver.clone(),
            seed: self.seed,
        };
        sweep.validate()?;
        if self.sweep.checkpoint_every == 0 {
            bail!("sweep.checkpoint_every must be at least 1");
        }
        Ok(Resolved {
            seed: self.seed,
            dims,
            geometry,
            path_loss,
            rician,
            power,
            solver,
            sweep,
            checkpoint_every: self.sweep.checkpoint_every,
        })
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override '{spec}' is not of the form key=value"))?;
    let key = key.trim();
    let value = parse_literal(raw.trim()).with_context(|| format!("override '{spec}'"))?;
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| anyhow!("empty key in '{spec}'"))?;
    let mut node = table;
    for part in parts {
        node = node
            .entry(part)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| anyhow!("'{part}' in '{key}' is not a section"))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

/// Parses a TOML value; bare words fall back to strings.
fn parse_literal(raw: &str) -> Result<toml::Value> {
    let doc: Result<toml::Table, _> = format!("v = {raw}").parse();
    match doc {
        Ok(mut t) => Ok(t.remove("v").expect("parsed key")),
        Err(_) if !raw.is_empty() && raw.chars().all(|c| c.is_ascii_alphanumeric() || "-_./".contains(c)) => {
            Ok(toml::Value::String(raw.to_string()))
        }
        Err(e) => Err(anyhow!("cannot parse value '{raw}': {e}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let r = RunConfig::default().resolve().unwrap();
        assert_eq!(r.dims.n_irs, 16);
        assert!((r.power.p_total - 100.0).abs() < 1e-12);
        assert!((r.power.noise_var - 0.01).abs() < 1e-15);
        assert_eq!(r.sweep.noise_levels.len(), 6);
        assert_eq!(r.solver.p_total, r.power.p_total);
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip_is_identity() {
        let mut cfg = RunConfig {
            seed: 77,
            ..RunConfig::default()
        };
        cfg.solver.initial_beta = Some(3.5);
        cfg.solver.eta_continuation = vec![0.1, 0.03];
        cfg.sweep.schemes = vec![Scheme::SlpIrs, Scheme::ZfNoIrs];
        cfg.system.constellation = "8psk".into();
        for c in [RunConfig::default(), cfg] {
            let text = c.to_toml().unwrap();
            let back = RunConfig::from_toml(&text).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_toml().unwrap(), text);
            assert_eq!(back.hash(), c.hash());
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
        assert!(RunConfig::from_toml("[system]\nn_tx = 2\nn_rx = 2").is_err());
        assert!(RunConfig::from_toml("[solvers]\neta = 0.1").is_err());
        let err = RunConfig::load_with_overrides(None, &["solver.etaa=0.1".into()]).unwrap_err();
        assert!(format!("{err:#}").contains("etaa"), "{err:#}");
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = RunConfig::from_toml("seed = 5\n[system]\nn_irs = 0\n[power]\np_db = 10").unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.system.n_irs, 0);
        assert_eq!(cfg.system.n_tx, 4);
        let r = cfg.resolve().unwrap();
        assert!((r.power.p_total - 10.0).abs() < 1e-12);
    }

    #[test]
    fn overrides_apply_in_order() {
        let cfg = RunConfig::load_with_overrides(
            None,
            &[
                "seed=9".into(),
                "system.constellation=8psk".into(),
                "sweep.noise_db=[-10, -5.5]".into(),
                "sweep.schemes=[\"zf-noirs\"]".into(),
                "seed = 10".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 10);
        assert_eq!(cfg.system.constellation, "8psk");
        assert_eq!(cfg.sweep.noise_db, vec![-10.0, -5.5]);
        assert_eq!(cfg.sweep.schemes, vec![Scheme::ZfNoIrs]);
        assert!(RunConfig::load_with_overrides(None, &["seed".into()]).is_err());
    }

    #[test]
    fn invalid_values_are_reported() {
        let bad = |ov: &str| {
            RunConfig::load_with_overrides(None, &[ov.into()])
                .and_then(|c| c.resolve())
                .is_err()
        };
        assert!(bad("system.constellation=\"12qam\""));
        assert!(bad("system.n_tx=0"));
        assert!(bad("rician.beta_bs_irs=1.5"));
        assert!(bad("solver.eta=0"));
        assert!(bad("sweep.realizations=0"));
        assert!(bad("sweep.noise_db=[]"));
        assert!(bad("sweep.schemes=[\"mmse\"]"));
        assert!(bad("solver.backtrack_factor=1.0"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn relative_outputs_live_under_dir() {
        let o = OutputSection {
            dir: "/tmp/x".into(),
            ..OutputSection::default()
        };
        assert_eq!(o.path(Path::new("a.csv")), PathBuf::from("/tmp/x/a.csv"));
        assert_eq!(o.path(Path::new("/abs/b.csv")), PathBuf::from("/abs/b.csv"));
    }
}
