//! Monte-Carlo BER evaluation.
//!
//! Each channel realization is optimized once per scheme; the resulting
//! designs are then evaluated at every noise level with fresh noise on the
//! same transmitted block. Realizations are independent and seeded from the
//! master seed and their index, so results do not depend on thread count.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{design_scheme, Scheme, SchemeDesign};
use crate::channel::{complex_normal, generate_scenario, Geometry, PathLossParams, RicianParams};
use crate::constellation::{Constellation, MarginSet};
use crate::error::{invalid, Error, Result};
use crate::model::{ChannelSet, DesignVariables, SymbolBlock, SystemDims};
use crate::optimizer::{OuterConfig, SolverTrace};
use crate::C64;

/// A noise power in both units; the linear value is what the simulator uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel {
    pub db: f64,
    pub linear: f64,
}

impl NoiseLevel {
    pub fn from_db(db: f64) -> Self {
        Self {
            db,
            linear: crate::db_to_linear(db),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// `dims.n_irs` is ignored in favour of `irs_sizes`.
    pub dims: SystemDims,
    pub irs_sizes: Vec<usize>,
    pub geometry: Geometry,
    pub path_loss: PathLossParams,
    pub rician: RicianParams,
    /// Transmit power label in dB; the solver uses `solver.p_total`.
    pub p_db: f64,
    pub noise_levels: Vec<NoiseLevel>,
    pub n_realizations: usize,
    pub n_trials: usize,
    pub schemes: Vec<Scheme>,
    pub solver: OuterConfig,
    pub seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.dims.constellation.bits_per_symbol()?;
        self.geometry.validate()?;
        self.path_loss.validate()?;
        self.rician.validate()?;
        self.solver.validate()?;
        if self.noise_levels.is_empty() || self.schemes.is_empty() || self.irs_sizes.is_empty() {
            return invalid("noise levels, schemes and IRS sizes must be nonempty");
        }
        if self.n_realizations == 0 || self.n_trials == 0 {
            return invalid("realization and trial counts must be at least 1");
        }
        if self.noise_levels.iter().any(|l| !(l.linear > 0.0)) {
            return invalid("noise powers must be positive");
        }
        Ok(())
    }

    /// `(scheme, M)` pairs evaluated per realization, in output order.
    pub fn cases(&self) -> Vec<(Scheme, usize)> {
        let mut out = Vec::new();
        for &scheme in &self.schemes {
            if scheme.uses_irs() {
                out.extend(self.irs_sizes.iter().map(|&m| (scheme, m)));
            } else {
                out.push((scheme, 0));
            }
        }
        out
    }

    pub fn bits_per_block(&self) -> Result<u64> {
        Ok(self.dims.n_users as u64
            * self.dims.block_len as u64
            * u64::from(self.dims.constellation.bits_per_symbol()?))
    }
}

/// Error counts of one or more noisy transmissions of a block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialCounts {
    pub bit_errors: u64,
    pub bits_total: u64,
    pub symbol_errors: u64,
    pub symbols_total: u64,
}

impl std::ops::AddAssign for TrialCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.bit_errors += rhs.bit_errors;
        self.bits_total += rhs.bits_total;
        self.symbol_errors += rhs.symbol_errors;
        self.symbols_total += rhs.symbols_total;
    }
}

impl TrialCounts {
    pub fn ber(&self) -> f64 {
        if self.bits_total == 0 {
            0.0
        } else {
            self.bit_errors as f64 / self.bits_total as f64
        }
    }

    pub fn ser(&self) -> f64 {
        if self.symbols_total == 0 {
            0.0
        } else {
            self.symbol_errors as f64 / self.symbols_total as f64
        }
    }
}

/// Smallest spacing handed to QAM receivers; a zero spacing carries no
/// amplitude information.
const MIN_SPACING: f64 = 1e-300;

/// Transmits the block once with CN(0, σ²) noise and counts errors.
pub fn run_block_trial<R: Rng + ?Sized>(
    ch: &ChannelSet,
    design: &DesignVariables,
    sym: &SymbolBlock,
    sigma2: f64,
    rng: &mut R,
) -> Result<TrialCounts> {
    let received = ch.noiseless_received(&design.theta, &design.precode)?;
    count_errors(&received, design, sym, sigma2, rng)
}

fn count_errors<R: Rng + ?Sized>(
    received: &DMatrix<C64>,
    design: &DesignVariables,
    sym: &SymbolBlock,
    sigma2: f64,
    rng: &mut R,
) -> Result<TrialCounts> {
    if !(sigma2 >= 0.0) {
        return invalid("noise variance must be nonnegative");
    }
    let constellation = sym.constellation();
    let bits = constellation.bits_per_symbol()?;
    let sigma = sigma2.sqrt();
    let (k, t) = received.shape();
    let mut counts = TrialCounts::default();
    // Noise is drawn slot-major so the draw order is independent of K.
    for tt in 0..t {
        for i in 0..k {
            let y = received[(i, tt)] + complex_normal(rng) * sigma;
            let detected = match constellation {
                Constellation::Qam { .. } => {
                    let spec = constellation.qam().expect("QAM");
                    let (dr, di) = design.user_spacing(i)?;
                    spec.detect(y, dr.max(MIN_SPACING), di.max(MIN_SPACING))?
                }
                Constellation::Psk { .. } => constellation.psk().expect("PSK").detect(y),
            };
            let sent = sym.indices()[(i, tt)];
            let diff = constellation.label(detected)? ^ constellation.label(sent)?;
            counts.bit_errors += u64::from(diff.count_ones());
            counts.symbol_errors += u64::from(detected != sent);
        }
    }
    counts.bits_total = (k * t) as u64 * u64::from(bits);
    counts.symbols_total = (k * t) as u64;
    Ok(counts)
}

/// Runs `trials` independent noisy transmissions of the same block.
pub fn run_trials<R: Rng + ?Sized>(
    ch: &ChannelSet,
    design: &DesignVariables,
    sym: &SymbolBlock,
    sigma2: f64,
    trials: usize,
    rng: &mut R,
) -> Result<TrialCounts> {
    let received = ch.noiseless_received(&design.theta, &design.precode)?;
    let mut total = TrialCounts::default();
    for _ in 0..trials {
        total += count_errors(&received, design, sym, sigma2, rng)?;
    }
    Ok(total)
}

// Stream tags for per-realization generators.
const STREAM_REALIZATION: u64 = 1;
const STREAM_SYMBOLS: u64 = 2;
const STREAM_WARM_START: u64 = 3;
const STREAM_NOISE: u64 = 4;

/// Derives an independent 64-bit seed from `(seed, tag, index)`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((tag << 48) ^ index);
    rng.random()
}

/// Outcome of one `(scheme, M)` case in one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub scheme: Scheme,
    pub n_irs: usize,
    /// One entry per noise level; empty when the design failed.
    pub counts: Vec<TrialCounts>,
    pub worst_margin: Option<f64>,
    pub final_objective: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationResult {
    pub index: usize,
    pub seed: u64,
    pub cases: Vec<CaseOutcome>,
}

fn evaluate_case(
    spec: &SweepSpec,
    design: Result<SchemeDesign>,
    sym: &SymbolBlock,
    scheme: Scheme,
    n_irs: usize,
    realization_seed: u64,
) -> CaseOutcome {
    let design = match design {
        Ok(d) => d,
        Err(e) => {
            return CaseOutcome {
                scheme,
                n_irs,
                counts: Vec::new(),
                worst_margin: None,
                final_objective: None,
                failure: Some(e.to_string()),
            }
        }
    };
    let run = || -> Result<(Vec<TrialCounts>, f64)> {
        let mut counts = Vec::with_capacity(spec.noise_levels.len());
        for (l, level) in spec.noise_levels.iter().enumerate() {
            // Noise streams are shared across schemes for paired comparisons.
            let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(realization_seed, STREAM_NOISE, l as u64));
            counts.push(run_trials(
                &design.channels,
                &design.design,
                sym,
                level.linear,
                spec.n_trials,
                &mut rng,
            )?);
        }
        let margin = crate::constellation::margins(&design.channels, &design.design, sym)?;
        Ok((counts, margin.worst_margin()))
    };
    match run() {
        Ok((counts, worst)) => CaseOutcome {
            scheme,
            n_irs,
            counts,
            worst_margin: Some(worst),
            final_objective: design.trace.as_ref().and_then(|t| t.objective.last().copied()),
            failure: None,
        },
        Err(e) => CaseOutcome {
            scheme,
            n_irs,
            counts: Vec::new(),
            worst_margin: None,
            final_objective: None,
            failure: Some(e.to_string()),
        },
    }
}

/// Seeds of the independent random inputs of one realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealizationSeeds {
    /// Channel and user placement; also the base of the noise streams.
    pub channel: u64,
    pub symbols: u64,
    pub warm_start: u64,
}

impl RealizationSeeds {
    pub fn new(master: u64, index: usize) -> Self {
        let channel = derive_seed(master, STREAM_REALIZATION, index as u64);
        Self {
            channel,
            symbols: derive_seed(channel, STREAM_SYMBOLS, 0),
            warm_start: derive_seed(channel, STREAM_WARM_START, 0),
        }
    }

    /// The uniformly drawn transmit block of this realization.
    pub fn symbol_block(&self, constellation: Constellation, n_users: usize, block_len: usize) -> SymbolBlock {
        let mut rng = ChaCha20Rng::seed_from_u64(self.symbols);
        SymbolBlock::random(constellation, n_users, block_len, &mut rng)
    }

    /// Noise stream of the noise level with index `level`, shared by all
    /// schemes of the realization.
    pub fn noise_stream(&self, level: usize) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(derive_seed(self.channel, STREAM_NOISE, level as u64))
    }
}

/// Channel, symbols and designs for realization `index`, then BER counts.
pub fn run_realization(spec: &SweepSpec, index: usize) -> Result<RealizationResult> {
    let seeds = RealizationSeeds::new(spec.seed, index);
    let sym = seeds.symbol_block(spec.dims.constellation, spec.dims.n_users, spec.dims.block_len);
    let mut cases = Vec::new();
    for (scheme, n_irs) in spec.cases() {
        let dims = SystemDims { n_irs, ..spec.dims };
        let scenario = generate_scenario(&dims, &spec.geometry, &spec.path_loss, &spec.rician, seeds.channel)?;
        let design = design_scheme(scheme, &scenario.channels, &sym, &spec.solver, seeds.warm_start);
        cases.push(evaluate_case(spec, design, &sym, scheme, n_irs, seeds.channel));
    }
    Ok(RealizationResult {
        index,
        seed: seeds.channel,
        cases,
    })
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerRecord {
    pub scheme: String,
    pub constellation: String,
    #[serde(rename = "N")]
    pub n_tx: usize,
    #[serde(rename = "K")]
    pub n_users: usize,
    #[serde(rename = "M")]
    pub n_irs: usize,
    #[serde(rename = "T")]
    pub block_len: usize,
    #[serde(rename = "P_db")]
    pub p_db: f64,
    pub sigma2_db: f64,
    pub realizations: usize,
    pub trials: usize,
    pub bit_errors: u64,
    pub bits_total: u64,
    pub ber: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub seed: u64,
}

/// Fixed CSV header of the results table.
pub const CSV_HEADER: &str =
    "scheme,constellation,N,K,M,T,P_db,sigma2_db,realizations,trials,bit_errors,bits_total,ber,ci_lo,ci_hi,seed";

/// Two-sided 95% Wilson score interval; with zero errors the upper end is
/// the one-sided 95% bound and the lower end is 0.
pub fn wilson_interval(errors: u64, total: u64) -> (f64, f64) {
    if total == 0 {
        return (0.0, 1.0);
    }
    let n = total as f64;
    if errors == 0 {
        const Z_ONE_SIDED: f64 = 1.644_853_626_951_472_2;
        let z2 = Z_ONE_SIDED * Z_ONE_SIDED;
        return (0.0, z2 / (n + z2));
    }
    const Z: f64 = 1.959_963_984_540_054;
    let p = errors as f64 / n;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Pools the counts of all successful realizations into one record per
/// `(scheme, M, σ²)`.
pub fn aggregate(spec: &SweepSpec, results: &[RealizationResult]) -> Vec<BerRecord> {
    let mut records = Vec::new();
    for (c, (scheme, n_irs)) in spec.cases().into_iter().enumerate() {
        for (l, level) in spec.noise_levels.iter().enumerate() {
            let mut total = TrialCounts::default();
            let mut realizations = 0;
            for r in results {
                let case = &r.cases[c];
                if case.failure.is_none() {
                    total += case.counts[l];
                    realizations += 1;
                }
            }
            let (ci_lo, ci_hi) = wilson_interval(total.bit_errors, total.bits_total);
            records.push(BerRecord {
                scheme: scheme.name().to_string(),
                constellation: spec.dims.constellation.name(),
                n_tx: spec.dims.n_tx,
                n_users: spec.dims.n_users,
                n_irs,
                block_len: spec.dims.block_len,
                p_db: spec.p_db,
                sigma2_db: level.db,
                realizations,
                trials: spec.n_trials,
                bit_errors: total.bit_errors,
                bits_total: total.bits_total,
                ber: total.ber(),
                ci_lo,
                ci_hi,
                seed: spec.seed,
            });
        }
    }
    records
}

/// Number of failed designs per `(scheme, M)` case.
pub fn failure_counts(spec: &SweepSpec, results: &[RealizationResult]) -> Vec<((Scheme, usize), usize)> {
    spec.cases()
        .into_iter()
        .enumerate()
        .map(|(c, case)| {
            let n = results.iter().filter(|r| r.cases[c].failure.is_some()).count();
            (case, n)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub records: Vec<BerRecord>,
    pub realizations: Vec<RealizationResult>,
}

/// Runs every realization (in parallel on the current rayon pool) and
/// aggregates in index order. Failed designs are excluded and logged.
pub fn ber_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let realizations = (0..spec.n_realizations)
        .into_par_iter()
        .map(|r| run_realization(spec, r))
        .collect::<Result<Vec<_>>>()?;
    for ((scheme, m), n) in failure_counts(spec, &realizations) {
        if n > 0 {
            log::warn!("{scheme} (M = {m}): {n} realization(s) failed and were excluded");
        }
    }
    Ok(SweepResult {
        records: aggregate(spec, &realizations),
        realizations,
    })
}

/// Writes records under the fixed header.
pub fn write_csv<W: std::io::Write>(records: &[BerRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let io = |e: csv::Error| Error::InvalidState(format!("CSV write failed: {e}"));
    w.write_record(CSV_HEADER.split(',')).map_err(io)?;
    for r in records {
        w.serialize(r).map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::InvalidState(format!("CSV write failed: {e}")))?;
    Ok(())
}

/// Objective sequence of the joint design on one channel realization.
pub fn convergence_trace(ch: &ChannelSet, sym: &SymbolBlock, cfg: &OuterConfig, seed: u64) -> Result<SolverTrace> {
    crate::baselines::slp_irs(ch, sym, cfg, seed)?
        .trace
        .ok_or_else(|| Error::InvalidState("joint design produced no trace".into()))
}

/// Median of a nonempty sample.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Worst margin of a design, reused by reports.
pub fn worst_margin(ch: &ChannelSet, design: &DesignVariables, sym: &SymbolBlock) -> Result<f64> {
    crate::constellation::margins(ch, design, sym).map(|m: MarginSet| m.worst_margin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::zf_no_irs;
    use crate::channel::iid_channels;
    use crate::constellation::q_function;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn tiny_spec(c: Constellation) -> SweepSpec {
        let solver = OuterConfig {
            max_outer: 3,
            apg: crate::optimizer::ApgConfig {
                max_iter: 100,
                ..Default::default()
            },
            ..OuterConfig::default()
        };
        SweepSpec {
            dims: SystemDims::new(2, 2, 2, 3, c).unwrap(),
            irs_sizes: vec![0, 2],
            geometry: Geometry::default(),
            path_loss: PathLossParams::default(),
            rician: RicianParams::default(),
            p_db: 20.0,
            noise_levels: vec![NoiseLevel::from_db(-30.0), NoiseLevel::from_db(-10.0)],
            n_realizations: 4,
            n_trials: 3,
            schemes: Scheme::ALL.to_vec(),
            solver,
            seed: 42,
        }
    }

    #[test]
    fn noiseless_zf_has_no_errors() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for c in [Constellation::qam16(), Constellation::psk8()] {
            let ch = iid_channels(4, 3, 0, &mut rng).unwrap();
            let sym = SymbolBlock::random(c, 3, 8, &mut rng);
            let d = zf_no_irs(&ch, &sym, 10.0).unwrap();
            let counts = run_trials(&d.channels, &d.design, &sym, 0.0, 5, &mut rng).unwrap();
            assert_eq!(counts.bit_errors, 0);
            assert_eq!(counts.bits_total, 5 * 3 * 8 * u64::from(c.bits_per_symbol().unwrap()));
            assert_eq!(counts.symbols_total, 5 * 3 * 8);
        }
    }

    #[test]
    fn qam_symbol_error_rate_matches_closed_form() {
        // Single user, unit channel, x = a·s: per-axis errors are
        // Q(a/σ_axis) per neighbouring decision boundary.
        let c = Constellation::qam16();
        let a = 1.0;
        let sigma2 = 0.5;
        let sigma_axis = (sigma2 / 2.0f64).sqrt();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let sym = SymbolBlock::random(c, 1, 16, &mut rng);
        let ch = ChannelSet::direct_only(vec![DVector::from_element(1, C64::new(1.0, 0.0))]).unwrap();
        let design = DesignVariables {
            precode: sym.symbols() * C64::from(a),
            spacing: Some(DVector::from_element(2, a)),
            theta: DVector::zeros(0),
        };
        let q = q_function(a / sigma_axis);
        let expected: f64 = sym
            .symbols()
            .iter()
            .map(|s| {
                let axis = |v: f64| if v.abs() > 2.0 { q } else { 2.0 * q };
                1.0 - (1.0 - axis(s.re)) * (1.0 - axis(s.im))
            })
            .sum::<f64>()
            / 16.0;
        let trials = 20_000;
        let counts = run_trials(&ch, &design, &sym, sigma2, trials, &mut rng).unwrap();
        let n = counts.symbols_total as f64;
        let se = (expected * (1.0 - expected) / n).sqrt();
        assert!(
            (counts.ser() - expected).abs() < 4.0 * se,
            "{} vs {expected}",
            counts.ser()
        );
        assert!(counts.ber() <= counts.ser());
    }

    #[test]
    fn psk_symbol_error_rate_is_bracketed_by_union_bounds() {
        // For L-PSK at amplitude a: Q(a sin(π/L)/σ_axis) ≤ SER ≤ 2·Q(·).
        let c = Constellation::psk8();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let sym = SymbolBlock::random(c, 1, 8, &mut rng);
        let ch = ChannelSet::direct_only(vec![DVector::from_element(1, C64::new(1.0, 0.0))]).unwrap();
        let a = 2.0;
        let design = DesignVariables {
            precode: sym.symbols() * C64::from(a),
            spacing: None,
            theta: DVector::zeros(0),
        };
        let sigma2 = 0.4;
        let q = q_function(a * (std::f64::consts::PI / 8.0).sin() / (sigma2 / 2.0f64).sqrt());
        let counts = run_trials(&ch, &design, &sym, sigma2, 20_000, &mut rng).unwrap();
        assert!(counts.ser() > q && counts.ser() < 2.0 * q, "{} {q}", counts.ser());
    }

    #[test]
    fn realizations_are_deterministic_and_order_free() {
        let spec = tiny_spec(Constellation::qam16());
        let sweep = ber_sweep(&spec).unwrap();
        for r in (0..spec.n_realizations).rev() {
            assert_eq!(run_realization(&spec, r).unwrap(), sweep.realizations[r]);
        }
        assert_eq!(sweep.records.len(), spec.cases().len() * spec.noise_levels.len());
        let again = ber_sweep(&spec).unwrap();
        assert_eq!(again.records, sweep.records);
    }

    #[test]
    fn records_pool_counts() {
        let spec = tiny_spec(Constellation::psk8());
        let sweep = ber_sweep(&spec).unwrap();
        let bits = spec.bits_per_block().unwrap() * spec.n_trials as u64 * spec.n_realizations as u64;
        for rec in &sweep.records {
            assert_eq!(rec.realizations, spec.n_realizations);
            assert_eq!(rec.bits_total, bits);
            assert_relative_eq!(rec.ber, rec.bit_errors as f64 / bits as f64);
            assert!(rec.ci_lo <= rec.ber && rec.ber <= rec.ci_hi);
        }
        let irs_cases: Vec<_> = spec.cases().into_iter().filter(|c| c.0.uses_irs()).collect();
        assert_eq!(irs_cases.len(), 4);
        assert!(spec.cases().contains(&(Scheme::ZfNoIrs, 0)));
    }

    #[test]
    fn shared_noise_makes_identical_designs_agree() {
        let spec = tiny_spec(Constellation::qam16());
        let r = run_realization(&spec, 1).unwrap();
        let cases = spec.cases();
        let irs0 = cases.iter().position(|c| *c == (Scheme::SlpIrs, 0)).unwrap();
        let noirs = cases.iter().position(|c| *c == (Scheme::SlpNoIrs, 0)).unwrap();
        assert_eq!(r.cases[irs0].counts, r.cases[noirs].counts);
    }

    #[test]
    fn wilson_interval_reference_values() {
        let (lo, hi) = wilson_interval(5, 100);
        assert_relative_eq!(lo, 0.021543, epsilon = 1e-5);
        assert_relative_eq!(hi, 0.111755, epsilon = 1e-5);
        let (lo, hi) = wilson_interval(0, 1000);
        assert_eq!(lo, 0.0);
        assert_relative_eq!(hi, 2.705543 / 1002.705543, max_relative = 1e-6);
        let (lo, hi) = wilson_interval(50, 50);
        assert!(lo > 0.9 && hi == 1.0);
        assert_eq!(wilson_interval(0, 0), (0.0, 1.0));
    }

    #[test]
    fn csv_has_fixed_header() {
        let spec = tiny_spec(Constellation::qam16());
        let sweep = ber_sweep(&spec).unwrap();
        let mut buf = Vec::new();
        write_csv(&sweep.records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 16);
        assert_eq!(first[0], "slp-irs");
        assert_eq!(first[1], "16qam");
        assert_eq!(text.lines().count(), 1 + sweep.records.len());
    }

    #[test]
    fn validation_rejects_empty_and_nonpositive() {
        let mut spec = tiny_spec(Constellation::qam16());
        spec.noise_levels.clear();
        assert!(spec.validate().is_err());
        let mut spec = tiny_spec(Constellation::qam16());
        spec.n_trials = 0;
        assert!(spec.validate().is_err());
        let mut spec = tiny_spec(Constellation::qam16());
        spec.noise_levels[0].linear = 0.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn seeds_and_median() {
        assert_ne!(derive_seed(1, 1, 0), derive_seed(1, 2, 0));
        assert_ne!(derive_seed(1, 1, 0), derive_seed(1, 1, 1));
        assert_eq!(derive_seed(9, 3, 4), derive_seed(9, 3, 4));
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
