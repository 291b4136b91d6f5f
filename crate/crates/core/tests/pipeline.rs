use irs_slp::baselines::{design_scheme, Scheme};
use irs_slp::channel::{generate_scenario, Geometry, PathLossParams, RicianParams};
use irs_slp::constellation::Constellation;
use irs_slp::model::SystemDims;
use irs_slp::optimizer::{ApgConfig, OuterConfig};
use irs_slp::sim::{
    ber_sweep, convergence_trace, run_trials, write_csv, NoiseLevel, RealizationSeeds, SweepSpec, CSV_HEADER,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn small_cfg() -> OuterConfig {
    OuterConfig {
        max_outer: 6,
        apg: ApgConfig {
            max_iter: 300,
            ..ApgConfig::default()
        },
        ..OuterConfig::default()
    }
}

fn spec(c: Constellation) -> SweepSpec {
    SweepSpec {
        dims: SystemDims::new(3, 2, 4, 4, c).unwrap(),
        irs_sizes: vec![0, 4],
        geometry: Geometry::default(),
        path_loss: PathLossParams::default(),
        rician: RicianParams::default(),
        p_db: 20.0,
        noise_levels: [-60.0, -30.0, 0.0].map(NoiseLevel::from_db).to_vec(),
        n_realizations: 3,
        n_trials: 20,
        schemes: Scheme::ALL.to_vec(),
        solver: small_cfg(),
        seed: 9,
    }
}

#[test]
fn sweep_produces_one_record_per_case_and_level() {
    for c in [Constellation::qam16(), Constellation::psk8()] {
        let s = spec(c);
        let out = ber_sweep(&s).unwrap();
        assert_eq!(out.records.len(), s.cases().len() * 3);
        for r in &out.records {
            assert_eq!(r.realizations, 3);
            assert_eq!(r.bits_total, 3 * 20 * 2 * 4 * u64::from(c.bits_per_symbol().unwrap()));
            assert!(r.ci_lo <= r.ber && r.ber <= r.ci_hi);
        }
        // Nearly noiseless: every optimized design decodes perfectly.
        for r in out.records.iter().filter(|r| r.sigma2_db == -60.0) {
            assert_eq!(r.bit_errors, 0, "{} M={}", r.scheme, r.n_irs);
        }
        // Very noisy: errors must appear.
        assert!(out
            .records
            .iter()
            .filter(|r| r.sigma2_db == 0.0)
            .any(|r| r.bit_errors > 0));

        let mut buf = Vec::new();
        write_csv(&out.records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(text.lines().count(), out.records.len() + 1);
    }
}

#[test]
fn sweep_is_identical_on_repeat() {
    let s = spec(Constellation::qam16());
    assert_eq!(ber_sweep(&s).unwrap(), ber_sweep(&s).unwrap());
}

#[test]
fn convergence_trace_descends_within_budget() {
    let dims = SystemDims::new(4, 4, 8, 5, Constellation::qam16()).unwrap();
    let cfg = small_cfg();
    for r in 0..3 {
        let seeds = RealizationSeeds::new(21, r);
        let sc = generate_scenario(
            &dims,
            &Geometry::default(),
            &PathLossParams::default(),
            &RicianParams::default(),
            seeds.channel,
        )
        .unwrap();
        let sym = seeds.symbol_block(dims.constellation, 4, 5);
        let trace = convergence_trace(&sc.channels, &sym, &cfg, seeds.warm_start).unwrap();
        assert!(!trace.objective.is_empty() && trace.objective.len() <= cfg.max_outer);
        assert!(trace.objective[0] <= trace.initial_objective + 1e-9);
        assert!(trace.objective.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        for (f, g) in trace.objective.iter().zip(&trace.exact_objective) {
            // The smoothed objective upper-bounds the exact one.
            assert!(g <= &(f + 1e-12));
        }
    }
}

#[test]
fn zf_is_error_free_at_very_low_noise() {
    let dims = SystemDims::new(4, 4, 0, 10, Constellation::qam16()).unwrap();
    let seeds = RealizationSeeds::new(5, 0);
    let sc = generate_scenario(
        &dims,
        &Geometry::default(),
        &PathLossParams::default(),
        &RicianParams::default(),
        seeds.channel,
    )
    .unwrap();
    let sym = seeds.symbol_block(dims.constellation, 4, 10);
    let zf = design_scheme(Scheme::ZfNoIrs, &sc.channels, &sym, &small_cfg(), 0).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let counts = run_trials(&zf.channels, &zf.design, &sym, 1e-8, 500, &mut rng).unwrap();
    assert!(counts.ber() < 1e-4);
}
