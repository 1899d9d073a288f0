use tsipw::dataset::LongitudinalDataset;
use tsipw::estimators::{
    estimate, CopyMode, EstimatorConfig, EstimatorKind, EstimatorResult, SliceFitRows,
};
use tsipw::formula::parse;
use tsipw::simulate::{generate, SimConfig};
use tsipw::strategy::StrategySpec;

fn data(n: usize, tau: u32, deaths: bool, seed: u64) -> LongitudinalDataset {
    let mut cfg = SimConfig {
        n,
        tau,
        seed,
        ..SimConfig::default()
    };
    cfg.death.enabled = deaths;
    cfg.guard_rails.min_at_risk = 0;
    generate(&cfg).unwrap()
}

fn run(d: &LongitudinalDataset, cfg: &EstimatorConfig, t_stars: &[u32]) -> EstimatorResult {
    let strategies = vec![StrategySpec::new("g0", 0, 2), StrategySpec::new("g1", 1, 2)];
    let contrasts = vec![("g1".to_string(), "g0".to_string())];
    estimate(d, &strategies, cfg, t_stars, &contrasts).unwrap()
}

fn max_gap(a: &EstimatorResult, b: &EstimatorResult) -> f64 {
    assert_eq!(a.estimates.len(), b.estimates.len());
    a.estimates
        .iter()
        .zip(&b.estimates)
        .map(|(x, y)| {
            assert_eq!((&x.strategy, x.t_star), (&y.strategy, y.t_star));
            (x.psi - y.psi).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn time_saturated_smoothed_estimators_match_non_smoothed() {
    for (seed, deaths) in [(11, true), (12, false)] {
        let d = data(600, 8, deaths, seed);
        let t_stars = [3, 5, 8];
        let ns = run(&d, &EstimatorConfig::simulation_default(EstimatorKind::NonSmoothed), &t_stars);
        for kind in [EstimatorKind::Nonstacked, EstimatorKind::Stacked] {
            let mut cfg = EstimatorConfig::simulation_default(kind);
            cfg.outcome_formula = parse("z + l0 + l0:z").unwrap();
            cfg.time_saturated = true;
            // Slice fits must see the same rows as the per-time fit.
            cfg.slice_fit_rows = SliceFitRows::ThroughSlice;
            let sat = run(&d, &cfg, &t_stars);
            let gap = max_gap(&ns, &sat);
            assert!(gap <= 1e-8, "{kind:?} deaths={deaths}: {gap}");
        }
    }
}

#[test]
fn stacked_matches_nonstacked_at_tau_without_deaths() {
    let d = data(600, 8, false, 13);
    assert!(d.died().iter().all(|&x| x == 0));
    for formula in ["z + l0 + t + l0:z + l0:t", "z + t + z:t"] {
        let mut a = EstimatorConfig::simulation_default(EstimatorKind::Nonstacked);
        a.outcome_formula = parse(formula).unwrap();
        let mut b = EstimatorConfig::simulation_default(EstimatorKind::Stacked);
        b.outcome_formula = parse(formula).unwrap();
        let gap = max_gap(&run(&d, &a, &[8]), &run(&d, &b, &[8]));
        assert!(gap <= 1e-8, "{formula}: {gap}");
    }
}

#[test]
fn copies_and_shortcut_agree_for_exclusive_arms() {
    let d = data(500, 6, true, 14);
    for kind in [EstimatorKind::NonSmoothed, EstimatorKind::Nonstacked, EstimatorKind::Stacked] {
        let mut a = EstimatorConfig::simulation_default(kind);
        a.copy_mode = CopyMode::Copies;
        let mut b = a.clone();
        b.copy_mode = CopyMode::Shortcut;
        let gap = max_gap(&run(&d, &a, &[3, 6]), &run(&d, &b, &[3, 6]));
        assert!(gap <= 1e-10, "{kind:?}: {gap}");
    }
}
