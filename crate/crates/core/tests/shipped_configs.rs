use std::path::Path;

use tsipw::config::AnalysisConfig;

fn load(name: &str) -> AnalysisConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    AnalysisConfig::load(&path).unwrap_or_else(|e| panic!("{name}: {e}")).0
}

#[test]
fn analysis_config_names_three_estimators_and_one_contrast() {
    let cfg = load("analysis.toml");
    let names: Vec<String> = cfg.estimator_configs().unwrap().into_iter().map(|e| e.name).collect();
    assert_eq!(names, ["non_smoothed", "nonstacked", "stacked"]);
    assert_eq!(cfg.contrast_pairs(), [("g1".to_string(), "g0".to_string())]);
    assert_eq!(cfg.t_stars(), [6, 12, 18, 24]);
}

#[test]
fn null_study_matches_the_replication_design() {
    let cfg = load("null_study.toml");
    let s = &cfg.simulation;
    assert_eq!((s.n, s.tau, s.grace_length), (1000, 24, 2));
    assert_eq!(cfg.study.replicates, 200);
    assert!(cfg.study.intervals);
    assert_eq!(cfg.study.bootstrap.replicates, 250);
    assert_eq!(s.outcome.t2, 0.0);
}

#[test]
fn curved_study_bends_the_mean_and_skips_intervals() {
    let cfg = load("curved_study.toml");
    assert!(cfg.simulation.outcome.t2 < 0.0);
    assert!(!cfg.study.intervals);
    assert_eq!(cfg.estimator_configs().unwrap().len(), 2);
}
