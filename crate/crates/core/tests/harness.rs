use lfdvs::harness::io::{
    read_csv, read_json, read_references, write_csv, write_json, write_references, PlanRow,
};
use lfdvs::harness::{
    run_pipeline, run_sweep, run_table, Artifacts, ExperimentConfig, HarnessError, LearnedModel,
    Prepared, SweepKind, TableReport,
};
use lfdvs::sim::ServoMode;
use std::path::Path;
use std::sync::OnceLock;

fn default_run() -> &'static (ExperimentConfig, Artifacts) {
    static RUN: OnceLock<(ExperimentConfig, Artifacts)> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = ExperimentConfig::default();
        let art = run_pipeline(&cfg).unwrap();
        (cfg, art)
    })
}

fn prepared() -> Prepared {
    let (cfg, art) = default_run();
    Prepared::new(cfg, &art.learned.references, &art.plan).unwrap()
}

fn bytes(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn artifacts_round_trip_byte_identical() {
    let (cfg, art) = default_run();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();

    write_json(&a.path().join("model.json"), &art.learned.model).unwrap();
    let model: LearnedModel = read_json(&a.path().join("model.json")).unwrap();
    assert_eq!(&model, &art.learned.model);
    write_json(&b.path().join("model.json"), &model).unwrap();
    assert_eq!(bytes(&a.path().join("model.json")), bytes(&b.path().join("model.json")));

    write_csv(&a.path().join("plan.csv"), &art.plan).unwrap();
    let plan: Vec<PlanRow> = read_csv(&a.path().join("plan.csv")).unwrap();
    write_csv(&b.path().join("plan.csv"), &plan).unwrap();
    assert_eq!(bytes(&a.path().join("plan.csv")), bytes(&b.path().join("plan.csv")));

    write_references(a.path(), &art.learned.references).unwrap();
    let refs = read_references(a.path()).unwrap();
    assert_eq!(refs.len(), art.learned.references.len());
    write_references(b.path(), &refs).unwrap();
    for entry in std::fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(bytes(&a.path().join(&name)), bytes(&b.path().join(&name)), "{name:?}");
    }

    let toml = cfg.to_toml();
    std::fs::write(a.path().join("cfg.toml"), &toml).unwrap();
    let back = ExperimentConfig::load(&a.path().join("cfg.toml")).unwrap();
    assert_eq!(&back, cfg);
    assert_eq!(back.to_toml(), toml);
}

#[test]
fn report_reproduces_from_embedded_config() {
    let (cfg, _) = default_run();
    let mut cfg = cfg.clone();
    cfg.experiment.trials = 2;
    let prep = prepared();
    let report = run_table(&prep, &cfg).unwrap();
    assert_eq!(report.header.config_hash, cfg.hash());
    assert_eq!(report.header.seed, cfg.seed);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    write_json(&path, &report).unwrap();
    let back: TableReport = read_json(&path).unwrap();
    assert_eq!(back, report);

    let again = run_table(&prep, &back.header.config).unwrap();
    assert_eq!(again, report);
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.rows[2].name, "No Visual Servoing");
}

#[test]
fn zero_trials_is_an_empty_report() {
    let (cfg, _) = default_run();
    let mut cfg = cfg.clone();
    cfg.experiment.trials = 0;
    assert!(matches!(run_table(&prepared(), &cfg), Err(HarnessError::EmptyReport)));
}

#[test]
fn missing_demo_directory_is_named() {
    let mut cfg = ExperimentConfig::default();
    cfg.paths.demos = Some("/nonexistent/demos".into());
    let err = run_pipeline(&cfg).err().unwrap();
    assert!(err.to_string().contains("/nonexistent/demos"), "{err}");
}

#[test]
fn bias_sweep_properties() {
    let (cfg, _) = default_run();
    let report = run_sweep(&prepared(), cfg, SweepKind::Bias).unwrap();
    let series = |mode| -> Vec<(f64, f64)> {
        report
            .points
            .iter()
            .filter(|p| p.mode == mode)
            .map(|p| (p.value, p.translation_mm))
            .collect()
    };

    // visual servoing does not depend on the registration error
    let vs = series(ServoMode::VisualServo);
    let mean = vs.iter().map(|p| p.1).sum::<f64>() / vs.len() as f64;
    for (b, e) in &vs {
        assert!((e - mean).abs() <= 0.15 * mean, "bias {b}: {e} vs mean {mean}");
    }

    // open loop passes the bias straight through
    let ol = series(ServoMode::OpenLoop);
    let n = ol.len() as f64;
    let (mx, my) = (ol.iter().map(|p| p.0).sum::<f64>() / n, ol.iter().map(|p| p.1).sum::<f64>() / n);
    let slope = ol.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / ol.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope - 1.0).abs() <= 0.1, "slope {slope}");
}

#[test]
fn latency_sweep_covers_both_variants() {
    let (cfg, _) = default_run();
    let mut cfg = cfg.clone();
    cfg.experiment.trials = 1;
    let report = run_sweep(&prepared(), &cfg, SweepKind::Latency).unwrap();
    assert_eq!(report.points.len(), 2 * cfg.sweep.latencies_s.len());
    // without delay compensation is an identity up to rounding
    let zero: Vec<_> = report.points.iter().filter(|p| p.value == 0.0).collect();
    assert!((zero[0].translation_mm - zero[1].translation_mm).abs() < 1e-9);
}

#[test]
fn speed_plan_matches_context() {
    let (_, art) = default_run();
    for r in &art.plan {
        assert!([0.5, 1.0, 2.0].contains(&r.r), "{r:?}");
    }
    let p1: Vec<_> = art.plan.iter().filter(|r| r.primitive == 1).collect();
    let n = p1.len();
    assert!(p1[..n / 3].iter().any(|r| r.r == 0.5));
    assert!(p1[n * 3 / 4..].iter().any(|r| r.r == 2.0));
}
