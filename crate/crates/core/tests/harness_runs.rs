use mscp_core::harness::report::{csv_string, parse_csv};
use mscp_core::harness::{
    emit_csv, emit_svg, read_csv, run_classification, run_figure1, run_regression, ExperimentConfig, Gamma, Method,
    RatioMode, RuleSpec, Task,
};
use mscp_core::Execution;

fn small_regression() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(
        Task::Regression,
        12,
        vec![
            Method::Cp,
            Method::PooledWcp,
            Method::MergedVote(Gamma::Value(0.5)),
            Method::MergedVote(Gamma::Bonferroni),
            Method::MergedPvalue(RuleSpec::TwiceMean),
        ],
    );
    cfg.source_sizes = Some(vec![40, 40, 40, 40, 120]);
    cfg.ratio_mode = RatioMode::Logistic;
    cfg.grid_points = 201;
    cfg.record_runtime = false;
    cfg.seed = 5;
    cfg
}

#[test]
fn same_seed_gives_byte_identical_csv() {
    let cfg = small_regression();
    let a = csv_string(&run_regression(&cfg, Execution::Sequential).unwrap()).unwrap();
    let b = csv_string(&run_regression(&cfg, Execution::Sequential).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn parallel_and_sequential_agree() {
    let cfg = small_regression();
    let seq = run_regression(&cfg, Execution::Sequential).unwrap();
    let par = run_regression(&cfg, Execution::Parallel).unwrap();
    assert_eq!(csv_string(&seq).unwrap(), csv_string(&par).unwrap());
}

#[test]
fn different_seeds_differ() {
    let cfg = small_regression();
    let mut other = cfg.clone();
    other.seed = 6;
    let a = run_regression(&cfg, Execution::Sequential).unwrap();
    let b = run_regression(&other, Execution::Sequential).unwrap();
    assert_ne!(a.rows.iter().map(|r| r.medl_or_size).collect::<Vec<_>>(), b.rows.iter().map(|r| r.medl_or_size).collect::<Vec<_>>());
}

#[test]
fn metric_ranges_hold() {
    let report = run_regression(&small_regression(), Execution::default()).unwrap();
    assert_eq!(report.rows.len(), 5);
    for row in &report.rows {
        assert!((0.0..=1.0).contains(&row.mcp) && (0.0..=1.0).contains(&row.pfi));
        assert!(row.medl_or_size >= 0.0);
        assert_eq!(row.replications, 12);
        assert_eq!(row.runtime_seconds, 0.0);
    }
}

#[test]
fn bonferroni_vote_matches_bonferroni_p_values_on_labels() {
    let mut cfg = ExperimentConfig::new(
        Task::Classification,
        40,
        vec![Method::MergedVote(Gamma::Bonferroni), Method::MergedPvalue(RuleSpec::BonferroniMin)],
    );
    cfg.k = 3;
    cfg.domain_size = 120;
    cfg.seed = 9;
    let report = run_classification(&cfg, Execution::default()).unwrap();
    let (a, b) = (&report.rows[0], &report.rows[1]);
    assert_eq!((a.mcp, a.medl_or_size), (b.mcp, b.medl_or_size));
}

#[test]
fn shift_free_classification_covers() {
    let mut cfg = ExperimentConfig::new(Task::Classification, 300, vec![Method::Cp, Method::PooledWcp, Method::MergedVote(Gamma::Value(0.5))]);
    cfg.k = 3;
    cfg.shift = 0.0;
    cfg.domain_size = 150;
    cfg.seed = 3;
    let report = run_classification(&cfg, Execution::default()).unwrap();
    let bar = 0.9 - 3.0 * (0.09f64 / 300.0).sqrt();
    for row in &report.rows {
        assert!(row.mcp >= bar, "{} {}", row.method, row.mcp);
    }
    // The majority vote is the more conservative set.
    assert!(report.rows[2].medl_or_size >= report.rows[1].medl_or_size);
}

#[test]
fn figure1_files_round_trip() {
    let mut cfg = ExperimentConfig::new(Task::Figure1, 30, vec![Method::Wcp, Method::Cp]);
    cfg.mu_list = vec![0.0, 6.0];
    cfg.n_list = vec![10];
    cfg.train_size = 50;
    let report = run_figure1(&cfg, Execution::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("f1.csv");
    let svg = dir.path().join("f1.svg");
    emit_csv(&report, &csv).unwrap();
    emit_svg(&report, &svg).unwrap();

    let back = read_csv(&csv).unwrap();
    assert_eq!(back.len(), 4);
    for (rec, row) in back.iter().zip(&report.rows) {
        assert_eq!(rec.method, row.method.to_string());
        assert_eq!(rec.grid_key, row.grid_key);
        for (a, b) in [(rec.mcp, row.mcp), (rec.pfi, row.pfi), (rec.runtime_seconds, row.runtime_seconds)] {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!(rec.medl_or_size == row.medl_or_size || (rec.medl_or_size - row.medl_or_size).abs() <= 1e-12);
    }
    let text = std::fs::read_to_string(&svg).unwrap();
    roxmltree::Document::parse(&text).unwrap();
    assert_eq!(parse_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap(), back);
}

#[test]
fn task_mismatch_is_rejected() {
    let cfg = ExperimentConfig::new(Task::Figure1, 1, vec![Method::Wcp]);
    assert!(run_regression(&cfg, Execution::Sequential).is_err());
}
