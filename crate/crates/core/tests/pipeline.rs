mod common;

use common::demo_workspace;
use tristage::cluster::SelectionRule;
use tristage::pipeline::{
    check_config, emit_report, render_text, run_pipeline, BundleStatus, Format, LoadedConfig, PipelineConfig,
    PipelineError, ReportBundle, Session, Stage,
};
use tristage::synthetic::{demo_data, DEMO_SEED};

fn demo_bundle() -> (tempfile::TempDir, LoadedConfig, ReportBundle) {
    let dir = tempfile::tempdir().unwrap();
    let loaded = LoadedConfig::load(&demo_workspace(dir.path())).unwrap();
    let bundle = run_pipeline(&loaded, None).unwrap();
    (dir, loaded, bundle)
}

fn with_config(edit: impl FnOnce(&mut PipelineConfig)) -> (tempfile::TempDir, LoadedConfig) {
    let dir = tempfile::tempdir().unwrap();
    let path = demo_workspace(dir.path());
    let mut config: PipelineConfig = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    edit(&mut config);
    std::fs::write(&path, config.to_json()).unwrap();
    (dir, LoadedConfig::load(&path).unwrap())
}

#[test]
fn demo_reproduces_the_planted_structure() {
    let (_dir, _, bundle) = demo_bundle();
    assert_eq!(bundle.status, BundleStatus::Complete);
    assert!(bundle.diagnostics.is_empty());
    let demo = demo_data(DEMO_SEED);
    for analysis in ["ict", "health"] {
        let eff = bundle.efficiency(analysis).unwrap();
        assert_eq!(eff.scores.len(), 27);
        assert!(eff.scores.iter().all(|row| row.len() == 10));
        assert_eq!(eff.means.len(), 27);
        assert_eq!(eff.fully_efficient, vec![demo.dominant.clone()]);
        let d = eff.dmus.iter().position(|d| *d == demo.dominant).unwrap();
        assert_eq!(eff.means[d], 1.0);

        let cl = bundle.clusters(analysis).unwrap();
        assert_eq!(cl.selected_k, Some(3));
        assert_eq!(cl.anova.as_ref().unwrap().df_between, 2);
        assert_eq!(cl.anova.as_ref().unwrap().df_within, 24);
        assert_eq!(cl.sweep.rule, SelectionRule::MaxIncrementalF);
        // cluster 1 is the planted top tier
        for (m, &tier) in cl.membership.iter().zip(&demo.tiers) {
            assert_eq!(m.cluster, tier + 1, "{}", m.dmu);
        }
    }
    let corr = bundle.correspondence.completed().unwrap();
    assert!(corr.tables[0].agreement_rate >= 0.8);
    let pls = bundle.pls.completed().unwrap();
    assert_eq!(pls.models.len(), 3);
    assert_eq!(pls.cobb_douglas.len(), 3);
    assert!(pls.cobb_douglas.iter().all(|cd| cd.fit.coefficients.len() == 10 && cd.observations == 270));
    assert!(bundle.caveats.iter().any(|c| c.contains("inflated")));
}

#[test]
fn json_round_trip_and_determinism() {
    let (_dir, loaded, bundle) = demo_bundle();
    let json = bundle.to_json();
    assert_eq!(ReportBundle::from_json(&json).unwrap(), bundle);
    assert_eq!(run_pipeline(&loaded, None).unwrap().to_json(), json);
}

#[test]
fn chained_stages_equal_a_full_run() {
    let (_dir, loaded, full) = demo_bundle();
    let session = Session::open(&loaded, None).unwrap();
    let mut bundle = session.new_bundle();
    session.run_dea(&mut bundle, None);
    assert_eq!(bundle.status, BundleStatus::Incomplete);
    // each hand-off goes through JSON, as the CLI does
    let mut bundle = ReportBundle::from_json(&bundle.to_json()).unwrap();
    session.adopt(&bundle).unwrap();
    session.run_cluster(&mut bundle);
    let mut bundle = ReportBundle::from_json(&bundle.to_json()).unwrap();
    session.run_pls(&mut bundle);
    assert_eq!(bundle.to_json(), full.to_json());
}

#[test]
fn seed_override_is_recorded_and_foreign_bundles_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let loaded = LoadedConfig::load(&demo_workspace(dir.path())).unwrap();
    let a = Session::open(&loaded, None).unwrap();
    let b = Session::open(&loaded, Some(77)).unwrap();
    assert_eq!(b.provenance.seeds["cluster"], 77);
    assert_eq!(b.provenance.seeds["pls"], 77);
    assert!(matches!(b.adopt(&a.new_bundle()), Err(PipelineError::Usage(_))));
}

#[test]
fn missing_cluster_config_skips_downstream_stages() {
    let (_dir, loaded) = with_config(|c| c.cluster = None);
    let bundle = run_pipeline(&loaded, None).unwrap();
    assert!(bundle.dea.is_completed());
    assert!(bundle.cluster.is_skipped());
    assert!(bundle.correspondence.is_skipped());
    assert!(bundle.pls.is_skipped());
    assert_eq!(bundle.status, BundleStatus::Incomplete);
    assert!(!bundle.has_failure());
}

#[test]
fn unknown_variable_is_a_validation_error() {
    let (_dir, loaded) = with_config(|c| c.dea[0].spec.inputs.push("NOPE".into()));
    let check = check_config(&loaded).unwrap();
    assert!(!check.is_ok());
    assert!(check.to_string().contains("NOPE"));
    let err = Session::open(&loaded, None).err().unwrap();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn config_hash_tracks_the_config_bytes() {
    let (_a, base) = with_config(|_| {});
    let (_b, changed) = with_config(|c| c.cluster.as_mut().unwrap().seed = 5);
    assert_eq!(base.sha256.len(), 64);
    assert_ne!(base.sha256, changed.sha256);
}

#[test]
fn unknown_period_fails_the_dea_stage() {
    let dir = tempfile::tempdir().unwrap();
    let loaded = LoadedConfig::load(&demo_workspace(dir.path())).unwrap();
    let session = Session::open(&loaded, None).unwrap();
    let mut bundle = session.new_bundle();
    session.run_dea(&mut bundle, Some(&["2008".to_string()]));
    assert!(matches!(bundle.dea, Stage::Failed(_)));
    assert!(bundle.diagnostics[0].message.contains("2008"));
}

#[test]
fn rendered_reports() {
    let (dir, _, mut bundle) = demo_bundle();
    let out = dir.path().join("out");
    let files = emit_report(&bundle, &out, &[Format::Csv, Format::Json, Format::Text]).unwrap();
    assert!(files.iter().all(|f| f.exists()));
    let csv = std::fs::read_to_string(out.join("efficiency_health.csv")).unwrap();
    assert!(csv.lines().any(|l| l.ends_with(",1.0000000")));
    let json = std::fs::read_to_string(out.join("report.json")).unwrap();
    assert_eq!(ReportBundle::from_json(&json).unwrap(), bundle);

    // a fixture path coefficient renders with 3 decimals and its marker
    if let Stage::Completed(pls) = &mut bundle.pls {
        let path = &mut pls.models[0].estimates.paths[1];
        path.beta = -0.8129;
        path.inference.as_mut().unwrap().p_value = 0.0004;
    }
    let text = render_text(&bundle);
    assert!(text.contains(" 1.0000000"));
    assert!(text.contains("-0.813*") && !text.contains("-0.813**"), "{text}");
}
