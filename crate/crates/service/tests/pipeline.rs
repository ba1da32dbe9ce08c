use std::fs;
use std::path::Path;

use forge_core::par::Exec;
use forge_core::themes::CurationAction;
use forge_service::config::Config;
use forge_service::export::{export_report, BUNDLE_MANIFEST};
use forge_service::fixture::write_fixture;
use forge_service::pipeline::{apply_curation, run_stage, status, PipelineError, RunStatus};
use forge_service::stage::Stage;
use forge_service::store::{Store, StoreError};

fn config(dir: &Path, docs: usize) -> Config {
    Config::load(&write_fixture(&dir.join("proj"), docs, 9).unwrap()).unwrap()
}

fn run(store: &mut Store, config: &Config, stages: &[Stage], exec: Exec) -> Vec<RunStatus> {
    stages.iter().map(|s| run_stage(store, *s, config, exec).unwrap().status).collect()
}

#[test]
fn missing_dependency_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let config = config(dir.path(), 60);
    let mut store = Store::open(dir.path().join("s")).unwrap();
    run(&mut store, &config, &[Stage::Ingest, Stage::Extract], Exec::default());
    let err = run_stage(&mut store, Stage::Cluster, &config, Exec::default()).unwrap_err();
    assert!(
        matches!(&err, PipelineError::Store(StoreError::Dependency { missing, .. }) if *missing == Stage::Embed),
        "{err}"
    );
    assert!(err.to_string().contains("embed"));
    assert!(store.record(Stage::Cluster).is_none());
}

#[test]
fn rerun_is_a_no_op_and_k_change_invalidates_downstream() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = config(dir.path(), 120);
    let mut store = Store::open(dir.path().join("s")).unwrap();
    let all = Stage::ALL.to_vec();
    assert!(run(&mut store, &config, &all, Exec::default()).iter().all(|s| *s == RunStatus::Ran));
    let manifest = fs::read(dir.path().join("s/manifest.json")).unwrap();

    assert!(run(&mut store, &config, &all, Exec::default()).iter().all(|s| *s == RunStatus::Unchanged));
    assert_eq!(fs::read(dir.path().join("s/manifest.json")).unwrap(), manifest);
    assert!(status(&store, &config).iter().all(|s| s.state == "current"));

    config.cluster.k = 8;
    assert!(status(&store, &config).iter().any(|s| s.stage == Stage::Cluster && s.state == "stale"));
    let r = run_stage(&mut store, Stage::Cluster, &config, Exec::default()).unwrap();
    assert_eq!(r.status, RunStatus::Ran);
    for s in [Stage::Name, Stage::Curate, Stage::Tables, Stage::Engagement, Stage::Viz, Stage::Quality] {
        assert!(r.invalidated.contains(&s), "{s} kept");
        assert!(store.record(s).is_none());
    }
    for s in [Stage::Ingest, Stage::Embed, Stage::Diagnose, Stage::StanceScan, Stage::StanceTables] {
        assert!(store.record(s).is_some(), "{s} dropped");
    }
}

#[test]
fn curation_survives_reruns_and_invalidates_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = config(dir.path(), 100);
    let mut store = Store::open(dir.path().join("s")).unwrap();
    let upto = [Stage::Ingest, Stage::Extract, Stage::Embed, Stage::Cluster, Stage::Name, Stage::Curate, Stage::Tables];
    run(&mut store, &config, &upto, Exec::default());
    let action: CurationAction = serde_json::from_str(
        r#"{"kind":"MergeClusters","payload":{"clusters":[1,2],"name":"Both"},"base_version":0,"actor":"t"}"#,
    )
    .unwrap();
    let (map, invalidated) = apply_curation(&mut store, &[action], "2024-01-01T00:00:00Z").unwrap();
    assert_eq!(map.version, 1);
    assert!(invalidated.contains(&Stage::Tables));

    assert_eq!(run_stage(&mut store, Stage::Curate, &config, Exec::default()).unwrap().status, RunStatus::Unchanged);
    assert_eq!(run_stage(&mut store, Stage::Tables, &config, Exec::default()).unwrap().status, RunStatus::Ran);
    let freq = String::from_utf8(store.read(Stage::Tables, "frequency.csv").unwrap()).unwrap();
    assert!(freq.contains(",Both,"));
    assert_eq!(forge_service::pipeline::load_merge_map(&store).unwrap().version, 1);
}

#[test]
fn export_reports_missing_families() {
    let dir = tempfile::tempdir().unwrap();
    let config = config(dir.path(), 80);
    let mut store = Store::open(dir.path().join("s")).unwrap();
    run(&mut store, &config, &[Stage::Ingest], Exec::default());
    let err = export_report(&store, &dir.path().join("none")).unwrap_err();
    assert!(err.to_string().contains("stance-tables"), "{err}");

    run(&mut store, &config, &[Stage::StanceScan, Stage::StanceClassify, Stage::StanceTables], Exec::default());
    let out = dir.path().join("partial");
    let m = export_report(&store, &out).unwrap();
    assert_eq!(m.files.len(), 3);
    assert_eq!(m.warnings.len(), 4);
    assert!(out.join(BUNDLE_MANIFEST).exists());
    assert!(out.join("stance_target.csv").exists());
}

#[test]
fn sequential_and_parallel_stores_match() {
    let dir = tempfile::tempdir().unwrap();
    let config = config(dir.path(), 100);
    let all = Stage::ALL.to_vec();
    let mut bundles = Vec::new();
    for (name, exec) in [("p", Exec::Parallel), ("q", Exec::Sequential)] {
        let mut store = Store::open(dir.path().join(name)).unwrap();
        run(&mut store, &config, &all, exec);
        let out = dir.path().join(format!("{name}-report"));
        export_report(&store, &out).unwrap();
        bundles.push(out);
    }
    let names: Vec<_> = fs::read_dir(&bundles[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 8);
    for n in names {
        assert_eq!(fs::read(bundles[0].join(&n)).unwrap(), fs::read(bundles[1].join(&n)).unwrap(), "{n:?}");
    }
    assert_eq!(
        fs::read(dir.path().join("p/manifest.json")).unwrap(),
        fs::read(dir.path().join("q/manifest.json")).unwrap()
    );
}
