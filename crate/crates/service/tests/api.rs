use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use forge_core::par::Exec;
use forge_service::api::{router, AppState, ClusterDetail, ClusterList, CurationResponse, History, Metrics, ReviewQueue, ThemeList};
use forge_service::config::Config;
use forge_service::fixture::write_fixture;
use forge_service::pipeline::run_stage;
use forge_service::stage::Stage;
use forge_service::store::Store;
use serde::de::DeserializeOwned;
use tower::ServiceExt;

fn project(dir: &Path, upto: &[Stage]) -> (Store, Config) {
    let cfg_path = write_fixture(&dir.join("proj"), 120, 5).unwrap();
    let config = Config::load(&cfg_path).unwrap();
    let mut store = Store::open(dir.join("store")).unwrap();
    for s in upto {
        run_stage(&mut store, *s, &config, Exec::default()).unwrap();
    }
    (store, config)
}

const THROUGH_CURATE: [Stage; 6] = [Stage::Ingest, Stage::Extract, Stage::Embed, Stage::Cluster, Stage::Name, Stage::Curate];

fn app(store: Store) -> Router {
    let state = AppState::new(store, Exec::default())
        .unwrap()
        .with_clock(|| "2024-06-01T00:00:00Z".to_string());
    router(Arc::new(state))
}

async fn call(app: &Router, method: &str, uri: &str, body: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

async fn get<T: DeserializeOwned>(app: &Router, uri: &str) -> T {
    let (status, body) = call(app, "GET", uri, "").await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    serde_json::from_slice(&body).unwrap()
}

#[tokio::test]
async fn lists_clusters_and_review_queues() {
    let dir = tempfile::tempdir().unwrap();
    let (store, config) = project(dir.path(), &THROUGH_CURATE);
    let app = app(store);

    let list: ClusterList = get(&app, "/api/clusters").await;
    assert_eq!(list.version, 0);
    assert_eq!(list.clusters.len(), config.cluster.k);
    for (i, c) in list.clusters.iter().enumerate() {
        assert_eq!(c.cluster_id, i);
        assert_eq!(c.theme_id, i);
        assert!(!c.name.is_empty());
        assert!(c.sample_topics.len() <= 20);
    }

    let largest: ReviewQueue = get(&app, "/api/review-queue?filter=largest").await;
    let sizes: Vec<usize> = largest.clusters.iter().map(|c| c.size).collect();
    assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
    assert!(largest.clusters.iter().all(|c| c.review.largest));
    let all: ReviewQueue = get(&app, "/api/review-queue").await;
    assert_eq!(all.clusters.len(), config.cluster.k);

    let (status, _) = call(&app, "GET", "/api/review-queue?filter=medium", "").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let detail: ClusterDetail = get(&app, "/api/clusters/0").await;
    assert_eq!(detail.cluster.size, detail.topics.iter().map(|t| t.count).sum::<usize>());
    assert!(detail.topics.iter().any(|t| t.text == detail.medoid));
    let (status, _) = call(&app, "GET", &format!("/api/clusters/{}", config.cluster.k), "").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn merge_then_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let (store, _) = project(dir.path(), &THROUGH_CURATE);
    let app = app(store);

    let merge = r#"{"kind":"MergeClusters","payload":{"clusters":[0,1],"name":"Merged"},"base_version":0,"actor":"ana"}"#;
    let (status, body) = call(&app, "POST", "/api/curation", merge).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let resp: CurationResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(resp.version, 1);
    assert_eq!(resp.entry.timestamp, "2024-06-01T00:00:00Z");

    let themes: ThemeList = get(&app, "/api/themes").await;
    let merged = themes.themes.iter().find(|t| t.name == "Merged").unwrap();
    assert_eq!(merged.clusters, vec![0, 1]);
    let clusters: ClusterList = get(&app, "/api/clusters").await;
    assert_eq!(clusters.clusters[0].theme_id, merged.theme_id);
    assert_eq!(merged.size, clusters.clusters[0].size + clusters.clusters[1].size);

    // Same base version again: someone else already moved it forward.
    let (status, body) = call(&app, "POST", "/api/curation", merge).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let err: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(err["version"], 1);

    let (status, _) = call(&app, "POST", "/api/curation", r#"{"kind":"Explode"}"#).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let unknown = r#"{"kind":"RenameTheme","payload":{"theme_id":999,"name":"x"},"base_version":1,"actor":"ana"}"#;
    let (status, _) = call(&app, "POST", "/api/curation", unknown).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let history: History = get(&app, "/api/history").await;
    assert_eq!(history.history.len(), 1);
    assert_eq!(history.history[0].actor, "ana");
}

#[tokio::test]
async fn picks_up_changes_from_other_writers() {
    let dir = tempfile::tempdir().unwrap();
    let (store, _) = project(dir.path(), &THROUGH_CURATE);
    let app = app(store);
    let before: ThemeList = get(&app, "/api/themes").await;

    let mut other = Store::open(dir.path().join("store")).unwrap();
    let action = serde_json::from_str(
        r#"{"kind":"RenameTheme","payload":{"theme_id":2,"name":"Renamed"},"base_version":0,"actor":"cli"}"#,
    )
    .unwrap();
    forge_service::pipeline::apply_curation(&mut other, &[action], "t").unwrap();

    let after: ThemeList = get(&app, "/api/themes").await;
    assert_eq!(after.version, before.version + 1);
    assert_eq!(after.themes.iter().find(|t| t.theme_id == 2).unwrap().name, "Renamed");
}

#[tokio::test]
async fn layout_and_metrics_follow_stages() {
    let dir = tempfile::tempdir().unwrap();
    let (mut store, config) = project(dir.path(), &THROUGH_CURATE);
    let app = app(Store::open(store.root()).unwrap());

    let (status, body) = call(&app, "GET", "/api/layout", "").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(String::from_utf8_lossy(&body).contains("viz"));
    let m: Metrics = get(&app, "/api/metrics").await;
    assert!(m.tsne.is_none() && m.stance.is_none() && m.quality.is_none());
    assert!(m.coherence.intra_equal > 0.0 && m.coherence.intra_equal <= 1.0 + 1e-12);

    run_stage(&mut store, Stage::Viz, &config, Exec::default()).unwrap();
    let layout: forge_service::api::Layout = get(&app, "/api/layout").await;
    assert_eq!(layout.points.len(), 9);
    let m: Metrics = get(&app, "/api/metrics").await;
    let t = m.tsne.unwrap();
    assert_eq!(t.points, 9);
    assert!(t.final_kl < t.initial_kl);
}

#[tokio::test]
async fn server_needs_curation_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (store, _) = project(dir.path(), &[Stage::Ingest, Stage::Extract]);
    let err = AppState::new(store, Exec::default()).err().unwrap();
    assert!(err.to_string().contains("curate"), "{err}");
}

#[tokio::test]
async fn validation_answers_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut stages = THROUGH_CURATE.to_vec();
    stages.push(Stage::Validation);
    let (store, _) = project(dir.path(), &stages);
    let app = app(store);

    let v: forge_service::api::Validation = get(&app, "/api/validation").await;
    assert_eq!(v.items.len(), 15);
    let mut answer = v.items[0].clone();
    answer.q1_accurate = Some(true);
    answer.q2_complete = Some(false);
    answer.annotator = "ana".into();
    let body = serde_json::to_string(&vec![answer.clone()]).unwrap();
    let (status, _) = call(&app, "POST", "/api/validation", &body).await;
    assert_eq!(status, StatusCode::OK);
    let v: forge_service::api::Validation = get(&app, "/api/validation").await;
    assert_eq!(v.items[0], answer);

    let mut stranger = answer;
    stranger.doc_id = "nope".into();
    let body = serde_json::to_string(&vec![stranger]).unwrap();
    let (status, _) = call(&app, "POST", "/api/validation", &body).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}
