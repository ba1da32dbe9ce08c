//! JSON HTTP API over a project store.
//!
//! | method | path                      | body / query                      |
//! |--------|---------------------------|-----------------------------------|
//! | GET    | `/api/clusters`           |                                   |
//! | GET    | `/api/clusters/{id}`      |                                   |
//! | GET    | `/api/review-queue`       | `?filter=largest\|smallest\|all`  |
//! | GET    | `/api/themes`             |                                   |
//! | GET    | `/api/history`            |                                   |
//! | POST   | `/api/curation`           | `CurationAction`                  |
//! | GET    | `/api/metrics`            |                                   |
//! | GET    | `/api/layout`             |                                   |
//! | GET    | `/api/validation`         |                                   |
//! | POST   | `/api/validation`         | list of `ValidationItem`          |
//!
//! Every mutable resource carries the merge-map `version`. A curation action
//! whose `base_version` is behind gets 409; an action that does not parse or
//! breaks a merge rule gets 422.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use forge_core::clusters::{review_sample, ClusterId, ClusterName, Clustering, ReviewSet};
use forge_core::par::Exec;
use forge_core::themes::{
    apply_merge, coherence_summary, CoherenceSummary, CurationAction, HistoryEntry, MergeMap, Members, Theme,
    ThemeError, ThemeId, ValidationItem,
};
use forge_core::analytics::QualityRow;
use forge_core::topics::Topic;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::pipeline::{
    self, load_clustering, load_merge_map, load_names, load_topic_vectors, load_topics, read_json, MapPoint,
    PipelineError, StanceEvaluation, TsneSummary,
};
use crate::stage::Stage;
use crate::store::{Store, StoreError};

/// Sample topics shown on a cluster card.
pub const CARD_SAMPLE: usize = 20;

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Conflict { message: String, version: u64 },
    Unprocessable(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, json!({ "error": m })),
            ApiError::Conflict { message, version } => {
                (StatusCode::CONFLICT, json!({ "error": message, "version": version }))
            }
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": m })),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": m })),
        };
        (status, Json(body)).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Store(StoreError::Dependency { missing, .. }) => {
                ApiError::NotFound(format!("stage {missing} has not been run"))
            }
            other => ApiError::Internal(other.to_string()),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewFlags {
    pub largest: bool,
    pub smallest: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCard {
    pub cluster_id: ClusterId,
    pub name: String,
    pub size: usize,
    pub theme_id: ThemeId,
    /// Most frequent member texts, at most `CARD_SAMPLE`.
    pub sample_topics: Vec<String>,
    pub coherence: f64,
    pub review: ReviewFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicCount {
    pub text: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeView {
    pub theme_id: ThemeId,
    pub name: String,
    pub clusters: Vec<ClusterId>,
    pub size: usize,
    pub coherence: f64,
    pub medoid: String,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterList {
    pub version: u64,
    pub clusters: Vec<ClusterCard>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDetail {
    pub version: u64,
    pub cluster: ClusterCard,
    pub theme_name: String,
    pub medoid: String,
    /// Every distinct member text with its count, most frequent first.
    pub topics: Vec<TopicCount>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewFilter {
    Largest,
    Smallest,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewQueue {
    pub version: u64,
    pub filter: ReviewFilter,
    pub clusters: Vec<ClusterCard>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeList {
    pub version: u64,
    pub themes: Vec<ThemeView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub version: u64,
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationResponse {
    pub version: u64,
    pub entry: HistoryEntry,
    pub themes: Vec<ThemeView>,
    /// Stages whose records the change dropped.
    pub invalidated: Vec<Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceMetrics {
    pub intra_equal: f64,
    pub intra_size_weighted: f64,
    pub inter_equal: Option<f64>,
    pub inter_size_weighted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub version: u64,
    pub topics: usize,
    pub clusters: usize,
    pub themes: usize,
    pub coherence: CoherenceMetrics,
    pub stance: Option<StanceEvaluation>,
    pub quality: Option<Vec<QualityRow>>,
    pub tsne: Option<TsneSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub version: u64,
    pub points: Vec<MapPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub items: Vec<ValidationItem>,
}

/// Digests of the stages a snapshot was built from.
type SourceKey = Vec<Option<String>>;

/// Stages behind the cluster view; curation sits on top.
const BASE_SOURCES: [Stage; 4] = [Stage::Extract, Stage::Embed, Stage::Cluster, Stage::Name];

fn source_key(store: &Store, stages: &[Stage]) -> SourceKey {
    stages.iter().map(|s| store.record(*s).map(|r| r.digest())).collect()
}

/// Cluster-level state; fixed until the clustering or names change.
struct Base {
    key: SourceKey,
    topics: Vec<Topic>,
    vectors: Vec<Vec<f64>>,
    clustering: Clustering,
    names: Vec<ClusterName>,
    review: ReviewSet,
    coherence: Vec<f64>,
    medoids: Vec<String>,
    /// Member texts with counts, most frequent first.
    texts: Vec<Vec<TopicCount>>,
}

fn counted_texts(topics: &[Topic], members: &[usize]) -> Vec<TopicCount> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for &i in members {
        *counts.entry(topics[i].text.as_str()).or_default() += 1;
    }
    let mut v: Vec<TopicCount> = counts
        .into_iter()
        .map(|(text, count)| TopicCount {
            text: text.to_string(),
            count,
        })
        .collect();
    v.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.text.cmp(&b.text)));
    v
}

fn medoid_text(topics: &[Topic], key: &forge_core::topics::TopicKey) -> String {
    topics
        .iter()
        .find(|t| &t.key() == key)
        .map(|t| t.text.clone())
        .unwrap_or_default()
}

impl Base {
    fn load(store: &Store, exec: Exec) -> Result<Self, PipelineError> {
        for s in BASE_SOURCES {
            store.require(s, Stage::Curate)?;
        }
        let topics = load_topics(store)?;
        let vectors = load_topic_vectors(store, &topics)?;
        let clustering = load_clustering(store)?;
        let names = load_names(store)?;
        let members = clustering.members();
        let singles: Vec<Theme> = members
            .iter()
            .enumerate()
            .map(|(c, m)| Theme {
                theme_id: c,
                name: String::new(),
                member_clusters: vec![c],
                member_topics: m.clone(),
            })
            .collect();
        let per = coherence_summary(
            &singles.iter().map(|t| Members::of(t, &topics, &vectors)).collect::<Vec<_>>(),
            exec,
        )?;
        Ok(Base {
            key: source_key(store, &BASE_SOURCES),
            review: review_sample(&clustering),
            coherence: per.themes.iter().map(|t| t.coherence).collect(),
            medoids: per.themes.iter().map(|t| medoid_text(&topics, &t.medoid)).collect(),
            texts: members.iter().map(|m| counted_texts(&topics, m)).collect(),
            topics,
            vectors,
            clustering,
            names,
        })
    }
}

/// Curation state over a base.
struct Snapshot {
    key: SourceKey,
    base: Arc<Base>,
    map: MergeMap,
    themes: Vec<ThemeView>,
    summary: CoherenceSummary,
}

impl Snapshot {
    fn build(store: &Store, base: Arc<Base>, map: MergeMap, exec: Exec) -> Result<Self, PipelineError> {
        let themes = apply_merge(&base.clustering, &map)?;
        let members: Vec<Members> = themes.iter().map(|t| Members::of(t, &base.topics, &base.vectors)).collect();
        let summary = coherence_summary(&members, exec)?;
        let views = themes
            .iter()
            .zip(&summary.themes)
            .map(|(t, c)| ThemeView {
                theme_id: t.theme_id,
                name: t.name.clone(),
                clusters: t.member_clusters.clone(),
                size: t.member_topics.len(),
                coherence: c.coherence,
                medoid: medoid_text(&base.topics, &c.medoid),
            })
            .collect();
        Ok(Snapshot {
            key: source_key(store, &SOURCES),
            base,
            map,
            themes: views,
            summary,
        })
    }

    fn card(&self, c: ClusterId) -> ClusterCard {
        let b = &self.base;
        ClusterCard {
            cluster_id: c,
            name: b.names.get(c).map(|n| n.name.clone()).unwrap_or_default(),
            size: b.texts[c].iter().map(|t| t.count).sum(),
            theme_id: self.map.theme_of(c).unwrap_or(c),
            sample_topics: b.texts[c].iter().take(CARD_SAMPLE).map(|t| t.text.clone()).collect(),
            coherence: b.coherence[c],
            review: ReviewFlags {
                largest: b.review.largest.contains(&c),
                smallest: b.review.smallest.contains(&c),
            },
        }
    }
}

const SOURCES: [Stage; 5] = [Stage::Extract, Stage::Embed, Stage::Cluster, Stage::Name, Stage::Curate];

type Clock = Box<dyn Fn() -> String + Send + Sync>;

pub struct AppState {
    store: Mutex<Store>,
    snapshot: RwLock<Arc<Snapshot>>,
    exec: Exec,
    clock: Clock,
}

fn internal<E: std::fmt::Display>(e: E) -> ApiError {
    ApiError::Internal(e.to_string())
}

impl AppState {
    /// Loads the curation state; needs every stage through `curate`.
    pub fn new(store: Store, exec: Exec) -> Result<Self, PipelineError> {
        store.require(Stage::Curate, Stage::Curate)?;
        let base = Arc::new(Base::load(&store, exec)?);
        let snap = Snapshot::build(&store, base, load_merge_map(&store)?, exec)?;
        Ok(AppState {
            store: Mutex::new(store),
            snapshot: RwLock::new(Arc::new(snap)),
            exec,
            clock: Box::new(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
        })
    }

    /// Replaces the wall clock used to stamp history entries.
    pub fn with_clock(mut self, clock: impl Fn() -> String + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    /// Snapshot matching the store, rebuilt when another process changed
    /// the stages it was built from. Caller holds the store lock.
    fn refresh(&self, store: &mut Store) -> Result<Arc<Snapshot>, ApiError> {
        store.reload().map_err(internal)?;
        let snap = self.snapshot.read().map_err(internal)?.clone();
        if snap.key == source_key(store, &SOURCES) {
            return Ok(snap);
        }
        store.require(Stage::Curate, Stage::Curate).map_err(PipelineError::from)?;
        let base = if snap.base.key == source_key(store, &BASE_SOURCES) {
            snap.base.clone()
        } else {
            Arc::new(Base::load(store, self.exec)?)
        };
        let fresh = Arc::new(Snapshot::build(store, base, load_merge_map(store)?, self.exec)?);
        *self.snapshot.write().map_err(internal)? = fresh.clone();
        Ok(fresh)
    }

    fn current(&self) -> Result<Arc<Snapshot>, ApiError> {
        let mut store = self.store.lock().map_err(internal)?;
        self.refresh(&mut store)
    }

    fn curate(&self, action: CurationAction) -> Result<CurationResponse, ApiError> {
        // The store lock is the single writer queue.
        let mut store = self.store.lock().map_err(internal)?;
        let snap = self.refresh(&mut store)?;
        let timestamp = (self.clock)();
        let (map, invalidated) =
            pipeline::apply_curation(&mut store, std::slice::from_ref(&action), &timestamp).map_err(|e| match e {
                PipelineError::Theme(ThemeError::Stale { current, .. }) => ApiError::Conflict {
                    message: format!("base_version {} is stale; current version is {current}", action.base_version),
                    version: current,
                },
                PipelineError::Theme(e) => ApiError::Unprocessable(e.to_string()),
                other => ApiError::from(other),
            })?;
        let next = Arc::new(Snapshot::build(&store, snap.base.clone(), map, self.exec)?);
        *self.snapshot.write().map_err(internal)? = next.clone();
        Ok(CurationResponse {
            version: next.map.version,
            entry: next.map.history.last().cloned().expect("action recorded"),
            themes: next.themes.clone(),
            invalidated,
        })
    }

    fn read_optional<T: serde::de::DeserializeOwned>(&self, stage: Stage, name: &str) -> Result<Option<T>, ApiError> {
        let mut store = self.store.lock().map_err(internal)?;
        store.reload().map_err(internal)?;
        if store.record(stage).is_none() {
            return Ok(None);
        }
        Ok(Some(read_json(&store, stage, name)?))
    }
}

type Shared = State<Arc<AppState>>;

async fn list_clusters(State(app): Shared) -> ApiResult<ClusterList> {
    let s = app.current()?;
    Ok(Json(ClusterList {
        version: s.map.version,
        clusters: (0..s.base.clustering.k).map(|c| s.card(c)).collect(),
    }))
}

async fn cluster_detail(State(app): Shared, Path(id): Path<String>) -> ApiResult<ClusterDetail> {
    let s = app.current()?;
    let c: ClusterId = id
        .parse()
        .ok()
        .filter(|c| *c < s.base.clustering.k)
        .ok_or_else(|| ApiError::NotFound(format!("no cluster {id}")))?;
    let card = s.card(c);
    Ok(Json(ClusterDetail {
        version: s.map.version,
        theme_name: s.map.theme_names.get(&card.theme_id).cloned().unwrap_or_default(),
        medoid: s.base.medoids[c].clone(),
        topics: s.base.texts[c].clone(),
        cluster: card,
    }))
}

async fn review_queue(State(app): Shared, Query(q): Query<HashMap<String, String>>) -> ApiResult<ReviewQueue> {
    let filter = match q.get("filter").map(String::as_str) {
        None | Some("all") => ReviewFilter::All,
        Some("largest") => ReviewFilter::Largest,
        Some("smallest") => ReviewFilter::Smallest,
        Some(other) => {
            return Err(ApiError::Unprocessable(format!(
                "unknown filter {other:?} (expected largest, smallest or all)"
            )))
        }
    };
    let s = app.current()?;
    let ids: Vec<ClusterId> = match filter {
        ReviewFilter::Largest => s.base.review.largest.clone(),
        ReviewFilter::Smallest => s.base.review.smallest.clone(),
        ReviewFilter::All => {
            let sizes = s.base.clustering.sizes();
            let mut all: Vec<ClusterId> = (0..s.base.clustering.k).collect();
            all.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
            all
        }
    };
    Ok(Json(ReviewQueue {
        version: s.map.version,
        filter,
        clusters: ids.into_iter().map(|c| s.card(c)).collect(),
    }))
}

async fn list_themes(State(app): Shared) -> ApiResult<ThemeList> {
    let s = app.current()?;
    Ok(Json(ThemeList {
        version: s.map.version,
        themes: s.themes.clone(),
    }))
}

async fn history(State(app): Shared) -> ApiResult<History> {
    let s = app.current()?;
    Ok(Json(History {
        version: s.map.version,
        history: s.map.history.clone(),
    }))
}

async fn post_curation(State(app): Shared, body: Bytes) -> ApiResult<CurationResponse> {
    let action: CurationAction =
        serde_json::from_slice(&body).map_err(|e| ApiError::Unprocessable(format!("malformed action: {e}")))?;
    Ok(Json(app.curate(action)?))
}

async fn metrics(State(app): Shared) -> ApiResult<Metrics> {
    let s = app.current()?;
    let sum = &s.summary;
    Ok(Json(Metrics {
        version: s.map.version,
        topics: s.base.topics.len(),
        clusters: s.base.clustering.k,
        themes: s.themes.len(),
        coherence: CoherenceMetrics {
            intra_equal: sum.intra_equal,
            intra_size_weighted: sum.intra_size_weighted,
            inter_equal: sum.inter_equal,
            inter_size_weighted: sum.inter_size_weighted,
        },
        stance: app.read_optional(Stage::StanceEval, "evaluation.json")?,
        quality: app.read_optional(Stage::Quality, "quality.json")?,
        tsne: app.read_optional(Stage::Viz, "tsne.json")?,
    }))
}

async fn layout(State(app): Shared) -> ApiResult<Layout> {
    let version = app.current()?.map.version;
    let points = app
        .read_optional(Stage::Viz, "layout.json")?
        .ok_or_else(|| ApiError::NotFound("no layout: run `forge viz`".into()))?;
    Ok(Json(Layout { version, points }))
}

async fn get_validation(State(app): Shared) -> ApiResult<Validation> {
    let mut store = app.store.lock().map_err(internal)?;
    store.reload().map_err(internal)?;
    Ok(Json(Validation {
        items: pipeline::load_validation(&store)?,
    }))
}

async fn post_validation(State(app): Shared, body: Bytes) -> ApiResult<Validation> {
    let answers: Vec<ValidationItem> =
        serde_json::from_slice(&body).map_err(|e| ApiError::Unprocessable(format!("malformed answers: {e}")))?;
    let mut store = app.store.lock().map_err(internal)?;
    store.reload().map_err(internal)?;
    let items = pipeline::record_validation_answers(&mut store, &answers).map_err(|e| match e {
        PipelineError::Invalid(m) => ApiError::Unprocessable(m),
        other => ApiError::from(other),
    })?;
    Ok(Json(Validation { items }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/clusters", get(list_clusters))
        .route("/api/clusters/{id}", get(cluster_detail))
        .route("/api/review-queue", get(review_queue))
        .route("/api/themes", get(list_themes))
        .route("/api/history", get(history))
        .route("/api/curation", axum::routing::post(post_curation))
        .route("/api/metrics", get(metrics))
        .route("/api/layout", get(layout))
        .route("/api/validation", get(get_validation).post(post_validation))
        .with_state(state)
}

pub async fn serve(state: AppState, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
