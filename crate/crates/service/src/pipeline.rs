//! Stage execution over the project store.
//!
//! Each stage hashes its parameters, any external input files, and the
//! output digests of the stages it reads. A matching hash in the manifest
//! short-circuits the run; otherwise the stage recomputes and commits, and
//! the store drops downstream records keyed on the old outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use forge_core::analytics::{
    self, channel_theme_vectors, engagement_ranking, groups_in, quality_report, theme_axis, theme_frequency, tsne,
    AnalyticsError, ChannelThemeVector, Group, LayoutPoint, PeriodScope, QualityRow, TsneParams,
};
use forge_core::clusters::{kmeans, name_all_clusters, silhouette, ClusterError, ClusterName, Clustering, KMeansParams};
use forge_core::corpus::{apply_filters, ingest_corpus, write_channels, write_videos, Channel, Corpus, CorpusError, TranscriptDoc};
use forge_core::gateway::GatewayError;
use forge_core::par::Exec;
use forge_core::stance::{
    accuracy, classify_all, read_gold_csv, read_targets, select_relevant_docs, soft_accuracy, stance_table,
    write_records_csv, write_stance_table_csv, Relevance, StanceError, StanceEvalConfig, StanceGrouping,
    StanceRecord, TargetSpec,
};
use forge_core::themes::{
    export_validation_sample, read_validation_csv, video_themes, write_validation_csv, CurationAction, MergeMap,
    ThemeError, ThemeId, ValidationItem,
};
use forge_core::topics::{extract_all, read_topics, write_topics, Topic, TopicError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::config::{parse_k_range, Config, ConfigError};
use crate::stage::Stage;
use crate::store::{sha256_hex, StageCommit, Store, StoreError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Topic(#[from] TopicError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Theme(#[from] ThemeError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Stance(#[from] StanceError),
    #[error("{stage}/{name}: {source}")]
    Decode {
        stage: Stage,
        name: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("cannot read {path}: {source}")]
    Input {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Ran,
    Unchanged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: Stage,
    pub status: RunStatus,
    pub inputs_hash: String,
    /// Output name to sha256.
    pub outputs: BTreeMap<String, String>,
    pub invalidated: Vec<Stage>,
}

type Outputs = Vec<(String, Vec<u8>)>;

fn jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it).expect("in-memory serialization");
        out.push(b'\n');
    }
    out
}

fn pretty<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("in-memory serialization");
    out.push(b'\n');
    out
}

fn file_input(config: &Config, path: &Path) -> Result<(serde_json::Value, Vec<u8>)> {
    let full = config.resolve(path);
    let bytes = std::fs::read(&full).map_err(|source| PipelineError::Input {
        path: full.display().to_string(),
        source,
    })?;
    let desc = json!({ "path": path, "sha256": sha256_hex(&bytes) });
    Ok((desc, bytes))
}

fn required<'a>(opt: &'a Option<std::path::PathBuf>, key: &str) -> Result<&'a Path> {
    opt.as_deref()
        .ok_or_else(|| PipelineError::Invalid(format!("{key} is not set in the config")))
}

/// Parameters that determine a stage's outputs, beyond its upstream
/// digests.
fn stage_params(stage: Stage, config: &Config) -> Result<serde_json::Value> {
    let seed = config.seed;
    Ok(match stage {
        Stage::Ingest => json!({
            "channels": file_input(config, &config.corpus.channels)?.0,
            "videos": file_input(config, &config.corpus.videos)?.0,
            "filters": config.corpus.filters,
        }),
        Stage::Extract => json!({ "backend": config.backend(&config.extract.backend)? }),
        Stage::Embed => json!({ "backend": config.backend(&config.embed.backend)? }),
        Stage::Cluster => json!({ "k": config.cluster.k, "seed": seed, "max_iter": config.cluster.max_iter }),
        Stage::Diagnose => json!({
            "k": parse_k_range(&config.diagnose.elbow)?,
            "silhouette": config.diagnose.silhouette,
            "seed": seed,
            "max_iter": config.cluster.max_iter,
        }),
        Stage::Name => json!({ "backend": config.backend(&config.naming.backend)?, "seed": seed }),
        Stage::Curate | Stage::Tables | Stage::StanceTables => json!({}),
        Stage::Validation => json!({
            "per_dataset": config.validation.per_dataset,
            "max_words": config.validation.max_words,
            "seed": seed,
        }),
        Stage::Engagement => json!({
            "min_occurrence": config.analytics.min_occurrence,
            "metrics": config.analytics.metrics,
            "aggregation": config.analytics.aggregation,
        }),
        Stage::Viz => json!({
            "perplexity": config.viz.perplexity,
            "iterations": config.viz.iterations,
            "metric": config.viz.metric,
            "dataset": config.viz.dataset,
            "min_videos": config.corpus.filters.min_videos_viz,
            "seed": seed,
        }),
        Stage::Quality => match &config.quality.groups {
            Some(p) => json!({ "groups": file_input(config, p)?.0 }),
            None => json!({ "groups": "orientation" }),
        },
        Stage::StanceScan => json!({
            "targets": file_input(config, required(&config.stance.targets, "stance.targets")?)?.0,
            "threshold": config.stance.threshold,
            "datasets": config.stance.datasets,
        }),
        Stage::StanceClassify => json!({ "backend": config.backend(&config.stance.backend)? }),
        Stage::StanceEval => json!({
            "gold": file_input(config, required(&config.stance.gold, "stance.gold")?)?.0,
            "credit": config.stance.credit,
        }),
    })
}

fn inputs_hash(stage: Stage, params: &serde_json::Value, upstream: &BTreeMap<Stage, String>) -> String {
    let doc = json!({ "stage": stage, "params": params, "upstream": upstream });
    sha256_hex(&serde_json::to_vec(&doc).expect("in-memory serialization"))
}

/// Runs one stage, or confirms it is up to date.
pub fn run_stage(store: &mut Store, stage: Stage, config: &Config, exec: Exec) -> Result<StageResult> {
    let mut upstream = BTreeMap::new();
    for &d in stage.deps() {
        upstream.insert(d, store.require(d, stage)?.digest());
    }
    let params = stage_params(stage, config)?;
    let hash = inputs_hash(stage, &params, &upstream);
    let fresh = store
        .record(stage)
        .is_some_and(|r| r.inputs_hash == hash)
        && store.require(stage, stage).is_ok();
    let (status, invalidated) = if fresh {
        log::info!("{stage}: unchanged");
        (RunStatus::Unchanged, Vec::new())
    } else {
        log::info!("{stage}: running");
        let outputs = compute(stage, store, config, exec)?;
        let outcome = store.commit(
            stage,
            StageCommit {
                inputs_hash: hash.clone(),
                params,
                upstream,
                outputs,
                config: config.snapshot(),
            },
        )?;
        if !outcome.invalidated.is_empty() {
            log::info!("{stage}: invalidated {:?}", outcome.invalidated);
        }
        (RunStatus::Ran, outcome.invalidated)
    };
    let rec = store.record(stage).expect("stage just recorded");
    Ok(StageResult {
        stage,
        status,
        inputs_hash: hash,
        outputs: rec.outputs.iter().map(|(n, o)| (n.clone(), o.sha256.clone())).collect(),
        invalidated,
    })
}

fn compute(stage: Stage, store: &Store, config: &Config, exec: Exec) -> Result<Outputs> {
    match stage {
        Stage::Ingest => ingest(config),
        Stage::Extract => extract(store, config, exec),
        Stage::Embed => embed(store, config),
        Stage::Cluster => cluster(store, config, exec),
        Stage::Diagnose => diagnose(store, config, exec),
        Stage::Name => name_clusters(store, config, exec),
        Stage::Curate => {
            let names: Vec<String> = load_names(store)?.into_iter().map(|n| n.name).collect();
            Ok(vec![("merge_map.json".into(), pretty(&MergeMap::identity(&names)))])
        }
        Stage::Validation => validation(store, config),
        Stage::Tables => tables(store),
        Stage::Engagement => engagement(store, config),
        Stage::Viz => viz(store, config, exec),
        Stage::Quality => quality(store, config),
        Stage::StanceScan => stance_scan(store, config, exec),
        Stage::StanceClassify => stance_classify(store, config, exec),
        Stage::StanceEval => stance_eval(store, config),
        Stage::StanceTables => stance_tables(store),
    }
}

// Loaders shared with the HTTP API and export.

pub fn read_json<T: DeserializeOwned>(store: &Store, stage: Stage, name: &str) -> Result<T> {
    let bytes = store.read(stage, name)?;
    serde_json::from_slice(&bytes).map_err(|source| PipelineError::Decode {
        stage,
        name: name.into(),
        source,
    })
}

pub fn read_jsonl<T: DeserializeOwned>(store: &Store, stage: Stage, name: &str) -> Result<Vec<T>> {
    let bytes = store.read(stage, name)?;
    bytes
        .split(|b| *b == b'\n')
        .filter(|l| !l.iter().all(u8::is_ascii_whitespace))
        .map(|l| {
            serde_json::from_slice(l).map_err(|source| PipelineError::Decode {
                stage,
                name: name.into(),
                source,
            })
        })
        .collect()
}

pub fn load_corpus(store: &Store) -> Result<Corpus> {
    let channels: Vec<Channel> = read_jsonl(store, Stage::Ingest, "channels.jsonl")?;
    let videos: Vec<TranscriptDoc> = read_jsonl(store, Stage::Ingest, "videos.jsonl")?;
    Ok(Corpus::new(channels, videos)?)
}

pub fn load_topics(store: &Store) -> Result<Vec<Topic>> {
    Ok(read_topics(store.read(Stage::Extract, "topics.jsonl")?.as_slice())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingLine {
    pub text: String,
    pub vector: Vec<f64>,
}

/// Embedding of every topic, aligned with `topics`.
pub fn load_topic_vectors(store: &Store, topics: &[Topic]) -> Result<Vec<Vec<f64>>> {
    let lines: Vec<EmbeddingLine> = read_jsonl(store, Stage::Embed, "embeddings.jsonl")?;
    let by_text: BTreeMap<String, Vec<f64>> = lines.into_iter().map(|l| (l.text, l.vector)).collect();
    topics
        .iter()
        .map(|t| {
            let key = t.normalized_text();
            by_text
                .get(&key)
                .cloned()
                .ok_or_else(|| PipelineError::Invalid(format!("no embedding for topic text {key:?}")))
        })
        .collect()
}

pub fn load_clustering(store: &Store) -> Result<Clustering> {
    read_json(store, Stage::Cluster, "clustering.json")
}

pub fn load_names(store: &Store) -> Result<Vec<ClusterName>> {
    read_json(store, Stage::Name, "names.json")
}

pub fn load_merge_map(store: &Store) -> Result<MergeMap> {
    read_json(store, Stage::Curate, "merge_map.json")
}

pub fn load_video_themes(store: &Store) -> Result<(MergeMap, BTreeMap<String, BTreeSet<ThemeId>>)> {
    let topics = load_topics(store)?;
    let clustering = load_clustering(store)?;
    let map = load_merge_map(store)?;
    let vt = video_themes(&topics, &clustering, &map)?;
    Ok((map, vt))
}

// Stage bodies.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub channels_in: usize,
    pub channels_kept: usize,
    pub videos_in: usize,
    pub videos_kept: usize,
    pub excluded_channels: Vec<String>,
}

fn ingest(config: &Config) -> Result<Outputs> {
    let raw = ingest_corpus(
        &config.resolve(&config.corpus.channels),
        &config.resolve(&config.corpus.videos),
    )?;
    let kept = apply_filters(&raw, &config.corpus.filters);
    let mut channels = kept.channels().to_vec();
    channels.sort_by(|a, b| a.channel_id.cmp(&b.channel_id));
    let mut videos = kept.videos().to_vec();
    videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let kept_ids: BTreeSet<&str> = channels.iter().map(|c| c.channel_id.as_str()).collect();
    let mut excluded: Vec<String> = raw
        .channels()
        .iter()
        .filter(|c| !kept_ids.contains(c.channel_id.as_str()))
        .map(|c| c.channel_id.clone())
        .collect();
    excluded.sort();
    let report = IngestReport {
        channels_in: raw.channels().len(),
        channels_kept: channels.len(),
        videos_in: raw.videos().len(),
        videos_kept: videos.len(),
        excluded_channels: excluded,
    };
    let mut c = Vec::new();
    write_channels(&mut c, &channels).expect("in-memory write");
    let mut v = Vec::new();
    write_videos(&mut v, &videos).expect("in-memory write");
    Ok(vec![
        ("channels.jsonl".into(), c),
        ("videos.jsonl".into(), v),
        ("report.json".into(), pretty(&report)),
    ])
}

fn extract(store: &Store, config: &Config, exec: Exec) -> Result<Outputs> {
    let corpus = load_corpus(store)?;
    let gateway = config.gateway(&config.extract.backend)?;
    let out = extract_all(corpus.videos(), &gateway, exec)?;
    let mut topics = Vec::new();
    write_topics(&mut topics, &out.topics).expect("in-memory write");
    Ok(vec![
        ("topics.jsonl".into(), topics),
        ("skipped.jsonl".into(), jsonl(&out.skipped)),
    ])
}

fn embed(store: &Store, config: &Config) -> Result<Outputs> {
    let topics = load_topics(store)?;
    let texts: Vec<String> = topics
        .iter()
        .map(Topic::normalized_text)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let gateway = config.gateway(&config.embed.backend)?;
    let vectors = gateway.embed_batch(&texts)?;
    let lines: Vec<EmbeddingLine> = texts
        .into_iter()
        .zip(vectors)
        .map(|(text, v)| EmbeddingLine {
            text,
            vector: v.values().to_vec(),
        })
        .collect();
    Ok(vec![("embeddings.jsonl".into(), jsonl(&lines))])
}

fn kmeans_params(config: &Config, k: usize, exec: Exec) -> KMeansParams {
    let mut p = KMeansParams::new(k, config.seed);
    p.max_iter = config.cluster.max_iter;
    p.exec = exec;
    p
}

fn cluster(store: &Store, config: &Config, exec: Exec) -> Result<Outputs> {
    let topics = load_topics(store)?;
    let vectors = load_topic_vectors(store, &topics)?;
    let clustering = kmeans(&vectors, &kmeans_params(config, config.cluster.k, exec))?;
    let mut bytes = serde_json::to_vec(&clustering).expect("in-memory serialization");
    bytes.push(b'\n');
    Ok(vec![("clustering.json".into(), bytes)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticPoint {
    pub k: usize,
    pub inertia: f64,
    pub silhouette: Option<f64>,
}

fn diagnose(store: &Store, config: &Config, exec: Exec) -> Result<Outputs> {
    let topics = load_topics(store)?;
    let vectors = load_topic_vectors(store, &topics)?;
    let mut points = Vec::new();
    for k in parse_k_range(&config.diagnose.elbow)? {
        let c = match kmeans(&vectors, &kmeans_params(config, k, exec)) {
            Ok(c) => c,
            Err(ClusterError::Infeasible { distinct, .. }) => {
                log::warn!("diagnose: stopping at k = {k}, only {distinct} distinct vectors");
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let s = if config.diagnose.silhouette && k >= 2 {
            Some(silhouette(&vectors, &c.assignments, exec)?)
        } else {
            None
        };
        points.push(DiagnosticPoint {
            k,
            inertia: c.inertia,
            silhouette: s,
        });
    }
    Ok(vec![("diagnostics.json".into(), pretty(&points))])
}

/// Topic texts of each cluster, in topic order.
pub fn cluster_member_texts(topics: &[Topic], clustering: &Clustering) -> Vec<Vec<String>> {
    clustering
        .members()
        .into_iter()
        .map(|m| m.into_iter().map(|i| topics[i].text.clone()).collect())
        .collect()
}

fn name_clusters(store: &Store, config: &Config, exec: Exec) -> Result<Outputs> {
    let topics = load_topics(store)?;
    let clustering = load_clustering(store)?;
    let gateway = config.gateway(&config.naming.backend)?;
    let names = name_all_clusters(&cluster_member_texts(&topics, &clustering), &gateway, config.seed, exec)?;
    Ok(vec![("names.json".into(), pretty(&names))])
}

fn validation(store: &Store, config: &Config) -> Result<Outputs> {
    if config.validation.per_dataset.is_empty() {
        return Err(PipelineError::Invalid(
            "validation.per_dataset is empty: give a sample size per dataset".into(),
        ));
    }
    let corpus = load_corpus(store)?;
    let (map, vt) = load_video_themes(store)?;
    let items = export_validation_sample(
        &corpus,
        &vt,
        &map.theme_names,
        &config.validation.per_dataset,
        config.validation.max_words,
        config.seed,
    )?;
    let mut out = Vec::new();
    write_validation_csv(&mut out, &items)?;
    Ok(vec![("validation.csv".into(), out)])
}

fn tables(store: &Store) -> Result<Outputs> {
    let corpus = load_corpus(store)?;
    let (map, vt) = load_video_themes(store)?;
    let mut rows = Vec::new();
    for g in groups_in(&corpus) {
        for scope in PeriodScope::ALL {
            rows.extend(theme_frequency(&corpus, &vt, &map.theme_names, g, scope));
        }
    }
    let mut out = Vec::new();
    analytics::write_frequency_csv(&mut out, &rows)?;
    Ok(vec![("frequency.csv".into(), out)])
}

fn engagement(store: &Store, config: &Config) -> Result<Outputs> {
    let corpus = load_corpus(store)?;
    let (map, vt) = load_video_themes(store)?;
    let a = &config.analytics;
    let mut rows = Vec::new();
    for g in groups_in(&corpus) {
        for &m in &a.metrics {
            rows.extend(engagement_ranking(
                &corpus,
                &vt,
                &map.theme_names,
                g,
                m,
                a.min_occurrence,
                a.aggregation,
            ));
        }
    }
    let mut out = Vec::new();
    analytics::write_engagement_csv(&mut out, &rows)?;
    Ok(vec![("engagement.csv".into(), out)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelVectors {
    pub kept: Vec<ChannelThemeVector>,
    /// Channels with too few themed videos, with their count.
    pub excluded: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeShare {
    pub theme_id: ThemeId,
    pub name: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub channel_id: String,
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub orientation: forge_core::corpus::Orientation,
    pub top_themes: Vec<ThemeShare>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneSummary {
    pub points: usize,
    pub perplexity: f64,
    pub initial_kl: f64,
    pub final_kl: f64,
}

/// Value as written to the layout CSV, so JSON and CSV agree.
fn six_places(x: f64) -> f64 {
    format!("{x:.6}").parse().expect("formatted float parses")
}

fn top_themes(v: &ChannelThemeVector, names: &BTreeMap<ThemeId, String>, n: usize) -> Vec<ThemeShare> {
    let mut shares: Vec<(&ThemeId, &f64)> = v.probabilities.iter().collect();
    shares.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
    shares
        .into_iter()
        .take(n)
        .map(|(t, p)| ThemeShare {
            theme_id: *t,
            name: names.get(t).cloned().unwrap_or_else(|| format!("Theme {t}")),
            probability: *p,
        })
        .collect()
}

fn viz(store: &Store, config: &Config, exec: Exec) -> Result<Outputs> {
    let corpus = load_corpus(store)?;
    let (map, vt) = load_video_themes(store)?;
    let (mut kept, mut excluded) = channel_theme_vectors(&corpus, &vt, config.corpus.filters.min_videos_viz);
    if let Some(d) = config.viz.dataset {
        let in_dataset = |id: &str| corpus.channel(id).is_some_and(|c| c.source_kind.dataset() == d);
        kept.retain(|v| in_dataset(&v.channel_id));
        excluded.retain(|(id, _)| in_dataset(id));
    }
    if kept.len() < 2 {
        return Err(PipelineError::Invalid(format!(
            "only {} channels have at least {} themed videos; the map needs two or more",
            kept.len(),
            config.corpus.filters.min_videos_viz
        )));
    }
    let axis = theme_axis(&kept);
    let dense: Vec<Vec<f64>> = kept.iter().map(|v| v.dense(&axis)).collect();
    let mut params = TsneParams::new(config.viz.perplexity, config.seed);
    params.iterations = config.viz.iterations;
    params.metric = config.viz.metric;
    params.exec = exec;
    let result = tsne(&dense, &params)?;
    let mut layout = Vec::new();
    let mut points = Vec::new();
    for (v, p) in kept.iter().zip(&result.points) {
        let ch = corpus.channel(&v.channel_id).expect("vector built from corpus channel");
        layout.push(LayoutPoint {
            channel_id: v.channel_id.clone(),
            x: p[0],
            y: p[1],
            orientation: ch.orientation,
        });
        points.push(MapPoint {
            channel_id: v.channel_id.clone(),
            name: ch.name.clone(),
            x: six_places(p[0]),
            y: six_places(p[1]),
            orientation: ch.orientation,
            top_themes: top_themes(v, &map.theme_names, 5),
        });
    }
    let mut csv = Vec::new();
    analytics::write_layout_csv(&mut csv, &layout)?;
    let summary = TsneSummary {
        points: kept.len(),
        perplexity: config.viz.perplexity,
        initial_kl: result.initial_kl,
        final_kl: result.final_kl,
    };
    Ok(vec![
        ("layout.csv".into(), csv),
        ("layout.json".into(), pretty(&points)),
        ("channel_vectors.json".into(), pretty(&ChannelVectors { kept, excluded })),
        ("tsne.json".into(), pretty(&summary)),
    ])
}

/// One group per dataset/orientation among the mapped channels, keeping
/// groups with at least two members and at least one outsider.
pub fn orientation_groups(corpus: &Corpus, channels: &[String]) -> BTreeMap<String, Vec<String>> {
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for id in channels {
        if let Some(ch) = corpus.channel(id) {
            groups.entry(Group::of(ch).to_string()).or_default().push(id.clone());
        }
    }
    groups.retain(|_, m| m.len() >= 2 && m.len() < channels.len());
    groups
}

fn quality(store: &Store, config: &Config) -> Result<Outputs> {
    let vectors: ChannelVectors = read_json(store, Stage::Viz, "channel_vectors.json")?;
    let axis = theme_axis(&vectors.kept);
    let dense: BTreeMap<String, Vec<f64>> =
        vectors.kept.iter().map(|v| (v.channel_id.clone(), v.dense(&axis))).collect();
    let groups: BTreeMap<String, Vec<String>> = match &config.quality.groups {
        Some(p) => {
            let (_, bytes) = file_input(config, p)?;
            serde_json::from_slice(&bytes).map_err(|e| {
                PipelineError::Invalid(format!("{}: expected an object of channel id lists: {e}", p.display()))
            })?
        }
        None => {
            let corpus = load_corpus(store)?;
            let ids: Vec<String> = dense.keys().cloned().collect();
            orientation_groups(&corpus, &ids)
        }
    };
    let rows: Vec<QualityRow> = quality_report(&dense, &groups)?;
    let mut out = Vec::new();
    analytics::write_quality_csv(&mut out, &rows)?;
    Ok(vec![("quality.csv".into(), out), ("quality.json".into(), pretty(&rows))])
}

fn stance_scan(store: &Store, config: &Config, exec: Exec) -> Result<Outputs> {
    let path = required(&config.stance.targets, "stance.targets")?;
    let (_, bytes) = file_input(config, path)?;
    let targets = read_targets(bytes.as_slice())?;
    let corpus = load_corpus(store)?;
    let docs: Vec<TranscriptDoc> = corpus
        .videos()
        .iter()
        .filter(|v| config.stance.datasets.contains(&corpus.channel_of(v).source_kind.dataset()))
        .cloned()
        .collect();
    let relevance = select_relevant_docs(&docs, &targets, config.stance.threshold, exec)?;
    for r in &relevance {
        if let forge_core::stance::RelevanceStatus::Excluded { count } = r.status {
            log::warn!("stance-scan: target {} excluded with {count} relevant documents", r.target_id);
        }
    }
    Ok(vec![
        ("targets.json".into(), pretty(&targets)),
        ("relevance.json".into(), pretty(&relevance)),
    ])
}

pub fn load_predictions(store: &Store) -> Result<Vec<StanceRecord>> {
    read_json(store, Stage::StanceClassify, "predictions.json")
}

fn stance_classify(store: &Store, config: &Config, exec: Exec) -> Result<Outputs> {
    let targets: Vec<TargetSpec> = read_json(store, Stage::StanceScan, "targets.json")?;
    let relevance: Vec<Relevance> = read_json(store, Stage::StanceScan, "relevance.json")?;
    let corpus = load_corpus(store)?;
    let gateway = config.gateway(&config.stance.backend)?;
    let records = classify_all(&corpus, &targets, &relevance, &gateway, exec)?;
    let mut csv = Vec::new();
    write_records_csv(&mut csv, &records)?;
    Ok(vec![
        ("predictions.csv".into(), csv),
        ("predictions.json".into(), pretty(&records)),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceEvaluation {
    pub items: usize,
    pub credit: f64,
    pub accuracy: f64,
    pub soft_accuracy: f64,
}

fn stance_eval(store: &Store, config: &Config) -> Result<Outputs> {
    let (_, bytes) = file_input(config, required(&config.stance.gold, "stance.gold")?)?;
    let gold = read_gold_csv(bytes.as_slice())?;
    let keys: BTreeSet<(&str, &str)> = gold.iter().map(|g| (g.doc_id.as_str(), g.target_id.as_str())).collect();
    let preds: Vec<StanceRecord> = load_predictions(store)?
        .into_iter()
        .filter(|p| keys.contains(&(p.doc_id.as_str(), p.target_id.as_str())))
        .collect();
    let cfg = StanceEvalConfig {
        neutral_partial_credit: config.stance.credit,
    };
    let eval = StanceEvaluation {
        items: gold.len(),
        credit: config.stance.credit,
        accuracy: accuracy(&preds, &gold)?,
        soft_accuracy: soft_accuracy(&preds, &gold, &cfg)?,
    };
    Ok(vec![("evaluation.json".into(), pretty(&eval))])
}

pub const STANCE_TABLES: [(&str, StanceGrouping); 3] = [
    ("stance_orientation.csv", StanceGrouping::MediaOrientation),
    ("stance_target.csv", StanceGrouping::Target),
    ("stance_orientation_target.csv", StanceGrouping::OrientationByTarget),
];

fn stance_tables(store: &Store) -> Result<Outputs> {
    let corpus = load_corpus(store)?;
    let records = load_predictions(store)?;
    let mut out = Vec::new();
    for (name, grouping) in STANCE_TABLES {
        let rows = stance_table(&records, &corpus, grouping)?;
        let mut csv = Vec::new();
        write_stance_table_csv(&mut csv, grouping, &rows)?;
        out.push((name.to_string(), csv));
    }
    Ok(out)
}

/// Replaces the outputs of an already-recorded stage, keeping its inputs
/// hash, so human edits survive reruns with unchanged inputs while
/// everything downstream is invalidated.
fn commit_edit(store: &mut Store, stage: Stage, outputs: Outputs) -> Result<Vec<Stage>> {
    let rec = store.require(stage, stage)?.clone();
    let config = store.manifest().config.clone();
    let outcome = store.commit(
        stage,
        StageCommit {
            inputs_hash: rec.inputs_hash,
            params: rec.params,
            upstream: rec.upstream,
            outputs,
            config,
        },
    )?;
    Ok(outcome.invalidated)
}

/// Applies curation actions in order and persists the new merge map. All
/// actions are validated before anything is written.
pub fn apply_curation(store: &mut Store, actions: &[CurationAction], timestamp: &str) -> Result<(MergeMap, Vec<Stage>)> {
    let mut map = load_merge_map(store)?;
    for a in actions {
        map.apply(a, timestamp)?;
    }
    let invalidated = commit_edit(store, Stage::Curate, vec![("merge_map.json".into(), pretty(&map))])?;
    Ok((map, invalidated))
}

pub fn load_validation(store: &Store) -> Result<Vec<ValidationItem>> {
    Ok(read_validation_csv(store.read(Stage::Validation, "validation.csv")?.as_slice())?)
}

/// Records annotator answers for items already in the validation sample.
pub fn record_validation_answers(store: &mut Store, answers: &[ValidationItem]) -> Result<Vec<ValidationItem>> {
    let mut items = load_validation(store)?;
    for a in answers {
        let item = items
            .iter_mut()
            .find(|i| i.doc_id == a.doc_id)
            .ok_or_else(|| PipelineError::Invalid(format!("{} is not in the validation sample", a.doc_id)))?;
        item.q1_accurate = a.q1_accurate;
        item.q2_complete = a.q2_complete;
        item.annotator = a.annotator.clone();
    }
    let mut out = Vec::new();
    write_validation_csv(&mut out, &items)?;
    commit_edit(store, Stage::Validation, vec![("validation.csv".into(), out)])?;
    Ok(items)
}

/// Stages in `order`, skipping those already up to date.
pub fn run_all(store: &mut Store, stages: &[Stage], config: &Config, exec: Exec) -> Result<Vec<StageResult>> {
    stages.iter().map(|&s| run_stage(store, s, config, exec)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: Stage,
    /// `missing`, `current`, or `stale` (config or inputs changed since).
    pub state: String,
    pub inputs_hash: Option<String>,
}

/// Whether each stage is recorded and whether its inputs still match.
pub fn status(store: &Store, config: &Config) -> Vec<StageStatus> {
    Stage::ALL
        .into_iter()
        .map(|stage| {
            let rec = store.record(stage);
            let expected = stage.deps().iter().try_fold(BTreeMap::new(), |mut up, d| {
                up.insert(*d, store.record(*d)?.digest());
                Some(up)
            });
            let current = match (rec, expected, stage_params(stage, config).ok()) {
                (Some(r), Some(up), Some(p)) => r.inputs_hash == inputs_hash(stage, &p, &up),
                _ => false,
            };
            StageStatus {
                stage,
                state: match (rec, current) {
                    (None, _) => "missing",
                    (Some(_), true) => "current",
                    (Some(_), false) => "stale",
                }
                .into(),
                inputs_hash: rec.map(|r| r.inputs_hash.clone()),
            }
        })
        .collect()
}
