//! Theme frequency and engagement tables, per-channel theme distributions,
//! the t-SNE channel map and the Q_c separation score.

mod quality;
mod tsne;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use quality::{cluster_quality, quality_report, QualityRow, DEGENERATE_DENOMINATOR};
pub use tsne::{trustworthiness, tsne, Metric, TsneParams, TsneResult};

use crate::corpus::{Channel, Corpus, Dataset, Orientation, Period, TranscriptDoc};
use crate::themes::ThemeId;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("group {group}: {message}")]
    Group { group: String, message: String },
    #[error("denominator {0:e} is too small: the cluster is orthogonal to everything outside it")]
    DegenerateSeparation(f64),
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Reporting group: a dataset split by orientation, or all local channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Group {
    pub dataset: Dataset,
    /// `None` means every orientation (used for local news).
    pub orientation: Option<Orientation>,
}

impl Group {
    pub fn of(channel: &Channel) -> Group {
        let dataset = channel.source_kind.dataset();
        Group {
            dataset,
            orientation: (dataset != Dataset::Local).then_some(channel.orientation),
        }
    }

    pub fn contains(&self, channel: &Channel) -> bool {
        channel.source_kind.dataset() == self.dataset
            && self.orientation.is_none_or(|o| o == channel.orientation)
    }

    pub fn orientation_label(&self) -> &'static str {
        self.orientation.map_or("All", Orientation::as_str)
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.dataset, self.orientation_label())
    }
}

/// Groups present in the corpus, in canonical order.
pub fn groups_in(corpus: &Corpus) -> Vec<Group> {
    corpus.channels().iter().map(Group::of).collect::<BTreeSet<_>>().into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PeriodScope {
    Period(Period),
    /// The whole collection window (the three in-window periods).
    Entire,
}

impl PeriodScope {
    pub const ALL: [PeriodScope; 4] = [
        PeriodScope::Entire,
        PeriodScope::Period(Period::PreElection),
        PeriodScope::Period(Period::European),
        PeriodScope::Period(Period::Legislative),
    ];

    pub fn contains(self, p: Period) -> bool {
        match self {
            PeriodScope::Period(q) => p == q,
            PeriodScope::Entire => p != Period::OutOfWindow,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PeriodScope::Period(p) => p.as_str(),
            PeriodScope::Entire => "Entire",
        }
    }
}

/// `100 * part / whole` rounded half away from zero to two decimals, in
/// exact integer arithmetic.
pub fn percent_2dp(part: usize, whole: usize) -> f64 {
    assert!(whole > 0, "percent of an empty group");
    let hundredths = (20_000 * part as u128 + whole as u128) / (2 * whole as u128);
    hundredths as f64 / 100.0
}

type VideoThemes = BTreeMap<String, BTreeSet<ThemeId>>;

fn theme_name(names: &BTreeMap<ThemeId, String>, t: ThemeId) -> String {
    names.get(&t).cloned().unwrap_or_else(|| format!("Theme {t}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub group: Group,
    pub scope: PeriodScope,
    pub theme_id: ThemeId,
    pub theme_name: String,
    pub occurrences: usize,
    /// Transcribed videos of the group in scope.
    pub group_videos: usize,
    pub percent: f64,
}

fn in_group<'a>(corpus: &'a Corpus, group: Group) -> impl Iterator<Item = &'a TranscriptDoc> + 'a {
    corpus.videos().iter().filter(move |v| group.contains(corpus.channel_of(v)))
}

/// Videos per theme within a group and period. A video counts once per
/// theme however many of its topics fall in it.
pub fn theme_frequency(
    corpus: &Corpus,
    video_themes: &VideoThemes,
    names: &BTreeMap<ThemeId, String>,
    group: Group,
    scope: PeriodScope,
) -> Vec<FrequencyRow> {
    let videos: Vec<&TranscriptDoc> = in_group(corpus, group)
        .filter(|v| v.has_transcript() && scope.contains(v.period()))
        .collect();
    if videos.is_empty() {
        return Vec::new();
    }
    let mut occ: BTreeMap<ThemeId, usize> = BTreeMap::new();
    for v in &videos {
        for t in video_themes.get(&v.video_id).into_iter().flatten() {
            *occ.entry(*t).or_default() += 1;
        }
    }
    let mut rows: Vec<FrequencyRow> = occ
        .into_iter()
        .map(|(theme_id, occurrences)| FrequencyRow {
            group,
            scope,
            theme_id,
            theme_name: theme_name(names, theme_id),
            occurrences,
            group_videos: videos.len(),
            percent: percent_2dp(occurrences, videos.len()),
        })
        .collect();
    rows.sort_by(|a, b| {
        b.occurrences
            .cmp(&a.occurrences)
            .then_with(|| a.theme_name.cmp(&b.theme_name))
            .then(a.theme_id.cmp(&b.theme_id))
    });
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EngagementMetric {
    CommentPerView,
    LikePerView,
}

impl EngagementMetric {
    fn count(self, v: &TranscriptDoc) -> u64 {
        match self {
            EngagementMetric::CommentPerView => v.comment_count,
            EngagementMetric::LikePerView => v.like_count,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EngagementMetric::CommentPerView => "comment_per_view",
            EngagementMetric::LikePerView => "like_per_view",
        }
    }
}

impl std::str::FromStr for EngagementMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "like" | "likes" | "like_per_view" => Ok(EngagementMetric::LikePerView),
            "comment" | "comments" | "comment_per_view" => Ok(EngagementMetric::CommentPerView),
            other => Err(format!("unknown metric {other:?} (expected like or comment)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    /// Unweighted mean of per-video ratios.
    MeanOfRatios,
    /// Total count over total views.
    Pooled,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::MeanOfRatios => "mean_of_ratios",
            Aggregation::Pooled => "pooled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementRow {
    pub group: Group,
    pub theme_id: ThemeId,
    pub theme_name: String,
    pub metric: EngagementMetric,
    pub aggregation: Aggregation,
    pub mean_ratio: f64,
    /// Videos with at least one view carrying the theme.
    pub occurrences: usize,
}

pub const DEFAULT_MIN_OCCURRENCE: usize = 10;

/// Themes of a group ranked by engagement ratio. Zero-view videos are left
/// out; themes on fewer than `min_occurrence` remaining videos are dropped.
pub fn engagement_ranking(
    corpus: &Corpus,
    video_themes: &VideoThemes,
    names: &BTreeMap<ThemeId, String>,
    group: Group,
    metric: EngagementMetric,
    min_occurrence: usize,
    aggregation: Aggregation,
) -> Vec<EngagementRow> {
    // theme -> (sum of ratios, total count, total views, videos)
    let mut acc: BTreeMap<ThemeId, (f64, u128, u128, usize)> = BTreeMap::new();
    for v in in_group(corpus, group).filter(|v| v.view_count > 0) {
        let count = metric.count(v);
        let ratio = count as f64 / v.view_count as f64;
        for t in video_themes.get(&v.video_id).into_iter().flatten() {
            let e = acc.entry(*t).or_default();
            e.0 += ratio;
            e.1 += count as u128;
            e.2 += v.view_count as u128;
            e.3 += 1;
        }
    }
    let mut rows: Vec<EngagementRow> = acc
        .into_iter()
        .filter(|(_, a)| a.3 >= min_occurrence && a.3 > 0)
        .map(|(theme_id, (sum, count, views, n))| EngagementRow {
            group,
            theme_id,
            theme_name: theme_name(names, theme_id),
            metric,
            aggregation,
            mean_ratio: match aggregation {
                Aggregation::MeanOfRatios => sum / n as f64,
                Aggregation::Pooled => count as f64 / views as f64,
            },
            occurrences: n,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.mean_ratio
            .total_cmp(&a.mean_ratio)
            .then_with(|| a.theme_name.cmp(&b.theme_name))
            .then(a.theme_id.cmp(&b.theme_id))
    });
    rows
}

/// Mean per-video ratio over every video of the group with views.
pub fn group_mean_ratio(corpus: &Corpus, group: Group, metric: EngagementMetric) -> Option<f64> {
    let ratios: Vec<f64> = in_group(corpus, group)
        .filter(|v| v.view_count > 0)
        .map(|v| metric.count(v) as f64 / v.view_count as f64)
        .collect();
    (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64)
}

pub const DEFAULT_MIN_VIDEOS_VIZ: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelThemeVector {
    pub channel_id: String,
    pub probabilities: BTreeMap<ThemeId, f64>,
    pub themed_videos: usize,
}

impl ChannelThemeVector {
    /// Dense form over `themes` (missing entries are 0).
    pub fn dense(&self, themes: &[ThemeId]) -> Vec<f64> {
        themes.iter().map(|t| self.probabilities.get(t).copied().unwrap_or(0.0)).collect()
    }
}

/// Theme distribution of one channel from the theme sets of its videos.
/// Returns `None` when fewer than `min_videos` videos carry any theme.
pub fn channel_theme_vector<'a>(
    channel_id: &str,
    video_sets: impl IntoIterator<Item = &'a BTreeSet<ThemeId>>,
    min_videos: usize,
) -> Option<ChannelThemeVector> {
    let mut counts: BTreeMap<ThemeId, usize> = BTreeMap::new();
    let mut themed = 0;
    for set in video_sets {
        if set.is_empty() {
            continue;
        }
        themed += 1;
        for t in set {
            *counts.entry(*t).or_default() += 1;
        }
    }
    if themed < min_videos || themed == 0 {
        return None;
    }
    let total: usize = counts.values().sum();
    Some(ChannelThemeVector {
        channel_id: channel_id.to_string(),
        probabilities: counts.into_iter().map(|(t, c)| (t, c as f64 / total as f64)).collect(),
        themed_videos: themed,
    })
}

/// Vectors for every qualifying channel, plus `(channel_id, themed videos)`
/// for the channels left out.
pub fn channel_theme_vectors(
    corpus: &Corpus,
    video_themes: &VideoThemes,
    min_videos: usize,
) -> (Vec<ChannelThemeVector>, Vec<(String, usize)>) {
    let empty = BTreeSet::new();
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for ch in corpus.channels() {
        let sets: Vec<&BTreeSet<ThemeId>> = corpus
            .videos_of(&ch.channel_id)
            .map(|v| video_themes.get(&v.video_id).unwrap_or(&empty))
            .collect();
        match channel_theme_vector(&ch.channel_id, sets.iter().copied(), min_videos) {
            Some(v) => kept.push(v),
            None => excluded.push((ch.channel_id.clone(), sets.iter().filter(|s| !s.is_empty()).count())),
        }
    }
    (kept, excluded)
}

/// Union of theme ids across channel vectors, ascending.
pub fn theme_axis(vectors: &[ChannelThemeVector]) -> Vec<ThemeId> {
    vectors
        .iter()
        .flat_map(|v| v.probabilities.keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

pub fn write_frequency_csv<W: Write>(out: W, rows: &[FrequencyRow]) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dataset", "group", "period", "theme", "occ", "percent"])?;
    for r in rows {
        w.write_record([
            r.group.dataset.as_str(),
            r.group.orientation_label(),
            r.scope.as_str(),
            &r.theme_name,
            &r.occurrences.to_string(),
            &format!("{:.2}", r.percent),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_engagement_csv<W: Write>(out: W, rows: &[EngagementRow]) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dataset", "group", "theme", "metric", "aggregation", "occ", "ratio"])?;
    for r in rows {
        w.write_record([
            r.group.dataset.as_str(),
            r.group.orientation_label(),
            &r.theme_name,
            r.metric.as_str(),
            r.aggregation.as_str(),
            &r.occurrences.to_string(),
            &format!("{:.6}", r.mean_ratio),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutPoint {
    pub channel_id: String,
    pub x: f64,
    pub y: f64,
    pub orientation: Orientation,
}

pub fn write_layout_csv<W: Write>(out: W, points: &[LayoutPoint]) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["channel_id", "x", "y", "orientation"])?;
    for p in points {
        w.write_record([
            p.channel_id.as_str(),
            &format!("{:.6}", p.x),
            &format!("{:.6}", p.y),
            p.orientation.as_str(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_quality_csv<W: Write>(out: W, rows: &[QualityRow]) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "members", "q_c"])?;
    for r in rows {
        w.write_record([r.group.as_str(), &r.members.to_string(), &format!("{:.6}", r.q_c)])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests;
