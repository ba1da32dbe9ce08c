//! Cluster-to-theme curation: the versioned merge map, theme assembly,
//! per-video theme sets, medoid coherence and the validation export.

mod coherence;
mod validation;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use coherence::{
    coherence_summary, inter_theme_similarity, intra_theme_coherence, theme_medoid, CoherenceSummary,
    Members, ThemeCoherence,
};
pub use validation::{
    export_validation_sample, read_validation_csv, write_validation_csv, ValidationItem,
    DEFAULT_MAX_WORDS,
};

use crate::clusters::{ClusterId, Clustering};
use crate::topics::Topic;

pub type ThemeId = usize;

#[derive(Debug, Error)]
pub enum ThemeError {
    #[error("stale base version {base}; current version is {current}")]
    Stale { base: u64, current: u64 },
    #[error("invalid action: {0}")]
    Invalid(String),
    #[error("merge map does not cover clusters {missing:?}")]
    Incomplete { missing: Vec<ClusterId> },
    #[error("theme has no members")]
    EmptyTheme,
    #[error("a theme cannot be compared with itself")]
    SameTheme,
    #[error("topic {0} has no cluster assignment")]
    Unassigned(usize),
    #[error("{dataset}: requested {requested} documents but only {eligible} are eligible")]
    InsufficientDocs {
        dataset: String,
        requested: usize,
        eligible: usize,
    },
    #[error("validation file: {0}")]
    Csv(#[from] csv::Error),
    #[error("validation file line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// A curation step. Serialized as `{"kind": .., "payload": {..}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum CurationOp {
    /// Moves all listed clusters into a new theme called `name`.
    MergeClusters { clusters: Vec<ClusterId>, name: String },
    RenameTheme { theme_id: ThemeId, name: String },
    /// Moves one cluster into an existing theme, or into a new theme when
    /// `theme_id` is absent (which splits it off).
    MoveCluster {
        cluster_id: ClusterId,
        #[serde(default)]
        theme_id: Option<ThemeId>,
        #[serde(default)]
        name: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationAction {
    #[serde(flatten)]
    pub op: CurationOp,
    pub base_version: u64,
    pub actor: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// Version produced by this action.
    pub version: u64,
    pub actor: String,
    pub timestamp: String,
    #[serde(flatten)]
    pub op: CurationOp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeMap {
    pub version: u64,
    pub entries: BTreeMap<ClusterId, ThemeId>,
    pub theme_names: BTreeMap<ThemeId, String>,
    pub history: Vec<HistoryEntry>,
    /// Next id handed to a new theme; ids are never reused.
    pub next_theme_id: ThemeId,
}

impl MergeMap {
    /// Every cluster its own theme, named after the cluster.
    pub fn identity(cluster_names: &[String]) -> Self {
        let k = cluster_names.len();
        MergeMap {
            version: 0,
            entries: (0..k).map(|c| (c, c)).collect(),
            theme_names: cluster_names.iter().cloned().enumerate().collect(),
            history: Vec::new(),
            next_theme_id: k,
        }
    }

    pub fn theme_of(&self, cluster: ClusterId) -> Option<ThemeId> {
        self.entries.get(&cluster).copied()
    }

    pub fn theme_ids(&self) -> BTreeSet<ThemeId> {
        self.entries.values().copied().collect()
    }

    fn check(&self, op: &CurationOp) -> Result<(), ThemeError> {
        let bad = |m: String| Err(ThemeError::Invalid(m));
        let known_cluster = |c: &ClusterId| self.entries.contains_key(c);
        match op {
            CurationOp::MergeClusters { clusters, name } => {
                if name.trim().is_empty() {
                    return bad("theme name is empty".into());
                }
                let uniq: BTreeSet<_> = clusters.iter().collect();
                if uniq.len() < 2 || uniq.len() != clusters.len() {
                    return bad("merge needs at least two distinct clusters".into());
                }
                if let Some(c) = clusters.iter().find(|c| !known_cluster(c)) {
                    return bad(format!("unknown cluster {c}"));
                }
            }
            CurationOp::RenameTheme { theme_id, name } => {
                if name.trim().is_empty() {
                    return bad("theme name is empty".into());
                }
                if !self.theme_ids().contains(theme_id) {
                    return bad(format!("unknown theme {theme_id}"));
                }
            }
            CurationOp::MoveCluster {
                cluster_id,
                theme_id,
                name,
            } => {
                if !known_cluster(cluster_id) {
                    return bad(format!("unknown cluster {cluster_id}"));
                }
                match (theme_id, name) {
                    (Some(t), _) if !self.theme_ids().contains(t) => {
                        return bad(format!("unknown theme {t}"));
                    }
                    (None, None) => return bad("move needs a target theme or a new name".into()),
                    (None, Some(n)) if n.trim().is_empty() => return bad("theme name is empty".into()),
                    _ => {}
                }
            }
        }
        Ok(())
    }

    fn mutate(&mut self, op: &CurationOp) {
        match op {
            CurationOp::MergeClusters { clusters, name } => {
                let t = self.next_theme_id;
                self.next_theme_id += 1;
                for c in clusters {
                    self.entries.insert(*c, t);
                }
                self.theme_names.insert(t, name.trim().to_string());
            }
            CurationOp::RenameTheme { theme_id, name } => {
                self.theme_names.insert(*theme_id, name.trim().to_string());
            }
            CurationOp::MoveCluster {
                cluster_id,
                theme_id,
                name,
            } => {
                let t = match theme_id {
                    Some(t) => {
                        if let Some(n) = name.as_deref().filter(|n| !n.trim().is_empty()) {
                            self.theme_names.insert(*t, n.trim().to_string());
                        }
                        *t
                    }
                    None => {
                        let t = self.next_theme_id;
                        self.next_theme_id += 1;
                        let n = name.as_deref().unwrap_or_default();
                        self.theme_names.insert(t, n.trim().to_string());
                        t
                    }
                };
                self.entries.insert(*cluster_id, t);
            }
        }
        let live = self.theme_ids();
        self.theme_names.retain(|t, _| live.contains(t));
    }

    /// Applies an action if its base version is current; the version then
    /// increases by exactly one and the action is appended to the history.
    pub fn apply(&mut self, action: &CurationAction, timestamp: &str) -> Result<u64, ThemeError> {
        if action.base_version != self.version {
            return Err(ThemeError::Stale {
                base: action.base_version,
                current: self.version,
            });
        }
        if action.actor.trim().is_empty() {
            return Err(ThemeError::Invalid("actor is empty".into()));
        }
        self.check(&action.op)?;
        self.mutate(&action.op);
        self.version += 1;
        self.history.push(HistoryEntry {
            version: self.version,
            actor: action.actor.clone(),
            timestamp: timestamp.to_string(),
            op: action.op.clone(),
        });
        Ok(self.version)
    }

    /// Folds `history` over the identity map.
    pub fn replay(cluster_names: &[String], history: &[HistoryEntry]) -> Result<Self, ThemeError> {
        let mut m = MergeMap::identity(cluster_names);
        for h in history {
            let action = CurationAction {
                op: h.op.clone(),
                base_version: m.version,
                actor: h.actor.clone(),
            };
            m.apply(&action, &h.timestamp)?;
        }
        Ok(m)
    }

    /// Clusters `0..k` without an entry.
    pub fn missing(&self, k: usize) -> Vec<ClusterId> {
        (0..k).filter(|c| !self.entries.contains_key(c)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Theme {
    pub theme_id: ThemeId,
    pub name: String,
    pub member_clusters: Vec<ClusterId>,
    /// Indices into the topic list the clustering was computed over.
    pub member_topics: Vec<usize>,
}

/// Groups clusters into themes, ordered by theme id.
pub fn apply_merge(clustering: &Clustering, map: &MergeMap) -> Result<Vec<Theme>, ThemeError> {
    let missing = map.missing(clustering.k);
    if !missing.is_empty() {
        return Err(ThemeError::Incomplete { missing });
    }
    let mut themes: BTreeMap<ThemeId, Theme> = BTreeMap::new();
    for c in 0..clustering.k {
        let t = map.entries[&c];
        themes
            .entry(t)
            .or_insert_with(|| Theme {
                theme_id: t,
                name: map.theme_names.get(&t).cloned().unwrap_or_else(|| format!("Theme {t}")),
                member_clusters: Vec::new(),
                member_topics: Vec::new(),
            })
            .member_clusters
            .push(c);
    }
    for (i, &c) in clustering.assignments.iter().enumerate() {
        themes.get_mut(&map.entries[&c]).expect("cluster mapped").member_topics.push(i);
    }
    Ok(themes.into_values().collect())
}

/// Themes of one document given the indices of its topics.
pub fn assign_video_themes(
    topic_indices: &[usize],
    clustering: &Clustering,
    map: &MergeMap,
) -> Result<BTreeSet<ThemeId>, ThemeError> {
    topic_indices
        .iter()
        .map(|&i| {
            let c = *clustering.assignments.get(i).ok_or(ThemeError::Unassigned(i))?;
            map.theme_of(c).ok_or(ThemeError::Incomplete { missing: vec![c] })
        })
        .collect()
}

/// Theme set of every document that has topics, keyed by doc id.
pub fn video_themes(
    topics: &[Topic],
    clustering: &Clustering,
    map: &MergeMap,
) -> Result<BTreeMap<String, BTreeSet<ThemeId>>, ThemeError> {
    if topics.len() > clustering.assignments.len() {
        return Err(ThemeError::Unassigned(clustering.assignments.len()));
    }
    let mut by_doc: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, t) in topics.iter().enumerate() {
        by_doc.entry(t.doc_id.clone()).or_default().push(i);
    }
    by_doc
        .into_iter()
        .map(|(doc, idx)| Ok((doc, assign_video_themes(&idx, clustering, map)?)))
        .collect()
}
