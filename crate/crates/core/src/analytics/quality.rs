use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::vecmath::cosine;

/// Denominators at or below this are treated as zero.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-12;

/// Mean pairwise cosine inside cluster `c` (distinct pairs only) divided by
/// the mean cosine between members of `c` and every item outside it.
pub fn cluster_quality<V: AsRef<[f64]>, L: PartialEq>(
    vectors: &[V],
    labels: &[L],
    c: &L,
) -> Result<f64, AnalyticsError> {
    if vectors.len() != labels.len() {
        return Err(AnalyticsError::Parameter(format!(
            "{} vectors but {} labels",
            vectors.len(),
            labels.len()
        )));
    }
    let inside: Vec<&[f64]> = vectors.iter().zip(labels).filter(|(_, l)| *l == c).map(|(v, _)| v.as_ref()).collect();
    let outside: Vec<&[f64]> = vectors.iter().zip(labels).filter(|(_, l)| *l != c).map(|(v, _)| v.as_ref()).collect();
    if inside.len() < 2 {
        return Err(AnalyticsError::Parameter("cluster needs at least two members".into()));
    }
    if outside.is_empty() {
        return Err(AnalyticsError::Parameter("cluster needs at least one item outside it".into()));
    }
    let mut within = 0.0;
    for i in 0..inside.len() {
        for j in i + 1..inside.len() {
            within += cosine(inside[i], inside[j]);
        }
    }
    let m = inside.len() as f64;
    let within = within / (m * (m - 1.0) / 2.0);
    let mut cross = 0.0;
    for x in &inside {
        for y in &outside {
            cross += cosine(x, y);
        }
    }
    let cross = cross / (inside.len() * outside.len()) as f64;
    if cross <= DEGENERATE_DENOMINATOR {
        return Err(AnalyticsError::DegenerateSeparation(cross));
    }
    Ok(within / cross)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub group: String,
    pub members: usize,
    pub q_c: f64,
}

/// Q_c for each declared group of channels. Channels outside every group
/// still count as outsiders.
pub fn quality_report<V: AsRef<[f64]>>(
    channel_vectors: &BTreeMap<String, V>,
    groups: &BTreeMap<String, Vec<String>>,
) -> Result<Vec<QualityRow>, AnalyticsError> {
    let mut rows = Vec::new();
    for (name, members) in groups {
        let set: BTreeSet<&str> = members.iter().map(String::as_str).collect();
        if set.len() < 2 {
            return Err(AnalyticsError::Group {
                group: name.clone(),
                message: "needs at least two channels".into(),
            });
        }
        if let Some(missing) = set.iter().find(|m| !channel_vectors.contains_key(**m)) {
            return Err(AnalyticsError::UnknownChannel(missing.to_string()));
        }
        let (vectors, labels): (Vec<&[f64]>, Vec<bool>) = channel_vectors
            .iter()
            .map(|(id, v)| (v.as_ref(), set.contains(id.as_str())))
            .unzip();
        let q_c = cluster_quality(&vectors, &labels, &true).map_err(|e| match e {
            AnalyticsError::Parameter(message) => AnalyticsError::Group {
                group: name.clone(),
                message,
            },
            other => other,
        })?;
        rows.push(QualityRow {
            group: name.clone(),
            members: set.len(),
            q_c,
        });
    }
    Ok(rows)
}
