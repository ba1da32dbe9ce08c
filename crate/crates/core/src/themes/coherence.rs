use serde::{Deserialize, Serialize};

use super::{Theme, ThemeError, ThemeId};
use crate::par::Exec;
use crate::topics::{Topic, TopicKey};
use crate::vecmath::cosine;

/// Member topics of one theme paired with their embeddings.
#[derive(Debug, Clone)]
pub struct Members<'a> {
    pub theme_id: ThemeId,
    pub items: Vec<(TopicKey, &'a [f64])>,
}

impl<'a> Members<'a> {
    /// `vectors[i]` must be the embedding of `topics[i]`.
    pub fn of<V: AsRef<[f64]>>(theme: &Theme, topics: &[Topic], vectors: &'a [V]) -> Self {
        Members {
            theme_id: theme.theme_id,
            items: theme
                .member_topics
                .iter()
                .map(|&i| (topics[i].key(), vectors[i].as_ref()))
                .collect(),
        }
    }

    /// Items sorted by topic key, so results do not depend on member order.
    fn canonical(&self) -> Vec<(&TopicKey, &'a [f64])> {
        let mut v: Vec<_> = self.items.iter().map(|(k, x)| (k, *x)).collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }
}

fn mean_similarities(items: &[(&TopicKey, &[f64])]) -> Vec<f64> {
    let n = items.len() as f64;
    items
        .iter()
        .map(|(_, x)| items.iter().map(|(_, y)| cosine(x, y)).sum::<f64>() / n)
        .collect()
}

fn medoid_position(items: &[(&TopicKey, &[f64])]) -> usize {
    let means = mean_similarities(items);
    let mut best = 0;
    for (i, &m) in means.iter().enumerate() {
        if m > means[best] {
            best = i;
        }
    }
    best
}

/// Member with the highest mean cosine to all members, self included.
/// Ties go to the smallest topic key.
pub fn theme_medoid(members: &Members<'_>) -> Result<TopicKey, ThemeError> {
    let items = members.canonical();
    if items.is_empty() {
        return Err(ThemeError::EmptyTheme);
    }
    Ok(items[medoid_position(&items)].0.clone())
}

fn medoid_vector<'a>(members: &Members<'a>) -> Result<&'a [f64], ThemeError> {
    let items = members.canonical();
    if items.is_empty() {
        return Err(ThemeError::EmptyTheme);
    }
    Ok(items[medoid_position(&items)].1)
}

/// Mean cosine of every member to the medoid.
pub fn intra_theme_coherence(members: &Members<'_>) -> Result<f64, ThemeError> {
    let items = members.canonical();
    if items.is_empty() {
        return Err(ThemeError::EmptyTheme);
    }
    let m = items[medoid_position(&items)].1;
    Ok(items.iter().map(|(_, x)| cosine(x, m)).sum::<f64>() / items.len() as f64)
}

/// Cosine between the two medoids.
pub fn inter_theme_similarity(a: &Members<'_>, b: &Members<'_>) -> Result<f64, ThemeError> {
    if a.theme_id == b.theme_id {
        return Err(ThemeError::SameTheme);
    }
    Ok(cosine(medoid_vector(a)?, medoid_vector(b)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeCoherence {
    pub theme_id: ThemeId,
    pub size: usize,
    pub medoid: TopicKey,
    pub coherence: f64,
}

/// Theme-level coherence plus corpus averages under two weightings: every
/// theme counts once, or every topic counts once. Inter-theme similarity
/// averages all medoid pairs, weighted equally or by `size_a * size_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceSummary {
    pub themes: Vec<ThemeCoherence>,
    pub intra_equal: f64,
    pub intra_size_weighted: f64,
    /// `None` with fewer than two themes.
    pub inter_equal: Option<f64>,
    pub inter_size_weighted: Option<f64>,
}

pub fn coherence_summary(members: &[Members<'_>], exec: Exec) -> Result<CoherenceSummary, ThemeError> {
    let per = exec.try_map(members, |m| {
        let items = m.canonical();
        if items.is_empty() {
            return Err(ThemeError::EmptyTheme);
        }
        let pos = medoid_position(&items);
        let med = items[pos].1;
        let coherence = items.iter().map(|(_, x)| cosine(x, med)).sum::<f64>() / items.len() as f64;
        Ok((
            ThemeCoherence {
                theme_id: m.theme_id,
                size: items.len(),
                medoid: items[pos].0.clone(),
                coherence,
            },
            med,
        ))
    })?;
    let n = per.len();
    let total: usize = per.iter().map(|(t, _)| t.size).sum();
    let intra_equal = if n == 0 {
        0.0
    } else {
        per.iter().map(|(t, _)| t.coherence).sum::<f64>() / n as f64
    };
    let intra_size_weighted = if total == 0 {
        0.0
    } else {
        per.iter().map(|(t, _)| t.coherence * t.size as f64).sum::<f64>() / total as f64
    };
    let (mut eq, mut w, mut wsum, mut pairs) = (0.0, 0.0, 0.0, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            let s = cosine(per[i].1, per[j].1);
            let weight = (per[i].0.size * per[j].0.size) as f64;
            eq += s;
            w += s * weight;
            wsum += weight;
            pairs += 1;
        }
    }
    Ok(CoherenceSummary {
        themes: per.into_iter().map(|(t, _)| t).collect(),
        intra_equal,
        intra_size_weighted,
        inter_equal: (pairs > 0).then(|| eq / pairs as f64),
        inter_size_weighted: (pairs > 0).then(|| w / wsum),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key(doc: &str, r: usize) -> TopicKey {
        TopicKey {
            doc_id: doc.into(),
            segment_index: 0,
            quota_rank: r,
        }
    }

    fn members<'a>(id: ThemeId, vs: &'a [Vec<f64>]) -> Members<'a> {
        Members {
            theme_id: id,
            items: vs.iter().enumerate().map(|(i, v)| (key("d", i + 1), v.as_slice())).collect(),
        }
    }

    #[test]
    fn medoid_of_three() {
        let v = vec![vec![1.0, 0.0], vec![0.96, 0.28], vec![0.0, 1.0]];
        assert_eq!(theme_medoid(&members(0, &v)).unwrap(), key("d", 2));
    }

    #[test]
    fn identical_members() {
        let v = vec![vec![0.6, 0.8]; 4];
        let m = members(0, &v);
        assert_eq!(theme_medoid(&m).unwrap(), key("d", 1));
        assert_eq!(intra_theme_coherence(&m).unwrap(), 1.0);
    }

    #[test]
    fn orthogonal_pair_and_singleton() {
        let v = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(intra_theme_coherence(&members(0, &v)).unwrap(), 0.5);
        assert_eq!(intra_theme_coherence(&members(0, &v[..1])).unwrap(), 1.0);
        assert!(matches!(intra_theme_coherence(&members(0, &[])), Err(ThemeError::EmptyTheme)));
    }

    #[test]
    fn inter_theme_cases() {
        let a = vec![vec![1.0, 0.0]];
        let b = vec![vec![0.0, 1.0]];
        let c = vec![vec![1.0, 1.0]];
        assert_eq!(inter_theme_similarity(&members(0, &a), &members(1, &a)).unwrap(), 1.0);
        assert_eq!(inter_theme_similarity(&members(0, &a), &members(1, &b)).unwrap(), 0.0);
        let s = inter_theme_similarity(&members(0, &a), &members(1, &c)).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(
            inter_theme_similarity(&members(3, &a), &members(3, &b)),
            Err(ThemeError::SameTheme)
        ));
    }

    #[test]
    fn summary_weightings() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let b = vec![vec![1.0, 0.0]; 3];
        let s = coherence_summary(&[members(0, &a), members(1, &b)], Exec::default()).unwrap();
        assert_eq!(s.intra_equal, 0.75);
        assert_eq!(s.intra_size_weighted, (0.5 * 2.0 + 3.0) / 5.0);
        assert_eq!(s.inter_equal, Some(1.0));
        let single = coherence_summary(&[members(0, &a)], Exec::default()).unwrap();
        assert_eq!(single.inter_equal, None);
    }

    proptest! {
        #[test]
        fn member_order_does_not_matter(raw in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..12), shift in 0usize..12) {
            let m = members(0, &raw);
            let mut rotated = m.clone();
            let s = shift % raw.len();
            rotated.items.rotate_left(s);
            prop_assert_eq!(theme_medoid(&m).unwrap(), theme_medoid(&rotated).unwrap());
            prop_assert_eq!(intra_theme_coherence(&m).unwrap(), intra_theme_coherence(&rotated).unwrap());
        }
    }
}
