use serde::{Deserialize, Serialize};

use super::{ClusterId, Clustering};

/// Clusters per review queue.
pub const REVIEW_QUEUE_LEN: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewSet {
    /// Largest first; ties by ascending id.
    pub largest: Vec<ClusterId>,
    /// Smallest first; ties by ascending id.
    pub smallest: Vec<ClusterId>,
}

impl ReviewSet {
    /// Union of both queues, ascending and deduplicated.
    pub fn ids(&self) -> Vec<ClusterId> {
        let mut ids: Vec<_> = self.largest.iter().chain(&self.smallest).copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// The 30 largest and 30 smallest clusters by member count. With 60 or
/// fewer clusters both queues hold every cluster.
pub fn review_sample(clustering: &Clustering) -> ReviewSet {
    let sizes = clustering.sizes();
    let mut by_size: Vec<ClusterId> = (0..clustering.k).collect();
    let take = if clustering.k <= 2 * REVIEW_QUEUE_LEN {
        clustering.k
    } else {
        REVIEW_QUEUE_LEN
    };
    by_size.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let largest = by_size[..take].to_vec();
    by_size.sort_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(a.cmp(&b)));
    let smallest = by_size[..take].to_vec();
    ReviewSet { largest, smallest }
}
