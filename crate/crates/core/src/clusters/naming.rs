use serde::{Deserialize, Serialize};

use super::{ClusterError, ClusterId};
use crate::gateway::{Gateway, GatewayError, GenerationRequest};
use crate::par::Exec;
use crate::vecmath::stable_hash;

/// Line that introduces the member list in the naming prompt.
pub const NAMING_MARKER: &str = "Topics in the cluster:";

/// Most topics passed to the model for one cluster.
pub const NAMING_BUDGET: usize = 200;

const NAME_MAX_TOKENS: u32 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NameSource {
    Model,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterName {
    pub cluster_id: ClusterId,
    pub name: String,
    pub source: NameSource,
}

/// Members shown to the model: all of them up to the budget, otherwise a
/// seeded sample of exactly `NAMING_BUDGET`, kept in input order.
fn budgeted(members: &[String], seed: u64) -> Vec<&str> {
    if members.len() <= NAMING_BUDGET {
        return members.iter().map(String::as_str).collect();
    }
    let mut idx: Vec<usize> = (0..members.len()).collect();
    idx.sort_by_key(|&i| (stable_hash(seed, &[b"name-sample", &(i as u64).to_le_bytes()]), i));
    idx.truncate(NAMING_BUDGET);
    idx.sort_unstable();
    idx.into_iter().map(|i| members[i].as_str()).collect()
}

pub fn build_naming_prompt(members: &[String], seed: u64) -> String {
    let mut p = String::from(
        "The following topics were grouped together because they are semantically similar. \
         Give the group a short descriptive name in English.\n\
         Reply with the name only, on a single line.\n\n",
    );
    p.push_str(NAMING_MARKER);
    p.push('\n');
    for m in budgeted(members, seed) {
        p.push_str("- ");
        p.push_str(m);
        p.push('\n');
    }
    p
}

fn parse_name(raw: &str) -> Option<String> {
    let line = raw.lines().map(str::trim).find(|l| !l.is_empty())?;
    let line = line
        .strip_prefix("Name:")
        .or_else(|| line.strip_prefix("name:"))
        .unwrap_or(line);
    let name = line.trim().trim_matches(|c: char| matches!(c, '"' | '\'' | '*' | '`')).trim();
    (!name.is_empty()).then(|| name.to_string())
}

pub fn name_cluster(
    cluster_id: ClusterId,
    members: &[String],
    gateway: &Gateway,
    seed: u64,
) -> Result<ClusterName, ClusterError> {
    if members.is_empty() {
        return Err(ClusterError::EmptyCluster);
    }
    let prompt = build_naming_prompt(members, seed);
    let raw = gateway.generate(&GenerationRequest::new(prompt, NAME_MAX_TOKENS))?;
    let name = parse_name(&raw).ok_or_else(|| GatewayError::Parse {
        message: "empty cluster name".into(),
        raw: raw.clone(),
    })?;
    Ok(ClusterName {
        cluster_id,
        name,
        source: NameSource::Model,
    })
}

/// Names every cluster; `members[c]` holds the topic texts of cluster `c`.
pub fn name_all_clusters(
    members: &[Vec<String>],
    gateway: &Gateway,
    seed: u64,
    exec: Exec,
) -> Result<Vec<ClusterName>, ClusterError> {
    exec.try_map(&members.iter().enumerate().collect::<Vec<_>>(), |(c, m)| {
        name_cluster(*c, m, gateway, seed)
    })
}
