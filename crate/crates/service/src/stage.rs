use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Pipeline stages. Declaration order is a valid topological order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Stage {
    Ingest,
    Extract,
    Embed,
    Cluster,
    Diagnose,
    Name,
    Curate,
    Validation,
    Tables,
    Engagement,
    Viz,
    Quality,
    StanceScan,
    StanceClassify,
    StanceEval,
    StanceTables,
}

impl Stage {
    pub const ALL: [Stage; 16] = [
        Stage::Ingest,
        Stage::Extract,
        Stage::Embed,
        Stage::Cluster,
        Stage::Diagnose,
        Stage::Name,
        Stage::Curate,
        Stage::Validation,
        Stage::Tables,
        Stage::Engagement,
        Stage::Viz,
        Stage::Quality,
        Stage::StanceScan,
        Stage::StanceClassify,
        Stage::StanceEval,
        Stage::StanceTables,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Extract => "extract",
            Stage::Embed => "embed",
            Stage::Cluster => "cluster",
            Stage::Diagnose => "diagnose",
            Stage::Name => "name-clusters",
            Stage::Curate => "curate",
            Stage::Validation => "validation",
            Stage::Tables => "tables",
            Stage::Engagement => "engagement",
            Stage::Viz => "viz",
            Stage::Quality => "quality",
            Stage::StanceScan => "stance-scan",
            Stage::StanceClassify => "stance-classify",
            Stage::StanceEval => "stance-eval",
            Stage::StanceTables => "stance-tables",
        }
    }

    /// Stages whose outputs this stage reads, nearest first.
    pub fn deps(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            Ingest => &[],
            Extract => &[Ingest],
            Embed => &[Extract],
            Cluster | Diagnose => &[Embed, Extract],
            Name => &[Cluster, Extract],
            Curate => &[Name, Cluster],
            Validation | Tables | Engagement | Viz => &[Curate, Cluster, Extract, Ingest],
            Quality => &[Viz, Ingest],
            StanceScan => &[Ingest],
            StanceClassify => &[StanceScan, Ingest],
            StanceEval => &[StanceClassify],
            StanceTables => &[StanceClassify, Ingest],
        }
    }

    /// Every stage that transitively depends on this one, in topological
    /// order.
    pub fn downstream(self) -> Vec<Stage> {
        let mut hit = vec![self];
        for s in Stage::ALL {
            if s.deps().iter().any(|d| hit.contains(d)) && !hit.contains(&s) {
                hit.push(s);
            }
        }
        hit.retain(|s| *s != self);
        hit.sort();
        hit
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

impl From<Stage> for String {
    fn from(s: Stage) -> String {
        s.as_str().to_string()
    }
}

impl TryFrom<String> for Stage {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}
