//! Stance toward named political targets: fuzzy mention retrieval,
//! three-way classification through the generation backend, evaluation
//! against gold labels, and distribution tables.

pub mod fuzzy;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Orientation, TranscriptDoc};
use crate::gateway::{Gateway, GatewayError, GenerationRequest};
use crate::par::Exec;

/// Phrase every stance prompt contains; lets backends recognize the task.
pub const STANCE_MARKER: &str = "Against, Favor, or Neutral";

pub const DEFAULT_THRESHOLD: f64 = 85.0;
pub const DEFAULT_MIN_RELEVANT_DOCS: usize = 50;
pub const DEFAULT_PARTIAL_CREDIT: f64 = 0.5;

/// Transcript words included in a classification prompt.
pub const STANCE_MAX_WORDS: usize = 4000;

#[derive(Debug, Error)]
pub enum StanceError {
    #[error("invalid target {target_id}: {message}")]
    InvalidTarget { target_id: String, message: String },
    #[error("fuzzy threshold {0} is outside [0, 100]")]
    Threshold(f64),
    #[error("partial credit {0} is outside [0, 1]")]
    Credit(f64),
    #[error("could not parse a stance for {doc_id}/{target_id}: {raw:?}")]
    Unparseable {
        doc_id: String,
        target_id: String,
        raw: String,
    },
    #[error("classification of {doc_id}: {source}")]
    Gateway {
        doc_id: String,
        #[source]
        source: GatewayError,
    },
    #[error("prediction and gold sets are not aligned: {0}")]
    Alignment(String),
    #[error("records mix gold and predicted labels")]
    MixedOrigins,
    #[error("record refers to unknown document {0}")]
    UnknownDoc(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub target_id: String,
    pub display_name: String,
    pub aliases: Vec<String>,
    #[serde(default = "default_min_docs")]
    pub min_relevant_docs: usize,
}

fn default_min_docs() -> usize {
    DEFAULT_MIN_RELEVANT_DOCS
}

impl TargetSpec {
    pub fn validate(&self) -> Result<(), StanceError> {
        if self.aliases.iter().all(|a| fuzzy::tokens(a).is_empty()) {
            return Err(StanceError::InvalidTarget {
                target_id: self.target_id.clone(),
                message: "needs at least one nonblank alias".into(),
            });
        }
        Ok(())
    }
}

/// Reads a JSON list of targets.
pub fn read_targets<R: Read>(input: R) -> Result<Vec<TargetSpec>, StanceError> {
    let targets: Vec<TargetSpec> = serde_json::from_reader(input)?;
    for t in &targets {
        t.validate()?;
    }
    Ok(targets)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StanceLabel {
    Against,
    Favor,
    Neutral,
}

impl StanceLabel {
    pub const ALL: [StanceLabel; 3] = [StanceLabel::Against, StanceLabel::Favor, StanceLabel::Neutral];

    pub fn as_str(self) -> &'static str {
        match self {
            StanceLabel::Against => "Against",
            StanceLabel::Favor => "Favor",
            StanceLabel::Neutral => "Neutral",
        }
    }

    fn from_word(w: &str) -> Option<Self> {
        match w {
            "against" | "negative" | "opposed" | "contre" | "defavorable" | "unfavorable" | "unfavourable" => {
                Some(StanceLabel::Against)
            }
            "favor" | "favour" | "favorable" | "favourable" | "positive" | "supportive" | "pour" => {
                Some(StanceLabel::Favor)
            }
            "neutral" | "neutre" => Some(StanceLabel::Neutral),
            _ => None,
        }
    }

    /// Case-, accent- and punctuation-tolerant parse; the first recognized
    /// word decides.
    pub fn parse(raw: &str) -> Option<Self> {
        fuzzy::tokens(raw).iter().find_map(|(_, _, w)| Self::from_word(w))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Origin {
    Gold,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StanceRecord {
    pub doc_id: String,
    pub target_id: String,
    pub label: StanceLabel,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionSpan {
    pub alias: String,
    /// Byte offsets into the transcript.
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

/// Alias occurrences in `text` scoring at least `threshold`.
///
/// Each alias is compared against every window of `m - 1` to `m + 1`
/// consecutive tokens, where `m` is the alias token count. Overlapping
/// hits are resolved in favour of the higher score, then the earlier start.
pub fn find_mentions(text: &str, target: &TargetSpec, threshold: f64) -> Result<Vec<MentionSpan>, StanceError> {
    if !(0.0..=100.0).contains(&threshold) {
        return Err(StanceError::Threshold(threshold));
    }
    let toks = fuzzy::tokens(text);
    let mut hits = Vec::new();
    for alias in &target.aliases {
        let alias_toks: Vec<String> = fuzzy::tokens(alias).into_iter().map(|t| t.2).collect();
        let m = alias_toks.len();
        if m == 0 {
            continue;
        }
        let needle = alias_toks.join(" ");
        let needle_len = needle.chars().count() as f64;
        for w in m.saturating_sub(1).max(1)..=m + 1 {
            for i in 0..toks.len().saturating_sub(w - 1) {
                let window = &toks[i..i + w];
                let cand = window.iter().map(|t| t.2.as_str()).collect::<Vec<_>>().join(" ");
                let cand_len = cand.chars().count() as f64;
                // Upper bound on the ratio from the length difference alone.
                let bound = 100.0 * (1.0 - (cand_len - needle_len).abs() / (cand_len + needle_len));
                if bound < threshold {
                    continue;
                }
                let score = fuzzy::ratio(&cand, &needle);
                if score >= threshold {
                    hits.push(MentionSpan {
                        alias: alias.clone(),
                        start: window[0].0,
                        end: window[w - 1].1,
                        score,
                    });
                }
            }
        }
    }
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.start.cmp(&b.start)).then(a.end.cmp(&b.end)));
    let mut kept: Vec<MentionSpan> = Vec::new();
    for h in hits {
        if kept.iter().all(|k| h.end <= k.start || h.start >= k.end) {
            kept.push(h);
        }
    }
    kept.sort_by_key(|k| k.start);
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelevanceStatus {
    Included,
    Excluded { count: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relevance {
    pub target_id: String,
    /// Documents with at least one mention, ascending.
    pub doc_ids: Vec<String>,
    pub status: RelevanceStatus,
}

/// Transcribed documents mentioning each target at least once. Targets
/// with fewer than `min_relevant_docs` such documents are excluded.
pub fn select_relevant_docs(
    docs: &[TranscriptDoc],
    targets: &[TargetSpec],
    threshold: f64,
    exec: Exec,
) -> Result<Vec<Relevance>, StanceError> {
    for t in targets {
        t.validate()?;
    }
    let per_doc = exec.try_map(docs, |d| {
        if !d.has_transcript() {
            return Ok(vec![false; targets.len()]);
        }
        targets
            .iter()
            .map(|t| Ok(!find_mentions(&d.transcript_text, t, threshold)?.is_empty()))
            .collect::<Result<Vec<bool>, StanceError>>()
    })?;
    Ok(targets
        .iter()
        .enumerate()
        .map(|(ti, t)| {
            let mut doc_ids: Vec<String> = docs
                .iter()
                .zip(&per_doc)
                .filter(|(_, hit)| hit[ti])
                .map(|(d, _)| d.video_id.clone())
                .collect();
            doc_ids.sort_unstable();
            doc_ids.dedup();
            let status = if doc_ids.len() < t.min_relevant_docs {
                RelevanceStatus::Excluded { count: doc_ids.len() }
            } else {
                RelevanceStatus::Included
            };
            Relevance {
                target_id: t.target_id.clone(),
                doc_ids,
                status,
            }
        })
        .collect())
}

pub fn build_stance_prompt(doc: &TranscriptDoc, target: &TargetSpec) -> String {
    let words: Vec<&str> = doc.transcript_text.split_whitespace().take(STANCE_MAX_WORDS).collect();
    format!(
        "You are given a transcript of a video. Determine the stance the video expresses toward {name}.\n\
         Answer with exactly one word: {STANCE_MARKER}.\n\n{text}",
        name = target.display_name,
        text = words.join(" "),
    )
}

/// One predicted label. An unparseable reply is retried once with a
/// stricter reminder before giving up.
pub fn classify_stance(doc: &TranscriptDoc, target: &TargetSpec, gateway: &Gateway) -> Result<StanceRecord, StanceError> {
    let prompt = build_stance_prompt(doc, target);
    let attempts = [
        prompt.clone(),
        format!("{prompt}\n\nReply with a single word, one of: {STANCE_MARKER}."),
    ];
    let mut last = String::new();
    for p in attempts {
        last = gateway
            .generate(&GenerationRequest::new(p, 8))
            .map_err(|source| StanceError::Gateway {
                doc_id: doc.video_id.clone(),
                source,
            })?;
        if let Some(label) = StanceLabel::parse(&last) {
            return Ok(StanceRecord {
                doc_id: doc.video_id.clone(),
                target_id: target.target_id.clone(),
                label,
                origin: Origin::Predicted,
            });
        }
    }
    Err(StanceError::Unparseable {
        doc_id: doc.video_id.clone(),
        target_id: target.target_id.clone(),
        raw: last,
    })
}

/// Classifies every (document, target) pair of the included targets, in
/// target order then doc id order.
pub fn classify_all(
    corpus: &Corpus,
    targets: &[TargetSpec],
    relevance: &[Relevance],
    gateway: &Gateway,
    exec: Exec,
) -> Result<Vec<StanceRecord>, StanceError> {
    let mut jobs = Vec::new();
    for r in relevance.iter().filter(|r| r.status == RelevanceStatus::Included) {
        let t = targets
            .iter()
            .find(|t| t.target_id == r.target_id)
            .ok_or_else(|| StanceError::InvalidTarget {
                target_id: r.target_id.clone(),
                message: "not in the target list".into(),
            })?;
        for d in &r.doc_ids {
            let doc = corpus.video(d).ok_or_else(|| StanceError::UnknownDoc(d.clone()))?;
            jobs.push((doc, t));
        }
    }
    exec.try_map(&jobs, |(d, t)| classify_stance(d, t, gateway))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StanceEvalConfig {
    pub neutral_partial_credit: f64,
}

impl Default for StanceEvalConfig {
    fn default() -> Self {
        StanceEvalConfig {
            neutral_partial_credit: DEFAULT_PARTIAL_CREDIT,
        }
    }
}

fn align<'a>(
    pred: &'a [StanceRecord],
    gold: &'a [StanceRecord],
) -> Result<Vec<(StanceLabel, StanceLabel)>, StanceError> {
    fn index(rs: &[StanceRecord], what: &str) -> Result<BTreeMap<(String, String), StanceLabel>, StanceError> {
        let mut m = BTreeMap::new();
        for r in rs {
            if m.insert((r.doc_id.clone(), r.target_id.clone()), r.label).is_some() {
                return Err(StanceError::Alignment(format!(
                    "duplicate {what} entry {}/{}",
                    r.doc_id, r.target_id
                )));
            }
        }
        Ok(m)
    }
    if pred.is_empty() || gold.is_empty() {
        return Err(StanceError::Alignment("empty label set".into()));
    }
    let p = index(pred, "prediction")?;
    let g = index(gold, "gold")?;
    if p.len() != g.len() || p.keys().ne(g.keys()) {
        let missing = g.keys().filter(|k| !p.contains_key(*k)).count();
        let extra = p.keys().filter(|k| !g.contains_key(*k)).count();
        return Err(StanceError::Alignment(format!(
            "{missing} gold items without prediction, {extra} predictions without gold"
        )));
    }
    Ok(p.into_iter().zip(g).map(|((_, a), (_, b))| (a, b)).collect())
}

/// Fraction of exact label matches.
pub fn accuracy(pred: &[StanceRecord], gold: &[StanceRecord]) -> Result<f64, StanceError> {
    let pairs = align(pred, gold)?;
    Ok(pairs.iter().filter(|(p, g)| p == g).count() as f64 / pairs.len() as f64)
}

/// Like accuracy, but a Neutral prediction for a polar gold label earns
/// the configured partial credit.
pub fn soft_accuracy(pred: &[StanceRecord], gold: &[StanceRecord], config: &StanceEvalConfig) -> Result<f64, StanceError> {
    let c = config.neutral_partial_credit;
    if !(0.0..=1.0).contains(&c) {
        return Err(StanceError::Credit(c));
    }
    let pairs = align(pred, gold)?;
    let total: f64 = pairs
        .iter()
        .map(|(p, g)| {
            if p == g {
                1.0
            } else if *p == StanceLabel::Neutral {
                c
            } else {
                0.0
            }
        })
        .sum();
    Ok(total / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StanceGrouping {
    MediaOrientation,
    Target,
    OrientationByTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceRow {
    pub orientation: Option<Orientation>,
    pub target_id: Option<String>,
    /// Distinct documents contributing to the row.
    pub videos: usize,
    pub records: usize,
    pub against: f64,
    pub favor: f64,
    pub neutral: f64,
}

/// `100 * part / whole` rounded half away from zero to one decimal, in
/// exact integer arithmetic.
pub fn percent_1dp(part: usize, whole: usize) -> f64 {
    let num = 2000 * part as u128 + whole as u128;
    let tenths = num / (2 * whole as u128);
    tenths as f64 / 10.0
}

/// Label percentages per group. Groups without records are omitted.
pub fn stance_table(
    records: &[StanceRecord],
    corpus: &Corpus,
    group_by: StanceGrouping,
) -> Result<Vec<StanceRow>, StanceError> {
    let origins: BTreeSet<Origin> = records.iter().map(|r| r.origin).collect();
    if origins.len() > 1 {
        return Err(StanceError::MixedOrigins);
    }
    type Key = (Option<Orientation>, Option<String>);
    let mut groups: BTreeMap<Key, (BTreeSet<&str>, [usize; 3])> = BTreeMap::new();
    for r in records {
        let doc = corpus.video(&r.doc_id).ok_or_else(|| StanceError::UnknownDoc(r.doc_id.clone()))?;
        let orientation = corpus.channel_of(doc).orientation;
        let key = match group_by {
            StanceGrouping::MediaOrientation => (Some(orientation), None),
            StanceGrouping::Target => (None, Some(r.target_id.clone())),
            StanceGrouping::OrientationByTarget => (Some(orientation), Some(r.target_id.clone())),
        };
        let g = groups.entry(key).or_default();
        g.0.insert(&r.doc_id);
        let slot = StanceLabel::ALL.iter().position(|l| *l == r.label).expect("three labels");
        g.1[slot] += 1;
    }
    Ok(groups
        .into_iter()
        .map(|((orientation, target_id), (docs, counts))| {
            let n: usize = counts.iter().sum();
            StanceRow {
                orientation,
                target_id,
                videos: docs.len(),
                records: n,
                against: percent_1dp(counts[0], n),
                favor: percent_1dp(counts[1], n),
                neutral: percent_1dp(counts[2], n),
            }
        })
        .collect())
}

/// Gold labels from CSV with header `doc_id,target_id,label`.
pub fn read_gold_csv<R: Read>(input: R) -> Result<Vec<StanceRecord>, StanceError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != 3 {
            return Err(StanceError::Malformed {
                line,
                message: format!("expected 3 columns, found {}", rec.len()),
            });
        }
        let label = StanceLabel::parse(&rec[2]).ok_or_else(|| StanceError::Malformed {
            line,
            message: format!("unknown label {:?}", &rec[2]),
        })?;
        out.push(StanceRecord {
            doc_id: rec[0].trim().to_string(),
            target_id: rec[1].trim().to_string(),
            label,
            origin: Origin::Gold,
        });
    }
    Ok(out)
}

pub fn write_records_csv<W: Write>(out: W, records: &[StanceRecord]) -> Result<(), StanceError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["doc_id", "target_id", "label", "origin"])?;
    for r in records {
        let origin = match r.origin {
            Origin::Gold => "Gold",
            Origin::Predicted => "Predicted",
        };
        w.write_record([r.doc_id.as_str(), &r.target_id, r.label.as_str(), origin])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Table CSV: orientation and/or target columns as the grouping needs,
/// then `videos,against,favor,neutral`.
pub fn write_stance_table_csv<W: Write>(out: W, group_by: StanceGrouping, rows: &[StanceRow]) -> Result<(), StanceError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = Vec::new();
    if group_by != StanceGrouping::Target {
        header.push("orientation");
    }
    if group_by != StanceGrouping::MediaOrientation {
        header.push("target");
    }
    header.extend(["videos", "against", "favor", "neutral"]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = Vec::new();
        if let Some(o) = r.orientation {
            rec.push(o.as_str().into());
        }
        if let Some(t) = &r.target_id {
            rec.push(t.clone());
        }
        rec.push(r.videos.to_string());
        for p in [r.against, r.favor, r.neutral] {
            rec.push(format!("{p:.1}"));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
