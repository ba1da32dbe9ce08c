//! Length-proportional topic quotas, long-transcript segmentation, prompt
//! construction and extraction orchestration.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TranscriptDoc;
use crate::gateway::{parse_numbered_topics, Gateway, GatewayError, GenerationRequest};
use crate::par::Exec;

/// Transcripts longer than this are split into fixed-size windows.
pub const SEGMENTATION_THRESHOLD: usize = 12_000;
pub const SEGMENT_WORDS: usize = 1_000;
pub const TOPICS_PER_FULL_SEGMENT: u8 = 2;
pub const MAX_TOPICS: u8 = 5;

#[derive(Debug, Error)]
pub enum TopicError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("doc {doc_id} segment {segment_index}: {source}")]
    Gateway {
        doc_id: String,
        segment_index: usize,
        #[source]
        source: GatewayError,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed topic record on line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopicQuota {
    Topics(u8),
    Segmented,
}

/// Number of topics requested for a transcript of `word_count` words.
pub fn topic_quota(word_count: usize) -> TopicQuota {
    match word_count {
        0..=500 => TopicQuota::Topics(1),
        501..=1000 => TopicQuota::Topics(2),
        1001..=1500 => TopicQuota::Topics(3),
        1501..=2000 => TopicQuota::Topics(4),
        2001..=SEGMENTATION_THRESHOLD => TopicQuota::Topics(5),
        _ => TopicQuota::Segmented,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start_word: usize,
    pub end_word: usize,
    pub topics_requested: u8,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end_word - self.start_word
    }

    pub fn is_empty(&self) -> bool {
        self.end_word == self.start_word
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaPlan {
    pub segments: Vec<Segment>,
}

impl QuotaPlan {
    pub fn total_requested(&self) -> usize {
        self.segments.iter().map(|s| s.topics_requested as usize).sum()
    }
}

/// Splits a long transcript into consecutive 1000-word windows. The short
/// tail window, if any, gets the quota its own length dictates.
pub fn plan_segments(word_count: usize) -> Result<QuotaPlan, TopicError> {
    if word_count <= SEGMENTATION_THRESHOLD {
        return Err(TopicError::Usage(format!(
            "segmentation applies above {SEGMENTATION_THRESHOLD} words, got {word_count}"
        )));
    }
    let mut segments = Vec::with_capacity(word_count / SEGMENT_WORDS + 1);
    let mut start = 0;
    while start < word_count {
        let end = (start + SEGMENT_WORDS).min(word_count);
        let topics_requested = if end - start == SEGMENT_WORDS {
            TOPICS_PER_FULL_SEGMENT
        } else {
            match topic_quota(end - start) {
                TopicQuota::Topics(n) => n,
                TopicQuota::Segmented => unreachable!("tail is shorter than a window"),
            }
        };
        segments.push(Segment {
            start_word: start,
            end_word: end,
            topics_requested,
        });
        start = end;
    }
    Ok(QuotaPlan { segments })
}

/// Plan for any transcript length: one segment unless segmentation applies.
pub fn plan_for(word_count: usize) -> QuotaPlan {
    match topic_quota(word_count) {
        TopicQuota::Topics(n) => QuotaPlan {
            segments: vec![Segment {
                start_word: 0,
                end_word: word_count,
                topics_requested: n,
            }],
        },
        TopicQuota::Segmented => plan_segments(word_count).expect("above threshold"),
    }
}

const NUMBER_WORDS: [&str; 5] = ["one", "two", "three", "four", "five"];

/// The extraction prompt for `topics_requested` topics, followed by a blank
/// line and the transcript.
pub fn build_prompt(segment_text: &str, topics_requested: u8) -> Result<String, TopicError> {
    if !(1..=MAX_TOPICS).contains(&topics_requested) {
        return Err(TopicError::Usage(format!(
            "topics_requested must be in 1..={MAX_TOPICS}, got {topics_requested}"
        )));
    }
    let n = topics_requested as usize;
    let noun = if n == 1 { "topic" } else { "topics" };
    let mut prompt = format!(
        "You are given a transcript of the video. Detect {} main {noun} from the given transcript. \
         All topics should be no more than 3 words and in English.\n\
         Generate your response in the following way:\n",
        NUMBER_WORDS[n - 1]
    );
    for k in 1..=n {
        prompt.push_str(&format!("{k}. Topic{k}\n"));
    }
    prompt.push('\n');
    prompt.push_str(segment_text);
    Ok(prompt)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TopicKey {
    pub doc_id: String,
    pub segment_index: usize,
    pub quota_rank: usize,
}

impl std::fmt::Display for TopicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}#{}.{}", self.doc_id, self.segment_index, self.quota_rank)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub doc_id: String,
    pub segment_index: usize,
    pub quota_rank: usize,
    pub text: String,
}

impl Topic {
    pub fn key(&self) -> TopicKey {
        TopicKey {
            doc_id: self.doc_id.clone(),
            segment_index: self.segment_index,
            quota_rank: self.quota_rank,
        }
    }

    /// Case-folded form used for comparisons and embedding lookup.
    pub fn normalized_text(&self) -> String {
        normalize_topic_text(&self.text)
    }
}

pub fn normalize_topic_text(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub doc_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Extraction {
    Topics(Vec<Topic>),
    Skipped(SkipRecord),
}

fn max_tokens_for(n: u8) -> u32 {
    16 + 24 * n as u32
}

fn segment_texts(doc: &TranscriptDoc, plan: &QuotaPlan) -> Vec<String> {
    if plan.segments.len() == 1 {
        return vec![doc.transcript_text.trim().to_string()];
    }
    let words: Vec<&str> = doc.transcript_text.split_whitespace().collect();
    plan.segments
        .iter()
        .map(|s| words[s.start_word..s.end_word].join(" "))
        .collect()
}

fn skip_reason(doc: &TranscriptDoc) -> Option<&'static str> {
    if !doc.has_transcript() {
        Some("no transcript")
    } else if doc.word_count() == 0 {
        Some("empty transcript")
    } else {
        None
    }
}

fn extract_segment(
    doc_id: &str,
    segment_index: usize,
    text: &str,
    requested: u8,
    gateway: &Gateway,
) -> Result<Vec<Topic>, TopicError> {
    let tag = |source| TopicError::Gateway {
        doc_id: doc_id.to_string(),
        segment_index,
        source,
    };
    let prompt = build_prompt(text, requested)?;
    let completion = gateway
        .generate(&GenerationRequest::new(prompt, max_tokens_for(requested)))
        .map_err(tag)?;
    let labels = parse_numbered_topics(&completion, requested as usize).map_err(tag)?;
    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(i, text)| Topic {
            doc_id: doc_id.to_string(),
            segment_index,
            quota_rank: i + 1,
            text,
        })
        .collect())
}

/// Runs the quota plan for one document through the generation backend.
pub fn extract_topics(doc: &TranscriptDoc, gateway: &Gateway) -> Result<Extraction, TopicError> {
    if let Some(reason) = skip_reason(doc) {
        return Ok(Extraction::Skipped(SkipRecord {
            doc_id: doc.video_id.clone(),
            reason: reason.into(),
        }));
    }
    let plan = plan_for(doc.word_count());
    let texts = segment_texts(doc, &plan);
    let mut topics = Vec::with_capacity(plan.total_requested());
    for (i, (seg, text)) in plan.segments.iter().zip(&texts).enumerate() {
        topics.extend(extract_segment(&doc.video_id, i, text, seg.topics_requested, gateway)?);
    }
    Ok(Extraction::Topics(topics))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtractionOutput {
    pub topics: Vec<Topic>,
    pub skipped: Vec<SkipRecord>,
}

/// Extracts topics for every document, parallel over (document, segment)
/// work items. Output is ordered by topic key regardless of completion order.
pub fn extract_all(
    docs: &[TranscriptDoc],
    gateway: &Gateway,
    exec: Exec,
) -> Result<ExtractionOutput, TopicError> {
    struct Item<'a> {
        doc_id: &'a str,
        segment_index: usize,
        text: String,
        requested: u8,
    }
    let mut out = ExtractionOutput::default();
    let mut items = Vec::new();
    for doc in docs {
        if let Some(reason) = skip_reason(doc) {
            out.skipped.push(SkipRecord {
                doc_id: doc.video_id.clone(),
                reason: reason.into(),
            });
            continue;
        }
        let plan = plan_for(doc.word_count());
        for (i, (seg, text)) in plan.segments.iter().zip(segment_texts(doc, &plan)).enumerate() {
            items.push(Item {
                doc_id: &doc.video_id,
                segment_index: i,
                text,
                requested: seg.topics_requested,
            });
        }
    }
    let results = exec.try_map(&items, |it| {
        extract_segment(it.doc_id, it.segment_index, &it.text, it.requested, gateway)
    })?;
    out.topics = results.into_iter().flatten().collect();
    out.topics.sort_by(|a, b| {
        (&a.doc_id, a.segment_index, a.quota_rank).cmp(&(&b.doc_id, b.segment_index, b.quota_rank))
    });
    out.skipped.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(out)
}

pub fn write_topics<W: Write>(mut out: W, topics: &[Topic]) -> std::io::Result<()> {
    for t in topics {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_topics<R: BufRead>(input: R) -> Result<Vec<Topic>, TopicError> {
    let mut topics = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        topics.push(serde_json::from_str(&line).map_err(|e| TopicError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(topics)
}
