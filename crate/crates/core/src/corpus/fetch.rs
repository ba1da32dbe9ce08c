//! Remote metadata/transcript retrieval surface.
//!
//! All network access for corpus collection goes through [`VideoSource`].
//! [`FixtureSource`] implements it from files or in-memory records so that
//! collection logic is testable offline.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Channel, Corpus, CorpusError, TranscriptDoc, TranscriptKind};

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoMetadata {
    pub video_id: String,
    pub channel_id: String,
    pub title: String,
    pub published_at: NaiveDate,
    pub view_count: u64,
    pub like_count: u64,
    pub comment_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptTrack {
    pub kind: TranscriptKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoPage {
    pub video_ids: Vec<String>,
    pub next_page: Option<String>,
}

pub trait VideoSource {
    /// One page of video ids published by `channel_id`.
    fn list_channel_videos(
        &self,
        channel_id: &str,
        page_token: Option<&str>,
    ) -> Result<VideoPage, FetchError>;

    fn video_metadata(&self, video_id: &str) -> Result<VideoMetadata, FetchError>;

    /// All available transcript tracks; empty when the video has none.
    fn transcript_tracks(&self, video_id: &str) -> Result<Vec<TranscriptTrack>, FetchError>;
}

/// Manual tracks win over automatic ones; no usable track yields `Missing`.
pub fn select_transcript(tracks: &[TranscriptTrack]) -> (TranscriptKind, String) {
    let pick = |kind| {
        tracks
            .iter()
            .find(|t| t.kind == kind && !t.text.is_empty())
            .map(|t| (kind, t.text.clone()))
    };
    pick(TranscriptKind::Manual)
        .or_else(|| pick(TranscriptKind::Auto))
        .unwrap_or((TranscriptKind::Missing, String::new()))
}

/// Walks every channel's pages and assembles a corpus of videos published in
/// `[from, to]`.
pub fn collect_corpus<S: VideoSource + ?Sized>(
    source: &S,
    channels: Vec<Channel>,
    from: NaiveDate,
    to: NaiveDate,
) -> Result<Corpus, FetchError> {
    let mut videos = Vec::new();
    for channel in &channels {
        let mut token: Option<String> = None;
        loop {
            let page = source.list_channel_videos(&channel.channel_id, token.as_deref())?;
            for id in &page.video_ids {
                let meta = source.video_metadata(id)?;
                if meta.published_at < from || meta.published_at > to {
                    continue;
                }
                let (kind, text) = select_transcript(&source.transcript_tracks(id)?);
                videos.push(TranscriptDoc::new(
                    meta.video_id,
                    meta.channel_id,
                    meta.title,
                    meta.published_at,
                    meta.view_count,
                    meta.like_count,
                    meta.comment_count,
                    text,
                    kind,
                ));
            }
            match page.next_page {
                Some(next) => token = Some(next),
                None => break,
            }
        }
    }
    Ok(Corpus::new(channels, videos)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub metadata: VideoMetadata,
    #[serde(default)]
    pub tracks: Vec<TranscriptTrack>,
}

/// Offline [`VideoSource`] with numeric page tokens.
#[derive(Debug, Clone)]
pub struct FixtureSource {
    page_size: usize,
    by_channel: BTreeMap<String, Vec<String>>,
    records: BTreeMap<String, FixtureRecord>,
}

impl FixtureSource {
    pub fn new(page_size: usize) -> Self {
        FixtureSource {
            page_size: page_size.max(1),
            by_channel: BTreeMap::new(),
            records: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, record: FixtureRecord) {
        let id = record.metadata.video_id.clone();
        self.by_channel
            .entry(record.metadata.channel_id.clone())
            .or_default()
            .push(id.clone());
        self.records.insert(id, record);
    }

    /// Loads one [`FixtureRecord`] JSON object per line.
    pub fn load(path: &Path, page_size: usize) -> Result<Self, FetchError> {
        let file = std::fs::File::open(path).map_err(|e| FetchError::Transport(e.to_string()))?;
        let mut src = FixtureSource::new(page_size);
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| FetchError::Transport(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureRecord =
                serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                    file: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            src.insert(rec);
        }
        Ok(src)
    }
}

impl VideoSource for FixtureSource {
    fn list_channel_videos(
        &self,
        channel_id: &str,
        page_token: Option<&str>,
    ) -> Result<VideoPage, FetchError> {
        let ids = self.by_channel.get(channel_id).map(Vec::as_slice).unwrap_or(&[]);
        let start: usize = match page_token {
            None => 0,
            Some(t) => t
                .parse()
                .map_err(|_| FetchError::Transport(format!("bad page token {t:?}")))?,
        };
        let end = (start + self.page_size).min(ids.len());
        Ok(VideoPage {
            video_ids: ids[start.min(end)..end].to_vec(),
            next_page: (end < ids.len()).then(|| end.to_string()),
        })
    }

    fn video_metadata(&self, video_id: &str) -> Result<VideoMetadata, FetchError> {
        self.records
            .get(video_id)
            .map(|r| r.metadata.clone())
            .ok_or_else(|| FetchError::NotFound(video_id.to_string()))
    }

    fn transcript_tracks(&self, video_id: &str) -> Result<Vec<TranscriptTrack>, FetchError> {
        self.records
            .get(video_id)
            .map(|r| r.tracks.clone())
            .ok_or_else(|| FetchError::NotFound(video_id.to_string()))
    }
}
