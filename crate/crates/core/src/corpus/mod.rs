//! Channels, videos and transcripts: ingestion, inclusion filters, period
//! windows and word counting.

pub mod fetch;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{file}:{line}: malformed record: {message}")]
    Malformed {
        file: String,
        line: usize,
        message: String,
    },
    #[error("unknown channel {channel_id} referenced by video {video_id}")]
    UnknownChannel { video_id: String, channel_id: String },
    #[error("duplicate video_id {0}")]
    DuplicateVideo(String),
    #[error("duplicate channel_id {0}")]
    DuplicateChannel(String),
    #[error("video {video_id}: transcript_kind {kind} inconsistent with transcript text")]
    TranscriptKindMismatch { video_id: String, kind: TranscriptKind },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceKind {
    NationalNews,
    LocalNews,
    Politician,
    Party,
}

impl SourceKind {
    pub fn dataset(self) -> Dataset {
        match self {
            SourceKind::NationalNews => Dataset::News,
            SourceKind::LocalNews => Dataset::Local,
            SourceKind::Politician | SourceKind::Party => Dataset::Political,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Orientation {
    Left,
    Center,
    Right,
    FarRight,
    Unlabeled,
}

impl Orientation {
    pub const ALL: [Orientation; 5] = [
        Orientation::Left,
        Orientation::Center,
        Orientation::Right,
        Orientation::FarRight,
        Orientation::Unlabeled,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::Left => "Left",
            Orientation::Center => "Center",
            Orientation::Right => "Right",
            Orientation::FarRight => "FarRight",
            Orientation::Unlabeled => "Unlabeled",
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The three collections the analyses are reported over. Politician and
/// party channels together form the political dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dataset {
    News,
    Political,
    Local,
}

impl Dataset {
    pub const ALL: [Dataset; 3] = [Dataset::News, Dataset::Political, Dataset::Local];

    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::News => "News",
            Dataset::Political => "Political",
            Dataset::Local => "Local",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "news" => Ok(Dataset::News),
            "political" => Ok(Dataset::Political),
            "local" => Ok(Dataset::Local),
            other => Err(format!("unknown dataset {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channel {
    pub channel_id: String,
    pub name: String,
    pub source_kind: SourceKind,
    pub orientation: Orientation,
    pub subscriber_count: u64,
    pub video_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TranscriptKind {
    Manual,
    Auto,
    Missing,
}

impl fmt::Display for TranscriptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptDoc {
    pub video_id: String,
    pub channel_id: String,
    pub title: String,
    pub published_at: NaiveDate,
    pub view_count: u64,
    pub like_count: u64,
    pub comment_count: u64,
    pub transcript_text: String,
    pub transcript_kind: TranscriptKind,
    #[serde(skip)]
    word_count: usize,
}

impl TranscriptDoc {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        video_id: impl Into<String>,
        channel_id: impl Into<String>,
        title: impl Into<String>,
        published_at: NaiveDate,
        view_count: u64,
        like_count: u64,
        comment_count: u64,
        transcript_text: impl Into<String>,
        transcript_kind: TranscriptKind,
    ) -> Self {
        let mut doc = TranscriptDoc {
            video_id: video_id.into(),
            channel_id: channel_id.into(),
            title: title.into(),
            published_at,
            view_count,
            like_count,
            comment_count,
            transcript_text: transcript_text.into(),
            transcript_kind,
            word_count: 0,
        };
        doc.refresh_word_count();
        doc
    }

    pub fn word_count(&self) -> usize {
        self.word_count
    }

    pub fn has_transcript(&self) -> bool {
        self.transcript_kind != TranscriptKind::Missing
    }

    pub fn period(&self) -> Period {
        assign_period(self.published_at)
    }

    fn refresh_word_count(&mut self) {
        self.word_count = word_count(&self.transcript_text);
    }
}

/// Count of maximal non-whitespace runs.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Period {
    PreElection,
    European,
    Legislative,
    OutOfWindow,
}

impl Period {
    pub const IN_WINDOW: [Period; 3] = [Period::PreElection, Period::European, Period::Legislative];

    pub fn as_str(self) -> &'static str {
        match self {
            Period::PreElection => "PreElection",
            Period::European => "European",
            Period::Legislative => "Legislative",
            Period::OutOfWindow => "OutOfWindow",
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid constant date")
}

pub fn window_start() -> NaiveDate {
    ymd(2023, 3, 1)
}

pub fn european_start() -> NaiveDate {
    ymd(2024, 3, 1)
}

pub fn legislative_start() -> NaiveDate {
    ymd(2024, 6, 8)
}

/// Last day of the collection window (inclusive).
pub fn window_end() -> NaiveDate {
    ymd(2024, 7, 15)
}

/// PreElection and European are half-open; Legislative includes its last day.
pub fn assign_period(date: NaiveDate) -> Period {
    if date < window_start() || date > window_end() {
        Period::OutOfWindow
    } else if date < european_start() {
        Period::PreElection
    } else if date < legislative_start() {
        Period::European
    } else {
        Period::Legislative
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterRules {
    pub min_videos_political: u64,
    pub min_subs_national: u64,
    pub min_subs_local: u64,
    pub min_videos_viz: usize,
}

impl Default for FilterRules {
    fn default() -> Self {
        FilterRules {
            min_videos_political: 10,
            min_subs_national: 10_000,
            min_subs_local: 5_000,
            min_videos_viz: 20,
        }
    }
}

impl FilterRules {
    pub fn keeps(&self, channel: &Channel) -> bool {
        match channel.source_kind {
            SourceKind::Politician | SourceKind::Party => {
                channel.video_count > self.min_videos_political
            }
            SourceKind::NationalNews => channel.subscriber_count >= self.min_subs_national,
            SourceKind::LocalNews => channel.subscriber_count > self.min_subs_local,
        }
    }
}

/// Immutable after construction; every video's channel resolves.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    channels: Vec<Channel>,
    videos: Vec<TranscriptDoc>,
    channel_index: HashMap<String, usize>,
    video_index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(channels: Vec<Channel>, videos: Vec<TranscriptDoc>) -> Result<Self, CorpusError> {
        let mut channel_index = HashMap::with_capacity(channels.len());
        for (i, c) in channels.iter().enumerate() {
            if channel_index.insert(c.channel_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateChannel(c.channel_id.clone()));
            }
        }
        let mut video_index = HashMap::with_capacity(videos.len());
        let mut videos = videos;
        for (i, v) in videos.iter_mut().enumerate() {
            if !channel_index.contains_key(&v.channel_id) {
                return Err(CorpusError::UnknownChannel {
                    video_id: v.video_id.clone(),
                    channel_id: v.channel_id.clone(),
                });
            }
            if video_index.insert(v.video_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateVideo(v.video_id.clone()));
            }
            let empty = v.transcript_text.is_empty();
            if empty != (v.transcript_kind == TranscriptKind::Missing) {
                return Err(CorpusError::TranscriptKindMismatch {
                    video_id: v.video_id.clone(),
                    kind: v.transcript_kind,
                });
            }
            v.refresh_word_count();
        }
        Ok(Corpus {
            channels,
            videos,
            channel_index,
            video_index,
        })
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn videos(&self) -> &[TranscriptDoc] {
        &self.videos
    }

    pub fn channel(&self, channel_id: &str) -> Option<&Channel> {
        self.channel_index.get(channel_id).map(|&i| &self.channels[i])
    }

    pub fn video(&self, video_id: &str) -> Option<&TranscriptDoc> {
        self.video_index.get(video_id).map(|&i| &self.videos[i])
    }

    /// Channel owning `video`. Always resolves for videos of this corpus.
    pub fn channel_of(&self, video: &TranscriptDoc) -> &Channel {
        &self.channels[self.channel_index[&video.channel_id]]
    }

    pub fn videos_of<'a>(&'a self, channel_id: &'a str) -> impl Iterator<Item = &'a TranscriptDoc> + 'a {
        self.videos.iter().filter(move |v| v.channel_id == channel_id)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            file: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn ingest_corpus(channels_path: &Path, videos_path: &Path) -> Result<Corpus, CorpusError> {
    let channels: Vec<Channel> = read_records(channels_path)?;
    let videos: Vec<TranscriptDoc> = read_records(videos_path)?;
    Corpus::new(channels, videos)
}

/// Writes channels as line-delimited JSON in canonical field order.
pub fn write_channels<W: Write>(mut out: W, channels: &[Channel]) -> std::io::Result<()> {
    for c in channels {
        serde_json::to_writer(&mut out, c)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_videos<W: Write>(mut out: W, videos: &[TranscriptDoc]) -> std::io::Result<()> {
    for v in videos {
        serde_json::to_writer(&mut out, v)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn apply_filters(corpus: &Corpus, rules: &FilterRules) -> Corpus {
    let channels: Vec<Channel> = corpus
        .channels
        .iter()
        .filter(|c| rules.keeps(c))
        .cloned()
        .collect();
    let kept: HashSet<&str> = channels.iter().map(|c| c.channel_id.as_str()).collect();
    let videos = corpus
        .videos
        .iter()
        .filter(|v| kept.contains(v.channel_id.as_str()))
        .cloned()
        .collect();
    Corpus::new(channels, videos).expect("subset of a valid corpus is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel(id: &str, kind: SourceKind, subs: u64, videos: u64) -> Channel {
        Channel {
            channel_id: id.into(),
            name: id.to_uppercase(),
            source_kind: kind,
            orientation: Orientation::Center,
            subscriber_count: subs,
            video_count: videos,
        }
    }

    fn video(id: &str, channel: &str, text: &str) -> TranscriptDoc {
        let kind = if text.is_empty() {
            TranscriptKind::Missing
        } else {
            TranscriptKind::Auto
        };
        TranscriptDoc::new(id, channel, "t", ymd(2023, 6, 15), 100, 5, 1, text, kind)
    }

    fn write_lines(dir: &Path, name: &str, lines: &[String]) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        p
    }

    fn json_line<T: Serialize>(t: &T) -> String {
        serde_json::to_string(t).unwrap()
    }

    #[test]
    fn word_count_examples() {
        assert_eq!(word_count(""), 0);
        assert_eq!(word_count("bonjour  le \n monde"), 3);
        assert_eq!(word_count(&"mot ".repeat(500)), 500);
        assert_eq!(word_count("a\u{00A0}b\u{2003}c"), 3);
    }

    #[test]
    fn period_boundaries() {
        assert_eq!(assign_period(ymd(2023, 6, 15)), Period::PreElection);
        assert_eq!(assign_period(ymd(2023, 3, 1)), Period::PreElection);
        assert_eq!(assign_period(ymd(2023, 2, 28)), Period::OutOfWindow);
        assert_eq!(assign_period(ymd(2024, 2, 29)), Period::PreElection);
        assert_eq!(assign_period(ymd(2024, 3, 1)), Period::European);
        assert_eq!(assign_period(ymd(2024, 6, 7)), Period::European);
        assert_eq!(assign_period(ymd(2024, 6, 8)), Period::Legislative);
        assert_eq!(assign_period(ymd(2024, 7, 15)), Period::Legislative);
        assert_eq!(assign_period(ymd(2024, 7, 16)), Period::OutOfWindow);
    }

    #[test]
    fn filter_thresholds_follow_wording() {
        let rules = FilterRules::default();
        assert!(!rules.keeps(&channel("p", SourceKind::Politician, 0, 10)));
        assert!(rules.keeps(&channel("p", SourceKind::Politician, 0, 11)));
        assert!(!rules.keeps(&channel("p", SourceKind::Party, 0, 10)));
        assert!(rules.keeps(&channel("n", SourceKind::NationalNews, 10_000, 0)));
        assert!(!rules.keeps(&channel("n", SourceKind::NationalNews, 9_999, 0)));
        assert!(!rules.keeps(&channel("l", SourceKind::LocalNews, 5_000, 0)));
        assert!(rules.keeps(&channel("l", SourceKind::LocalNews, 5_001, 0)));
    }

    #[test]
    fn filters_drop_videos_of_dropped_channels() {
        let corpus = Corpus::new(
            vec![
                channel("a", SourceKind::Politician, 0, 10),
                channel("b", SourceKind::Politician, 0, 50),
            ],
            vec![video("v1", "a", "x"), video("v2", "b", "y z")],
        )
        .unwrap();
        let f = apply_filters(&corpus, &FilterRules::default());
        assert_eq!(f.channels().len(), 1);
        assert_eq!(f.videos().len(), 1);
        assert_eq!(f.videos()[0].video_id, "v2");
        assert_eq!(apply_filters(&f, &FilterRules::default()), f);
    }

    #[test]
    fn ingest_valid_files() {
        let dir = tempfile::tempdir().unwrap();
        let ch = write_lines(
            dir.path(),
            "channels.jsonl",
            &[
                json_line(&channel("c1", SourceKind::NationalNews, 20_000, 3)),
                json_line(&channel("c2", SourceKind::Party, 1, 30)),
            ],
        );
        let vids = write_lines(
            dir.path(),
            "videos.jsonl",
            &[
                json_line(&video("v1", "c1", "un deux trois")),
                json_line(&video("v2", "c1", "")),
                json_line(&video("v3", "c2", "quatre")),
            ],
        );
        let corpus = ingest_corpus(&ch, &vids).unwrap();
        assert_eq!(corpus.channels().len(), 2);
        assert_eq!(corpus.videos().len(), 3);
        assert_eq!(corpus.video("v1").unwrap().word_count(), 3);
        assert!(!corpus.video("v2").unwrap().has_transcript());
    }

    #[test]
    fn ingest_rejects_unknown_channel_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let ch = write_lines(
            dir.path(),
            "channels.jsonl",
            &[json_line(&channel("c1", SourceKind::NationalNews, 20_000, 3))],
        );
        let bad = write_lines(dir.path(), "bad.jsonl", &[json_line(&video("v1", "X", "a"))]);
        let err = ingest_corpus(&ch, &bad).unwrap_err();
        assert!(err.to_string().contains("unknown channel X"), "{err}");
        assert!(err.to_string().contains("v1"));

        let dup = write_lines(
            dir.path(),
            "dup.jsonl",
            &[json_line(&video("v1", "c1", "a")), json_line(&video("v1", "c1", "b"))],
        );
        assert!(matches!(
            ingest_corpus(&ch, &dup),
            Err(CorpusError::DuplicateVideo(id)) if id == "v1"
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let ch = write_lines(
            dir.path(),
            "channels.jsonl",
            &[
                json_line(&channel("c1", SourceKind::NationalNews, 20_000, 3)),
                "{not json".to_string(),
            ],
        );
        let vids = write_lines(dir.path(), "videos.jsonl", &[]);
        match ingest_corpus(&ch, &vids) {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_field_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let ch = write_lines(
            dir.path(),
            "channels.jsonl",
            &[r#"{"channel_id":"c","name":"n","source_kind":"Party","orientation":"Left","subscriber_count":1,"video_count":1,"extra":1}"#.to_string()],
        );
        let vids = write_lines(dir.path(), "videos.jsonl", &[]);
        assert!(matches!(
            ingest_corpus(&ch, &vids),
            Err(CorpusError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn kind_must_agree_with_text() {
        let mut v = video("v1", "c1", "");
        v.transcript_kind = TranscriptKind::Manual;
        let err = Corpus::new(vec![channel("c1", SourceKind::Party, 0, 20)], vec![v]).unwrap_err();
        assert!(matches!(err, CorpusError::TranscriptKindMismatch { .. }));
    }

    #[test]
    fn serialization_round_trips_bytes() {
        let channels = vec![channel("c1", SourceKind::LocalNews, 6_000, 2)];
        let videos = vec![
            video("v1", "c1", "caf\u{e9} \"quoted\" text"),
            video("v2", "c1", ""),
        ];
        let mut ch_bytes = Vec::new();
        write_channels(&mut ch_bytes, &channels).unwrap();
        let mut v_bytes = Vec::new();
        write_videos(&mut v_bytes, &videos).unwrap();

        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("c"), &ch_bytes).unwrap();
        std::fs::write(dir.path().join("v"), &v_bytes).unwrap();
        let corpus = ingest_corpus(&dir.path().join("c"), &dir.path().join("v")).unwrap();

        let mut ch2 = Vec::new();
        write_channels(&mut ch2, corpus.channels()).unwrap();
        let mut v2 = Vec::new();
        write_videos(&mut v2, corpus.videos()).unwrap();
        assert_eq!(ch_bytes, ch2);
        assert_eq!(v_bytes, v2);
    }
}
