//! Synthetic project for demos and end-to-end tests.
//!
//! Channels lean toward a few themes according to their orientation, so the
//! mock backends produce topics that cluster and channel maps that separate.
//! Some transcripts mention the stance targets, with occasional misspellings
//! and missing accents.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use forge_core::corpus::{window_end, window_start, Channel, Orientation, SourceKind, TranscriptDoc, TranscriptKind};
use forge_core::stance::{StanceLabel, TargetSpec};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const THEMES: [[&str; 4]; 8] = [
    ["immigration", "frontiere", "asile", "migrants"],
    ["retraite", "pension", "reforme", "travail"],
    ["election", "scrutin", "campagne", "candidat"],
    ["ukraine", "russie", "guerre", "otan"],
    ["hopital", "sante", "medecin", "urgences"],
    ["climat", "energie", "ecologie", "nucleaire"],
    ["police", "justice", "securite", "prison"],
    ["inflation", "budget", "dette", "impots"],
];

const FILLER: [&str; 12] = ["le", "la", "et", "de", "un", "des", "en", "du", "qui", "est", "par", "sur"];

struct ChannelPlan {
    id: &'static str,
    kind: SourceKind,
    orientation: Orientation,
    subscribers: u64,
    videos: u64,
    /// Indices into `THEMES` this channel favours.
    leaning: [usize; 2],
}

const CHANNELS: [ChannelPlan; 10] = [
    ChannelPlan { id: "news-left", kind: SourceKind::NationalNews, orientation: Orientation::Left, subscribers: 250_000, videos: 900, leaning: [1, 5] },
    ChannelPlan { id: "news-center", kind: SourceKind::NationalNews, orientation: Orientation::Center, subscribers: 1_200_000, videos: 4000, leaning: [3, 4] },
    ChannelPlan { id: "news-center-intl", kind: SourceKind::NationalNews, orientation: Orientation::Center, subscribers: 600_000, videos: 2500, leaning: [3, 2] },
    ChannelPlan { id: "news-right", kind: SourceKind::NationalNews, orientation: Orientation::Right, subscribers: 800_000, videos: 3000, leaning: [7, 6] },
    ChannelPlan { id: "news-farright", kind: SourceKind::NationalNews, orientation: Orientation::FarRight, subscribers: 400_000, videos: 1500, leaning: [0, 6] },
    ChannelPlan { id: "pol-left", kind: SourceKind::Politician, orientation: Orientation::Left, subscribers: 90_000, videos: 300, leaning: [1, 7] },
    ChannelPlan { id: "party-center", kind: SourceKind::Party, orientation: Orientation::Center, subscribers: 50_000, videos: 200, leaning: [2, 3] },
    ChannelPlan { id: "party-farright", kind: SourceKind::Party, orientation: Orientation::FarRight, subscribers: 120_000, videos: 400, leaning: [0, 2] },
    ChannelPlan { id: "local-ouest", kind: SourceKind::LocalNews, orientation: Orientation::Unlabeled, subscribers: 80_000, videos: 700, leaning: [4, 6] },
    // Below the local subscriber threshold: dropped at ingest.
    ChannelPlan { id: "local-tiny", kind: SourceKind::LocalNews, orientation: Orientation::Unlabeled, subscribers: 4_000, videos: 90, leaning: [5, 4] },
];

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub channels: Vec<Channel>,
    pub videos: Vec<TranscriptDoc>,
    pub targets: Vec<TargetSpec>,
    /// `(doc_id, target_id, label)`.
    pub gold: Vec<(String, String, StanceLabel)>,
}

fn targets() -> Vec<TargetSpec> {
    vec![
        TargetSpec {
            target_id: "bardella".into(),
            display_name: "Jordan Bardella".into(),
            aliases: vec!["Jordan Bardella".into(), "Bardella".into()],
            min_relevant_docs: 5,
        },
        TargetSpec {
            target_id: "melenchon".into(),
            display_name: "Jean-Luc Mélenchon".into(),
            aliases: vec!["Jean-Luc Mélenchon".into(), "Mélenchon".into()],
            min_relevant_docs: 5,
        },
    ]
}

fn transcript(rng: &mut ChaCha8Rng, words: usize, leaning: [usize; 2], mentions: &[&str]) -> String {
    let side = rng.random_range(0..THEMES.len());
    let mut out: Vec<&str> = Vec::with_capacity(words + 4);
    while out.len() < words {
        let r: f64 = rng.random();
        let w = if r < 0.45 {
            FILLER.choose(rng).expect("nonempty")
        } else {
            let theme = if r < 0.75 {
                leaning[0]
            } else if r < 0.9 {
                leaning[1]
            } else {
                side
            };
            THEMES[theme].choose(rng).expect("nonempty")
        };
        out.push(w);
    }
    for m in mentions {
        let at = rng.random_range(0..=out.len().min(40));
        out.insert(at, m);
    }
    out.join(" ")
}

/// Deterministic synthetic project with `docs` videos spread over ten
/// channels.
pub fn generate(docs: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels: Vec<Channel> = CHANNELS
        .iter()
        .map(|p| Channel {
            channel_id: p.id.into(),
            name: p.id.replace('-', " "),
            source_kind: p.kind,
            orientation: p.orientation,
            subscriber_count: p.subscribers,
            video_count: p.videos,
        })
        .collect();
    let span = (window_end() - window_start()).num_days();
    let mut videos = Vec::with_capacity(docs);
    let mut gold = Vec::new();
    let labels = StanceLabel::ALL;
    for i in 0..docs {
        let plan = &CHANNELS[i % CHANNELS.len()];
        let video_id = format!("vid{i:04}");
        let date = if i % 37 == 5 {
            NaiveDate::from_ymd_opt(2023, 1, 15).expect("valid date")
        } else {
            window_start() + Duration::days(rng.random_range(0..=span))
        };
        let views: u64 = if i % 29 == 3 { 0 } else { rng.random_range(500..200_000) };
        let likes = (views as f64 * rng.random_range(0.005..0.06)) as u64;
        let comments = (views as f64 * rng.random_range(0.0005..0.01)) as u64;
        let words = match i {
            7 => 12_500,
            _ => rng.random_range(60..2_600),
        };
        let mut mentions = Vec::new();
        let news = plan.kind == SourceKind::NationalNews;
        // Gold only labels documents that survive ingest.
        let labelled = i % 37 != 5 && i % 41 != 13;
        if news && rng.random_bool(0.5) {
            let exact = rng.random_bool(0.75);
            mentions.push(if exact { "Jordan Bardella" } else { "Jordan Bardela" });
            if exact && labelled && gold.iter().filter(|g: &&(String, String, StanceLabel)| g.1 == "bardella").count() < 8 {
                gold.push((video_id.clone(), "bardella".to_string(), *labels.choose(&mut rng).expect("nonempty")));
            }
        }
        if news && rng.random_bool(0.4) {
            let accented = rng.random_bool(0.7);
            mentions.push(if accented { "Mélenchon" } else { "Melenchon" });
            if accented && labelled && gold.iter().filter(|g| g.1 == "melenchon").count() < 8 {
                gold.push((video_id.clone(), "melenchon".to_string(), *labels.choose(&mut rng).expect("nonempty")));
            }
        }
        let (text, kind) = if i % 41 == 13 {
            (String::new(), TranscriptKind::Missing)
        } else {
            let kind = if rng.random_bool(0.3) { TranscriptKind::Manual } else { TranscriptKind::Auto };
            (transcript(&mut rng, words, plan.leaning, &mentions), kind)
        };
        videos.push(TranscriptDoc::new(
            video_id.clone(),
            plan.id,
            format!("Video {i}"),
            date,
            views,
            likes,
            comments,
            text,
            kind,
        ));
    }
    gold.sort();
    Fixture {
        channels,
        videos,
        targets: targets(),
        gold,
    }
}

fn config_toml(seed: u64) -> String {
    format!(
        r#"seed = {seed}

[corpus]
channels = "channels.jsonl"
videos = "videos.jsonl"

[corpus.filters]
min_videos_viz = 10

[gateway]
base_delay_ms = 0
max_delay_ms = 0

[cluster]
k = 12

[diagnose]
elbow = "4:16:4"
silhouette = true

[validation.per_dataset]
News = 10
Political = 5

[viz]
perplexity = 2.5
iterations = 500

[stance]
targets = "targets.json"
gold = "gold.csv"
credit = 0.5
"#
    )
}

/// Writes the fixture files and a matching `forge.toml` into `dir`, and
/// returns the config path.
pub fn write_fixture(dir: &Path, docs: usize, seed: u64) -> io::Result<PathBuf> {
    let f = generate(docs, seed);
    fs::create_dir_all(dir)?;
    let mut channels = Vec::new();
    forge_core::corpus::write_channels(&mut channels, &f.channels)?;
    fs::write(dir.join("channels.jsonl"), channels)?;
    let mut videos = Vec::new();
    forge_core::corpus::write_videos(&mut videos, &f.videos)?;
    fs::write(dir.join("videos.jsonl"), videos)?;
    let mut targets = serde_json::to_vec_pretty(&f.targets)?;
    targets.push(b'\n');
    fs::write(dir.join("targets.json"), targets)?;
    let mut gold = String::from("doc_id,target_id,label\n");
    for (d, t, l) in &f.gold {
        gold.push_str(&format!("{d},{t},{}\n", l.as_str()));
    }
    fs::write(dir.join("gold.csv"), gold)?;
    let path = dir.join("forge.toml");
    fs::write(&path, config_toml(seed))?;
    Ok(path)
}
