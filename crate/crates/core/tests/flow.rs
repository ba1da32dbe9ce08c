use std::collections::BTreeMap;

use chrono::NaiveDate;
use forge_core::analytics::{groups_in, theme_frequency, PeriodScope};
use forge_core::clusters::{kmeans, KMeansParams};
use forge_core::corpus::{Channel, Corpus, Orientation, SourceKind, TranscriptDoc, TranscriptKind};
use forge_core::gateway::{BackendDescriptor, Gateway, GatewayOptions};
use forge_core::par::Exec;
use forge_core::themes::{apply_merge, video_themes, MergeMap};
use forge_core::topics::extract_all;

const WORDS: [&str; 10] =
    ["retraite", "pension", "climat", "energie", "police", "justice", "budget", "dette", "hopital", "sante"];

fn corpus() -> Corpus {
    let channels = vec![Channel {
        channel_id: "c".into(),
        name: "c".into(),
        source_kind: SourceKind::NationalNews,
        orientation: Orientation::Left,
        subscriber_count: 50_000,
        video_count: 100,
    }];
    let videos = (0..40)
        .map(|i| {
            let len = 50 + 97 * i;
            let text: Vec<&str> = (0..len).map(|w| WORDS[(w * 7 + i) % WORDS.len()]).collect();
            let kind = if i == 3 { TranscriptKind::Missing } else { TranscriptKind::Auto };
            TranscriptDoc::new(
                format!("v{i:02}"),
                "c",
                "t",
                NaiveDate::from_ymd_opt(2024, 1, 1 + (i % 28) as u32).unwrap(),
                1000,
                10,
                1,
                if i == 3 { String::new() } else { text.join(" ") },
                kind,
            )
        })
        .collect();
    Corpus::new(channels, videos).unwrap()
}

fn gateway(desc: BackendDescriptor) -> Gateway {
    Gateway::new(desc, GatewayOptions::default()).unwrap()
}

#[test]
fn mock_backends_drive_extraction_through_frequency_tables() {
    let corpus = corpus();
    let generator = gateway(BackendDescriptor::mock_generation(1));
    let out = extract_all(corpus.videos(), &generator, Exec::Parallel).unwrap();
    assert_eq!(out.skipped.len(), 1);
    assert_eq!(out.skipped[0].doc_id, "v03");
    assert_eq!(out, extract_all(corpus.videos(), &generator, Exec::Sequential).unwrap());
    // Quota: the 50-word document asks for one topic.
    assert_eq!(out.topics.iter().filter(|t| t.doc_id == "v00").count(), 1);

    let embedder = gateway(BackendDescriptor::mock_embedding(1));
    let texts: Vec<String> = out.topics.iter().map(|t| t.normalized_text()).collect();
    let vectors: Vec<Vec<f64>> =
        embedder.embed_batch(&texts).unwrap().iter().map(|v| v.values().to_vec()).collect();
    let distinct = texts.iter().collect::<std::collections::BTreeSet<_>>().len();
    let k = distinct.min(4);
    let clustering = kmeans(&vectors, &KMeansParams::new(k, 3)).unwrap();
    assert_eq!(clustering.assignments.len(), out.topics.len());

    let names: Vec<String> = (0..k).map(|c| format!("cluster {c}")).collect();
    let map = MergeMap::identity(&names);
    let themes = apply_merge(&clustering, &map).unwrap();
    assert_eq!(themes.iter().map(|t| t.member_topics.len()).sum::<usize>(), out.topics.len());

    let vt = video_themes(&out.topics, &clustering, &map).unwrap();
    assert_eq!(vt.len(), 39);
    let theme_names: BTreeMap<usize, String> = map.theme_names.clone();
    let group = groups_in(&corpus)[0];
    let rows = theme_frequency(&corpus, &vt, &theme_names, group, PeriodScope::Entire);
    assert!(!rows.is_empty());
    for r in &rows {
        assert_eq!(r.group_videos, 39);
        assert!(r.occurrences <= 39 && r.percent <= 100.0);
    }
}
