use super::*;
use crate::corpus::{SourceKind, TranscriptKind};
use chrono::NaiveDate;
use proptest::prelude::*;

fn channel(id: &str, kind: SourceKind, o: Orientation) -> Channel {
    Channel {
        channel_id: id.into(),
        name: id.into(),
        source_kind: kind,
        orientation: o,
        subscriber_count: 100_000,
        video_count: 50,
    }
}

fn video(id: &str, ch: &str, date: (i32, u32, u32), views: u64, likes: u64, comments: u64) -> TranscriptDoc {
    TranscriptDoc::new(
        id,
        ch,
        "t",
        NaiveDate::from_ymd_opt(date.0, date.1, date.2).unwrap(),
        views,
        likes,
        comments,
        "du texte",
        TranscriptKind::Manual,
    )
}

fn themes(pairs: &[(&str, &[ThemeId])]) -> VideoThemes {
    pairs.iter().map(|(v, ts)| (v.to_string(), ts.iter().copied().collect())).collect()
}

const LEFT_NEWS: Group = Group {
    dataset: Dataset::News,
    orientation: Some(Orientation::Left),
};

#[test]
fn two_decimal_rounding() {
    assert_eq!(percent_2dp(718, 2422), 29.64);
    assert_eq!(percent_2dp(3, 10), 30.0);
    assert_eq!(percent_2dp(1, 8), 12.5);
    assert_eq!(percent_2dp(1, 3), 33.33);
    assert_eq!(percent_2dp(2, 3), 66.67);
    // 1/800 = 0.125% rounds away from zero.
    assert_eq!(percent_2dp(1, 800), 0.13);
}

#[test]
fn frequency_counts_videos_once() {
    let chans = vec![channel("l", SourceKind::NationalNews, Orientation::Left)];
    let mut vids: Vec<TranscriptDoc> = (0..10).map(|i| video(&format!("v{i}"), "l", (2023, 6, 1), 10, 1, 1)).collect();
    vids.push(video("late", "l", (2024, 9, 1), 10, 1, 1));
    let c = Corpus::new(chans, vids).unwrap();
    let vt = themes(&[("v0", &[1, 2]), ("v1", &[1]), ("v2", &[1]), ("late", &[1])]);
    let names = BTreeMap::from([(1, "Politics".to_string()), (2, "Economy".to_string())]);
    let rows = theme_frequency(&c, &vt, &names, LEFT_NEWS, PeriodScope::Entire);
    assert_eq!(rows[0].theme_name, "Politics");
    assert_eq!((rows[0].occurrences, rows[0].percent), (3, 30.0));
    assert_eq!((rows[1].occurrences, rows[1].percent), (1, 10.0));
    let euro = theme_frequency(&c, &vt, &names, LEFT_NEWS, PeriodScope::Period(Period::European));
    assert!(euro.is_empty());

    let single = Corpus::new(
        vec![channel("l", SourceKind::NationalNews, Orientation::Left)],
        vec![video("v", "l", (2023, 6, 1), 1, 0, 0)],
    )
    .unwrap();
    let rows = theme_frequency(&single, &themes(&[("v", &[1, 2])]), &names, LEFT_NEWS, PeriodScope::Entire);
    assert!(rows.iter().all(|r| r.percent == 100.0));
}

#[test]
fn engagement_rules() {
    let chans = vec![channel("l", SourceKind::NationalNews, Orientation::Left)];
    let vids = vec![
        video("a", "l", (2023, 6, 1), 100, 5, 0),
        video("b", "l", (2023, 6, 1), 100, 15, 0),
        video("z", "l", (2023, 6, 1), 0, 50, 0),
    ];
    let c = Corpus::new(chans, vids).unwrap();
    let vt = themes(&[("a", &[1]), ("b", &[1]), ("z", &[1])]);
    let names = BTreeMap::new();
    let rows = engagement_ranking(&c, &vt, &names, LEFT_NEWS, EngagementMetric::LikePerView, 1, Aggregation::MeanOfRatios);
    assert_eq!(rows.len(), 1);
    assert!((rows[0].mean_ratio - 0.10).abs() < 1e-15);
    assert_eq!(rows[0].occurrences, 2);
    let none = engagement_ranking(&c, &vt, &names, LEFT_NEWS, EngagementMetric::LikePerView, 3, Aggregation::MeanOfRatios);
    assert!(none.is_empty());
}

#[test]
fn pooled_differs_from_mean() {
    let chans = vec![channel("l", SourceKind::NationalNews, Orientation::Left)];
    let vids = vec![video("a", "l", (2023, 6, 1), 100, 10, 0), video("b", "l", (2023, 6, 1), 900, 0, 0)];
    let c = Corpus::new(chans, vids).unwrap();
    let vt = themes(&[("a", &[1]), ("b", &[1])]);
    let m = EngagementMetric::LikePerView;
    let mean = engagement_ranking(&c, &vt, &BTreeMap::new(), LEFT_NEWS, m, 1, Aggregation::MeanOfRatios);
    let pooled = engagement_ranking(&c, &vt, &BTreeMap::new(), LEFT_NEWS, m, 1, Aggregation::Pooled);
    assert!((mean[0].mean_ratio - 0.05).abs() < 1e-15);
    assert!((pooled[0].mean_ratio - 0.01).abs() < 1e-15);
    assert!((group_mean_ratio(&c, LEFT_NEWS, m).unwrap() - 0.05).abs() < 1e-15);
}

#[test]
fn channel_vectors() {
    let a: BTreeSet<ThemeId> = [1, 2].into();
    let b: BTreeSet<ThemeId> = [1].into();
    let v = channel_theme_vector("c", [&a, &b], 2).unwrap();
    assert!((v.probabilities[&1] - 2.0 / 3.0).abs() < 1e-15);
    assert!((v.probabilities[&2] - 1.0 / 3.0).abs() < 1e-15);
    let sets = vec![b.clone(); 19];
    assert!(channel_theme_vector("c", &sets, 20).is_none());
    let sets = vec![b.clone(); 20];
    let one = channel_theme_vector("c", &sets, 20).unwrap();
    assert_eq!(one.probabilities[&1], 1.0);
    assert_eq!(one.dense(&[0, 1, 2]), [0.0, 1.0, 0.0]);
}

#[test]
fn local_group_ignores_orientation() {
    let local = channel("x", SourceKind::LocalNews, Orientation::Unlabeled);
    let g = Group::of(&local);
    assert_eq!(g.orientation, None);
    assert!(g.contains(&channel("y", SourceKind::LocalNews, Orientation::Right)));
    assert_eq!(g.to_string(), "Local/All");
    let pol = Group::of(&channel("p", SourceKind::Party, Orientation::FarRight));
    assert!(pol.contains(&channel("q", SourceKind::Politician, Orientation::FarRight)));
}

#[test]
fn csv_layouts() {
    let row = FrequencyRow {
        group: LEFT_NEWS,
        scope: PeriodScope::Entire,
        theme_id: 0,
        theme_name: "Politics".into(),
        occurrences: 718,
        group_videos: 2422,
        percent: percent_2dp(718, 2422),
    };
    let mut buf = Vec::new();
    write_frequency_csv(&mut buf, &[row]).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "dataset,group,period,theme,occ,percent\nNews,Left,Entire,Politics,718,29.64\n"
    );
}

proptest! {
    #[test]
    fn percent_scale_invariant(part in 0usize..500, extra in 1usize..500, m in 1usize..20) {
        let whole = part + extra;
        prop_assert_eq!(percent_2dp(part, whole), percent_2dp(part * m, whole * m));
    }

    #[test]
    fn channel_vector_sums_to_one(sets in prop::collection::vec(prop::collection::btree_set(0usize..12, 0..5), 0..40)) {
        if let Some(v) = channel_theme_vector("c", &sets, 1) {
            let s: f64 = v.probabilities.values().sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
            prop_assert!(v.probabilities.values().all(|p| *p >= 0.0));
            let mut rev = sets.clone();
            rev.reverse();
            prop_assert_eq!(channel_theme_vector("c", &rev, 1).unwrap(), v);
        }
    }
}
