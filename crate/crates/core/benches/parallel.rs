//! Parallel versus sequential execution of the data-parallel kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use forge_core::analytics::{tsne, TsneParams};
use forge_core::clusters::{kmeans, KMeansParams};
use forge_core::corpus::{TranscriptDoc, TranscriptKind};
use forge_core::par::Exec;
use forge_core::stance::{select_relevant_docs, TargetSpec};

const MODES: [(&str, Exec); 2] = [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)];

fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

fn bench_kmeans(c: &mut Criterion) {
    let data = random_vectors(4000, 64, 1);
    let mut g = c.benchmark_group("kmeans_4000x64_k50");
    g.sample_size(10);
    for (name, exec) in MODES {
        let mut params = KMeansParams::new(50, 3);
        params.max_iter = 20;
        params.exec = exec;
        g.bench_with_input(BenchmarkId::from_parameter(name), &params, |b, p| {
            b.iter(|| kmeans(&data, p).unwrap())
        });
    }
    g.finish();
}

fn bench_tsne(c: &mut Criterion) {
    let data: Vec<Vec<f64>> = random_vectors(150, 40, 2)
        .into_iter()
        .map(|v| v.into_iter().map(f64::abs).collect())
        .collect();
    let mut g = c.benchmark_group("tsne_150_points");
    g.sample_size(10);
    for (name, exec) in MODES {
        let mut params = TsneParams::new(30.0, 5);
        params.iterations = 250;
        params.exec = exec;
        g.bench_with_input(BenchmarkId::from_parameter(name), &params, |b, p| {
            b.iter(|| tsne(&data, p).unwrap())
        });
    }
    g.finish();
}

fn bench_mentions(c: &mut Criterion) {
    let words = ["le", "président", "Macron", "a", "déclaré", "que", "Bardela", "et", "la", "réforme"];
    let docs: Vec<TranscriptDoc> = (0..300)
        .map(|i| {
            let text: Vec<&str> = (0..800).map(|j| words[(i * 7 + j * 3) % words.len()]).collect();
            TranscriptDoc::new(
                format!("v{i}"),
                "c",
                "t",
                chrono::NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
                1,
                0,
                0,
                text.join(" "),
                TranscriptKind::Auto,
            )
        })
        .collect();
    let targets = vec![
        TargetSpec {
            target_id: "bardella".into(),
            display_name: "Jordan Bardella".into(),
            aliases: vec!["Bardella".into(), "Jordan Bardella".into()],
            min_relevant_docs: 50,
        },
        TargetSpec {
            target_id: "melenchon".into(),
            display_name: "Jean-Luc Mélenchon".into(),
            aliases: vec!["Mélenchon".into()],
            min_relevant_docs: 50,
        },
    ];
    let mut g = c.benchmark_group("mention_scan_300_docs");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| select_relevant_docs(&docs, &targets, 85.0, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, bench_kmeans, bench_tsne, bench_mentions);
criterion_main!(benches);
