//! Deterministic stand-ins for the generation and embedding backends.
//!
//! [`MockGenerator`] recognizes the prompt families the pipeline sends
//! (topic extraction, cluster naming, stance) and answers in the expected
//! format, deriving content from the prompt itself. [`MockEmbedder`] maps
//! text to a seeded sum of per-token Gaussian projections so that texts
//! sharing words land close together.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use regex::Regex;

use super::{BackendFailure, GenerationRequest, TextEmbedder, TextGenerator};
use crate::vecmath::stable_hash;

pub const DEFAULT_MOCK_DIM: usize = 64;

const COUNT_WORDS: [&str; 5] = ["one", "two", "three", "four", "five"];

fn topic_request() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"Detect (one|two|three|four|five) main topics?").expect("valid regex"))
}

fn title_case(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn content_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() >= 4 && w.chars().all(char::is_alphabetic))
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone)]
pub struct MockGenerator {
    seed: u64,
}

impl MockGenerator {
    pub fn new(seed: u64) -> Self {
        MockGenerator { seed }
    }

    fn h(&self, parts: &[&[u8]]) -> u64 {
        stable_hash(self.seed, parts)
    }

    /// Words ranked by frequency, ties broken by a seeded hash.
    fn ranked_words(&self, words: &[String]) -> Vec<String> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for w in words {
            *counts.entry(w).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize, u64)> = counts
            .into_iter()
            .map(|(w, c)| (w, c, self.h(&[b"rank", w.as_bytes()])))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        ranked.into_iter().map(|(w, _, _)| w.to_string()).collect()
    }

    fn topics(&self, n: usize, prompt: &str) -> String {
        let transcript = prompt.rsplit("\n\n").next().unwrap_or(prompt);
        let ranked = self.ranked_words(&content_words(transcript));
        if ranked.is_empty() {
            return "1. General Content".into();
        }
        ranked
            .iter()
            .take(n)
            .enumerate()
            .map(|(i, w)| format!("{}. {}", i + 1, title_case(w)))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn cluster_name(&self, prompt: &str) -> String {
        let members: Vec<String> = prompt
            .lines()
            .filter_map(|l| l.strip_prefix("- "))
            .flat_map(content_words)
            .collect();
        let ranked = self.ranked_words(&members);
        match ranked.as_slice() {
            [] => "Miscellaneous".into(),
            [one] => title_case(one),
            [a, b, ..] => format!("{} & {}", title_case(a), title_case(b)),
        }
    }

    fn stance(&self, prompt: &str) -> String {
        let labels = ["Against", "Favor", "Neutral"];
        labels[(self.h(&[b"stance", prompt.as_bytes()]) % 3) as usize].to_string()
    }
}

impl TextGenerator for MockGenerator {
    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendFailure> {
        let prompt = request.prompt.as_str();
        if let Some(caps) = topic_request().captures(prompt) {
            let n = COUNT_WORDS.iter().position(|w| *w == &caps[1]).expect("regex alternatives") + 1;
            return Ok(self.topics(n, prompt));
        }
        if prompt.contains(crate::clusters::NAMING_MARKER) {
            return Ok(self.cluster_name(prompt));
        }
        if prompt.contains(crate::stance::STANCE_MARKER) {
            return Ok(self.stance(prompt));
        }
        Ok(format!("mock completion {:016x}", self.h(&[prompt.as_bytes()])))
    }
}

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    seed: u64,
    dim: usize,
}

impl MockEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        MockEmbedder { seed, dim: dim.max(2) }
    }

    fn add_projection(&self, acc: &mut [f64], key: &[u8], weight: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(self.seed, &[b"embed", key]));
        for x in acc.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *x += weight * g;
        }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        let lowered = text.to_lowercase();
        let tokens: Vec<&str> = lowered
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            self.add_projection(&mut acc, text.as_bytes(), 1.0);
            return acc;
        }
        for t in &tokens {
            self.add_projection(&mut acc, t.as_bytes(), 1.0);
            let chars: Vec<char> = format!("#{t}#").chars().collect();
            for tri in chars.windows(3) {
                let tri: String = tri.iter().collect();
                self.add_projection(&mut acc, format!("3:{tri}").as_bytes(), 0.15);
            }
        }
        acc
    }
}

impl TextEmbedder for MockEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendFailure> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}
