use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ThemeError, ThemeId};
use crate::corpus::{Corpus, Dataset};
use crate::vecmath::stable_hash;

/// Longest transcript offered to annotators.
pub const DEFAULT_MAX_WORDS: usize = 1000;

/// Separator between theme names in the `themes` column.
const THEME_SEP: &str = "; ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationItem {
    pub doc_id: String,
    pub assigned_themes: Vec<String>,
    /// "Are the assigned themes accurate?"
    pub q1_accurate: Option<bool>,
    /// "Do the themes cover everything the video discusses?"
    pub q2_complete: Option<bool>,
    pub annotator: String,
}

/// Seeded uniform sample of transcribed documents with at most `max_words`
/// words, `n_per_dataset[d]` from each dataset. Items come out with empty
/// answers, grouped by dataset and sorted by doc id within each.
pub fn export_validation_sample(
    corpus: &Corpus,
    video_themes: &BTreeMap<String, BTreeSet<ThemeId>>,
    theme_names: &BTreeMap<ThemeId, String>,
    n_per_dataset: &BTreeMap<Dataset, usize>,
    max_words: usize,
    seed: u64,
) -> Result<Vec<ValidationItem>, ThemeError> {
    let mut out = Vec::new();
    for (&dataset, &n) in n_per_dataset {
        let mut eligible: Vec<&str> = corpus
            .videos()
            .iter()
            .filter(|v| {
                v.has_transcript()
                    && v.word_count() <= max_words
                    && corpus.channel_of(v).source_kind.dataset() == dataset
            })
            .map(|v| v.video_id.as_str())
            .collect();
        if eligible.len() < n {
            return Err(ThemeError::InsufficientDocs {
                dataset: dataset.to_string(),
                requested: n,
                eligible: eligible.len(),
            });
        }
        eligible.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(seed, &[dataset.as_str().as_bytes()]));
        let mut picked: Vec<&str> = rand::seq::index::sample(&mut rng, eligible.len(), n)
            .into_iter()
            .map(|i| eligible[i])
            .collect();
        picked.sort_unstable();
        for doc in picked {
            let assigned_themes = video_themes
                .get(doc)
                .map(|ts| {
                    ts.iter()
                        .map(|t| theme_names.get(t).cloned().unwrap_or_else(|| format!("Theme {t}")))
                        .collect()
                })
                .unwrap_or_default();
            out.push(ValidationItem {
                doc_id: doc.to_string(),
                assigned_themes,
                q1_accurate: None,
                q2_complete: None,
                annotator: String::new(),
            });
        }
    }
    Ok(out)
}

fn answer_str(a: Option<bool>) -> &'static str {
    match a {
        Some(true) => "yes",
        Some(false) => "no",
        None => "",
    }
}

fn parse_answer(s: &str, line: usize) -> Result<Option<bool>, ThemeError> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" => Ok(None),
        "yes" | "y" | "true" | "1" => Ok(Some(true)),
        "no" | "n" | "false" | "0" => Ok(Some(false)),
        other => Err(ThemeError::Malformed {
            line,
            message: format!("answer must be yes or no, got {other:?}"),
        }),
    }
}

/// CSV with header `doc_id,themes,q1,q2,annotator`.
pub fn write_validation_csv<W: Write>(out: W, items: &[ValidationItem]) -> Result<(), ThemeError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["doc_id", "themes", "q1", "q2", "annotator"])?;
    for it in items {
        w.write_record([
            it.doc_id.as_str(),
            &it.assigned_themes.join(THEME_SEP),
            answer_str(it.q1_accurate),
            answer_str(it.q2_complete),
            &it.annotator,
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads an annotated sheet back; answers must be binary or blank.
pub fn read_validation_csv<R: Read>(input: R) -> Result<Vec<ValidationItem>, ThemeError> {
    let mut r = csv::Reader::from_reader(input);
    let mut items = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != 5 {
            return Err(ThemeError::Malformed {
                line,
                message: format!("expected 5 columns, found {}", rec.len()),
            });
        }
        items.push(ValidationItem {
            doc_id: rec[0].to_string(),
            assigned_themes: rec[1]
                .split(THEME_SEP.trim())
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect(),
            q1_accurate: parse_answer(&rec[2], line)?,
            q2_complete: parse_answer(&rec[3], line)?,
            annotator: rec[4].to_string(),
        });
    }
    Ok(items)
}
