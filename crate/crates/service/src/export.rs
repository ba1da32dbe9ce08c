//! Report bundle: the analysis CSVs plus a provenance manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::pipeline::{PipelineError, Result, STANCE_TABLES};
use crate::stage::Stage;
use crate::store::{sha256_hex, Store, STORE_VERSION};

pub const BUNDLE_MANIFEST: &str = "bundle.json";

/// The five table families: bundle file name and the stage output it
/// copies.
fn families() -> Vec<(&'static str, Vec<(Stage, &'static str)>)> {
    vec![
        ("frequency", vec![(Stage::Tables, "frequency.csv")]),
        ("engagement", vec![(Stage::Engagement, "engagement.csv")]),
        (
            "stance",
            STANCE_TABLES.iter().map(|(name, _)| (Stage::StanceTables, *name)).collect(),
        ),
        ("layout", vec![(Stage::Viz, "layout.csv")]),
        ("quality", vec![(Stage::Quality, "quality.csv")]),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleStage {
    pub inputs_hash: String,
    pub params: serde_json::Value,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub store_version: u32,
    pub corpus_hash: Option<String>,
    pub config: serde_json::Value,
    /// Every recorded stage, for provenance.
    pub stages: BTreeMap<Stage, BundleStage>,
    /// Bundle file name to sha256.
    pub files: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

/// Writes every available table family into `out_dir`. Missing families
/// are reported as warnings; if none is available the export fails and
/// names the stages to run.
pub fn export_report(store: &Store, out_dir: &Path) -> Result<BundleManifest> {
    let mut files = BTreeMap::new();
    let mut contents = Vec::new();
    let mut warnings = Vec::new();
    let mut missing = Vec::new();
    for (family, parts) in families() {
        let stage = parts[0].0;
        if store.record(stage).is_none() {
            warnings.push(format!("{family}: stage {stage} has not been run"));
            missing.push(stage);
            continue;
        }
        for (stage, name) in parts {
            let bytes = store.read(stage, name)?;
            files.insert(name.to_string(), sha256_hex(&bytes));
            contents.push((name, bytes));
        }
    }
    if contents.is_empty() {
        let names: Vec<&str> = missing.iter().map(|s| s.as_str()).collect();
        return Err(PipelineError::Invalid(format!(
            "nothing to export; run these stages first: {}",
            names.join(", ")
        )));
    }
    let m = store.manifest();
    let manifest = BundleManifest {
        store_version: STORE_VERSION,
        corpus_hash: m.corpus_hash.clone(),
        config: m.config.clone(),
        stages: m
            .stages
            .iter()
            .map(|(s, r)| {
                (
                    *s,
                    BundleStage {
                        inputs_hash: r.inputs_hash.clone(),
                        params: r.params.clone(),
                        outputs: r.outputs.iter().map(|(n, o)| (n.clone(), o.sha256.clone())).collect(),
                    },
                )
            })
            .collect(),
        files,
        warnings,
    };
    let io = |p: &Path| {
        let path = p.display().to_string();
        move |source| PipelineError::Input { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    for (name, bytes) in contents {
        let p = out_dir.join(name);
        fs::write(&p, bytes).map_err(io(&p))?;
    }
    let p = out_dir.join(BUNDLE_MANIFEST);
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("in-memory serialization");
    bytes.push(b'\n');
    fs::write(&p, bytes).map_err(io(&p))?;
    for w in &manifest.warnings {
        log::warn!("export: {w}");
    }
    Ok(manifest)
}
