use std::collections::HashMap;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::qc::{parse_key_points, parse_tags};
use super::{qc_validate, AnnotationRequest, AnnotationTask, Annotator, QcVerdict};
use crate::model::{
    EnrichmentBundle, LayerProvenance, LayerStatus, Narration, NarrationId, QcFlag, DEFAULT_LANGUAGES, DEFAULT_TAGS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Translate,
    Diacritize,
    Summarize,
    KeyPoints,
    Tags,
    Classify,
}

impl FromStr for Layer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "translate" => Ok(Self::Translate),
            "diacritize" => Ok(Self::Diacritize),
            "summarize" => Ok(Self::Summarize),
            "keypoints" | "key_points" => Ok(Self::KeyPoints),
            "tags" => Ok(Self::Tags),
            "classify" => Ok(Self::Classify),
            other => Err(format!("unknown layer `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnrichConfig {
    /// The first language is the pivot that summaries and key points are
    /// derived from.
    pub languages: Vec<String>,
    pub layers: Vec<Layer>,
    pub tag_vocabulary: Vec<String>,
}

impl Default for EnrichConfig {
    fn default() -> Self {
        Self {
            languages: DEFAULT_LANGUAGES.iter().map(|s| s.to_string()).collect(),
            layers: vec![Layer::Translate, Layer::Diacritize, Layer::Summarize, Layer::KeyPoints, Layer::Tags],
            tag_vocabulary: DEFAULT_TAGS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EnrichStats {
    pub bundles: usize,
    pub requests: u64,
    pub ok: usize,
    pub failed: usize,
    pub qc_flagged: usize,
    pub blocked: usize,
}

impl std::ops::AddAssign for EnrichStats {
    fn add_assign(&mut self, o: Self) {
        self.bundles += o.bundles;
        self.requests += o.requests;
        self.ok += o.ok;
        self.failed += o.failed;
        self.qc_flagged += o.qc_flagged;
        self.blocked += o.blocked;
    }
}

struct Job<'a> {
    annotator: &'a Annotator,
    cfg: &'a EnrichConfig,
    narration: &'a Narration,
    bundle: EnrichmentBundle,
    stats: EnrichStats,
}

impl Job<'_> {
    fn done(&self, layer: &str) -> bool {
        matches!(
            self.bundle.provenance.get(layer).map(|p| &p.status),
            Some(LayerStatus::Ok) | Some(LayerStatus::QcFlagged { .. })
        )
    }

    fn ok(&self, layer: &str) -> bool {
        matches!(self.bundle.provenance.get(layer).map(|p| &p.status), Some(LayerStatus::Ok))
    }

    fn provenance(&self, status: LayerStatus, version: &str, timestamp: u64, attempts: u32) -> LayerProvenance {
        LayerProvenance {
            annotator: self.annotator.name().to_string(),
            version: version.to_string(),
            timestamp,
            attempts,
            status,
        }
    }

    fn block(&mut self, layer: &str, upstream: &str) {
        let p = self.provenance(
            LayerStatus::BlockedByUpstream { upstream: upstream.to_string() },
            "",
            self.annotator.now(),
            0,
        );
        self.bundle.provenance.insert(layer.to_string(), p);
        self.stats.blocked += 1;
    }

    fn run(&mut self, layer: &str, task: AnnotationTask, input: &str) {
        if self.done(layer) || input.trim().is_empty() {
            return;
        }
        let request = AnnotationRequest::new(format!("{}:{layer}", self.narration.narration_id), task.clone(), input);
        let prov = match self.annotator.annotate(&request) {
            Err(f) => {
                self.stats.failed += 1;
                self.provenance(LayerStatus::Failed { reason: f.reason }, "", f.timestamp, f.attempts)
            }
            Ok(a) => match qc_validate(&task, input, &a.output, &self.cfg.tag_vocabulary) {
                QcVerdict::Flag(reason) if !(task == AnnotationTask::ClassifyHadith && reason == "non-hadith") => {
                    self.stats.qc_flagged += 1;
                    self.provenance(LayerStatus::QcFlagged { reason }, &a.model_version, a.timestamp, a.attempts)
                }
                _ => {
                    self.stats.ok += 1;
                    self.store(layer, &a.output);
                    self.provenance(LayerStatus::Ok, &a.model_version, a.timestamp, a.attempts)
                }
            },
        };
        self.bundle.provenance.insert(layer.to_string(), prov);
    }

    fn store(&mut self, layer: &str, output: &str) {
        let b = &mut self.bundle;
        match layer {
            "diacritize:chain" => b.diacritized_chain = Some(output.to_string()),
            "diacritize:text" => b.diacritized_text = Some(output.to_string()),
            "summarize" => b.summary = Some(output.to_string()),
            "key_points" => b.key_points = Some(parse_key_points(output)),
            "tags" => b.tags = Some(parse_tags(output)),
            "classify_hadith" => {
                if output.trim() == "false" {
                    b.narration_flags.insert(QcFlag::NonHadithSuspect);
                }
            }
            other => {
                let lang = other.strip_prefix("translate:").expect("only translation layers remain");
                b.translations.insert(lang.to_string(), output.to_string());
            }
        }
    }

    fn enrich(mut self) -> (EnrichmentBundle, EnrichStats) {
        let n = self.narration;
        let layers = &self.cfg.layers;
        if layers.contains(&Layer::Translate) {
            for lang in &self.cfg.languages {
                self.run(&format!("translate:{lang}"), AnnotationTask::Translate(lang.clone()), &n.text);
            }
        }
        if layers.contains(&Layer::Diacritize) {
            self.run("diacritize:chain", AnnotationTask::Diacritize, &n.chain);
            self.run("diacritize:text", AnnotationTask::Diacritize, &n.text);
        }
        let pivot = format!("translate:{}", self.cfg.languages.first().map(String::as_str).unwrap_or("en"));
        let pivot_lang = pivot.trim_start_matches("translate:").to_string();
        for (layer, name, task) in [
            (Layer::Summarize, "summarize", AnnotationTask::Summarize),
            (Layer::KeyPoints, "key_points", AnnotationTask::KeyPoints),
        ] {
            if !layers.contains(&layer) || self.done(name) {
                continue;
            }
            if self.ok(&pivot) {
                let input = self.bundle.translations[&pivot_lang].clone();
                self.run(name, task, &input);
            } else {
                self.block(name, &pivot);
            }
        }
        if layers.contains(&Layer::Tags) {
            self.run("tags", AnnotationTask::Tag, &n.text);
        }
        if layers.contains(&Layer::Classify) {
            self.run("classify_hadith", AnnotationTask::ClassifyHadith, &n.full_text());
        }
        let anomalous = self
            .bundle
            .provenance
            .values()
            .any(|p| matches!(p.status, LayerStatus::Failed { .. } | LayerStatus::QcFlagged { .. }));
        let flags = &mut self.bundle.narration_flags;
        flags.extend(n.qc_flags.iter().copied());
        if anomalous {
            flags.insert(QcFlag::AnnotatorAnomaly);
        } else if !n.qc_flags.contains(&QcFlag::AnnotatorAnomaly) {
            flags.remove(&QcFlag::AnnotatorAnomaly);
        }
        self.stats.bundles = 1;
        (self.bundle, self.stats)
    }
}

/// Builds or completes one bundle per narration, in input order. Layers
/// already stored as ok (or terminally QC-flagged) in `existing` are not
/// requested again; failed and blocked layers are retried.
pub fn enrich_all(
    narrations: &[Narration],
    existing: &HashMap<NarrationId, EnrichmentBundle>,
    cfg: &EnrichConfig,
    annotator: &Annotator,
) -> (Vec<EnrichmentBundle>, EnrichStats) {
    let before = annotator.requests_sent();
    let work = || {
        narrations
            .par_iter()
            .map(|n| {
                let bundle = existing
                    .get(&n.narration_id)
                    .cloned()
                    .unwrap_or_else(|| EnrichmentBundle { narration_id: n.narration_id.clone(), ..Default::default() });
                Job { annotator, cfg, narration: n, bundle, stats: EnrichStats::default() }.enrich()
            })
            .collect::<Vec<_>>()
    };
    let results = match rayon::ThreadPoolBuilder::new().num_threads(annotator.config().concurrency.max(1)).build() {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    };
    let mut stats = EnrichStats::default();
    let mut bundles = Vec::with_capacity(results.len());
    for (b, s) in results {
        stats += s;
        bundles.push(b);
    }
    stats.requests = annotator.requests_sent() - before;
    (bundles, stats)
}
