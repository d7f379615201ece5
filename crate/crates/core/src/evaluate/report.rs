use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::stats::{is_critical, macro_error_rate, micro_error_rate, CRITICAL_THRESHOLD};
use super::{ErrorCount, ErrorDimension, EvaluationAspect, EvaluationRecord};
use crate::model::NarrationId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionRates {
    pub micro: Option<f64>,
    #[serde(rename = "macro")]
    pub macro_rate: Option<f64>,
    /// Narrations contributing to the rates.
    pub narrations: usize,
}

/// Aggregate statistics over a set of evaluation records.
///
/// Records of the same narration by several evaluators are merged first:
/// aspect scores are averaged, error counts pooled, and the narration counts
/// as non-hadith when at least half its evaluators say so. Aspect means,
/// the overall mean and error rates cover narrations that are neither
/// non-hadith nor critical failures; critical failures are summarized
/// separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub sample_size: usize,
    pub evaluation_count: usize,
    pub overall_mean: Option<f64>,
    pub non_hadith_count: usize,
    pub non_hadith_rate: f64,
    pub critical_count: usize,
    pub critical_failure_rate: f64,
    pub aspect_means: BTreeMap<EvaluationAspect, f64>,
    pub error_rates: BTreeMap<ErrorDimension, DimensionRates>,
    pub critical_error_rates: BTreeMap<ErrorDimension, DimensionRates>,
}

struct Merged {
    scores: BTreeMap<EvaluationAspect, f64>,
    raw: BTreeMap<ErrorDimension, ErrorCount>,
    adjusted: BTreeMap<ErrorDimension, ErrorCount>,
    non_hadith: bool,
}

fn merge(records: &[&EvaluationRecord]) -> Merged {
    let mut sums: BTreeMap<EvaluationAspect, (f64, usize)> = BTreeMap::new();
    let mut raw: BTreeMap<ErrorDimension, ErrorCount> = BTreeMap::new();
    let mut adjusted: BTreeMap<ErrorDimension, ErrorCount> = BTreeMap::new();
    let mut non_hadith_votes = 0;
    for r in records {
        for (a, s) in &r.aspect_scores {
            let e = sums.entry(*a).or_default();
            e.0 += s;
            e.1 += 1;
        }
        for (d, c) in &r.error_counts {
            let e = raw.entry(*d).or_default();
            *e = *e + *c;
        }
        for (d, c) in r.suppress_cascades() {
            let e = adjusted.entry(d).or_default();
            *e = *e + c;
        }
        non_hadith_votes += usize::from(r.is_non_hadith);
    }
    Merged {
        scores: sums.into_iter().map(|(a, (s, n))| (a, s / n as f64)).collect(),
        raw,
        adjusted,
        non_hadith: non_hadith_votes * 2 >= records.len(),
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64 * 100.0
    }
}

fn rates(items: &[&Merged]) -> BTreeMap<ErrorDimension, DimensionRates> {
    ErrorDimension::ALL
        .iter()
        .filter_map(|d| {
            let counts: Vec<ErrorCount> = items.iter().filter_map(|m| m.adjusted.get(d).copied()).collect();
            (!counts.is_empty()).then(|| {
                (
                    *d,
                    DimensionRates {
                        micro: micro_error_rate(&counts),
                        macro_rate: macro_error_rate(&counts),
                        narrations: counts.len(),
                    },
                )
            })
        })
        .collect()
}

pub fn build_report(records: &[EvaluationRecord]) -> AggregateReport {
    let mut by_narration: BTreeMap<&NarrationId, Vec<&EvaluationRecord>> = BTreeMap::new();
    for r in records {
        by_narration.entry(&r.narration_id).or_default().push(r);
    }
    let merged: Vec<Merged> = by_narration.values().map(|rs| merge(rs)).collect();
    let n = merged.len();
    let critical: Vec<bool> = merged.iter().map(|m| is_critical(&m.raw, CRITICAL_THRESHOLD)).collect();
    let kept: Vec<&Merged> =
        merged.iter().zip(&critical).filter(|(m, c)| !m.non_hadith && !**c).map(|(m, _)| m).collect();
    let failed: Vec<&Merged> = merged.iter().zip(&critical).filter(|(_, c)| **c).map(|(m, _)| m).collect();
    let non_hadith_count = merged.iter().filter(|m| m.non_hadith).count();

    let aspect_means = EvaluationAspect::ALL
        .iter()
        .filter_map(|a| mean(kept.iter().filter_map(|m| m.scores.get(a).copied())).map(|v| (*a, v)))
        .collect();
    AggregateReport {
        sample_size: n,
        evaluation_count: records.len(),
        overall_mean: mean(kept.iter().filter_map(|m| mean(m.scores.values().copied()))),
        non_hadith_count,
        non_hadith_rate: percent(non_hadith_count, n),
        critical_count: failed.len(),
        critical_failure_rate: percent(failed.len(), n),
        aspect_means,
        error_rates: rates(&kept),
        critical_error_rates: rates(&failed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into())
}

pub fn render_text(report: &AggregateReport, comparison: Option<&AggregateReport>) -> String {
    let mut out = String::new();
    let r = report;
    let _ = writeln!(out, "Evaluation report");
    let _ = writeln!(out, "  sample size        {} narrations ({} evaluations)", r.sample_size, r.evaluation_count);
    let _ = writeln!(out, "  overall mean       {} / 10", cell(r.overall_mean));
    let _ =
        writeln!(out, "  non-hadith         {:.2}% ({} of {})", r.non_hadith_rate, r.non_hadith_count, r.sample_size);
    let _ = writeln!(
        out,
        "  critical failures  {:.2}% ({} of {}, >{CRITICAL_THRESHOLD:.0}% error in a core dimension)",
        r.critical_failure_rate, r.critical_count, r.sample_size
    );
    if let Some(c) = comparison {
        let _ =
            writeln!(out, "  comparison         {} narrations, overall mean {}", c.sample_size, cell(c.overall_mean));
    }

    let _ = writeln!(out, "\nMean quality scores (0-10)");
    for a in EvaluationAspect::ALL {
        let mut line = format!("  {:<34}{:>8}", a.label(), cell(r.aspect_means.get(&a).copied()));
        if let Some(c) = comparison {
            let _ = write!(line, "{:>8}", cell(c.aspect_means.get(&a).copied()));
        }
        let _ = writeln!(out, "{line}");
    }

    let _ = writeln!(out, "\nError rates (%): micro = mean per narration, macro = pooled units");
    let mut header = format!("  {:<34}{:>8}{:>8}", "dimension", "micro", "macro");
    if comparison.is_some() {
        header.push_str(&format!("{:>8}{:>8}", "micro", "macro"));
    }
    let _ = writeln!(out, "{header}");
    for d in ErrorDimension::ALL {
        let p = r.error_rates.get(&d);
        let mut line =
            format!("  {:<34}{:>8}{:>8}", d.label(), cell(p.and_then(|x| x.micro)), cell(p.and_then(|x| x.macro_rate)));
        if let Some(c) = comparison {
            let q = c.error_rates.get(&d);
            let _ = write!(line, "{:>8}{:>8}", cell(q.and_then(|x| x.micro)), cell(q.and_then(|x| x.macro_rate)));
        }
        let _ = writeln!(out, "{line}");
    }

    if !r.critical_error_rates.is_empty() {
        let _ = writeln!(out, "\nCritical failures, reported separately (macro %)");
        for (d, v) in &r.critical_error_rates {
            let _ = writeln!(out, "  {:<34}{:>8}", d.label(), cell(v.macro_rate));
        }
    }
    out
}

pub fn render_csv(report: &AggregateReport, comparison: Option<&AggregateReport>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut row = |section: &str, item: &str, f: &dyn Fn(&AggregateReport) -> Option<f64>| {
        let mut rec = vec![section.to_string(), item.to_string(), cell(f(report))];
        if let Some(c) = comparison {
            rec.push(cell(f(c)));
        }
        w.write_record(&rec).expect("in-memory csv");
    };
    let mut head = vec!["section", "item", "primary"];
    if comparison.is_some() {
        head.push("comparison");
    }
    row("headline", "sample_size", &|r| Some(r.sample_size as f64));
    row("headline", "overall_mean", &|r| r.overall_mean);
    row("headline", "non_hadith_rate", &|r| Some(r.non_hadith_rate));
    row("headline", "critical_failure_rate", &|r| Some(r.critical_failure_rate));
    for a in EvaluationAspect::ALL {
        row("aspect_mean", &a.to_string(), &|r| r.aspect_means.get(&a).copied());
    }
    for d in ErrorDimension::ALL {
        row("error_micro", &d.to_string(), &|r| r.error_rates.get(&d).and_then(|x| x.micro));
        row("error_macro", &d.to_string(), &|r| r.error_rates.get(&d).and_then(|x| x.macro_rate));
    }
    for d in ErrorDimension::ALL {
        row("critical_macro", &d.to_string(), &|r| r.critical_error_rates.get(&d).and_then(|x| x.macro_rate));
    }
    drop(row);
    let body = String::from_utf8(w.into_inner().expect("flush")).expect("utf-8");
    format!("{}\n{body}", head.join(","))
}
