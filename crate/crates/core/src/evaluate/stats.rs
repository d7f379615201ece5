use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ErrorCount, ErrorDimension, EvaluationRecord};
use crate::model::NarrationId;

/// Error percentage above which a core dimension makes a narration a
/// critical failure.
pub const CRITICAL_THRESHOLD: f64 = 60.0;

pub const CORE_DIMENSIONS: [ErrorDimension; 3] =
    [ErrorDimension::Translation, ErrorDimension::DiacritizationChar, ErrorDimension::MissingWords];

/// Mean of per-record error percentages. `None` without records.
pub fn micro_error_rate(counts: &[ErrorCount]) -> Option<f64> {
    if counts.is_empty() {
        return None;
    }
    Some(counts.iter().map(ErrorCount::rate).sum::<f64>() / counts.len() as f64)
}

/// Pooled errors over pooled units, as a percentage. `None` without records.
pub fn macro_error_rate(counts: &[ErrorCount]) -> Option<f64> {
    if counts.is_empty() {
        return None;
    }
    let (e, t) = counts.iter().fold((0u64, 0u64), |(e, t), c| (e + c.error_units as u64, t + c.total_units as u64));
    Some(e as f64 / t as f64 * 100.0)
}

/// True when any core dimension's error rate strictly exceeds `threshold`.
pub fn is_critical(counts: &BTreeMap<ErrorDimension, ErrorCount>, threshold: f64) -> bool {
    CORE_DIMENSIONS.iter().any(|d| counts.get(d).is_some_and(|c| c.total_units > 0 && c.rate() > threshold))
}

/// Splits records into `(kept, critical)` on their raw error counts.
pub fn apply_critical_filter(
    records: &[EvaluationRecord],
    threshold: f64,
) -> (Vec<&EvaluationRecord>, Vec<&EvaluationRecord>) {
    records.iter().partition(|r| !is_critical(&r.error_counts, threshold))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot sample {requested} narrations from a corpus of {available}")]
pub struct SampleTooLarge {
    pub requested: usize,
    pub available: usize,
}

/// Uniform sample without replacement, reproducible from `seed`. The
/// result does not depend on the order of `ids`.
pub fn draw_sample(ids: &[NarrationId], n: usize, seed: u64) -> Result<Vec<NarrationId>, SampleTooLarge> {
    let mut pool = ids.to_vec();
    pool.sort();
    pool.dedup();
    if n > pool.len() {
        return Err(SampleTooLarge { requested: n, available: pool.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, pool.len(), n).into_iter().map(|i| pool[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn c(e: u32, t: u32) -> ErrorCount {
        ErrorCount::new(e, t)
    }

    #[test]
    fn micro_and_macro_examples() {
        let recs = [c(1, 10), c(0, 40)];
        assert_eq!(micro_error_rate(&recs), Some(5.0));
        assert_eq!(macro_error_rate(&recs), Some(2.0));
        assert_eq!(micro_error_rate(&[c(0, 5), c(0, 9)]), Some(0.0));
        assert_eq!(micro_error_rate(&[c(3, 3)]), Some(100.0));
        assert_eq!(micro_error_rate(&[]), None);
        assert_eq!(macro_error_rate(&[]), None);
    }

    #[test]
    fn critical_filter_example() {
        let recs: Vec<EvaluationRecord> = [1u32, 7, 2]
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let mut r = EvaluationRecord::new(format!("n{i}"), "e");
                r.error_counts.insert(ErrorDimension::Translation, c(*e, 10));
                r
            })
            .collect();
        let (kept, critical) = apply_critical_filter(&recs, CRITICAL_THRESHOLD);
        assert_eq!(critical.len(), 1);
        let rate = critical.len() as f64 / recs.len() as f64 * 100.0;
        assert!((rate - 33.33).abs() < 0.005);
        let kept_counts: Vec<ErrorCount> = kept.iter().map(|r| r.error_counts[&ErrorDimension::Translation]).collect();
        assert_eq!(micro_error_rate(&kept_counts), Some(15.0));
    }

    #[test]
    fn threshold_is_strict_and_non_core_ignored() {
        let mut r = EvaluationRecord::new("n", "e");
        r.error_counts.insert(ErrorDimension::MissingWords, c(6, 10));
        r.error_counts.insert(ErrorDimension::Tagging, c(10, 10));
        assert!(!is_critical(&r.error_counts, CRITICAL_THRESHOLD));
        r.error_counts.insert(ErrorDimension::DiacritizationChar, c(61, 100));
        assert!(is_critical(&r.error_counts, CRITICAL_THRESHOLD));
    }

    #[test]
    fn sample_contract() {
        let ids: Vec<NarrationId> = (0..50).map(|i| NarrationId::new(format!("id{i:02}"))).collect();
        let mut all = draw_sample(&ids, 50, 9).unwrap();
        all.sort();
        assert_eq!(all, ids);
        assert_eq!(draw_sample(&ids, 10, 3).unwrap(), draw_sample(&ids, 10, 3).unwrap());
        let mut rev = ids.clone();
        rev.reverse();
        assert_eq!(draw_sample(&rev, 10, 3).unwrap(), draw_sample(&ids, 10, 3).unwrap());
        assert_eq!(draw_sample(&ids, 51, 1).unwrap_err(), SampleTooLarge { requested: 51, available: 50 });
    }

    #[test]
    fn single_draws_are_uniform() {
        let ids: Vec<NarrationId> = ["a", "b", "c", "d"].iter().map(|s| NarrationId::from(*s)).collect();
        let mut freq: HashMap<NarrationId, usize> = HashMap::new();
        for seed in 0..10_000 {
            *freq.entry(draw_sample(&ids, 1, seed).unwrap().remove(0)).or_default() += 1;
        }
        for id in &ids {
            let share = freq[id] as f64 / 10_000.0;
            assert!((share - 0.25).abs() <= 0.02, "{id}: {share}");
        }
    }

    proptest! {
        #[test]
        fn equal_totals_make_micro_equal_macro(errs in proptest::collection::vec(0u32..=20, 1..30)) {
            let counts: Vec<ErrorCount> = errs.iter().map(|e| c(*e, 20)).collect();
            let (mi, ma) = (micro_error_rate(&counts).unwrap(), macro_error_rate(&counts).unwrap());
            prop_assert!((mi - ma).abs() < 1e-9);
        }

        #[test]
        fn macro_invariant_under_split(
            counts in proptest::collection::vec((0u32..10, 1u32..10), 1..20),
            split in 0usize..20,
        ) {
            let counts: Vec<ErrorCount> = counts.iter().map(|(e, extra)| c(*e, *e + *extra)).collect();
            let i = split % counts.len();
            let orig = counts[i];
            prop_assume!(orig.total_units >= 2);
            let first_t = orig.total_units / 2;
            let first_e = orig.error_units.min(first_t);
            let mut split_counts = counts.clone();
            split_counts[i] = c(first_e, first_t);
            split_counts.push(c(orig.error_units - first_e, orig.total_units - first_t));
            let a = macro_error_rate(&counts).unwrap();
            let b = macro_error_rate(&split_counts).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn rates_are_permutation_invariant(counts in proptest::collection::vec((0u32..10, 1u32..10), 1..20), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let counts: Vec<ErrorCount> = counts.iter().map(|(e, extra)| c(*e, *e + *extra)).collect();
            let mut shuffled = counts.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert!((micro_error_rate(&counts).unwrap() - micro_error_rate(&shuffled).unwrap()).abs() < 1e-9);
            prop_assert!((macro_error_rate(&counts).unwrap() - macro_error_rate(&shuffled).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn micro_differs_from_macro_after_split() {
        let whole = [c(4, 10), c(0, 10)];
        let split = [c(4, 5), c(0, 5), c(0, 10)];
        assert_eq!(macro_error_rate(&whole), macro_error_rate(&split));
        assert_ne!(micro_error_rate(&whole), micro_error_rate(&split));
    }
}
