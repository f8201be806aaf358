use std::collections::HashMap;

use super::MetricError;
use crate::textproc::truncate_to_bytes;

/// Recall percentages, each in `[0, 100]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RougeResult {
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram matches over reference n-grams, as a percentage.
/// A reference shorter than `n` scores 0.
pub fn ngram_recall<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T], n: usize) -> f64 {
    assert!(n >= 1, "n-gram order must be positive");
    if reference.len() < n {
        log::warn!("reference of {} tokens has no {n}-grams; recall is 0", reference.len());
        return 0.0;
    }
    let refs = ngram_counts(reference, n);
    let hyps = ngram_counts(hyp, n);
    let matched: usize = refs.iter().map(|(g, &c)| c.min(hyps.get(g).copied().unwrap_or(0))).sum();
    100.0 * matched as f64 / (reference.len() + 1 - n) as f64
}

/// Length of the longest common token subsequence.
pub fn lcs_len<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn lcs_recall<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T]) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    100.0 * lcs_len(hyp, reference) as f64 / reference.len() as f64
}

/// Truncates `hyp` to `byte_cap` bytes, then takes the best score over
/// references for each metric separately.
pub fn rouge_multi<S: AsRef<str>, T: AsRef<str>>(
    hyp: &[S],
    refs: &[Vec<T>],
    byte_cap: usize,
) -> Result<RougeResult, MetricError> {
    if refs.is_empty() {
        return Err(MetricError::NoReferences);
    }
    let hyp = truncate_to_bytes(hyp, byte_cap);
    let mut out = RougeResult::default();
    for r in refs {
        out.r1 = out.r1.max(ngram_recall(&hyp, r, 1));
        out.r2 = out.r2.max(ngram_recall(&hyp, r, 2));
        out.rl = out.rl.max(lcs_recall(&hyp, r));
    }
    Ok(out)
}
