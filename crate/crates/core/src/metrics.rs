//! ROUGE-1/2/L and extractive fragment statistics.
//!
//! ROUGE-L here is the sentence-level variant: one LCS between the whole
//! candidate and the whole reference. No stemming or stopword removal.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(overlap: usize, candidate_total: usize, reference_total: usize) -> Self {
        if candidate_total == 0 || reference_total == 0 {
            return Self::default();
        }
        let precision = overlap as f64 / candidate_total as f64;
        let recall = overlap as f64 / reference_total as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbstractivenessScore {
    pub coverage: f64,
    pub density: f64,
}

/// Length of a longest common subsequence. Uses the bit-parallel recurrence
/// when the shorter input fits in a machine word, the O(|a|·|b|) table
/// otherwise.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    if b.is_empty() {
        return 0;
    }
    if b.len() <= 64 {
        return lcs_bits(a, b);
    }
    lcs_rows(a, b, &mut vec![0usize; b.len() + 1])
}

/// Zero bits of V count the LCS; for each symbol x of `a`, with M the
/// positions of x in `b`: V <- (V + (V & M)) | (V & !M).
fn lcs_bits<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let width = if b.len() == 64 { u64::MAX } else { (1u64 << b.len()) - 1 };
    let mut v = u64::MAX;
    for x in a {
        let m = b
            .iter()
            .enumerate()
            .fold(0u64, |m, (j, y)| m | (u64::from(x == y) << j));
        v = v.wrapping_add(v & m) | (v & !m);
    }
    (!v & width).count_ones() as usize
}

fn lcs_rows<T: PartialEq>(a: &[T], b: &[T], row: &mut [usize]) -> usize {
    for x in a {
        let (mut diag, mut left) = (0, 0);
        for (y, cell) in b.iter().zip(&mut row[1..]) {
            let up = *cell;
            left = if x == y { diag + 1 } else { up.max(left) };
            *cell = left;
            diag = up;
        }
    }
    row[b.len()]
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Inputs below this length take the allocation-free paths.
const SMALL: usize = 64;

/// Sum over distinct n-grams of min(candidate count, reference count).
fn clipped_overlap<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> usize {
    if candidate.len() < n || reference.len() < n {
        return 0;
    }
    if reference.len() - n < SMALL && candidate.len() - n < SMALL {
        // pair each candidate gram with the first unused equal reference gram
        let mut used = 0u64;
        let mut overlap = 0;
        for g in candidate.windows(n) {
            for (j, h) in reference.windows(n).enumerate() {
                if used & (1 << j) == 0 && g.iter().zip(h).all(|(x, y)| x == y) {
                    used |= 1 << j;
                    overlap += 1;
                    break;
                }
            }
        }
        return overlap;
    }
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    cand.iter()
        .map(|(gram, &c)| c.min(refs.get(gram).copied().unwrap_or(0)))
        .sum()
}

/// Clipped n-gram overlap.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> Prf {
    assert!(n >= 1, "n-gram order must be positive");
    let overlap = clipped_overlap(candidate, reference, n);
    Prf::from_counts(
        overlap,
        candidate.len().saturating_sub(n - 1),
        reference.len().saturating_sub(n - 1),
    )
}

pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> Prf {
    Prf::from_counts(lcs_length(candidate, reference), candidate.len(), reference.len())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScores {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
}

/// F1 of ROUGE-1, ROUGE-2 and ROUGE-L.
pub fn rouge_scores<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> RougeScores {
    RougeScores {
        rouge1: rouge_n(candidate, reference, 1).f1,
        rouge2: rouge_n(candidate, reference, 2).f1,
        rouge_l: rouge_l(candidate, reference).f1,
    }
}

/// Greedy extractive fragments of `summary` in `article`.
///
/// Scanning the summary left to right, the longest article match starting at
/// the current position becomes a fragment (earliest article occurrence on
/// ties); with no match the scan advances by one token.
pub fn extractive_fragments<T: PartialEq>(article: &[T], summary: &[T]) -> Vec<(usize, usize)> {
    let mut fragments = Vec::new();
    let mut i = 0;
    while i < summary.len() {
        let mut best: Option<(usize, usize)> = None;
        for start in 0..article.len() {
            let len = article[start..]
                .iter()
                .zip(&summary[i..])
                .take_while(|(a, s)| a == s)
                .count();
            if len > 0 && best.is_none_or(|(_, l)| len > l) {
                best = Some((start, len));
            }
        }
        match best {
            Some((start, len)) => {
                fragments.push((start, len));
                i += len;
            }
            None => i += 1,
        }
    }
    fragments
}

pub fn fragment_stats<T: PartialEq>(article: &[T], summary: &[T]) -> Result<AbstractivenessScore> {
    if summary.is_empty() {
        return Err(Error::EmptySummary);
    }
    let fragments = extractive_fragments(article, summary);
    let n = summary.len() as f64;
    let covered: usize = fragments.iter().map(|f| f.1).sum();
    let squared: usize = fragments.iter().map(|f| f.1 * f.1).sum();
    Ok(AbstractivenessScore {
        coverage: covered as f64 / n,
        density: squared as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // Exhaustive oracle: longest subsequence of `a` that is also a
    // subsequence of `b`, over all 2^|a| index subsets.
    fn lcs_brute(a: &[u8], b: &[u8]) -> usize {
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let sub: Vec<u8> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
            let mut it = b.iter();
            if sub.len() > best && sub.iter().all(|x| it.any(|y| y == x)) {
                best = sub.len();
            }
        }
        best
    }

    #[test]
    fn lcs_examples() {
        assert_eq!(lcs_length(&["x"], &["x"]), 1);
        assert_eq!(lcs_length(&["a", "b", "c"], &[] as &[&str]), 0);
        let (a, b) = (b"abcd", b"acde");
        assert_eq!(lcs_brute(a, b), 3);
        assert_eq!(lcs_length(a, b), 3);
    }

    #[test]
    fn rouge_n_examples() {
        let s = ["a", "b", "c", "d"];
        let p = rouge_n(&s, &s, 1);
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        assert_eq!(rouge_n(&["a", "b"], &["c", "d"], 1), Prf::default());
        let p = rouge_n(&["a", "a", "b"], &["a", "b", "b"], 1);
        assert_relative_eq!(p.precision, 2.0 / 3.0);
        assert_relative_eq!(p.recall, 2.0 / 3.0);
        assert_relative_eq!(p.f1, 2.0 / 3.0);
        // too short for any bigram on one side
        assert_eq!(rouge_n(&["a"], &["a", "b"], 2), Prf::default());
    }

    #[test]
    fn rouge_l_examples() {
        let s = ["a", "b"];
        assert_eq!(rouge_l(&s, &s).f1, 1.0);
        let p = rouge_l(&["a", "b", "c", "d"], &["a", "c", "d", "e"]);
        assert_relative_eq!(p.precision, 0.75);
        assert_relative_eq!(p.recall, 0.75);
        assert_relative_eq!(p.f1, 0.75);
        assert_eq!(rouge_l(&[] as &[&str], &s), Prf::default());
    }

    #[test]
    fn fragment_examples() {
        let article = ["p", "a", "b", "c", "d", "e", "q"];
        let s = fragment_stats(&article, &["a", "b", "c", "d", "e"]).unwrap();
        assert_eq!((s.coverage, s.density), (1.0, 5.0));
        let s = fragment_stats(&article, &["x", "y"]).unwrap();
        assert_eq!((s.coverage, s.density), (0.0, 0.0));
        // hand-applied greedy rule: [a,b] then x unmatched then [c,d]
        let article = ["a", "b", "c", "d"];
        let summary = ["a", "b", "x", "c", "d"];
        assert_eq!(extractive_fragments(&article, &summary), vec![(0, 2), (2, 2)]);
        let s = fragment_stats(&article, &summary).unwrap();
        assert_relative_eq!(s.coverage, 4.0 / 5.0);
        assert_relative_eq!(s.density, 8.0 / 5.0);
        assert!(matches!(fragment_stats(&article, &[] as &[&str]), Err(Error::EmptySummary)));
    }

    #[test]
    fn fragment_ties_take_earliest_occurrence() {
        let article = ["a", "b", "z", "a", "b"];
        assert_eq!(extractive_fragments(&article, &["a", "b"]), vec![(0, 2)]);
    }

    fn seq() -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(0u8..3, 0..9)
    }

    proptest! {
        #[test]
        fn rouge_l_f1_symmetric(a in seq(), b in seq()) {
            let ab = rouge_l(&a, &b);
            let ba = rouge_l(&b, &a);
            prop_assert_eq!(ab.f1, ba.f1);
            prop_assert_eq!(ab.precision, ba.recall);
        }

        #[test]
        fn lcs_grows_with_common_suffix(a in seq(), b in seq(), t in 0u8..5) {
            let mut a2 = a.clone();
            let mut b2 = b.clone();
            a2.push(t);
            b2.push(t);
            prop_assert_eq!(lcs_length(&a2, &b2), lcs_length(&a, &b) + 1);
        }

        #[test]
        fn word_and_table_lcs_agree(a in prop::collection::vec(0u8..4, 0..150),
                                    b in prop::collection::vec(0u8..4, 1..=64)) {
            let table = lcs_rows(&a, &b, &mut vec![0usize; b.len() + 1]);
            prop_assert_eq!(lcs_bits(&a, &b), table);
            prop_assert_eq!(lcs_length(&a, &b), table);
            prop_assert_eq!(lcs_length(&b, &a), table);
        }

        #[test]
        fn lcs_on_short_inputs_matches_brute_force(a in prop::collection::vec(0u8..3, 0..10), b in seq()) {
            prop_assert_eq!(lcs_length(&a, &b), lcs_brute(&a, &b));
        }

        #[test]
        fn overlap_paths_agree(a in prop::collection::vec(0u8..3, 0..90),
                               b in prop::collection::vec(0u8..3, 0..90), n in 1usize..4) {
            let cand = ngram_counts(&a, n);
            let refs = ngram_counts(&b, n);
            let hashed: usize = cand.iter().map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0))).sum();
            prop_assert_eq!(clipped_overlap(&a, &b, n), hashed);
        }

        #[test]
        fn density_at_least_coverage(a in prop::collection::vec(0u8..4, 0..20),
                                     s in prop::collection::vec(0u8..6, 1..20)) {
            let st = fragment_stats(&a, &s).unwrap();
            prop_assert!(st.coverage <= 1.0);
            if st.coverage > 0.0 {
                prop_assert!(st.density >= st.coverage);
            }
        }
    }
}
