//! Oracle salience: sentence scores against the reference summary, corpus
//! percentile cutoffs, discrete salience degrees, smoothed degree targets,
//! greedy threshold search and corpus statistics.
//!
//! Degree 1 is the most salient class. Cutoffs are computed once over every
//! sentence in the corpus and then applied per sentence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{self, metric_tokens, split_sentences, RawDocument};
use crate::error::{Error, Result};
use crate::metrics::rouge_l;

/// Default cumulative-from-top fractions: top 15% and top 50%.
pub const DEFAULT_PERCENTILES: [f64; 2] = [0.15, 0.50];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalienceAllocation {
    pub scores: Vec<f64>,
    pub degrees: Vec<usize>,
    pub n_degrees: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    /// Strictly increasing fractions in (0, 1), counted from the top.
    pub percentiles: Vec<f64>,
    /// Score value realized at each percentile; non-increasing.
    pub cutoffs: Vec<f64>,
    pub n_degrees: usize,
}

impl ThresholdSpec {
    pub fn fit(all_scores: &[f64], percentiles: &[f64]) -> Self {
        Self {
            percentiles: percentiles.to_vec(),
            cutoffs: percentile_cutoffs(all_scores, percentiles),
            n_degrees: percentiles.len() + 1,
        }
    }

    pub fn allocate(&self, scores: &[f64]) -> SalienceAllocation {
        SalienceAllocation {
            scores: scores.to_vec(),
            degrees: assign_degrees(scores, &self.cutoffs),
            n_degrees: self.n_degrees,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text)?;
        if spec.cutoffs.len() + 1 != spec.n_degrees || spec.percentiles.len() + 1 != spec.n_degrees {
            return Err(Error::Config(format!(
                "threshold spec with {} degrees needs {} cutoffs",
                spec.n_degrees,
                spec.n_degrees.saturating_sub(1)
            )));
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedTarget {
    pub distribution: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingKind {
    /// β shared by the degrees directly next to the gold degree.
    #[default]
    Adjacent,
    /// β shared by every non-gold degree.
    Uniform,
}

/// Adjacent label smoothing. `gold` is 1-based. At an edge the single
/// neighbour receives all of β.
pub fn smooth_labels(gold: usize, n_degrees: usize, beta: f64) -> SmoothedTarget {
    smooth_with(SmoothingKind::Adjacent, gold, n_degrees, beta)
}

pub fn smooth_with(kind: SmoothingKind, gold: usize, n_degrees: usize, beta: f64) -> SmoothedTarget {
    assert!((1..=n_degrees).contains(&gold), "gold degree {gold} outside 1..={n_degrees}");
    assert!((0.0..1.0).contains(&beta), "beta must lie in [0, 1)");
    let mut distribution = vec![0.0; n_degrees];
    let g = gold - 1;
    let receivers: Vec<usize> = match kind {
        SmoothingKind::Adjacent => [g.checked_sub(1), Some(g + 1).filter(|&k| k < n_degrees)]
            .into_iter()
            .flatten()
            .collect(),
        SmoothingKind::Uniform => (0..n_degrees).filter(|&k| k != g).collect(),
    };
    if receivers.is_empty() {
        distribution[g] = 1.0;
    } else {
        distribution[g] = 1.0 - beta;
        let share = beta / receivers.len() as f64;
        for k in receivers {
            distribution[k] = share;
        }
    }
    SmoothedTarget { distribution }
}

/// ROUGE-L F1 of each sentence against the reference.
pub fn score_sentences<T: PartialEq>(sentences: &[Vec<T>], reference: &[T]) -> Result<Vec<f64>> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    Ok(sentences.iter().map(|s| rouge_l(s, reference).f1).collect())
}

/// Splits the article and scores every sentence against the document's summary.
pub fn score_document(doc: &RawDocument) -> Result<Vec<f64>> {
    let reference = metric_tokens(&doc.summary);
    if reference.is_empty() {
        return Err(Error::MissingReference(doc.id.clone()));
    }
    let split = split_sentences(&doc.article).map_err(|_| Error::EmptyDocument(doc.id.clone()))?;
    let sentences: Vec<Vec<String>> = split
        .sentences
        .iter()
        .filter(|s| !corpus::tokenize(s).is_empty())
        .map(|s| metric_tokens(s))
        .collect();
    score_sentences(&sentences, &reference)
}

fn nearest_rank(p: f64, m: usize) -> usize {
    // tolerance absorbs products like 0.15 * 20 = 3.0000000000000004
    ((p * m as f64 - 1e-9).ceil() as usize).clamp(1, m)
}

/// Nearest-rank cutoffs from the top: the cutoff for fraction `p` is the
/// score at rank `ceil(p·M)` of the descending sort.
pub fn percentile_cutoffs(all_scores: &[f64], percentiles: &[f64]) -> Vec<f64> {
    assert!(!all_scores.is_empty(), "no scores to take percentiles of");
    assert!(
        percentiles.windows(2).all(|w| w[0] < w[1]) && percentiles.iter().all(|&p| p > 0.0 && p < 1.0),
        "percentiles must be strictly increasing fractions in (0, 1)"
    );
    let mut sorted = all_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    percentiles
        .iter()
        .map(|&p| sorted[nearest_rank(p, sorted.len()) - 1])
        .collect()
}

/// `1 + #{cutoffs strictly greater than s}`; a score equal to a cutoff joins
/// the more salient class.
pub fn assign_degrees(scores: &[f64], cutoffs: &[f64]) -> Vec<usize> {
    scores
        .iter()
        .map(|&s| 1 + cutoffs.iter().filter(|&&c| c > s).count())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDocument {
    #[serde(flatten)]
    pub doc: RawDocument,
    pub salience_scores: Vec<f64>,
    pub degrees: Vec<usize>,
}

/// Scores every document, fits corpus-wide cutoffs at `percentiles` and
/// assigns degrees.
pub fn label_corpus(docs: &[RawDocument], percentiles: &[f64]) -> Result<(Vec<LabeledDocument>, ThresholdSpec)> {
    let scores = docs.iter().map(score_document).collect::<Result<Vec<_>>>()?;
    let all: Vec<f64> = scores.iter().flatten().copied().collect();
    let spec = ThresholdSpec::fit(&all, percentiles);
    Ok((apply_thresholds(docs, scores, &spec), spec))
}

/// Labels documents with an already fitted threshold spec.
pub fn label_with(docs: &[RawDocument], spec: &ThresholdSpec) -> Result<Vec<LabeledDocument>> {
    let scores = docs.iter().map(score_document).collect::<Result<Vec<_>>>()?;
    Ok(apply_thresholds(docs, scores, spec))
}

fn apply_thresholds(docs: &[RawDocument], scores: Vec<Vec<f64>>, spec: &ThresholdSpec) -> Vec<LabeledDocument> {
    docs.iter()
        .zip(scores)
        .map(|(doc, s)| LabeledDocument {
            doc: doc.clone(),
            degrees: assign_degrees(&s, &spec.cutoffs),
            salience_scores: s,
        })
        .collect()
}

pub fn load_labeled(path: impl AsRef<Path>) -> Result<Vec<LabeledDocument>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if value.get("degrees").is_none() {
            let id = value.get("id").and_then(|v| v.as_str()).unwrap_or("?");
            return Err(Error::MissingLabels(id.to_string()));
        }
        let doc: LabeledDocument = serde_json::from_value(value).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if doc.degrees.len() != doc.salience_scores.len() {
            return Err(Error::Parse {
                line: n + 1,
                message: "degrees and salience_scores differ in length".into(),
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Default search grid: 0.05, 0.10, …, 0.95.
pub fn default_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub n_degrees: usize,
    /// Chosen fractions, sorted ascending.
    pub percentiles: Vec<f64>,
    pub score: f64,
}

/// Greedy threshold search.
///
/// For two degrees every grid fraction is tried; each further degree keeps
/// the fractions chosen so far and adds the single best unused one. Ties go
/// to the smaller fraction. `eval_fn` receives sorted fractions.
pub fn greedy_threshold_search<F>(mut eval_fn: F, grid: &[f64], max_degrees: usize) -> Result<Vec<SearchRow>>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(max_degrees >= 2, "need at least two degrees");
    assert!(grid.windows(2).all(|w| w[0] < w[1]), "grid must be strictly increasing");
    if grid.len() < max_degrees - 1 {
        return Err(Error::InsufficientGrid {
            needed: max_degrees - 1,
            available: grid.len(),
        });
    }
    let mut chosen: Vec<f64> = Vec::new();
    let mut rows = Vec::new();
    for n_degrees in 2..=max_degrees {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for &p in grid.iter().filter(|p| !chosen.contains(p)) {
            let mut candidate = chosen.clone();
            candidate.push(p);
            candidate.sort_by(f64::total_cmp);
            let score = eval_fn(&candidate);
            log::debug!("L={n_degrees} {candidate:?} -> {score:.6}");
            // grid is ascending, so strict improvement keeps the smaller fraction on ties
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, candidate));
            }
        }
        let (score, percentiles) = best.expect("grid has an unused fraction");
        chosen = percentiles.clone();
        rows.push(SearchRow {
            n_degrees,
            percentiles,
            score,
        });
    }
    Ok(rows)
}

/// Cheap evaluation for threshold search that needs no model.
///
/// Cutoffs are fitted on the training corpus. For every validation document
/// the oracle degrees order its sentences (degree first, position second)
/// and sentences are taken in that order until the extract is at least as
/// long as the reference; the score is the mean ROUGE-L F1 of the extract.
pub struct ProxyEvaluator {
    train_scores: Vec<f64>,
    val: Vec<ProxyDoc>,
}

struct ProxyDoc {
    sentences: Vec<Vec<String>>,
    scores: Vec<f64>,
    reference: Vec<String>,
}

impl ProxyEvaluator {
    pub fn new(train: &[RawDocument], val: &[RawDocument]) -> Result<Self> {
        let mut train_scores = Vec::new();
        for doc in train {
            train_scores.extend(score_document(doc)?);
        }
        let val = val
            .iter()
            .map(|doc| {
                let split = split_sentences(&doc.article)?;
                let sentences: Vec<Vec<String>> = split
                    .sentences
                    .iter()
                    .filter(|s| !corpus::tokenize(s).is_empty())
                    .map(|s| metric_tokens(s))
                    .collect();
                let reference = metric_tokens(&doc.summary);
                let scores = score_sentences(&sentences, &reference)
                    .map_err(|_| Error::MissingReference(doc.id.clone()))?;
                Ok(ProxyDoc {
                    sentences,
                    scores,
                    reference,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if train_scores.is_empty() || val.is_empty() {
            return Err(Error::Config("proxy evaluation needs training and validation documents".into()));
        }
        Ok(Self { train_scores, val })
    }

    pub fn eval(&self, percentiles: &[f64]) -> f64 {
        let cutoffs = percentile_cutoffs(&self.train_scores, percentiles);
        let total: f64 = self
            .val
            .iter()
            .map(|doc| {
                let degrees = assign_degrees(&doc.scores, &cutoffs);
                let mut order: Vec<usize> = (0..doc.sentences.len()).collect();
                order.sort_by_key(|&j| (degrees[j], j));
                let mut picked = Vec::new();
                let mut len = 0;
                for j in order {
                    if len >= doc.reference.len() {
                        break;
                    }
                    len += doc.sentences[j].len();
                    picked.push(j);
                }
                picked.sort_unstable();
                let extract: Vec<&String> = picked.iter().flat_map(|&j| &doc.sentences[j]).collect();
                let reference: Vec<&String> = doc.reference.iter().collect();
                rouge_l(&extract, &reference).f1
            })
            .sum();
        total / self.val.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalienceReport {
    pub n_documents: usize,
    pub n_sentences: usize,
    pub n_degrees: usize,
    pub degree_counts: Vec<usize>,
    pub degree_fractions: Vec<f64>,
    /// `per_document[d][l]` = sentences of degree `l + 1` in document `d`.
    pub per_document: Vec<Vec<usize>>,
    /// `degree1_by_position[j]` = number of degree-1 sentences at position `j + 1`.
    pub degree1_by_position: Vec<usize>,
    pub cutoffs: Vec<f64>,
    pub percentiles: Vec<f64>,
}

pub fn salience_stats(docs: &[LabeledDocument], spec: &ThresholdSpec) -> SalienceReport {
    let l = spec.n_degrees;
    let mut degree_counts = vec![0usize; l];
    let mut per_document = Vec::with_capacity(docs.len());
    let mut degree1_by_position: Vec<usize> = Vec::new();
    for doc in docs {
        let mut hist = vec![0usize; l];
        for (j, &d) in doc.degrees.iter().enumerate() {
            hist[d - 1] += 1;
            if d == 1 {
                if degree1_by_position.len() <= j {
                    degree1_by_position.resize(j + 1, 0);
                }
                degree1_by_position[j] += 1;
            }
        }
        for (total, h) in degree_counts.iter_mut().zip(&hist) {
            *total += h;
        }
        per_document.push(hist);
    }
    let n_sentences: usize = degree_counts.iter().sum();
    SalienceReport {
        n_documents: docs.len(),
        n_sentences,
        n_degrees: l,
        degree_fractions: degree_counts
            .iter()
            .map(|&c| if n_sentences == 0 { 0.0 } else { c as f64 / n_sentences as f64 })
            .collect(),
        degree_counts,
        per_document,
        degree1_by_position,
        cutoffs: spec.cutoffs.clone(),
        percentiles: spec.percentiles.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn words(s: &str) -> Vec<String> {
        metric_tokens(s)
    }

    #[test]
    fn scoring_examples() {
        let r = words("the cat sat");
        let s = score_sentences(&[words("the cat sat"), words("dogs bark loud")], &r).unwrap();
        assert_eq!(s, vec![1.0, 0.0]);
        let same = score_sentences(&[words("a b"), words("a b"), words("a b")], &words("a c")).unwrap();
        assert!(same.iter().all(|&x| x == same[0]));
        assert!(matches!(score_sentences(&[words("a")], &[]), Err(Error::EmptyReference)));
    }

    // Partial overlap against the metrics route: LCS("a b c d","a c e")=2,
    // LCS("c e","a c e")=2, LCS("x","a c e")=0.
    #[test]
    fn scoring_partial_overlap() {
        let r = words("a c e");
        let s = score_sentences(&[words("a b c d"), words("c e"), words("x")], &r).unwrap();
        assert_relative_eq!(s[0], 2.0 * 0.5 * (2.0 / 3.0) / (0.5 + 2.0 / 3.0));
        assert_relative_eq!(s[1], 2.0 * 1.0 * (2.0 / 3.0) / (1.0 + 2.0 / 3.0));
        assert_eq!(s[2], 0.0);
    }

    #[test]
    fn cutoff_examples() {
        let scores: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
        assert_eq!(percentile_cutoffs(&scores, &[0.5]), vec![0.6]);
        assert_eq!(percentile_cutoffs(&[0.3], &[0.2, 0.7]), vec![0.3, 0.3]);
        let flat = vec![0.4; 20];
        assert_eq!(percentile_cutoffs(&flat, &[0.15, 0.5]), vec![0.4, 0.4]);
        // 0.15 * 20 must be rank 3, not 4
        let twenty: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile_cutoffs(&twenty, &[0.15]), vec![18.0]);
    }

    #[test]
    fn degree_examples() {
        assert_eq!(assign_degrees(&[0.9], &[0.6, 0.3]), vec![1]);
        assert_eq!(assign_degrees(&[0.6], &[0.6, 0.3]), vec![1]);
        assert_eq!(assign_degrees(&[0.9, 0.5, 0.1], &[0.6, 0.3]), vec![1, 2, 3]);
    }

    #[test]
    fn smoothing_examples() {
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(&smooth_labels(2, 3, 0.2).distribution, &[0.1, 0.8, 0.1]));
        assert!(close(&smooth_labels(1, 3, 0.2).distribution, &[0.8, 0.2, 0.0]));
        assert_eq!(smooth_labels(3, 3, 0.0).distribution, vec![0.0, 0.0, 1.0]);
        let u = smooth_with(SmoothingKind::Uniform, 1, 4, 0.3).distribution;
        assert!(close(&u, &[0.7, 0.1, 0.1, 0.1]));
    }

    #[test]
    fn greedy_search_examples() {
        let grid: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
        let rows = greedy_threshold_search(|p| -(p[0] - 0.5).abs(), &grid, 2).unwrap();
        assert_eq!(rows.len(), 1);
        assert_relative_eq!(rows[0].percentiles[0], 0.5);

        // peaked at the pair {0.2, 0.6}; the L=2 stage sees 0.6 as best
        let target = [0.2, 0.6];
        let eval = |p: &[f64]| -> f64 {
            match p.len() {
                1 => -(p[0] - 0.6).abs(),
                _ => -p.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum::<f64>(),
            }
        };
        let rows = greedy_threshold_search(eval, &grid, 3).unwrap();
        assert_relative_eq!(rows[0].percentiles[0], 0.6);
        // exhaustive oracle over pairs containing 0.6
        let mut best = (f64::NEG_INFINITY, 0.0);
        for &q in grid.iter().filter(|&&q| q != 0.6) {
            let mut pair = [q, 0.6];
            pair.sort_by(f64::total_cmp);
            let s = eval(&pair);
            if s > best.0 {
                best = (s, q);
            }
        }
        assert_relative_eq!(best.1, 0.2);
        assert_eq!(rows[1].percentiles.len(), 2);
        assert_relative_eq!(rows[1].percentiles[0], 0.2);
        assert_relative_eq!(rows[1].percentiles[1], 0.6);

        assert!(matches!(
            greedy_threshold_search(|_| 0.0, &[0.5], 3),
            Err(Error::InsufficientGrid { .. })
        ));
        // ties prefer the smaller fraction
        let rows = greedy_threshold_search(|_| 1.0, &grid, 2).unwrap();
        assert_relative_eq!(rows[0].percentiles[0], 0.1);
    }

    #[test]
    fn stats_on_single_document_and_positions() {
        let docs: Vec<RawDocument> = (0..10)
            .map(|i| {
                RawDocument::new(
                    format!("d{i}"),
                    format!("Key fact number {i} here. Filler words go on. More filler text appears."),
                    format!("key fact number {i} here"),
                )
            })
            .collect();
        let (labeled, spec) = label_corpus(&docs, &DEFAULT_PERCENTILES).unwrap();
        let report = salience_stats(&labeled, &spec);
        assert_eq!(report.degree1_by_position[0], 10);
        assert!(report.degree1_by_position.iter().skip(1).all(|&c| c == 0));

        let single = salience_stats(&labeled[..1], &spec);
        assert_eq!(single.per_document[0], single.degree_counts);
    }

    #[test]
    fn missing_reference_is_reported() {
        let docs = vec![RawDocument::new("x", "A b c.", "")];
        assert!(matches!(label_corpus(&docs, &DEFAULT_PERCENTILES), Err(Error::MissingReference(id)) if id == "x"));
    }

    proptest! {
        #[test]
        fn smoothing_normalized(l in 2usize..7, gold_seed in 0usize..100, beta in 0.0f64..0.99) {
            let gold = gold_seed % l + 1;
            for kind in [SmoothingKind::Adjacent, SmoothingKind::Uniform] {
                let t = smooth_with(kind, gold, l, beta);
                prop_assert!((t.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(t.distribution.iter().all(|&x| x >= 0.0));
                if beta < 0.5 {
                    let argmax = t.distribution.iter().enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                    prop_assert_eq!(argmax + 1, gold);
                }
            }
        }

        #[test]
        fn labeling_invariant_under_monotone_transform(
            scores in prop::collection::vec(0.0f64..1.0, 1..60),
            p1 in 0.05f64..0.45, gap in 0.05f64..0.5,
        ) {
            let pct = [p1, p1 + gap];
            let base = assign_degrees(&scores, &percentile_cutoffs(&scores, &pct));
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            let again = assign_degrees(&warped, &percentile_cutoffs(&warped, &pct));
            prop_assert_eq!(base, again);
        }

        #[test]
        fn degrees_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, c1 in 0.0f64..1.0, c2 in 0.0f64..1.0) {
            let cutoffs = [c1.max(c2), c1.min(c2)];
            let (lo, hi) = (a.min(b), a.max(b));
            let d = assign_degrees(&[lo, hi], &cutoffs);
            prop_assert!(d[1] <= d[0]);
        }

        #[test]
        fn greedy_l2_attains_grid_max(values in prop::collection::vec(-10.0f64..10.0, 19)) {
            let grid = default_grid();
            let lookup = |p: &[f64]| values[(p[0] / 0.05).round() as usize - 1];
            let rows = greedy_threshold_search(lookup, &grid, 2).unwrap();
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(rows[0].score, max);
        }
    }
}
