//! Corpus-level scoring of generated summaries: mean ROUGE F1, summary
//! lengths, and ROUGE within equal-size subsets ranked by how extractive
//! the reference is.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{metric_tokens, RawDocument};
use crate::error::{Error, Result};
use crate::metrics::{fragment_stats, rouge_scores};

/// A generated summary as read back from a generation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub summary: String,
}

pub fn load_candidates(path: impl AsRef<Path>) -> Result<Vec<Candidate>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let c: Candidate = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(c);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocScore {
    pub id: String,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub generated_len: usize,
    pub reference_len: usize,
    /// Extractive fragment density of the reference against its article.
    pub reference_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub name: String,
    pub n_documents: usize,
    pub density_min: f64,
    pub density_max: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_documents: usize,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub avg_generated_len: f64,
    pub avg_reference_len: f64,
    /// Low, medium and high density thirds.
    pub density_splits: Vec<SubsetScore>,
    pub documents: Vec<DocScore>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Splits `n` ranked items into three contiguous groups whose sizes differ
/// by at most one; earlier groups take the remainder.
pub fn equal_thirds(n: usize) -> [std::ops::Range<usize>; 3] {
    let base = n / 3;
    let extra = n % 3;
    let a = base + usize::from(extra > 0);
    let b = a + base + usize::from(extra > 1);
    [0..a, a..b, b..n]
}

fn subset(name: &str, docs: &[&DocScore]) -> SubsetScore {
    SubsetScore {
        name: name.to_string(),
        n_documents: docs.len(),
        density_min: docs.first().map_or(0.0, |d| d.reference_density),
        density_max: docs.last().map_or(0.0, |d| d.reference_density),
        rouge1: mean(docs.iter().map(|d| d.rouge1)),
        rouge2: mean(docs.iter().map(|d| d.rouge2)),
        rouge_l: mean(docs.iter().map(|d| d.rouge_l)),
    }
}

/// Scores candidates against reference documents, matched by id. Both sides
/// must hold exactly the same ids.
pub fn evaluate(candidates: &[Candidate], references: &[RawDocument]) -> Result<EvalReport> {
    let refs: HashMap<&str, &RawDocument> = references.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut seen = HashSet::new();
    for c in candidates {
        if !refs.contains_key(c.id.as_str()) || !seen.insert(c.id.as_str()) {
            return Err(Error::IdMismatch(c.id.clone()));
        }
    }
    if let Some(missing) = references.iter().find(|d| !seen.contains(d.id.as_str())) {
        return Err(Error::IdMismatch(missing.id.clone()));
    }

    let mut documents = Vec::with_capacity(candidates.len());
    for c in candidates {
        let doc = refs[c.id.as_str()];
        let reference = metric_tokens(&doc.summary);
        if reference.is_empty() {
            return Err(Error::MissingReference(doc.id.clone()));
        }
        let generated = metric_tokens(&c.summary);
        let r = rouge_scores(&generated, &reference);
        let density = fragment_stats(&metric_tokens(&doc.article), &reference)?.density;
        documents.push(DocScore {
            id: c.id.clone(),
            rouge1: r.rouge1,
            rouge2: r.rouge2,
            rouge_l: r.rouge_l,
            generated_len: generated.len(),
            reference_len: reference.len(),
            reference_density: density,
        });
    }
    documents.sort_by(|a, b| a.id.cmp(&b.id));

    let mut ranked: Vec<&DocScore> = documents.iter().collect();
    ranked.sort_by(|a, b| a.reference_density.total_cmp(&b.reference_density).then(a.id.cmp(&b.id)));
    let density_splits = equal_thirds(ranked.len())
        .into_iter()
        .zip(["low", "medium", "high"])
        .map(|(r, name)| subset(name, &ranked[r]))
        .collect();

    Ok(EvalReport {
        n_documents: documents.len(),
        rouge1: mean(documents.iter().map(|d| d.rouge1)),
        rouge2: mean(documents.iter().map(|d| d.rouge2)),
        rouge_l: mean(documents.iter().map(|d| d.rouge_l)),
        avg_generated_len: mean(documents.iter().map(|d| d.generated_len as f64)),
        avg_reference_len: mean(documents.iter().map(|d| d.reference_len as f64)),
        density_splits,
        documents,
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "documents      {}", self.n_documents)?;
        writeln!(
            f,
            "ROUGE-1/2/L    {:.2} / {:.2} / {:.2}",
            100.0 * self.rouge1,
            100.0 * self.rouge2,
            100.0 * self.rouge_l
        )?;
        writeln!(
            f,
            "avg length     generated {:.1}, reference {:.1}",
            self.avg_generated_len, self.avg_reference_len
        )?;
        writeln!(f, "{:<8} {:>4} {:>17} {:>7} {:>7} {:>7}", "density", "n", "range", "R-1", "R-2", "R-L")?;
        for s in &self.density_splits {
            writeln!(
                f,
                "{:<8} {:>4} {:>8.2}-{:<8.2} {:>7.2} {:>7.2} {:>7.2}",
                s.name,
                s.n_documents,
                s.density_min,
                s.density_max,
                100.0 * s.rouge1,
                100.0 * s.rouge2,
                100.0 * s.rouge_l
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn corpus(n: usize) -> Vec<RawDocument> {
        (0..n)
            .map(|i| {
                // the reference copies a run of i+1 article words, so density grows with i
                let words: Vec<String> = (0..12).map(|w| format!("w{w}")).collect();
                let copied = words[..=i.min(11)].join(" ");
                RawDocument::new(format!("d{i}"), format!("{} .", words.join(" ")), format!("{copied} zz{i} ."))
            })
            .collect()
    }

    fn perfect(docs: &[RawDocument]) -> Vec<Candidate> {
        docs.iter()
            .map(|d| Candidate {
                id: d.id.clone(),
                summary: d.summary.clone(),
            })
            .collect()
    }

    #[test]
    fn identical_summaries_score_one() {
        let docs = corpus(5);
        let r = evaluate(&perfect(&docs), &docs).unwrap();
        assert_eq!((r.rouge1, r.rouge2, r.rouge_l), (1.0, 1.0, 1.0));
        assert_relative_eq!(r.avg_generated_len, r.avg_reference_len);
    }

    #[test]
    fn density_split_is_three_equal_ranked_groups() {
        let docs = corpus(9);
        let r = evaluate(&perfect(&docs), &docs).unwrap();
        let sizes: Vec<usize> = r.density_splits.iter().map(|s| s.n_documents).collect();
        assert_eq!(sizes, vec![3, 3, 3]);
        for w in r.density_splits.windows(2) {
            assert!(w[0].density_max <= w[1].density_min);
        }
        assert_eq!(equal_thirds(10), [0..4, 4..7, 7..10]);
        assert_eq!(equal_thirds(2), [0..1, 1..2, 2..2]);
    }

    #[test]
    fn order_does_not_matter() {
        let docs = corpus(7);
        let mut cands = perfect(&docs);
        cands[2].summary = "w0 nothing else".into();
        let a = evaluate(&cands, &docs).unwrap();
        cands.reverse();
        let mut rev_docs = docs.clone();
        rev_docs.rotate_left(3);
        let b = evaluate(&cands, &rev_docs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_ids_are_rejected() {
        let docs = corpus(3);
        let mut cands = perfect(&docs);
        cands[1].id = "other".into();
        assert!(matches!(evaluate(&cands, &docs), Err(Error::IdMismatch(ref id)) if id == "other"));
        let short = perfect(&docs[..2]);
        assert!(matches!(evaluate(&short, &docs), Err(Error::IdMismatch(ref id)) if id == "d2"));
    }
}
