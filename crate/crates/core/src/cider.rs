//! Consensus captioning metric: TF-IDF weighted n-gram similarity between a
//! candidate caption and its references, averaged over n = 1..max_n and
//! scaled by 10.
//!
//! Two variants are provided. The plain variant scores each n-gram order
//! with the cosine between TF-IDF vectors. The length-penalty variant clips
//! candidate counts at the reference counts and applies a gaussian penalty
//! on the token-length difference (sigma 6), matching the commonly used
//! "-D" formulation.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CiderError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("candidate {0:?} has no references")]
    MissingReference(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiderVariant {
    Plain,
    LengthPenalty,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CiderConfig {
    pub max_n: usize,
    pub variant: CiderVariant,
    /// Gaussian width for the length penalty (length-penalty variant only).
    pub sigma: f64,
    /// Final score scale.
    pub scale: f64,
}

impl Default for CiderConfig {
    fn default() -> Self {
        CiderConfig {
            max_n: 4,
            variant: CiderVariant::Plain,
            sigma: 6.0,
            scale: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CiderReport {
    pub corpus_score: f64,
    pub per_image: BTreeMap<String, f64>,
    pub variant: CiderVariant,
    pub max_n: usize,
}

fn tokenize(s: &str) -> Vec<String> {
    s.to_lowercase().split_whitespace().map(String::from).collect()
}

type NgramCounts = HashMap<Vec<String>, f64>;

fn ngram_counts(tokens: &[String], n: usize) -> NgramCounts {
    let mut counts = NgramCounts::new();
    if tokens.len() >= n && n >= 1 {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0.0) += 1.0;
        }
    }
    counts
}

/// Document frequencies per n-gram order, computed over the reference
/// corpus: the number of images whose reference set contains the n-gram.
struct IdfTable {
    num_images: f64,
    df: Vec<HashMap<Vec<String>, f64>>, // index n-1
}

impl IdfTable {
    fn build(references: &BTreeMap<String, Vec<String>>, max_n: usize) -> Self {
        let mut df = vec![HashMap::new(); max_n];
        for refs in references.values() {
            for n in 1..=max_n {
                let mut seen: std::collections::HashSet<Vec<String>> =
                    std::collections::HashSet::new();
                for r in refs {
                    let toks = tokenize(r);
                    for w in toks.windows(n).filter(|_| toks.len() >= n) {
                        seen.insert(w.to_vec());
                    }
                }
                for g in seen {
                    *df[n - 1].entry(g).or_insert(0.0) += 1.0;
                }
            }
        }
        IdfTable {
            num_images: references.len() as f64,
            df,
        }
    }

    /// log(N / df), with df clipped at 1 for unseen n-grams.
    fn idf(&self, n: usize, gram: &[String]) -> f64 {
        let df = self.df[n - 1].get(gram).copied().unwrap_or(0.0).max(1.0);
        (self.num_images / df).ln()
    }
}

fn tfidf_vec(counts: &NgramCounts, n: usize, idf: &IdfTable) -> NgramCounts {
    counts
        .iter()
        .map(|(g, c)| (g.clone(), c * idf.idf(n, g)))
        .collect()
}

fn norm(v: &NgramCounts) -> f64 {
    v.values().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &NgramCounts, b: &NgramCounts) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small
        .iter()
        .filter_map(|(g, x)| large.get(g).map(|y| x * y))
        .sum()
}

/// Cosine with 0/0 defined as 0.
fn cosine(a: &NgramCounts, b: &NgramCounts) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Clipped, length-penalized similarity used by the length-penalty variant:
/// candidate counts are clipped at the reference counts in the numerator and
/// the whole term is damped by `exp(-delta^2 / (2 sigma^2))` on the token
/// length difference.
fn penalized_sim(
    cand: &NgramCounts,
    refv: &NgramCounts,
    len_cand: usize,
    len_ref: usize,
    sigma: f64,
) -> f64 {
    let nc = norm(cand);
    let nr = norm(refv);
    if nc == 0.0 || nr == 0.0 {
        return 0.0;
    }
    let mut val = 0.0;
    for (g, c) in cand {
        if let Some(r) = refv.get(g) {
            val += c.min(*r) * r;
        }
    }
    let delta = len_cand as f64 - len_ref as f64;
    (val / (nc * nr)) * (-delta * delta / (2.0 * sigma * sigma)).exp()
}

/// Score candidates against their references. Candidate ids must be a subset
/// of reference ids; IDF statistics come from the full reference corpus.
pub fn cider(
    candidates: &BTreeMap<String, String>,
    references: &BTreeMap<String, Vec<String>>,
    cfg: &CiderConfig,
) -> Result<CiderReport, CiderError> {
    if candidates.is_empty() || references.is_empty() {
        return Err(CiderError::EmptyCorpus);
    }
    for id in candidates.keys() {
        if !references.contains_key(id) {
            return Err(CiderError::MissingReference(id.clone()));
        }
    }
    let idf = IdfTable::build(references, cfg.max_n);

    let mut per_image = BTreeMap::new();
    for (id, cand) in candidates {
        let refs = &references[id];
        let cand_tokens = tokenize(cand);
        let mut score = 0.0;
        for n in 1..=cfg.max_n {
            let cand_counts = ngram_counts(&cand_tokens, n);
            let cand_vec = tfidf_vec(&cand_counts, n, &idf);
            let mut acc = 0.0;
            for r in refs {
                let ref_tokens = tokenize(r);
                let ref_counts = ngram_counts(&ref_tokens, n);
                let ref_vec = tfidf_vec(&ref_counts, n, &idf);
                acc += match cfg.variant {
                    CiderVariant::Plain => cosine(&cand_vec, &ref_vec),
                    CiderVariant::LengthPenalty => penalized_sim(
                        &cand_vec,
                        &ref_vec,
                        cand_tokens.len(),
                        ref_tokens.len(),
                        cfg.sigma,
                    ),
                };
            }
            if !refs.is_empty() {
                score += acc / refs.len() as f64;
            }
        }
        per_image.insert(id.clone(), cfg.scale * score / cfg.max_n as f64);
    }

    let corpus_score = per_image.values().sum::<f64>() / per_image.len() as f64;
    Ok(CiderReport {
        corpus_score,
        per_image,
        variant: cfg.variant,
        max_n: cfg.max_n,
    })
}
