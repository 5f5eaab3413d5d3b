//! Semantic reward signals.
//!
//! Four scorers share one interface: a reranker-style yes/no softmax over
//! judgment logits, an exact coverage oracle for the synthetic task, a
//! contrastively trained toy embedder, and an HTTP client for an external
//! reranker service. All of them map (source text, candidate text) pairs to
//! scores in [0,1].

mod embedding;
mod remote;

pub use embedding::{embedding_score, train_contrastive, ContrastiveConfig, Embedder};
pub use remote::{remote_rerank_batch, RemoteConfig, RemoteReranker};

use serde::{Deserialize, Serialize};

use crate::corpus::{Lexicon, SourceDoc};
use crate::error::{Result, SemrlError};

/// Scores batches of (source text, candidate text) pairs. Outputs are in
/// [0,1], same length and order as the input.
pub trait SemanticScorer {
    fn score_batch(&self, pairs: &[(String, String)]) -> Result<Vec<f64>>;

    /// Short name for telemetry.
    fn name(&self) -> &'static str;
}

/// Yes/no logits returned by a relevance judge for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankJudgment {
    pub z_yes: f64,
    pub z_no: f64,
}

/// Normalized probability of the affirmative judgment:
/// exp(z_yes) / (exp(z_yes) + exp(z_no)), evaluated in the shifted form so
/// large logits cannot overflow. Equals the logistic function of
/// z_yes − z_no.
pub fn reranker_score(j: &RerankJudgment) -> Result<f64> {
    if !j.z_yes.is_finite() || !j.z_no.is_finite() {
        return Err(SemrlError::InvalidArgument(format!(
            "non-finite judgment logits ({}, {})",
            j.z_yes, j.z_no
        )));
    }
    let m = j.z_yes.max(j.z_no);
    let ey = (j.z_yes - m).exp();
    let en = (j.z_no - m).exp();
    Ok(ey / (ey + en))
}

/// Fraction of the source's concepts whose target lexeme occurs in the
/// candidate. Zero when the source mentions no concepts. Monotone under
/// candidate extension, order- and duplication-insensitive.
pub fn oracle_coverage(source: &SourceDoc, candidate: &[String], lexicon: &Lexicon) -> f64 {
    coverage_of(&source.concept_set, candidate, lexicon)
}

fn coverage_of(concept_set: &[usize], candidate: &[String], lexicon: &Lexicon) -> f64 {
    if concept_set.is_empty() {
        return 0.0;
    }
    let covered: std::collections::HashSet<usize> = candidate
        .iter()
        .filter_map(|t| lexicon.concept_of_target(t))
        .filter(|c| concept_set.binary_search(c).is_ok())
        .collect();
    covered.len() as f64 / concept_set.len() as f64
}

/// Ground-truth semantic scorer for the synthetic world: oracle coverage
/// over whitespace-tokenized texts.
#[derive(Debug, Clone)]
pub struct OracleScorer {
    lexicon: Lexicon,
}

impl OracleScorer {
    pub fn new(lexicon: Lexicon) -> OracleScorer {
        OracleScorer { lexicon }
    }
}

impl SemanticScorer for OracleScorer {
    fn score_batch(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        Ok(pairs
            .iter()
            .map(|(source, candidate)| {
                let source_tokens: Vec<String> =
                    source.split_whitespace().map(|t| t.to_string()).collect();
                let candidate_tokens: Vec<String> =
                    candidate.split_whitespace().map(|t| t.to_string()).collect();
                let concept_set = self.lexicon.concept_set_of(&source_tokens);
                coverage_of(&concept_set, &candidate_tokens, &self.lexicon)
            })
            .collect())
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}

/// How cleanly a scorer separates matched from mismatched pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationStats {
    pub matched_scores: Vec<f64>,
    pub mismatched_scores: Vec<f64>,
    /// 5th and 95th percentile over all scores (both sets pooled), linear
    /// interpolation between order statistics.
    pub score_range_p5_p95: (f64, f64),
    /// Probability that a random matched score exceeds a random mismatched
    /// score, ties counting one half.
    pub separation_auc: f64,
}

/// Linear-interpolation percentile (p in [0,100]) of a non-empty sample.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Pairwise AUC: matched vs mismatched, ties count 0.5.
pub fn separation_auc(matched: &[f64], mismatched: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &m in matched {
        for &mm in mismatched {
            if m > mm {
                wins += 1.0;
            } else if m == mm {
                wins += 0.5;
            }
        }
    }
    wins / (matched.len() as f64 * mismatched.len() as f64)
}

/// Scores both pair sets and summarizes how separable they are.
pub fn discrimination_report(
    scorer: &dyn SemanticScorer,
    matched: &[(String, String)],
    mismatched: &[(String, String)],
) -> Result<DiscriminationStats> {
    if matched.is_empty() || mismatched.is_empty() {
        return Err(SemrlError::InvalidArgument(
            "discrimination report needs non-empty matched and mismatched sets".into(),
        ));
    }
    let matched_scores = scorer.score_batch(matched)?;
    let mismatched_scores = scorer.score_batch(mismatched)?;
    let mut pooled = matched_scores.clone();
    pooled.extend_from_slice(&mismatched_scores);
    let range = (percentile(&pooled, 5.0), percentile(&pooled, 95.0));
    let auc = separation_auc(&matched_scores, &mismatched_scores);
    Ok(DiscriminationStats {
        matched_scores,
        mismatched_scores,
        score_range_p5_p95: range,
        separation_auc: auc,
    })
}
