//! Oracle evaluation of a policy checkpoint on the dev split: greedy decode
//! every source, then measure coverage, length, repetition, gate pass rate,
//! n-gram overlap with the references, and a composite score that mirrors
//! the reward weights.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::corpus::{Lexicon, ParallelExample};
use crate::error::{Result, SemrlError};
use crate::policy::ToyPolicy;
use crate::reward::{language_gate, repeated_ngram_ratio, GateRules, RewardConfig, TokenClassifier};
use crate::scorers::oracle_coverage;

/// Weight of the length-excess term in the composite metric; mirrors the
/// reward's length weight.
const COMPOSITE_LEN_WEIGHT: f64 = 0.2;
/// Weight of the repetition term in the composite metric.
const COMPOSITE_REP_WEIGHT: f64 = 0.05;

/// Dev-split metrics for one policy checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean decoded length in tokens.
    pub mean_length: f64,
    /// Fraction of decodes passing the language gate.
    pub gate_pass_rate: f64,
    /// Mean oracle concept coverage.
    pub mean_coverage: f64,
    /// Mean repeated n-gram occurrence ratio.
    pub mean_repetition_ratio: f64,
    /// Corpus-level modified n-gram precision (n up to 4) against the
    /// references, with a brevity penalty.
    pub ngram_overlap: f64,
    /// mean_coverage minus weighted length excess and repetition terms.
    pub composite: f64,
}

/// One greedy decode with its per-example measurements.
#[derive(Debug, Clone)]
pub struct DecodedExample {
    pub tokens: Vec<String>,
    pub coverage: f64,
    pub gate: bool,
    pub rep_ratio: f64,
}

fn decode_one(
    policy: &ToyPolicy,
    ex: &ParallelExample,
    lexicon: &Lexicon,
    rules: &GateRules,
    rep_ngram: usize,
) -> Result<DecodedExample> {
    let tokens = policy.greedy_decode(&ex.source);
    let coverage = oracle_coverage(&ex.source, &tokens, lexicon);
    let gate = language_gate(&tokens, rules);
    let rep_ratio = repeated_ngram_ratio(&tokens, rep_ngram);
    Ok(DecodedExample {
        tokens,
        coverage,
        gate,
        rep_ratio,
    })
}

/// Greedy-decode an entire split.
pub fn decode_split(
    policy: &ToyPolicy,
    split: &[ParallelExample],
    lexicon: &Lexicon,
    reward_cfg: &RewardConfig,
) -> Result<Vec<DecodedExample>> {
    if split.is_empty() {
        return Err(SemrlError::InvalidArgument(
            "evaluation needs a non-empty split".into(),
        ));
    }
    let rules = GateRules::new(TokenClassifier::from_lexicon(lexicon), reward_cfg);
    split
        .iter()
        .map(|ex| decode_one(policy, ex, lexicon, &rules, reward_cfg.rep_ngram))
        .collect()
}

fn aggregate(outputs: &[DecodedExample], split: &[ParallelExample]) -> Metrics {
    let n = outputs.len() as f64;
    let mean_length = outputs.iter().map(|o| o.tokens.len() as f64).sum::<f64>() / n;
    let gate_pass_rate = outputs.iter().filter(|o| o.gate).count() as f64 / n;
    let mean_coverage = outputs.iter().map(|o| o.coverage).sum::<f64>() / n;
    let mean_repetition_ratio = outputs.iter().map(|o| o.rep_ratio).sum::<f64>() / n;
    let candidates: Vec<&[String]> = outputs.iter().map(|o| o.tokens.as_slice()).collect();
    let references: Vec<&[String]> = split
        .iter()
        .map(|ex| ex.reference.tokens.as_slice())
        .collect();
    let ngram = ngram_overlap(&candidates, &references);
    let gold_mean_length =
        references.iter().map(|r| r.len() as f64).sum::<f64>() / references.len() as f64;
    let len_excess = if gold_mean_length > 0.0 {
        (mean_length / gold_mean_length - 1.0).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let composite = mean_coverage
        - COMPOSITE_LEN_WEIGHT * len_excess
        - COMPOSITE_REP_WEIGHT * mean_repetition_ratio;
    Metrics {
        mean_length,
        gate_pass_rate,
        mean_coverage,
        mean_repetition_ratio,
        ngram_overlap: ngram,
        composite,
    }
}

/// Greedy-decode the split and measure it.
pub fn evaluate(
    policy: &ToyPolicy,
    split: &[ParallelExample],
    lexicon: &Lexicon,
    reward_cfg: &RewardConfig,
) -> Result<Metrics> {
    let outputs = decode_split(policy, split, lexicon, reward_cfg)?;
    Ok(aggregate(&outputs, split))
}

/// Metrics of the gold references themselves, treated as if they were
/// decodes. Coverage and overlap are 1 by construction.
pub fn gold_metrics(
    split: &[ParallelExample],
    lexicon: &Lexicon,
    reward_cfg: &RewardConfig,
) -> Result<Metrics> {
    if split.is_empty() {
        return Err(SemrlError::InvalidArgument(
            "evaluation needs a non-empty split".into(),
        ));
    }
    let rules = GateRules::new(TokenClassifier::from_lexicon(lexicon), reward_cfg);
    let outputs: Vec<DecodedExample> = split
        .iter()
        .map(|ex| {
            let tokens = ex.reference.tokens.clone();
            let coverage = oracle_coverage(&ex.source, &tokens, lexicon);
            let gate = language_gate(&tokens, &rules);
            let rep_ratio = repeated_ngram_ratio(&tokens, reward_cfg.rep_ngram);
            DecodedExample {
                tokens,
                coverage,
                gate,
                rep_ratio,
            }
        })
        .collect();
    Ok(aggregate(&outputs, split))
}

/// Corpus-level modified n-gram precision for n = 1..=4 with a brevity
/// penalty: counts of each candidate n-gram are clipped to the reference's
/// count, pooled over the corpus, and the geometric mean over n is scaled by
/// exp(1 - r/c) when the candidate corpus is shorter than the reference
/// corpus. Levels whose reference denominator is zero are skipped; a zero
/// numerator at any used level gives 0.
pub fn ngram_overlap(candidates: &[&[String]], references: &[&[String]]) -> f64 {
    assert_eq!(
        candidates.len(),
        references.len(),
        "overlap needs aligned candidate/reference lists"
    );
    let total_cand: usize = candidates.iter().map(|c| c.len()).sum();
    let total_ref: usize = references.iter().map(|r| r.len()).sum();
    if total_cand == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut levels = 0usize;
    for n in 1..=4usize {
        let mut num = 0usize;
        let mut den = 0usize;
        for (cand, reference) in candidates.iter().zip(references) {
            if cand.len() < n {
                continue;
            }
            den += cand.len() - n + 1;
            let mut ref_counts: HashMap<&[String], usize> = HashMap::new();
            if reference.len() >= n {
                for w in reference.windows(n) {
                    *ref_counts.entry(w).or_insert(0) += 1;
                }
            }
            let mut cand_counts: HashMap<&[String], usize> = HashMap::new();
            for w in cand.windows(n) {
                *cand_counts.entry(w).or_insert(0) += 1;
            }
            for (gram, count) in cand_counts {
                num += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
        }
        if den == 0 {
            continue;
        }
        if num == 0 {
            return 0.0;
        }
        log_sum += (num as f64 / den as f64).ln();
        levels += 1;
    }
    if levels == 0 {
        return 0.0;
    }
    let precision = (log_sum / levels as f64).exp();
    let bp = if total_cand < total_ref {
        (1.0 - total_ref as f64 / total_cand as f64).exp()
    } else {
        1.0
    };
    precision * bp
}

/// Pairwise comparison outcome: fraction of dev examples where the first
/// policy's per-example composite strictly exceeds the second's, with exact
/// ties reported separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Winrate {
    pub win_fraction: f64,
    pub tie_fraction: f64,
}

fn example_composite(out: &DecodedExample, gold_len: usize) -> f64 {
    let len_excess = if gold_len > 0 {
        (out.tokens.len() as f64 / gold_len as f64 - 1.0).clamp(0.0, 1.0)
    } else {
        0.0
    };
    out.coverage - COMPOSITE_LEN_WEIGHT * len_excess - COMPOSITE_REP_WEIGHT * out.rep_ratio
}

/// Compare two policies example by example on the same split.
pub fn pairwise_winrate(
    policy_a: &ToyPolicy,
    policy_b: &ToyPolicy,
    split: &[ParallelExample],
    lexicon: &Lexicon,
    reward_cfg: &RewardConfig,
) -> Result<Winrate> {
    let a = decode_split(policy_a, split, lexicon, reward_cfg)?;
    let b = decode_split(policy_b, split, lexicon, reward_cfg)?;
    let mut wins = 0usize;
    let mut ties = 0usize;
    for ((oa, ob), ex) in a.iter().zip(&b).zip(split) {
        let ca = example_composite(oa, ex.reference.tokens.len());
        let cb = example_composite(ob, ex.reference.tokens.len());
        if ca > cb {
            wins += 1;
        } else if ca == cb {
            ties += 1;
        }
    }
    let n = split.len() as f64;
    Ok(Winrate {
        win_fraction: wins as f64 / n,
        tie_fraction: ties as f64 / n,
    })
}
