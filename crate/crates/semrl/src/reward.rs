//! Safeguarded reward: hard language gate, batch-relative length penalty,
//! repetition penalty, a reference-length variant, and their combination.
//!
//! Semantic alignment is the only graded positive signal; everything else is
//! a subtracted penalty or a hard zero. Per candidate i with semantic score
//! `sem_i`, the shaped score is
//!
//! ```text
//! s_i = sem_i − lambda_len · p_len_i − lambda_rep · p_rep_i
//! r_i = gate_i ? max(s_i, 0) : 0
//! ```
//!
//! The length penalty is relative to the scoring batch: it starts at
//! `len_start_mult` times the batch median length and ramps linearly to 1 at
//! `len_full_mult` times the median. The repetition penalty ramps with the
//! repeated n-gram ratio above a threshold. The reference-length variant
//! instead penalizes deviation from a source-proportional target length.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::Lexicon;
use crate::error::{Result, SemrlError};

/// Which length penalty the engine applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthMode {
    /// Ramp relative to the batch median length.
    BatchRelative,
    /// Band around a source-proportional target length.
    RefLen,
    /// No length penalty.
    None,
}

/// Which candidates share a median when the batch-relative ramp runs inside
/// grouped sampling: the full reward batch, or each group separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianScope {
    RewardBatch,
    Group,
}

/// All reward hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Weight of the length penalty in the shaped score.
    pub lambda_len: f64,
    /// Weight of the repetition penalty in the shaped score.
    pub lambda_rep: f64,
    /// Length ramp starts at this multiple of the batch median.
    pub len_start_mult: f64,
    /// Length ramp saturates at this multiple of the batch median.
    pub len_full_mult: f64,
    /// n-gram order for the repetition penalty.
    pub rep_ngram: usize,
    /// Repeated n-gram ratio at which the repetition penalty activates.
    pub rep_threshold: f64,
    /// Minimum target-class fraction for the gate to pass.
    pub gate_min_target_frac: f64,
    /// Maximum neutral-class fraction the gate tolerates.
    pub gate_max_neutral_frac: f64,
    pub length_mode: LengthMode,
    /// Target length as a fraction of source length (RefLen mode).
    pub ref_len_ratio: f64,
    /// Tolerance band as a fraction of the target length (RefLen mode).
    pub ref_len_tolerance: f64,
    /// Median scope for batch-relative penalties under grouped sampling.
    pub median_scope: MedianScope,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            lambda_len: 0.20,
            lambda_rep: 0.05,
            len_start_mult: 2.5,
            len_full_mult: 5.0,
            rep_ngram: 4,
            rep_threshold: 0.15,
            gate_min_target_frac: 0.70,
            gate_max_neutral_frac: 0.10,
            length_mode: LengthMode::BatchRelative,
            ref_len_ratio: 0.5,
            ref_len_tolerance: 0.25,
            median_scope: MedianScope::RewardBatch,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.len_start_mult > 0.0 && self.len_start_mult < self.len_full_mult) {
            return Err(SemrlError::Config(format!(
                "need 0 < len_start_mult < len_full_mult, got {} and {}",
                self.len_start_mult, self.len_full_mult
            )));
        }
        if self.lambda_len < 0.0 || self.lambda_rep < 0.0 {
            return Err(SemrlError::Config("penalty weights must be >= 0".into()));
        }
        if self.rep_ngram == 0 {
            return Err(SemrlError::Config("rep_ngram must be >= 1".into()));
        }
        for (name, v) in [
            ("rep_threshold", self.rep_threshold),
            ("gate_min_target_frac", self.gate_min_target_frac),
            ("gate_max_neutral_frac", self.gate_max_neutral_frac),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SemrlError::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.rep_threshold >= 1.0 {
            return Err(SemrlError::Config(
                "rep_threshold must be < 1 (ramp would divide by zero)".into(),
            ));
        }
        if self.ref_len_ratio <= 0.0 || self.ref_len_tolerance < 0.0 {
            return Err(SemrlError::Config(
                "ref_len_ratio must be > 0 and ref_len_tolerance >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Language class of one scoring unit (token or character).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenClass {
    Target,
    Source,
    Neutral,
}

/// Assigns scoring units to language classes. Inventory and prefix
/// classifiers work on whole tokens; the script classifier works on
/// characters, ignoring non-letters.
#[derive(Debug, Clone)]
pub enum TokenClassifier {
    /// Membership in explicit token inventories; unknown tokens are neutral.
    Inventory {
        target: HashSet<String>,
        source: HashSet<String>,
        neutral: HashSet<String>,
    },
    /// First-character prefixes, matching the synthetic lexicon's rendering;
    /// unknown prefixes are neutral.
    Prefix {
        target: String,
        source: String,
        neutral: String,
    },
    /// Unicode script blocks for real text: the target script (Thai),
    /// CJK ideographs as the source class, Latin letters as neutral.
    /// Non-letter characters and unlisted scripts carry no class.
    UnicodeScript,
}

impl TokenClassifier {
    /// Inventory classifier over a lexicon: target lexemes are target class,
    /// source lexemes and fillers are source class, neutral symbols neutral.
    pub fn from_lexicon(lexicon: &Lexicon) -> TokenClassifier {
        let target = lexicon.target_lexemes().iter().cloned().collect();
        let source = (0..lexicon.n_concepts())
            .map(|c| lexicon.source_lexeme(c).to_string())
            .chain(lexicon.source_fillers().iter().cloned())
            .collect();
        let neutral = lexicon.neutral_symbols().iter().cloned().collect();
        TokenClassifier::Inventory {
            target,
            source,
            neutral,
        }
    }

    /// Class counts (target, source, neutral) over a candidate.
    pub fn count_units(&self, tokens: &[String]) -> (usize, usize, usize) {
        let (mut t, mut s, mut n) = (0usize, 0usize, 0usize);
        match self {
            TokenClassifier::Inventory {
                target,
                source,
                neutral: _,
            } => {
                for tok in tokens {
                    if target.contains(tok) {
                        t += 1;
                    } else if source.contains(tok) {
                        s += 1;
                    } else {
                        n += 1;
                    }
                }
            }
            TokenClassifier::Prefix {
                target,
                source,
                neutral: _,
            } => {
                for tok in tokens {
                    if tok.starts_with(target.as_str()) {
                        t += 1;
                    } else if tok.starts_with(source.as_str()) {
                        s += 1;
                    } else {
                        n += 1;
                    }
                }
            }
            TokenClassifier::UnicodeScript => {
                for tok in tokens {
                    for ch in tok.chars() {
                        match classify_script_char(ch) {
                            Some(TokenClass::Target) => t += 1,
                            Some(TokenClass::Source) => s += 1,
                            Some(TokenClass::Neutral) => n += 1,
                            None => {}
                        }
                    }
                }
            }
        }
        (t, s, n)
    }
}

fn classify_script_char(ch: char) -> Option<TokenClass> {
    let cp = ch as u32;
    match cp {
        // Thai block
        0x0E00..=0x0E7F => Some(TokenClass::Target),
        // CJK ideographs: unified, extension A, compatibility
        0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0xF900..=0xFAFF => Some(TokenClass::Source),
        _ if ch.is_ascii_alphabetic() => Some(TokenClass::Neutral),
        // Latin-1 supplement and Latin Extended-A/B letters
        0x00C0..=0x024F if ch.is_alphabetic() => Some(TokenClass::Neutral),
        _ => None,
    }
}

/// Gate thresholds plus a unit classifier.
#[derive(Debug, Clone)]
pub struct GateRules {
    pub classifier: TokenClassifier,
    pub min_target_frac: f64,
    pub max_neutral_frac: f64,
}

impl GateRules {
    pub fn new(classifier: TokenClassifier, cfg: &RewardConfig) -> GateRules {
        GateRules {
            classifier,
            min_target_frac: cfg.gate_min_target_frac,
            max_neutral_frac: cfg.gate_max_neutral_frac,
        }
    }
}

/// Hard language gate. Passes iff the target-class fraction meets the
/// minimum, not a single source-class unit appears, and the neutral-class
/// fraction stays under the cap. An empty candidate (or one with no
/// classifiable units) fails.
pub fn language_gate(candidate: &[String], rules: &GateRules) -> bool {
    let (t, s, n) = rules.classifier.count_units(candidate);
    let total = t + s + n;
    if total == 0 {
        return false;
    }
    if s > 0 {
        return false;
    }
    let total = total as f64;
    t as f64 / total >= rules.min_target_frac && n as f64 / total <= rules.max_neutral_frac
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Batch-relative length penalties. Zero up to `len_start_mult` times the
/// batch median, ramping linearly to 1 at `len_full_mult` times the median.
/// A zero median (all-empty batch) yields all-zero penalties.
pub fn length_penalties(lengths: &[f64], cfg: &RewardConfig) -> Result<Vec<f64>> {
    if lengths.is_empty() {
        return Err(SemrlError::InvalidArgument(
            "length penalty needs a non-empty batch".into(),
        ));
    }
    if lengths.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(SemrlError::InvalidArgument(
            "lengths must be finite and non-negative".into(),
        ));
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = median(&sorted);
    if m <= 0.0 {
        return Ok(vec![0.0; lengths.len()]);
    }
    let start = cfg.len_start_mult * m;
    let full = cfg.len_full_mult * m;
    Ok(lengths
        .iter()
        .map(|&l| ((l - start) / (full - start)).clamp(0.0, 1.0))
        .collect())
}

/// Fraction of n-gram occurrences whose n-gram already appeared at an
/// earlier position. Zero when the candidate is shorter than n.
pub fn repeated_ngram_ratio(tokens: &[String], n: usize) -> f64 {
    if n == 0 || tokens.len() < n {
        return 0.0;
    }
    let occurrences = tokens.len() - n + 1;
    let mut seen: HashSet<&[String]> = HashSet::with_capacity(occurrences);
    let mut repeated = 0usize;
    for window in tokens.windows(n) {
        if !seen.insert(window) {
            repeated += 1;
        }
    }
    repeated as f64 / occurrences as f64
}

/// Repetition penalty: linear ramp of the repeated n-gram ratio above the
/// activation threshold, normalized to [0,1].
pub fn repetition_penalty(tokens: &[String], cfg: &RewardConfig) -> f64 {
    let ratio = repeated_ngram_ratio(tokens, cfg.rep_ngram);
    ((ratio - cfg.rep_threshold) / (1.0 - cfg.rep_threshold)).clamp(0.0, 1.0)
}

/// Source-conditioned length penalty: zero inside a tolerance band around
/// `ref_len_ratio · source_len`, then growing linearly with the deviation in
/// units of the target length, capped at 1.
pub fn ref_length_penalty(candidate_len: f64, source_len: f64, cfg: &RewardConfig) -> Result<f64> {
    if !(source_len > 0.0) || !source_len.is_finite() {
        return Err(SemrlError::InvalidArgument(format!(
            "source_len must be positive and finite, got {source_len}"
        )));
    }
    let target = cfg.ref_len_ratio * source_len;
    let deviation = (candidate_len - target).abs();
    Ok(((deviation - cfg.ref_len_tolerance * target) / target).clamp(0.0, 1.0))
}

/// Per-candidate reward decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub gate: bool,
    pub sem: f64,
    pub p_len: f64,
    pub p_rep: f64,
    pub shaped: f64,
    #[serde(rename = "final")]
    pub final_reward: f64,
}

/// One scored candidate: its tokens and its semantic score.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardItem {
    pub tokens: Vec<String>,
    pub sem: f64,
}

/// A batch of candidates awaiting reward combination, with lengths measured
/// in scoring-tokenizer units (token count for the synthetic world; any
/// other measurement can be injected via [`RewardBatch::with_lengths`]).
#[derive(Debug, Clone, PartialEq)]
pub struct RewardBatch {
    pub items: Vec<RewardItem>,
    pub lengths: Vec<f64>,
}

impl RewardBatch {
    /// Batch with token-count lengths.
    pub fn new(items: Vec<RewardItem>) -> RewardBatch {
        let lengths = items.iter().map(|it| it.tokens.len() as f64).collect();
        RewardBatch { items, lengths }
    }

    /// Batch with externally measured lengths.
    pub fn with_lengths(items: Vec<RewardItem>, lengths: Vec<f64>) -> Result<RewardBatch> {
        if items.len() != lengths.len() {
            return Err(SemrlError::InvalidArgument(format!(
                "{} items but {} lengths",
                items.len(),
                lengths.len()
            )));
        }
        if lengths.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(SemrlError::InvalidArgument(
                "lengths must be finite and non-negative".into(),
            ));
        }
        Ok(RewardBatch { items, lengths })
    }
}

/// Combines precomputed gate decisions and penalties into final rewards.
pub fn combine(
    batch: &RewardBatch,
    gates: &[bool],
    p_lens: &[f64],
    p_reps: &[f64],
    cfg: &RewardConfig,
) -> Result<Vec<RewardBreakdown>> {
    let n = batch.items.len();
    if gates.len() != n || p_lens.len() != n || p_reps.len() != n {
        return Err(SemrlError::InvalidArgument(format!(
            "combine length mismatch: {} items, {} gates, {} p_lens, {} p_reps",
            n,
            gates.len(),
            p_lens.len(),
            p_reps.len()
        )));
    }
    Ok((0..n)
        .map(|i| {
            let sem = batch.items[i].sem;
            let shaped = sem - cfg.lambda_len * p_lens[i] - cfg.lambda_rep * p_reps[i];
            let final_reward = if gates[i] { shaped.max(0.0) } else { 0.0 };
            RewardBreakdown {
                gate: gates[i],
                sem,
                p_len: p_lens[i],
                p_rep: p_reps[i],
                shaped,
                final_reward,
            }
        })
        .collect())
}

/// Full reward pass over one batch: computes gates, the configured length
/// penalty, repetition penalties, and the combination. Gate failures still
/// contribute their lengths to the batch median. `source_lens` is consulted
/// only in `ref_len` mode, where it must supply one length per candidate.
pub fn score_rewards(
    batch: &RewardBatch,
    rules: &GateRules,
    cfg: &RewardConfig,
    source_lens: Option<&[f64]>,
) -> Result<Vec<RewardBreakdown>> {
    let gates: Vec<bool> = batch
        .items
        .iter()
        .map(|it| language_gate(&it.tokens, rules))
        .collect();
    let p_lens: Vec<f64> = match cfg.length_mode {
        LengthMode::BatchRelative => length_penalties(&batch.lengths, cfg)?,
        LengthMode::None => vec![0.0; batch.items.len()],
        LengthMode::RefLen => {
            let source_lens = source_lens.ok_or_else(|| {
                SemrlError::InvalidArgument("ref_len mode needs source lengths".into())
            })?;
            if source_lens.len() != batch.items.len() {
                return Err(SemrlError::InvalidArgument(format!(
                    "{} source lengths for {} candidates",
                    source_lens.len(),
                    batch.items.len()
                )));
            }
            batch
                .lengths
                .iter()
                .zip(source_lens)
                .map(|(&l, &s)| ref_length_penalty(l, s, cfg))
                .collect::<Result<Vec<f64>>>()?
        }
    };
    let p_reps: Vec<f64> = batch
        .items
        .iter()
        .map(|it| repetition_penalty(&it.tokens, cfg))
        .collect();
    combine(batch, &gates, &p_lens, &p_reps, cfg)
}
