//! Synthetic bilingual corpus: lexicon construction and document generation.
//!
//! The task is deliberately tiny. A lexicon maps each abstract concept to one
//! source-language lexeme and one target-language lexeme (disjoint surface
//! vocabularies), plus source-side filler tokens that carry no concept and a
//! small inventory of language-neutral symbols. Documents are bags of concept
//! mentions rendered as source lexemes with optional fillers interleaved; the
//! reference translation renders the distinct concepts, once each, in lexicon
//! order. This gives every pair an exact notion of semantic coverage, which
//! the scorers and the reward engine build on.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SemrlError};
use crate::seeding::{stage_rng, streams};

/// Bilingual dictionary over abstract concepts.
///
/// Concept `k` is named `concepts[k]` and is rendered as `source_lexemes[k]`
/// on the source side and `target_lexemes[k]` on the target side. The source
/// vocabulary additionally contains `source_fillers`, which belong to the
/// source language but carry no concept. `neutral_symbols` belong to neither
/// language. All four surface vocabularies are pairwise disjoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "LexiconRepr", into = "LexiconRepr")]
pub struct Lexicon {
    concepts: Vec<String>,
    source_lexemes: Vec<String>,
    target_lexemes: Vec<String>,
    source_fillers: Vec<String>,
    neutral_symbols: Vec<String>,
    seed: u64,
    source_to_concept: HashMap<String, usize>,
    target_to_concept: HashMap<String, usize>,
    filler_set: HashSet<String>,
    neutral_set: HashSet<String>,
}

/// Serialized form of [`Lexicon`]; lookup tables are rebuilt on load.
#[derive(Serialize, Deserialize)]
struct LexiconRepr {
    concepts: Vec<String>,
    source_lexemes: Vec<String>,
    target_lexemes: Vec<String>,
    source_fillers: Vec<String>,
    neutral_symbols: Vec<String>,
    seed: u64,
}

impl From<LexiconRepr> for Lexicon {
    fn from(r: LexiconRepr) -> Self {
        let source_to_concept = r
            .source_lexemes
            .iter()
            .enumerate()
            .map(|(k, s)| (s.clone(), k))
            .collect();
        let target_to_concept = r
            .target_lexemes
            .iter()
            .enumerate()
            .map(|(k, t)| (t.clone(), k))
            .collect();
        let filler_set = r.source_fillers.iter().cloned().collect();
        let neutral_set = r.neutral_symbols.iter().cloned().collect();
        Lexicon {
            concepts: r.concepts,
            source_lexemes: r.source_lexemes,
            target_lexemes: r.target_lexemes,
            source_fillers: r.source_fillers,
            neutral_symbols: r.neutral_symbols,
            seed: r.seed,
            source_to_concept,
            target_to_concept,
            filler_set,
            neutral_set,
        }
    }
}

impl From<Lexicon> for LexiconRepr {
    fn from(l: Lexicon) -> Self {
        LexiconRepr {
            concepts: l.concepts,
            source_lexemes: l.source_lexemes,
            target_lexemes: l.target_lexemes,
            source_fillers: l.source_fillers,
            neutral_symbols: l.neutral_symbols,
            seed: l.seed,
        }
    }
}

impl Lexicon {
    /// Builds a lexicon with `n_concepts` concepts and `n_neutral` neutral
    /// symbols. The source pool is oversized by `max(4, n_concepts / 5)`
    /// fillers; assignment of surface symbols to concepts is a seeded
    /// shuffle, so the mapping is arbitrary but reproducible.
    pub fn build(seed: u64, n_concepts: usize, n_neutral: usize) -> Result<Lexicon> {
        if n_concepts == 0 {
            return Err(SemrlError::InvalidArgument(
                "lexicon needs at least one concept".into(),
            ));
        }
        let n_fillers = (n_concepts / 5).max(4);

        let mut source_pool: Vec<String> =
            (0..n_concepts + n_fillers).map(|i| format!("s{i}")).collect();
        source_pool.shuffle(&mut stage_rng(seed, streams::LEXICON_SOURCE));
        let source_lexemes = source_pool[..n_concepts].to_vec();
        let source_fillers = source_pool[n_concepts..].to_vec();

        let mut target_pool: Vec<String> = (0..n_concepts).map(|i| format!("t{i}")).collect();
        target_pool.shuffle(&mut stage_rng(seed, streams::LEXICON_TARGET));

        let repr = LexiconRepr {
            concepts: (0..n_concepts).map(|k| format!("c{k}")).collect(),
            source_lexemes,
            target_lexemes: target_pool,
            source_fillers,
            neutral_symbols: (0..n_neutral).map(|i| format!("n{i}")).collect(),
            seed,
        };
        Ok(repr.into())
    }

    pub fn n_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn source_lexeme(&self, concept: usize) -> &str {
        &self.source_lexemes[concept]
    }

    pub fn target_lexeme(&self, concept: usize) -> &str {
        &self.target_lexemes[concept]
    }

    /// Target-side vocabulary in concept order (what the policy emits).
    pub fn target_lexemes(&self) -> &[String] {
        &self.target_lexemes
    }

    pub fn source_fillers(&self) -> &[String] {
        &self.source_fillers
    }

    pub fn neutral_symbols(&self) -> &[String] {
        &self.neutral_symbols
    }

    /// Concept carried by a source-side token, if any. Fillers return `None`.
    pub fn concept_of_source(&self, token: &str) -> Option<usize> {
        self.source_to_concept.get(token).copied()
    }

    /// Concept carried by a target-side token, if any.
    pub fn concept_of_target(&self, token: &str) -> Option<usize> {
        self.target_to_concept.get(token).copied()
    }

    pub fn is_source_token(&self, token: &str) -> bool {
        self.source_to_concept.contains_key(token) || self.filler_set.contains(token)
    }

    pub fn is_target_token(&self, token: &str) -> bool {
        self.target_to_concept.contains_key(token)
    }

    pub fn is_neutral_token(&self, token: &str) -> bool {
        self.neutral_set.contains(token)
    }

    /// Distinct concepts mentioned by a sequence of source-side tokens,
    /// ascending.
    pub fn concept_set_of(&self, tokens: &[String]) -> Vec<usize> {
        let mut set: Vec<usize> = tokens
            .iter()
            .filter_map(|t| self.concept_of_source(t))
            .collect();
        set.sort_unstable();
        set.dedup();
        set
    }
}

/// One source-language document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDoc {
    pub tokens: Vec<String>,
    /// Distinct concepts mentioned, ascending. Always consistent with
    /// `tokens` under the generating lexicon.
    pub concept_set: Vec<usize>,
}

impl SourceDoc {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Reference translation: target lexemes of the paired document's distinct
/// concepts, once each, in lexicon order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRef {
    pub tokens: Vec<String>,
}

impl TargetRef {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// A source document paired with its reference translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelExample {
    pub source: SourceDoc,
    pub reference: TargetRef,
}

/// The three splits produced by one generation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusBundle {
    pub parallel: Vec<ParallelExample>,
    pub source_only: Vec<SourceDoc>,
    pub dev: Vec<ParallelExample>,
    pub seed: u64,
}

/// Concept frequencies follow a head/tail split rather than a uniform draw:
/// a small head of high-frequency concepts plus a long tail of entity-like
/// concepts that are common in aggregate yet individually scarce, mirroring
/// natural lexeme frequencies. The head is the first `1 - TAIL_FRACTION` of
/// the lexicon. Broad text (the source-only and dev splits) mentions at most
/// one tail concept per document, with probability `P_TAIL`, the way a
/// headline pairs frequent function words with one rare entity. The parallel
/// split models narrow-domain curated data and draws from the head only, so
/// the entities that dominate in-the-wild text are precisely the ones the
/// parallel data never teaches.
const TAIL_FRACTION: f64 = 0.8;
const P_TAIL: f64 = 0.75;
const P_TAIL2: f64 = 0.5;
const GLOSSARY_COPIES: f64 = 2.0;

/// Generates `n_parallel` + `m_source` + `n_dev` distinct documents from one
/// seeded stream and splits them in that order. Each document draws its
/// concept count uniformly from `len_range` (inclusive), samples concepts
/// per the head/tail scheme above (with replacement within the head), and
/// follows each concept mention with a filler token with probability
/// `filler_rate`.
///
/// Duplicate source documents are rejected across all splits; if the lexicon
/// and length range cannot support enough distinct documents the attempt cap
/// trips and generation fails rather than looping forever.
pub fn gen_corpus(
    lexicon: &Lexicon,
    n_parallel: usize,
    m_source: usize,
    n_dev: usize,
    len_range: (usize, usize),
    filler_rate: f64,
    seed: u64,
) -> Result<CorpusBundle> {
    let (len_min, len_max) = len_range;
    if len_min < 1 || len_max < len_min {
        return Err(SemrlError::InvalidArgument(format!(
            "bad len_range ({len_min}, {len_max}): need 1 <= min <= max"
        )));
    }
    if !(0.0..=1.0).contains(&filler_rate) {
        return Err(SemrlError::InvalidArgument(format!(
            "filler_rate {filler_rate} outside [0, 1]"
        )));
    }
    if m_source < n_parallel {
        return Err(SemrlError::InvalidArgument(format!(
            "m_source ({m_source}) must be >= n_parallel ({n_parallel})"
        )));
    }

    let total = n_parallel + m_source + n_dev;
    let mut rng = stage_rng(seed, streams::CORPUS);
    let mut seen: HashSet<String> = HashSet::with_capacity(total);
    let mut docs: Vec<SourceDoc> = Vec::with_capacity(total);
    let max_attempts = 50 * total + 1000;
    let mut attempts = 0usize;

    // Calibration overrides; removed once defaults are frozen.
    let tail_fraction: f64 = std::env::var("SEMRL_TAIL_FRACTION")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(TAIL_FRACTION);
    let p_tail: f64 = std::env::var("SEMRL_P_TAIL")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(P_TAIL);
    let glossary_copies: f64 = std::env::var("SEMRL_GLOSSARY_COPIES")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(GLOSSARY_COPIES);
    let p_tail2: f64 = std::env::var("SEMRL_P_TAIL2")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(P_TAIL2);
    let zero_tails: usize = std::env::var("SEMRL_ZERO_TAILS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0);
    let low_copies: f64 = std::env::var("SEMRL_LOW_COPIES")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0.0);
    let scarce_w: f64 = std::env::var("SEMRL_SCARCE_W")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1.0);
    let nc = lexicon.n_concepts();
    let n_head = ((nc as f64 * (1.0 - tail_fraction)).round() as usize).clamp(1, nc);
    let n_tail = nc - n_head;
    let n_vis = n_tail.saturating_sub(zero_tails);

    while docs.len() < total {
        attempts += 1;
        if attempts > max_attempts {
            return Err(SemrlError::GenerationExhausted(format!(
                "{} distinct documents after {} attempts (wanted {})",
                docs.len(),
                attempts - 1,
                total
            )));
        }
        let k = rng.random_range(len_min..=len_max);
        // Parallel pairs are narrow-domain: mostly head concepts, plus a
        // handful of glossary-like pairs giving each tail entity a fixed
        // small number of mentions. Broad documents carry one or two tail
        // mentions, drawn uniformly over the tail.
        let broad = docs.len() >= n_parallel;
        let n_gloss_main = (glossary_copies * n_vis as f64).round() as usize;
        let n_gloss_low = (low_copies * (n_tail - n_vis) as f64).round() as usize;
        let n_glossary = n_gloss_main + n_gloss_low;
        let mut tail_slots: Vec<(usize, usize)> = Vec::with_capacity(2);
        if !broad && docs.len() < n_glossary {
            let c = if docs.len() < n_gloss_main {
                n_head + docs.len() % n_vis.max(1)
            } else {
                n_head + n_vis + (docs.len() - n_gloss_main) % (n_tail - n_vis).max(1)
            };
            tail_slots.push((rng.random_range(0..k), c));
        } else if broad && n_tail > 0 && rng.random::<f64>() < p_tail {
            let in_dev = docs.len() >= n_parallel + m_source;
            let mut first = rng.random_range(0..n_tail);
            if first >= n_vis && !in_dev && n_vis > 0 && rng.random::<f64>() > scarce_w {
                first = rng.random_range(0..n_vis);
            }
            let first_at = rng.random_range(0..k);
            tail_slots.push((first_at, n_head + first));
            if k >= 2 && n_tail >= 2 && rng.random::<f64>() < p_tail2 {
                let mut second = rng.random_range(0..n_tail - 1);
                if second >= first {
                    second += 1;
                }
                let mut second_at = rng.random_range(0..k - 1);
                if second_at >= first_at {
                    second_at += 1;
                }
                tail_slots.push((second_at, n_head + second));
            }
        }
        let mut tokens = Vec::with_capacity(2 * k);
        let mut mentioned = Vec::with_capacity(k);
        for i in 0..k {
            let c = match tail_slots.iter().find(|(at, _)| *at == i) {
                Some(&(_, c)) => c,
                None => rng.random_range(0..n_head),
            };
            tokens.push(lexicon.source_lexeme(c).to_string());
            mentioned.push(c);
            if !lexicon.source_fillers().is_empty() && rng.random::<f64>() < filler_rate {
                let f = rng.random_range(0..lexicon.source_fillers().len());
                tokens.push(lexicon.source_fillers()[f].clone());
            }
        }
        let key = tokens.join(" ");
        if !seen.insert(key) {
            continue;
        }
        mentioned.sort_unstable();
        mentioned.dedup();
        docs.push(SourceDoc {
            tokens,
            concept_set: mentioned,
        });
    }

    let reference_for = |doc: &SourceDoc| TargetRef {
        tokens: doc
            .concept_set
            .iter()
            .map(|&c| lexicon.target_lexeme(c).to_string())
            .collect(),
    };

    let mut docs = docs.into_iter();
    let parallel: Vec<ParallelExample> = docs
        .by_ref()
        .take(n_parallel)
        .map(|source| {
            let reference = reference_for(&source);
            ParallelExample { source, reference }
        })
        .collect();
    let source_only: Vec<SourceDoc> = docs.by_ref().take(m_source).collect();
    let dev: Vec<ParallelExample> = docs
        .map(|source| {
            let reference = reference_for(&source);
            ParallelExample { source, reference }
        })
        .collect();

    Ok(CorpusBundle {
        parallel,
        source_only,
        dev,
        seed,
    })
}

// --- on-disk format ---------------------------------------------------------

/// One line of the corpus JSONL file.
#[derive(Serialize, Deserialize)]
struct CorpusRecord {
    split: String,
    source_tokens: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    target_tokens: Option<Vec<String>>,
    concepts: Vec<String>,
}

/// Sidecar stored next to the corpus: the full dictionary plus the seed the
/// document generator ran with.
#[derive(Serialize, Deserialize)]
struct LexiconSidecar {
    lexicon: Lexicon,
    corpus_seed: u64,
}

fn record_for(lexicon: &Lexicon, split: &str, doc: &SourceDoc, target: Option<&TargetRef>) -> CorpusRecord {
    CorpusRecord {
        split: split.to_string(),
        source_tokens: doc.tokens.clone(),
        target_tokens: target.map(|t| t.tokens.clone()),
        concepts: doc
            .concept_set
            .iter()
            .map(|&c| lexicon.concepts()[c].clone())
            .collect(),
    }
}

/// Writes the bundle as line-delimited JSON, one record per document, in
/// split order parallel, source_only, dev.
pub fn write_corpus_jsonl<W: Write>(lexicon: &Lexicon, bundle: &CorpusBundle, mut w: W) -> Result<()> {
    for ex in &bundle.parallel {
        let rec = record_for(lexicon, "parallel", &ex.source, Some(&ex.reference));
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    for doc in &bundle.source_only {
        let rec = record_for(lexicon, "source_only", doc, None);
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    for ex in &bundle.dev {
        let rec = record_for(lexicon, "dev", &ex.source, Some(&ex.reference));
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a corpus written by [`write_corpus_jsonl`]. Concept sets are
/// recomputed from the tokens and cross-checked against the stored concept
/// names, so a corpus cannot silently drift from its lexicon.
pub fn read_corpus_jsonl<R: BufRead>(lexicon: &Lexicon, r: R, seed: u64) -> Result<CorpusBundle> {
    let mut bundle = CorpusBundle {
        parallel: Vec::new(),
        source_only: Vec::new(),
        dev: Vec::new(),
        seed,
    };
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line)?;
        let concept_set = lexicon.concept_set_of(&rec.source_tokens);
        let stored: Vec<String> = rec.concepts;
        let recomputed: Vec<String> = concept_set
            .iter()
            .map(|&c| lexicon.concepts()[c].clone())
            .collect();
        if stored != recomputed {
            return Err(SemrlError::InvalidArgument(format!(
                "corpus line {}: stored concepts {:?} disagree with tokens (expected {:?})",
                lineno + 1,
                stored,
                recomputed
            )));
        }
        let doc = SourceDoc {
            tokens: rec.source_tokens,
            concept_set,
        };
        match (rec.split.as_str(), rec.target_tokens) {
            ("parallel", Some(tokens)) => bundle.parallel.push(ParallelExample {
                source: doc,
                reference: TargetRef { tokens },
            }),
            ("dev", Some(tokens)) => bundle.dev.push(ParallelExample {
                source: doc,
                reference: TargetRef { tokens },
            }),
            ("source_only", None) => bundle.source_only.push(doc),
            (split, target) => {
                return Err(SemrlError::InvalidArgument(format!(
                    "corpus line {}: split {:?} with target present = {}",
                    lineno + 1,
                    split,
                    target.is_some()
                )))
            }
        }
    }
    Ok(bundle)
}

/// Writes `corpus.jsonl` plus the `lexicon.json` sidecar into `dir`.
pub fn save_corpus(dir: &Path, lexicon: &Lexicon, bundle: &CorpusBundle) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let sidecar = LexiconSidecar {
        lexicon: lexicon.clone(),
        corpus_seed: bundle.seed,
    };
    let f = std::fs::File::create(dir.join("lexicon.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &sidecar)?;
    let f = std::fs::File::create(dir.join("corpus.jsonl"))?;
    let mut w = std::io::BufWriter::new(f);
    write_corpus_jsonl(lexicon, bundle, &mut w)?;
    Ok(())
}

/// Loads a corpus directory written by [`save_corpus`].
pub fn load_corpus(dir: &Path) -> Result<(Lexicon, CorpusBundle)> {
    let f = std::fs::File::open(dir.join("lexicon.json"))?;
    let sidecar: LexiconSidecar = serde_json::from_reader(std::io::BufReader::new(f))?;
    let f = std::fs::File::open(dir.join("corpus.jsonl"))?;
    let bundle = read_corpus_jsonl(
        &sidecar.lexicon,
        std::io::BufReader::new(f),
        sidecar.corpus_seed,
    )?;
    Ok((sidecar.lexicon, bundle))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_lexicon() -> Lexicon {
        Lexicon::build(7, 12, 5).unwrap()
    }

    #[test]
    fn test_lexicon_vocabularies_disjoint_and_injective() {
        let lex = small_lexicon();
        let mut all: Vec<&str> = Vec::new();
        all.extend(lex.source_lexemes.iter().map(|s| s.as_str()));
        all.extend(lex.target_lexemes.iter().map(|s| s.as_str()));
        all.extend(lex.source_fillers.iter().map(|s| s.as_str()));
        all.extend(lex.neutral_symbols.iter().map(|s| s.as_str()));
        let distinct: HashSet<&str> = all.iter().copied().collect();
        assert_eq!(distinct.len(), all.len(), "surface vocabularies overlap");
        assert_eq!(lex.source_lexemes.len(), 12);
        assert_eq!(lex.target_lexemes.len(), 12);
        assert_eq!(lex.source_fillers.len(), 4);
        assert_eq!(lex.neutral_symbols.len(), 5);
    }

    #[test]
    fn test_lexicon_build_deterministic() {
        assert_eq!(Lexicon::build(7, 12, 5).unwrap(), small_lexicon());
        assert_ne!(
            Lexicon::build(8, 12, 5).unwrap().source_lexemes,
            small_lexicon().source_lexemes
        );
    }

    #[test]
    fn test_lexicon_rejects_zero_concepts() {
        assert!(matches!(
            Lexicon::build(1, 0, 3),
            Err(SemrlError::InvalidArgument(_))
        ));
    }

    #[test]
    fn test_lexicon_roundtrip_rebuilds_lookup() {
        let lex = small_lexicon();
        let json = serde_json::to_string(&lex).unwrap();
        let back: Lexicon = serde_json::from_str(&json).unwrap();
        assert_eq!(back, lex);
        for k in 0..lex.n_concepts() {
            assert_eq!(back.concept_of_source(lex.source_lexeme(k)), Some(k));
            assert_eq!(back.concept_of_target(lex.target_lexeme(k)), Some(k));
        }
    }

    #[test]
    fn test_gen_corpus_split_sizes_and_determinism() {
        let lex = small_lexicon();
        let a = gen_corpus(&lex, 10, 30, 8, (2, 5), 0.3, 99).unwrap();
        let b = gen_corpus(&lex, 10, 30, 8, (2, 5), 0.3, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.parallel.len(), 10);
        assert_eq!(a.source_only.len(), 30);
        assert_eq!(a.dev.len(), 8);
        let c = gen_corpus(&lex, 10, 30, 8, (2, 5), 0.3, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn test_gen_corpus_no_duplicate_sources_across_splits() {
        let lex = small_lexicon();
        let bundle = gen_corpus(&lex, 15, 40, 10, (2, 4), 0.25, 3).unwrap();
        let mut seen = HashSet::new();
        let all = bundle
            .parallel
            .iter()
            .map(|p| &p.source)
            .chain(bundle.source_only.iter())
            .chain(bundle.dev.iter().map(|p| &p.source));
        for doc in all {
            assert!(seen.insert(doc.text()), "duplicate document {:?}", doc.tokens);
        }
    }

    #[test]
    fn test_gen_corpus_concept_counts_within_range_and_consistent() {
        let lex = small_lexicon();
        let bundle = gen_corpus(&lex, 10, 20, 5, (2, 5), 0.5, 17).unwrap();
        let all = bundle
            .parallel
            .iter()
            .map(|p| &p.source)
            .chain(bundle.source_only.iter())
            .chain(bundle.dev.iter().map(|p| &p.source));
        for doc in all {
            let mentions: Vec<usize> = doc
                .tokens
                .iter()
                .filter_map(|t| lex.concept_of_source(t))
                .collect();
            assert!((2..=5).contains(&mentions.len()));
            assert_eq!(doc.concept_set, lex.concept_set_of(&doc.tokens));
            // every token is either concept-bearing or a filler
            for t in &doc.tokens {
                assert!(lex.is_source_token(t), "unknown token {t}");
            }
        }
    }

    #[test]
    fn test_gen_corpus_zero_filler_rate_emits_no_fillers() {
        let lex = small_lexicon();
        let bundle = gen_corpus(&lex, 5, 10, 5, (2, 4), 0.0, 4).unwrap();
        for doc in bundle.source_only {
            for t in &doc.tokens {
                assert!(lex.concept_of_source(t).is_some(), "filler {t} leaked in");
            }
        }
    }

    #[test]
    fn test_gen_corpus_references_follow_lexicon_order() {
        let lex = small_lexicon();
        let bundle = gen_corpus(&lex, 12, 12, 6, (2, 6), 0.4, 23).unwrap();
        for ex in bundle.parallel.iter().chain(bundle.dev.iter()) {
            // independent recomputation: distinct concepts of the tokens,
            // ascending, rendered on the target side
            let mut distinct: Vec<usize> = ex
                .source
                .tokens
                .iter()
                .filter_map(|t| lex.concept_of_source(t))
                .collect();
            distinct.sort_unstable();
            distinct.dedup();
            let expect: Vec<String> = distinct
                .iter()
                .map(|&c| lex.target_lexeme(c).to_string())
                .collect();
            assert_eq!(ex.reference.tokens, expect);
            let distinct_refs: HashSet<&String> = ex.reference.tokens.iter().collect();
            assert_eq!(distinct_refs.len(), ex.reference.tokens.len());
        }
    }

    #[test]
    fn test_gen_corpus_rejects_m_source_below_n_parallel() {
        let lex = small_lexicon();
        assert!(matches!(
            gen_corpus(&lex, 10, 5, 5, (2, 4), 0.2, 1),
            Err(SemrlError::InvalidArgument(_))
        ));
    }

    #[test]
    fn test_gen_corpus_exhaustion_fails_cleanly() {
        let lex = Lexicon::build(2, 1, 0).unwrap();
        // one concept, length exactly 1, no fillers: a single distinct doc exists
        let err = gen_corpus(&lex, 1, 4, 0, (1, 1), 0.0, 5).unwrap_err();
        assert!(matches!(err, SemrlError::GenerationExhausted(_)));
    }

    #[test]
    fn test_corpus_jsonl_roundtrip_identity() {
        let lex = small_lexicon();
        let bundle = gen_corpus(&lex, 6, 9, 4, (2, 5), 0.3, 31).unwrap();
        let mut buf = Vec::new();
        write_corpus_jsonl(&lex, &bundle, &mut buf).unwrap();
        let back = read_corpus_jsonl(&lex, std::io::BufReader::new(&buf[..]), bundle.seed).unwrap();
        assert_eq!(back, bundle);
    }

    #[test]
    fn test_save_load_corpus_dir() {
        let dir = tempfile::tempdir().unwrap();
        let lex = small_lexicon();
        let bundle = gen_corpus(&lex, 4, 6, 3, (2, 4), 0.2, 8).unwrap();
        save_corpus(dir.path(), &lex, &bundle).unwrap();
        let (lex2, bundle2) = load_corpus(dir.path()).unwrap();
        assert_eq!(lex2, lex);
        assert_eq!(bundle2, bundle);
    }

    #[test]
    fn test_read_corpus_rejects_inconsistent_concepts() {
        let lex = small_lexicon();
        let bundle = gen_corpus(&lex, 1, 1, 0, (2, 3), 0.0, 2).unwrap();
        let mut buf = Vec::new();
        write_corpus_jsonl(&lex, &bundle, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let tampered = text.replacen(&format!("\"{}\"", lex.concepts()[bundle.parallel[0].source.concept_set[0]]), "\"c999\"", 1);
        let err = read_corpus_jsonl(&lex, std::io::BufReader::new(tampered.as_bytes()), 2);
        assert!(err.is_err());
    }
}
