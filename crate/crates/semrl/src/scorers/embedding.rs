//! Toy cross-lingual embedding scorer.
//!
//! A text is a bag-of-tokens count vector over the joint vocabulary (both
//! languages plus fillers and neutral symbols), linearly projected to a
//! d-dimensional unit vector. Matched (source, reference) pairs are pulled
//! together and in-batch mismatches pushed apart with a symmetric softmax
//! contrastive loss over cosine similarities, scaled by a temperature. The
//! similarity score for reward use is cosine mapped affinely onto [0,1].
//!
//! Everything is exact: the gradient of the loss through the normalization
//! is computed analytically and is checked against finite differences in the
//! tests.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Lexicon, ParallelExample};
use crate::error::{Result, SemrlError};
use crate::scorers::SemanticScorer;
use crate::seeding::{stage_rng, streams};

/// Contrastive training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveConfig {
    /// Embedding width d.
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Softmax temperature over cosine similarities.
    pub temperature: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            dim: 32,
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.3,
            temperature: 0.07,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.epochs == 0 || self.batch_size < 2 {
            return Err(SemrlError::Config(
                "embedder needs dim >= 1, epochs >= 1, batch_size >= 2".into(),
            ));
        }
        if self.learning_rate <= 0.0 || self.temperature <= 0.0 {
            return Err(SemrlError::Config(
                "embedder learning_rate and temperature must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Linear bag-of-tokens embedder. `projection` has one row per vocabulary
/// token; a text embeds to the count-weighted row sum, L2-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "EmbedderRepr", into = "EmbedderRepr")]
pub struct Embedder {
    vocab: Vec<String>,
    projection: Array2<f64>,
    cfg: ContrastiveConfig,
    epoch_losses: Vec<f64>,
    token_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct EmbedderRepr {
    vocab: Vec<String>,
    projection: Array2<f64>,
    cfg: ContrastiveConfig,
    epoch_losses: Vec<f64>,
}

impl From<EmbedderRepr> for Embedder {
    fn from(r: EmbedderRepr) -> Self {
        let token_index = r
            .vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Embedder {
            vocab: r.vocab,
            projection: r.projection,
            cfg: r.cfg,
            epoch_losses: r.epoch_losses,
            token_index,
        }
    }
}

impl From<Embedder> for EmbedderRepr {
    fn from(e: Embedder) -> Self {
        EmbedderRepr {
            vocab: e.vocab,
            projection: e.projection,
            cfg: e.cfg,
            epoch_losses: e.epoch_losses,
        }
    }
}

impl Embedder {
    /// Randomly initialized, untrained embedder over the lexicon's joint
    /// vocabulary. Useful as the discrimination baseline.
    pub fn init(lexicon: &Lexicon, cfg: ContrastiveConfig, seed: u64) -> Result<Embedder> {
        cfg.validate()?;
        let mut vocab: Vec<String> = Vec::new();
        for c in 0..lexicon.n_concepts() {
            vocab.push(lexicon.source_lexeme(c).to_string());
        }
        vocab.extend(lexicon.target_lexemes().iter().cloned());
        vocab.extend(lexicon.source_fillers().iter().cloned());
        vocab.extend(lexicon.neutral_symbols().iter().cloned());
        let mut rng = stage_rng(seed, streams::EMBEDDER);
        let scale = 1.0 / (cfg.dim as f64).sqrt();
        let projection = Array2::from_shape_fn((vocab.len(), cfg.dim), |_| {
            (rng.random::<f64>() * 2.0 - 1.0) * scale
        });
        let token_index = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Embedder {
            vocab,
            projection,
            cfg,
            epoch_losses: Vec::new(),
            token_index,
        })
    }

    pub fn cfg(&self) -> &ContrastiveConfig {
        &self.cfg
    }

    pub fn epoch_losses(&self) -> &[f64] {
        &self.epoch_losses
    }

    fn count_vector(&self, text: &str) -> Vec<(usize, f64)> {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for tok in text.split_whitespace() {
            if let Some(&i) = self.token_index.get(tok) {
                *counts.entry(i).or_insert(0.0) += 1.0;
            }
        }
        let mut v: Vec<(usize, f64)> = counts.into_iter().collect();
        v.sort_unstable_by_key(|&(i, _)| i);
        v
    }

    fn project(&self, counts: &[(usize, f64)]) -> Array1<f64> {
        let mut z = Array1::zeros(self.cfg.dim);
        for &(tok, cnt) in counts {
            z.scaled_add(cnt, &self.projection.row(tok));
        }
        z
    }

    /// Unit-norm embedding of a whitespace-tokenized text. Texts with no
    /// known tokens map to a fixed unit vector so the norm invariant holds
    /// unconditionally.
    pub fn embed(&self, text: &str) -> Array1<f64> {
        let z = self.project(&self.count_vector(text));
        normalize_or_fallback(z)
    }
}

fn normalize_or_fallback(z: Array1<f64>) -> Array1<f64> {
    let norm = z.dot(&z).sqrt();
    if norm < 1e-12 {
        let mut e = Array1::zeros(z.len());
        e[0] = 1.0;
        e
    } else {
        z / norm
    }
}

/// Cosine similarity of the two embeddings mapped affinely onto [0,1].
pub fn embedding_score(e: &Embedder, source_text: &str, candidate_text: &str) -> f64 {
    let a = e.embed(source_text);
    let b = e.embed(candidate_text);
    let cos = a.dot(&b).clamp(-1.0, 1.0);
    (1.0 + cos) / 2.0
}

impl SemanticScorer for Embedder {
    fn score_batch(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        Ok(pairs
            .iter()
            .map(|(s, c)| embedding_score(self, s, c))
            .collect())
    }

    fn name(&self) -> &'static str {
        "embedding"
    }
}

/// Loss and parameter gradient of the symmetric in-batch contrastive
/// objective on one batch of (source counts, reference counts).
fn batch_loss_and_grad(
    projection: &Array2<f64>,
    dim: usize,
    temperature: f64,
    batch: &[(Vec<(usize, f64)>, Vec<(usize, f64)>)],
) -> (f64, Array2<f64>) {
    let b = batch.len();
    let project = |counts: &[(usize, f64)]| {
        let mut z = Array1::<f64>::zeros(dim);
        for &(tok, cnt) in counts {
            z.scaled_add(cnt, &projection.row(tok));
        }
        z
    };

    // raw projections, norms, and unit vectors for both sides
    let zs: Vec<Array1<f64>> = batch.iter().map(|(x, _)| project(x)).collect();
    let zr: Vec<Array1<f64>> = batch.iter().map(|(_, y)| project(y)).collect();
    let norm = |z: &Array1<f64>| z.dot(z).sqrt();
    let ns: Vec<f64> = zs.iter().map(norm).collect();
    let nr: Vec<f64> = zr.iter().map(norm).collect();
    let unit = |z: &Array1<f64>, n: f64| {
        if n < 1e-12 {
            let mut e = Array1::zeros(z.len());
            e[0] = 1.0;
            e
        } else {
            z / n
        }
    };
    let us: Vec<Array1<f64>> = zs.iter().zip(&ns).map(|(z, &n)| unit(z, n)).collect();
    let ur: Vec<Array1<f64>> = zr.iter().zip(&nr).map(|(z, &n)| unit(z, n)).collect();

    // similarity logits S[i][j] = us_i . ur_j / temperature
    let mut s = Array2::<f64>::zeros((b, b));
    for i in 0..b {
        for j in 0..b {
            s[(i, j)] = us[i].dot(&ur[j]) / temperature;
        }
    }

    // row softmax (source -> which reference) and column softmax
    let mut p_row = Array2::<f64>::zeros((b, b));
    for i in 0..b {
        let row = s.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        for j in 0..b {
            p_row[(i, j)] = exps[j] / z;
        }
    }
    let mut p_col = Array2::<f64>::zeros((b, b));
    for j in 0..b {
        let col = s.column(j);
        let m = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = col.iter().map(|&v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        for i in 0..b {
            p_col[(i, j)] = exps[i] / z;
        }
    }

    let mut loss = 0.0;
    for i in 0..b {
        loss += -p_row[(i, i)].max(1e-300).ln() - p_col[(i, i)].max(1e-300).ln();
    }
    loss /= 2.0 * b as f64;

    // dL/dS, then back through the cosine and the normalization
    let inv = 1.0 / (2.0 * b as f64);
    let mut ds = Array2::<f64>::zeros((b, b));
    for i in 0..b {
        for j in 0..b {
            let delta = if i == j { 1.0 } else { 0.0 };
            ds[(i, j)] = inv * (p_row[(i, j)] - delta) + inv * (p_col[(i, j)] - delta);
        }
    }

    let mut grad = Array2::<f64>::zeros(projection.raw_dim());
    for i in 0..b {
        // dL/du_i = sum_j dS_ij * ur_j / temperature
        let mut gu = Array1::<f64>::zeros(dim);
        for j in 0..b {
            gu.scaled_add(ds[(i, j)] / temperature, &ur[j]);
        }
        if ns[i] >= 1e-12 {
            // through z/|z|: (g - u (u.g)) / |z|
            let proj = us[i].dot(&gu);
            let gz = (gu - &us[i] * proj) / ns[i];
            for &(tok, cnt) in &batch[i].0 {
                let mut row = grad.row_mut(tok);
                row.scaled_add(cnt, &gz);
            }
        }
    }
    for j in 0..b {
        let mut gw = Array1::<f64>::zeros(dim);
        for i in 0..b {
            gw.scaled_add(ds[(i, j)] / temperature, &us[i]);
        }
        if nr[j] >= 1e-12 {
            let proj = ur[j].dot(&gw);
            let gz = (gw - &ur[j] * proj) / nr[j];
            for &(tok, cnt) in &batch[j].1 {
                let mut row = grad.row_mut(tok);
                row.scaled_add(cnt, &gz);
            }
        }
    }

    (loss, grad)
}

/// Trains an embedder on matched pairs with mini-batch gradient descent,
/// in-batch negatives, and a seeded shuffle per epoch. Deterministic in the
/// seed. Returns the trained embedder with its per-epoch mean loss trace.
pub fn train_contrastive(
    lexicon: &Lexicon,
    pairs: &[ParallelExample],
    cfg: &ContrastiveConfig,
    seed: u64,
) -> Result<Embedder> {
    if pairs.len() < 2 {
        return Err(SemrlError::InvalidArgument(
            "contrastive training needs at least 2 pairs for in-batch negatives".into(),
        ));
    }
    let mut embedder = Embedder::init(lexicon, cfg.clone(), seed)?;
    let counted: Vec<(Vec<(usize, f64)>, Vec<(usize, f64)>)> = pairs
        .iter()
        .map(|ex| {
            (
                embedder.count_vector(&ex.source.text()),
                embedder.count_vector(&ex.reference.text()),
            )
        })
        .collect();

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = stage_rng(seed, streams::EMBEDDER.wrapping_add(1000));
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<(Vec<(usize, f64)>, Vec<(usize, f64)>)> =
                chunk.iter().map(|&i| counted[i].clone()).collect();
            let (loss, grad) = batch_loss_and_grad(
                &embedder.projection,
                cfg.dim,
                cfg.temperature,
                &batch,
            );
            embedder
                .projection
                .scaled_add(-cfg.learning_rate, &grad);
            epoch_loss += loss;
            n_batches += 1;
        }
        losses.push(epoch_loss / n_batches.max(1) as f64);
    }
    if !losses.iter().all(|l| l.is_finite()) {
        return Err(SemrlError::Numeric(
            "contrastive training loss became non-finite".into(),
        ));
    }
    embedder.epoch_losses = losses;
    Ok(embedder)
}
