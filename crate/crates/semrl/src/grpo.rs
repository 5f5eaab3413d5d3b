//! Group-relative policy optimization.
//!
//! For each source, a group of G candidates is sampled, rewarded, and
//! normalized within the group: `grpo` standardizes rewards by the group's
//! population standard deviation, the `dr_grpo` control only mean-centers.
//! The update objective is the clipped surrogate
//!
//! ```text
//! L = -(1/n) sum_i norm_i sum_t min(rho_t A_i, clip(rho_t, 1-eps, 1+eps) A_i)
//!     + beta * (1/n) sum_i KL_i
//! ```
//!
//! where `rho_t` is the probability ratio between the current policy and the
//! sampling-time snapshot at step t, `norm_i` is 1/T_i for `grpo` and
//! 1/max_len for `dr_grpo` (the control also removes the std division), and
//! `KL_i` is the exact per-step categorical KL to a frozen reference policy,
//! averaged over the trajectory. Gradients are analytic; the subgradient of
//! the min flows only through the unclipped branch.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::SourceDoc;
use crate::error::{Result, SemrlError};
use crate::policy::{PolicyGrad, ToyPolicy, Trajectory};
use crate::reward::{
    score_rewards, GateRules, MedianScope, RewardBatch, RewardBreakdown, RewardConfig, RewardItem,
};
use crate::scorers::SemanticScorer;
use crate::seeding::stage_rng;

/// Advantage normalization variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageVariant {
    Grpo,
    DrGrpo,
}

/// Optimizer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    /// Candidates sampled per source.
    pub group_size: usize,
    pub clip_eps: f64,
    /// Weight of the KL penalty to the frozen reference.
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub advantage_variant: AdvantageVariant,
    /// Added to the population std in the grpo normalizer.
    pub std_epsilon: f64,
    /// Gradient steps taken on each sampled batch (>1 exercises clipping).
    pub updates_per_batch: usize,
    /// Sampling temperature during group rollout.
    pub sample_temperature: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            clip_eps: 0.2,
            kl_beta: 0.02,
            learning_rate: 0.5,
            advantage_variant: AdvantageVariant::Grpo,
            std_epsilon: 1e-6,
            updates_per_batch: 1,
            sample_temperature: 1.0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(SemrlError::Config("group_size must be >= 2".into()));
        }
        if !(self.clip_eps > 0.0) {
            return Err(SemrlError::Config("clip_eps must be > 0".into()));
        }
        if self.kl_beta < 0.0 {
            return Err(SemrlError::Config("kl_beta must be >= 0".into()));
        }
        if self.std_epsilon <= 0.0 {
            return Err(SemrlError::Config("std_epsilon must be > 0".into()));
        }
        if self.updates_per_batch == 0 {
            return Err(SemrlError::Config("updates_per_batch must be >= 1".into()));
        }
        if !(self.sample_temperature > 0.0) {
            return Err(SemrlError::Config("sample_temperature must be > 0".into()));
        }
        Ok(())
    }
}

/// One source's sampled group with rewards and advantages.
#[derive(Debug, Clone)]
pub struct GroupSample {
    pub source: SourceDoc,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
}

/// Telemetry for one gradient step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Clipped-surrogate part of the loss (KL term excluded).
    pub surrogate_loss: f64,
    pub mean_kl_to_ref: f64,
    /// L2 norm of the full parameter gradient before the step.
    pub grad_norm: f64,
    /// Fraction of token terms where the clipped branch was active.
    pub clip_fraction: f64,
    /// Mean final reward over the batch's candidates.
    pub mean_reward: f64,
    /// Mean candidate token count.
    pub mean_length: f64,
}

/// Within-group advantages. `grpo` standardizes by the population std plus
/// `std_epsilon`; `dr_grpo` only subtracts the mean.
pub fn group_advantages(
    rewards: &[f64],
    variant: AdvantageVariant,
    std_epsilon: f64,
) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(SemrlError::InvalidArgument(format!(
            "group advantages need >= 2 rewards, got {}",
            rewards.len()
        )));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    match variant {
        AdvantageVariant::DrGrpo => Ok(rewards.iter().map(|r| r - mean).collect()),
        AdvantageVariant::Grpo => {
            let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            Ok(rewards.iter().map(|r| (r - mean) / (std + std_epsilon)).collect())
        }
    }
}

/// Exact mean categorical KL between the two policies over the states a
/// trajectory visited: (1/T) sum_t sum_j p_j log(p_j / q_j), summed over the
/// full outcome alphabet.
pub fn kl_to_reference(
    policy: &ToyPolicy,
    ref_policy: &ToyPolicy,
    traj: &Trajectory,
) -> Result<f64> {
    if policy.vocab_size() != ref_policy.vocab_size() {
        return Err(SemrlError::InvalidArgument(
            "policy and reference have different vocabularies".into(),
        ));
    }
    let steps = policy.visited_steps(traj);
    if steps.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (prev, _) in &steps {
        let p_log = policy.state_log_dist(&traj.source.concept_set, *prev);
        let q_log = ref_policy.state_log_dist(&traj.source.concept_set, *prev);
        let kl_step: f64 = p_log
            .iter()
            .zip(q_log.iter())
            .map(|(&pl, &ql)| pl.exp() * (pl - ql))
            .sum();
        total += kl_step.max(0.0);
    }
    Ok(total / steps.len() as f64)
}

struct LossTerms {
    surrogate: f64,
    mean_kl: f64,
    clip_fraction: f64,
}

/// Shared evaluator for the full objective; the gradient is skipped when not
/// requested so finite-difference probes stay cheap.
fn loss_terms(
    policy: &ToyPolicy,
    ref_policy: &ToyPolicy,
    groups: &[GroupSample],
    cfg: &GrpoConfig,
    want_grad: bool,
) -> Result<(LossTerms, Option<PolicyGrad>)> {
    let n_traj: usize = groups.iter().map(|g| g.trajectories.len()).sum();
    if n_traj == 0 {
        return Err(SemrlError::InvalidArgument(
            "policy update needs at least one trajectory".into(),
        ));
    }
    for g in groups {
        if g.trajectories.len() != g.advantages.len() || g.trajectories.len() != g.rewards.len() {
            return Err(SemrlError::InvalidArgument(
                "group lists must have equal length".into(),
            ));
        }
    }
    let inv_n = 1.0 / n_traj as f64;
    let mut grad = want_grad.then(|| PolicyGrad::zeros_like(policy));
    let mut surrogate_sum = 0.0;
    let mut kl_sum = 0.0;
    let mut clipped_terms = 0usize;
    let mut total_terms = 0usize;

    for group in groups {
        for (traj, &adv) in group.trajectories.iter().zip(&group.advantages) {
            let steps = policy.visited_steps(traj);
            if steps.is_empty() {
                continue;
            }
            if steps.len() != traj.per_token_logprob.len() {
                return Err(SemrlError::InvalidArgument(
                    "trajectory log-probabilities do not match its steps".into(),
                ));
            }
            let norm = match cfg.advantage_variant {
                AdvantageVariant::Grpo => 1.0 / steps.len() as f64,
                AdvantageVariant::DrGrpo => 1.0 / policy.max_len() as f64,
            };
            let mut kl_traj = 0.0;
            for (t, &(prev, action)) in steps.iter().enumerate() {
                let p_log = policy.state_log_dist(&traj.source.concept_set, prev);
                let lp_cur = p_log[action];
                let lp_old = traj.per_token_logprob[t];
                let ratio = (lp_cur - lp_old).exp();
                let unclipped = ratio * adv;
                let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv;
                let takes_clipped = clipped < unclipped;
                surrogate_sum += norm * unclipped.min(clipped);
                total_terms += 1;
                if takes_clipped {
                    clipped_terms += 1;
                }

                let q_log = ref_policy.state_log_dist(&traj.source.concept_set, prev);
                let kl_step: f64 = p_log
                    .iter()
                    .zip(q_log.iter())
                    .map(|(&pl, &ql)| pl.exp() * (pl - ql))
                    .sum();
                kl_traj += kl_step;

                if let Some(grad) = grad.as_mut() {
                    // surrogate gradient flows only through the unclipped branch:
                    // d/dlogits [ratio * adv] = ratio * adv * (onehot - p)
                    if !takes_clipped {
                        let coeff = -inv_n * norm * adv * ratio;
                        let mut g = p_log.mapv(|v| -v.exp() * coeff);
                        g[action] += coeff;
                        {
                            let mut row = grad.w_prev.row_mut(prev);
                            row += &g;
                        }
                        for &c in &traj.source.concept_set {
                            let mut row = grad.w_concept.row_mut(c);
                            row += &g;
                        }
                    }
                    // KL gradient: d KL/d logits_j = p_j ((log p - log q)_j - KL)
                    if cfg.kl_beta > 0.0 {
                        let coeff = cfg.kl_beta * inv_n / steps.len() as f64;
                        let g = ndarray::Array1::from_shape_fn(p_log.len(), |j| {
                            coeff * p_log[j].exp() * ((p_log[j] - q_log[j]) - kl_step)
                        });
                        {
                            let mut row = grad.w_prev.row_mut(prev);
                            row += &g;
                        }
                        for &c in &traj.source.concept_set {
                            let mut row = grad.w_concept.row_mut(c);
                            row += &g;
                        }
                    }
                }
            }
            kl_sum += (kl_traj / steps.len() as f64).max(0.0);
        }
    }

    Ok((
        LossTerms {
            surrogate: -inv_n * surrogate_sum,
            mean_kl: inv_n * kl_sum,
            clip_fraction: clipped_terms as f64 / total_terms.max(1) as f64,
        },
        grad,
    ))
}

/// The scalar objective the update descends: clipped surrogate plus the
/// weighted KL penalty. Exposed so tests can probe it with finite
/// differences.
pub fn total_loss(
    policy: &ToyPolicy,
    ref_policy: &ToyPolicy,
    groups: &[GroupSample],
    cfg: &GrpoConfig,
) -> Result<f64> {
    let (terms, _) = loss_terms(policy, ref_policy, groups, cfg, false)?;
    Ok(terms.surrogate + cfg.kl_beta * terms.mean_kl)
}

/// One gradient step on the sampled groups. A non-finite gradient aborts the
/// step with the parameters untouched.
pub fn policy_update(
    policy: &mut ToyPolicy,
    ref_policy: &ToyPolicy,
    groups: &[GroupSample],
    cfg: &GrpoConfig,
) -> Result<UpdateStats> {
    cfg.validate()?;
    let (terms, grad) = loss_terms(policy, ref_policy, groups, cfg, true)?;
    let grad = grad.expect("gradient requested");
    if !grad.is_finite() || !terms.surrogate.is_finite() || !terms.mean_kl.is_finite() {
        return Err(SemrlError::Numeric(
            "non-finite policy gradient; step aborted with parameters unchanged".into(),
        ));
    }
    let grad_norm = grad.l2_norm();
    policy.apply_grad(&grad, -cfg.learning_rate);

    let mut n = 0usize;
    let mut reward_sum = 0.0;
    let mut len_sum = 0.0;
    for g in groups {
        for (traj, breakdown) in g.trajectories.iter().zip(&g.rewards) {
            reward_sum += breakdown.final_reward;
            len_sum += traj.tokens.len() as f64;
            n += 1;
        }
    }
    Ok(UpdateStats {
        surrogate_loss: terms.surrogate,
        mean_kl_to_ref: terms.mean_kl,
        grad_norm,
        clip_fraction: terms.clip_fraction,
        mean_reward: reward_sum / n.max(1) as f64,
        mean_length: len_sum / n.max(1) as f64,
    })
}

/// One RL item: a source document and the anchor text handed to the semantic
/// scorer as the query side.
#[derive(Debug, Clone)]
pub struct RlExample {
    pub source: SourceDoc,
    pub anchor: String,
}

impl RlExample {
    /// Reference-free anchoring: score candidates against the source itself.
    pub fn source_anchored(source: SourceDoc) -> RlExample {
        let anchor = source.text();
        RlExample { source, anchor }
    }
}

/// One pass over the corpus: batches of sources, a group of samples per
/// source, reward scoring, advantages, and `updates_per_batch` gradient
/// steps per batch. Deterministic in `seed`.
#[allow(clippy::too_many_arguments)]
pub fn rl_epoch(
    policy: &mut ToyPolicy,
    ref_policy: &ToyPolicy,
    items: &[RlExample],
    scorer: &dyn SemanticScorer,
    rules: &GateRules,
    reward_cfg: &RewardConfig,
    cfg: &GrpoConfig,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<UpdateStats>> {
    if items.is_empty() {
        return Err(SemrlError::InvalidArgument(
            "rl epoch needs a non-empty corpus".into(),
        ));
    }
    cfg.validate()?;
    reward_cfg.validate()?;
    let batch_size = batch_size.max(1);
    let mut rng: ChaCha8Rng = stage_rng(seed, 0);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng);

    let mut all_stats = Vec::new();
    for chunk in order.chunks(batch_size) {
        // rollout: G candidates per source
        let mut batch_trajs: Vec<Vec<Trajectory>> = Vec::with_capacity(chunk.len());
        let mut pairs: Vec<(String, String)> = Vec::with_capacity(chunk.len() * cfg.group_size);
        for &i in chunk {
            let item = &items[i];
            let mut group = Vec::with_capacity(cfg.group_size);
            for _ in 0..cfg.group_size {
                let traj = policy.sample_with_rng(&item.source, cfg.sample_temperature, &mut rng)?;
                pairs.push((item.anchor.clone(), traj.tokens.join(" ")));
                group.push(traj);
            }
            batch_trajs.push(group);
        }
        let sems = scorer.score_batch(&pairs)?;
        if sems.len() != pairs.len() {
            return Err(SemrlError::InvalidArgument(format!(
                "scorer returned {} scores for {} pairs",
                sems.len(),
                pairs.len()
            )));
        }

        // reward scoring; the batch-relative median spans the whole reward
        // batch or each group, depending on the configured scope
        let breakdowns: Vec<Vec<RewardBreakdown>> = match reward_cfg.median_scope {
            MedianScope::RewardBatch => {
                let mut items_flat = Vec::with_capacity(pairs.len());
                let mut source_lens = Vec::with_capacity(pairs.len());
                for (gi, group) in batch_trajs.iter().enumerate() {
                    for (ti, traj) in group.iter().enumerate() {
                        items_flat.push(RewardItem {
                            tokens: traj.tokens.clone(),
                            sem: sems[gi * cfg.group_size + ti],
                        });
                        source_lens.push(traj.source.tokens.len() as f64);
                    }
                }
                let flat_batch = RewardBatch::new(items_flat);
                let flat = score_rewards(&flat_batch, rules, reward_cfg, Some(&source_lens))?;
                flat.chunks(cfg.group_size).map(|c| c.to_vec()).collect()
            }
            MedianScope::Group => {
                let mut per_group = Vec::with_capacity(batch_trajs.len());
                for (gi, group) in batch_trajs.iter().enumerate() {
                    let items_g: Vec<RewardItem> = group
                        .iter()
                        .enumerate()
                        .map(|(ti, traj)| RewardItem {
                            tokens: traj.tokens.clone(),
                            sem: sems[gi * cfg.group_size + ti],
                        })
                        .collect();
                    let source_lens: Vec<f64> = group
                        .iter()
                        .map(|t| t.source.tokens.len() as f64)
                        .collect();
                    let batch = RewardBatch::new(items_g);
                    per_group.push(score_rewards(&batch, rules, reward_cfg, Some(&source_lens))?);
                }
                per_group
            }
        };

        let mut groups = Vec::with_capacity(batch_trajs.len());
        for (trajs, rewards) in batch_trajs.into_iter().zip(breakdowns) {
            let finals: Vec<f64> = rewards.iter().map(|b| b.final_reward).collect();
            let advantages = group_advantages(&finals, cfg.advantage_variant, cfg.std_epsilon)?;
            groups.push(GroupSample {
                source: trajs[0].source.clone(),
                trajectories: trajs,
                rewards,
                advantages,
            });
        }

        for _ in 0..cfg.updates_per_batch {
            all_stats.push(policy_update(policy, ref_policy, &groups, cfg)?);
        }
    }
    Ok(all_stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_corpus, Lexicon};
    use crate::reward::TokenClassifier;
    use crate::scorers::OracleScorer;
    use rand::{Rng, SeedableRng};

    fn lexicon() -> Lexicon {
        Lexicon::build(3, 4, 2).unwrap()
    }

    fn randomize(policy: &mut ToyPolicy, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in policy.w_concept_mut().iter_mut() {
            *v = (rng.random::<f64>() * 2.0 - 1.0) * scale;
        }
        for v in policy.w_prev_mut().iter_mut() {
            *v = (rng.random::<f64>() * 2.0 - 1.0) * scale;
        }
    }

    fn doc(lex: &Lexicon, concepts: &[usize]) -> SourceDoc {
        SourceDoc {
            tokens: concepts.iter().map(|&c| lex.source_lexeme(c).to_string()).collect(),
            concept_set: concepts.to_vec(),
        }
    }

    fn breakdown(final_reward: f64) -> RewardBreakdown {
        RewardBreakdown {
            gate: true,
            sem: final_reward,
            p_len: 0.0,
            p_rep: 0.0,
            shaped: final_reward,
            final_reward,
        }
    }

    #[test]
    fn test_group_advantages_grpo_hand_values() {
        let a = group_advantages(&[1.0, 2.0, 3.0], AdvantageVariant::Grpo, 1e-6).unwrap();
        let std = (2.0f64 / 3.0).sqrt();
        assert!((a[0] - (-1.0 / (std + 1e-6))).abs() < 1e-12);
        assert!(a[1].abs() < 1e-12);
        assert!((a[2] - 1.0 / (std + 1e-6)).abs() < 1e-12);
        assert!((a[2] - 1.2247).abs() < 1e-4);
        assert!((a[0] + 1.2247).abs() < 1e-4);
    }

    #[test]
    fn test_group_advantages_dr_grpo_hand_values() {
        let a = group_advantages(&[1.0, 2.0, 3.0], AdvantageVariant::DrGrpo, 1e-6).unwrap();
        assert_eq!(a, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn test_group_advantages_degenerate_cases() {
        assert!(group_advantages(&[1.0], AdvantageVariant::Grpo, 1e-6).is_err());
        // 0.4 is not exactly representable, so allow float-level residue
        let a = group_advantages(&[0.4; 6], AdvantageVariant::Grpo, 1e-6).unwrap();
        assert!(a.iter().all(|&x| x.abs() < 1e-9));
        let a = group_advantages(&[0.4; 6], AdvantageVariant::DrGrpo, 1e-6).unwrap();
        assert!(a.iter().all(|&x| x.abs() < 1e-9));
        let a = group_advantages(&[0.5; 6], AdvantageVariant::Grpo, 1e-6).unwrap();
        assert!(a.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn test_group_advantages_mean_and_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let rewards: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
            let a = group_advantages(&rewards, AdvantageVariant::Grpo, 1e-6).unwrap();
            let mean = a.iter().sum::<f64>() / a.len() as f64;
            assert!(mean.abs() < 1e-9);
            let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / a.len() as f64;
            let raw_mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
            let raw_std = (rewards.iter().map(|r| (r - raw_mean).powi(2)).sum::<f64>()
                / rewards.len() as f64)
                .sqrt();
            if raw_std > 1e-6 {
                assert!((var.sqrt() - 1.0).abs() < 1e-4, "std {}", var.sqrt());
            }
        }
    }

    #[test]
    fn test_group_advantages_shift_and_scale() {
        let rewards = [0.2, 0.9, 0.4, 0.7];
        for variant in [AdvantageVariant::Grpo, AdvantageVariant::DrGrpo] {
            let base = group_advantages(&rewards, variant, 1e-6).unwrap();
            let shifted: Vec<f64> = rewards.iter().map(|r| r + 5.0).collect();
            let a = group_advantages(&shifted, variant, 1e-6).unwrap();
            for (x, y) in base.iter().zip(&a) {
                assert!((x - y).abs() < 1e-9, "shift broke {variant:?}");
            }
        }
        let scaled: Vec<f64> = rewards.iter().map(|r| r * 3.0).collect();
        let base = group_advantages(&rewards, AdvantageVariant::Grpo, 1e-6).unwrap();
        let a = group_advantages(&scaled, AdvantageVariant::Grpo, 1e-6).unwrap();
        for (x, y) in base.iter().zip(&a) {
            assert!((x - y).abs() < 1e-4);
        }
        let base = group_advantages(&rewards, AdvantageVariant::DrGrpo, 1e-6).unwrap();
        let a = group_advantages(&scaled, AdvantageVariant::DrGrpo, 1e-6).unwrap();
        for (x, y) in base.iter().zip(&a) {
            assert!((3.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn test_kl_zero_for_identical_policies() {
        let lex = lexicon();
        let mut policy = ToyPolicy::new(&lex, 12).unwrap();
        randomize(&mut policy, 1, 1.0);
        let reference = policy.clone();
        let traj = policy.sample(&doc(&lex, &[0, 2]), 1.0, 3).unwrap();
        let kl = kl_to_reference(&policy, &reference, &traj).unwrap();
        assert_eq!(kl, 0.0);
    }

    #[test]
    fn test_kl_non_negative_and_matches_brute_force() {
        let lex = lexicon();
        let mut policy = ToyPolicy::new(&lex, 12).unwrap();
        let mut reference = ToyPolicy::new(&lex, 12).unwrap();
        for seed in 0..10u64 {
            randomize(&mut policy, seed, 1.5);
            randomize(&mut reference, seed + 100, 1.5);
            let src = doc(&lex, &[0, 3]);
            let traj = policy.sample(&src, 1.0, seed).unwrap();
            let kl = kl_to_reference(&policy, &reference, &traj).unwrap();
            assert!(kl >= 0.0);

            // independent oracle via the public next-token distributions
            let mut total = 0.0;
            let mut steps = 0usize;
            let mut prefix: Vec<String> = Vec::new();
            for tok in traj.tokens.iter().map(Some).chain([None]) {
                if tok.is_none() && !traj.terminated {
                    break;
                }
                let p = policy.next_token_dist(&src, &prefix).unwrap();
                let q = reference.next_token_dist(&src, &prefix).unwrap();
                total += p
                    .iter()
                    .zip(&q)
                    .map(|(&pi, &qi)| pi * (pi.ln() - qi.ln()))
                    .sum::<f64>();
                steps += 1;
                if let Some(tok) = tok {
                    prefix.push(tok.clone());
                }
            }
            let oracle = total / steps as f64;
            assert!((kl - oracle).abs() < 1e-12, "kl {kl} oracle {oracle}");
        }
    }

    #[test]
    fn test_policy_update_noop_when_nothing_to_learn() {
        let lex = lexicon();
        let mut policy = ToyPolicy::new(&lex, 12).unwrap();
        randomize(&mut policy, 2, 1.0);
        let reference = policy.clone();
        let src = doc(&lex, &[1, 2]);
        let trajs: Vec<Trajectory> = (0..3)
            .map(|s| policy.sample(&src, 1.0, s).unwrap())
            .collect();
        let groups = [GroupSample {
            source: src,
            rewards: trajs.iter().map(|_| breakdown(0.5)).collect(),
            advantages: vec![0.0; trajs.len()],
            trajectories: trajs,
        }];
        let before = policy.clone();
        let stats = policy_update(&mut policy, &reference, &groups, &GrpoConfig::default()).unwrap();
        assert_eq!(policy, before);
        assert_eq!(stats.surrogate_loss, 0.0);
        assert_eq!(stats.mean_kl_to_ref, 0.0);
        assert_eq!(stats.grad_norm, 0.0);
    }

    #[test]
    fn test_positive_advantage_increases_trajectory_logprob() {
        let lex = lexicon();
        let mut policy = ToyPolicy::new(&lex, 12).unwrap();
        randomize(&mut policy, 7, 0.5);
        let reference = policy.clone();
        let src = doc(&lex, &[0, 1]);
        let up = policy.sample(&src, 1.0, 21).unwrap();
        let other = policy.sample(&src, 1.0, 22).unwrap();
        let before = policy.trajectory_logprob(&up);
        let groups = [GroupSample {
            source: src,
            rewards: vec![breakdown(1.0), breakdown(0.0)],
            advantages: vec![1.0, 0.0],
            trajectories: vec![up.clone(), other],
        }];
        let cfg = GrpoConfig {
            kl_beta: 0.0,
            learning_rate: 0.05,
            ..GrpoConfig::default()
        };
        policy_update(&mut policy, &reference, &groups, &cfg).unwrap();
        let after = policy.trajectory_logprob(&up);
        assert!(after > before, "{after} vs {before}");
    }

    #[test]
    fn test_surrogate_gradient_matches_finite_differences() {
        let lex = lexicon();
        let mut sampler = ToyPolicy::new(&lex, 8).unwrap();
        randomize(&mut sampler, 31, 0.8);
        // current policy deviates from the sampler so ratios stray from 1
        let mut policy = sampler.clone();
        {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            for v in policy.w_concept_mut().iter_mut() {
                *v += (rng.random::<f64>() - 0.5) * 0.2;
            }
            for v in policy.w_prev_mut().iter_mut() {
                *v += (rng.random::<f64>() - 0.5) * 0.2;
            }
        }
        let mut reference = ToyPolicy::new(&lex, 8).unwrap();
        randomize(&mut reference, 99, 0.8);

        let mut groups = Vec::new();
        for (gi, concepts) in [[0usize, 2], [1, 3]].iter().enumerate() {
            let src = doc(&lex, concepts);
            let trajs: Vec<Trajectory> = (0..2)
                .map(|s| sampler.sample(&src, 1.0, 1000 + (gi as u64) * 10 + s).unwrap())
                .collect();
            let rewards: Vec<RewardBreakdown> =
                trajs.iter().enumerate().map(|(i, _)| breakdown(i as f64 * 0.6)).collect();
            let finals: Vec<f64> = rewards.iter().map(|b| b.final_reward).collect();
            let advantages = group_advantages(&finals, AdvantageVariant::Grpo, 1e-6).unwrap();
            groups.push(GroupSample {
                source: src,
                trajectories: trajs,
                rewards,
                advantages,
            });
        }

        for variant in [AdvantageVariant::Grpo, AdvantageVariant::DrGrpo] {
            let cfg = GrpoConfig {
                advantage_variant: variant,
                kl_beta: 0.02,
                ..GrpoConfig::default()
            };
            let (_, grad) = loss_terms(&policy, &reference, &groups, &cfg, true).unwrap();
            let grad = grad.unwrap();
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            for r in 0..policy.w_concept().nrows() {
                for c in 0..policy.w_concept().ncols() {
                    let orig = policy.w_concept()[(r, c)];
                    policy.w_concept_mut()[(r, c)] = orig + h;
                    let lp = total_loss(&policy, &reference, &groups, &cfg).unwrap();
                    policy.w_concept_mut()[(r, c)] = orig - h;
                    let lm = total_loss(&policy, &reference, &groups, &cfg).unwrap();
                    policy.w_concept_mut()[(r, c)] = orig;
                    let fd = (lp - lm) / (2.0 * h);
                    let g = grad.w_concept[(r, c)];
                    let denom = g.abs().max(fd.abs()).max(1e-8);
                    worst = worst.max(((g - fd) / denom).abs());
                }
            }
            for r in 0..policy.w_prev().nrows() {
                for c in 0..policy.w_prev().ncols() {
                    let orig = policy.w_prev()[(r, c)];
                    policy.w_prev_mut()[(r, c)] = orig + h;
                    let lp = total_loss(&policy, &reference, &groups, &cfg).unwrap();
                    policy.w_prev_mut()[(r, c)] = orig - h;
                    let lm = total_loss(&policy, &reference, &groups, &cfg).unwrap();
                    policy.w_prev_mut()[(r, c)] = orig;
                    let fd = (lp - lm) / (2.0 * h);
                    let g = grad.w_prev[(r, c)];
                    let denom = g.abs().max(fd.abs()).max(1e-8);
                    worst = worst.max(((g - fd) / denom).abs());
                }
            }
            assert!(worst < 1e-3, "worst relative error {worst} for {variant:?}");
        }
    }

    #[test]
    fn test_update_direction_matches_reinforce_with_baseline() {
        // with clipping disabled, beta 0, and on-policy samples (ratio 1),
        // the step must equal learning_rate times the gradient of
        // (1/n) sum_i norm_i A_i log pi(traj_i), probed by finite differences
        let lex = lexicon();
        let mut policy = ToyPolicy::new(&lex, 8).unwrap();
        randomize(&mut policy, 51, 0.7);
        let reference = policy.clone();
        let src = doc(&lex, &[0, 3]);
        let trajs: Vec<Trajectory> = (0..2)
            .map(|s| policy.sample(&src, 1.0, 300 + s).unwrap())
            .collect();
        let advantages = vec![0.8, -0.3];
        let groups = [GroupSample {
            source: src.clone(),
            rewards: trajs.iter().map(|_| breakdown(0.0)).collect(),
            advantages: advantages.clone(),
            trajectories: trajs.clone(),
        }];
        let cfg = GrpoConfig {
            clip_eps: 1e9,
            kl_beta: 0.0,
            learning_rate: 1.0,
            advantage_variant: AdvantageVariant::Grpo,
            ..GrpoConfig::default()
        };
        let mut updated = policy.clone();
        policy_update(&mut updated, &reference, &groups, &cfg).unwrap();

        let j = |p: &ToyPolicy| -> f64 {
            let n = trajs.len() as f64;
            trajs
                .iter()
                .zip(&advantages)
                .map(|(t, &a)| {
                    let norm = 1.0 / t.per_token_logprob.len() as f64;
                    a * norm * p.trajectory_logprob(t)
                })
                .sum::<f64>()
                / n
        };
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for r in 0..policy.w_prev().nrows() {
            for c in 0..policy.w_prev().ncols() {
                let orig = policy.w_prev()[(r, c)];
                policy.w_prev_mut()[(r, c)] = orig + h;
                let jp = j(&policy);
                policy.w_prev_mut()[(r, c)] = orig - h;
                let jm = j(&policy);
                policy.w_prev_mut()[(r, c)] = orig;
                let fd = (jp - jm) / (2.0 * h);
                let step = updated.w_prev()[(r, c)] - orig;
                let denom = fd.abs().max(step.abs()).max(1e-8);
                worst = worst.max(((step - fd) / denom).abs());
            }
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }

    #[test]
    fn test_rl_epoch_deterministic_and_zero_lr_noop() {
        let lex = Lexicon::build(5, 6, 2).unwrap();
        let bundle = gen_corpus(&lex, 4, 8, 0, (2, 4), 0.2, 9).unwrap();
        let items: Vec<RlExample> = bundle
            .source_only
            .iter()
            .cloned()
            .map(RlExample::source_anchored)
            .collect();
        let mut policy = ToyPolicy::new(&lex, 12).unwrap();
        randomize(&mut policy, 5, 0.3);
        let reference = policy.clone();
        let scorer = OracleScorer::new(lex.clone());
        let reward_cfg = RewardConfig::default();
        let rules = GateRules::new(TokenClassifier::from_lexicon(&lex), &reward_cfg);
        let cfg = GrpoConfig {
            group_size: 4,
            learning_rate: 0.0,
            ..GrpoConfig::default()
        };
        let before = policy.clone();
        let stats_a = rl_epoch(
            &mut policy, &reference, &items, &scorer, &rules, &reward_cfg, &cfg, 4, 13,
        )
        .unwrap();
        assert_eq!(policy, before);
        assert_eq!(stats_a.len(), 2);

        let mut policy_b = before.clone();
        let stats_b = rl_epoch(
            &mut policy_b, &reference, &items, &scorer, &rules, &reward_cfg, &cfg, 4, 13,
        )
        .unwrap();
        assert_eq!(stats_a, stats_b);
    }

    #[test]
    fn test_rl_epoch_learns_on_oracle_reward() {
        let lex = Lexicon::build(5, 6, 2).unwrap();
        let bundle = gen_corpus(&lex, 4, 24, 0, (2, 4), 0.2, 9).unwrap();
        let items: Vec<RlExample> = bundle
            .source_only
            .iter()
            .cloned()
            .map(RlExample::source_anchored)
            .collect();
        let mut policy = ToyPolicy::new(&lex, 12).unwrap();
        let reference = policy.clone();
        let scorer = OracleScorer::new(lex.clone());
        let reward_cfg = RewardConfig::default();
        let rules = GateRules::new(TokenClassifier::from_lexicon(&lex), &reward_cfg);
        let cfg = GrpoConfig {
            group_size: 6,
            learning_rate: 0.8,
            ..GrpoConfig::default()
        };
        let mut first = Vec::new();
        let mut last = Vec::new();
        for epoch in 0..6 {
            let stats = rl_epoch(
                &mut policy, &reference, &items, &scorer, &rules, &reward_cfg, &cfg, 8, 100 + epoch,
            )
            .unwrap();
            let mean = stats.iter().map(|s| s.mean_reward).sum::<f64>() / stats.len() as f64;
            if epoch == 0 {
                first.push(mean);
            }
            if epoch == 5 {
                last.push(mean);
            }
        }
        assert!(
            last[0] > first[0],
            "reward did not improve: {} -> {}",
            first[0],
            last[0]
        );
    }
}
