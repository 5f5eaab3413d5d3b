//! Train-reinforce-recover orchestration.
//!
//! The pipeline initializes target-language form with supervised training on
//! the parallel split, freezes that checkpoint as the RL reference, runs
//! group-relative RL with a safeguarded semantic reward on source-only data,
//! and finishes with a short supervised recovery pass on the same parallel
//! split. Every stage checkpoint is persisted and evaluated on the dev
//! split; telemetry streams to JSONL and a final JSON report echoes the full
//! configuration. Given the same config file, two runs produce identical
//! reports except for wall-clock fields.

pub mod config;
pub mod metrics;
pub mod report;

pub use config::{
    AnchorSide, CorpusConfig, PipelineConfig, ScorerConfig, ScorerKind, StagePlan, Variant,
};
pub use metrics::{
    decode_split, evaluate, gold_metrics, ngram_overlap, pairwise_winrate, DecodedExample,
    Metrics, Winrate,
};
pub use report::{
    read_json, write_json, CompareReport, RunReport, StageReport, StageSeeds, TelemetryLine,
    TelemetryWriter, VariantOutcome,
};

use std::path::Path;
use std::time::Instant;

use crate::corpus::{gen_corpus, load_corpus, save_corpus, CorpusBundle, Lexicon};
use crate::error::{Result, SemrlError};
use crate::grpo::{rl_epoch, RlExample, UpdateStats};
use crate::policy::{save_checkpoint, CheckpointMeta, ToyPolicy};
use crate::reward::{GateRules, TokenClassifier};
use crate::scorers::{train_contrastive, OracleScorer, RemoteReranker, SemanticScorer};
use crate::seeding::{derive_seed, streams};

/// Load the corpus from `data_dir` when configured, otherwise synthesize it
/// from the corpus section.
pub fn load_or_generate_corpus(cfg: &PipelineConfig) -> Result<(Lexicon, CorpusBundle)> {
    if let Some(dir) = &cfg.data_dir {
        return load_corpus(Path::new(dir)).map_err(|e| {
            SemrlError::Config(format!("corpus not readable from {dir:?}: {e}"))
        });
    }
    let lexicon = Lexicon::build(cfg.seed, cfg.corpus.n_concepts, cfg.corpus.n_neutral)?;
    let bundle = gen_corpus(
        &lexicon,
        cfg.corpus.n_parallel,
        cfg.corpus.m_source,
        cfg.corpus.n_dev,
        (cfg.corpus.len_min, cfg.corpus.len_max),
        cfg.corpus.filler_rate,
        cfg.seed,
    )?;
    Ok((lexicon, bundle))
}

/// Build the configured semantic scorer. The embedding scorer is trained
/// contrastively on the parallel split first.
pub fn build_scorer(
    cfg: &PipelineConfig,
    lexicon: &Lexicon,
    bundle: &CorpusBundle,
) -> Result<Box<dyn SemanticScorer>> {
    match cfg.scorer.kind {
        ScorerKind::Oracle => Ok(Box::new(OracleScorer::new(lexicon.clone()))),
        ScorerKind::Embedding => {
            let embedder =
                train_contrastive(lexicon, &bundle.parallel, &cfg.scorer.embedding, cfg.seed)?;
            Ok(Box::new(embedder))
        }
        ScorerKind::Remote => Ok(Box::new(RemoteReranker::new(cfg.scorer.remote.clone())?)),
    }
}

/// RL items under the configured anchoring. Source-anchored runs draw from
/// the source-only pool; reference-anchored runs need the parallel split.
/// The embedding scorer uses the parallel split for both anchorings so the
/// two runs differ only in the anchor text.
pub fn rl_items(cfg: &PipelineConfig, bundle: &CorpusBundle) -> Vec<RlExample> {
    match cfg.scorer.anchor {
        AnchorSide::Reference => bundle
            .parallel
            .iter()
            .map(|ex| RlExample {
                source: ex.source.clone(),
                anchor: ex.reference.text(),
            })
            .collect(),
        AnchorSide::Source => match cfg.scorer.kind {
            ScorerKind::Embedding => bundle
                .parallel
                .iter()
                .map(|ex| RlExample {
                    source: ex.source.clone(),
                    anchor: ex.source.text(),
                })
                .collect(),
            _ => bundle
                .source_only
                .iter()
                .cloned()
                .map(RlExample::source_anchored)
                .collect(),
        },
    }
}

fn derived_seeds(seed: u64) -> StageSeeds {
    StageSeeds {
        corpus: derive_seed(seed, streams::CORPUS),
        sft: derive_seed(seed, streams::SFT),
        rl: derive_seed(seed, streams::RL),
        recover: derive_seed(seed, streams::RECOVER),
        embedder: derive_seed(seed, streams::EMBEDDER),
    }
}

fn checkpoint_meta(cfg: &PipelineConfig, stage: &str) -> Result<CheckpointMeta> {
    Ok(CheckpointMeta {
        stage: stage.to_string(),
        seed: cfg.seed,
        config: serde_json::to_value(cfg)?,
    })
}

/// Supervised initialization in place; returns per-epoch NLL (empty when
/// the plan sets zero epochs).
pub fn sft_stage(
    policy: &mut ToyPolicy,
    cfg: &PipelineConfig,
    bundle: &CorpusBundle,
) -> Result<Vec<f64>> {
    if cfg.stages.sft_epochs == 0 {
        return Ok(Vec::new());
    }
    policy.sft_train(
        &bundle.parallel,
        cfg.stages.sft_epochs,
        cfg.stages.sft_learning_rate,
        cfg.stages.sft_batch_size,
        cfg.seed,
    )
}

/// Supervised recovery in place, on the same parallel split as
/// initialization but with its own shuffle stream.
pub fn recover_stage(
    policy: &mut ToyPolicy,
    cfg: &PipelineConfig,
    bundle: &CorpusBundle,
) -> Result<Vec<f64>> {
    if cfg.stages.recover_epochs == 0 {
        return Ok(Vec::new());
    }
    policy.sft_train(
        &bundle.parallel,
        cfg.stages.recover_epochs,
        cfg.stages.recover_learning_rate,
        cfg.stages.recover_batch_size,
        derive_seed(cfg.seed, streams::RECOVER),
    )
}

/// Run the RL stage in place: `rl_epochs` passes over the items, with the
/// stage plan's variant applied to reward and optimizer configs.
pub fn rl_stage(
    policy: &mut ToyPolicy,
    reference: &ToyPolicy,
    cfg: &PipelineConfig,
    lexicon: &Lexicon,
    items: &[RlExample],
    scorer: &dyn SemanticScorer,
) -> Result<Vec<UpdateStats>> {
    let (reward_cfg, grpo_cfg) = cfg.effective_rl_configs();
    let rules = GateRules::new(TokenClassifier::from_lexicon(lexicon), &reward_cfg);
    let rl_base = derive_seed(cfg.seed, streams::RL);
    let mut updates = Vec::new();
    for epoch in 0..cfg.stages.rl_epochs {
        let stats = rl_epoch(
            policy,
            reference,
            items,
            scorer,
            &rules,
            &reward_cfg,
            &grpo_cfg,
            cfg.stages.rl_batch_size,
            derive_seed(rl_base, epoch as u64),
        )?;
        updates.extend(stats);
    }
    Ok(updates)
}

/// Execute the full train-reinforce-recover pipeline, writing checkpoints,
/// telemetry, and `report.json` into `out_dir`. On a stage failure the
/// report written so far is persisted with `complete: false` and the error
/// is returned.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<RunReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let (lexicon, bundle) = load_or_generate_corpus(cfg)?;
    if cfg.data_dir.is_none() {
        save_corpus(&out_dir.join("data"), &lexicon, &bundle)?;
    }
    let mut telemetry = TelemetryWriter::create(&out_dir.join("telemetry.jsonl"))?;
    let mut report = RunReport {
        config: cfg.clone(),
        seeds: derived_seeds(cfg.seed),
        gold: None,
        stages: Vec::new(),
        winrate_recovered_vs_sft: None,
        complete: false,
    };

    let outcome = run_stages(cfg, out_dir, &lexicon, &bundle, &mut telemetry, &mut report);
    report.complete = outcome.is_ok();
    write_json(&report, &out_dir.join("report.json"))?;
    outcome.map(|()| report)
}

fn run_stages(
    cfg: &PipelineConfig,
    out_dir: &Path,
    lexicon: &Lexicon,
    bundle: &CorpusBundle,
    telemetry: &mut TelemetryWriter,
    report: &mut RunReport,
) -> Result<()> {
    report.gold = Some(gold_metrics(&bundle.dev, lexicon, &cfg.reward)?);

    // supervised initialization of target-language form
    let started = Instant::now();
    let mut policy = ToyPolicy::new(lexicon, cfg.stages.max_len)?;
    let nll = sft_stage(&mut policy, cfg, bundle)?;
    for (epoch, &v) in nll.iter().enumerate() {
        telemetry.write(&TelemetryLine::Epoch {
            stage: "sft".into(),
            epoch,
            nll: v,
        })?;
    }
    save_checkpoint(
        &policy,
        &checkpoint_meta(cfg, "sft")?,
        &out_dir.join("policy_sft.json"),
    )?;
    report.stages.push(StageReport {
        stage: "sft".into(),
        epoch_nll: Some(nll),
        updates: None,
        metrics: evaluate(&policy, &bundle.dev, lexicon, &cfg.reward)?,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    });

    // reinforcement with the frozen supervised checkpoint as reference
    let started = Instant::now();
    let reference = policy.clone();
    let scorer = build_scorer(cfg, lexicon, bundle)?;
    let items = rl_items(cfg, bundle);
    let updates = rl_stage(&mut policy, &reference, cfg, lexicon, &items, scorer.as_ref())?;
    for (update, stats) in updates.iter().enumerate() {
        telemetry.write(&TelemetryLine::Update {
            stage: "rl".into(),
            update,
            stats: stats.clone(),
        })?;
    }
    save_checkpoint(
        &policy,
        &checkpoint_meta(cfg, "rl")?,
        &out_dir.join("policy_rl.json"),
    )?;
    report.stages.push(StageReport {
        stage: "rl".into(),
        epoch_nll: None,
        updates: Some(updates),
        metrics: evaluate(&policy, &bundle.dev, lexicon, &cfg.reward)?,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    });

    // supervised recovery on the same parallel split
    let started = Instant::now();
    let nll = recover_stage(&mut policy, cfg, bundle)?;
    for (epoch, &v) in nll.iter().enumerate() {
        telemetry.write(&TelemetryLine::Epoch {
            stage: "recover".into(),
            epoch,
            nll: v,
        })?;
    }
    save_checkpoint(
        &policy,
        &checkpoint_meta(cfg, "recovered")?,
        &out_dir.join("policy_recovered.json"),
    )?;
    report.stages.push(StageReport {
        stage: "recovered".into(),
        epoch_nll: Some(nll),
        updates: None,
        metrics: evaluate(&policy, &bundle.dev, lexicon, &cfg.reward)?,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    });

    report.winrate_recovered_vs_sft = Some(pairwise_winrate(
        &policy,
        &reference,
        &bundle.dev,
        lexicon,
        &cfg.reward,
    )?);
    Ok(())
}

/// Run the RL stage once per variant from one shared supervised checkpoint
/// and seed, and report per-variant dev metrics side by side. Recovery is
/// skipped: the comparison looks at the intermediate RL checkpoints.
pub fn compare_variants(
    cfg: &PipelineConfig,
    variants: &[Variant],
    out_dir: &Path,
) -> Result<CompareReport> {
    cfg.validate()?;
    if variants.is_empty() {
        return Err(SemrlError::Config("variant list must be non-empty".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let (lexicon, bundle) = load_or_generate_corpus(cfg)?;

    let mut sft_policy = ToyPolicy::new(&lexicon, cfg.stages.max_len)?;
    sft_stage(&mut sft_policy, cfg, &bundle)?;
    save_checkpoint(
        &sft_policy,
        &checkpoint_meta(cfg, "sft")?,
        &out_dir.join("policy_sft.json"),
    )?;

    let scorer = build_scorer(cfg, &lexicon, &bundle)?;
    let items = rl_items(cfg, &bundle);
    let mut outcomes = Vec::with_capacity(variants.len());
    for &variant in variants {
        let started = Instant::now();
        let mut var_cfg = cfg.clone();
        var_cfg.stages.variant = variant;
        let mut policy = sft_policy.clone();
        let updates = rl_stage(
            &mut policy,
            &sft_policy,
            &var_cfg,
            &lexicon,
            &items,
            scorer.as_ref(),
        )?;
        save_checkpoint(
            &policy,
            &checkpoint_meta(&var_cfg, &format!("rl_{}", variant.name()))?,
            &out_dir.join(format!("policy_rl_{}.json", variant.name())),
        )?;
        outcomes.push(VariantOutcome {
            variant,
            metrics: evaluate(&policy, &bundle.dev, &lexicon, &cfg.reward)?,
            updates,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        });
    }

    let comparison = CompareReport {
        config: cfg.clone(),
        seeds: derived_seeds(cfg.seed),
        gold: gold_metrics(&bundle.dev, &lexicon, &cfg.reward)?,
        sft_metrics: evaluate(&sft_policy, &bundle.dev, &lexicon, &cfg.reward)?,
        outcomes,
    };
    write_json(&comparison, &out_dir.join("compare.json"))?;
    Ok(comparison)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::load_checkpoint;

    fn tiny_config() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.seed = 7;
        cfg.corpus.n_concepts = 8;
        cfg.corpus.n_neutral = 3;
        cfg.corpus.n_parallel = 12;
        cfg.corpus.m_source = 24;
        cfg.corpus.n_dev = 8;
        cfg.corpus.len_min = 2;
        cfg.corpus.len_max = 5;
        cfg.stages.sft_epochs = 2;
        cfg.stages.rl_epochs = 1;
        cfg.stages.recover_epochs = 1;
        cfg.stages.max_len = 16;
        cfg.grpo.group_size = 4;
        cfg.stages.rl_batch_size = 4;
        cfg
    }

    #[test]
    fn test_degenerate_plan_keeps_sft_checkpoint() {
        let mut cfg = tiny_config();
        cfg.stages.rl_epochs = 0;
        cfg.stages.recover_epochs = 0;
        let dir = tempfile::tempdir().unwrap();
        let report = run_pipeline(&cfg, dir.path()).unwrap();
        assert!(report.complete);
        let (sft, _) = load_checkpoint(&dir.path().join("policy_sft.json")).unwrap();
        let (rec, meta) = load_checkpoint(&dir.path().join("policy_recovered.json")).unwrap();
        assert_eq!(sft, rec);
        assert_eq!(meta.stage, "recovered");
        assert_eq!(
            report.stage("sft").unwrap().metrics,
            report.stage("recovered").unwrap().metrics
        );
    }

    #[test]
    fn test_pipeline_writes_all_artifacts() {
        let cfg = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let report = run_pipeline(&cfg, dir.path()).unwrap();
        assert!(report.complete);
        assert_eq!(report.stages.len(), 3);
        assert!(report.winrate_recovered_vs_sft.is_some());
        for f in [
            "report.json",
            "telemetry.jsonl",
            "policy_sft.json",
            "policy_rl.json",
            "policy_recovered.json",
            "data/lexicon.json",
            "data/corpus.jsonl",
        ] {
            assert!(dir.path().join(f).exists(), "missing {f}");
        }
        let loaded: RunReport = read_json(&dir.path().join("report.json")).unwrap();
        assert_eq!(loaded, report);
        // rl telemetry made it into both the report and the jsonl stream
        let rl = report.stage("rl").unwrap();
        assert!(!rl.updates.as_ref().unwrap().is_empty());
        let text = std::fs::read_to_string(dir.path().join("telemetry.jsonl")).unwrap();
        assert!(text.lines().count() >= rl.updates.as_ref().unwrap().len());
    }

    #[test]
    fn test_pipeline_determinism_modulo_wall_clock() {
        let cfg = tiny_config();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = run_pipeline(&cfg, dir_a.path()).unwrap();
        let b = run_pipeline(&cfg, dir_b.path()).unwrap();
        assert_eq!(a.without_wall_clock(), b.without_wall_clock());
        let ta = std::fs::read_to_string(dir_a.path().join("telemetry.jsonl")).unwrap();
        let tb = std::fs::read_to_string(dir_b.path().join("telemetry.jsonl")).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn test_missing_data_dir_is_config_error() {
        let mut cfg = tiny_config();
        cfg.data_dir = Some("/nonexistent/corpus/dir".into());
        let dir = tempfile::tempdir().unwrap();
        let err = run_pipeline(&cfg, dir.path()).unwrap_err();
        assert!(matches!(err, SemrlError::Config(_)), "{err:?}");
    }

    #[test]
    fn test_pipeline_reuses_saved_corpus() {
        let cfg = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let report_a = run_pipeline(&cfg, dir.path()).unwrap();
        let mut cfg_b = cfg.clone();
        cfg_b.data_dir = Some(dir.path().join("data").to_string_lossy().into_owned());
        let dir_b = tempfile::tempdir().unwrap();
        let report_b = run_pipeline(&cfg_b, dir_b.path()).unwrap();
        // same corpus, same seeds: stages match apart from the config echo
        assert_eq!(
            report_a.stage("recovered").unwrap().metrics,
            report_b.stage("recovered").unwrap().metrics
        );
    }

    #[test]
    fn test_compare_variants_reports_each() {
        let cfg = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let variants = [Variant::GateOnly, Variant::GateBatchlen, Variant::GrpoControl];
        let cmp = compare_variants(&cfg, &variants, dir.path()).unwrap();
        assert_eq!(cmp.outcomes.len(), 3);
        for v in variants {
            let outcome = cmp.outcome(v).unwrap();
            assert!(!outcome.updates.is_empty());
            assert!(dir
                .path()
                .join(format!("policy_rl_{}.json", v.name()))
                .exists());
        }
        assert!(compare_variants(&cfg, &[], dir.path()).is_err());
    }

    #[test]
    fn test_compare_variants_sft_baseline_matches_pipeline() {
        let cfg = tiny_config();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let report = run_pipeline(&cfg, dir_a.path()).unwrap();
        let cmp = compare_variants(&cfg, &[Variant::GateBatchlen], dir_b.path()).unwrap();
        // the shared supervised checkpoint is the same policy in both entry points
        let (a, _) = load_checkpoint(&dir_a.path().join("policy_sft.json")).unwrap();
        let (b, _) = load_checkpoint(&dir_b.path().join("policy_sft.json")).unwrap();
        assert_eq!(a, b);
        assert_eq!(report.stage("sft").unwrap().metrics, cmp.sft_metrics);
        // and the default-variant RL stage reproduces the pipeline's
        assert_eq!(
            report.stage("rl").unwrap().metrics,
            cmp.outcome(Variant::GateBatchlen).unwrap().metrics
        );
    }
}
