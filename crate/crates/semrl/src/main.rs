//! Command-line front end for the semantic-reward RL laboratory.

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

use semrl::corpus::save_corpus;
use semrl::pipeline::{
    build_scorer, compare_variants, evaluate, gold_metrics, load_or_generate_corpus,
    pairwise_winrate, recover_stage, rl_items, rl_stage, run_pipeline, sft_stage, write_json,
    Metrics, PipelineConfig, ScorerKind, Variant,
};
use semrl::policy::{load_checkpoint, save_checkpoint, CheckpointMeta, ToyPolicy};

#[derive(Parser)]
#[command(
    name = "semrl",
    version,
    about = "Safeguarded semantic-reward RL on a synthetic bilingual task"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file (defaults apply when omitted)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Read the corpus from this directory instead of generating it
    #[arg(long)]
    data: Option<PathBuf>,
    /// Override the semantic scorer
    #[arg(long, value_enum)]
    scorer: Option<ScorerArg>,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum ScorerArg {
    Oracle,
    Embedding,
    Remote,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum SplitArg {
    Dev,
    Train,
}

impl From<ScorerArg> for ScorerKind {
    fn from(s: ScorerArg) -> ScorerKind {
        match s {
            ScorerArg::Oracle => ScorerKind::Oracle,
            ScorerArg::Embedding => ScorerKind::Embedding,
            ScorerArg::Remote => ScorerKind::Remote,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus into the output directory
    GenData {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Supervised initialization; writes policy_sft.json
    Sft {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// RL stage from a supervised checkpoint; writes policy_rl.json
    Rl {
        #[command(flatten)]
        common: CommonArgs,
        /// Input checkpoint (default: <out>/policy_sft.json)
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Safeguard variant for this stage
        #[arg(long)]
        variant: Option<String>,
    },
    /// Supervised recovery from an RL checkpoint; writes policy_recovered.json
    Recover {
        #[command(flatten)]
        common: CommonArgs,
        /// Input checkpoint (default: <out>/policy_rl.json)
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the dev split
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint to evaluate
        #[arg(long)]
        policy: PathBuf,
        /// Split to evaluate on
        #[arg(long, value_enum, default_value = "dev")]
        split: SplitArg,
    },
    /// Run the RL stage per safeguard variant from one shared supervised
    /// checkpoint and compare dev metrics
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// Variant to include (repeatable; default: all four)
        #[arg(long = "variant")]
        variants: Vec<String>,
    },
    /// Compare two checkpoints example by example on the dev split
    Winrate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        policy_a: PathBuf,
        #[arg(long)]
        policy_b: PathBuf,
    },
    /// Full train-reinforce-recover pipeline
    Full {
        #[command(flatten)]
        common: CommonArgs,
        /// Safeguard variant for the RL stage
        #[arg(long)]
        variant: Option<String>,
    },
}

fn effective_config(common: &CommonArgs, variant: Option<&str>) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::from_json_file(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(data) = &common.data {
        cfg.data_dir = Some(data.display().to_string());
    }
    if let Some(scorer) = common.scorer {
        cfg.scorer.kind = scorer.into();
    }
    if let Some(name) = variant {
        cfg.stages.variant = Variant::from_name(name)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_metrics(label: &str, m: &Metrics) {
    println!(
        "{label}: coverage {:.4}  length {:.2}  gate {:.3}  repetition {:.4}  overlap {:.4}  composite {:.4}",
        m.mean_coverage,
        m.mean_length,
        m.gate_pass_rate,
        m.mean_repetition_ratio,
        m.ngram_overlap,
        m.composite
    );
}

fn meta(cfg: &PipelineConfig, stage: &str) -> Result<CheckpointMeta> {
    Ok(CheckpointMeta {
        stage: stage.to_string(),
        seed: cfg.seed,
        config: serde_json::to_value(cfg)?,
    })
}

fn load_policy(path: &Path) -> Result<ToyPolicy> {
    let (policy, _) = load_checkpoint(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(policy)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { common } => {
            let cfg = effective_config(&common, None)?;
            let (lexicon, bundle) = load_or_generate_corpus(&cfg)?;
            save_corpus(&common.out, &lexicon, &bundle)?;
            println!(
                "wrote {} parallel / {} source-only / {} dev examples to {}",
                bundle.parallel.len(),
                bundle.source_only.len(),
                bundle.dev.len(),
                common.out.display()
            );
        }
        Command::Sft { common } => {
            let cfg = effective_config(&common, None)?;
            let (lexicon, bundle) = load_or_generate_corpus(&cfg)?;
            let mut policy = ToyPolicy::new(&lexicon, cfg.stages.max_len)?;
            let nll = sft_stage(&mut policy, &cfg, &bundle)?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join("policy_sft.json");
            save_checkpoint(&policy, &meta(&cfg, "sft")?, &path)?;
            let m = evaluate(&policy, &bundle.dev, &lexicon, &cfg.reward)?;
            write_json(&m, &common.out.join("sft_metrics.json"))?;
            if let (Some(first), Some(last)) = (nll.first(), nll.last()) {
                println!("sft nll: {first:.4} -> {last:.4} over {} epochs", nll.len());
            }
            print_metrics("sft", &m);
            println!("checkpoint: {}", path.display());
        }
        Command::Rl {
            common,
            policy,
            variant,
        } => {
            let cfg = effective_config(&common, variant.as_deref())?;
            let (lexicon, bundle) = load_or_generate_corpus(&cfg)?;
            let input = policy.unwrap_or_else(|| common.out.join("policy_sft.json"));
            let reference = load_policy(&input)?;
            let mut policy = reference.clone();
            let scorer = build_scorer(&cfg, &lexicon, &bundle)?;
            let items = rl_items(&cfg, &bundle);
            let updates = rl_stage(
                &mut policy,
                &reference,
                &cfg,
                &lexicon,
                &items,
                scorer.as_ref(),
            )?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join("policy_rl.json");
            save_checkpoint(&policy, &meta(&cfg, "rl")?, &path)?;
            let m = evaluate(&policy, &bundle.dev, &lexicon, &cfg.reward)?;
            write_json(&m, &common.out.join("rl_metrics.json"))?;
            if let (Some(first), Some(last)) = (updates.first(), updates.last()) {
                println!(
                    "rl reward: {:.4} -> {:.4} over {} updates (variant {})",
                    first.mean_reward,
                    last.mean_reward,
                    updates.len(),
                    cfg.stages.variant.name()
                );
            }
            print_metrics("rl", &m);
            println!("checkpoint: {}", path.display());
        }
        Command::Recover { common, policy } => {
            let cfg = effective_config(&common, None)?;
            let (lexicon, bundle) = load_or_generate_corpus(&cfg)?;
            let input = policy.unwrap_or_else(|| common.out.join("policy_rl.json"));
            let mut policy = load_policy(&input)?;
            let nll = recover_stage(&mut policy, &cfg, &bundle)?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join("policy_recovered.json");
            save_checkpoint(&policy, &meta(&cfg, "recovered")?, &path)?;
            let m = evaluate(&policy, &bundle.dev, &lexicon, &cfg.reward)?;
            write_json(&m, &common.out.join("recovered_metrics.json"))?;
            if let (Some(first), Some(last)) = (nll.first(), nll.last()) {
                println!(
                    "recover nll: {first:.4} -> {last:.4} over {} epochs",
                    nll.len()
                );
            }
            print_metrics("recovered", &m);
            println!("checkpoint: {}", path.display());
        }
        Command::Eval {
            common,
            policy,
            split,
        } => {
            let cfg = effective_config(&common, None)?;
            let (lexicon, bundle) = load_or_generate_corpus(&cfg)?;
            let policy = load_policy(&policy)?;
            let examples = match split {
                SplitArg::Dev => &bundle.dev,
                SplitArg::Train => &bundle.parallel,
            };
            let m = evaluate(&policy, examples, &lexicon, &cfg.reward)?;
            let gold = gold_metrics(examples, &lexicon, &cfg.reward)?;
            print_metrics("checkpoint", &m);
            print_metrics("gold", &gold);
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Compare { common, variants } => {
            let cfg = effective_config(&common, None)?;
            let variants = if variants.is_empty() {
                vec![
                    Variant::GateBatchlen,
                    Variant::GateOnly,
                    Variant::RefLen,
                    Variant::GrpoControl,
                ]
            } else {
                variants
                    .iter()
                    .map(|v| Variant::from_name(v))
                    .collect::<semrl::Result<Vec<_>>>()?
            };
            let cmp = compare_variants(&cfg, &variants, &common.out)?;
            print_metrics("gold", &cmp.gold);
            print_metrics("sft", &cmp.sft_metrics);
            for outcome in &cmp.outcomes {
                print_metrics(outcome.variant.name(), &outcome.metrics);
            }
            println!("comparison: {}", common.out.join("compare.json").display());
        }
        Command::Winrate {
            common,
            policy_a,
            policy_b,
        } => {
            let cfg = effective_config(&common, None)?;
            let (lexicon, bundle) = load_or_generate_corpus(&cfg)?;
            let a = load_policy(&policy_a)?;
            let b = load_policy(&policy_b)?;
            let w = pairwise_winrate(&a, &b, &bundle.dev, &lexicon, &cfg.reward)?;
            println!(
                "win fraction {:.4}, tie fraction {:.4}",
                w.win_fraction, w.tie_fraction
            );
            println!("{}", serde_json::to_string(&w)?);
        }
        Command::Full { common, variant } => {
            let cfg = effective_config(&common, variant.as_deref())?;
            let report = run_pipeline(&cfg, &common.out)?;
            if let Some(gold) = &report.gold {
                print_metrics("gold", gold);
            }
            for stage in &report.stages {
                print_metrics(&stage.stage, &stage.metrics);
            }
            if let Some(w) = &report.winrate_recovered_vs_sft {
                println!(
                    "recovered vs sft: win fraction {:.4}, tie fraction {:.4}",
                    w.win_fraction, w.tie_fraction
                );
            }
            println!("report: {}", common.out.join("report.json").display());
        }
    }
    Ok(())
}
