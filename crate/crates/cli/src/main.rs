use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod exit;
mod io;

use config::ConfigArgs;

#[derive(Parser)]
#[command(
    name = "coherent",
    version,
    about = "Train and evaluate encoder-decoder story models with sentence-similarity and sentence-order objectives",
    after_help = "Settings resolve as: --flag > HINT_SEED (seed only) > --config file > built-in default.\n\
                  Exit codes: 0 success, 2 usage or configuration error, 3 runtime abort."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on human texts plus generated negatives with all three losses.
    Pretrain(TrainArgs),
    /// Train with the language-modeling loss only (or all losses with --with-aux).
    Finetune(FinetuneArgs),
    /// Sample continuations for every input in a JSON-Lines file.
    Generate(GenerateArgs),
    /// Compute perplexity and generation metrics.
    Eval(EvalArgs),
    /// Build or score coherent/incoherent probe sets.
    #[command(subcommand)]
    Probe(ProbeCommand),
    /// Write shuffled, repeated or substituted negatives for a corpus.
    Negatives(NegativesArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic template-grammar story corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Drop the similarity objective (lambda2 = 0).
    #[arg(long)]
    no_sen: bool,
    /// Drop the order objective (lambda1 = 0).
    #[arg(long)]
    no_dis: bool,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Keep the similarity and order losses as auxiliary tasks.
    #[arg(long)]
    with_aux: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// JSON-Lines prompts with "id" and "input" fields.
    #[arg(long)]
    input: PathBuf,
    /// JSON-Lines output, one {"id", "raw_tokens", "text"} per prompt.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Comma-separated: ppl, b<n>, lr<n>, sr<n>, d4.
    #[arg(long, default_value = "ppl,b1,b2,lr2,sr1,d4")]
    metrics: String,
    /// Output of `generate`, needed by every metric except ppl.
    #[arg(long)]
    generations: Option<PathBuf>,
    /// Report path; defaults to <output-dir>/eval.json.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Count a text for LR-n when a 4-gram repeats n times after its first
    /// occurrence instead of occurring n times.
    #[arg(long)]
    lr_repeats: bool,
    /// Average Distinct-4 per text instead of pooling all 4-grams.
    #[arg(long)]
    distinct_per_text: bool,
}

#[derive(Subcommand)]
enum ProbeCommand {
    /// Select coherent texts for one aspect and perturb them.
    Build(ProbeBuildArgs),
    /// Per-polarity perplexity of a probe file.
    Score(ProbeScoreArgs),
}

#[derive(Args)]
struct ProbeBuildArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// repetition, relatedness, negation, causal or temporal.
    #[arg(long)]
    aspect: String,
    #[arg(long)]
    output: PathBuf,
    /// Causal/temporal perturbation: either, reversal or antonym.
    #[arg(long, default_value = "either")]
    mode: String,
    #[arg(long)]
    theta_rel: Option<f64>,
    /// Directory with replacement lexicon files.
    #[arg(long)]
    lexicons: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeScoreArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    probes: PathBuf,
    /// Report path; defaults to <output-dir>/probe_scores.json.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct NegativesArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    output: PathBuf,
    /// Negatives drawn per document.
    #[arg(long, default_value_t = 1)]
    per_doc: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Coordinates checked per loss.
    #[arg(long, default_value_t = 200)]
    coords: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Human texts in the checked batch, each with its negatives
    /// (synthetic stories when no corpus is set).
    #[arg(long, default_value_t = 2)]
    samples: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    num_docs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let seed_env = std::env::var(config::SEED_ENV).ok();
    let seed_env = seed_env.as_deref();
    let result = match cli.command {
        Command::Pretrain(a) => commands::train(&a.cfg, seed_env, a.no_sen, a.no_dis, commands::Regime::Pretrain),
        Command::Finetune(a) => {
            let regime = if a.with_aux {
                commands::Regime::FinetuneAux
            } else {
                commands::Regime::Finetune
            };
            commands::train(&a.train.cfg, seed_env, a.train.no_sen, a.train.no_dis, regime)
        }
        Command::Generate(a) => commands::generate(&a.cfg, seed_env, &a.input, &a.output),
        Command::Eval(a) => commands::eval(
            &a.cfg,
            seed_env,
            &commands::EvalOptions {
                metrics: &a.metrics,
                generations: a.generations.as_deref(),
                output: a.output.as_deref(),
                lr_repeats: a.lr_repeats,
                distinct_per_text: a.distinct_per_text,
            },
        ),
        Command::Probe(ProbeCommand::Build(a)) => commands::probe_build(
            &a.cfg,
            seed_env,
            &commands::ProbeBuildOptions {
                aspect: &a.aspect,
                output: &a.output,
                mode: &a.mode,
                theta_rel: a.theta_rel,
                lexicons: a.lexicons.as_deref(),
            },
        ),
        Command::Probe(ProbeCommand::Score(a)) => {
            commands::probe_score(&a.cfg, seed_env, &a.probes, a.output.as_deref())
        }
        Command::Negatives(a) => commands::negatives(&a.cfg, seed_env, &a.output, a.per_doc),
        Command::Gradcheck(a) => commands::gradcheck(
            &a.cfg,
            seed_env,
            &commands::GradcheckOptions {
                coords: a.coords,
                tolerance: a.tolerance,
                step: a.step,
                samples: a.samples,
            },
        ),
        Command::Synth(a) => commands::synth(a.num_docs, a.seed, &a.output),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}
