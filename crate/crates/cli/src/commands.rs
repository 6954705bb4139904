use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use coherent_core::augment::{
    build_probe_set, read_probes, sample_negative, write_probes, Aspect, Lexicons, NegativeRecord, ProbeConfig,
    ProbeMode,
};
use coherent_core::corpus::{encode_document, read_jsonl, write_jsonl, AugmentedSequence, Document, TokenId, Vocab};
use coherent_core::decode::{generate_all, strip_special};
use coherent_core::eval::{
    aspect_ppl, bleu_n, distinct4, distinct4_per_text, lexical_repetition, perplexity, semantic_repetition, LrMode,
    MetricReport, ModelScorer,
};
use coherent_core::model::{save_checkpoint, Model, OptimizerState};
use coherent_core::seed::{rng_for, Salt};
use coherent_core::synth::generate_corpus;
use coherent_core::trainer::{
    gradient_check, make_batch, prepare_corpus, GradCheckConfig, LossTerm, TrainMode, Trainer,
};
use coherent_core::Error as CoreError;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigArgs, RunConfig};
use crate::exit::usage;
use crate::io::{
    create_parent, load_corpus, load_documents, load_model, load_vocab, oracle, require, sidecar, vocab_for,
    write_manifest,
};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LOSS_LOG: &str = "loss.jsonl";
pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Pretrain,
    Finetune,
    FinetuneAux,
}

fn resolve(args: &ConfigArgs, seed_env: Option<&str>) -> Result<RunConfig> {
    let cfg = args.resolve(seed_env)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Pretraining resumes a checkpoint up to `max_steps` total updates;
/// fine-tuning warm-starts from one and runs `max_steps` more.
pub fn train(args: &ConfigArgs, seed_env: Option<&str>, no_sen: bool, no_dis: bool, regime: Regime) -> Result<()> {
    let mut cfg = resolve(args, seed_env)?;
    if no_sen {
        cfg.lambda2 = 0.0;
    }
    if no_dis {
        cfg.lambda1 = 0.0;
    }
    let docs = load_corpus(&cfg)?;
    let ckpt = cfg.checkpoint.as_ref().map(|_| load_model(&cfg)).transpose()?;
    let vocab = match (&cfg.vocab, &ckpt) {
        (None, None) => Vocab::build(&docs, cfg.min_freq).map_err(|e| usage(format!("cannot build vocabulary: {e}")))?,
        _ => vocab_for(&cfg, ckpt.as_ref())?,
    };
    let mode = match regime {
        Regime::Pretrain => TrainMode::Pretrain,
        Regime::Finetune => TrainMode::Finetune,
        Regime::FinetuneAux => TrainMode::FinetuneAux,
    };
    let (model, opt) = match ckpt {
        Some(c) => {
            if c.model.config().vocab_size != vocab.len() {
                bail!(usage(format!(
                    "vocabulary has {} entries but the checkpoint expects {}",
                    vocab.len(),
                    c.model.config().vocab_size
                )));
            }
            let opt = c.optimizer.unwrap_or_else(|| OptimizerState::zeros(c.model.num_parameters()));
            (c.model, opt)
        }
        None => {
            let model = Model::new(cfg.model_config(vocab.len()), cfg.seed).map_err(|e| usage(e.to_string()))?;
            let n = model.num_parameters();
            (model, OptimizerState::zeros(n))
        }
    };
    let max_len = model.config().max_len;
    let corpus = prepare_corpus(&docs, &vocab, max_len).map_err(|e| usage(e.to_string()))?;
    let mut tcfg = cfg.train_config(mode);
    if regime != Regime::Pretrain {
        tcfg.max_steps = opt.step + cfg.max_steps;
    }
    let teacher = oracle(&cfg, &vocab)?;
    info!(
        "{:?}: {} documents, vocabulary {}, {} parameters, steps {}..{}",
        mode,
        corpus.len(),
        vocab.len(),
        model.num_parameters(),
        opt.step,
        tcfg.max_steps
    );

    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("cannot create {}", cfg.output_dir.display()))?;
    let log_path = cfg.output_dir.join(LOSS_LOG);
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("cannot write {}", log_path.display()))?);
    let mut trainer = Trainer::resume(model, opt, tcfg.clone(), &corpus, teacher.as_ref())?;
    let mut write_err = None;
    let log_every = cfg.log_every.max(1);
    let outcome = trainer.run(|r| {
        if r.step % log_every == 0 {
            info!(
                "step {} l_total {:.4} l_lm {:.4} l_sen {:.4} l_dis {:.4}",
                r.step, r.l_total, r.l_lm, r.l_sen, r.l_dis
            );
        }
        if write_err.is_none() {
            if let Err(e) = serde_json::to_writer(&mut log, r).map_err(anyhow::Error::from).and_then(|_| Ok(writeln!(log)?)) {
                write_err = Some(e);
            }
        }
    });
    log.flush()?;
    if let Some(e) = write_err {
        return Err(e.context(format!("cannot write {}", log_path.display())));
    }
    outcome.context("training aborted")?;

    let (model, opt) = trainer.into_parts();
    let ckpt_dir = cfg.output_dir.join(CHECKPOINT_DIR);
    save_checkpoint(&ckpt_dir, &model, Some(&opt), cfg.seed, Some(&vocab), serde_json::to_value(&tcfg)?)?;
    info!("saved {} after step {}", ckpt_dir.display(), opt.step);
    let mut inputs = vec![require(&cfg.corpus, "corpus")?];
    inputs.extend(cfg.checkpoint.as_deref());
    inputs.extend(cfg.vocab.as_deref());
    let command = match regime {
        Regime::Pretrain => "pretrain",
        Regime::Finetune => "finetune",
        Regime::FinetuneAux => "finetune --with-aux",
    };
    write_manifest(&cfg.output_dir.join(RUN_MANIFEST), command, &cfg, &inputs, &[&ckpt_dir, &log_path])
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub raw_tokens: Vec<String>,
    pub text: String,
}

pub fn generate(args: &ConfigArgs, seed_env: Option<&str>, input: &Path, output: &Path) -> Result<()> {
    let cfg = resolve(args, seed_env)?;
    let ckpt = load_model(&cfg)?;
    let vocab = vocab_for(&cfg, Some(&ckpt))?;
    let prompts = load_documents(input)?;
    let max_len = ckpt.model.config().max_len;
    let encoded: Vec<(String, Vec<TokenId>)> = prompts
        .iter()
        .map(|d| {
            let mut ids = vocab.encode_text(&d.input_text);
            ids.truncate(max_len);
            (d.id.clone(), ids)
        })
        .collect();
    let dcfg = cfg.decode_config();
    info!("generating {} texts (top_p {}, temperature {})", encoded.len(), dcfg.top_p, dcfg.temperature);
    let outputs = generate_all(&ckpt.model, &encoded, &dcfg)?;
    let records: Vec<GenerationRecord> = encoded
        .iter()
        .zip(&outputs)
        .map(|((id, _), ids)| GenerationRecord {
            id: id.clone(),
            raw_tokens: ids.iter().map(|&t| vocab.token(t).to_string()).collect(),
            text: vocab.decode(&strip_special(ids)),
        })
        .collect();
    create_parent(output)?;
    write_jsonl(output, &records)?;
    let mut inputs = vec![input, require(&cfg.checkpoint, "checkpoint")?];
    inputs.extend(cfg.vocab.as_deref());
    write_manifest(&sidecar(output), "generate", &cfg, &inputs, &[output])
}

pub struct EvalOptions<'a> {
    pub metrics: &'a str,
    pub generations: Option<&'a Path>,
    pub output: Option<&'a Path>,
    pub lr_repeats: bool,
    pub distinct_per_text: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Metric {
    Ppl,
    Bleu(usize),
    Lr(usize),
    Sr(usize),
    Distinct4,
}

impl Metric {
    fn parse(name: &str) -> Option<Metric> {
        let num = |prefix: &str| name.strip_prefix(prefix).and_then(|n| n.parse::<usize>().ok()).filter(|&n| n > 0);
        match name {
            "ppl" => Some(Metric::Ppl),
            "d4" => Some(Metric::Distinct4),
            _ => num("lr")
                .map(Metric::Lr)
                .or_else(|| num("sr").map(Metric::Sr))
                .or_else(|| num("b").map(Metric::Bleu)),
        }
    }
}

fn parse_metrics(list: &str) -> Result<Vec<(String, Metric)>> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m = Metric::parse(name).ok_or_else(|| usage(format!("unknown metric {name:?}")))?;
        out.push((name.to_string(), m));
    }
    if out.is_empty() {
        bail!(usage("no metrics requested"));
    }
    Ok(out)
}

/// Generated texts as sentence lists, split at `<sen>`.
fn generated_sentences(rec: &GenerationRecord, vocab: &Vocab) -> Vec<Vec<TokenId>> {
    let ids: Vec<TokenId> = rec.raw_tokens.iter().map(|t| vocab.id_or_reserved(t)).collect();
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    for t in strip_keep_sen(&ids) {
        if t == coherent_core::corpus::SEN {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
        } else {
            current.push(t);
        }
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    sentences
}

fn strip_keep_sen(ids: &[TokenId]) -> Vec<TokenId> {
    ids.iter()
        .copied()
        .filter(|&t| t == coherent_core::corpus::SEN || !strip_special(&[t]).is_empty())
        .collect()
}

pub fn eval(args: &ConfigArgs, seed_env: Option<&str>, opts: &EvalOptions<'_>) -> Result<()> {
    let cfg = resolve(args, seed_env)?;
    let metrics = parse_metrics(opts.metrics)?;
    let needs_model = metrics.iter().any(|(_, m)| *m == Metric::Ppl);
    let needs_refs = metrics.iter().any(|(_, m)| matches!(m, Metric::Ppl | Metric::Bleu(_)));
    let needs_gens = metrics.iter().any(|(_, m)| *m != Metric::Ppl);

    let ckpt = if needs_model || cfg.vocab.is_none() {
        Some(load_model(&cfg)?)
    } else {
        None
    };
    let vocab = vocab_for(&cfg, ckpt.as_ref())?;
    let refs: Vec<Document> = if needs_refs { load_corpus(&cfg)? } else { Vec::new() };
    let gens: Vec<GenerationRecord> = match (needs_gens, opts.generations) {
        (false, _) => Vec::new(),
        (true, None) => bail!(usage("metrics other than ppl need --generations")),
        (true, Some(p)) => {
            if !p.exists() {
                bail!(usage(format!("generations not found: {}", p.display())));
            }
            read_jsonl(p).map_err(|e| usage(format!("cannot read generations {}: {e}", p.display())))?
        }
    };
    let gen_tokens: Vec<Vec<TokenId>> = gens
        .iter()
        .map(|g| strip_special(&g.raw_tokens.iter().map(|t| vocab.id_or_reserved(t)).collect::<Vec<_>>()))
        .collect();

    let mut report = MetricReport::default();
    for (name, metric) in &metrics {
        let value = match *metric {
            Metric::Ppl => {
                let model = &ckpt.as_ref().expect("loaded for ppl").model;
                let max_len = model.config().max_len;
                let examples: Vec<(Vec<TokenId>, Vec<TokenId>)> = prepare_corpus(&refs, &vocab, max_len)?
                    .iter()
                    .map(|s| (s.input_tokens.clone(), AugmentedSequence::from_sentences(&s.sentences).ids))
                    .collect();
                let p = perplexity(&ModelScorer(model), &examples)?;
                report.counts.insert("ppl_positions".into(), p.positions);
                p.ppl
            }
            Metric::Bleu(n) => {
                let by_id: BTreeMap<&str, &Document> = refs.iter().map(|d| (d.id.as_str(), d)).collect();
                let mut cands = Vec::new();
                let mut targets = Vec::new();
                for (g, toks) in gens.iter().zip(&gen_tokens) {
                    match by_id.get(g.id.as_str()) {
                        Some(d) => {
                            cands.push(toks.clone());
                            targets.push(vocab.encode_text(&d.target_text));
                        }
                        None => warn!("no reference for generation {}", g.id),
                    }
                }
                report.counts.insert(format!("{name}_pairs"), cands.len());
                bleu_n(&cands, &targets, n)?
            }
            Metric::Lr(n) => {
                let mode = if opts.lr_repeats {
                    LrMode::Repeats
                } else {
                    LrMode::Occurrences
                };
                lexical_repetition(&gen_tokens, n, mode)?
            }
            Metric::Sr(n) => {
                let teacher = oracle(&cfg, &vocab)?;
                let texts: Vec<Vec<Vec<TokenId>>> = gens.iter().map(|g| generated_sentences(g, &vocab)).collect();
                let r = semantic_repetition(&texts, n, teacher.as_ref())?;
                report.counts.insert(format!("{name}_skipped"), r.skipped);
                r.value
            }
            Metric::Distinct4 => {
                if opts.distinct_per_text {
                    distinct4_per_text(&gen_tokens)?
                } else {
                    distinct4(&gen_tokens)?
                }
            }
        };
        report.values.insert(name.clone(), value);
    }
    let output = opts.output.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join("eval.json"));
    create_parent(&output)?;
    fs::write(&output, serde_json::to_string_pretty(&report)? + "\n")?;
    println!("{}", serde_json::to_string(&report)?);
    let mut inputs: Vec<&Path> = cfg.checkpoint.iter().map(|p| p.as_path()).collect();
    inputs.extend(cfg.corpus.as_deref().filter(|_| needs_refs));
    inputs.extend(opts.generations);
    write_manifest(&sidecar(&output), "eval", &cfg, &inputs, &[&output])
}

pub struct ProbeBuildOptions<'a> {
    pub aspect: &'a str,
    pub output: &'a Path,
    pub mode: &'a str,
    pub theta_rel: Option<f64>,
    pub lexicons: Option<&'a Path>,
}

pub fn probe_build(args: &ConfigArgs, seed_env: Option<&str>, opts: &ProbeBuildOptions<'_>) -> Result<()> {
    let cfg = resolve(args, seed_env)?;
    let aspect: Aspect = opts.aspect.parse().map_err(|_| usage(format!("unknown aspect {:?}", opts.aspect)))?;
    let mode: ProbeMode = serde_json::from_value(serde_json::Value::String(opts.mode.to_string()))
        .map_err(|_| usage(format!("unknown probe mode {:?}", opts.mode)))?;
    let docs = load_corpus(&cfg)?;
    let ckpt = match (&cfg.vocab, &cfg.checkpoint) {
        (None, Some(_)) => Some(load_model(&cfg)?),
        _ => None,
    };
    let vocab = match (&cfg.vocab, &ckpt) {
        (None, None) => Vocab::build(&docs, cfg.min_freq).map_err(|e| usage(e.to_string()))?,
        _ => vocab_for(&cfg, ckpt.as_ref())?,
    };
    let lexicons = match opts.lexicons {
        Some(dir) => Lexicons::load_dir(dir).map_err(|e| usage(format!("cannot read lexicons: {e}")))?,
        None => Lexicons::default(),
    };
    let mut pcfg = ProbeConfig {
        mode,
        ..Default::default()
    };
    if let Some(t) = opts.theta_rel {
        pcfg.theta_rel = t;
    }
    let segmented = docs
        .iter()
        .filter_map(|d| match encode_document(d, &vocab) {
            Ok(s) => s.truncated(cfg.max_len),
            Err(e) => {
                warn!("skipping {}: {e}", d.id);
                None
            }
        })
        .collect::<Vec<_>>();
    let teacher = oracle(&cfg, &vocab)?;
    let set = build_probe_set(&segmented, aspect, teacher.as_ref(), &lexicons, &vocab, &pcfg, cfg.seed)?;
    info!("{} probe examples for {aspect}", set.examples.len());
    create_parent(opts.output)?;
    write_probes(opts.output, &set.examples, &vocab)?;
    let mut inputs = vec![require(&cfg.corpus, "corpus")?];
    inputs.extend(opts.lexicons);
    write_manifest(&sidecar(opts.output), "probe build", &cfg, &inputs, &[opts.output])
}

pub fn probe_score(args: &ConfigArgs, seed_env: Option<&str>, probes: &Path, output: Option<&Path>) -> Result<()> {
    let cfg = resolve(args, seed_env)?;
    let ckpt = load_model(&cfg)?;
    let vocab = vocab_for(&cfg, Some(&ckpt))?;
    if !probes.exists() {
        bail!(usage(format!("probe file not found: {}", probes.display())));
    }
    let examples = read_probes(probes, &vocab).map_err(|e| usage(format!("cannot read probes: {e}")))?;
    let table = aspect_ppl(&ModelScorer(&ckpt.model), &examples)?;
    let output = output.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join("probe_scores.json"));
    create_parent(&output)?;
    fs::write(&output, serde_json::to_string_pretty(&table)? + "\n")?;
    println!("{}", serde_json::to_string(&table)?);
    write_manifest(
        &sidecar(&output),
        "probe score",
        &cfg,
        &[probes, require(&cfg.checkpoint, "checkpoint")?],
        &[&output],
    )
}

pub fn negatives(args: &ConfigArgs, seed_env: Option<&str>, output: &Path, per_doc: usize) -> Result<()> {
    let cfg = resolve(args, seed_env)?;
    let docs = load_corpus(&cfg)?;
    let vocab = match &cfg.vocab {
        Some(p) => load_vocab(p)?,
        None => Vocab::build(&docs, cfg.min_freq).map_err(|e| usage(e.to_string()))?,
    };
    let corpus = prepare_corpus(&docs, &vocab, cfg.max_len).map_err(|e| usage(e.to_string()))?;
    let mut records = Vec::new();
    for doc in &corpus {
        for r in 0..per_doc {
            let mut rng = rng_for(cfg.seed, &[Salt::Str("negative-file"), Salt::Str(&doc.id), Salt::Int(r as u64)]);
            match sample_negative(doc, &corpus, &mut rng) {
                Ok(s) => records.push(NegativeRecord::from_sample(&s, &vocab)),
                Err(CoreError::NoFeasibleNegative(id)) => warn!("no negative for {id}"),
                Err(e) => return Err(e.into()),
            }
        }
    }
    create_parent(output)?;
    write_jsonl(output, &records)?;
    info!("wrote {} negatives", records.len());
    write_manifest(&sidecar(output), "negatives", &cfg, &[require(&cfg.corpus, "corpus")?], &[output])
}

pub struct GradcheckOptions {
    pub coords: usize,
    pub tolerance: f64,
    pub step: f64,
    pub samples: usize,
}

pub fn gradcheck(args: &ConfigArgs, seed_env: Option<&str>, opts: &GradcheckOptions) -> Result<()> {
    let cfg = resolve(args, seed_env)?;
    let docs = match &cfg.corpus {
        Some(_) => load_corpus(&cfg)?,
        None => generate_corpus(16, cfg.seed),
    };
    let ckpt = cfg.checkpoint.as_ref().map(|_| load_model(&cfg)).transpose()?;
    let vocab = match (&cfg.vocab, &ckpt) {
        (None, None) => Vocab::build(&docs, cfg.min_freq).map_err(|e| usage(e.to_string()))?,
        _ => vocab_for(&cfg, ckpt.as_ref())?,
    };
    let model = match ckpt {
        Some(c) => c.model,
        None => Model::new(cfg.model_config(vocab.len()), cfg.seed).map_err(|e| usage(e.to_string()))?,
    };
    let corpus = prepare_corpus(&docs, &vocab, model.config().max_len).map_err(|e| usage(e.to_string()))?;
    let tcfg = coherent_core::trainer::TrainConfig {
        batch_size: opts.samples.max(1),
        ..cfg.train_config(TrainMode::Pretrain)
    };
    let batch = make_batch(&corpus, &tcfg, 0, model.config().max_len)?;
    let teacher = oracle(&cfg, &vocab)?;
    let gcfg = GradCheckConfig {
        step: opts.step,
        coords: opts.coords,
        tolerance: opts.tolerance,
        seed: cfg.seed,
        ..Default::default()
    };
    let mut all_passed = true;
    for term in LossTerm::ALL {
        let report = gradient_check(&model, &batch, teacher.as_ref(), &cfg.objective(), term, &gcfg)?;
        println!("{}", serde_json::to_string(&report)?);
        if !report.passed {
            all_passed = false;
            let tensors: std::collections::BTreeSet<&str> = report.failures.iter().map(|f| f.tensor.as_str()).collect();
            warn!("{}: max relative error {:.3e} in {:?}", term.as_str(), report.max_rel_err, tensors);
        }
    }
    if !all_passed {
        bail!("gradient check exceeded tolerance {}", opts.tolerance);
    }
    Ok(())
}

pub fn synth(num_docs: usize, seed: u64, output: &Path) -> Result<()> {
    if num_docs == 0 {
        bail!(usage("--num-docs must be positive"));
    }
    create_parent(output)?;
    write_jsonl(output, &generate_corpus(num_docs, seed))?;
    info!("wrote {num_docs} synthetic stories to {}", output.display());
    Ok(())
}
