//! Subcommand implementations: training, head fitting, generation,
//! evaluation, and serving.

use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};

use couplet_core::checkpoint::save_checkpoint;
use couplet_core::corpus::{
    collect_head_stats, default_split_sizes, encode_corpus, load_corpus, make_splits,
    split_indices, RawCouplet,
};
use couplet_core::eval::evaluate_testset;
use couplet_core::heads::HeadPosterior;
use couplet_core::lm::{train_lm, LmConfig, LmModel, TrainHyper};
use couplet_core::rerank::ToneLexicon;
use couplet_core::s2s::{train_s2s, S2sConfig, S2sModel};
use couplet_core::vocab::Vocab;

use crate::config::AppConfig;
use crate::pipeline::Pipeline;

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("cannot create directory {}", dir.display()))?;
        }
    }
    Ok(())
}

fn load_training_corpus(cfg: &AppConfig) -> Result<Vec<RawCouplet>> {
    let path = cfg
        .opt_path("corpus")
        .ok_or_else(|| anyhow!("no corpus configured; set `corpus` or pass --corpus"))?;
    let loaded = load_corpus(&path)?;
    if loaded.skipped > 0 {
        eprintln!("corpus: skipped {} malformed line(s)", loaded.skipped);
    }
    if loaded.pairs.is_empty() {
        bail!("corpus {} holds no usable couplets", path.display());
    }
    println!("corpus: {} couplets from {}", loaded.pairs.len(), path.display());
    Ok(loaded.pairs)
}

/// Load the shared vocabulary, or build it from the corpus (applying the
/// frequency cutoff) and write it next to the other artifacts.
fn load_or_build_vocab(cfg: &AppConfig, corpus: &[RawCouplet]) -> Result<Vocab> {
    let path = cfg.path("vocab", "data/vocab.tsv");
    if path.exists() {
        let vocab = Vocab::load(&path)?;
        println!("vocab: {} entries from {}", vocab.size(), path.display());
        return Ok(vocab);
    }
    let min_freq = cfg.u64_or("min_freq", 10)?;
    let vocab = Vocab::build(corpus, min_freq)?;
    ensure_parent(&path)?;
    vocab.save(&path)?;
    println!("vocab: built {} entries (min_freq {min_freq}), wrote {}", vocab.size(), path.display());
    Ok(vocab)
}

fn split_sizes(cfg: &AppConfig, n: usize) -> Result<(usize, usize)> {
    let (dval, dtest) = default_split_sizes(n);
    Ok((cfg.opt_usize("val_n")?.unwrap_or(dval), cfg.opt_usize("test_n")?.unwrap_or(dtest)))
}

fn hyper_from(cfg: &AppConfig) -> Result<TrainHyper> {
    Ok(TrainHyper {
        batch_size: cfg.usize_or("batch_size", 128)?,
        lr: cfg.f64_or("lr", 0.001)?,
        epochs: cfg.usize_or("epochs", 10)?,
        clip_norm: cfg.f64_or("clip_norm", 5.0)?,
    })
}

fn report_training(kind: &str, losses: &[f64], val: &[f64], best_epoch: usize) {
    for (i, (t, v)) in losses.iter().zip(val.iter()).enumerate() {
        println!("{kind} epoch {:>3}: train {:.4}  val {:.4}", i + 1, t, v);
    }
    if !losses.is_empty() {
        println!("{kind}: best validation at epoch {}", best_epoch + 1);
    }
}

pub fn train_lm_cmd(cfg: &AppConfig) -> Result<()> {
    let corpus = load_training_corpus(cfg)?;
    let vocab = load_or_build_vocab(cfg, &corpus)?;
    let encoded = encode_corpus(&corpus, &vocab);
    let (val_n, test_n) = split_sizes(cfg, encoded.len())?;
    let split = make_splits(&encoded, val_n, test_n, cfg.u64_or("split_seed", 1)?)?;
    println!("split: train {} / val {} / test {}", split.train.len(), split.validation.len(), split.test.len());

    let model = LmModel::new(
        LmConfig {
            cell: cfg.cell_or("lm_cell", couplet_core::cell::CellKind::Lstm)?,
            layers: cfg.usize_or("lm_layers", 2)?,
            hidden: cfg.usize_or("lm_hidden", 64)?,
            embedding: cfg.usize_or("lm_embedding", 32)?,
            min_len: cfg.usize_or("min_len", 5)?,
            max_len: cfg.usize_or("max_len", 12)?,
        },
        vocab.size(),
    )?;
    let hyper = hyper_from(cfg)?;
    let seed = cfg.u64_or("seed", 42)?;
    let out = train_lm(&split, &model, &hyper, &vocab, seed)?;
    report_training("lm", &out.train_losses, &out.val_losses, out.best_epoch);

    let ckpt = cfg.path("lm_checkpoint", "models/lm.ckpt");
    ensure_parent(&ckpt)?;
    save_checkpoint(&out.params, &ckpt)?;
    println!("lm: wrote {}", ckpt.display());
    Ok(())
}

pub fn train_s2s_cmd(cfg: &AppConfig) -> Result<()> {
    let corpus = load_training_corpus(cfg)?;
    let vocab = load_or_build_vocab(cfg, &corpus)?;
    let encoded = encode_corpus(&corpus, &vocab);
    let (val_n, test_n) = split_sizes(cfg, encoded.len())?;
    let split = make_splits(&encoded, val_n, test_n, cfg.u64_or("split_seed", 1)?)?;
    println!("split: train {} / val {} / test {}", split.train.len(), split.validation.len(), split.test.len());

    let model = S2sModel::new(
        S2sConfig {
            cell: cfg.cell_or("s2s_cell", couplet_core::cell::CellKind::Lstm)?,
            layers: cfg.usize_or("s2s_layers", 2)?,
            hidden: cfg.usize_or("s2s_hidden", 64)?,
            embedding: cfg.usize_or("s2s_embedding", 32)?,
            attn_dim: cfg.usize_or("s2s_attn", 64)?,
        },
        vocab.size(),
    )?;
    let hyper = hyper_from(cfg)?;
    let seed = cfg.u64_or("seed", 42)?;
    let out = train_s2s(&split, &model, &hyper, &vocab, seed)?;
    report_training("s2s", &out.train_losses, &out.val_losses, out.best_epoch);

    let ckpt = cfg.path("s2s_checkpoint", "models/s2s.ckpt");
    ensure_parent(&ckpt)?;
    save_checkpoint(&out.params, &ckpt)?;
    println!("s2s: wrote {}", ckpt.display());
    Ok(())
}

pub fn fit_heads_cmd(cfg: &AppConfig) -> Result<()> {
    let corpus = load_training_corpus(cfg)?;
    let stats = collect_head_stats(&corpus);
    let posterior = HeadPosterior::fit(&stats, cfg.f64_or("alpha", 1.0)?)?;
    let path = cfg.path("head_table", "models/heads.tsv");
    ensure_parent(&path)?;
    posterior.save(&path)?;
    println!("heads: {} characters, wrote {}", stats.len(), path.display());
    Ok(())
}

pub fn generate_cmd(cfg: &AppConfig, input: &str, sample: bool) -> Result<()> {
    let pipeline = Pipeline::load(cfg)?;
    let out = pipeline.run_generate(input, sample)?;
    if out.heads.degenerate {
        eprintln!("warning: fewer than two distinct usable characters; both clauses share a head");
    }
    println!("heads: {} / {}", out.heads.k1, out.heads.k2);
    println!("best:  {}  {}", out.best.candidate.antecedent, out.best.candidate.subsequent);
    println!();
    println!(
        "{:<4} {:<14} {:<14} {:>7} {:>5} {:>5} {:>5} {:>5} {:>9}",
        "#", "antecedent", "subsequent", "total", "len", "rep", "tone", "sent", "logprob"
    );
    for (i, s) in out.pool.iter().enumerate() {
        println!(
            "{:<4} {:<14} {:<14} {:>7.4} {:>5.2} {:>5.2} {:>5.2} {:>5.2} {:>9.3}",
            i + 1,
            s.candidate.antecedent,
            s.candidate.subsequent,
            s.total,
            s.scores.length,
            s.scores.repetition,
            s.scores.tone,
            s.scores.sentiment,
            s.candidate.logprob,
        );
    }
    Ok(())
}

pub fn eval_cmd(cfg: &AppConfig) -> Result<()> {
    let pipeline = Pipeline::load(cfg)?;
    let corpus = load_training_corpus(cfg)?;
    let (val_n, test_n) = split_sizes(cfg, corpus.len())?;
    let (_, test_idx, _) = split_indices(corpus.len(), val_n, test_n, cfg.u64_or("split_seed", 1)?)?;
    if test_idx.is_empty() {
        bail!("test split is empty; set test_n > 0");
    }
    let test_pairs: Vec<RawCouplet> = test_idx.iter().map(|&i| corpus[i].clone()).collect();

    let mut generator = |k1: char, k2: char| pipeline.couplet_for_heads(k1, k2);
    let report = evaluate_testset(&mut generator, &test_pairs, &pipeline.tones)?;
    println!("{report}");
    println!("{}", report.summary_line());
    Ok(())
}

pub fn eval_tones(cfg: &AppConfig) -> Result<ToneLexicon> {
    ToneLexicon::load(&cfg.path("tones", "data/tones.tsv")).map_err(Into::into)
}

pub fn serve_cmd(cfg: &AppConfig, bind: &str) -> Result<()> {
    let pipeline = Arc::new(Pipeline::load(cfg)?);
    crate::server::serve(pipeline, bind)
}
