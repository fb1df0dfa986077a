use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use couplet_cli::commands;
use couplet_cli::config::{config_key_help, AppConfig};

/// Acrostic couplet generation: train the two stage models, fit the
/// head-character table, then generate, evaluate, or serve.
#[derive(Parser)]
#[command(name = "couplet", version, after_long_help = config_key_help())]
struct Cli {
    /// Config file (falls back to the COUPLET_CONFIG environment variable).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for training, splits and decoding; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the training subcommands; every flag overrides the
/// matching config key.
#[derive(Args, Default)]
struct TrainOverrides {
    /// Training corpus, `antecedent<TAB>subsequent` per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Vocabulary table to load, or to build and write when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Vocabulary frequency cutoff used when building.
    #[arg(long)]
    min_freq: Option<u64>,
    /// Validation pairs.
    #[arg(long)]
    val_n: Option<usize>,
    /// Test pairs.
    #[arg(long)]
    test_n: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Global gradient-norm cap.
    #[arg(long)]
    clip_norm: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the antecedent language model and write its checkpoint.
    TrainLm {
        #[command(flatten)]
        train: TrainOverrides,
        /// Checkpoint output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cell kind: lstm | rnn.
        #[arg(long)]
        cell: Option<String>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        embedding: Option<usize>,
        #[arg(long)]
        min_len: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Train the attention encoder-decoder and write its checkpoint.
    TrainS2s {
        #[command(flatten)]
        train: TrainOverrides,
        /// Checkpoint output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cell kind: lstm | rnn.
        #[arg(long)]
        cell: Option<String>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        embedding: Option<usize>,
        #[arg(long)]
        attn_dim: Option<usize>,
    },
    /// Fit the head-character posterior table from the corpus.
    FitHeads {
        /// Training corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Table output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Additive smoothing.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Generate a couplet from a 4-character input.
    Generate {
        /// Exactly 4 characters carrying the user's intent.
        #[arg(long)]
        input: String,
        /// Sample head characters by posterior instead of taking the top 2.
        #[arg(long)]
        sample: bool,
    },
    /// Regenerate the test split and print the metric report.
    Eval {},
    /// Serve the JSON endpoint.
    Serve {
        /// Bind address.
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

fn load_config(cli: &Cli) -> Result<AppConfig> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os("COUPLET_CONFIG").map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => AppConfig::load(&p)?,
        None => AppConfig::empty(),
    };
    if let Some(seed) = cli.seed {
        cfg.set("seed", seed.to_string());
    }
    Ok(cfg)
}

fn apply_train_overrides(cfg: &mut AppConfig, t: &TrainOverrides) {
    if let Some(p) = &t.corpus {
        cfg.set("corpus", p.display().to_string());
    }
    if let Some(p) = &t.vocab {
        cfg.set("vocab", p.display().to_string());
    }
    if let Some(v) = t.min_freq {
        cfg.set("min_freq", v.to_string());
    }
    if let Some(v) = t.val_n {
        cfg.set("val_n", v.to_string());
    }
    if let Some(v) = t.test_n {
        cfg.set("test_n", v.to_string());
    }
    if let Some(v) = t.batch_size {
        cfg.set("batch_size", v.to_string());
    }
    if let Some(v) = t.lr {
        cfg.set("lr", v.to_string());
    }
    if let Some(v) = t.epochs {
        cfg.set("epochs", v.to_string());
    }
    if let Some(v) = t.clip_norm {
        cfg.set("clip_norm", v.to_string());
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::TrainLm { train, out, cell, layers, hidden, embedding, min_len, max_len } => {
            apply_train_overrides(&mut cfg, train);
            if let Some(p) = out {
                cfg.set("lm_checkpoint", p.display().to_string());
            }
            if let Some(v) = cell {
                cfg.set("lm_cell", v.clone());
            }
            if let Some(v) = layers {
                cfg.set("lm_layers", v.to_string());
            }
            if let Some(v) = hidden {
                cfg.set("lm_hidden", v.to_string());
            }
            if let Some(v) = embedding {
                cfg.set("lm_embedding", v.to_string());
            }
            if let Some(v) = min_len {
                cfg.set("min_len", v.to_string());
            }
            if let Some(v) = max_len {
                cfg.set("max_len", v.to_string());
            }
            commands::train_lm_cmd(&cfg)
        }
        Command::TrainS2s { train, out, cell, layers, hidden, embedding, attn_dim } => {
            apply_train_overrides(&mut cfg, train);
            if let Some(p) = out {
                cfg.set("s2s_checkpoint", p.display().to_string());
            }
            if let Some(v) = cell {
                cfg.set("s2s_cell", v.clone());
            }
            if let Some(v) = layers {
                cfg.set("s2s_layers", v.to_string());
            }
            if let Some(v) = hidden {
                cfg.set("s2s_hidden", v.to_string());
            }
            if let Some(v) = embedding {
                cfg.set("s2s_embedding", v.to_string());
            }
            if let Some(v) = attn_dim {
                cfg.set("s2s_attn", v.to_string());
            }
            commands::train_s2s_cmd(&cfg)
        }
        Command::FitHeads { corpus, out, alpha } => {
            if let Some(p) = corpus {
                cfg.set("corpus", p.display().to_string());
            }
            if let Some(p) = out {
                cfg.set("head_table", p.display().to_string());
            }
            if let Some(v) = alpha {
                cfg.set("alpha", v.to_string());
            }
            commands::fit_heads_cmd(&cfg)
        }
        Command::Generate { input, sample } => commands::generate_cmd(&cfg, input, *sample),
        Command::Eval {} => commands::eval_cmd(&cfg),
        Command::Serve { bind } => commands::serve_cmd(&cfg, bind),
    }
}

fn main() {
    // Die quietly when stdout closes early (`couplet generate | head`)
    // instead of panicking on the broken pipe.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
