//! Desk-scale learning checks: the language model memorizes a small corpus
//! to low perplexity, and the encoder-decoder learns a deterministic
//! character mapping to high teacher-forced accuracy.

use couplet_core::cell::CellKind;
use couplet_core::corpus::{encode_corpus, make_splits, RawCouplet};
use couplet_core::lm::{train_lm, LmConfig, LmModel, TrainHyper};
use couplet_core::s2s::{train_s2s, S2sConfig, S2sModel};
use couplet_core::vocab::Vocab;

/// 50 clauses over a 50-character alphabet: each clause opens with a unique
/// head and continues along the alphabet cycle, so every continuation is
/// unambiguous and the corpus is memorizable.
fn cyclic_corpus(n: usize, len: usize) -> Vec<RawCouplet> {
    let alphabet: Vec<char> = (0..n).map(|i| char::from_u32(0x4e00 + i as u32).unwrap()).collect();
    (0..n)
        .map(|i| {
            let antecedent: Vec<char> = (0..len).map(|j| alphabet[(i + j) % n]).collect();
            let subsequent: Vec<char> = (0..len).map(|j| alphabet[(i + j + n / 2) % n]).collect();
            RawCouplet { antecedent, subsequent }
        })
        .collect()
}

#[test]
fn lm_overfits_small_corpus_to_low_perplexity() {
    let corpus = cyclic_corpus(50, 6);
    let vocab = Vocab::build(&corpus, 1).unwrap();
    let encoded = encode_corpus(&corpus, &vocab);
    let split = make_splits(&encoded, 0, 0, 1).unwrap();
    let model = LmModel::new(
        LmConfig { cell: CellKind::Lstm, layers: 2, hidden: 48, embedding: 24, min_len: 5, max_len: 12 },
        vocab.size(),
    )
    .unwrap();
    let hyper = TrainHyper { batch_size: 10, lr: 0.01, epochs: 200, clip_norm: 5.0 };
    let out = train_lm(&split, &model, &hyper, &vocab, 7).unwrap();

    let mean_loss: f64 = split
        .train
        .iter()
        .map(|p| model.sequence_loss(&out.params, p.antecedent(), vocab.eos_id()).unwrap())
        .sum::<f64>()
        / split.train.len() as f64;
    let perplexity = mean_loss.exp();
    assert!(perplexity < 1.5, "perplexity {perplexity} after {} epochs", hyper.epochs);
}

#[test]
fn lm_beats_uniform_baseline_within_thirty_epochs() {
    let corpus = cyclic_corpus(50, 6);
    let vocab = Vocab::build(&corpus, 1).unwrap();
    let encoded = encode_corpus(&corpus, &vocab);
    let split = make_splits(&encoded, 0, 0, 1).unwrap();
    let model = LmModel::new(
        LmConfig { cell: CellKind::Lstm, layers: 2, hidden: 48, embedding: 24, min_len: 5, max_len: 12 },
        vocab.size(),
    )
    .unwrap();
    let hyper = TrainHyper { batch_size: 10, lr: 0.01, epochs: 30, clip_norm: 5.0 };
    let out = train_lm(&split, &model, &hyper, &vocab, 11).unwrap();
    let baseline = (vocab.size() as f64).ln();
    let last = *out.train_losses.last().unwrap();
    assert!(last < baseline, "loss {last} never fell below the uniform baseline {baseline}");
}

#[test]
fn s2s_learns_a_deterministic_character_mapping() {
    // subsequent[i] = shift(antecedent[i]) by a fixed offset, so the
    // attention model only has to learn a per-character substitution.
    let corpus = cyclic_corpus(20, 5);
    let vocab = Vocab::build(&corpus, 1).unwrap();
    let encoded = encode_corpus(&corpus, &vocab);
    let split = make_splits(&encoded, 0, 0, 1).unwrap();
    let model = S2sModel::new(
        S2sConfig { cell: CellKind::Lstm, layers: 2, hidden: 48, embedding: 24, attn_dim: 32 },
        vocab.size(),
    )
    .unwrap();
    let hyper = TrainHyper { batch_size: 5, lr: 0.01, epochs: 120, clip_norm: 5.0 };
    let out = train_s2s(&split, &model, &hyper, &vocab, 3).unwrap();
    let acc = model.teacher_forced_accuracy(&out.params, &split.train).unwrap();
    assert!(acc > 0.95, "held-in accuracy {acc}");
}

#[test]
fn s2s_zero_epochs_returns_initial_params() {
    let corpus = cyclic_corpus(10, 4);
    let vocab = Vocab::build(&corpus, 1).unwrap();
    let encoded = encode_corpus(&corpus, &vocab);
    let split = make_splits(&encoded, 0, 0, 1).unwrap();
    let model = S2sModel::new(
        S2sConfig { cell: CellKind::Lstm, layers: 1, hidden: 8, embedding: 4, attn_dim: 4 },
        vocab.size(),
    )
    .unwrap();
    let hyper = TrainHyper { epochs: 0, batch_size: 4, ..Default::default() };
    let out = train_s2s(&split, &model, &hyper, &vocab, 5).unwrap();
    assert!(out.params.values_equal(&model.init_params(5)));
}

#[test]
fn s2s_training_is_deterministic() {
    let corpus = cyclic_corpus(12, 4);
    let vocab = Vocab::build(&corpus, 1).unwrap();
    let encoded = encode_corpus(&corpus, &vocab);
    let split = make_splits(&encoded, 2, 2, 1).unwrap();
    let model = S2sModel::new(
        S2sConfig { cell: CellKind::Lstm, layers: 1, hidden: 12, embedding: 6, attn_dim: 8 },
        vocab.size(),
    )
    .unwrap();
    let hyper = TrainHyper { batch_size: 4, lr: 0.005, epochs: 4, clip_norm: 5.0 };
    let a = train_s2s(&split, &model, &hyper, &vocab, 21).unwrap();
    let b = train_s2s(&split, &model, &hyper, &vocab, 21).unwrap();
    assert_eq!(a.train_losses, b.train_losses);
    assert_eq!(a.val_losses, b.val_losses);
    assert!(a.params.values_equal(&b.params));
}

#[test]
fn trained_lm_checkpoints_round_trip() {
    let corpus = cyclic_corpus(10, 4);
    let vocab = Vocab::build(&corpus, 1).unwrap();
    let encoded = encode_corpus(&corpus, &vocab);
    let split = make_splits(&encoded, 0, 0, 1).unwrap();
    let model = LmModel::new(
        LmConfig { cell: CellKind::Lstm, layers: 1, hidden: 8, embedding: 4, min_len: 2, max_len: 6 },
        vocab.size(),
    )
    .unwrap();
    let hyper = TrainHyper { batch_size: 4, lr: 0.01, epochs: 3, clip_norm: 5.0 };
    let out = train_lm(&split, &model, &hyper, &vocab, 9).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lm.ckpt");
    couplet_core::checkpoint::save_checkpoint(&out.params, &path).unwrap();
    let loaded = couplet_core::checkpoint::load_checkpoint(&path).unwrap();
    let rebuilt = LmModel::from_params(&loaded, 2, 6).unwrap();
    assert_eq!(rebuilt.vocab_size, vocab.size());
    assert_eq!(rebuilt.config.cell, CellKind::Lstm);

    // Save -> load -> save is byte identical.
    let path2 = dir.path().join("lm2.ckpt");
    couplet_core::checkpoint::save_checkpoint(&loaded, &path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}
