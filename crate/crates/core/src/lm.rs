//! Character-level recurrent language model that writes the antecedent
//! clause from its head character.

use crate::beam::{cbs_decode, BeamConfig, Completed, DecodeRequest, Scorer};
use crate::cell::{
    infer_stack_spec, init_stack_params, stack_backward, stack_forward, zero_state_grad, CellKind,
    StackSpec, StackState,
};
use crate::corpus::DatasetSplit;
use crate::error::{CoupletError, Result};
use crate::ops::{log_softmax, softmax};
use crate::params::ParamSet;
use crate::rng::RngState;
use crate::vocab::{TokenId, Vocab};

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub cell: CellKind,
    pub layers: usize,
    pub hidden: usize,
    pub embedding: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for LmConfig {
    /// Desk-scale defaults; see `configs/full.conf` for the full-size setup.
    fn default() -> Self {
        LmConfig { cell: CellKind::Lstm, layers: 2, hidden: 64, embedding: 32, min_len: 5, max_len: 12 }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 || self.hidden < 1 || self.embedding < 1 {
            return Err(CoupletError::Argument("layers, hidden and embedding must be positive".into()));
        }
        if self.min_len < 1 || self.min_len > self.max_len {
            return Err(CoupletError::Argument(format!(
                "length bounds must satisfy 1 <= min <= max, got {}..{}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

/// Training hyperparameters shared by both trainable models.
#[derive(Debug, Clone, Copy)]
pub struct TrainHyper {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub clip_norm: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper { batch_size: 128, lr: 0.001, epochs: 10, clip_norm: 5.0 }
    }
}

/// Losses observed while training plus the best-validation parameters.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct LmModel {
    pub config: LmConfig,
    pub vocab_size: usize,
}

impl LmModel {
    pub fn new(config: LmConfig, vocab_size: usize) -> Result<LmModel> {
        config.validate()?;
        if vocab_size < 3 {
            return Err(CoupletError::Argument("vocabulary too small for a language model".into()));
        }
        Ok(LmModel { config, vocab_size })
    }

    fn stack_spec(&self) -> StackSpec {
        StackSpec {
            kind: self.config.cell,
            layers: self.config.layers,
            hidden: self.config.hidden,
            input_dim: self.config.embedding,
        }
    }

    /// Fresh uniformly initialized parameters.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = RngState::new(seed);
        let mut params = ParamSet::new();
        params.add_uniform("embed", self.vocab_size, self.config.embedding, &mut rng);
        init_stack_params(&mut params, "", &self.stack_spec(), &mut rng);
        params.add_uniform("out.w", self.vocab_size, self.config.hidden, &mut rng);
        params.add_uniform("out.b", self.vocab_size, 1, &mut rng);
        params
    }

    /// Rebuild model dimensions from checkpointed parameters. Length bounds
    /// and the vocabulary size come from the caller.
    pub fn from_params(params: &ParamSet, min_len: usize, max_len: usize) -> Result<LmModel> {
        let spec = infer_stack_spec(params, "")
            .ok_or_else(|| CoupletError::Argument("checkpoint holds no recurrent stack".into()))?;
        let embed = params.get("embed")?;
        let out = params.get("out.w")?;
        if embed.cols() != spec.input_dim || out.cols() != spec.hidden || out.rows() != embed.rows() {
            return Err(CoupletError::Shape {
                op: "lm_from_params".into(),
                detail: "embedding/output shapes disagree with the stack".into(),
            });
        }
        LmModel::new(
            LmConfig {
                cell: spec.kind,
                layers: spec.layers,
                hidden: spec.hidden,
                embedding: spec.input_dim,
                min_len,
                max_len,
            },
            embed.rows(),
        )
    }

    pub fn zero_state(&self) -> StackState {
        StackState::zeros(&self.stack_spec())
    }

    /// One recurrent step: consume `tok`, produce the next state and the
    /// logits over the following character.
    pub fn step(&self, params: &ParamSet, state: &StackState, tok: TokenId) -> Result<(StackState, Vec<f64>)> {
        if tok >= self.vocab_size {
            return Err(CoupletError::Argument(format!(
                "token {tok} out of range for vocabulary of {}",
                self.vocab_size
            )));
        }
        let spec = self.stack_spec();
        let x = params.value("embed").row(tok).to_vec();
        let (next, cache) = stack_forward(params, "", &spec, state, &x);
        let logits = self.output_logits(params, cache.top_h());
        Ok((next, logits))
    }

    fn output_logits(&self, params: &ParamSet, h: &[f64]) -> Vec<f64> {
        let w = params.value("out.w");
        let b = params.value("out.b");
        let mut logits = vec![0.0; self.vocab_size];
        w.matvec(h, &mut logits);
        for (l, bv) in logits.iter_mut().zip(b.values()) {
            *l += bv;
        }
        logits
    }

    /// Teacher-forced mean cross-entropy of a clause, `<eos>` target
    /// included: a clause of `n` characters contributes `n` predictions.
    pub fn sequence_loss(&self, params: &ParamSet, clause: &[TokenId], eos: TokenId) -> Result<f64> {
        if clause.is_empty() {
            return Err(CoupletError::Argument("cannot score an empty clause".into()));
        }
        let mut state = self.zero_state();
        let mut loss = 0.0;
        let targets: Vec<TokenId> = clause[1..].iter().copied().chain(std::iter::once(eos)).collect();
        for (t, &tok) in clause.iter().enumerate() {
            let (next, logits) = self.step(params, &state, tok)?;
            let lp = log_softmax(&logits)?;
            loss -= lp[targets[t]];
            state = next;
        }
        Ok(loss / targets.len() as f64)
    }

    /// Like `sequence_loss` but also accumulates parameter gradients,
    /// scaled by `scale` (e.g. `1 / batch_size`).
    pub fn sequence_loss_grad(
        &self,
        params: &mut ParamSet,
        clause: &[TokenId],
        eos: TokenId,
        scale: f64,
    ) -> Result<f64> {
        if clause.is_empty() {
            return Err(CoupletError::Argument("cannot score an empty clause".into()));
        }
        let spec = self.stack_spec();
        let targets: Vec<TokenId> = clause[1..].iter().copied().chain(std::iter::once(eos)).collect();
        let inv_t = 1.0 / targets.len() as f64;

        let mut state = self.zero_state();
        let mut caches = Vec::with_capacity(clause.len());
        let mut probs = Vec::with_capacity(clause.len());
        let mut loss = 0.0;
        for (t, &tok) in clause.iter().enumerate() {
            let x = params.value("embed").row(tok).to_vec();
            let (next, cache) = stack_forward(params, "", &spec, &state, &x);
            let logits = self.output_logits(params, cache.top_h());
            let p = softmax(&logits)?;
            loss -= (p[targets[t]] + crate::ops::CROSS_ENTROPY_EPS).ln();
            caches.push(cache);
            probs.push(p);
            state = next;
        }

        let mut carry = zero_state_grad(&spec);
        for t in (0..clause.len()).rev() {
            let mut d_logits = probs[t].clone();
            d_logits[targets[t]] -= 1.0;
            for v in d_logits.iter_mut() {
                *v *= scale * inv_t;
            }
            let h_top = caches[t].top_h().to_vec();
            params.grad_mut("out.w").outer_acc(&d_logits, &h_top);
            params.grad_mut("out.b").outer_acc(&d_logits, &[1.0]);
            let mut d_top = vec![0.0; self.config.hidden];
            params.value("out.w").matvec_transpose_acc(&d_logits, &mut d_top);

            let d_x = stack_backward(params, "", &spec, &caches[t], &d_top, &mut carry);
            let tok = clause[t];
            for (g, dv) in params.grad_mut("embed").row_mut(tok).iter_mut().zip(d_x.iter()) {
                *g += dv;
            }
        }
        Ok(loss * inv_t)
    }

    /// Adapter exposing the model as a next-token distribution source.
    pub fn scorer<'a>(&'a self, params: &'a ParamSet) -> LmScorer<'a> {
        LmScorer { model: self, params }
    }

    /// Decode antecedent candidates opening with `head`, best first. Clause
    /// lengths are enforced between the configured bounds by masking and
    /// forcing `<eos>`.
    pub fn generate_antecedent(
        &self,
        params: &ParamSet,
        vocab: &Vocab,
        head: TokenId,
        cfg: &BeamConfig,
    ) -> Result<Vec<Completed>> {
        if head == vocab.unk_id() || head >= self.vocab_size {
            return Err(CoupletError::Argument("head character must be a known vocabulary entry".into()));
        }
        let req = DecodeRequest {
            init: vec![head],
            min_len: self.config.min_len,
            max_len: self.config.max_len,
            eos: vocab.eos_id(),
            unk: vocab.unk_id(),
        };
        // Enough rounds to reach max_len content tokens plus the `<eos>`.
        let mut cfg = cfg.clone();
        cfg.t_max = self.config.max_len - req.init.len() + 1;
        cbs_decode(&self.scorer(params), params.value("embed"), &req, &cfg)
    }
}

pub struct LmScorer<'a> {
    model: &'a LmModel,
    params: &'a ParamSet,
}

impl<'a> Scorer for LmScorer<'a> {
    type State = StackState;

    fn vocab_size(&self) -> usize {
        self.model.vocab_size
    }

    fn begin(&self, prefix: &[TokenId]) -> (StackState, Vec<f64>) {
        let mut state = self.model.zero_state();
        let mut dist = Vec::new();
        for &tok in prefix {
            let (next, logits) = self.model.step(self.params, &state, tok).expect("valid prefix token");
            dist = log_softmax(&logits).expect("finite logits");
            state = next;
        }
        (state, dist)
    }

    fn advance(&self, state: &StackState, tok: TokenId) -> (StackState, Vec<f64>) {
        let (next, logits) = self.model.step(self.params, state, tok).expect("valid token");
        let dist = log_softmax(&logits).expect("finite logits");
        (next, dist)
    }
}

/// Train on the antecedent clauses of the split. Deterministic for a fixed
/// seed; gradients are norm-clipped every step; the parameters with the best
/// validation loss are returned.
pub fn train_lm(
    split: &DatasetSplit,
    model: &LmModel,
    hyper: &TrainHyper,
    vocab: &Vocab,
    seed: u64,
) -> Result<TrainOutcome> {
    let train: Vec<&[TokenId]> = split.train.iter().map(|p| p.antecedent()).collect();
    let val: Vec<&[TokenId]> = split.validation.iter().map(|p| p.antecedent()).collect();
    train_clauses(&train, &val, model, hyper, vocab, seed)
}

pub(crate) fn train_clauses(
    train: &[&[TokenId]],
    val: &[&[TokenId]],
    model: &LmModel,
    hyper: &TrainHyper,
    vocab: &Vocab,
    seed: u64,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(CoupletError::Argument("training split is empty".into()));
    }
    if hyper.batch_size < 1 {
        return Err(CoupletError::Argument("batch size must be positive".into()));
    }
    let mut params = model.init_params(seed);
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut train_losses = Vec::with_capacity(hyper.epochs);
    let mut val_losses = Vec::with_capacity(hyper.epochs);
    let shuffler = RngState::new(seed ^ 0x5555_aaaa_5555_aaaa);
    let eos = vocab.eos_id();
    let mut step = 0usize;

    for epoch in 0..hyper.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffler.fork(epoch as u64).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            step += 1;
            let scale = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &idx in chunk {
                batch_loss += model.sequence_loss_grad(&mut params, train[idx], eos, scale)?;
            }
            batch_loss *= scale;
            if batch_loss.is_nan() {
                return Err(CoupletError::Training { step, msg: "loss is NaN".into() });
            }
            epoch_loss += batch_loss * chunk.len() as f64;
            crate::optim::clip_global_norm(&mut params, hyper.clip_norm)?;
            crate::optim::adam_step(&mut params, hyper.lr)?;
        }
        train_losses.push(epoch_loss / train.len() as f64);

        let val_loss = if val.is_empty() {
            *train_losses.last().unwrap()
        } else {
            let mut sum = 0.0;
            for clause in val {
                sum += model.sequence_loss(&params, clause, eos)?;
            }
            sum / val.len() as f64
        };
        val_losses.push(val_loss);
        if val_loss < best_val {
            best_val = val_loss;
            best = params.clone();
            best_epoch = epoch;
        }
    }

    if hyper.epochs == 0 {
        best = params;
    }
    Ok(TrainOutcome { params: best, train_losses, val_losses, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_corpus;
    use crate::gradcheck::grad_check;

    fn tiny_model(vocab_size: usize) -> LmModel {
        LmModel::new(
            LmConfig { cell: CellKind::Lstm, layers: 2, hidden: 4, embedding: 3, min_len: 2, max_len: 6 },
            vocab_size,
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_vanilla_gives_zero_state() {
        let model = LmModel::new(
            LmConfig { cell: CellKind::VanillaRnn, layers: 1, hidden: 4, embedding: 3, min_len: 1, max_len: 8 },
            5,
        )
        .unwrap();
        let mut params = model.init_params(1);
        for (_, e) in params.iter_mut() {
            e.value.fill(0.0);
        }
        let (state, logits) = model.step(&params, &model.zero_state(), 2).unwrap();
        assert!(state.h.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(logits.len(), 5);
    }

    #[test]
    fn logits_length_is_vocab_size() {
        let model = tiny_model(7);
        let params = model.init_params(3);
        let (_, logits) = model.step(&params, &model.zero_state(), 0).unwrap();
        assert_eq!(logits.len(), 7);
    }

    #[test]
    fn step_distribution_sums_to_one() {
        let model = tiny_model(6);
        let params = model.init_params(5);
        let (_, logits) = model.step(&params, &model.zero_state(), 1).unwrap();
        let p = softmax(&logits).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn uniform_model_loss_is_ln_v() {
        // Zero weights produce constant logits -> uniform distribution.
        let model = tiny_model(6);
        let mut params = model.init_params(1);
        for (_, e) in params.iter_mut() {
            e.value.fill(0.0);
        }
        let loss = model.sequence_loss(&params, &[0, 1, 2], 5).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn single_char_clause_has_one_prediction() {
        let model = tiny_model(6);
        let mut params = model.init_params(1);
        for (_, e) in params.iter_mut() {
            e.value.fill(0.0);
        }
        // One prediction (the <eos> after the head) at uniform = ln V.
        let loss = model.sequence_loss(&params, &[3], 5).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn loss_is_nonnegative() {
        let model = tiny_model(5);
        let params = model.init_params(9);
        let loss = model.sequence_loss(&params, &[0, 2, 1, 3], 4).unwrap();
        assert!(loss >= 0.0);
    }

    #[test]
    fn empty_clause_is_error() {
        let model = tiny_model(5);
        let params = model.init_params(1);
        assert!(model.sequence_loss(&params, &[], 4).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for cell in [CellKind::VanillaRnn, CellKind::Lstm] {
            let model = LmModel::new(
                LmConfig { cell, layers: 2, hidden: 4, embedding: 3, min_len: 1, max_len: 8 },
                5,
            )
            .unwrap();
            let mut params = model.init_params(13);
            let clause = [0usize, 2, 1, 3, 2, 0];
            let err = grad_check(
                &mut params,
                |p| model.sequence_loss(p, &clause, 4).unwrap(),
                |p| model.sequence_loss_grad(p, &clause, 4, 1.0).unwrap(),
                1e-5,
            );
            assert!(err < 1e-3, "{cell:?}: rel err {err}");
        }
    }

    fn toy_split() -> (DatasetSplit, Vocab) {
        let text = "春回大地\t福满人间\n春风得意\t人寿年丰\n梅开五福\t竹报三多\n";
        let corpus = parse_corpus(text).unwrap().pairs;
        let vocab = Vocab::build(&corpus, 1).unwrap();
        let encoded = crate::corpus::encode_corpus(&corpus, &vocab);
        (crate::corpus::make_splits(&encoded, 0, 0, 1).unwrap(), vocab)
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let (split, vocab) = toy_split();
        let model = tiny_model(vocab.size());
        let hyper = TrainHyper { epochs: 0, batch_size: 2, ..Default::default() };
        let out = train_lm(&split, &model, &hyper, &vocab, 7).unwrap();
        assert!(out.params.values_equal(&model.init_params(7)));
        assert!(out.train_losses.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let (split, vocab) = toy_split();
        let model = tiny_model(vocab.size());
        let hyper = TrainHyper { epochs: 3, batch_size: 2, lr: 0.01, clip_norm: 5.0 };
        let a = train_lm(&split, &model, &hyper, &vocab, 42).unwrap();
        let b = train_lm(&split, &model, &hyper, &vocab, 42).unwrap();
        assert_eq!(a.train_losses, b.train_losses);
        assert_eq!(a.val_losses, b.val_losses);
        assert!(a.params.values_equal(&b.params));
    }

    #[test]
    fn generation_respects_head_and_bounds() {
        let (split, vocab) = toy_split();
        let model = LmModel::new(
            LmConfig { cell: CellKind::Lstm, layers: 1, hidden: 8, embedding: 4, min_len: 3, max_len: 5 },
            vocab.size(),
        )
        .unwrap();
        let hyper = TrainHyper { epochs: 5, batch_size: 3, lr: 0.05, clip_norm: 5.0 };
        let out = train_lm(&split, &model, &hyper, &vocab, 2).unwrap();
        let head = vocab.id_of('春').unwrap();
        let cfg = BeamConfig { beam_width: 4, clusters: 2, seed: 5, ..Default::default() };
        let cands = model.generate_antecedent(&out.params, &vocab, head, &cfg).unwrap();
        assert!(!cands.is_empty());
        for c in &cands {
            assert_eq!(c.content()[0], head);
            assert!(!c.content().contains(&vocab.unk_id()));
            assert!((3..=5).contains(&c.content().len()));
        }
    }

    #[test]
    fn exhaustive_beam_matches_enumerated_argmax() {
        // 3 content characters plus the two reserved ids. With an
        // exhaustive beam and n-gram blocking disabled, the top decode must
        // equal the argmax over all clauses of length 2..=3, scored by
        // stepping the same model.
        let corpus = parse_corpus("甲乙\t乙甲\n甲丙\t丙甲\n").unwrap().pairs;
        let vocab = Vocab::build(&corpus, 1).unwrap();
        assert_eq!(vocab.size(), 5);
        let model = LmModel::new(
            LmConfig { cell: CellKind::Lstm, layers: 1, hidden: 6, embedding: 4, min_len: 2, max_len: 3 },
            vocab.size(),
        )
        .unwrap();
        let params = model.init_params(31);
        let head = vocab.id_of('甲').unwrap();
        let cfg = BeamConfig {
            beam_width: 16,
            clusters: 1,
            t_max: 8,
            ngram_block: 5,
            seed: 2,
            length_normalize: false,
        };
        let got = model.generate_antecedent(&params, &vocab, head, &cfg).unwrap();

        let content: Vec<TokenId> = (0..3).collect();
        let eos = vocab.eos_id();
        let score = |clause: &[TokenId]| -> f64 {
            let mut state = model.zero_state();
            let mut lp = 0.0;
            for (i, &tok) in clause.iter().enumerate() {
                let (next, logits) = model.step(&params, &state, tok).unwrap();
                let dist = log_softmax(&logits).unwrap();
                if i + 1 < clause.len() {
                    lp += dist[clause[i + 1]];
                } else {
                    lp += dist[eos];
                }
                state = next;
            }
            lp
        };
        let mut best: Option<(Vec<TokenId>, f64)> = None;
        let mut consider = |clause: Vec<TokenId>| {
            let lp = score(&clause);
            if best.as_ref().map(|(_, b)| lp > *b).unwrap_or(true) {
                best = Some((clause, lp));
            }
        };
        for &a in &content {
            consider(vec![head, a]);
            for &b in &content {
                consider(vec![head, a, b]);
            }
        }
        let (oracle, oracle_lp) = best.unwrap();
        assert_eq!(got[0].content(), &oracle[..]);
        assert!((got[0].logprob - oracle_lp).abs() < 1e-9);
    }

    #[test]
    fn unk_head_is_rejected() {
        let (split, vocab) = toy_split();
        let model = tiny_model(vocab.size());
        let out = train_lm(&split, &model, &TrainHyper { epochs: 1, batch_size: 4, ..Default::default() }, &vocab, 3)
            .unwrap();
        let cfg = BeamConfig::default();
        assert!(model.generate_antecedent(&out.params, &vocab, vocab.unk_id(), &cfg).is_err());
    }

    #[test]
    fn from_params_round_trips_dimensions() {
        let model = tiny_model(9);
        let params = model.init_params(4);
        let rebuilt = LmModel::from_params(&params, 2, 6).unwrap();
        assert_eq!(rebuilt.vocab_size, 9);
        assert_eq!(rebuilt.config.hidden, model.config.hidden);
        assert_eq!(rebuilt.config.layers, model.config.layers);
        assert_eq!(rebuilt.config.cell, model.config.cell);
    }
}
