//! Backbone pretraining, frozen-backbone adapter training and evaluation.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorkit::{lit, Adam, LinearDecay, Var};

use super::config::{Attack, PretrainConfig, TrainConfig};
use super::data::Prepared;
use super::metrics::{bleu, chrf, ter, token_accuracy};
use crate::adapters::AdapterSpec;
use crate::error::{LabError, Result};
use crate::graphcore::GraphStructure;
use crate::params::{adapters_only, everything, frozen, Ctx, ParamStore, ADAPTER, BACKBONE};
use crate::probelab::{graph_attack, mix_seed, position_shuffle};
use crate::seq2seq::{beam_search, decode_logits, encode, DecoderBatch, EncoderBatch, Model, ModelScorer, ModelSpec, RpeMode};
use crate::subtok::{Vocab, EOS, MASK};

/// Epoch index used for position permutations drawn at evaluation time.
pub const EVAL_EPOCH: u64 = u64::MAX;

/// Stable 64-bit key of a sample id.
pub fn sample_key(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Encoder graph per sample: the true token graph or its attacked version,
/// fixed per (sample, seed).
pub fn input_graphs(samples: &[Prepared], attack: Attack, seed: u64) -> Vec<GraphStructure> {
    samples
        .iter()
        .map(|s| {
            let g = s.graph.structure();
            match attack {
                Attack::None => g,
                Attack::Graph => graph_attack(&g, mix_seed(&[seed, sample_key(&s.id)])).structure,
            }
        })
        .collect()
}

fn permutations(samples: &[&Prepared], rpe: RpeMode, epoch: u64, seed: u64) -> Option<Vec<Vec<usize>>> {
    (rpe == RpeMode::Shuffle).then(|| {
        samples
            .iter()
            .map(|s| position_shuffle(s.tokens().len(), epoch, sample_key(&s.id), seed))
            .collect()
    })
}

/// Mean token cross-entropy of `targets` given encoder inputs.
pub fn seq2seq_loss(
    ctx: &mut Ctx<'_, f32>,
    spec: &ModelSpec,
    enc: &EncoderBatch,
    targets: &[&[u32]],
    rpe: RpeMode,
) -> Result<Var> {
    let out = encode(ctx, spec, enc, rpe)?;
    let dec = DecoderBatch::teacher_forced(targets);
    let logits = decode_logits(ctx, spec, out.out, &enc.lengths, &dec, false)?;
    Ok(ctx.g.cross_entropy(logits, &dec.targets)?)
}

/// Adam state plus slot numbering by parameter name.
struct Optimizer {
    adam: Adam<f32>,
    slots: HashMap<String, usize>,
    schedule: LinearDecay,
}

impl Optimizer {
    fn new(store: &ParamStore<f32>, adam: tensorkit::AdamConfig, schedule: LinearDecay) -> Self {
        let slots = store.names().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Optimizer { adam: Adam::new(adam), slots, schedule }
    }

    fn apply(&mut self, store: &mut ParamStore<f32>, grads: Vec<(String, tensorkit::Tensor<f32>)>) -> Result<()> {
        let lr = self.schedule.at(self.adam.steps());
        self.adam.begin_step();
        for (name, g) in grads {
            let slot = self.slots[&name];
            let p = store.get_mut(&name)?;
            self.adam.update(slot, p.data_mut(), g.data(), lit(lr));
        }
        Ok(())
    }
}

fn finite_loss(ctx: &Ctx<'_, f32>, loss: Var, what: &str) -> Result<f32> {
    let v = ctx.g.value(loss).data()[0];
    if !v.is_finite() {
        return Err(LabError::Numeric(format!("{what}: loss became {v}; lower the learning rate")));
    }
    Ok(v)
}

/// Replace random spans by a single mask token each. About `mask_prob` of
/// the tokens end up hidden; span lengths are geometric with the given mean.
pub fn span_mask(tokens: &[u32], mask_prob: f64, mean_span: f64, rng: &mut impl Rng) -> Vec<u32> {
    let start_p = (mask_prob / mean_span).clamp(0.0, 1.0);
    let cont_p = 1.0 - 1.0 / mean_span;
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        if rng.gen_bool(start_p) {
            out.push(MASK);
            i += 1;
            while i < tokens.len() && rng.gen_bool(cont_p) {
                i += 1;
            }
        } else {
            out.push(tokens[i]);
            i += 1;
        }
    }
    out
}

/// One denoising pair: masked input + eos, original + eos.
fn denoise_pair(seq: &[u32], cfg: &PretrainConfig, rng: &mut impl Rng) -> (Vec<u32>, Vec<u32>) {
    let mut input = span_mask(seq, cfg.mask_prob, cfg.mean_span, rng);
    input.push(EOS);
    let mut target = seq.to_vec();
    target.push(EOS);
    (input, target)
}

fn denoise_loss_value(model: &Model, pairs: &[(Vec<u32>, Vec<u32>)], batch: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in pairs.chunks(batch.max(1)) {
        let graphs: Vec<GraphStructure> = chunk.iter().map(|(i, _)| GraphStructure::edgeless(i.len())).collect();
        let inputs: Vec<(&[u32], &GraphStructure)> = chunk.iter().zip(&graphs).map(|((i, _), g)| (i.as_slice(), g)).collect();
        let enc = EncoderBatch::new(&inputs, None)?;
        let targets: Vec<&[u32]> = chunk.iter().map(|(_, t)| t.as_slice()).collect();
        let n: usize = targets.iter().map(|t| t.len()).sum();
        let mut ctx = Ctx::new(&model.params, &frozen);
        let loss = seq2seq_loss(&mut ctx, &model.spec, &enc, &targets, RpeMode::On)?;
        total += finite_loss(&ctx, loss, "pretrain eval")? as f64 * n as f64;
        count += n;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainLog {
    /// (epoch, mean train loss, eval loss); epoch 0 is before training.
    pub rows: Vec<(usize, f64, f64)>,
}

impl PretrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,eval_loss\n");
        for (e, tl, el) in &self.rows {
            s.push_str(&format!("{e},{tl:.6},{el:.6}\n"));
        }
        s
    }
}

/// Masked-span denoising of token sequences with an edgeless encoder graph
/// and relative positions on. Every backbone tensor is trained.
pub fn pretrain_backbone(
    spec: ModelSpec,
    cfg: &PretrainConfig,
    train: &[Vec<u32>],
    eval: &[Vec<u32>],
) -> Result<(Model, PretrainLog)> {
    let spec = ModelSpec { adapter: None, ..spec };
    let mut model = Model::<f32>::init(spec, cfg.seed)?;
    let mut eval_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 1]));
    let eval_pairs: Vec<_> = eval.iter().map(|s| denoise_pair(s, cfg, &mut eval_rng)).collect();
    let mut log = PretrainLog::default();
    log.rows.push((0, f64::NAN, denoise_loss_value(&model, &eval_pairs, 64)?));
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size.max(1));
    let schedule = LinearDecay { initial: cfg.lr, total_steps: (steps_per_epoch * cfg.epochs) as u64 };
    let mut opt = Optimizer::new(&model.params, cfg.adam, schedule);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 2]));
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let pairs: Vec<_> = chunk.iter().map(|&i| denoise_pair(&train[i], cfg, &mut rng)).collect();
            let graphs: Vec<GraphStructure> = pairs.iter().map(|(i, _)| GraphStructure::edgeless(i.len())).collect();
            let inputs: Vec<(&[u32], &GraphStructure)> =
                pairs.iter().zip(&graphs).map(|((i, _), g)| (i.as_slice(), g)).collect();
            let enc = EncoderBatch::new(&inputs, None)?;
            let targets: Vec<&[u32]> = pairs.iter().map(|(_, t)| t.as_slice()).collect();
            let mut ctx = Ctx::new(&model.params, &everything);
            let loss = seq2seq_loss(&mut ctx, &model.spec, &enc, &targets, RpeMode::On)?;
            sum += finite_loss(&ctx, loss, &format!("pretrain epoch {epoch}"))? as f64;
            batches += 1;
            let mut g = ctx.g.backward(loss)?;
            let grads = ctx.gradients(&mut g);
            drop(ctx);
            opt.apply(&mut model.params, grads)?;
        }
        let eval_loss = denoise_loss_value(&model, &eval_pairs, 64)?;
        log.rows.push((epoch, sum / batches.max(1) as f64, eval_loss));
    }
    Ok((model, log))
}

/// Denoising sequences for pretraining: every text plus every linearized graph.
pub fn pretrain_sequences(samples: &[Prepared]) -> Vec<Vec<u32>> {
    let mut out = Vec::with_capacity(2 * samples.len());
    for s in samples {
        out.push(s.target[..s.target.len() - 1].to_vec());
        let t = s.tokens();
        out.push(t[..t.len() - 1].to_vec());
    }
    out
}

/// Hypotheses (eos stripped) for every sample, decoded in order.
pub fn decode(
    model: &Model,
    samples: &[Prepared],
    graphs: &[GraphStructure],
    rpe: RpeMode,
    perm_seed: u64,
    beam: usize,
) -> Result<Vec<Vec<u32>>> {
    const CHUNK: usize = 64;
    let mut out = Vec::with_capacity(samples.len());
    for (chunk, gchunk) in samples.chunks(CHUNK).zip(graphs.chunks(CHUNK)) {
        let refs: Vec<&Prepared> = chunk.iter().collect();
        let perms = permutations(&refs, rpe, EVAL_EPOCH, perm_seed);
        let inputs: Vec<(&[u32], &GraphStructure)> = chunk.iter().zip(gchunk).map(|(s, g)| (s.tokens(), g)).collect();
        let enc = EncoderBatch::new(&inputs, perms.as_deref())?;
        let scorer = ModelScorer::new(model, &[enc], rpe)?;
        for h in beam_search(&scorer, chunk.len(), beam, model.spec.max_target_len, EOS)? {
            let mut t = h.tokens;
            if t.last() == Some(&EOS) {
                t.pop();
            }
            out.push(t);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// (epoch, mean train loss, dev BLEU)
    pub rows: Vec<(usize, f64, f64)>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,dev_bleu\n");
        for (e, l, b) in &self.rows {
            s.push_str(&format!("{e},{l:.6},{b:.4}\n"));
        }
        s
    }
}

pub struct TrainOutcome {
    /// Backbone plus the adapters of the best dev epoch.
    pub model: Model,
    pub log: TrainLog,
    pub best_epoch: usize,
    pub best_dev_bleu: f64,
    /// Trainable elements over all elements.
    pub trainable_fraction: f64,
    pub backbone_checksum: String,
}

fn corpus_bleu(vocab: &Vocab, hyps: &[Vec<u32>], samples: &[Prepared]) -> Result<f64> {
    let h: Vec<String> = hyps.iter().map(|t| vocab.decode(t)).collect();
    let r: Vec<String> = samples.iter().map(|s| s.text.clone()).collect();
    bleu(&h, &r)
}

/// Attach fresh adapters to `backbone` and train them with the backbone
/// frozen, early-stopping on dev BLEU.
pub fn train_adapters(
    backbone: &Model,
    adapter: AdapterSpec,
    cfg: &TrainConfig,
    train: &[Prepared],
    dev: &[Prepared],
    vocab: &Vocab,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(LabError::Data("adapter training needs non-empty train and dev splits".into()));
    }
    let mut model = backbone.clone();
    model.attach_adapters(adapter, mix_seed(&[cfg.seed, 3]))?;
    let checksum = model.params.checksum(BACKBONE);
    let trainable: &dyn Fn(&str) -> bool = if cfg.freeze_backbone { &adapters_only } else { &everything };
    let total = model.params.count("");
    let n_trainable: usize = model.params.iter().filter(|(n, _)| trainable(n)).map(|(_, t)| t.len()).sum();
    let train_graphs = input_graphs(train, cfg.attack, cfg.seed);
    let dev_graphs = input_graphs(dev, cfg.attack, cfg.seed);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let schedule = LinearDecay { initial: cfg.lr, total_steps: (steps_per_epoch * cfg.max_epochs) as u64 };
    let mut opt = Optimizer::new(&model.params, cfg.adam, schedule);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 4]));
    let mut log = TrainLog::default();
    let mut best: Option<(usize, f64, ParamStore<f32>)> = None;
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let samples: Vec<&Prepared> = chunk.iter().map(|&i| &train[i]).collect();
            let perms = permutations(&samples, cfg.rpe_mode, epoch as u64, cfg.seed);
            let inputs: Vec<(&[u32], &GraphStructure)> = chunk.iter().map(|&i| (train[i].tokens(), &train_graphs[i])).collect();
            let enc = EncoderBatch::new(&inputs, perms.as_deref())?;
            let targets: Vec<&[u32]> = samples.iter().map(|s| s.target.as_slice()).collect();
            let mut ctx = Ctx::new(&model.params, trainable);
            let loss = seq2seq_loss(&mut ctx, &model.spec, &enc, &targets, cfg.rpe_mode)?;
            sum += finite_loss(&ctx, loss, &format!("adapter epoch {epoch}"))? as f64;
            batches += 1;
            let mut g = ctx.g.backward(loss)?;
            let grads = ctx.gradients(&mut g);
            drop(ctx);
            opt.apply(&mut model.params, grads)?;
        }
        if cfg.freeze_backbone && model.params.checksum(BACKBONE) != checksum {
            return Err(LabError::Numeric(format!("frozen backbone weights changed during epoch {epoch}")));
        }
        let hyps = decode(&model, dev, &dev_graphs, cfg.rpe_mode, cfg.seed, cfg.dev_beam)?;
        let dev_bleu = corpus_bleu(vocab, &hyps, dev)?;
        log.rows.push((epoch, sum / batches.max(1) as f64, dev_bleu));
        if best.as_ref().is_none_or(|(_, b, _)| dev_bleu > *b) {
            let mut snapshot = model.params.clone();
            snapshot.retain_prefix(if cfg.freeze_backbone { ADAPTER } else { "" });
            best = Some((epoch, dev_bleu, snapshot));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (best_epoch, best_dev_bleu, snapshot) = best.ok_or_else(|| LabError::Config("max_epochs must be at least 1".into()))?;
    for (name, t) in snapshot.iter() {
        *model.params.get_mut(name)? = t.clone();
    }
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_dev_bleu,
        trainable_fraction: n_trainable as f64 / total as f64,
        backbone_checksum: checksum,
    })
}

/// Corpus metrics of decoded hypotheses against the sample texts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub bleu: f64,
    pub chrf: f64,
    pub ter: f64,
    pub token_accuracy: f64,
}

pub fn score(vocab: &Vocab, hyps: &[Vec<u32>], samples: &[Prepared]) -> Result<Scores> {
    let h: Vec<String> = hyps.iter().map(|t| vocab.decode(t)).collect();
    let r: Vec<String> = samples.iter().map(|s| s.text.clone()).collect();
    let refs: Vec<Vec<u32>> = samples.iter().map(|s| s.target[..s.target.len() - 1].to_vec()).collect();
    Ok(Scores {
        bleu: bleu(&h, &r)?,
        chrf: chrf(&h, &r)?,
        ter: ter(&h, &r)?,
        token_accuracy: token_accuracy(hyps, &refs),
    })
}

/// Beam-decode `samples` under the same input condition used in training.
pub fn evaluate(
    model: &Model,
    vocab: &Vocab,
    samples: &[Prepared],
    rpe: RpeMode,
    attack: Attack,
    seed: u64,
    beam: usize,
) -> Result<(Scores, Vec<String>)> {
    let graphs = input_graphs(samples, attack, seed);
    let hyps = decode(model, samples, &graphs, rpe, seed, beam)?;
    let texts = hyps.iter().map(|t| vocab.decode(t)).collect();
    Ok((score(vocab, &hyps, samples)?, texts))
}
