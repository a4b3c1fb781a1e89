//! Supervised and preference-based training objectives on a toy
//! autoregressive model.
//!
//! The model is an order-k logits table: each context of k previous tokens
//! (BOS-padded at the start) owns one row of next-token logits. That makes
//! every quantity exact and cheap: sequence log-probabilities, the SFT
//! negative-log-likelihood, the DPO objective with a frozen reference
//! model, analytic gradients, and finite-difference verification.
//!
//! All math is generic over the scalar type; `f64` is the default used by
//! the pipeline (see the aliases at the crate root).

use std::io::Read;
use std::path::Path;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{pairwise_sum, DetRng};

/// Scalar bound for everything in this module.
pub trait Scalar:
    Float + num_traits::FromPrimitive + num_traits::ToPrimitive + std::fmt::Debug + Send + Sync + 'static
{
}
impl<T> Scalar for T where
    T: Float + num_traits::FromPrimitive + num_traits::ToPrimitive + std::fmt::Debug + Send + Sync + 'static
{
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("token id {0} outside vocabulary of size {1}")]
    TokenOutOfVocab(u32, usize),
    #[error("sequence boundary {0} exceeds length {1}")]
    BadBoundary(usize, usize),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
    #[error("training diverged (loss became non-finite at step {0})")]
    Diverged(usize),
    #[error("model io: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file corrupt: {0}")]
    Corrupt(String),
}

/// Token ids with a boundary separating the conditioning prompt (before)
/// from the prediction target (after).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub boundary: usize,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>, boundary: usize) -> TokenSequence {
        TokenSequence { ids, boundary }
    }

    pub fn target_len(&self) -> usize {
        self.ids.len().saturating_sub(self.boundary)
    }
}

/// A tokenized preference triple: shared prompt, chosen and rejected
/// continuations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizedTriple {
    pub prompt: Vec<u32>,
    pub chosen: Vec<u32>,
    pub rejected: Vec<u32>,
}

impl TokenizedTriple {
    pub fn chosen_sequence(&self) -> TokenSequence {
        let mut ids = self.prompt.clone();
        ids.extend(&self.chosen);
        TokenSequence::new(ids, self.prompt.len())
    }

    pub fn rejected_sequence(&self) -> TokenSequence {
        let mut ids = self.prompt.clone();
        ids.extend(&self.rejected);
        TokenSequence::new(ids, self.prompt.len())
    }
}

/// Order-k context-conditioned logits table.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel<F: Scalar> {
    pub vocab_size: usize,
    pub order: usize,
    pub seed: u64,
    /// Row-major: `logits[ctx * vocab_size + token]`.
    pub logits: Vec<F>,
}

impl<F: Scalar> ToyModel<F> {
    /// All-zero logits: the uniform model.
    pub fn zeros(vocab_size: usize, order: usize) -> ToyModel<F> {
        let ctxs = (vocab_size + 1).pow(order as u32);
        ToyModel { vocab_size, order, seed: 0, logits: vec![F::zero(); ctxs * vocab_size] }
    }

    /// Small random initialization in `[-scale, scale]`.
    pub fn random(vocab_size: usize, order: usize, seed: u64, scale: f64) -> ToyModel<F> {
        let mut model = Self::zeros(vocab_size, order);
        model.seed = seed;
        let mut rng = DetRng::new(seed);
        for w in model.logits.iter_mut() {
            *w = F::from_f64((rng.gen_f64() * 2.0 - 1.0) * scale).unwrap();
        }
        model
    }

    pub fn param_count(&self) -> usize {
        self.logits.len()
    }

    pub fn context_count(&self) -> usize {
        self.logits.len() / self.vocab_size
    }

    /// Context row for predicting position `pos`: the `order` previous
    /// tokens, BOS-padded (slot value `vocab_size`) before the sequence
    /// start. Contexts may cross the prompt/target boundary.
    pub fn context_index(&self, ids: &[u32], pos: usize) -> usize {
        let base = self.vocab_size + 1;
        let mut index = 0usize;
        for offset in 1..=self.order {
            let slot = if pos >= offset { ids[pos - offset] as usize } else { self.vocab_size };
            index = index * base + slot;
        }
        index
    }

    fn check_ids(&self, ids: &[u32]) -> Result<(), TrainError> {
        for &id in ids {
            if id as usize >= self.vocab_size {
                return Err(TrainError::TokenOutOfVocab(id, self.vocab_size));
            }
        }
        Ok(())
    }

    /// Numerically stable log-softmax of one context row.
    pub fn log_softmax_row(&self, ctx: usize) -> Vec<F> {
        let row = &self.logits[ctx * self.vocab_size..(ctx + 1) * self.vocab_size];
        let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let sum = row.iter().fold(F::zero(), |acc, &v| acc + (v - max).exp());
        let lse = max + sum.ln();
        row.iter().map(|&v| v - lse).collect()
    }

    /// Softmax probabilities of one context row.
    pub fn prob_row(&self, ctx: usize) -> Vec<F> {
        self.log_softmax_row(ctx).into_iter().map(|lp| lp.exp()).collect()
    }
}

/// `log P(target | prompt)`: sum of per-token log-probabilities over the
/// positions after the boundary, conditioning across it.
pub fn sequence_logprob<F: Scalar>(model: &ToyModel<F>, seq: &TokenSequence) -> Result<F, TrainError> {
    model.check_ids(&seq.ids)?;
    if seq.boundary > seq.ids.len() {
        return Err(TrainError::BadBoundary(seq.boundary, seq.ids.len()));
    }
    let mut total = F::zero();
    for pos in seq.boundary..seq.ids.len() {
        let ctx = model.context_index(&seq.ids, pos);
        let lsm = model.log_softmax_row(ctx);
        total = total + lsm[seq.ids[pos] as usize];
    }
    Ok(total)
}

/// How Eq.-1-style losses normalize over a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    /// Sum of token log-probs per sample, averaged over samples.
    #[default]
    PerSequence,
    /// Token-mean log-prob per sample, averaged over samples.
    PerToken,
}

/// SFT loss: `-(1/N) Σ_i log P(O*_i | I_i)`.
pub fn sft_loss<F: Scalar>(
    model: &ToyModel<F>,
    batch: &[TokenSequence],
    norm: LossNorm,
) -> Result<F, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut terms = Vec::with_capacity(batch.len());
    for seq in batch {
        let lp = sequence_logprob(model, seq)?;
        let lp = match norm {
            LossNorm::PerSequence => lp,
            LossNorm::PerToken => {
                let len = F::from_usize(seq.target_len().max(1)).unwrap();
                lp / len
            }
        };
        terms.push(lp);
    }
    let n = F::from_usize(batch.len()).unwrap();
    Ok(-pairwise_sum(&terms) / n)
}

/// Accumulate `weight * d(-log P(target|prompt))/d(logits)` into `grad`.
fn accumulate_sequence_grad<F: Scalar>(
    model: &ToyModel<F>,
    seq: &TokenSequence,
    weight: F,
    grad: &mut [F],
) {
    for pos in seq.boundary..seq.ids.len() {
        let ctx = model.context_index(&seq.ids, pos);
        let probs = model.prob_row(ctx);
        let base = ctx * model.vocab_size;
        for (v, &p) in probs.iter().enumerate() {
            let indicator = if v == seq.ids[pos] as usize { F::one() } else { F::zero() };
            grad[base + v] = grad[base + v] + weight * (p - indicator);
        }
    }
}

/// SFT loss and its analytic gradient with respect to the logits table.
pub fn sft_loss_grad<F: Scalar>(
    model: &ToyModel<F>,
    batch: &[TokenSequence],
    norm: LossNorm,
) -> Result<(F, Vec<F>), TrainError> {
    let loss = sft_loss(model, batch, norm)?;
    let n = F::from_usize(batch.len()).unwrap();
    let mut grad = vec![F::zero(); model.param_count()];
    for seq in batch {
        let weight = match norm {
            LossNorm::PerSequence => F::one() / n,
            LossNorm::PerToken => F::one() / (n * F::from_usize(seq.target_len().max(1)).unwrap()),
        };
        accumulate_sequence_grad(model, seq, weight, &mut grad);
    }
    Ok((loss, grad))
}

/// Stable `softplus(z) = ln(1 + e^z)`.
fn softplus<F: Scalar>(z: F) -> F {
    let zero = F::zero();
    if z > zero {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid<F: Scalar>(z: F) -> F {
    let one = F::one();
    if z >= F::zero() {
        one / (one + (-z).exp())
    } else {
        let e = z.exp();
        e / (one + e)
    }
}

/// Single-triple DPO loss:
/// `-log σ(β((lp_θ(O*) - lp_ref(O*)) - (lp_θ(O⁻) - lp_ref(O⁻))))`.
pub fn dpo_loss<F: Scalar>(
    lp_theta_chosen: F,
    lp_ref_chosen: F,
    lp_theta_rejected: F,
    lp_ref_rejected: F,
    beta: F,
) -> Result<F, TrainError> {
    for (v, tag) in [
        (lp_theta_chosen, "lp_theta_chosen"),
        (lp_ref_chosen, "lp_ref_chosen"),
        (lp_theta_rejected, "lp_theta_rejected"),
        (lp_ref_rejected, "lp_ref_rejected"),
    ] {
        if !v.is_finite() {
            return Err(TrainError::NonFinite(tag));
        }
    }
    // NaN-rejecting check: a NaN beta fails this comparison too.
    if beta.partial_cmp(&F::zero()) != Some(std::cmp::Ordering::Greater) {
        return Err(TrainError::InvalidConfig("beta must be > 0"));
    }
    let margin = (lp_theta_chosen - lp_ref_chosen) - (lp_theta_rejected - lp_ref_rejected);
    Ok(softplus(-(beta * margin)))
}

/// The implicit DPO reward: `β (lp_θ - lp_ref)`.
pub fn reward<F: Scalar>(lp_theta: F, lp_ref: F, beta: F) -> F {
    beta * (lp_theta - lp_ref)
}

/// Per-triple log-probabilities under policy and reference.
#[derive(Debug, Clone, Copy)]
pub struct TripleLogProbs<F> {
    pub theta_chosen: F,
    pub ref_chosen: F,
    pub theta_rejected: F,
    pub ref_rejected: F,
}

/// Batched DPO loss: the mean of per-triple losses (fixed pairwise
/// reduction order).
pub fn dpo_batch_loss<F: Scalar>(items: &[TripleLogProbs<F>], beta: F) -> Result<F, TrainError> {
    if items.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut terms = Vec::with_capacity(items.len());
    for it in items {
        terms.push(dpo_loss(it.theta_chosen, it.ref_chosen, it.theta_rejected, it.ref_rejected, beta)?);
    }
    let n = F::from_usize(items.len()).unwrap();
    Ok(pairwise_sum(&terms) / n)
}

/// Fraction of triples where the chosen reward strictly exceeds the
/// rejected reward; ties count as incorrect.
pub fn reward_accuracy<F: Scalar>(
    triples: &[TokenizedTriple],
    model_theta: &ToyModel<F>,
    model_ref: &ToyModel<F>,
    beta: F,
) -> Result<F, TrainError> {
    if triples.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut correct = 0usize;
    for triple in triples {
        let chosen = triple.chosen_sequence();
        let rejected = triple.rejected_sequence();
        let rc = reward(sequence_logprob(model_theta, &chosen)?, sequence_logprob(model_ref, &chosen)?, beta);
        let rr = reward(
            sequence_logprob(model_theta, &rejected)?,
            sequence_logprob(model_ref, &rejected)?,
            beta,
        );
        if rc > rr {
            correct += 1;
        }
    }
    Ok(F::from_usize(correct).unwrap() / F::from_usize(triples.len()).unwrap())
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// 0.0 disables momentum (plain gradient descent).
    pub momentum: f64,
    /// Held-out fraction for validation loss.
    pub val_fraction: f64,
    pub loss_norm: LossNorm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            epochs: 2,
            batch_size: 32,
            seed: 0,
            momentum: 0.0,
            val_fraction: 0.05,
            loss_norm: LossNorm::PerSequence,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpoConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig { beta: 0.9, learning_rate: 0.5, epochs: 1, batch_size: 32, seed: 0 }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.beta.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(TrainError::InvalidConfig("beta must be > 0"));
        }
        if self.epochs < 1 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// One row of the training curves; absent fields do not apply to the phase.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CurveRecord {
    pub step: usize,
    pub sft_loss: Option<f64>,
    pub rl_loss: Option<f64>,
    pub reward_accuracy: Option<f64>,
    pub chosen_reward: Option<f64>,
    pub rejected_reward: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingCurves {
    pub records: Vec<CurveRecord>,
}

impl TrainingCurves {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,sft_loss,rl_loss,reward_accuracy,chosen_reward,rejected_reward,val_loss\n");
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.10}")).unwrap_or_default();
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.step,
                cell(r.sft_loss),
                cell(r.rl_loss),
                cell(r.reward_accuracy),
                cell(r.chosen_reward),
                cell(r.rejected_reward),
                cell(r.val_loss),
            ));
        }
        out
    }

    /// Least-squares slope of a selected field over step index.
    pub fn slope(&self, field: impl Fn(&CurveRecord) -> Option<f64>) -> Option<f64> {
        let points: Vec<(f64, f64)> = self
            .records
            .iter()
            .filter_map(|r| field(r).map(|y| (r.step as f64, y)))
            .collect();
        if points.len() < 2 {
            return None;
        }
        let n = points.len() as f64;
        let sx: f64 = points.iter().map(|p| p.0).sum();
        let sy: f64 = points.iter().map(|p| p.1).sum();
        let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
        let denom = n * sxx - sx * sx;
        (denom.abs() > 0.0).then(|| (n * sxy - sx * sy) / denom)
    }
}

fn apply_update<F: Scalar>(model: &mut ToyModel<F>, grad: &[F], velocity: &mut [F], lr: F, momentum: F) {
    for i in 0..model.logits.len() {
        velocity[i] = momentum * velocity[i] + grad[i];
        model.logits[i] = model.logits[i] - lr * velocity[i];
    }
}

/// Gradient descent on the SFT loss. Records per-step training loss and
/// per-epoch validation loss on a held-out slice of the data.
pub fn train_sft<F: Scalar>(
    model: &ToyModel<F>,
    data: &[TokenSequence],
    config: &TrainConfig,
) -> Result<(ToyModel<F>, TrainingCurves), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut rng = DetRng::new(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut order);
    let val_count = ((data.len() as f64) * config.val_fraction).floor() as usize;
    let (val_idx, train_idx) = order.split_at(val_count);
    let val: Vec<TokenSequence> = val_idx.iter().map(|&i| data[i].clone()).collect();
    let mut train: Vec<TokenSequence> = train_idx.iter().map(|&i| data[i].clone()).collect();
    if train.is_empty() {
        return Err(TrainError::EmptyBatch);
    }

    let mut model = model.clone();
    let mut velocity = vec![F::zero(); model.param_count()];
    let lr = F::from_f64(config.learning_rate).unwrap();
    let momentum = F::from_f64(config.momentum).unwrap();
    let mut curves = TrainingCurves::default();
    let mut step = 0usize;

    for _epoch in 0..config.epochs {
        rng.shuffle(&mut train);
        for batch in train.chunks(config.batch_size.max(1)) {
            let (loss, grad) = sft_loss_grad(&model, batch, config.loss_norm)?;
            let loss_f64 = loss.to_f64().unwrap_or(f64::NAN);
            if !loss_f64.is_finite() {
                return Err(TrainError::Diverged(step));
            }
            apply_update(&mut model, &grad, &mut velocity, lr, momentum);
            step += 1;
            curves.records.push(CurveRecord { step, sft_loss: Some(loss_f64), ..Default::default() });
        }
        if !val.is_empty() {
            let val_loss = sft_loss(&model, &val, config.loss_norm)?.to_f64().unwrap_or(f64::NAN);
            if let Some(last) = curves.records.last_mut() {
                last.val_loss = Some(val_loss);
            }
        }
    }
    Ok((model, curves))
}

/// Loss, gradient, and batch diagnostics from one DPO step:
/// `(loss, grad, reward_accuracy, chosen_reward_mean, rejected_reward_mean)`.
pub type DpoStep<F> = (F, Vec<F>, f64, f64, f64);

/// DPO loss and gradient (with respect to the policy model only) over a
/// batch of triples.
pub fn dpo_batch_loss_grad<F: Scalar>(
    model_theta: &ToyModel<F>,
    model_ref: &ToyModel<F>,
    batch: &[TokenizedTriple],
    beta: F,
) -> Result<DpoStep<F>, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let n = F::from_usize(batch.len()).unwrap();
    let mut grad = vec![F::zero(); model_theta.param_count()];
    let mut terms = Vec::with_capacity(batch.len());
    let mut correct = 0usize;
    let mut chosen_reward_sum = 0.0f64;
    let mut rejected_reward_sum = 0.0f64;

    for triple in batch {
        let chosen = triple.chosen_sequence();
        let rejected = triple.rejected_sequence();
        let lp_tc = sequence_logprob(model_theta, &chosen)?;
        let lp_rc = sequence_logprob(model_ref, &chosen)?;
        let lp_tr = sequence_logprob(model_theta, &rejected)?;
        let lp_rr = sequence_logprob(model_ref, &rejected)?;
        let margin = (lp_tc - lp_rc) - (lp_tr - lp_rr);
        let x = beta * margin;
        terms.push(softplus(-x));

        // d(-log σ(x))/dx = -σ(-x); chain through lp_θ only.
        let coeff = sigmoid(-x) * beta / n;
        // d loss / d lp_tc = -coeff; contributions use the (-logprob)
        // gradient accumulator, so weights flip sign once more.
        accumulate_sequence_grad(model_theta, &chosen, coeff, &mut grad);
        accumulate_sequence_grad(model_theta, &rejected, -coeff, &mut grad);

        let rc = reward(lp_tc, lp_rc, beta).to_f64().unwrap_or(f64::NAN);
        let rr = reward(lp_tr, lp_rr, beta).to_f64().unwrap_or(f64::NAN);
        chosen_reward_sum += rc;
        rejected_reward_sum += rr;
        if rc > rr {
            correct += 1;
        }
    }
    let loss = pairwise_sum(&terms) / n;
    let bn = batch.len() as f64;
    Ok((loss, grad, correct as f64 / bn, chosen_reward_sum / bn, rejected_reward_sum / bn))
}

/// Gradient descent on the batched DPO loss against a frozen reference.
/// Curves record per-step loss, batch reward accuracy, and mean
/// chosen/rejected rewards.
pub fn train_dpo<F: Scalar>(
    model_theta: &ToyModel<F>,
    model_ref: &ToyModel<F>,
    triples: &[TokenizedTriple],
    config: &DpoConfig,
) -> Result<(ToyModel<F>, TrainingCurves), TrainError> {
    config.validate()?;
    if triples.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let beta = F::from_f64(config.beta).unwrap();
    let lr = F::from_f64(config.learning_rate).unwrap();
    let mut rng = DetRng::new(config.seed);
    let mut data: Vec<TokenizedTriple> = triples.to_vec();

    let mut model = model_theta.clone();
    let mut velocity = vec![F::zero(); model.param_count()];
    let mut curves = TrainingCurves::default();
    let mut step = 0usize;

    for _epoch in 0..config.epochs {
        rng.shuffle(&mut data);
        for batch in data.chunks(config.batch_size.max(1)) {
            let (loss, grad, acc, chosen_mean, rejected_mean) =
                dpo_batch_loss_grad(&model, model_ref, batch, beta)?;
            let loss_f64 = loss.to_f64().unwrap_or(f64::NAN);
            if !loss_f64.is_finite() {
                return Err(TrainError::Diverged(step));
            }
            apply_update(&mut model, &grad, &mut velocity, lr, F::zero());
            step += 1;
            curves.records.push(CurveRecord {
                step,
                rl_loss: Some(loss_f64),
                reward_accuracy: Some(acc),
                chosen_reward: Some(chosen_mean),
                rejected_reward: Some(rejected_mean),
                ..Default::default()
            });
        }
    }
    Ok((model, curves))
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// A differentiable objective: loss and its gradient at the given model.
pub type LossGradFn<F> = dyn Fn(&ToyModel<F>) -> Result<(F, Vec<F>), TrainError>;

/// Compare an analytic gradient against central finite differences at
/// `probe_count` random parameters. Returns the maximum scaled relative
/// error `|a - n| / max(|a|, |n|, 0.01 * grad_inf_norm)`; the floor keeps
/// finite-difference noise on near-zero components from swamping the
/// comparison while leaving every meaningful component fully checked.
pub fn gradient_check<F: Scalar>(
    loss_grad: &LossGradFn<F>,
    model: &ToyModel<F>,
    probe_count: usize,
    fd_step: f64,
    rng: &mut DetRng,
) -> Result<f64, TrainError> {
    let (_, grad) = loss_grad(model)?;
    let grad_inf = grad.iter().fold(0.0f64, |m, g| m.max(g.to_f64().unwrap_or(0.0).abs()));
    let floor = (grad_inf * 0.01).max(1e-12);
    let h = F::from_f64(fd_step).unwrap();

    let mut max_rel: f64 = 0.0;
    for _ in 0..probe_count {
        let idx = rng.gen_range(model.param_count());
        let mut plus = model.clone();
        plus.logits[idx] = plus.logits[idx] + h;
        let mut minus = model.clone();
        minus.logits[idx] = minus.logits[idx] - h;
        let (lp, _) = loss_grad(&plus)?;
        let (lm, _) = loss_grad(&minus)?;
        let numeric = (lp - lm).to_f64().unwrap() / (2.0 * fd_step);
        let analytic = grad[idx].to_f64().unwrap();
        if analytic == 0.0 && numeric == 0.0 {
            continue;
        }
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

// ---------------------------------------------------------------------------
// Synthetic preference corpus
// ---------------------------------------------------------------------------

/// Generator for preference data with a learnable signal: chosen
/// continuations follow one deterministic order-2 transition rule, rejected
/// continuations follow a different one, prompts are random.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub vocab_size: usize,
    pub prompt_len: usize,
    pub target_len: usize,
    pub count: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { vocab_size: 12, prompt_len: 6, target_len: 8, count: 2000, seed: 0 }
    }
}

fn chosen_rule(prev1: u32, prev2: u32, vocab: u32) -> u32 {
    (2 * prev1 + 3 * prev2 + 1) % vocab
}

fn rejected_rule(prev1: u32, prev2: u32, vocab: u32) -> u32 {
    (prev1 + prev2 + 5) % vocab
}

pub fn synth_preference_corpus(spec: &SynthSpec) -> Vec<TokenizedTriple> {
    let mut rng = DetRng::new(spec.seed);
    let v = spec.vocab_size as u32;
    (0..spec.count)
        .map(|_| {
            let prompt: Vec<u32> = (0..spec.prompt_len).map(|_| rng.gen_range(v as usize) as u32).collect();
            let extend = |rule: fn(u32, u32, u32) -> u32| -> Vec<u32> {
                let mut ids = prompt.clone();
                for _ in 0..spec.target_len {
                    let p1 = ids[ids.len() - 1];
                    let p2 = ids[ids.len() - 2];
                    ids.push(rule(p1, p2, v));
                }
                ids[spec.prompt_len..].to_vec()
            };
            TokenizedTriple { prompt: prompt.clone(), chosen: extend(chosen_rule), rejected: extend(rejected_rule) }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Model (de)serialization: versioned header + little-endian f64 params
// ---------------------------------------------------------------------------

const MODEL_MAGIC: &[u8; 8] = b"COLTTOY1";

pub fn save_model<F: Scalar>(model: &ToyModel<F>, path: &Path) -> Result<(), TrainError> {
    let mut buf = Vec::with_capacity(40 + model.logits.len() * 8);
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&1u32.to_le_bytes()); // format version
    buf.extend_from_slice(&(model.vocab_size as u32).to_le_bytes());
    buf.extend_from_slice(&(model.order as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes()); // reserved
    buf.extend_from_slice(&model.seed.to_le_bytes());
    buf.extend_from_slice(&(model.logits.len() as u64).to_le_bytes());
    for w in &model.logits {
        buf.extend_from_slice(&w.to_f64().unwrap_or(0.0).to_le_bytes());
    }
    crate::util::write_atomic(path, &buf)?;
    Ok(())
}

pub fn load_model<F: Scalar>(path: &Path) -> Result<ToyModel<F>, TrainError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cursor = &bytes[..];
    let mut take = |n: usize| -> Result<&[u8], TrainError> {
        if cursor.len() < n {
            return Err(TrainError::Corrupt("truncated".into()));
        }
        let (head, tail) = cursor.split_at(n);
        cursor = tail;
        Ok(head)
    };
    if take(8)? != MODEL_MAGIC {
        return Err(TrainError::Corrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != 1 {
        return Err(TrainError::Corrupt(format!("unsupported version {version}")));
    }
    let vocab_size = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let order = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let _reserved = take(4)?;
    let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let expected = (vocab_size + 1).pow(order as u32) * vocab_size;
    if count != expected {
        return Err(TrainError::Corrupt(format!("param count {count} != expected {expected}")));
    }
    let mut logits = Vec::with_capacity(count);
    for _ in 0..count {
        let w = f64::from_le_bytes(take(8)?.try_into().unwrap());
        logits.push(F::from_f64(w).ok_or_else(|| TrainError::Corrupt("non-representable".into()))?);
    }
    Ok(ToyModel { vocab_size, order, seed, logits })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn seq(ids: &[u32], boundary: usize) -> TokenSequence {
        TokenSequence::new(ids.to_vec(), boundary)
    }

    #[test]
    fn softmax_rows_normalize() {
        let model: ToyModel<f64> = ToyModel::random(5, 2, 3, 2.0);
        for ctx in 0..model.context_count() {
            let total: f64 = model.prob_row(ctx).iter().sum();
            assert!((total - 1.0).abs() < 1e-9, "ctx {ctx}: sum {total}");
        }
    }

    #[test]
    fn uniform_model_sequence_logprob() {
        let model: ToyModel<f64> = ToyModel::zeros(4, 2);
        let lp = sequence_logprob(&model, &seq(&[0, 1, 2, 3, 0], 2)).unwrap();
        assert!((lp - 3.0 * (0.25f64).ln()).abs() < 1e-12);
        assert!((lp - (-4.1588830834)).abs() < 1e-9);
    }

    #[test]
    fn certain_model_logprob_zero() {
        // Huge logit gap drives the target probability to exactly 1.0 in
        // floating point.
        let mut model: ToyModel<f64> = ToyModel::zeros(3, 1);
        for ctx in 0..model.context_count() {
            for v in 0..3 {
                model.logits[ctx * 3 + v] = if v == 1 { 0.0 } else { -10_000.0 };
            }
        }
        let lp = sequence_logprob(&model, &seq(&[1, 1, 1], 0)).unwrap();
        assert_eq!(lp, 0.0);
    }

    #[test]
    fn logprob_matches_chain_rule_enumeration() {
        // Independent oracle: enumerate P(target|prompt) by chain-rule
        // products over explicitly normalized rows.
        let model: ToyModel<f64> = ToyModel::random(4, 2, 9, 1.0);
        let s = seq(&[2, 0, 3, 1], 2);
        let mut product = 1.0f64;
        for pos in 2..s.ids.len() {
            let ctx = model.context_index(&s.ids, pos);
            let row: Vec<f64> =
                model.logits[ctx * 4..(ctx + 1) * 4].iter().map(|l| l.exp()).collect();
            let z: f64 = row.iter().sum();
            product *= row[s.ids[pos] as usize] / z;
        }
        let lp = sequence_logprob(&model, &s).unwrap();
        assert!((lp - product.ln()).abs() < 1e-12);
    }

    #[test]
    fn out_of_vocab_is_error() {
        let model: ToyModel<f64> = ToyModel::zeros(4, 2);
        assert!(matches!(
            sequence_logprob(&model, &seq(&[0, 9], 0)),
            Err(TrainError::TokenOutOfVocab(9, 4))
        ));
    }

    #[test]
    fn sft_loss_arithmetic() {
        // Vocabulary of 2 with logits (0, x): choosing x = ln(e-1) makes
        // P(token 0) = 1/e exactly, so one target token contributes -1.
        let mut model: ToyModel<f64> = ToyModel::zeros(2, 1);
        let x1 = (std::f64::consts::E - 1.0).ln();
        let x3 = (std::f64::consts::E.powi(3) - 1.0).ln();
        // Context row for "after token 0": logprob of token 0 = -1.
        let ctx0 = model.context_index(&[0, 0], 1);
        model.logits[ctx0 * 2 + 1] = x1;
        // Context row for "after token 1": logprob of token 0 = -3.
        let ctx1 = model.context_index(&[1, 0], 1);
        model.logits[ctx1 * 2 + 1] = x3;

        let s1 = seq(&[0, 0], 1);
        let s2 = seq(&[1, 0], 1);
        assert!((sequence_logprob(&model, &s1).unwrap() + 1.0).abs() < 1e-12);
        assert!((sequence_logprob(&model, &s2).unwrap() + 3.0).abs() < 1e-12);
        let loss = sft_loss(&model, &[s1, s2], LossNorm::PerSequence).unwrap();
        assert!((loss - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sft_loss_zero_when_certain() {
        let mut model: ToyModel<f64> = ToyModel::zeros(2, 1);
        for ctx in 0..model.context_count() {
            model.logits[ctx * 2] = 10_000.0;
        }
        let loss = sft_loss(&model, &[seq(&[0, 0, 0], 1)], LossNorm::PerSequence).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn per_token_norm_divides_by_target_length() {
        let model: ToyModel<f64> = ToyModel::random(5, 2, 3, 0.8);
        let s = seq(&[0, 1, 2, 3, 4, 0], 2); // 4 target tokens
        let per_seq = sft_loss(&model, std::slice::from_ref(&s), LossNorm::PerSequence).unwrap();
        let per_tok = sft_loss(&model, std::slice::from_ref(&s), LossNorm::PerToken).unwrap();
        assert!((per_tok - per_seq / 4.0).abs() < 1e-12);
    }

    #[test]
    fn sft_empty_batch_is_error() {
        let model: ToyModel<f64> = ToyModel::zeros(2, 1);
        assert!(matches!(
            sft_loss(&model, &[], LossNorm::PerSequence),
            Err(TrainError::EmptyBatch)
        ));
    }

    #[test]
    fn sft_gradient_matches_finite_differences() {
        let model: ToyModel<f64> = ToyModel::random(5, 2, 11, 0.7);
        let mut rng = DetRng::new(5);
        let data: Vec<TokenSequence> = (0..6)
            .map(|_| {
                let ids: Vec<u32> = (0..8).map(|_| rng.gen_range(5) as u32).collect();
                TokenSequence::new(ids, 3)
            })
            .collect();
        let f = move |m: &ToyModel<f64>| sft_loss_grad(m, &data, LossNorm::PerSequence);
        let err = gradient_check(&f, &model, 120, 1e-5, &mut DetRng::new(77)).unwrap();
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn dpo_identity_is_ln2() {
        for beta in [0.1, 0.9, 3.0] {
            let loss = dpo_loss(-(1.3f64), -1.3, -2.7, -2.7, beta).unwrap();
            assert!((loss - LN2).abs() < 1e-12);
        }
    }

    #[test]
    fn dpo_unit_margins_value() {
        // Chosen ratio +1, rejected ratio -1, beta 0.9:
        // -ln σ(1.8) = ln(1 + e^{-1.8}); direct evaluation as the oracle.
        let expected = (-1.8f64).exp().ln_1p();
        let loss = dpo_loss(1.0f64, 0.0, -1.0, 0.0, 0.9).unwrap();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.1530).abs() < 5e-4);
    }

    #[test]
    fn dpo_monotone_in_chosen_ratio() {
        let mut prev = f64::INFINITY;
        for ratio in [0.0, 0.5, 1.0, 2.0, 5.0] {
            let loss = dpo_loss(ratio, 0.0, 0.0, 0.0, 0.9).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
    }

    #[test]
    fn dpo_invariant_under_common_shift() {
        let base = dpo_loss(-1.0f64, -1.5, -2.0, -1.8, 0.9).unwrap();
        for shift in [-3.0, 0.7, 42.0] {
            let shifted = dpo_loss(-1.0 + shift, -1.5 + shift, -2.0, -1.8, 0.9).unwrap();
            assert!((base - shifted).abs() < 1e-9);
            let shifted_rej = dpo_loss(-1.0, -1.5, -2.0 + shift, -1.8 + shift, 0.9).unwrap();
            assert!((base - shifted_rej).abs() < 1e-9);
        }
    }

    #[test]
    fn dpo_rejects_non_finite() {
        assert!(matches!(
            dpo_loss(f64::NAN, 0.0, 0.0, 0.0, 0.9),
            Err(TrainError::NonFinite(_))
        ));
        assert!(matches!(
            dpo_loss(f64::INFINITY, 0.0, 0.0, 0.0, 0.9),
            Err(TrainError::NonFinite(_))
        ));
    }

    #[test]
    fn dpo_large_beta_limit() {
        // With unit margin fixed, β → ∞ drives the loss to 0.
        let loss = dpo_loss(1.0f64, 0.0, -1.0, 0.0, 500.0).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn reward_values() {
        assert_eq!(reward(0.5f64, 0.5, 0.9), 0.0);
        assert!((reward(2.0f64, 0.0, 0.9) - 1.8).abs() < 1e-12);
        for (t, r) in [(0.4f64, 0.1), (0.1, 0.4)] {
            assert_eq!(reward(t, r, 0.9).signum(), (t - r).signum());
        }
    }

    fn tiny_triples(vocab: u32) -> Vec<TokenizedTriple> {
        (0..4)
            .map(|i| TokenizedTriple {
                prompt: vec![i % vocab, (i + 1) % vocab],
                chosen: vec![(i + 2) % vocab, (i + 3) % vocab],
                rejected: vec![(i + 4) % vocab, (i + 5) % vocab],
            })
            .collect()
    }

    #[test]
    fn reward_accuracy_ties_are_incorrect() {
        let model: ToyModel<f64> = ToyModel::random(8, 2, 1, 0.5);
        let triples = tiny_triples(8);
        // θ == ref: every reward is 0, every comparison a tie.
        let acc = reward_accuracy(&triples, &model, &model, 0.9).unwrap();
        assert_eq!(acc, 0.0);
    }

    #[test]
    fn reward_accuracy_perfect_and_partial() {
        let reference: ToyModel<f64> = ToyModel::zeros(8, 2);
        let triples = tiny_triples(8);
        // Boost every chosen transition in θ.
        let mut theta = reference.clone();
        for t in &triples {
            let s = t.chosen_sequence();
            for pos in s.boundary..s.ids.len() {
                let ctx = theta.context_index(&s.ids, pos);
                theta.logits[ctx * 8 + s.ids[pos] as usize] += 2.0;
            }
        }
        let acc = reward_accuracy(&triples, &theta, &reference, 0.9).unwrap();
        assert_eq!(acc, 1.0);

        // Hand-built 4-triple set with exactly 3 correct orderings: undo
        // the boost for one triple and penalize it instead.
        let t0 = triples[0].chosen_sequence();
        for pos in t0.boundary..t0.ids.len() {
            let ctx = theta.context_index(&t0.ids, pos);
            theta.logits[ctx * 8 + t0.ids[pos] as usize] -= 4.0;
        }
        // Direct per-triple oracle.
        let mut expected_correct = 0;
        for t in &triples {
            let c = t.chosen_sequence();
            let r = t.rejected_sequence();
            let rc = 0.9
                * (sequence_logprob(&theta, &c).unwrap() - sequence_logprob(&reference, &c).unwrap());
            let rr = 0.9
                * (sequence_logprob(&theta, &r).unwrap() - sequence_logprob(&reference, &r).unwrap());
            if rc > rr {
                expected_correct += 1;
            }
        }
        assert_eq!(expected_correct, 3);
        let acc = reward_accuracy(&triples, &theta, &reference, 0.9).unwrap();
        assert!((acc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn reward_accuracy_empty_is_error() {
        let model: ToyModel<f64> = ToyModel::zeros(4, 2);
        assert!(matches!(
            reward_accuracy(&[], &model, &model, 0.9),
            Err(TrainError::EmptyBatch)
        ));
    }

    #[test]
    fn dpo_end_to_end_gradient_check() {
        let theta: ToyModel<f64> = ToyModel::random(6, 2, 21, 0.5);
        let reference: ToyModel<f64> = ToyModel::random(6, 2, 22, 0.5);
        let mut rng = DetRng::new(9);
        let triples: Vec<TokenizedTriple> = (0..5)
            .map(|_| TokenizedTriple {
                prompt: (0..4).map(|_| rng.gen_range(6) as u32).collect(),
                chosen: (0..5).map(|_| rng.gen_range(6) as u32).collect(),
                rejected: (0..5).map(|_| rng.gen_range(6) as u32).collect(),
            })
            .collect();
        let f = move |m: &ToyModel<f64>| {
            let (loss, grad, _, _, _) = dpo_batch_loss_grad(m, &reference, &triples, 0.9)?;
            Ok((loss, grad))
        };
        let err = gradient_check(&f, &theta, 120, 1e-5, &mut DetRng::new(3)).unwrap();
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn gradient_check_constant_loss_is_zero() {
        let model: ToyModel<f64> = ToyModel::random(4, 1, 2, 0.5);
        let f = |m: &ToyModel<f64>| Ok((42.0, vec![0.0; m.param_count()]));
        let err = gradient_check(&f, &model, 50, 1e-5, &mut DetRng::new(1)).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn train_sft_reduces_loss_and_is_deterministic() {
        let spec = SynthSpec { count: 300, ..Default::default() };
        let triples = synth_preference_corpus(&spec);
        let data: Vec<TokenSequence> = triples.iter().map(|t| t.chosen_sequence()).collect();
        let model: ToyModel<f64> = ToyModel::zeros(spec.vocab_size, 2);
        let config = TrainConfig { epochs: 3, ..Default::default() };
        let (trained, curves) = train_sft(&model, &data, &config).unwrap();
        let first = curves.records.first().unwrap().sft_loss.unwrap();
        let last = curves.records.last().unwrap().sft_loss.unwrap();
        assert!(last < first, "loss should drop: {first} -> {last}");

        let (trained2, curves2) = train_sft(&model, &data, &config).unwrap();
        assert_eq!(trained.logits, trained2.logits);
        assert_eq!(curves.to_csv(), curves2.to_csv());
    }

    #[test]
    fn train_sft_zero_lr_is_identity() {
        let spec = SynthSpec { count: 50, ..Default::default() };
        let data: Vec<TokenSequence> =
            synth_preference_corpus(&spec).iter().map(|t| t.chosen_sequence()).collect();
        let model: ToyModel<f64> = ToyModel::random(spec.vocab_size, 2, 5, 0.3);
        let config = TrainConfig { learning_rate: 0.0, epochs: 1, ..Default::default() };
        let (trained, _) = train_sft(&model, &data, &config).unwrap();
        assert_eq!(trained.logits, model.logits);
    }

    #[test]
    fn train_dpo_freezes_reference_and_learns() {
        let spec = SynthSpec { count: 400, ..Default::default() };
        let triples = synth_preference_corpus(&spec);
        let sft_data: Vec<TokenSequence> = triples.iter().map(|t| t.chosen_sequence()).collect();
        let base: ToyModel<f64> = ToyModel::zeros(spec.vocab_size, 2);
        let (sft_model, _) = train_sft(&base, &sft_data, &TrainConfig::default()).unwrap();

        let reference = sft_model.clone();
        let ref_bits: Vec<u64> = reference.logits.iter().map(|w| w.to_bits()).collect();
        let config = DpoConfig { epochs: 2, ..Default::default() };
        let (tuned, curves) = train_dpo(&sft_model, &reference, &triples, &config).unwrap();

        let after_bits: Vec<u64> = reference.logits.iter().map(|w| w.to_bits()).collect();
        assert_eq!(ref_bits, after_bits, "reference must stay bit-identical");

        let last_acc = curves.records.last().unwrap().reward_accuracy.unwrap();
        assert!(last_acc > 0.8, "batch reward accuracy at end: {last_acc}");
        assert_ne!(tuned.logits, reference.logits);
    }

    #[test]
    fn curves_slope_signs() {
        let mut curves = TrainingCurves::default();
        for step in 1..=10 {
            curves.records.push(CurveRecord {
                step,
                chosen_reward: Some(step as f64 * 0.1),
                rejected_reward: Some(step as f64 * -0.05),
                ..Default::default()
            });
        }
        assert!(curves.slope(|r| r.chosen_reward).unwrap() > 0.0);
        assert!(curves.slope(|r| r.rejected_reward).unwrap() < 0.0);
    }

    #[test]
    fn model_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy_model.bin");
        let model: ToyModel<f64> = ToyModel::random(7, 2, 99, 1.5);
        save_model(&model, &path).unwrap();
        let back: ToyModel<f64> = load_model(&path).unwrap();
        assert_eq!(model.vocab_size, back.vocab_size);
        assert_eq!(model.order, back.order);
        let a: Vec<u64> = model.logits.iter().map(|w| w.to_bits()).collect();
        let b: Vec<u64> = back.logits.iter().map(|w| w.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn model_load_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"not a model").unwrap();
        assert!(matches!(load_model::<f64>(&path), Err(TrainError::Corrupt(_))));
    }

    #[test]
    fn generic_math_works_in_f32() {
        let model: ToyModel<f32> = ToyModel::zeros(4, 2);
        let lp = sequence_logprob(&model, &seq(&[0, 1, 2], 1)).unwrap();
        assert!((lp - 2.0 * (0.25f32).ln()).abs() < 1e-5);
        let loss = dpo_loss(0.0f32, 0.0, 0.0, 0.0, 0.9).unwrap();
        assert!((loss - std::f32::consts::LN_2).abs() < 1e-6);
    }
}
