//! Training: Adam with linear warmup/decay and gradient clipping, the
//! SMART-style virtual adversarial regularizer, and the four regimes
//! (standard fine-tuning, FEAT, multi-step fine-tuning, multi-task).
//!
//! Every regime runs through one engine that treats a run as a
//! multi-task job (standard training is the single-task case), so the
//! reduction guarantees — single-task MTL ≡ standard training, bit for
//! bit — hold by construction rather than by parallel implementations.
//!
//! Determinism contract: one seeded RNG drives epoch shuffling, a second
//! (derived from the same seed) drives adversarial noise, and parameter
//! updates touch tensors in the fixed visit order. Two runs with equal
//! seeds produce bit-identical checkpoints.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Domain, FeatContext};
use crate::encoding::{encode_instance, Vocabulary};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvaluationReport, PredictionSet};
use crate::model::{
    backward, forward, EncoderConfig, EncoderParams, HeadParams, ModelGrads, MultiTaskModel,
    RegressionModel,
};

/// Learning rates the grid covers at target scale; randomly initialized
/// toy models need the larger default below to converge in ten epochs.
pub const TARGET_SCALE_LR_GRID: [f64; 3] = [8e-6, 9e-6, 1e-5];
pub const BATCH_SIZE_GRID: [usize; 3] = [8, 16, 32];
pub const TOY_LEARNING_RATE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub warmup_fraction: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: TOY_LEARNING_RATE,
            batch_size: 16,
            max_epochs: 10,
            warmup_fraction: 0.1,
            clip_norm: 1.0,
            seed: 1,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !BATCH_SIZE_GRID.contains(&self.batch_size) {
            return Err(Error::invalid(format!(
                "batch_size {} not in {{8, 16, 32}}",
                self.batch_size
            )));
        }
        if self.max_epochs < 1 {
            return Err(Error::invalid("max_epochs must be at least 1"));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::invalid("warmup_fraction must lie strictly in (0, 1)"));
        }
        if !self.clip_norm.is_finite() || self.clip_norm <= 0.0 {
            return Err(Error::invalid("clip_norm must be positive"));
        }
        Ok(())
    }
}

/// Hyperparameters of the adversarial regularizer: ε-ball radius, PGD
/// step size η, init variance σ², step count K, and trade-off weight α.
/// α = 0 is allowed and reduces the objective to the plain task loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversarialConfig {
    pub epsilon: f64,
    pub step_size: f64,
    pub init_variance: f64,
    pub pgd_steps: usize,
    pub alpha: f64,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        AdversarialConfig {
            epsilon: 1e-5,
            step_size: 1e-3,
            init_variance: 1e-5,
            pgd_steps: 1,
            alpha: 1.0,
        }
    }
}

impl AdversarialConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.step_size > 0.0) || !(self.init_variance > 0.0) {
            return Err(Error::invalid(
                "epsilon, step_size and init_variance must be positive",
            ));
        }
        if self.pgd_steps < 1 {
            return Err(Error::invalid("pgd_steps must be at least 1"));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid("alpha must be a finite value >= 0"));
        }
        Ok(())
    }
}

/// Linear warmup to the peak at step ⌈warmup·total⌉, then linear decay
/// to 0 at the final step.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainingConfig) -> f64 {
    debug_assert!(total_steps >= 1 && step <= total_steps);
    let warmup = ((cfg.warmup_fraction * total_steps as f64).ceil() as usize).max(1);
    if step <= warmup {
        cfg.learning_rate * (step as f64 / warmup as f64)
    } else {
        cfg.learning_rate * ((total_steps - step) as f64 / (total_steps - warmup) as f64)
    }
}

/// Scales all gradients by clip_norm/‖g‖₂ when the global L2 norm
/// exceeds clip_norm. Returns the pre-clip norm. Non-finite gradients
/// signal divergence and are reported as a numeric failure.
pub fn clip_gradients(grads: &mut ModelGrads, clip_norm: f64) -> Result<f64> {
    let mut slices = Vec::new();
    grads.visit_mut(&mut slices);
    let mut sq = 0.0;
    for (_, data) in &slices {
        for v in data.iter() {
            sq += v * v;
        }
    }
    if !sq.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    let norm = sq.sqrt();
    if norm > clip_norm {
        let scale = clip_norm / norm;
        for (_, data) in &mut slices {
            for v in data.iter_mut() {
                *v *= scale;
            }
        }
    }
    Ok(norm)
}

#[derive(Debug, Clone, Default)]
struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Adam with per-tensor state keyed by tensor name. Tensors not touched
/// by a step (other tasks' heads) keep their state untouched, so
/// unrelated parameters stay bit-identical.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    slots: BTreeMap<String, AdamSlot>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            slots: BTreeMap::new(),
        }
    }
}

impl Adam {
    pub fn new() -> Self {
        Adam::default()
    }

    /// Applies one update to the given (param, grad) pairs, which must
    /// align positionally; slot state is keyed by the parameter name.
    pub fn step(&mut self, lr: f64, params: &mut [(String, &mut [f64])], grads: &[(String, &[f64])]) {
        debug_assert_eq!(params.len(), grads.len());
        for ((name, param), (_, grad)) in params.iter_mut().zip(grads) {
            debug_assert_eq!(param.len(), grad.len());
            let slot = self.slots.entry(name.clone()).or_default();
            if slot.m.is_empty() {
                slot.m = vec![0.0; param.len()];
                slot.v = vec![0.0; param.len()];
            }
            slot.t += 1;
            let bc1 = 1.0 - self.beta1.powi(slot.t as i32);
            let bc2 = 1.0 - self.beta2.powi(slot.t as i32);
            for i in 0..param.len() {
                let g = grad[i];
                slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g;
                slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g * g;
                let mhat = slot.m[i] / bc1;
                let vhat = slot.v[i] / bc2;
                param[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// One pre-encoded training/dev instance.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub domain: Domain,
    pub seq: crate::encoding::TokenSequence,
    pub gold: Option<f64>,
    pub feat: Option<f64>,
}

/// Encodes every instance and computes its frequency feature when a
/// feature context is supplied.
pub fn prepare_instances(
    data: &Dataset,
    vocab: &Vocabulary,
    max_len: usize,
    feat: Option<&FeatContext>,
) -> Vec<Prepared> {
    data.instances
        .iter()
        .map(|inst| Prepared {
            id: inst.id.clone(),
            domain: inst.domain,
            seq: encode_instance(inst, vocab, max_len),
            gold: inst.gold,
            feat: feat.map(|ctx| ctx.feature(&inst.target)),
        })
        .collect()
}

/// Clamped predictions for pre-encoded instances (evaluation mode).
pub fn predict_prepared(model: &RegressionModel, items: &[Prepared]) -> Result<PredictionSet> {
    let mut preds = PredictionSet::new();
    for item in items {
        let score = model.predict(&item.seq, item.feat)?;
        preds.insert(&item.id, score)?;
    }
    Ok(preds)
}

/// Mean squared error of raw head outputs against gold labels.
pub fn task_loss(model: &RegressionModel, batch: &[Prepared]) -> Result<f64> {
    let refs: Vec<&Prepared> = batch.iter().collect();
    let mut sum = 0.0;
    batch_forward_losses(&model.cfg, &model.enc, &model.head, &refs, &mut sum, None)?;
    Ok(sum / batch.len() as f64)
}

/// Task loss plus accumulated parameter gradients.
pub fn task_loss_and_grads(model: &RegressionModel, batch: &[Prepared]) -> Result<(f64, ModelGrads)> {
    let refs: Vec<&Prepared> = batch.iter().collect();
    let mut grads = ModelGrads::zeros(&model.cfg, model.head.w.len());
    let mut sum = 0.0;
    batch_forward_losses(&model.cfg, &model.enc, &model.head, &refs, &mut sum, Some(&mut grads))?;
    Ok((sum / batch.len() as f64, grads))
}

fn batch_forward_losses(
    cfg: &EncoderConfig,
    enc: &EncoderParams,
    head: &HeadParams,
    batch: &[&Prepared],
    sum: &mut f64,
    mut grads: Option<&mut ModelGrads>,
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let b = batch.len() as f64;
    for item in batch {
        let y = item
            .gold
            .ok_or_else(|| Error::invalid(format!("unlabeled instance '{}' in batch", item.id)))?;
        let cache = forward(cfg, enc, head, &item.seq, None, item.feat, None)?;
        let err = cache.raw - y;
        *sum += err * err;
        if let Some(g) = grads.as_deref_mut() {
            backward(cfg, enc, head, &cache, 2.0 * err / b, g);
        }
    }
    Ok(())
}

/// Anything PGD can perturb: exposes the sequence geometry, the padding
/// mask, and a differentiable raw score as a function of the embedding
/// offset δ. The transformer implements this; tests plug in a debug
/// mean-pooled linear model.
pub trait EmbeddingScorer {
    fn dims(&self) -> (usize, usize);
    fn mask(&self) -> &[bool];
    fn score(&self, delta: &Array2<f64>) -> Result<f64>;
    fn score_and_grad(&self, delta: &Array2<f64>) -> Result<(f64, Array2<f64>)>;
}

/// The real model viewed as a function of the embedding perturbation.
pub struct ModelScorer<'a> {
    cfg: &'a EncoderConfig,
    enc: &'a EncoderParams,
    head: &'a HeadParams,
    item: &'a Prepared,
    mask: Vec<bool>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(
        cfg: &'a EncoderConfig,
        enc: &'a EncoderParams,
        head: &'a HeadParams,
        item: &'a Prepared,
    ) -> Self {
        ModelScorer {
            cfg,
            enc,
            head,
            item,
            mask: item.seq.token_mask(),
        }
    }
}

impl EmbeddingScorer for ModelScorer<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.item.seq.len(), self.cfg.hidden)
    }

    fn mask(&self) -> &[bool] {
        &self.mask
    }

    fn score(&self, delta: &Array2<f64>) -> Result<f64> {
        let cache = forward(
            self.cfg,
            self.enc,
            self.head,
            &self.item.seq,
            Some(delta),
            self.item.feat,
            None,
        )?;
        Ok(cache.raw)
    }

    fn score_and_grad(&self, delta: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        let cache = forward(
            self.cfg,
            self.enc,
            self.head,
            &self.item.seq,
            Some(delta),
            self.item.feat,
            None,
        )?;
        let mut scratch = ModelGrads::zeros(self.cfg, self.head.w.len());
        let d_emb = backward(self.cfg, self.enc, self.head, &cache, 1.0, &mut scratch);
        Ok((cache.raw, d_emb))
    }
}

/// One projected-gradient search for the worst-case perturbation of a
/// single input: δ₀ ~ N(0, σ²) projected into the ∞-ball, then K steps
/// δ ← Π(δ + η·g/‖g‖∞) ascending the smoothness loss. Padding rows stay
/// exactly zero; a zero gradient skips the step.
pub fn pgd_single(
    scorer: &dyn EmbeddingScorer,
    adv: &AdversarialConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    let (len, dim) = scorer.dims();
    let mask = scorer.mask().to_vec();
    let normal = Normal::new(0.0, adv.init_variance.sqrt())
        .expect("validated init_variance is positive");
    let mut delta: Array2<f64> = Array2::zeros((len, dim));
    for i in 0..len {
        if !mask[i] {
            continue;
        }
        for j in 0..dim {
            let d: f64 = normal.sample(rng);
            delta[[i, j]] = d.clamp(-adv.epsilon, adv.epsilon);
        }
    }
    let reference = scorer.score(&Array2::zeros((len, dim)))?;
    for _ in 0..adv.pgd_steps {
        let (score, grad_f) = scorer.score_and_grad(&delta)?;
        // ∇_δ (f(x+δ) − f(x))² = 2(f(x+δ) − f(x))·∇_δ f
        let mut g = grad_f;
        g *= 2.0 * (score - reference);
        for i in 0..len {
            if !mask[i] {
                g.row_mut(i).fill(0.0);
            }
        }
        let gmax = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if gmax == 0.0 {
            continue;
        }
        let step = adv.step_size / gmax;
        for i in 0..len {
            if !mask[i] {
                continue;
            }
            for j in 0..dim {
                delta[[i, j]] = (delta[[i, j]] + step * g[[i, j]]).clamp(-adv.epsilon, adv.epsilon);
            }
        }
    }
    Ok(delta)
}

/// Worst-case embedding perturbations for a batch, one per instance,
/// searched independently per sample.
pub fn pgd_perturb(
    model: &RegressionModel,
    batch: &[Prepared],
    adv: &AdversarialConfig,
    seed: u64,
) -> Result<Vec<Array2<f64>>> {
    adv.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    batch
        .iter()
        .map(|item| {
            let scorer = ModelScorer::new(&model.cfg, &model.enc, &model.head, item);
            pgd_single(&scorer, adv, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmartLossParts {
    pub total: f64,
    pub task: f64,
    pub smooth: f64,
}

/// Everything one adversarial batch produces: loss parts, parameter
/// gradients, the perturbations used, and the stop-gradient reference
/// outputs (useful for freezing the objective in gradient checks).
pub struct SmartBatch {
    pub parts: SmartLossParts,
    pub grads: ModelGrads,
    pub deltas: Vec<Array2<f64>>,
    pub refs: Vec<f64>,
}

fn smart_batch_inner(
    cfg: &EncoderConfig,
    enc: &EncoderParams,
    head: &HeadParams,
    batch: &[&Prepared],
    adv: &AdversarialConfig,
    rng: &mut ChaCha8Rng,
    mut grads: Option<&mut ModelGrads>,
    mut capture: Option<(&mut Vec<Array2<f64>>, &mut Vec<f64>)>,
) -> Result<SmartLossParts> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let b = batch.len() as f64;
    let mut task_sum = 0.0;
    let mut smooth_sum = 0.0;
    for item in batch {
        let y = item
            .gold
            .ok_or_else(|| Error::invalid(format!("unlabeled instance '{}' in batch", item.id)))?;
        let clean = forward(cfg, enc, head, &item.seq, None, item.feat, None)?;
        let err = clean.raw - y;
        task_sum += err * err;
        if let Some(g) = grads.as_deref_mut() {
            backward(cfg, enc, head, &clean, 2.0 * err / b, g);
        }
        // α = 0 short-circuits: the regularizer contributes nothing.
        if adv.alpha == 0.0 {
            if let Some((deltas, refs)) = capture.as_mut() {
                deltas.push(Array2::zeros((item.seq.len(), cfg.hidden)));
                refs.push(clean.raw);
            }
            continue;
        }
        let scorer = ModelScorer::new(cfg, enc, head, item);
        let delta = pgd_single(&scorer, adv, rng)?;
        let perturbed = forward(cfg, enc, head, &item.seq, Some(&delta), item.feat, None)?;
        // f(x) is a constant target here: no gradient flows through it
        let diff = perturbed.raw - clean.raw;
        smooth_sum += diff * diff;
        if let Some(g) = grads.as_deref_mut() {
            backward(cfg, enc, head, &perturbed, adv.alpha * 2.0 * diff / b, g);
        }
        if let Some((deltas, refs)) = capture.as_mut() {
            deltas.push(delta);
            refs.push(clean.raw);
        }
    }
    let task = task_sum / b;
    let smooth = smooth_sum / b;
    Ok(SmartLossParts {
        total: task + adv.alpha * smooth,
        task,
        smooth,
    })
}

/// Task loss plus α times the mean smoothness penalty under the
/// per-sample worst-case perturbation.
pub fn smart_loss(
    model: &RegressionModel,
    batch: &[Prepared],
    adv: &AdversarialConfig,
    seed: u64,
) -> Result<SmartLossParts> {
    adv.validate()?;
    let refs: Vec<&Prepared> = batch.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    smart_batch_inner(&model.cfg, &model.enc, &model.head, &refs, adv, &mut rng, None, None)
}

pub fn smart_loss_and_grads(
    model: &RegressionModel,
    batch: &[Prepared],
    adv: &AdversarialConfig,
    seed: u64,
) -> Result<SmartBatch> {
    adv.validate()?;
    let refs_in: Vec<&Prepared> = batch.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grads = ModelGrads::zeros(&model.cfg, model.head.w.len());
    let mut deltas = Vec::new();
    let mut refs = Vec::new();
    let parts = smart_batch_inner(
        &model.cfg,
        &model.enc,
        &model.head,
        &refs_in,
        adv,
        &mut rng,
        Some(&mut grads),
        Some((&mut deltas, &mut refs)),
    )?;
    Ok(SmartBatch {
        parts,
        grads,
        deltas,
        refs,
    })
}

/// The SMART objective with frozen perturbations and frozen reference
/// outputs — the function whose analytic gradient `smart_loss_and_grads`
/// computes, suitable for finite-difference checks.
pub fn smart_loss_frozen(
    model: &RegressionModel,
    batch: &[Prepared],
    alpha: f64,
    deltas: &[Array2<f64>],
    refs: &[f64],
) -> Result<SmartLossParts> {
    if batch.len() != deltas.len() || batch.len() != refs.len() {
        return Err(Error::invalid("deltas/refs do not match the batch"));
    }
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let b = batch.len() as f64;
    let mut task_sum = 0.0;
    let mut smooth_sum = 0.0;
    for ((item, delta), reference) in batch.iter().zip(deltas).zip(refs) {
        let y = item
            .gold
            .ok_or_else(|| Error::invalid(format!("unlabeled instance '{}' in batch", item.id)))?;
        let clean = forward(&model.cfg, &model.enc, &model.head, &item.seq, None, item.feat, None)?;
        let err = clean.raw - y;
        task_sum += err * err;
        if alpha != 0.0 {
            let perturbed = forward(
                &model.cfg,
                &model.enc,
                &model.head,
                &item.seq,
                Some(delta),
                item.feat,
                None,
            )?;
            let diff = perturbed.raw - reference;
            smooth_sum += diff * diff;
        }
    }
    let task = task_sum / b;
    let smooth = smooth_sum / b;
    Ok(SmartLossParts {
        total: task + alpha * smooth,
        task,
        smooth,
    })
}

/// Per-epoch frozen snapshot plus its dev evaluation. `dev` is absent
/// when the dev metrics were undefined at that epoch (e.g. constant
/// predictions early in training).
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub model: RegressionModel,
    pub dev: Option<EvaluationReport>,
}

/// One snapshot per completed epoch, in epoch order.
#[derive(Debug, Clone, Default)]
pub struct CheckpointSet {
    pub records: Vec<EpochRecord>,
}

impl CheckpointSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// 1-based epoch lookup.
    pub fn snapshot(&self, epoch: usize) -> Result<&EpochRecord> {
        self.records
            .get(epoch.wrapping_sub(1))
            .ok_or_else(|| Error::invalid(format!("no snapshot for epoch {epoch}")))
    }

    pub fn dev_pearson_trace(&self) -> Vec<Option<f64>> {
        self.records
            .iter()
            .map(|r| r.dev.as_ref().map(|d| d.overall.pearson))
            .collect()
    }
}

/// Training method selector; FEAT and ADV compose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Standard,
    Feat,
    Adv,
    AdvFeat,
}

impl Method {
    pub fn uses_feat(&self) -> bool {
        matches!(self, Method::Feat | Method::AdvFeat)
    }

    pub fn uses_adv(&self) -> bool {
        matches!(self, Method::Adv | Method::AdvFeat)
    }
}

/// Shared run inputs: the vocabulary everything is encoded with and the
/// fitted frequency context when the feature is enabled.
pub struct TrainContext<'a> {
    pub vocab: &'a Vocabulary,
    pub feat: Option<&'a FeatContext>,
}

/// Epoch-level progress callback payload.
pub struct TrainEvent<'a> {
    pub task: &'a str,
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: Option<&'a EvaluationReport>,
}

/// Epoch-level progress callback; the trait-object lifetime is
/// independent of the reference lifetime so callers can reborrow it.
pub type Observer<'f> = dyn FnMut(&TrainEvent) + 'f;

/// Step-level digest trail used by the gradient-flow isolation checks.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub step: usize,
    pub task: String,
    pub encoder_digest: String,
    pub head_digests: BTreeMap<String, String>,
}

struct TaskSlot {
    id: String,
    train: Vec<Prepared>,
    dev: Vec<Prepared>,
    dev_gold: Dataset,
}

/// The engine behind every regime: per epoch, each task's shuffled
/// batches are built, the batch interleaving is shuffled, and each step
/// updates the shared encoder plus the owning task's head only.
fn run_engine(
    mtm: &mut MultiTaskModel,
    tasks: &[TaskSlot],
    tcfg: &TrainingConfig,
    adv: Option<&AdversarialConfig>,
    mut observer: Option<&mut Observer<'_>>,
    mut trace: Option<&mut Vec<StepTrace>>,
) -> Result<BTreeMap<String, CheckpointSet>> {
    tcfg.validate()?;
    if let Some(a) = adv {
        a.validate()?;
    }
    if tasks.is_empty() {
        return Err(Error::invalid("no tasks to train on"));
    }
    for task in tasks {
        if task.train.is_empty() {
            return Err(Error::invalid(format!("task '{}' has no training data", task.id)));
        }
        if let Some(bad) = task.train.iter().find(|p| p.gold.is_none()) {
            return Err(Error::invalid(format!(
                "unlabeled training instance '{}' in task '{}'",
                bad.id, task.id
            )));
        }
        if !mtm.heads.contains_key(&task.id) {
            return Err(Error::invalid(format!("model has no head for task '{}'", task.id)));
        }
    }

    let steps_per_epoch: usize = tasks
        .iter()
        .map(|t| t.train.len().div_ceil(tcfg.batch_size))
        .sum();
    let total_steps = steps_per_epoch * tcfg.max_epochs;

    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    // separate stream so adversarial noise does not disturb shuffling
    let mut adv_rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0xadf0_0000);
    let mut adam = Adam::new();
    let mut out: BTreeMap<String, CheckpointSet> = tasks
        .iter()
        .map(|t| (t.id.clone(), CheckpointSet::default()))
        .collect();

    let mut step = 0usize;
    for epoch in 1..=tcfg.max_epochs {
        let mut schedule: Vec<(usize, Vec<usize>)> = Vec::with_capacity(steps_per_epoch);
        for (ti, task) in tasks.iter().enumerate() {
            let mut order: Vec<usize> = (0..task.train.len()).collect();
            order.shuffle(&mut rng);
            for chunk in order.chunks(tcfg.batch_size) {
                schedule.push((ti, chunk.to_vec()));
            }
        }
        schedule.shuffle(&mut rng);

        let mut loss_sums = vec![0.0; tasks.len()];
        let mut batch_counts = vec![0usize; tasks.len()];
        for (ti, indices) in &schedule {
            step += 1;
            let task = &tasks[*ti];
            let batch: Vec<&Prepared> = indices.iter().map(|&i| &task.train[i]).collect();

            let (loss, mut grads) = {
                let head = &mtm.heads[&task.id];
                let mut grads = ModelGrads::zeros(&mtm.cfg, head.w.len());
                let loss = match adv {
                    None => {
                        let mut sum = 0.0;
                        batch_forward_losses(
                            &mtm.cfg,
                            &mtm.enc,
                            head,
                            &batch,
                            &mut sum,
                            Some(&mut grads),
                        )?;
                        sum / batch.len() as f64
                    }
                    Some(a) => {
                        smart_batch_inner(
                            &mtm.cfg,
                            &mtm.enc,
                            head,
                            &batch,
                            a,
                            &mut adv_rng,
                            Some(&mut grads),
                            None,
                        )?
                        .total
                    }
                };
                (loss, grads)
            };
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss diverged at step {step}")));
            }
            loss_sums[*ti] += loss;
            batch_counts[*ti] += 1;

            clip_gradients(&mut grads, tcfg.clip_norm)?;
            let lr = lr_at(step, total_steps, tcfg);

            let mut grad_slices = Vec::new();
            grads.visit(&mut grad_slices);
            let mut param_slices = Vec::new();
            mtm.enc.visit_mut(&mut param_slices);
            mtm.heads
                .get_mut(&task.id)
                .unwrap()
                .visit_mut(&format!("head.{}.", task.id), &mut param_slices);
            adam.step(lr, &mut param_slices, &grad_slices);
            drop(param_slices);

            if let Some(tr) = trace.as_deref_mut() {
                let head_digests = mtm
                    .heads
                    .keys()
                    .map(|id| (id.clone(), mtm.head_digest(id).unwrap()))
                    .collect();
                tr.push(StepTrace {
                    step,
                    task: task.id.clone(),
                    encoder_digest: mtm.encoder_digest(),
                    head_digests,
                });
            }
        }

        for (ti, task) in tasks.iter().enumerate() {
            let snapshot = mtm.task_model(&task.id)?;
            let dev = predict_prepared(&snapshot, &task.dev)
                .and_then(|preds| evaluate(&preds, &task.dev_gold))
                .ok();
            let train_loss = if batch_counts[ti] > 0 {
                loss_sums[ti] / batch_counts[ti] as f64
            } else {
                f64::NAN
            };
            if let Some(obs) = observer.as_deref_mut() {
                obs(&TrainEvent {
                    task: &task.id,
                    epoch,
                    train_loss,
                    dev: dev.as_ref(),
                });
            }
            out.get_mut(&task.id).unwrap().records.push(EpochRecord {
                epoch,
                train_loss,
                model: snapshot,
                dev,
            });
        }
    }
    Ok(out)
}

fn make_slot(
    id: &str,
    train_data: &Dataset,
    dev_data: &Dataset,
    max_len: usize,
    ctx: &TrainContext,
    use_feat: bool,
) -> TaskSlot {
    let feat = if use_feat { ctx.feat } else { None };
    TaskSlot {
        id: id.to_string(),
        train: prepare_instances(train_data, ctx.vocab, max_len, feat),
        dev: prepare_instances(dev_data, ctx.vocab, max_len, feat),
        dev_gold: dev_data.clone(),
    }
}

fn check_method(model_feat: bool, method: Method, adv: Option<&AdversarialConfig>, ctx: &TrainContext) -> Result<()> {
    if method.uses_feat() != model_feat {
        return Err(Error::invalid(
            "method/model mismatch: the frequency feature must be enabled on both or neither",
        ));
    }
    if method.uses_feat() && ctx.feat.is_none() {
        return Err(Error::invalid(
            "feature training requires a fitted frequency context",
        ));
    }
    if method.uses_adv() && adv.is_none() {
        return Err(Error::invalid("adversarial method requires an adversarial config"));
    }
    if !method.uses_adv() && adv.is_some() {
        return Err(Error::invalid(
            "adversarial config supplied for a non-adversarial method",
        ));
    }
    Ok(())
}

/// Standard / FEAT / ADV fine-tuning: Adam with the warmup-decay
/// schedule and per-step clipping, one dev evaluation and snapshot per
/// epoch, fully deterministic given the seed.
pub fn train(
    model: RegressionModel,
    train_data: &Dataset,
    dev_data: &Dataset,
    tcfg: &TrainingConfig,
    method: Method,
    adv: Option<&AdversarialConfig>,
    ctx: &TrainContext,
    observer: Option<&mut Observer<'_>>,
) -> Result<CheckpointSet> {
    check_method(model.feat_enabled, method, adv, ctx)?;
    if train_data.is_empty() {
        return Err(Error::invalid("empty training dataset"));
    }
    if dev_data.subtask != train_data.subtask {
        return Err(Error::invalid("train and dev subtasks differ"));
    }
    let task_id = train_data.subtask.to_string();
    let slot = make_slot(&task_id, train_data, dev_data, model.cfg.max_len, ctx, method.uses_feat());
    let mut mtm = MultiTaskModel {
        cfg: model.cfg,
        feat_enabled: model.feat_enabled,
        enc: model.enc,
        heads: BTreeMap::from([(task_id.clone(), model.head)]),
    };
    let mut sets = run_engine(&mut mtm, &[slot], tcfg, adv, observer, None)?;
    Ok(sets.remove(&task_id).unwrap())
}

/// Multi-step fine-tuning outcome: the stage-1 checkpoints, which epoch
/// was handed off (with digests from both sides of the handoff), and the
/// stage-2 checkpoints — the result proper.
pub struct MsftOutcome {
    pub stage1: CheckpointSet,
    pub stage1_best_epoch: usize,
    pub stage1_best_digest: String,
    pub stage2_init_digest: String,
    pub stage2: CheckpointSet,
}

/// Fine-tunes on the data-rich stage-1 task, selects the best epoch by
/// whole-dev Pearson, then continues training that snapshot on stage 2
/// with a fresh optimizer (stage-2 shuffling derives from seed+1).
#[allow(clippy::too_many_arguments)]
pub fn train_msft(
    model: RegressionModel,
    stage1_train: &Dataset,
    stage1_dev: &Dataset,
    stage2_train: &Dataset,
    stage2_dev: &Dataset,
    tcfg: &TrainingConfig,
    method: Method,
    adv: Option<&AdversarialConfig>,
    ctx: &TrainContext,
    mut observer: Option<&mut Observer<'_>>,
) -> Result<MsftOutcome> {
    if stage1_train.is_empty() || stage2_train.is_empty() {
        return Err(Error::invalid("both MSFT stages need non-empty training data"));
    }
    let stage1 = train(
        model,
        stage1_train,
        stage1_dev,
        tcfg,
        method,
        adv,
        ctx,
        observer.as_deref_mut(),
    )?;
    let best = match select_best(&stage1, false)? {
        BestSelection::Whole { epoch } => epoch,
        BestSelection::PerDomain { .. } => unreachable!(),
    };
    let handoff = stage1.snapshot(best)?.model.clone();
    let stage1_best_digest = stage1.snapshot(best)?.model.digest();
    let stage2_init_digest = handoff.digest();

    let stage2_cfg = TrainingConfig {
        seed: tcfg.seed.wrapping_add(1),
        ..*tcfg
    };
    let stage2 = train(
        handoff,
        stage2_train,
        stage2_dev,
        &stage2_cfg,
        method,
        adv,
        ctx,
        observer,
    )?;
    Ok(MsftOutcome {
        stage1,
        stage1_best_epoch: best,
        stage1_best_digest,
        stage2_init_digest,
        stage2,
    })
}

/// Multi-task training over a shared encoder: every epoch interleaves
/// all tasks' batches in shuffled order; each step touches the encoder
/// and the owning task's head only.
pub fn train_mtl(
    mut mtm: MultiTaskModel,
    tasks: &BTreeMap<String, (Dataset, Dataset)>,
    tcfg: &TrainingConfig,
    adv: Option<&AdversarialConfig>,
    ctx: &TrainContext,
    observer: Option<&mut Observer<'_>>,
) -> Result<BTreeMap<String, CheckpointSet>> {
    if tasks.is_empty() {
        return Err(Error::invalid("empty task map"));
    }
    let slots: Vec<TaskSlot> = tasks
        .iter()
        .map(|(id, (train_data, dev_data))| {
            make_slot(id, train_data, dev_data, mtm.cfg.max_len, ctx, mtm.feat_enabled)
        })
        .collect();
    run_engine(&mut mtm, &slots, tcfg, adv, observer, None)
}

/// As `train_mtl`, but records per-step encoder/head digests (used by
/// the gradient-flow isolation checks).
pub fn train_mtl_traced(
    mut mtm: MultiTaskModel,
    tasks: &BTreeMap<String, (Dataset, Dataset)>,
    tcfg: &TrainingConfig,
    adv: Option<&AdversarialConfig>,
    ctx: &TrainContext,
    trace: &mut Vec<StepTrace>,
) -> Result<BTreeMap<String, CheckpointSet>> {
    if tasks.is_empty() {
        return Err(Error::invalid("empty task map"));
    }
    let slots: Vec<TaskSlot> = tasks
        .iter()
        .map(|(id, (train_data, dev_data))| {
            make_slot(id, train_data, dev_data, mtm.cfg.max_len, ctx, mtm.feat_enabled)
        })
        .collect();
    run_engine(&mut mtm, &slots, tcfg, adv, None, Some(trace))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BestSelection {
    Whole { epoch: usize },
    PerDomain { epochs: BTreeMap<Domain, usize> },
}

/// Picks the epoch with the highest dev Pearson (whole-dev, or
/// independently per domain); ties break to the earliest epoch. Epochs
/// whose metrics were undefined are skipped; it is an error for every
/// epoch to be undefined in a required partition.
pub fn select_best(cs: &CheckpointSet, per_domain: bool) -> Result<BestSelection> {
    if cs.is_empty() {
        return Err(Error::invalid("empty checkpoint set"));
    }
    if !per_domain {
        let mut best: Option<(usize, f64)> = None;
        for rec in &cs.records {
            if let Some(dev) = &rec.dev {
                let r = dev.overall.pearson;
                if best.map_or(true, |(_, b)| r > b) {
                    best = Some((rec.epoch, r));
                }
            }
        }
        let (epoch, _) = best.ok_or_else(|| {
            Error::Undefined("no epoch has a defined whole-dev Pearson".into())
        })?;
        return Ok(BestSelection::Whole { epoch });
    }
    let mut epochs = BTreeMap::new();
    for domain in Domain::ALL {
        let mut best: Option<(usize, f64)> = None;
        for rec in &cs.records {
            let r = rec
                .dev
                .as_ref()
                .and_then(|d| d.per_domain.get(&domain))
                .map(|m| m.pearson);
            if let Some(r) = r {
                if best.map_or(true, |(_, b)| r > b) {
                    best = Some((rec.epoch, r));
                }
            }
        }
        let (epoch, _) = best.ok_or_else(|| {
            Error::Undefined(format!("no epoch has a defined dev Pearson for domain {domain}"))
        })?;
        epochs.insert(domain, epoch);
    }
    Ok(BestSelection::PerDomain { epochs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub batch_size: usize,
}

/// The standard 3×3 search space over learning rate and batch size.
pub fn default_grid() -> Vec<GridPoint> {
    let mut grid = Vec::new();
    for &lr in &TARGET_SCALE_LR_GRID {
        for &batch in &BATCH_SIZE_GRID {
            grid.push(GridPoint {
                learning_rate: lr,
                batch_size: batch,
            });
        }
    }
    grid
}

pub struct GridTrial {
    pub point: GridPoint,
    pub best_epoch: Option<usize>,
    pub dev_pearson: Option<f64>,
    pub checkpoints: CheckpointSet,
}

pub struct GridOutcome {
    pub best_index: usize,
    pub best_config: TrainingConfig,
    pub trials: Vec<GridTrial>,
}

impl GridOutcome {
    pub fn best(&self) -> &GridTrial {
        &self.trials[self.best_index]
    }
}

/// Exhaustively trains every grid point and keeps the one whose best
/// checkpoint has the highest dev Pearson; ties break to grid order.
pub fn grid_search(
    base: &TrainingConfig,
    grid: &[GridPoint],
    mut train_fn: impl FnMut(&TrainingConfig) -> Result<CheckpointSet>,
) -> Result<GridOutcome> {
    if grid.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    let mut trials = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, point) in grid.iter().enumerate() {
        let cfg = TrainingConfig {
            learning_rate: point.learning_rate,
            batch_size: point.batch_size,
            ..*base
        };
        let checkpoints = train_fn(&cfg)?;
        let (best_epoch, dev_pearson) = match select_best(&checkpoints, false) {
            Ok(BestSelection::Whole { epoch }) => {
                let r = checkpoints.snapshot(epoch)?.dev.as_ref().unwrap().overall.pearson;
                (Some(epoch), Some(r))
            }
            _ => (None, None),
        };
        if let Some(r) = dev_pearson {
            if best.map_or(true, |(_, b)| r > b) {
                best = Some((i, r));
            }
        }
        trials.push(GridTrial {
            point: *point,
            best_epoch,
            dev_pearson,
            checkpoints,
        });
    }
    let (best_index, _) = best.ok_or_else(|| {
        Error::Undefined("no grid point produced a defined dev Pearson".into())
    })?;
    let best_config = TrainingConfig {
        learning_rate: grid[best_index].learning_rate,
        batch_size: grid[best_index].batch_size,
        ..*base
    };
    Ok(GridOutcome {
        best_index,
        best_config,
        trials,
    })
}
