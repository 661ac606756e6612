//! Positive/negative batch sampling, the per-relation optimization loop,
//! and validation-loss ensemble weighting.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{backward, forward_tape, loss_pairwise_logistic_with_grad, Gradients};
use crate::error::{Error, Result};
use crate::infer::{InferenceConfig, Query};
use crate::kg::{background_for, build_adjacency, build_extended, KnowledgeBase, Stage};
use crate::rng::rng_for;
use crate::rule::{init_weights, RuleSchema, RuleWeights, SoftEnsemble};

/// Training hyperparameters. The defaults are the benchmark recipe: 2048
/// steps of batch 64 at learning rate 0.15 with weight decay 0.1, an
/// N=4 schema, 8 rule bodies, and 3 message-passing rounds.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub n_vars: usize,
    pub bodies: usize,
    pub r_max: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2048,
            batch_size: 64,
            learning_rate: 0.15,
            weight_decay: 0.1,
            n_vars: 4,
            bodies: 8,
            r_max: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0
            || self.batch_size == 0
            || self.n_vars < 2
            || self.bodies == 0
            || self.r_max == 0
        {
            return Err(Error::InvalidConfig(
                "steps, batch_size, bodies, r_max must be positive and n_vars >= 2".into(),
            ));
        }
        // the negated form also rejects a NaN learning rate
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(
                "learning_rate must be > 0 and weight_decay >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn inference(&self) -> InferenceConfig {
        InferenceConfig::with_rounds(self.r_max)
    }
}

/// First/second moment estimates for decoupled-weight-decay Adam.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(n_params: usize) -> Self {
        OptimizerState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One decoupled-weight-decay update:
/// `p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`.
/// Rejects non-finite gradients before touching any state.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    lr: f64,
    wd: f64,
) -> Result<()> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient {
            step: state.step + 1,
            param: bad,
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * (m_hat / (v_hat.sqrt() + state.eps) + wd * *p);
    }
    Ok(())
}

/// A batch of (head, tail) queries for one target relation with binary
/// labels, positives and negatives Bernoulli-balanced 1:1 on average.
#[derive(Debug, Clone)]
pub struct LabeledBatch {
    pub relation: usize,
    pub queries: Vec<Query>,
    pub labels: Vec<f64>,
}

/// Per-relation sampling context: the positive pool and the closed-world
/// membership set negatives are rejected against.
pub struct RelationSampler {
    pub relation: usize,
    positives: Vec<(usize, usize)>,
    corrupt_pool: Vec<(usize, usize)>,
    known: HashSet<(usize, usize)>,
    n_entities: usize,
}

const REJECTION_ATTEMPTS: usize = 100;

impl RelationSampler {
    /// `positive_source` supplies the training positives; `known_pairs`
    /// the pairs a sampled negative must avoid.
    pub fn new(
        relation: usize,
        positives: Vec<(usize, usize)>,
        known: HashSet<(usize, usize)>,
        n_entities: usize,
    ) -> Result<Self> {
        if positives.is_empty() {
            return Err(Error::NoTrainPositives(format!("relation {relation}")));
        }
        let mut corrupt_pool: Vec<(usize, usize)> = known.iter().copied().collect();
        corrupt_pool.sort_unstable();
        Ok(RelationSampler {
            relation,
            positives,
            corrupt_pool,
            known,
            n_entities,
        })
    }

    /// Sampler for training: positives from the train split only; negatives
    /// corrupt pairs known from train or facts and must avoid both.
    pub fn for_training(kb: &KnowledgeBase, relation: usize) -> Result<Self> {
        let positives: Vec<(usize, usize)> = kb
            .train
            .iter()
            .filter(|t| t.relation == relation)
            .map(|t| (t.head, t.tail))
            .collect();
        let known: HashSet<(usize, usize)> = kb
            .facts
            .iter()
            .chain(kb.train.iter())
            .filter(|t| t.relation == relation)
            .map(|t| (t.head, t.tail))
            .collect();
        Self::new(relation, positives, known, kb.num_entities())
    }

    /// Sampler for validation weighting: positives from the valid split;
    /// negatives additionally avoid valid-split pairs.
    pub fn for_validation(kb: &KnowledgeBase, relation: usize) -> Result<Self> {
        let positives: Vec<(usize, usize)> = kb
            .valid
            .iter()
            .filter(|t| t.relation == relation)
            .map(|t| (t.head, t.tail))
            .collect();
        let known: HashSet<(usize, usize)> = kb
            .facts
            .iter()
            .chain(kb.train.iter())
            .chain(kb.valid.iter())
            .filter(|t| t.relation == relation)
            .map(|t| (t.head, t.tail))
            .collect();
        Self::new(relation, positives, known, kb.num_entities())
    }

    pub fn positives(&self) -> &[(usize, usize)] {
        &self.positives
    }

    /// One negative pair: corrupt the head or tail of a known positive with
    /// a uniform entity, resampling until the pair is unknown; a full
    /// rejection budget falls back to a uniform random pair.
    pub fn sample_negative(&self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        for _ in 0..REJECTION_ATTEMPTS {
            let &(h, t) = &self.corrupt_pool[rng.gen_range(0..self.corrupt_pool.len())];
            let corrupt_head = rng.gen_bool(0.5);
            let e = rng.gen_range(0..self.n_entities);
            let pair = if corrupt_head { (e, t) } else { (h, e) };
            if !self.known.contains(&pair) {
                return pair;
            }
        }
        (
            rng.gen_range(0..self.n_entities),
            rng.gen_range(0..self.n_entities),
        )
    }

    /// A Bernoulli-balanced batch: each slot is independently a uniform
    /// train positive or a sampled negative with probability 1/2.
    pub fn sample_batch(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> LabeledBatch {
        let mut queries = Vec::with_capacity(batch_size);
        let mut labels = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            if rng.gen_bool(0.5) {
                let &(h, t) = &self.positives[rng.gen_range(0..self.positives.len())];
                queries.push(Query {
                    head: h,
                    tail: t,
                    relation: self.relation,
                });
                labels.push(1.0);
            } else {
                let (h, t) = self.sample_negative(rng);
                queries.push(Query {
                    head: h,
                    tail: t,
                    relation: self.relation,
                });
                labels.push(0.0);
            }
        }
        LabeledBatch {
            relation: self.relation,
            queries,
            labels,
        }
    }

    pub fn is_known(&self, pair: (usize, usize)) -> bool {
        self.known.contains(&pair)
    }
}

/// A Bernoulli-balanced training batch for one relation. Fails with a
/// skip-relation signal when the relation has no train positives.
pub fn sample_batch(
    kb: &KnowledgeBase,
    relation: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LabeledBatch> {
    Ok(RelationSampler::for_training(kb, relation)?.sample_batch(batch_size, rng))
}

/// One `{step, mean_loss}` record of the training trace.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub mean_loss: f64,
}

/// Trains an ensemble of independently initialized rule bodies for one
/// target relation against the facts-only background. Each step samples one
/// shared batch, forwards every body, averages the per-body pairwise
/// logistic losses, and applies a single joint AdamW update to all logits.
pub fn train_relation(
    kb: &KnowledgeBase,
    relation: usize,
    config: &TrainConfig,
) -> Result<(SoftEnsemble, Vec<LossRecord>)> {
    config.validate()?;
    let ext = build_extended(kb);
    let bg = background_for(Stage::Train, kb);
    let b = build_adjacency(&bg, kb.num_entities(), ext)?;
    let sampler = RelationSampler::for_training(kb, relation)?;
    let schema = RuleSchema::new(config.n_vars)?;
    let cfg = config.inference();

    let mut bodies: Vec<RuleWeights> = (0..config.bodies)
        .map(|i| {
            init_weights(
                schema,
                ext,
                relation,
                crate::rng::derive_seed(config.seed, "body", &[relation as u64, i as u64]),
            )
        })
        .collect();

    let slot_len = ext.total_count();
    let n_slots = schema.num_slots();
    let params_per_body = n_slots * slot_len;
    let mut opt = OptimizerState::new(config.bodies * params_per_body);
    let mut batch_rng = rng_for(config.seed, "batch", &[relation as u64]);
    let mut trace = Vec::with_capacity(config.steps);

    let mut flat_grads = vec![0.0; config.bodies * params_per_body];
    let mut flat_params = vec![0.0; config.bodies * params_per_body];

    for step in 0..config.steps {
        let batch = sampler.sample_batch(config.batch_size, &mut batch_rng);

        // forward + backward per body; bodies are independent given the batch
        let results: Vec<Result<(f64, Gradients)>> = bodies
            .par_iter()
            .map(|body| {
                let tape = forward_tape(&batch.queries, body, &b, &cfg)?;
                let (loss, mut grad) =
                    loss_pairwise_logistic_with_grad(tape.scores(), &batch.labels);
                let scale = 1.0 / config.bodies as f64;
                for g in grad.iter_mut() {
                    *g *= scale;
                }
                let grads = backward(&tape, &b, &grad)?;
                Ok((loss, grads))
            })
            .collect();

        let mut mean_loss = 0.0;
        for (bi, res) in results.into_iter().enumerate() {
            let (loss, grads) = res?;
            mean_loss += loss / config.bodies as f64;
            let base = bi * params_per_body;
            for (s, slot) in grads.per_slot.iter().enumerate() {
                let off = base + s * slot_len;
                flat_grads[off..off + slot_len].copy_from_slice(slot);
            }
        }
        for (bi, body) in bodies.iter().enumerate() {
            let base = bi * params_per_body;
            for (s, slot) in body.logits.iter().enumerate() {
                let off = base + s * slot_len;
                flat_params[off..off + slot_len].copy_from_slice(slot);
            }
        }
        adamw_step(
            &mut flat_params,
            &flat_grads,
            &mut opt,
            config.learning_rate,
            config.weight_decay,
        )?;
        for (bi, body) in bodies.iter_mut().enumerate() {
            let base = bi * params_per_body;
            for (s, slot) in body.logits.iter_mut().enumerate() {
                let off = base + s * slot_len;
                slot.copy_from_slice(&flat_params[off..off + slot_len]);
            }
        }
        trace.push(LossRecord { step, mean_loss });
    }

    Ok((SoftEnsemble::new(relation, bodies), trace))
}

/// Trains every requested relation that has train positives (all relations
/// by default), attaching validation-loss body weights. Relations without
/// positives are skipped with a warning. Returns ensembles keyed by
/// relation together with the loss traces.
pub fn train_dataset(
    kb: &KnowledgeBase,
    relations: Option<&[usize]>,
    config: &TrainConfig,
) -> Result<std::collections::HashMap<usize, (SoftEnsemble, Vec<LossRecord>)>> {
    let all: Vec<usize> = match relations {
        Some(r) => r.to_vec(),
        None => (0..kb.num_relations()).collect(),
    };
    let mut out = std::collections::HashMap::new();
    for relation in all {
        match train_relation(kb, relation, config) {
            Ok((mut ensemble, trace)) => {
                let scores = validation_weights(&ensemble, kb, relation, config)?;
                ensemble = ensemble.with_scores(scores);
                out.insert(relation, (ensemble, trace));
            }
            Err(Error::NoTrainPositives(_)) => {
                log::warn!(
                    "skipping relation `{}`: no train positives",
                    kb.relation_names[relation]
                );
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Validation-loss body weights: every validation positive is scored once
/// together with a matched sampled negative, per-body average losses are
/// taken over pair-normalized batches, and each body receives the ratio of
/// the smallest average loss to its own. Bodies with exactly zero loss get
/// weight 1; a relation without validation positives weights every body 1.
pub fn validation_weights(
    ensemble: &SoftEnsemble,
    kb: &KnowledgeBase,
    relation: usize,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    let n_bodies = ensemble.bodies.len();
    let sampler = match RelationSampler::for_validation(kb, relation) {
        Ok(s) => s,
        Err(Error::NoTrainPositives(_)) => return Ok(vec![1.0; n_bodies]),
        Err(e) => return Err(e),
    };
    let ext = build_extended(kb);
    let bg = background_for(Stage::Eval, kb);
    let b = build_adjacency(&bg, kb.num_entities(), ext)?;
    let cfg = config.inference();
    let mut rng = rng_for(config.seed, "val-weights", &[relation as u64]);

    // one pass over all validation positives, chunked with matched negatives
    let mut batches: Vec<(Vec<Query>, Vec<f64>)> = Vec::new();
    for chunk in sampler.positives().chunks(config.batch_size.max(1)) {
        let mut queries = Vec::with_capacity(chunk.len() * 2);
        let mut labels = Vec::with_capacity(chunk.len() * 2);
        for &(h, t) in chunk {
            queries.push(Query {
                head: h,
                tail: t,
                relation,
            });
            labels.push(1.0);
            let (nh, nt) = sampler.sample_negative(&mut rng);
            queries.push(Query {
                head: nh,
                tail: nt,
                relation,
            });
            labels.push(0.0);
        }
        batches.push((queries, labels));
    }

    let mean_losses: Vec<f64> = ensemble
        .bodies
        .par_iter()
        .map(|body| -> Result<f64> {
            let mut total = 0.0;
            let mut count = 0usize;
            for (queries, labels) in &batches {
                let scores = crate::autodiff::forward_scores(queries, body, &b, &cfg)?;
                let (loss, _) = loss_pairwise_logistic_with_grad(&scores, labels);
                let pairs = labels.iter().filter(|&&l| l > 0.5).count()
                    * labels.iter().filter(|&&l| l <= 0.5).count();
                if pairs > 0 {
                    total += loss / pairs as f64;
                    count += 1;
                }
            }
            Ok(if count > 0 { total / count as f64 } else { 0.0 })
        })
        .collect::<Result<Vec<f64>>>()?;

    Ok(weights_from_losses(&mean_losses))
}

/// `w_i = l_min / l_i` with zero losses pinned to weight 1 and the minimum
/// taken over the nonzero losses.
pub fn weights_from_losses(losses: &[f64]) -> Vec<f64> {
    let min_nonzero = losses
        .iter()
        .copied()
        .filter(|&l| l > 0.0)
        .fold(f64::INFINITY, f64::min);
    losses
        .iter()
        .map(|&l| {
            if l == 0.0 || !min_nonzero.is_finite() {
                1.0
            } else {
                min_nonzero / l
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{kb_from_named, SplitKind};

    #[test]
    fn adamw_zero_grad_behaviour() {
        let mut p = vec![1.0, -2.0];
        let g = vec![0.0, 0.0];
        let mut st = OptimizerState::new(2);
        adamw_step(&mut p, &g, &mut st, 0.1, 0.0).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        // decay-only update scales by (1 - lr*wd)
        adamw_step(&mut p, &g, &mut st, 0.1, 0.1).unwrap();
        assert!((p[0] - 0.99).abs() < 1e-12);
        assert!((p[1] + 1.98).abs() < 1e-12);
    }

    #[test]
    fn adamw_constant_gradient_limit() {
        // with a constant gradient the bias-corrected ratio m_hat/sqrt(v_hat)
        // approaches 1, so the step magnitude approaches lr
        let mut p = vec![0.0];
        let g = vec![0.5];
        let mut st = OptimizerState::new(1);
        let lr = 0.01;
        let mut last = p[0];
        let mut step_size = 0.0;
        for _ in 0..500 {
            adamw_step(&mut p, &g, &mut st, lr, 0.0).unwrap();
            step_size = (p[0] - last).abs();
            last = p[0];
        }
        assert!((step_size - lr).abs() < 1e-4, "step size {step_size}");
    }

    #[test]
    fn adamw_rejects_non_finite() {
        let mut p = vec![0.0];
        let mut st = OptimizerState::new(1);
        let err = adamw_step(&mut p, &[f64::NAN], &mut st, 0.1, 0.0);
        assert!(err.is_err());
        assert_eq!(st.step, 0);
    }

    fn three_entity_kb() -> KnowledgeBase {
        kb_from_named(&[
            (SplitKind::Facts, &[("a", "r", "b")]),
            (SplitKind::Train, &[("a", "r", "c")]),
        ])
    }

    #[test]
    fn sampler_single_positive() {
        let kb = three_entity_kb();
        let mut rng = rng_for(0, "t", &[]);
        let batch = sample_batch(&kb, 0, 32, &mut rng).unwrap();
        let sampler = RelationSampler::for_training(&kb, 0).unwrap();
        for (q, &l) in batch.queries.iter().zip(&batch.labels) {
            if l > 0.5 {
                assert_eq!((q.head, q.tail), (0, 2));
            } else {
                assert!(!sampler.is_known((q.head, q.tail)));
            }
        }
    }

    #[test]
    fn sampler_balance_concentrates() {
        let kb = three_entity_kb();
        let sampler = RelationSampler::for_training(&kb, 0).unwrap();
        let mut rng = rng_for(1, "balance", &[]);
        let batch = sampler.sample_batch(10_000, &mut rng);
        let pos = batch.labels.iter().filter(|&&l| l > 0.5).count() as f64 / 10_000.0;
        assert!((pos - 0.5).abs() < 0.02, "positive fraction {pos}");
    }

    #[test]
    fn sampler_missing_relation_signals_skip() {
        let kb = three_entity_kb();
        let mut rng = rng_for(0, "t", &[]);
        assert!(matches!(
            sample_batch(&kb, 5, 4, &mut rng),
            Err(Error::NoTrainPositives(_))
        ));
    }

    #[test]
    fn validation_without_positives_weights_uniformly() {
        let kb = three_entity_kb(); // empty valid split
        let ext = crate::kg::build_extended(&kb);
        let schema = crate::rule::RuleSchema::new(3).unwrap();
        let ensemble = crate::rule::SoftEnsemble::new(
            0,
            (0..4)
                .map(|i| crate::rule::init_weights(schema, ext, 0, i))
                .collect(),
        );
        let cfg = TrainConfig {
            steps: 1,
            ..TrainConfig::default()
        };
        let w = validation_weights(&ensemble, &kb, 0, &cfg).unwrap();
        assert_eq!(w, vec![1.0; 4]);
    }

    #[test]
    fn weights_from_losses_rules() {
        let w = weights_from_losses(&[0.1, 0.2, 0.4]);
        assert!((w[0] - 1.0).abs() < 1e-12);
        assert!((w[1] - 0.5).abs() < 1e-12);
        assert!((w[2] - 0.25).abs() < 1e-12);
        // zero-loss body pinned to 1, min taken over nonzero
        let w = weights_from_losses(&[0.0, 0.2, 0.4]);
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 1.0).abs() < 1e-12);
        assert!((w[2] - 0.5).abs() < 1e-12);
        // identical bodies all get 1
        let w = weights_from_losses(&[0.3, 0.3]);
        assert!(w.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        let w = weights_from_losses(&[0.0, 0.0]);
        assert!(w.iter().all(|&x| x == 1.0));
        // max is exactly 1
        let w = weights_from_losses(&[0.7, 0.9, 1.3]);
        assert_eq!(w.iter().cloned().fold(f64::MIN, f64::max), 1.0);
    }
}
