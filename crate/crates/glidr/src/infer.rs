//! Iterative consistency-propagation inference over the graph-like schema,
//! in both the soft (probability-weighted) and hard (binary) settings.
//!
//! Rounds alternate forward and backward sweeps over the schema variables.
//! In a forward round variables are processed in order Z1..ZN: each variable
//! first folds in the messages emitted to it earlier in the round
//! (element-wise minimum), then emits messages to every later variable
//! through its slots. Backward rounds mirror this with reversed order and
//! transposed adjacency access.

use crate::error::{Error, Result};
use crate::kg::AdjacencyTensor;
use crate::rule::{HardRule, RuleWeights, SoftEnsemble};

/// A ground query `relation(head, tail)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Query {
    pub head: usize,
    pub tail: usize,
    pub relation: usize,
}

/// Knobs for the propagation loop. The soft setting always runs exactly
/// `r_max` rounds so the computation shape is static for differentiation;
/// the tolerances drive fixed-point and wipeout detection in the hard
/// setting's diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct InferenceConfig {
    pub r_max: usize,
    pub convergence_tol: f64,
    pub wipeout_tol: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            r_max: 3,
            convergence_tol: 1e-9,
            wipeout_tol: 1e-12,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_max < 1 {
            return Err(Error::InvalidConfig("r_max must be >= 1".into()));
        }
        // the negated form also rejects NaN tolerances
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.convergence_tol > 0.0) || !(self.wipeout_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be > 0".into()));
        }
        Ok(())
    }

    pub fn with_rounds(r_max: usize) -> Self {
        InferenceConfig {
            r_max,
            ..Default::default()
        }
    }
}

/// Whether a message runs along the stored adjacency or its transpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// The soft domains tracked per schema variable, entries in [0, 1].
/// `states[0]` belongs to Z1, `states[n-1]` to ZN.
#[derive(Debug, Clone)]
pub struct VariableStates {
    pub states: Vec<Vec<f64>>,
}

impl VariableStates {
    pub fn state(&self, var: usize) -> &[f64] {
        &self.states[var - 1]
    }
}

/// One-hot endpoints, all-ones interiors.
pub fn init_states(query: Query, n_vars: usize, n_entities: usize) -> Result<VariableStates> {
    for idx in [query.head, query.tail] {
        if idx >= n_entities {
            return Err(Error::EntityOutOfRange {
                index: idx,
                bound: n_entities,
            });
        }
    }
    let mut states = vec![vec![1.0; n_entities]; n_vars];
    states[0] = vec![0.0; n_entities];
    states[0][query.head] = 1.0;
    states[n_vars - 1] = vec![0.0; n_entities];
    states[n_vars - 1][query.tail] = 1.0;
    Ok(VariableStates { states })
}

/// One soft message: the weighted sum of per-predicate sparse matvecs plus
/// the true-predicate mass on every entry, clamped into [0, 1]. The mixture
/// matrix itself is never formed.
pub fn soft_message(
    src: &[f64],
    slot_weights: &[f64],
    b: &AdjacencyTensor,
    dir: Direction,
) -> Result<Vec<f64>> {
    let n = b.num_entities();
    if src.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "state length {} vs {} entities",
            src.len(),
            n
        )));
    }
    if slot_weights.len() != b.num_predicates() {
        return Err(Error::DimensionMismatch(format!(
            "slot weight length {} vs {} predicates",
            slot_weights.len(),
            b.num_predicates()
        )));
    }
    let true_index = b.extended().true_index();
    let w_true = slot_weights[true_index];
    let mut out = vec![w_true; n];
    for (k, &wk) in slot_weights.iter().enumerate().take(true_index) {
        if wk == 0.0 {
            continue;
        }
        match dir {
            Direction::Forward => {
                for (i, &xi) in src.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    for &j in b.out_neighbors(k, i) {
                        out[j as usize] += wk * xi;
                    }
                }
            }
            Direction::Backward => {
                // transpose: out[i] accumulates the sources' view of dst j
                for (i, o) in out.iter_mut().enumerate() {
                    for &j in b.out_neighbors(k, i) {
                        *o += wk * src[j as usize];
                    }
                }
            }
        }
    }
    for v in out.iter_mut() {
        if *v > 1.0 {
            *v = 1.0;
        }
    }
    Ok(out)
}

/// One hard message: boolean OR of matvecs over the slot's predicate subset;
/// a `{P_true}` slot imposes no constraint and yields all-ones.
pub fn hard_message(
    src: &[bool],
    subset: &[usize],
    b: &AdjacencyTensor,
    dir: Direction,
) -> Vec<bool> {
    let n = b.num_entities();
    let true_index = b.extended().true_index();
    if subset == [true_index] {
        return vec![true; n];
    }
    let mut out = vec![false; n];
    for &k in subset {
        if k == true_index {
            return vec![true; n];
        }
        match dir {
            Direction::Forward => {
                for (i, &xi) in src.iter().enumerate() {
                    if !xi {
                        continue;
                    }
                    for &j in b.out_neighbors(k, i) {
                        out[j as usize] = true;
                    }
                }
            }
            Direction::Backward => {
                for (i, o) in out.iter_mut().enumerate() {
                    if !*o {
                        *o = b.out_neighbors(k, i).iter().any(|&j| src[j as usize]);
                    }
                }
            }
        }
    }
    out
}

/// Element-wise minimum of the previous state and all incoming messages;
/// with no messages the state is unchanged.
pub fn state_update(old: &[f64], messages: &[Vec<f64>]) -> Vec<f64> {
    let mut out = old.to_vec();
    for m in messages {
        for (o, &v) in out.iter_mut().zip(m.iter()) {
            if v < *o {
                *o = v;
            }
        }
    }
    out
}

/// Per-entity minimum across binary states.
fn hard_update(state: &mut [bool], msg: &[bool]) -> bool {
    let mut changed = false;
    for (s, &m) in state.iter_mut().zip(msg.iter()) {
        if *s && !m {
            *s = false;
            changed = true;
        }
    }
    changed
}

/// The entailment confidence of the final states: the minimum over
/// variables of each state's maximum entry.
pub fn entailment_score(states: &VariableStates) -> f64 {
    states
        .states
        .iter()
        .map(|s| s.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .fold(f64::INFINITY, f64::min)
}

/// Runs exactly `cfg.r_max` alternating rounds of soft message passing for
/// one query and returns the confidence score with the final states.
///
/// This is the readable per-query reference engine; training and candidate
/// scoring go through the batched engine in `autodiff`, which produces
/// bitwise-identical scores.
pub fn run_soft(
    query: Query,
    weights: &RuleWeights,
    b: &AdjacencyTensor,
    cfg: &InferenceConfig,
) -> Result<(f64, VariableStates)> {
    cfg.validate()?;
    let n_vars = weights.schema.n_vars;
    let dists = crate::rule::slot_distributions(weights);
    let mut vs = init_states(query, n_vars, b.num_entities())?;
    let slots = weights.schema.slots();

    for round in 1..=cfg.r_max {
        let forward = round % 2 == 1;
        #[cfg(debug_assertions)]
        let snapshot = vs.states.clone();
        let mut pending: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_vars + 1];
        let order: Vec<usize> = if forward {
            (1..=n_vars).collect()
        } else {
            (1..=n_vars).rev().collect()
        };
        for &v in &order {
            let updated = state_update(&vs.states[v - 1], &pending[v]);
            vs.states[v - 1] = updated;
            for (s, &(i, j)) in slots.iter().enumerate() {
                let (src, dst, dir) = if forward {
                    (i, j, Direction::Forward)
                } else {
                    (j, i, Direction::Backward)
                };
                if src != v {
                    continue;
                }
                let msg = soft_message(&vs.states[src - 1], &dists.weights[s], b, dir)?;
                pending[dst].push(msg);
            }
        }
        #[cfg(debug_assertions)]
        for (new, old) in vs.states.iter().zip(snapshot.iter()) {
            debug_assert!(
                new.iter().zip(old.iter()).all(|(n, o)| n <= o),
                "states must contract monotonically"
            );
        }
    }
    let score = entailment_score(&vs);
    debug_assert!((0.0..=1.0).contains(&score));
    Ok((score, vs))
}

/// Outcome of binary propagation for one query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HardOutcome {
    /// Fixed point with nonempty domains on a forest-shaped rule graph:
    /// the query is entailed (exact).
    Entailed,
    /// Some domain emptied: the query is provably not entailed.
    WipedOut,
    /// Fixed point with nonempty domains on a cyclic rule graph: entailed
    /// by propagation, but local consistency cannot rule out a false
    /// positive here.
    FixedPointUncertain,
}

impl HardOutcome {
    /// What propagation reports as the entailment decision.
    pub fn entailed_by_propagation(self) -> bool {
        !matches!(self, HardOutcome::WipedOut)
    }
}

/// Alternating binary propagation until a full round leaves every state
/// unchanged (fixed point) or some state empties (wipeout). The default
/// round cap is `n_vars * |E|`, the worst-case number of single-entry
/// eliminations.
pub fn run_hard(
    rule: &HardRule,
    query: Query,
    b: &AdjacencyTensor,
    max_rounds: Option<usize>,
) -> Result<HardOutcome> {
    let n_vars = rule.schema.n_vars;
    let n = b.num_entities();
    let true_index = b.extended().true_index();
    let cap = max_rounds.unwrap_or(n_vars * n);
    for idx in [query.head, query.tail] {
        if idx >= n {
            return Err(Error::EntityOutOfRange {
                index: idx,
                bound: n,
            });
        }
    }

    let mut states = vec![vec![true; n]; n_vars];
    states[0] = vec![false; n];
    states[0][query.head] = true;
    states[n_vars - 1] = vec![false; n];
    states[n_vars - 1][query.tail] = true;

    let slots = rule.schema.slots();
    let active: Vec<(usize, usize, &[usize])> = slots
        .iter()
        .enumerate()
        .filter(|(s, _)| !rule.slot_is_true(*s, true_index))
        .map(|(s, &(i, j))| (i, j, rule.slots[s].as_slice()))
        .collect();

    if active.is_empty() {
        // unconstrained rule: vacuously satisfied
        return Ok(HardOutcome::Entailed);
    }

    let forest = rule.is_forest(true_index);
    let mut round = 0;
    loop {
        round += 1;
        if round > cap {
            return Err(Error::RoundCapExhausted { cap });
        }
        let forward = round % 2 == 1;
        let mut changed = false;
        let mut pending: Vec<Vec<Vec<bool>>> = vec![Vec::new(); n_vars + 1];
        let order: Vec<usize> = if forward {
            (1..=n_vars).collect()
        } else {
            (1..=n_vars).rev().collect()
        };
        for &v in &order {
            let msgs = std::mem::take(&mut pending[v]);
            for m in msgs {
                changed |= hard_update(&mut states[v - 1], &m);
            }
            if states[v - 1].iter().all(|&x| !x) {
                return Ok(HardOutcome::WipedOut);
            }
            for &(i, j, subset) in &active {
                let (src, dst, dir) = if forward {
                    (i, j, Direction::Forward)
                } else {
                    (j, i, Direction::Backward)
                };
                if src != v {
                    continue;
                }
                pending[dst].push(hard_message(&states[src - 1], subset, b, dir));
            }
        }
        // A no-change round following a completed opposite-direction round
        // means both arc directions are consistent.
        if !changed && round >= 2 {
            return Ok(if forest {
                HardOutcome::Entailed
            } else {
                HardOutcome::FixedPointUncertain
            });
        }
    }
}

/// Which end of an open query is free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpenEnd {
    /// `relation(fixed, ?)` — candidates complete the tail.
    Tail,
    /// `relation(?, fixed)` — candidates complete the head.
    Head,
}

/// Generate-and-test scoring of an open query: every candidate grounding is
/// scored with the ground-query engine, and the ensemble score is the
/// validation-weighted sum over rule bodies.
pub fn score_open_query(
    end: OpenEnd,
    fixed: usize,
    relation: usize,
    candidates: &[usize],
    ensemble: &SoftEnsemble,
    b: &AdjacencyTensor,
    cfg: &InferenceConfig,
) -> Result<Vec<f64>> {
    let queries: Vec<Query> = candidates
        .iter()
        .map(|&c| match end {
            OpenEnd::Tail => Query {
                head: fixed,
                tail: c,
                relation,
            },
            OpenEnd::Head => Query {
                head: c,
                tail: fixed,
                relation,
            },
        })
        .collect();
    let mut total = vec![0.0; candidates.len()];
    for (bi, body) in ensemble.bodies.iter().enumerate() {
        let w = ensemble.body_weight(bi);
        let scores = crate::autodiff::forward_scores(&queries, body, b, cfg)?;
        for (t, s) in total.iter_mut().zip(scores) {
            *t += w * s;
        }
    }
    Ok(total)
}
