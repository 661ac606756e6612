//! Exact reverse-mode gradients of the batch loss with respect to all slot
//! logits, for the fixed-shape soft-inference computation.
//!
//! The forward pass is recorded on a [`Tape`] of primitive operations
//! (softargmax happens outside the tape, then sparse matvec mixtures,
//! clamps, element-wise minima and the final min-of-maxes reduction).
//! States and messages for a whole batch of queries are stored as
//! entity-by-query matrices so the sparse sweeps amortize across the batch;
//! per-query results are bitwise identical to the per-query engine in
//! [`crate::infer`] because every accumulation runs in the same order.
//!
//! Subgradient conventions: element-wise minima and the min/max reductions
//! route the full adjoint to a single operand, ties broken toward the lowest
//! input-order index and then the lowest entity index; the clamp at 1 has
//! derivative 0 strictly above 1 and 1 elsewhere.

use crate::error::{Error, Result};
use crate::infer::{InferenceConfig, Query};
use crate::kg::AdjacencyTensor;
use crate::rule::{slot_distributions, RuleSchema, RuleWeights};

/// Row-major entity-by-query matrix.
#[derive(Debug, Clone)]
pub struct BatchMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl BatchMat {
    fn zeros(rows: usize, cols: usize) -> Self {
        BatchMat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn filled(rows: usize, cols: usize, v: f64) -> Self {
        BatchMat {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    fn row_is_zero(&self, i: usize) -> bool {
        self.row(i).iter().all(|&v| v == 0.0)
    }

    #[inline]
    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.data[i * self.cols + c]
    }
}

#[derive(Debug, Clone)]
enum TapeOp {
    /// Initial state of a variable (leaf).
    Init,
    /// Clamped mixture message through `slot`, sourced from node `src`;
    /// `transposed` marks backward-round messages.
    Message {
        slot: usize,
        src: usize,
        transposed: bool,
    },
    /// Element-wise minimum over `parents` (the old state first, then the
    /// round's incoming messages in emission order).
    Combine {
        parents: Vec<usize>,
        argmin: Vec<u8>,
    },
}

#[derive(Debug, Clone)]
struct TapeNode {
    op: TapeOp,
    value: BatchMat,
    /// For messages: entries whose pre-clamp value exceeded 1.
    saturated: Option<Vec<bool>>,
}

/// Recorded forward pass of one rule body over a batch of queries.
#[derive(Debug, Clone)]
pub struct Tape {
    pub schema: RuleSchema,
    n_entities: usize,
    n_cols: usize,
    /// Slot distributions used by the pass (softargmax of the logits).
    weights: Vec<Vec<f64>>,
    nodes: Vec<TapeNode>,
    final_nodes: Vec<usize>,
    scores: Vec<f64>,
    score_var: Vec<u32>,
    score_entity: Vec<u32>,
}

impl Tape {
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Final state of a schema variable (1-based), as recorded.
    pub fn final_state(&self, var: usize) -> &BatchMat {
        &self.nodes[self.final_nodes[var - 1]].value
    }

    /// Recomputes the recorded pass from the stored structure; reproduces
    /// the scores bit for bit.
    pub fn replay(&self, b: &AdjacencyTensor) -> Vec<f64> {
        let mut values: Vec<BatchMat> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                TapeOp::Init => node.value.clone(),
                TapeOp::Message {
                    slot,
                    src,
                    transposed,
                } => {
                    let mut out = BatchMat::zeros(self.n_entities, self.n_cols);
                    let mut sat = vec![false; self.n_entities * self.n_cols];
                    message_kernel(
                        &values[*src],
                        &self.weights[*slot],
                        b,
                        *transposed,
                        &mut out,
                        &mut sat,
                        None,
                    );
                    out
                }
                TapeOp::Combine { parents, .. } => {
                    let mut out = values[parents[0]].clone();
                    let mut argmin = vec![0u8; self.n_entities * self.n_cols];
                    for (pi, &p) in parents.iter().enumerate().skip(1) {
                        combine_min(&mut out, &values[p], pi as u8, &mut argmin, None);
                    }
                    out
                }
            };
            values.push(v);
        }
        let finals: Vec<&BatchMat> = self.final_nodes.iter().map(|&id| &values[id]).collect();
        reduce_scores(&finals, None).0
    }
}

/// Per-slot gradients of the loss with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub per_slot: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(weights: &RuleWeights) -> Self {
        Gradients {
            per_slot: weights.logits.iter().map(|l| vec![0.0; l.len()]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.per_slot.iter().flatten().all(|v| v.is_finite())
    }
}

/// Mixture-message kernel: `out = clamp(sum_k w_k * B_k(^T) src + w_true)`.
/// Saturation (pre-clamp value > 1) is recorded for the backward pass; an
/// optional tie probe flags columns whose pre-clamp values sit within `tol`
/// of the clamp boundary.
fn message_kernel(
    src: &BatchMat,
    w: &[f64],
    b: &AdjacencyTensor,
    transposed: bool,
    out: &mut BatchMat,
    saturated: &mut [bool],
    mut tie: Option<(f64, &mut [bool])>,
) {
    let n = b.num_entities();
    let true_index = b.extended().true_index();
    let w_true = w[true_index];
    out.data.fill(w_true);
    let q = out.cols;
    for (k, &wk) in w.iter().enumerate().take(true_index) {
        if wk == 0.0 {
            continue;
        }
        if !transposed {
            for i in 0..n {
                if src.row_is_zero(i) {
                    continue;
                }
                let nbrs = b.out_neighbors(k, i);
                if nbrs.is_empty() {
                    continue;
                }
                let sr = i * q;
                for &j in nbrs {
                    let or = (j as usize) * q;
                    let (dst, s) = {
                        // rows never alias: out and src are distinct mats
                        let dst = &mut out.data[or..or + q];
                        let s = &src.data[sr..sr + q];
                        (dst, s)
                    };
                    for (o, &x) in dst.iter_mut().zip(s) {
                        *o += wk * x;
                    }
                }
            }
        } else {
            for i in 0..n {
                let nbrs = b.out_neighbors(k, i);
                if nbrs.is_empty() {
                    continue;
                }
                let or = i * q;
                for &j in nbrs {
                    let sr = (j as usize) * q;
                    if src.row_is_zero(j as usize) {
                        continue;
                    }
                    let dst = &mut out.data[or..or + q];
                    let s = &src.data[sr..sr + q];
                    for (o, &x) in dst.iter_mut().zip(s) {
                        *o += wk * x;
                    }
                }
            }
        }
    }
    for (idx, v) in out.data.iter_mut().enumerate() {
        if let Some((tol, flags)) = tie.as_mut() {
            if (*v - 1.0).abs() < *tol {
                flags[idx % q] = true;
            }
        }
        if *v > 1.0 {
            *v = 1.0;
            saturated[idx] = true;
        }
    }
}

/// `state = min(state, msg)`, recording which parent wins per entry.
fn combine_min(
    state: &mut BatchMat,
    msg: &BatchMat,
    parent_idx: u8,
    argmin: &mut [u8],
    mut tie: Option<(f64, &mut [bool])>,
) {
    let q = state.cols;
    for (idx, (s, &m)) in state.data.iter_mut().zip(msg.data.iter()).enumerate() {
        if let Some((tol, flags)) = tie.as_mut() {
            if (m - *s).abs() < *tol {
                flags[idx % q] = true;
            }
        }
        if m < *s {
            *s = m;
            argmin[idx] = parent_idx;
        }
    }
}

/// Min-of-maxes score per column, with argmax entity per variable and the
/// arg-minimizing variable; ties go to the lowest entity / variable index.
fn reduce_scores(
    finals: &[&BatchMat],
    mut tie: Option<(f64, &mut [bool])>,
) -> (Vec<f64>, Vec<u32>, Vec<u32>) {
    let q = finals[0].cols;
    let n = finals[0].rows;
    let mut scores = vec![0.0; q];
    let mut score_var = vec![0u32; q];
    let mut score_entity = vec![0u32; q];
    for c in 0..q {
        let mut best = f64::INFINITY;
        let mut second_best = f64::INFINITY;
        let mut bvar = 0u32;
        let mut bent = 0u32;
        for (v, mat) in finals.iter().enumerate() {
            let mut vmax = f64::NEG_INFINITY;
            let mut vsecond = f64::NEG_INFINITY;
            let mut vent = 0u32;
            for e in 0..n {
                let val = mat.get(e, c);
                if val > vmax {
                    vsecond = vmax;
                    vmax = val;
                    vent = e as u32;
                } else if val > vsecond {
                    vsecond = val;
                }
            }
            if let Some((tol, flags)) = tie.as_mut() {
                if n > 1 && vmax - vsecond < *tol {
                    flags[c] = true;
                }
            }
            if vmax < best {
                second_best = best;
                best = vmax;
                bvar = v as u32;
                bent = vent;
            } else if vmax < second_best {
                second_best = vmax;
            }
        }
        if let Some((tol, flags)) = tie.as_mut() {
            if finals.len() > 1 && second_best - best < *tol {
                flags[c] = true;
            }
        }
        scores[c] = best;
        score_var[c] = bvar;
        score_entity[c] = bent;
    }
    (scores, score_var, score_entity)
}

fn init_state_mats(queries: &[Query], n_vars: usize, n: usize) -> Result<Vec<BatchMat>> {
    let q = queries.len();
    for query in queries {
        for idx in [query.head, query.tail] {
            if idx >= n {
                return Err(Error::EntityOutOfRange {
                    index: idx,
                    bound: n,
                });
            }
        }
    }
    let mut states = Vec::with_capacity(n_vars);
    for v in 1..=n_vars {
        let mut m = if v == 1 || v == n_vars {
            BatchMat::zeros(n, q)
        } else {
            BatchMat::filled(n, q, 1.0)
        };
        if v == 1 {
            for (c, query) in queries.iter().enumerate() {
                m.data[query.head * q + c] = 1.0;
            }
        } else if v == n_vars {
            for (c, query) in queries.iter().enumerate() {
                m.data[query.tail * q + c] = 1.0;
            }
        }
        states.push(m);
    }
    Ok(states)
}

/// The round/emission schedule shared by both engines: returns, per round,
/// the variable processing order.
fn round_order(n_vars: usize, forward: bool) -> Vec<usize> {
    if forward {
        (1..=n_vars).collect()
    } else {
        (1..=n_vars).rev().collect()
    }
}

/// Batched forward pass recording a tape. `tie_tol`, when set, also returns
/// per-column flags marking min/max decisions or clamp boundaries within the
/// tolerance (used to exclude kink points from finite-difference checks).
pub fn forward_tape_checked(
    queries: &[Query],
    weights: &RuleWeights,
    b: &AdjacencyTensor,
    cfg: &InferenceConfig,
    tie_tol: Option<f64>,
) -> Result<(Tape, Vec<bool>)> {
    cfg.validate()?;
    let n_vars = weights.schema.n_vars;
    let n = b.num_entities();
    let q = queries.len();
    let dists = slot_distributions(weights);
    if dists.weights.iter().any(|w| w.len() != b.num_predicates()) {
        return Err(Error::DimensionMismatch(
            "slot weight length vs predicate count".into(),
        ));
    }
    let slots = weights.schema.slots();
    let mut tie_flags = vec![false; q];

    let mut nodes: Vec<TapeNode> = init_state_mats(queries, n_vars, n)?
        .into_iter()
        .map(|m| TapeNode {
            op: TapeOp::Init,
            value: m,
            saturated: None,
        })
        .collect();
    let mut cur: Vec<usize> = (0..n_vars).collect();

    for round in 1..=cfg.r_max {
        let forward = round % 2 == 1;
        let mut pending: Vec<Vec<usize>> = vec![Vec::new(); n_vars + 1];
        for v in round_order(n_vars, forward) {
            let incoming = std::mem::take(&mut pending[v]);
            if !incoming.is_empty() {
                let mut parents = Vec::with_capacity(incoming.len() + 1);
                parents.push(cur[v - 1]);
                parents.extend(incoming);
                let mut value = nodes[parents[0]].value.clone();
                let mut argmin = vec![0u8; n * q];
                for (pi, &p) in parents.iter().enumerate().skip(1) {
                    combine_min(
                        &mut value,
                        &nodes[p].value,
                        pi as u8,
                        &mut argmin,
                        tie_tol.map(|t| (t, tie_flags.as_mut_slice())),
                    );
                }
                nodes.push(TapeNode {
                    op: TapeOp::Combine { parents, argmin },
                    value,
                    saturated: None,
                });
                cur[v - 1] = nodes.len() - 1;
            }
            for (s, &(i, j)) in slots.iter().enumerate() {
                let (src, dst, transposed) = if forward { (i, j, false) } else { (j, i, true) };
                if src != v {
                    continue;
                }
                let mut out = BatchMat::zeros(n, q);
                let mut sat = vec![false; n * q];
                message_kernel(
                    &nodes[cur[src - 1]].value,
                    &dists.weights[s],
                    b,
                    transposed,
                    &mut out,
                    &mut sat,
                    tie_tol.map(|t| (t, tie_flags.as_mut_slice())),
                );
                nodes.push(TapeNode {
                    op: TapeOp::Message {
                        slot: s,
                        src: cur[src - 1],
                        transposed,
                    },
                    value: out,
                    saturated: Some(sat),
                });
                pending[dst].push(nodes.len() - 1);
            }
        }
    }

    let finals: Vec<&BatchMat> = cur.iter().map(|&id| &nodes[id].value).collect();
    let (scores, score_var, score_entity) =
        reduce_scores(&finals, tie_tol.map(|t| (t, tie_flags.as_mut_slice())));
    Ok((
        Tape {
            schema: weights.schema,
            n_entities: n,
            n_cols: q,
            weights: dists.weights,
            nodes,
            final_nodes: cur,
            scores,
            score_var,
            score_entity,
        },
        tie_flags,
    ))
}

/// Batched forward pass recording a tape.
pub fn forward_tape(
    queries: &[Query],
    weights: &RuleWeights,
    b: &AdjacencyTensor,
    cfg: &InferenceConfig,
) -> Result<Tape> {
    forward_tape_checked(queries, weights, b, cfg, None).map(|(t, _)| t)
}

/// Scores per candidate query. No tape is
/// recorded; large batches are processed in column chunks so memory stays
/// proportional to the chunk, not the candidate count.
const SCORE_CHUNK: usize = 128;

pub fn forward_scores(
    queries: &[Query],
    weights: &RuleWeights,
    b: &AdjacencyTensor,
    cfg: &InferenceConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n_vars = weights.schema.n_vars;
    let n = b.num_entities();
    let dists = slot_distributions(weights);
    let slots = weights.schema.slots();
    let mut out = Vec::with_capacity(queries.len());
    for chunk in queries.chunks(SCORE_CHUNK.max(1)) {
        let q = chunk.len();
        let mut states = init_state_mats(chunk, n_vars, n)?;
        let mut scratch_sat = vec![false; n * q];
        for round in 1..=cfg.r_max {
            let forward = round % 2 == 1;
            let mut pending: Vec<Vec<BatchMat>> = vec![Vec::new(); n_vars + 1];
            let mut argmin_scratch = vec![0u8; n * q];
            for v in round_order(n_vars, forward) {
                for m in std::mem::take(&mut pending[v]) {
                    combine_min(&mut states[v - 1], &m, 1, &mut argmin_scratch, None);
                }
                for (s, &(i, j)) in slots.iter().enumerate() {
                    let (src, dst, transposed) = if forward { (i, j, false) } else { (j, i, true) };
                    if src != v {
                        continue;
                    }
                    let mut msg = BatchMat::zeros(n, q);
                    message_kernel(
                        &states[src - 1],
                        &dists.weights[s],
                        b,
                        transposed,
                        &mut msg,
                        &mut scratch_sat,
                        None,
                    );
                    pending[dst].push(msg);
                }
            }
        }
        let finals: Vec<&BatchMat> = states.iter().collect();
        let (scores, _, _) = reduce_scores(&finals, None);
        out.extend(scores);
    }
    Ok(out)
}

/// Reverse pass over a recorded tape. `seed` holds the loss adjoint of each
/// column's score (pass `&[1.0]` for a single query's raw score gradient).
/// Returns exact per-slot logit gradients; min/max adjoints route to the
/// recorded argmin/argmax operand and saturated clamp entries contribute
/// nothing.
pub fn backward(tape: &Tape, b: &AdjacencyTensor, seed: &[f64]) -> Result<Gradients> {
    if seed.len() != tape.n_cols {
        return Err(Error::DimensionMismatch(format!(
            "seed length {} vs {} tape columns",
            seed.len(),
            tape.n_cols
        )));
    }
    if b.num_entities() != tape.n_entities
        || b.num_predicates() != tape.weights.first().map_or(0, Vec::len)
    {
        return Err(Error::DimensionMismatch(
            "tape was recorded against a different tensor".into(),
        ));
    }
    let n = tape.n_entities;
    let q = tape.n_cols;
    let true_index = b.extended().true_index();

    let mut adjoints: Vec<Option<BatchMat>> = vec![None; tape.nodes.len()];
    for (c, &s) in seed.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        let node = tape.final_nodes[tape.score_var[c] as usize];
        adjoints[node]
            .get_or_insert_with(|| BatchMat::zeros(n, q))
            .data[tape.score_entity[c] as usize * q + c] += s;
    }

    let mut dw: Vec<Vec<f64>> = tape.weights.iter().map(|w| vec![0.0; w.len()]).collect();

    for id in (0..tape.nodes.len()).rev() {
        let Some(mut adj) = adjoints[id].take() else {
            continue;
        };
        match &tape.nodes[id].op {
            TapeOp::Init => {}
            TapeOp::Combine { parents, argmin } => {
                for e in 0..n {
                    let base = e * q;
                    for c in 0..q {
                        let a = adj.data[base + c];
                        if a == 0.0 {
                            continue;
                        }
                        let p = parents[argmin[base + c] as usize];
                        adjoints[p]
                            .get_or_insert_with(|| BatchMat::zeros(n, q))
                            .data[base + c] += a;
                    }
                }
            }
            TapeOp::Message {
                slot,
                src,
                transposed,
            } => {
                let sat = tape.nodes[id].saturated.as_ref().expect("message mask");
                for (v, &s) in adj.data.iter_mut().zip(sat.iter()) {
                    if s {
                        *v = 0.0;
                    }
                }
                let src_val = &tape.nodes[*src].value;
                let slot_w = &tape.weights[*slot];
                let dw_slot = &mut dw[*slot];
                // true-predicate mass contributes 1 to every entry
                dw_slot[true_index] += adj.data.iter().sum::<f64>();
                let mut src_adj = adjoints[*src]
                    .take()
                    .unwrap_or_else(|| BatchMat::zeros(n, q));
                for k in 0..true_index {
                    let wk = slot_w[k];
                    if wk == 0.0 {
                        continue;
                    }
                    let mut acc = 0.0;
                    if !*transposed {
                        // out[j] += wk * src[i] over edges i -> j
                        for j in 0..n {
                            if adj.row_is_zero(j) {
                                continue;
                            }
                            let ar = j * q;
                            for &i in b.in_neighbors(k, j) {
                                let sr = i as usize * q;
                                let a = &adj.data[ar..ar + q];
                                let sv = &src_val.data[sr..sr + q];
                                let sa = &mut src_adj.data[sr..sr + q];
                                for ((&av, &xv), g) in a.iter().zip(sv).zip(sa.iter_mut()) {
                                    acc += av * xv;
                                    *g += wk * av;
                                }
                            }
                        }
                    } else {
                        // out[i] += wk * src[j] over edges i -> j
                        for i in 0..n {
                            if adj.row_is_zero(i) {
                                continue;
                            }
                            let ar = i * q;
                            for &j in b.out_neighbors(k, i) {
                                let sr = j as usize * q;
                                let a = &adj.data[ar..ar + q];
                                let sv = &src_val.data[sr..sr + q];
                                let sa = &mut src_adj.data[sr..sr + q];
                                for ((&av, &xv), g) in a.iter().zip(sv).zip(sa.iter_mut()) {
                                    acc += av * xv;
                                    *g += wk * av;
                                }
                            }
                        }
                    }
                    dw_slot[k] += acc;
                }
                adjoints[*src] = Some(src_adj);
            }
        }
    }

    // Map dL/dw through the softargmax Jacobian: dtheta = w .* (dw - <w, dw>)
    let per_slot = tape
        .weights
        .iter()
        .zip(dw.iter())
        .map(|(w, g)| {
            let dot: f64 = w.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
            w.iter()
                .zip(g.iter())
                .map(|(wk, gk)| wk * (gk - dot))
                .collect()
        })
        .collect();
    Ok(Gradients { per_slot })
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Pairwise logistic loss `sum_{y_i > y_j} log(1 + exp(-(s_i - s_j)))`;
/// zero when the labels admit no ordered pair.
pub fn loss_pairwise_logistic(scores: &[f64], labels: &[f64]) -> f64 {
    loss_pairwise_logistic_with_grad(scores, labels).0
}

/// The loss together with its gradient in the scores. Each ordered pair
/// contributes antisymmetrically to the two endpoints.
pub fn loss_pairwise_logistic_with_grad(scores: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(scores.len(), labels.len(), "scores/labels length mismatch");
    let mut loss = 0.0;
    let mut grad = vec![0.0; scores.len()];
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] > labels[j] {
                let d = scores[i] - scores[j];
                loss += softplus(-d);
                let s = 1.0 / (1.0 + d.exp());
                grad[i] -= s;
                grad[j] += s;
            }
        }
    }
    (loss, grad)
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked_logits: usize,
    pub skipped_queries: usize,
    pub pass: bool,
}

/// Compares analytic gradients against central finite differences of the
/// batch loss, logit by logit. Queries whose forward pass sits within
/// `10 * h` of a min/max tie or clamp boundary are excluded (the
/// subgradient is not a derivative there). Relative error is
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(
    weights: &RuleWeights,
    queries: &[Query],
    labels: &[f64],
    b: &AdjacencyTensor,
    cfg: &InferenceConfig,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let (tape, flags) = forward_tape_checked(queries, weights, b, cfg, Some(10.0 * h))?;
    let kept: Vec<usize> = (0..queries.len()).filter(|&c| !flags[c]).collect();
    let skipped = queries.len() - kept.len();
    if kept.is_empty() {
        return Ok(GradCheckReport {
            max_rel_err: 0.0,
            checked_logits: 0,
            skipped_queries: skipped,
            pass: true,
        });
    }
    let kept_scores: Vec<f64> = kept.iter().map(|&c| tape.scores()[c]).collect();
    let kept_labels: Vec<f64> = kept.iter().map(|&c| labels[c]).collect();
    let (_, kept_grad) = loss_pairwise_logistic_with_grad(&kept_scores, &kept_labels);
    let mut seed = vec![0.0; queries.len()];
    for (gi, &c) in kept.iter().enumerate() {
        seed[c] = kept_grad[gi];
    }
    let analytic = backward(&tape, b, &seed)?;

    let loss_at = |w: &RuleWeights| -> Result<f64> {
        let scores = forward_scores(queries, w, b, cfg)?;
        let ks: Vec<f64> = kept.iter().map(|&c| scores[c]).collect();
        Ok(loss_pairwise_logistic(&ks, &kept_labels))
    };

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let mut perturbed = weights.clone();
    for s in 0..weights.logits.len() {
        for k in 0..weights.logits[s].len() {
            let orig = weights.logits[s][k];
            perturbed.logits[s][k] = orig + h;
            let lp = loss_at(&perturbed)?;
            perturbed.logits[s][k] = orig - h;
            let lm = loss_at(&perturbed)?;
            perturbed.logits[s][k] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic.per_slot[s][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err: max_rel,
        checked_logits: checked,
        skipped_queries: skipped,
        pass: max_rel <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::run_soft;
    use crate::kg::{build_adjacency, ExtendedPredicates, Triple};
    use crate::rng::rng_for;
    use crate::rule::init_weights;
    use rand::Rng;

    fn random_graph(seed: u64, n: usize, rels: usize, per_rel: usize) -> AdjacencyTensor {
        let mut rng = rng_for(seed, "test-graph", &[]);
        let ext = ExtendedPredicates { base_count: rels };
        let mut triples = Vec::new();
        for r in 0..rels {
            for _ in 0..per_rel {
                triples.push(Triple::new(rng.gen_range(0..n), r, rng.gen_range(0..n)));
            }
        }
        build_adjacency(&triples, n, ext).unwrap()
    }

    #[test]
    fn batched_matches_per_query_engine_bitwise() {
        let b = random_graph(5, 9, 3, 14);
        let ext = b.extended();
        let w = init_weights(RuleSchema::new(4).unwrap(), ext, 0, 77);
        let cfg = InferenceConfig::default();
        let queries: Vec<Query> = (0..9)
            .flat_map(|h| {
                (0..9).step_by(3).map(move |t| Query {
                    head: h,
                    tail: t,
                    relation: 0,
                })
            })
            .collect();
        let batched = forward_scores(&queries, &w, &b, &cfg).unwrap();
        for (query, &bs) in queries.iter().zip(&batched) {
            let (single, _) = run_soft(*query, &w, &b, &cfg).unwrap();
            assert_eq!(single.to_bits(), bs.to_bits(), "query {query:?}");
        }
        let tape = forward_tape(&queries, &w, &b, &cfg).unwrap();
        for (ts, bs) in tape.scores().iter().zip(&batched) {
            assert_eq!(ts.to_bits(), bs.to_bits());
        }
    }

    #[test]
    fn replay_reproduces_scores() {
        let b = random_graph(6, 8, 2, 12);
        let w = init_weights(RuleSchema::new(3).unwrap(), b.extended(), 0, 3);
        let cfg = InferenceConfig::default();
        let queries: Vec<Query> = (0..8)
            .map(|h| Query {
                head: h,
                tail: (h + 3) % 8,
                relation: 0,
            })
            .collect();
        let tape = forward_tape(&queries, &w, &b, &cfg).unwrap();
        let replayed = tape.replay(&b);
        for (a, r) in tape.scores().iter().zip(&replayed) {
            assert_eq!(a.to_bits(), r.to_bits());
        }
    }

    #[test]
    fn loss_examples() {
        let l = loss_pairwise_logistic(&[0.5, 0.5], &[1.0, 0.0]);
        assert!((l - 2.0f64.ln()).abs() < 1e-12);
        let l = loss_pairwise_logistic(&[10.0, 0.0], &[1.0, 0.0]);
        assert!((l - (1.0 + (-10.0f64).exp()).ln()).abs() < 1e-12);
        assert!(l < 5e-5);
        assert_eq!(loss_pairwise_logistic(&[0.3, 0.9], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn loss_grad_is_antisymmetric() {
        let (_, g) = loss_pairwise_logistic_with_grad(&[0.8, 0.3], &[1.0, 0.0]);
        assert!((g[0] + g[1]).abs() < 1e-15);
        assert!(g[0] < 0.0 && g[1] > 0.0);
    }

    #[test]
    fn gradients_orthogonal_to_ones() {
        let b = random_graph(9, 10, 3, 18);
        let w = init_weights(RuleSchema::new(4).unwrap(), b.extended(), 1, 5);
        let cfg = InferenceConfig::default();
        let queries: Vec<Query> = (0..8)
            .map(|i| Query {
                head: i,
                tail: 9 - i,
                relation: 1,
            })
            .collect();
        let labels: Vec<f64> = (0..8).map(|i| f64::from(i % 2 == 0)).collect();
        let tape = forward_tape(&queries, &w, &b, &cfg).unwrap();
        let (_, g) = loss_pairwise_logistic_with_grad(tape.scores(), &labels);
        let grads = backward(&tape, &b, &g).unwrap();
        assert!(grads.is_finite());
        for slot in &grads.per_slot {
            let sum: f64 = slot.iter().sum();
            assert!(sum.abs() < 1e-8, "per-slot gradient sums to {sum}");
        }
    }

    #[test]
    fn backward_is_deterministic() {
        let b = random_graph(12, 11, 2, 20);
        let w = init_weights(RuleSchema::new(4).unwrap(), b.extended(), 0, 8);
        let cfg = InferenceConfig::default();
        let queries: Vec<Query> = (0..6)
            .map(|i| Query {
                head: i,
                tail: i + 4,
                relation: 0,
            })
            .collect();
        let seed = vec![1.0; queries.len()];
        let tape = forward_tape(&queries, &w, &b, &cfg).unwrap();
        let g1 = backward(&tape, &b, &seed).unwrap();
        let g2 = backward(&tape, &b, &seed).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn finite_difference_agreement_single_slot() {
        // two-variable rule over a couple of facts, every logit checked
        let ext = ExtendedPredicates { base_count: 2 };
        let b = build_adjacency(
            &[
                Triple::new(0, 0, 1),
                Triple::new(1, 1, 2),
                Triple::new(0, 1, 2),
            ],
            4,
            ext,
        )
        .unwrap();
        let w = init_weights(RuleSchema::new(2).unwrap(), ext, 0, 21);
        let cfg = InferenceConfig::with_rounds(2);
        let queries = vec![
            Query {
                head: 0,
                tail: 1,
                relation: 0,
            },
            Query {
                head: 0,
                tail: 2,
                relation: 0,
            },
            Query {
                head: 1,
                tail: 2,
                relation: 0,
            },
            Query {
                head: 3,
                tail: 0,
                relation: 0,
            },
        ];
        let labels = vec![1.0, 0.0, 1.0, 0.0];
        let report = grad_check(&w, &queries, &labels, &b, &cfg, 1e-5, 1e-4).unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
        assert!(report.checked_logits > 0);
    }

    #[test]
    fn corrupted_adjoint_fails_check() {
        let b = random_graph(30, 10, 2, 16);
        let w = init_weights(RuleSchema::new(3).unwrap(), b.extended(), 0, 2);
        let cfg = InferenceConfig::with_rounds(2);
        let queries: Vec<Query> = (0..6)
            .map(|i| Query {
                head: i,
                tail: (i * 3) % 10,
                relation: 0,
            })
            .collect();
        let labels = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let h = 1e-5;
        let (tape, flags) = forward_tape_checked(&queries, &w, &b, &cfg, Some(10.0 * h)).unwrap();
        let kept: Vec<usize> = (0..queries.len()).filter(|&c| !flags[c]).collect();
        assert!(!kept.is_empty());
        let ks: Vec<f64> = kept.iter().map(|&c| tape.scores()[c]).collect();
        let kl: Vec<f64> = kept.iter().map(|&c| labels[c]).collect();
        let (_, g) = loss_pairwise_logistic_with_grad(&ks, &kl);
        let mut seed = vec![0.0; queries.len()];
        for (gi, &c) in kept.iter().enumerate() {
            seed[c] = g[gi];
        }
        let grads = backward(&tape, &b, &seed).unwrap();
        // sign-flipped analytic gradient must disagree with finite differences
        let mut perturbed = w.clone();
        let mut worst = 0.0f64;
        for s in 0..w.logits.len() {
            for k in 0..w.logits[s].len() {
                let orig = w.logits[s][k];
                perturbed.logits[s][k] = orig + h;
                let sp = forward_scores(&queries, &perturbed, &b, &cfg).unwrap();
                let lp =
                    loss_pairwise_logistic(&kept.iter().map(|&c| sp[c]).collect::<Vec<_>>(), &kl);
                perturbed.logits[s][k] = orig - h;
                let sm = forward_scores(&queries, &perturbed, &b, &cfg).unwrap();
                let lm =
                    loss_pairwise_logistic(&kept.iter().map(|&c| sm[c]).collect::<Vec<_>>(), &kl);
                perturbed.logits[s][k] = orig;
                let numeric = (lp - lm) / (2.0 * h);
                let corrupted = -grads.per_slot[s][k];
                let rel =
                    (corrupted - numeric).abs() / corrupted.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        assert!(worst > 1e-3, "sign flip went undetected: {worst}");
    }

    #[test]
    fn fully_saturated_path_gets_zero_gradient() {
        // one fan-in of two sources clamps the message at 1 everywhere it
        // lands; the logit of that predicate then contributes no gradient
        // through the clamped entries.
        let ext = ExtendedPredicates { base_count: 1 };
        let b = build_adjacency(&[Triple::new(0, 0, 2), Triple::new(1, 0, 2)], 3, ext).unwrap();
        // N=2: single slot fully on the relation; head state one-hot cannot
        // saturate, so craft saturation through the interior of an N=3 rule
        // with slot (1,2) on P_true (interior state stays all-ones) and slot
        // (2,3) on the relation: message to Z3 is 2.0 pre-clamp at entity 2.
        let schema = RuleSchema::new(3).unwrap();
        let mut logits = vec![vec![0.0; 3]; 3];
        logits[schema.slot_index(1, 2)] = vec![-1e3, -1e3, 1e3]; // P_true
        logits[schema.slot_index(1, 3)] = vec![-1e3, -1e3, 1e3]; // P_true
        logits[schema.slot_index(2, 3)] = vec![1e3, -1e3, -1e3]; // relation
        let w = RuleWeights {
            schema,
            target_relation: 0,
            logits,
        };
        let cfg = InferenceConfig::with_rounds(1);
        let queries = vec![Query {
            head: 0,
            tail: 2,
            relation: 0,
        }];
        let tape = forward_tape(&queries, &w, &b, &cfg).unwrap();
        assert!((tape.scores()[0] - 1.0).abs() < 1e-9);
        let grads = backward(&tape, &b, &[1.0]).unwrap();
        // the score routes through the clamped entry, whose derivative is 0,
        // so every gradient vanishes
        for slot in &grads.per_slot {
            for g in slot {
                assert_eq!(*g, 0.0);
            }
        }
    }
}
