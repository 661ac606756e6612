//! Knowledge-graph-completion evaluation: filtered candidate ranking with
//! random tie-breaking, aggregated into MRR and Hits@k.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::infer::{run_hard, score_open_query, InferenceConfig, OpenEnd, Query};
use crate::kg::{
    build_adjacency, build_extended, AdjacencyTensor, KnowledgeBase, SplitKind, Triple,
};
use crate::rng::rng_for;
use crate::rule::{HardEnsemble, SoftEnsemble};

/// Which endpoint a ranking query predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryDirection {
    /// predict the head of `relation(?, fixed)`
    Head,
    /// predict the tail of `relation(fixed, ?)`
    Tail,
}

/// The filtered rank of one completion query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankRecord {
    pub direction: QueryDirection,
    pub fixed_entity: usize,
    pub relation: usize,
    pub target: usize,
    pub rank: usize,
}

/// Aggregate ranking metrics.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub mrr: f64,
    pub hits1: f64,
    pub hits10: f64,
    pub count: usize,
}

impl MetricsReport {
    pub fn from_ranks(ranks: impl IntoIterator<Item = usize>) -> MetricsReport {
        let mut rr = 0.0;
        let mut h1 = 0usize;
        let mut h10 = 0usize;
        let mut count = 0usize;
        for r in ranks {
            rr += 1.0 / r as f64;
            h1 += usize::from(r <= 1);
            h10 += usize::from(r <= 10);
            count += 1;
        }
        MetricsReport {
            mrr: rr / count.max(1) as f64,
            hits1: h1 as f64 / count.max(1) as f64,
            hits10: h10 as f64 / count.max(1) as f64,
            count,
        }
    }
}

/// Filtered rank from candidate scores: known-true competitors other than
/// the target leave the pool, then the target's rank is one plus the
/// strictly-better candidates plus the ties a uniform random permutation
/// places above it.
pub fn rank_from_scores(
    scores: &[f64],
    target: usize,
    filtered: &HashSet<usize>,
    rng: &mut ChaCha8Rng,
) -> usize {
    let mut perm: Vec<usize> = (0..scores.len()).collect();
    perm.shuffle(rng);
    let mut position = vec![0usize; scores.len()];
    for (pos, &c) in perm.iter().enumerate() {
        position[c] = pos;
    }
    let ts = scores[target];
    let mut rank = 1;
    for (c, &s) in scores.iter().enumerate() {
        if c == target || (filtered.contains(&c) && c != target) {
            continue;
        }
        if s > ts || (s == ts && position[c] < position[target]) {
            rank += 1;
        }
    }
    rank
}

/// Scores every entity as a candidate completion with a soft ensemble and
/// returns the target's filtered rank.
#[allow(clippy::too_many_arguments)]
pub fn rank_query(
    ensemble: &SoftEnsemble,
    direction: QueryDirection,
    fixed_entity: usize,
    target: usize,
    b_eval: &AdjacencyTensor,
    known_true: &HashSet<usize>,
    cfg: &InferenceConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RankRecord> {
    let candidates: Vec<usize> = (0..b_eval.num_entities()).collect();
    let end = match direction {
        QueryDirection::Tail => OpenEnd::Tail,
        QueryDirection::Head => OpenEnd::Head,
    };
    let scores = score_open_query(
        end,
        fixed_entity,
        ensemble.target_relation,
        &candidates,
        ensemble,
        b_eval,
        cfg,
    )?;
    Ok(RankRecord {
        direction,
        fixed_entity,
        relation: ensemble.target_relation,
        target,
        rank: rank_from_scores(&scores, target, known_true, rng),
    })
}

/// Trained models handed to the evaluator: soft weights or extracted rules.
pub enum EvalModel {
    Soft(HashMap<usize, SoftEnsemble>),
    Hard(HashMap<usize, HardEnsemble>),
}

impl EvalModel {
    fn score_candidates(
        &self,
        direction: QueryDirection,
        fixed: usize,
        relation: usize,
        b: &AdjacencyTensor,
        cfg: &InferenceConfig,
    ) -> Result<Option<Vec<f64>>> {
        let n = b.num_entities();
        let candidates: Vec<usize> = (0..n).collect();
        match self {
            EvalModel::Soft(map) => {
                let Some(ensemble) = map.get(&relation) else {
                    return Ok(None);
                };
                let end = match direction {
                    QueryDirection::Tail => OpenEnd::Tail,
                    QueryDirection::Head => OpenEnd::Head,
                };
                score_open_query(end, fixed, relation, &candidates, ensemble, b, cfg).map(Some)
            }
            EvalModel::Hard(map) => {
                let Some(ensemble) = map.get(&relation) else {
                    return Ok(None);
                };
                let mut scores = vec![0.0; n];
                for (bi, rule) in ensemble.bodies.iter().enumerate() {
                    let w = ensemble.body_weight(bi);
                    for (c, score) in scores.iter_mut().enumerate() {
                        let query = match direction {
                            QueryDirection::Tail => Query {
                                head: fixed,
                                tail: c,
                                relation,
                            },
                            QueryDirection::Head => Query {
                                head: c,
                                tail: fixed,
                                relation,
                            },
                        };
                        let out = run_hard(rule, query, b, None)?;
                        if out.entailed_by_propagation() {
                            *score += w;
                        }
                    }
                }
                Ok(Some(scores))
            }
        }
    }
}

/// Evaluation settings: rounds, tie-breaking seed, and which split supplies
/// the ranked queries.
#[derive(Debug, Clone, Copy)]
pub struct EvalConfig {
    pub inference: InferenceConfig,
    pub seed: u64,
    pub split: SplitKind,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            inference: InferenceConfig::default(),
            seed: 0,
            split: SplitKind::Test,
        }
    }
}

/// All true completions per (fixed entity, relation, direction), across all
/// four splits; the filter set of the filtered ranking protocol.
pub struct FilterSets {
    tails: HashMap<(usize, usize), HashSet<usize>>,
    heads: HashMap<(usize, usize), HashSet<usize>>,
}

impl FilterSets {
    pub fn build(kb: &KnowledgeBase) -> FilterSets {
        let mut tails: HashMap<(usize, usize), HashSet<usize>> = HashMap::new();
        let mut heads: HashMap<(usize, usize), HashSet<usize>> = HashMap::new();
        for kind in SplitKind::ALL {
            for t in kb.split(kind) {
                tails
                    .entry((t.head, t.relation))
                    .or_default()
                    .insert(t.tail);
                heads
                    .entry((t.tail, t.relation))
                    .or_default()
                    .insert(t.head);
            }
        }
        FilterSets { tails, heads }
    }

    pub fn known(
        &self,
        direction: QueryDirection,
        fixed: usize,
        relation: usize,
    ) -> HashSet<usize> {
        let map = match direction {
            QueryDirection::Tail => &self.tails,
            QueryDirection::Head => &self.heads,
        };
        map.get(&(fixed, relation)).cloned().unwrap_or_default()
    }
}

/// Background triples for ranking: facts and train always, plus the valid
/// split when the ranked queries come from the test split (matching the
/// filter set).
pub fn eval_background(kb: &KnowledgeBase, split: SplitKind) -> Vec<Triple> {
    let mut seen: HashSet<Triple> = HashSet::new();
    let mut out = Vec::new();
    let include_valid = split == SplitKind::Test;
    let chain: Vec<&[Triple]> = if include_valid {
        vec![&kb.facts, &kb.train, &kb.valid]
    } else {
        vec![&kb.facts, &kb.train]
    };
    for split in chain {
        for &t in split {
            if seen.insert(t) {
                out.push(t);
            }
        }
    }
    out
}

/// Ranks every triple of the chosen split in both directions and aggregates
/// MRR/Hits@k. Relations without a trained model rank with all-zero scores
/// (and a warning), so missing models hurt the metrics rather than hiding.
pub fn evaluate(
    model: &EvalModel,
    kb: &KnowledgeBase,
    cfg: &EvalConfig,
) -> Result<(Vec<RankRecord>, MetricsReport)> {
    let ext = build_extended(kb);
    let bg = eval_background(kb, cfg.split);
    let b = build_adjacency(&bg, kb.num_entities(), ext)?;
    let filters = FilterSets::build(kb);
    let triples = kb.split(cfg.split);
    let n = kb.num_entities();

    let mut missing: HashSet<usize> = HashSet::new();
    for t in triples {
        let present = match model {
            EvalModel::Soft(m) => m.contains_key(&t.relation),
            EvalModel::Hard(m) => m.contains_key(&t.relation),
        };
        if !present && missing.insert(t.relation) {
            log::warn!(
                "no trained model for relation `{}`; its queries rank with zero scores",
                kb.relation_names[t.relation]
            );
        }
    }

    let jobs: Vec<(usize, QueryDirection, &Triple)> = triples
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            [
                (2 * i, QueryDirection::Tail, t),
                (2 * i + 1, QueryDirection::Head, t),
            ]
        })
        .collect();

    let records: Vec<Result<RankRecord>> = jobs
        .par_iter()
        .map(|&(qid, direction, t)| {
            let (fixed, target) = match direction {
                QueryDirection::Tail => (t.head, t.tail),
                QueryDirection::Head => (t.tail, t.head),
            };
            let scores = model
                .score_candidates(direction, fixed, t.relation, &b, &cfg.inference)?
                .unwrap_or_else(|| vec![0.0; n]);
            let known = filters.known(direction, fixed, t.relation);
            let mut rng = rng_for(cfg.seed, "rank", &[qid as u64]);
            let rank = rank_from_scores(&scores, target, &known, &mut rng);
            Ok(RankRecord {
                direction,
                fixed_entity: fixed,
                relation: t.relation,
                target,
                rank,
            })
        })
        .collect();

    let records: Vec<RankRecord> = records.into_iter().collect::<Result<_>>()?;
    let report = MetricsReport::from_ranks(records.iter().map(|r| r.rank));
    Ok((records, report))
}
