//! The N-variable graph-like rule schema, its learnable per-slot predicate
//! logits, hard rules extracted from soft weights, and checkpoint files.

use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kg::ExtendedPredicates;
use crate::rng::rng_for;

/// Standard deviation of the zero-mean normal used for logit initialization.
/// Small symmetric noise keeps the initial model near the uniform predicate
/// mixture so no predicate is favored at step zero.
pub const INIT_LOGIT_STD: f64 = 0.1;

/// The schematic rule shape: `n_vars` variables and one predicate slot per
/// ordered pair `(i, j)`, `1 <= i < j <= n_vars`, in lexicographic order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RuleSchema {
    pub n_vars: usize,
}

impl RuleSchema {
    pub fn new(n_vars: usize) -> Result<Self> {
        if n_vars < 2 {
            return Err(Error::InvalidConfig(format!(
                "rule schema needs at least 2 variables, got {n_vars}"
            )));
        }
        Ok(RuleSchema { n_vars })
    }

    pub fn num_slots(&self) -> usize {
        self.n_vars * (self.n_vars - 1) / 2
    }

    /// All slots `(i, j)` with `1 <= i < j <= n_vars`, lexicographic.
    pub fn slots(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_slots());
        for i in 1..self.n_vars {
            for j in (i + 1)..=self.n_vars {
                out.push((i, j));
            }
        }
        out
    }

    /// Position of slot `(i, j)` in the lexicographic order.
    pub fn slot_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(1 <= i && i < j && j <= self.n_vars);
        let before = (i - 1) * self.n_vars - (i - 1) * i / 2;
        before + (j - i - 1)
    }
}

/// Learnable per-slot logit vectors for one rule body.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleWeights {
    pub schema: RuleSchema,
    pub target_relation: usize,
    /// One logit vector per slot, each of extended-predicate length.
    pub logits: Vec<Vec<f64>>,
}

/// Per-slot probability vectors (softargmax of the logits).
#[derive(Debug, Clone)]
pub struct SlotDistribution {
    pub schema: RuleSchema,
    pub target_relation: usize,
    pub weights: Vec<Vec<f64>>,
}

/// A per-slot assignment of predicate subsets extracted from soft weights.
/// A subset containing the true predicate is always the singleton
/// `{P_true}`, meaning the slot is masked out of the rule body.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct HardRule {
    pub schema: RuleSchema,
    pub target_relation: usize,
    /// Sorted predicate indices per slot; nonempty.
    pub slots: Vec<Vec<usize>>,
}

impl HardRule {
    /// True if the slot at lexicographic position `s` is masked by P_true.
    pub fn slot_is_true(&self, s: usize, true_index: usize) -> bool {
        self.slots[s] == [true_index]
    }

    /// Slots that actually constrain the rule (everything but P_true).
    pub fn active_slots(&self, true_index: usize) -> Vec<(usize, usize, &[usize])> {
        let pairs = self.schema.slots();
        let mut out = Vec::new();
        for (s, &(i, j)) in pairs.iter().enumerate() {
            if !self.slot_is_true(s, true_index) {
                out.push((i, j, self.slots[s].as_slice()));
            }
        }
        out
    }

    /// Whether the active slots form a forest when read as undirected edges
    /// over the schema variables. Propagation is exact on forests.
    pub fn is_forest(&self, true_index: usize) -> bool {
        let n = self.schema.n_vars;
        let mut parent: Vec<usize> = (0..=n).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            if p[x] != x {
                let r = find(p, p[x]);
                p[x] = r;
            }
            p[x]
        }
        for (i, j, _) in self.active_slots(true_index) {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a == b {
                return false;
            }
            parent[a] = b;
        }
        true
    }
}

/// A collection of rule bodies sharing one target relation, with optional
/// validation-loss weights (max is exactly 1; better bodies weigh more).
#[derive(Debug, Clone)]
pub struct RuleEnsemble<B> {
    pub target_relation: usize,
    pub bodies: Vec<B>,
    pub body_scores: Option<Vec<f64>>,
}

impl<B> RuleEnsemble<B> {
    pub fn new(target_relation: usize, bodies: Vec<B>) -> Self {
        RuleEnsemble {
            target_relation,
            bodies,
            body_scores: None,
        }
    }

    /// Body weight, defaulting to 1 when no validation scores are attached.
    pub fn body_weight(&self, i: usize) -> f64 {
        self.body_scores.as_ref().map_or(1.0, |s| s[i])
    }

    pub fn with_scores(mut self, scores: Vec<f64>) -> Self {
        debug_assert_eq!(scores.len(), self.bodies.len());
        debug_assert!(scores.iter().all(|&w| w > 0.0 && w <= 1.0));
        self.body_scores = Some(scores);
        self
    }
}

pub type SoftEnsemble = RuleEnsemble<RuleWeights>;
pub type HardEnsemble = RuleEnsemble<HardRule>;

/// Draws fresh logits i.i.d. from N(0, 0.1^2); deterministic per seed.
pub fn init_weights(
    schema: RuleSchema,
    ext: ExtendedPredicates,
    target_relation: usize,
    seed: u64,
) -> RuleWeights {
    let mut rng = rng_for(seed, "weights-init", &[target_relation as u64]);
    let normal = Normal::new(0.0, INIT_LOGIT_STD).expect("valid std");
    let logits = (0..schema.num_slots())
        .map(|_| {
            (0..ext.total_count())
                .map(|_| normal.sample(&mut rng))
                .collect()
        })
        .collect();
    RuleWeights {
        schema,
        target_relation,
        logits,
    }
}

/// Numerically stable softargmax of one logit vector.
pub fn softargmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

/// Per-slot predicate distributions for a rule body.
pub fn slot_distributions(weights: &RuleWeights) -> SlotDistribution {
    SlotDistribution {
        schema: weights.schema,
        target_relation: weights.target_relation,
        weights: weights.logits.iter().map(|l| softargmax(l)).collect(),
    }
}

fn order_by_weight(weights: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    // descending weight, ties to the lowest index
    idx.sort_by(|&a, &b| weights[b].partial_cmp(&weights[a]).unwrap().then(a.cmp(&b)));
    idx
}

/// Per slot, takes the minimal prefix of predicates (by descending weight)
/// whose cumulative mass reaches `p`. If the true predicate lands in that
/// prefix the slot collapses to `{P_true}`; otherwise the prefix becomes a
/// disjunctive subset.
pub fn extract_top_p(dist: &SlotDistribution, p: f64) -> Result<HardRule> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "extraction mass {p} outside (0, 1]"
        )));
    }
    let slots = dist
        .weights
        .iter()
        .map(|w| {
            let true_index = w.len() - 1;
            let order = order_by_weight(w);
            let mut subset = Vec::new();
            let mut mass = 0.0;
            for &k in &order {
                subset.push(k);
                mass += w[k];
                if mass >= p - 1e-12 {
                    break;
                }
            }
            if subset.contains(&true_index) {
                subset = vec![true_index];
            } else {
                subset.sort_unstable();
            }
            subset
        })
        .collect();
    Ok(HardRule {
        schema: dist.schema,
        target_relation: dist.target_relation,
        slots,
    })
}

/// Per slot, the single highest-weight predicate; ties to the lowest index.
pub fn extract_argmax(dist: &SlotDistribution) -> HardRule {
    let slots = dist
        .weights
        .iter()
        .map(|w| vec![order_by_weight(w)[0]])
        .collect();
    HardRule {
        schema: dist.schema,
        target_relation: dist.target_relation,
        slots,
    }
}

/// Variable display name: the head variables print as X and Y, interior
/// variables as Z2..Z(n-1).
pub fn var_name(k: usize, n_vars: usize) -> String {
    if k == 1 {
        "X".into()
    } else if k == n_vars {
        "Y".into()
    } else {
        format!("Z{k}")
    }
}

fn literal_text(
    pred: usize,
    i: usize,
    j: usize,
    n_vars: usize,
    ext: ExtendedPredicates,
    relation_names: &[String],
) -> String {
    let vi = var_name(i, n_vars);
    let vj = var_name(j, n_vars);
    let base = ext.base_of(pred);
    if ext.is_inverse(pred) {
        format!("{}({},{})", relation_names[base], vj, vi)
    } else {
        format!("{}({},{})", relation_names[base], vi, vj)
    }
}

/// Renders a hard rule as `head(X,Y) :- lit ∧ ...`. Slots holding an inverse
/// predicate print with swapped arguments, P_true slots are omitted, and
/// multi-predicate slots print as a parenthesized disjunction. A body with
/// no active slot renders as `true`.
pub fn render_rule(rule: &HardRule, relation_names: &[String]) -> String {
    let ext = ExtendedPredicates {
        base_count: relation_names.len(),
    };
    let n = rule.schema.n_vars;
    let mut parts: Vec<String> = Vec::new();
    for (i, j, subset) in rule.active_slots(ext.true_index()) {
        let lits: Vec<String> = subset
            .iter()
            .map(|&k| literal_text(k, i, j, n, ext, relation_names))
            .collect();
        if lits.len() == 1 {
            parts.push(lits.into_iter().next().unwrap());
        } else {
            parts.push(format!("({})", lits.join(" ∨ ")));
        }
    }
    let body = if parts.is_empty() {
        "true".to_string()
    } else {
        parts.join(" ∧ ")
    };
    format!("{}(X,Y) :- {}", relation_names[rule.target_relation], body)
}

/// On-disk checkpoint for one rule body.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub n_vars: usize,
    pub n_predicates: usize,
    pub target_relation: usize,
    pub target_name: String,
    pub logits: Vec<Vec<f64>>,
    /// Validation weight for this body, if computed.
    pub body_weight: Option<f64>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(
    weights: &RuleWeights,
    target_name: &str,
    body_weight: Option<f64>,
    path: &Path,
) -> Result<()> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        n_vars: weights.schema.n_vars,
        n_predicates: weights.logits.first().map_or(0, Vec::len),
        target_relation: weights.target_relation,
        target_name: target_name.to_owned(),
        logits: weights.logits.clone(),
        body_weight,
    };
    let text = serde_json::to_string(&ckpt).expect("checkpoint serializes");
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(RuleWeights, Option<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::BadCheckpoint {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::BadCheckpoint {
            path: path.to_path_buf(),
            reason: format!("unsupported version {}", ckpt.version),
        });
    }
    let schema = RuleSchema::new(ckpt.n_vars)?;
    if ckpt.logits.len() != schema.num_slots()
        || ckpt.logits.iter().any(|l| l.len() != ckpt.n_predicates)
    {
        return Err(Error::BadCheckpoint {
            path: path.to_path_buf(),
            reason: "logit shape does not match schema".into(),
        });
    }
    Ok((
        RuleWeights {
            schema,
            target_relation: ckpt.target_relation,
            logits: ckpt.logits,
        },
        ckpt.body_weight,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_slots_lexicographic() {
        let s = RuleSchema::new(4).unwrap();
        assert_eq!(s.num_slots(), 6);
        assert_eq!(
            s.slots(),
            vec![(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)]
        );
        for (idx, (i, j)) in s.slots().into_iter().enumerate() {
            assert_eq!(s.slot_index(i, j), idx);
        }
        assert!(RuleSchema::new(1).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let ext = ExtendedPredicates { base_count: 3 };
        let s = RuleSchema::new(4).unwrap();
        let a = init_weights(s, ext, 0, 42);
        let b = init_weights(s, ext, 0, 42);
        let c = init_weights(s, ext, 0, 43);
        assert_eq!(a.logits, b.logits);
        assert_ne!(a.logits, c.logits);
        assert_eq!(a.logits.len(), 6);
        assert_eq!(a.logits[0].len(), 7);
        assert!(a
            .logits
            .iter()
            .flatten()
            .all(|v| v.is_finite() && v.abs() < 1.0));
    }

    #[test]
    fn softargmax_basics() {
        let w = softargmax(&[0.0; 5]);
        for v in &w {
            assert!((v - 0.2).abs() < 1e-12);
        }
        // ln 2 against two zeros: (0.5, 0.25, 0.25)
        let w = softargmax(&[2.0f64.ln(), 0.0, 0.0]);
        assert!((w[0] - 0.5).abs() < 1e-12);
        assert!((w[1] - 0.25).abs() < 1e-12);
        assert!((w[2] - 0.25).abs() < 1e-12);
        // shift invariance
        let a = softargmax(&[0.3, -1.2, 2.0]);
        let b = softargmax(&[0.3 + 7.0, -1.2 + 7.0, 2.0 + 7.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        // large logits stay finite
        let w = softargmax(&[800.0, 0.0]);
        assert!(w.iter().all(|v| v.is_finite()));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    fn dist_of(weights: Vec<Vec<f64>>) -> SlotDistribution {
        SlotDistribution {
            schema: RuleSchema::new(2).unwrap(),
            target_relation: 0,
            weights,
        }
    }

    #[test]
    fn top_p_prefix_rules() {
        // top-1 already exceeds p
        let d = dist_of(vec![vec![0.9, 0.05, 0.05]]);
        let r = extract_top_p(&d, 0.25).unwrap();
        assert_eq!(r.slots, vec![vec![0]]);
        // prefix of two forms a disjunction
        let d = dist_of(vec![vec![0.4, 0.4, 0.2]]);
        let r = extract_top_p(&d, 0.5).unwrap();
        assert_eq!(r.slots, vec![vec![0, 1]]);
        // P_true inside the prefix collapses the slot
        let d = dist_of(vec![vec![0.2, 0.2, 0.3]]);
        let r = extract_top_p(&d, 0.25).unwrap();
        assert_eq!(r.slots, vec![vec![2]]);
        assert!(extract_top_p(&d, 0.0).is_err());
        assert!(extract_top_p(&d, 1.5).is_err());
    }

    #[test]
    fn top_p_full_mass_takes_every_nonzero_predicate() {
        // p -> 1 keeps the entire support of the distribution
        let d = dist_of(vec![vec![0.5, 0.3, 0.0, 0.2, 0.0]]);
        let r = extract_top_p(&d, 1.0).unwrap();
        assert_eq!(r.slots, vec![vec![0, 1, 3]]);
        // unless the true predicate carries mass, which masks the slot
        let d = dist_of(vec![vec![0.5, 0.4, 0.1]]);
        let r = extract_top_p(&d, 1.0).unwrap();
        assert_eq!(r.slots, vec![vec![2]]);
    }

    #[test]
    fn top_p_equals_argmax_when_p_below_max() {
        let d = dist_of(vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.7, 0.2]]);
        let d = SlotDistribution {
            schema: RuleSchema::new(3).unwrap(),
            ..d
        };
        let a = extract_argmax(&d);
        let t = extract_top_p(&d, 0.1).unwrap();
        assert_eq!(a, t);
    }

    #[test]
    fn argmax_tie_takes_lowest_index() {
        let d = dist_of(vec![vec![1.0 / 3.0; 3]]);
        let r = extract_argmax(&d);
        assert_eq!(r.slots, vec![vec![0]]);
        let d = dist_of(vec![vec![0.0, 0.0, 1.0]]);
        let r = extract_argmax(&d);
        assert_eq!(r.slots, vec![vec![2]]);
    }

    #[test]
    fn render_grandparent_chain() {
        // relations: parent=0, grandparent=1; P* = {0,1,inv0,inv1,true}
        let names = vec!["parent".to_string(), "grandparent".to_string()];
        let schema = RuleSchema::new(3).unwrap();
        let true_idx = 4;
        let rule = HardRule {
            schema,
            target_relation: 1,
            slots: vec![vec![0], vec![true_idx], vec![0]],
        };
        assert_eq!(
            render_rule(&rule, &names),
            "grandparent(X,Y) :- parent(X,Z2) ∧ parent(Z2,Y)"
        );
    }

    #[test]
    fn render_all_true_and_disjunction() {
        let names = vec!["aunt".to_string(), "uncle".to_string(), "niece".to_string()];
        let schema = RuleSchema::new(2).unwrap();
        let true_idx = 6;
        let rule = HardRule {
            schema,
            target_relation: 2,
            slots: vec![vec![true_idx]],
        };
        assert_eq!(render_rule(&rule, &names), "niece(X,Y) :- true");
        // inverse aunt (index 3) and inverse uncle (index 4) print swapped
        let rule = HardRule {
            schema,
            target_relation: 2,
            slots: vec![vec![3, 4]],
        };
        assert_eq!(
            render_rule(&rule, &names),
            "niece(X,Y) :- (aunt(Y,X) ∨ uncle(Y,X))"
        );
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ext = ExtendedPredicates { base_count: 5 };
        let w = init_weights(RuleSchema::new(4).unwrap(), ext, 2, 9);
        let path = dir.path().join("body_0.json");
        save_checkpoint(&w, "rel2", Some(0.75), &path).unwrap();
        let (loaded, bw) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.logits, w.logits);
        assert_eq!(loaded.target_relation, 2);
        assert_eq!(bw, Some(0.75));
    }

    #[test]
    fn forest_detection() {
        let schema = RuleSchema::new(4).unwrap();
        let t = 4; // pretend true index
        let chain = HardRule {
            schema,
            target_relation: 0,
            slots: vec![vec![0], vec![t], vec![t], vec![0], vec![t], vec![0]],
        };
        assert!(chain.is_forest(t));
        let cyclic = HardRule {
            schema,
            target_relation: 0,
            // (1,2), (1,3), (2,3) close a triangle
            slots: vec![vec![0], vec![0], vec![t], vec![0], vec![t], vec![t]],
        };
        assert!(!cyclic.is_forest(t));
    }
}
