//! Ground-truth reference machinery: exhaustive entailment for hard rules,
//! a classical worklist arc-consistency propagator, a counterexample fixture
//! where local consistency reaches a fixed point on an unsatisfiable query,
//! and a parser for the rendered rule format.
//!
//! Deliberately no backtracking search: the point of the propagator is to
//! mirror what local consistency alone can decide.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::infer::Query;
use crate::kg::{build_adjacency, AdjacencyTensor, ExtendedPredicates, Triple};
use crate::rule::{HardRule, RuleSchema};

/// Upper bound on exhaustive interior assignments.
const MAX_ASSIGNMENTS: f64 = 1e8;

/// Does the slot's predicate subset relate `(u, v)`? Disjunction within the
/// subset; the true predicate relates everything.
fn slot_satisfied(subset: &[usize], u: usize, v: usize, b: &AdjacencyTensor) -> bool {
    let true_index = b.extended().true_index();
    subset
        .iter()
        .any(|&k| k == true_index || b.has_edge(k, u, v))
}

/// Exhaustive check: does some grounding of the interior variables satisfy
/// every active slot? Assignments are pruned slot-by-slot in variable order,
/// which leaves the decision unchanged.
pub fn brute_force_entailment(rule: &HardRule, query: Query, b: &AdjacencyTensor) -> Result<bool> {
    let n_vars = rule.schema.n_vars;
    let n = b.num_entities();
    let interior = n_vars.saturating_sub(2);
    if (n as f64).powi(interior as i32) > MAX_ASSIGNMENTS {
        return Err(Error::InstanceTooLarge {
            assignments: (n as f64).powi(interior as i32),
        });
    }
    let slots = rule.schema.slots();
    // assignment[v] holds the entity for variable v (1-based)
    let mut assignment = vec![usize::MAX; n_vars + 1];
    assignment[1] = query.head;
    assignment[n_vars] = query.tail;

    // check all slots whose endpoints are both assigned once `v` is set
    fn consistent_at(
        v: usize,
        assignment: &[usize],
        slots: &[(usize, usize)],
        rule: &HardRule,
        b: &AdjacencyTensor,
    ) -> bool {
        slots.iter().enumerate().all(|(s, &(i, j))| {
            if (i != v && j != v) || assignment[i] == usize::MAX || assignment[j] == usize::MAX {
                return true;
            }
            slot_satisfied(&rule.slots[s], assignment[i], assignment[j], b)
        })
    }

    fn search(
        v: usize,
        n_vars: usize,
        n: usize,
        assignment: &mut Vec<usize>,
        slots: &[(usize, usize)],
        rule: &HardRule,
        b: &AdjacencyTensor,
    ) -> bool {
        if v > n_vars {
            return true;
        }
        if assignment[v] != usize::MAX {
            // pinned endpoint: validate and descend
            return consistent_at(v, assignment, slots, rule, b)
                && search(v + 1, n_vars, n, assignment, slots, rule, b);
        }
        for e in 0..n {
            assignment[v] = e;
            if consistent_at(v, assignment, slots, rule, b)
                && search(v + 1, n_vars, n, assignment, slots, rule, b)
            {
                return true;
            }
        }
        assignment[v] = usize::MAX;
        false
    }

    Ok(search(1, n_vars, n, &mut assignment, &slots, rule, b))
}

/// Per-variable candidate domains tracked by the propagator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Domains {
    /// `domains[v - 1]` is the sorted entity set for variable `v`.
    pub domains: Vec<Vec<usize>>,
}

/// Result of running arc consistency to quiescence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagationStatus {
    FixedPoint,
    Wipeout,
}

/// Classical worklist arc consistency (AC-3) over the binary constraint
/// network induced by the rule's active slots, with the endpoint domains
/// pinned to the query. Returns the final domains and whether any emptied.
pub fn ac3_propagate(
    rule: &HardRule,
    query: Query,
    b: &AdjacencyTensor,
) -> (Domains, PropagationStatus) {
    let n_vars = rule.schema.n_vars;
    let n = b.num_entities();
    let true_index = b.extended().true_index();
    let mut domains: Vec<Vec<bool>> = vec![vec![true; n]; n_vars];
    domains[0] = vec![false; n];
    domains[0][query.head] = true;
    domains[n_vars - 1] = vec![false; n];
    domains[n_vars - 1][query.tail] = true;

    // directed arcs (x, y, slot): revise D(x) against D(y)
    let active = rule.active_slots(true_index);
    let mut arcs: Vec<(usize, usize, usize)> = Vec::new();
    for (s, &(i, j)) in rule.schema.slots().iter().enumerate() {
        if rule.slot_is_true(s, true_index) {
            continue;
        }
        arcs.push((i, j, s));
        arcs.push((j, i, s));
    }
    let _ = &active;

    let mut queue: VecDeque<usize> = (0..arcs.len()).collect();
    let mut queued: Vec<bool> = vec![true; arcs.len()];

    while let Some(a) = queue.pop_front() {
        queued[a] = false;
        let (x, y, s) = arcs[a];
        let (i, _) = rule.schema.slots()[s];
        let mut revised = false;
        for u in 0..n {
            if !domains[x - 1][u] {
                continue;
            }
            let supported = (0..n).any(|v| {
                if !domains[y - 1][v] {
                    return false;
                }
                if x == i {
                    slot_satisfied(&rule.slots[s], u, v, b)
                } else {
                    slot_satisfied(&rule.slots[s], v, u, b)
                }
            });
            if !supported {
                domains[x - 1][u] = false;
                revised = true;
            }
        }
        if revised {
            if domains[x - 1].iter().all(|&d| !d) {
                return (collect_domains(&domains), PropagationStatus::Wipeout);
            }
            for (a2, &(x2, y2, _)) in arcs.iter().enumerate() {
                if y2 == x && x2 != y && !queued[a2] {
                    queue.push_back(a2);
                    queued[a2] = true;
                }
            }
        }
    }
    (collect_domains(&domains), PropagationStatus::FixedPoint)
}

fn collect_domains(domains: &[Vec<bool>]) -> Domains {
    Domains {
        domains: domains
            .iter()
            .map(|d| {
                d.iter()
                    .enumerate()
                    .filter_map(|(e, &on)| on.then_some(e))
                    .collect()
            })
            .collect(),
    }
}

/// The 8-entity, 5-variable cyclic counterexample: the drawn domains form an
/// entirely arc-consistent fixed point, yet the query has no satisfying
/// grounding. Entities e0..e5 take indices 0..5; the query endpoints take
/// indices 6 (head) and 7 (tail). One relation covers every drawn edge; the
/// per-edge predicate identities are fixed to the single consistent
/// assignment that preserves both stated properties.
pub fn fig5_fixture() -> (HardRule, Vec<Triple>, Query, AdjacencyTensor) {
    let ext = ExtendedPredicates { base_count: 1 };
    let e = |i: usize| i;
    let (e0, e1, e2, e3, e4, e5, head, tail) = (e(0), e(1), e(2), e(3), e(4), e(5), e(6), e(7));
    let facts: Vec<Triple> = [
        (head, e1),
        (head, e0),
        (e1, e3),
        (e3, e5),
        (e5, e0),
        (e0, e2),
        (e2, e4),
        (e4, e1),
        (e3, tail),
        (e2, tail),
    ]
    .iter()
    .map(|&(h, t)| Triple::new(h, 0, t))
    .collect();
    let b = build_adjacency(&facts, 8, ext).expect("fixture adjacency");

    let schema = RuleSchema { n_vars: 5 };
    let true_index = ext.true_index();
    let inv = ext.inverse_of(0);
    let mut slots = vec![vec![true_index]; schema.num_slots()];
    // body: r(Z1,Z2), r(Z2,Z4), r(Z4,Z3), r(Z3,Z2), r(Z4,Z5)
    slots[schema.slot_index(1, 2)] = vec![0];
    slots[schema.slot_index(2, 4)] = vec![0];
    slots[schema.slot_index(3, 4)] = vec![inv]; // r(Z4,Z3)
    slots[schema.slot_index(2, 3)] = vec![inv]; // r(Z3,Z2)
    slots[schema.slot_index(4, 5)] = vec![0];
    let rule = HardRule {
        schema,
        target_relation: 0,
        slots,
    };
    let query = Query {
        head,
        tail,
        relation: 0,
    };
    (rule, facts, query, b)
}

/// Parses the rendered rule format back into a [`HardRule`].
///
/// Accepts `head(X,Y) :- lit ∧ ...` with optional parenthesized
/// disjunctions; `true` stands for the empty body. When `n_vars` is not
/// given it is inferred as one past the largest interior variable (at
/// least 2).
pub fn parse_rule(
    text: &str,
    relation_names: &[String],
    n_vars: Option<usize>,
) -> Result<HardRule> {
    let ext = ExtendedPredicates {
        base_count: relation_names.len(),
    };
    let err = |m: String| Error::RuleParse(m);
    let (head, body) = text
        .split_once(":-")
        .ok_or_else(|| err("missing `:-`".into()))?;
    let head = head.trim();
    let body = body.trim();
    let (head_name, head_args) = parse_literal_text(head)?;
    if head_args != ("X".to_string(), "Y".to_string()) {
        return Err(err(format!("head must be over (X,Y), got {head}")));
    }
    let target_relation = relation_index(relation_names, &head_name)?;

    // gather literals per conjunct
    let mut groups: Vec<Vec<(String, String, String)>> = Vec::new();
    if body != "true" {
        for part in body.split('∧') {
            let part = part.trim();
            let inner = part
                .strip_prefix('(')
                .and_then(|p| p.strip_suffix(')'))
                .unwrap_or(part);
            let mut lits = Vec::new();
            for lit in inner.split('∨') {
                let (name, (a1, a2)) = parse_literal_text(lit.trim())?;
                lits.push((name, a1, a2));
            }
            groups.push(lits);
        }
    }

    // infer the variable count
    let mut max_interior = 0usize;
    for (_, a1, a2) in groups.iter().flatten() {
        for a in [a1, a2] {
            if let Some(k) = a.strip_prefix('Z') {
                let k: usize = k.parse().map_err(|_| err(format!("bad variable `{a}`")))?;
                max_interior = max_interior.max(k);
            }
        }
    }
    let n = n_vars.unwrap_or_else(|| (max_interior + 1).max(2));
    let schema = RuleSchema::new(n)?;
    if max_interior + 1 > n {
        return Err(err(format!(
            "variable Z{max_interior} does not fit {n} schema variables"
        )));
    }

    let var_of = |a: &str| -> Result<usize> {
        match a {
            "X" => Ok(1),
            "Y" => Ok(n),
            _ => {
                let k: usize = a
                    .strip_prefix('Z')
                    .and_then(|k| k.parse().ok())
                    .ok_or_else(|| err(format!("bad variable `{a}`")))?;
                if k <= 1 || k >= n {
                    return Err(err(format!("interior variable `{a}` out of range")));
                }
                Ok(k)
            }
        }
    };

    let mut slots = vec![vec![ext.true_index()]; schema.num_slots()];
    for lits in groups {
        let mut slot_id: Option<usize> = None;
        let mut subset: Vec<usize> = Vec::new();
        for (name, a1, a2) in lits {
            let base = relation_index(relation_names, &name)?;
            let (v1, v2) = (var_of(&a1)?, var_of(&a2)?);
            if v1 == v2 {
                return Err(err(format!("literal over a single variable `{a1}`")));
            }
            let (i, j, pred) = if v1 < v2 {
                (v1, v2, base)
            } else {
                (v2, v1, ext.inverse_of(base))
            };
            let s = schema.slot_index(i, j);
            if *slot_id.get_or_insert(s) != s {
                return Err(err("disjunction mixes literals from different slots".into()));
            }
            subset.push(pred);
        }
        let s = slot_id.expect("nonempty group");
        subset.sort_unstable();
        subset.dedup();
        slots[s] = subset;
    }
    Ok(HardRule {
        schema,
        target_relation,
        slots,
    })
}

fn relation_index(names: &[String], name: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::RuleParse(format!("unknown relation `{name}`")))
}

fn parse_literal_text(text: &str) -> Result<(String, (String, String))> {
    let err = |m: String| Error::RuleParse(m);
    let open = text
        .find('(')
        .ok_or_else(|| err(format!("literal `{text}` missing `(`")))?;
    let close = text
        .rfind(')')
        .ok_or_else(|| err(format!("literal `{text}` missing `)`")))?;
    let name = text[..open].trim().to_string();
    let args: Vec<&str> = text[open + 1..close].split(',').map(str::trim).collect();
    if name.is_empty() || args.len() != 2 {
        return Err(err(format!("malformed literal `{text}`")));
    }
    Ok((name, (args[0].to_string(), args[1].to_string())))
}
