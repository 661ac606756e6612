//! Synthetic data: randomized small instances for the self-check suites, a
//! planted-chain-rule recovery dataset, and generated kinship worlds (the
//! classic two-family tree and a parameterized multi-tree variant) used as
//! fully reproducible benchmarks.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::infer::Query;
use crate::kg::{
    build_adjacency, AdjacencyTensor, ExtendedPredicates, KnowledgeBase, SplitKind, Triple,
};
use crate::oracle::{brute_force_entailment, parse_rule};
use crate::rng::rng_for;
use crate::rule::{HardRule, RuleSchema};

/// A random background graph: `edges_per_rel` directed edges per relation,
/// duplicates allowed (they collapse in the tensor).
pub fn random_kg(
    rng: &mut ChaCha8Rng,
    n_entities: usize,
    n_relations: usize,
    edges_per_rel: usize,
) -> Vec<Triple> {
    let mut triples = Vec::with_capacity(n_relations * edges_per_rel);
    for r in 0..n_relations {
        for _ in 0..edges_per_rel {
            triples.push(Triple::new(
                rng.gen_range(0..n_entities),
                r,
                rng.gen_range(0..n_entities),
            ));
        }
    }
    triples
}

/// A randomized small instance for propagation/oracle cross-checks.
pub struct RandomInstance {
    pub b: AdjacencyTensor,
    pub rule: HardRule,
    pub query: Query,
}

/// Draws a graph, a hard rule, and a query. With `allow_cycles` false the
/// active slots form a forest over the schema variables (each variable links
/// to at most one earlier variable), where propagation is exact.
pub fn random_instance(seed: u64, allow_cycles: bool) -> RandomInstance {
    let mut rng = rng_for(seed, "instance", &[u64::from(allow_cycles)]);
    let n_entities = rng.gen_range(4..=12);
    let n_relations = rng.gen_range(1..=4);
    let n_vars = rng.gen_range(3..=5);
    let edges = rng.gen_range(n_entities..=3 * n_entities);
    let ext = ExtendedPredicates {
        base_count: n_relations,
    };
    let triples = random_kg(&mut rng, n_entities, n_relations, edges);
    let b = build_adjacency(&triples, n_entities, ext).expect("random instance adjacency");

    let schema = RuleSchema { n_vars };
    let true_index = ext.true_index();
    let mut slots = vec![vec![true_index]; schema.num_slots()];
    let mut active = 0;
    if allow_cycles {
        for s in slots.iter_mut() {
            if rng.gen_bool(0.4) {
                *s = random_subset(&mut rng, ext);
                active += 1;
            }
        }
    } else {
        for v in 2..=n_vars {
            if rng.gen_bool(0.75) {
                let u = rng.gen_range(1..v);
                slots[schema.slot_index(u, v)] = random_subset(&mut rng, ext);
                active += 1;
            }
        }
    }
    if active == 0 {
        let v = rng.gen_range(2..=n_vars);
        slots[schema.slot_index(1, v)] = random_subset(&mut rng, ext);
    }
    let rule = HardRule {
        schema,
        target_relation: 0,
        slots,
    };
    let query = Query {
        head: rng.gen_range(0..n_entities),
        tail: rng.gen_range(0..n_entities),
        relation: 0,
    };
    RandomInstance { b, rule, query }
}

fn random_subset(rng: &mut ChaCha8Rng, ext: ExtendedPredicates) -> Vec<usize> {
    let n = 2 * ext.base_count;
    let size = if rng.gen_bool(0.75) { 1 } else { 2.min(n) };
    let mut set = BTreeSet::new();
    while set.len() < size {
        set.insert(rng.gen_range(0..n));
    }
    set.into_iter().collect()
}

/// The planted-rule dataset: two base relations whose composition defines
/// the target exactly. Facts hold the base edges; the composition pairs
/// split into train and valid positives for the target relation.
pub fn planted_chain_dataset(seed: u64) -> KnowledgeBase {
    let n = 30;
    for attempt in 0..64 {
        let mut rng = rng_for(seed, "planted", &[attempt]);
        let mut kb = KnowledgeBase::default();
        let r1 = kb.intern_relation("r1");
        let r2 = kb.intern_relation("r2");
        let h = kb.intern_relation("h");
        for i in 0..n {
            kb.intern_entity(&format!("e{i}"));
        }
        let mut seen: HashSet<(usize, usize, usize)> = HashSet::new();
        for r in [r1, r2] {
            for _ in 0..55 {
                let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
                if a != b && seen.insert((a, r, b)) {
                    kb.push(SplitKind::Facts, Triple::new(a, r, b));
                }
            }
        }
        // exact composition closure h(x, y) <- r1(x, z) ∧ r2(z, y)
        let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
        for t1 in kb.facts.clone() {
            if t1.relation != r1 {
                continue;
            }
            for t2 in kb.facts.clone() {
                if t2.relation == r2 && t2.head == t1.tail {
                    pairs.insert((t1.head, t2.tail));
                }
            }
        }
        if pairs.len() < 30 || pairs.len() > 220 {
            continue;
        }
        let mut pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
        pairs.shuffle(&mut rng);
        let n_valid = (pairs.len() * 3) / 10;
        for (i, (x, y)) in pairs.into_iter().enumerate() {
            let kind = if i < n_valid {
                SplitKind::Valid
            } else {
                SplitKind::Train
            };
            kb.push(kind, Triple::new(x, h, y));
        }
        return kb;
    }
    unreachable!("planted dataset generation failed for every attempt")
}

/// Whether a hard rule body equals the planted chain `r1(X,Z) ∧ r2(Z,Y)` up
/// to schema embedding: verified semantically by comparing entailed pairs
/// against the composition closure over the full entity square.
pub fn recovers_planted_rule(rule: &HardRule, kb: &KnowledgeBase) -> Result<bool> {
    let ext = crate::kg::build_extended(kb);
    let b = build_adjacency(&kb.facts, kb.num_entities(), ext)?;
    let r1 = kb.relation_id("r1").expect("planted kb");
    let r2 = kb.relation_id("r2").expect("planted kb");
    let h = kb.relation_id("h").expect("planted kb");
    let mut truth: HashSet<(usize, usize)> = HashSet::new();
    for t in kb.train.iter().chain(kb.valid.iter()) {
        if t.relation == h {
            truth.insert((t.head, t.tail));
        }
    }
    let _ = (r1, r2);
    let n = kb.num_entities();
    for x in 0..n {
        for y in 0..n {
            let entailed = brute_force_entailment(
                rule,
                Query {
                    head: x,
                    tail: y,
                    relation: h,
                },
                &b,
            )?;
            if entailed != truth.contains(&(x, y)) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// Kinship worlds
// ---------------------------------------------------------------------------

pub const KINSHIP_RELATIONS: [&str; 12] = [
    "father", "mother", "husband", "wife", "son", "daughter", "brother", "sister", "uncle", "aunt",
    "nephew", "niece",
];

/// A genealogy: genders, child->parents links, and marriages.
#[derive(Debug, Default, Clone)]
pub struct World {
    pub names: Vec<String>,
    pub male: Vec<bool>,
    pub parents: Vec<Vec<usize>>,
    pub spouse: Vec<Option<usize>>,
}

impl World {
    fn add_person(&mut self, name: &str, male: bool) -> usize {
        self.names.push(name.to_owned());
        self.male.push(male);
        self.parents.push(Vec::new());
        self.spouse.push(None);
        self.names.len() - 1
    }

    fn marry(&mut self, a: usize, b: usize) {
        self.spouse[a] = Some(b);
        self.spouse[b] = Some(a);
    }

    fn child(&mut self, name: &str, male: bool, father: usize, mother: usize) -> usize {
        let c = self.add_person(name, male);
        self.parents[c] = vec![father, mother];
        c
    }

    fn children_of(&self, p: usize) -> Vec<usize> {
        (0..self.names.len())
            .filter(|&c| self.parents[c].contains(&p))
            .collect()
    }

    fn siblings_of(&self, x: usize) -> Vec<usize> {
        (0..self.names.len())
            .filter(|&y| {
                y != x
                    && !self.parents[x].is_empty()
                    && self.parents[x].iter().any(|p| self.parents[y].contains(p))
            })
            .collect()
    }

    /// All kinship triples `(x, relation name, y)` the world implies,
    /// including by-marriage uncles and aunts.
    pub fn kinship_triples(&self) -> Vec<(usize, &'static str, usize)> {
        let mut out: Vec<(usize, &'static str, usize)> = Vec::new();
        let n = self.names.len();
        for p in 0..n {
            for c in self.children_of(p) {
                out.push((p, if self.male[p] { "father" } else { "mother" }, c));
                out.push((c, if self.male[c] { "son" } else { "daughter" }, p));
            }
            if let Some(s) = self.spouse[p] {
                out.push((p, if self.male[p] { "husband" } else { "wife" }, s));
            }
        }
        for x in 0..n {
            for y in self.siblings_of(x) {
                out.push((x, if self.male[x] { "brother" } else { "sister" }, y));
            }
        }
        // uncles/aunts: siblings of a parent and their spouses
        for y in 0..n {
            let mut relatives: BTreeSet<usize> = BTreeSet::new();
            for &p in &self.parents[y] {
                for s in self.siblings_of(p) {
                    relatives.insert(s);
                    if let Some(sp) = self.spouse[s] {
                        relatives.insert(sp);
                    }
                }
            }
            for x in relatives {
                out.push((x, if self.male[x] { "uncle" } else { "aunt" }, y));
                out.push((y, if self.male[y] { "nephew" } else { "niece" }, x));
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

/// The classic two-family genealogy of twelve people each.
pub fn two_family_world() -> World {
    let mut w = World::default();
    for (mk, parents_a, parents_b, kids_a, kids_b, kids_c, inlaw_a, inlaw_b) in [
        (
            0,
            ("Christopher", "Penelope"),
            ("Andrew", "Christine"),
            ("Arthur", "Victoria"),
            ("James", "Jennifer"),
            ("Colin", "Charlotte"),
            "Margaret",
            "Charles",
        ),
        (
            1,
            ("Roberto", "Maria"),
            ("Pierro", "Francesca"),
            ("Emilio", "Lucia"),
            ("Marco", "Angela"),
            ("Alfonso", "Sophia"),
            "Gina",
            "Tomaso",
        ),
    ] {
        let _ = mk;
        let f1 = w.add_person(parents_a.0, true);
        let m1 = w.add_person(parents_a.1, false);
        w.marry(f1, m1);
        let f2 = w.add_person(parents_b.0, true);
        let m2 = w.add_person(parents_b.1, false);
        w.marry(f2, m2);
        let son1 = w.child(kids_a.0, true, f1, m1);
        let dau1 = w.child(kids_a.1, false, f1, m1);
        let son2 = w.child(kids_b.0, true, f2, m2);
        let dau2 = w.child(kids_b.1, false, f2, m2);
        let inlaw1 = w.add_person(inlaw_a, false);
        w.marry(son1, inlaw1);
        w.marry(son2, dau1);
        let inlaw2 = w.add_person(inlaw_b, true);
        w.marry(inlaw2, dau2);
        w.child(kids_c.0, true, son2, dau1);
        w.child(kids_c.1, false, son2, dau1);
    }
    w
}

/// A parameterized multi-tree genealogy with the same relational schema:
/// each tree has two founding couples, a middle generation that intermarries
/// within the tree, and grandchildren.
pub fn multi_tree_world(n_trees: usize, seed: u64) -> World {
    let mut rng = rng_for(seed, "world", &[n_trees as u64]);
    let mut w = World::default();
    for t in 0..n_trees {
        let name = |role: &str, i: usize| format!("t{t}_{role}{i}");
        let f1 = w.add_person(&name("gf", 0), true);
        let m1 = w.add_person(&name("gm", 0), false);
        w.marry(f1, m1);
        let f2 = w.add_person(&name("gf", 1), true);
        let m2 = w.add_person(&name("gm", 1), false);
        w.marry(f2, m2);
        let mut mid: Vec<(usize, bool)> = Vec::new();
        for (fam, (fa, mo)) in [(0, (f1, m1)), (1, (f2, m2))] {
            let n_children = rng.gen_range(2..=3);
            for c in 0..n_children {
                let male = rng.gen_bool(0.5);
                let id = w.child(
                    &name(if male { "s" } else { "d" }, fam * 4 + c),
                    male,
                    fa,
                    mo,
                );
                mid.push((id, male));
            }
        }
        // marry one cross-family pair, then pair the rest with in-laws
        let husbands: Vec<usize> = mid.iter().filter(|(_, m)| *m).map(|(i, _)| *i).collect();
        let wives: Vec<usize> = mid.iter().filter(|(_, m)| !*m).map(|(i, _)| *i).collect();
        let couples = husbands.len().min(wives.len());
        for (ci, (&h, &wi)) in husbands.iter().zip(wives.iter()).enumerate() {
            if w.parents[h] == w.parents[wi] {
                continue; // no sibling marriages
            }
            w.marry(h, wi);
            let kids = rng.gen_range(1..=3);
            for k in 0..kids {
                let male = rng.gen_bool(0.5);
                w.child(
                    &name(if male { "gs" } else { "gd" }, ci * 4 + k),
                    male,
                    h,
                    wi,
                );
            }
        }
        let _ = couples;
        // unmarried middles get an in-law spouse (keeps aunts/uncles by marriage)
        for (id, male) in mid {
            if w.spouse[id].is_none() && rng.gen_bool(0.8) {
                let sp = w.add_person(&name("inlaw", id), !male);
                w.marry(id, sp);
            }
        }
    }
    w
}

/// Alternative ground-truth definitions for each kinship relation, in the
/// rendered rule syntax. A held-out fact counts as derivable when at least
/// one of its relation's definitions entails it from the background.
pub fn kinship_ground_truth_rules() -> Vec<(&'static str, Vec<&'static str>)> {
    vec![
        (
            "father",
            vec![
                "father(X,Y) :- husband(X,Z2) ∧ mother(Z2,Y)",
                "father(X,Y) :- father(X,Z2) ∧ brother(Z2,Y)",
                "father(X,Y) :- father(X,Z2) ∧ sister(Z2,Y)",
                "father(X,Y) :- son(Y,X) ∧ husband(X,Z2)",
                "father(X,Y) :- daughter(Y,X) ∧ husband(X,Z2)",
            ],
        ),
        (
            "mother",
            vec![
                "mother(X,Y) :- wife(X,Z2) ∧ father(Z2,Y)",
                "mother(X,Y) :- mother(X,Z2) ∧ brother(Z2,Y)",
                "mother(X,Y) :- mother(X,Z2) ∧ sister(Z2,Y)",
                "mother(X,Y) :- son(Y,X) ∧ wife(X,Z2)",
                "mother(X,Y) :- daughter(Y,X) ∧ wife(X,Z2)",
            ],
        ),
        (
            "husband",
            vec![
                "husband(X,Y) :- wife(Y,X)",
                "husband(X,Y) :- father(X,Z2) ∧ mother(Y,Z2)",
            ],
        ),
        (
            "wife",
            vec![
                "wife(X,Y) :- husband(Y,X)",
                "wife(X,Y) :- mother(X,Z2) ∧ father(Y,Z2)",
            ],
        ),
        (
            "son",
            vec![
                "son(X,Y) :- brother(X,Z2) ∧ daughter(Z2,Y)",
                "son(X,Y) :- brother(X,Z2) ∧ son(Z2,Y)",
                "son(X,Y) :- son(X,Z2) ∧ husband(Y,Z2)",
                "son(X,Y) :- son(X,Z2) ∧ wife(Y,Z2)",
                "son(X,Y) :- father(Y,X) ∧ brother(X,Z2)",
                "son(X,Y) :- mother(Y,X) ∧ brother(X,Z2)",
            ],
        ),
        (
            "daughter",
            vec![
                "daughter(X,Y) :- sister(X,Z2) ∧ son(Z2,Y)",
                "daughter(X,Y) :- sister(X,Z2) ∧ daughter(Z2,Y)",
                "daughter(X,Y) :- daughter(X,Z2) ∧ husband(Y,Z2)",
                "daughter(X,Y) :- daughter(X,Z2) ∧ wife(Y,Z2)",
                "daughter(X,Y) :- father(Y,X) ∧ sister(X,Z2)",
                "daughter(X,Y) :- mother(Y,X) ∧ sister(X,Z2)",
            ],
        ),
        (
            "brother",
            vec![
                "brother(X,Y) :- son(X,Z2) ∧ father(Z2,Y)",
                "brother(X,Y) :- son(X,Z2) ∧ mother(Z2,Y)",
                "brother(X,Y) :- brother(X,Z2) ∧ brother(Z2,Y)",
                "brother(X,Y) :- brother(X,Z2) ∧ sister(Z2,Y)",
            ],
        ),
        (
            "sister",
            vec![
                "sister(X,Y) :- daughter(X,Z2) ∧ father(Z2,Y)",
                "sister(X,Y) :- daughter(X,Z2) ∧ mother(Z2,Y)",
                "sister(X,Y) :- sister(X,Z2) ∧ brother(Z2,Y)",
                "sister(X,Y) :- sister(X,Z2) ∧ sister(Z2,Y)",
            ],
        ),
        (
            "uncle",
            vec![
                "uncle(X,Y) :- brother(X,Z2) ∧ father(Z2,Y)",
                "uncle(X,Y) :- brother(X,Z2) ∧ mother(Z2,Y)",
                "uncle(X,Y) :- husband(X,Z2) ∧ aunt(Z2,Y)",
                "uncle(X,Y) :- uncle(X,Z2) ∧ brother(Z2,Y)",
                "uncle(X,Y) :- uncle(X,Z2) ∧ sister(Z2,Y)",
            ],
        ),
        (
            "aunt",
            vec![
                "aunt(X,Y) :- sister(X,Z2) ∧ father(Z2,Y)",
                "aunt(X,Y) :- sister(X,Z2) ∧ mother(Z2,Y)",
                "aunt(X,Y) :- wife(X,Z2) ∧ uncle(Z2,Y)",
                "aunt(X,Y) :- aunt(X,Z2) ∧ brother(Z2,Y)",
                "aunt(X,Y) :- aunt(X,Z2) ∧ sister(Z2,Y)",
            ],
        ),
        (
            "nephew",
            vec![
                "nephew(X,Y) :- son(X,Z2) ∧ brother(Y,Z2)",
                "nephew(X,Y) :- son(X,Z2) ∧ sister(Y,Z2)",
                "nephew(X,Y) :- uncle(Y,X) ∧ son(X,Z2)",
                "nephew(X,Y) :- aunt(Y,X) ∧ son(X,Z2)",
                "nephew(X,Y) :- brother(X,Z2) ∧ niece(Z2,Y)",
                "nephew(X,Y) :- brother(X,Z2) ∧ nephew(Z2,Y)",
            ],
        ),
        (
            "niece",
            vec![
                "niece(X,Y) :- daughter(X,Z2) ∧ brother(Y,Z2)",
                "niece(X,Y) :- daughter(X,Z2) ∧ sister(Y,Z2)",
                "niece(X,Y) :- uncle(Y,X) ∧ daughter(X,Z2)",
                "niece(X,Y) :- aunt(Y,X) ∧ daughter(X,Z2)",
                "niece(X,Y) :- sister(X,Z2) ∧ nephew(Z2,Y)",
                "niece(X,Y) :- sister(X,Z2) ∧ niece(Z2,Y)",
            ],
        ),
    ]
}

/// Splits a kinship world into facts/train/valid/test, stratified per
/// relation with the given (train, valid, test) fractions (facts keep the
/// remainder), guaranteeing that every held-out positive is still entailed
/// by one of the ground-truth definitions from the background it will be
/// judged against (facts for train positives; facts plus train for
/// valid/test). Underivable picks return to the facts split.
pub fn split_world_with(world: &World, seed: u64, fractions: (f64, f64, f64)) -> KnowledgeBase {
    split_world_relations(world, seed, fractions, &KINSHIP_RELATIONS)
}

/// Like [`split_world_with`], but only the listed relations are split;
/// every other relation stays entirely in the facts background. Holding out
/// just the derived relations keeps their defining routes fully supported
/// during training.
pub fn split_world_relations(
    world: &World,
    seed: u64,
    fractions: (f64, f64, f64),
    split_relations: &[&str],
) -> KnowledgeBase {
    let mut kb = KnowledgeBase::default();
    for r in KINSHIP_RELATIONS {
        kb.intern_relation(r);
    }
    for n in &world.names {
        kb.intern_entity(n);
    }
    let all: Vec<Triple> = world
        .kinship_triples()
        .into_iter()
        .map(|(x, r, y)| Triple::new(x, kb.relation_id(r).unwrap(), y))
        .collect();

    // provisional stratified assignment; facts keep the remainder
    let (f_train, f_valid, f_test) = fractions;
    let mut rng = rng_for(seed, "split", &[]);
    let mut by_rel: BTreeMap<usize, Vec<Triple>> = BTreeMap::new();
    for t in all {
        by_rel.entry(t.relation).or_default().push(t);
    }
    let mut facts = Vec::new();
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    for (rel, mut triples) in by_rel {
        if !split_relations.contains(&kb.relation_names[rel].as_str()) {
            facts.append(&mut triples);
            continue;
        }
        triples.shuffle(&mut rng);
        let n = triples.len();
        let n_train = ((n as f64 * f_train).round() as usize)
            .max(1)
            .min(n.saturating_sub(1));
        let n_valid = ((n as f64 * f_valid).round() as usize).min(n.saturating_sub(n_train + 1));
        let n_test =
            ((n as f64 * f_test).round() as usize).min(n.saturating_sub(n_train + n_valid + 1));
        for (i, t) in triples.into_iter().enumerate() {
            if i < n_train {
                train.push(t);
            } else if i < n_train + n_valid {
                valid.push(t);
            } else if i < n_train + n_valid + n_test {
                test.push(t);
            } else {
                facts.push(t);
            }
        }
    }

    // parse the ground-truth library once
    let rules: Vec<(usize, Vec<HardRule>)> = kinship_ground_truth_rules()
        .into_iter()
        .map(|(name, texts)| {
            let rel = kb.relation_id(name).unwrap();
            let parsed = texts
                .iter()
                .map(|t| parse_rule(t, &kb.relation_names, None).expect("ground-truth rule"))
                .collect();
            (rel, parsed)
        })
        .collect();
    let ext = crate::kg::build_extended(&kb);
    let n_entities = kb.num_entities();
    let derivable = |t: &Triple, bg: &[Triple]| -> bool {
        let b = build_adjacency(bg, n_entities, ext).expect("bg adjacency");
        let defs = &rules.iter().find(|(r, _)| *r == t.relation).unwrap().1;
        defs.iter().any(|rule| {
            brute_force_entailment(
                rule,
                Query {
                    head: t.head,
                    tail: t.tail,
                    relation: t.relation,
                },
                &b,
            )
            .unwrap_or(false)
        })
    };

    // repair until every held-out triple is derivable from the evaluation
    // background (train positives are supervision, not background, and may
    // stay even when facts alone cannot re-derive them)
    for _ in 0..12 {
        let mut moved = false;
        let eval_bg: Vec<Triple> = facts.iter().chain(train.iter()).copied().collect();
        for split in [&mut valid, &mut test] {
            let mut keep = Vec::new();
            for t in std::mem::take(split) {
                if derivable(&t, &eval_bg) {
                    keep.push(t);
                } else {
                    facts.push(t);
                    moved = true;
                }
            }
            *split = keep;
        }
        if !moved {
            break;
        }
    }

    kb.facts = facts;
    kb.train = train;
    kb.valid = valid;
    kb.test = test;
    kb
}

/// The two-family kinship dataset in its noise-free sanity configuration:
/// the complete graph is the background, and each relation's triples are
/// split 70/15/15 into train/valid/test supervision over those same facts
/// (a transductive fit check; with 2-6 positives per relation and disjoint
/// splits, the dataset is too small for inductive per-mode rule learning).
pub fn hinton_kinship_kb(seed: u64) -> KnowledgeBase {
    let world = two_family_world();
    let mut kb = KnowledgeBase::default();
    for r in KINSHIP_RELATIONS {
        kb.intern_relation(r);
    }
    for n in &world.names {
        kb.intern_entity(n);
    }
    let mut rng = rng_for(seed, "transductive-split", &[]);
    for rel in 0..kb.num_relations() {
        let mut triples: Vec<Triple> = world
            .kinship_triples()
            .into_iter()
            .filter(|&(_, r, _)| kb.relation_id(r) == Some(rel))
            .map(|(x, _, y)| Triple::new(x, rel, y))
            .collect();
        kb.facts.extend(triples.iter().copied());
        triples.shuffle(&mut rng);
        let n = triples.len();
        for (i, t) in triples.into_iter().enumerate() {
            let kind = if i < (n * 7) / 10 {
                SplitKind::Train
            } else if i < (n * 85) / 100 {
                SplitKind::Valid
            } else {
                SplitKind::Test
            };
            kb.push(kind, t);
        }
    }
    kb
}

/// A reproducible multi-tree kinship benchmark at roughly desk scale.
pub fn kinship_world_kb(n_trees: usize, seed: u64) -> KnowledgeBase {
    split_world_with(&multi_tree_world(n_trees, seed), seed, (0.15, 0.075, 0.075))
}
