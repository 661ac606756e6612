//! Knowledge-graph storage: split loading, symbol interning, the extended
//! predicate set, the sparse adjacency tensor, and mislabeling noise.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// A ground fact `relation(head, tail)` over interned indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

/// The four dataset splits, in interning order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitKind {
    Facts,
    Train,
    Valid,
    Test,
}

impl SplitKind {
    pub const ALL: [SplitKind; 4] = [
        SplitKind::Facts,
        SplitKind::Train,
        SplitKind::Valid,
        SplitKind::Test,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            SplitKind::Facts => "facts.txt",
            SplitKind::Train => "train.txt",
            SplitKind::Valid => "valid.txt",
            SplitKind::Test => "test.txt",
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitKind::Facts => "facts",
            SplitKind::Train => "train",
            SplitKind::Valid => "valid",
            SplitKind::Test => "test",
        })
    }
}

/// Which background graph an operation runs against: during training only the
/// facts split is visible, so train positives never appear as background
/// edges; at evaluation time facts and train are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Train,
    Eval,
}

/// Interned entities and relations plus the four fact splits.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    pub entity_names: Vec<String>,
    pub relation_names: Vec<String>,
    entity_index: HashMap<String, usize>,
    relation_index: HashMap<String, usize>,
    pub facts: Vec<Triple>,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

impl KnowledgeBase {
    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn split(&self, kind: SplitKind) -> &[Triple] {
        match kind {
            SplitKind::Facts => &self.facts,
            SplitKind::Train => &self.train,
            SplitKind::Valid => &self.valid,
            SplitKind::Test => &self.test,
        }
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    /// Interns `name`, assigning the next index on first appearance.
    pub fn intern_entity(&mut self, name: &str) -> usize {
        if let Some(&id) = self.entity_index.get(name) {
            return id;
        }
        let id = self.entity_names.len();
        self.entity_names.push(name.to_owned());
        self.entity_index.insert(name.to_owned(), id);
        id
    }

    pub fn intern_relation(&mut self, name: &str) -> usize {
        if let Some(&id) = self.relation_index.get(name) {
            return id;
        }
        let id = self.relation_names.len();
        self.relation_names.push(name.to_owned());
        self.relation_index.insert(name.to_owned(), id);
        id
    }

    pub fn push(&mut self, kind: SplitKind, triple: Triple) {
        match kind {
            SplitKind::Facts => self.facts.push(triple),
            SplitKind::Train => self.train.push(triple),
            SplitKind::Valid => self.valid.push(triple),
            SplitKind::Test => self.test.push(triple),
        }
    }

    /// Intern a named triple into the given split.
    pub fn add_fact(&mut self, kind: SplitKind, head: &str, relation: &str, tail: &str) {
        let h = self.intern_entity(head);
        let r = self.intern_relation(relation);
        let t = self.intern_entity(tail);
        self.push(kind, Triple::new(h, r, t));
    }
}

/// Reads the four split files from `dir`, interning symbols in
/// first-appearance order scanning facts, train, valid, test.
///
/// Each line is `head<TAB>relation<TAB>tail`. Relations that appear only in
/// valid/test are accepted with a warning; entities seen only there get fresh
/// indices (the learned rules are entity-free, so this is legal).
pub fn load_split_dir(dir: &Path) -> Result<KnowledgeBase> {
    let mut kb = KnowledgeBase::default();
    for kind in SplitKind::ALL {
        let path = dir.join(kind.file_name());
        let text = fs::read_to_string(&path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::MalformedLine {
                    path,
                    line: lineno + 1,
                    found: fields.len(),
                });
            }
            kb.add_fact(kind, fields[0], fields[1], fields[2]);
        }
    }

    let mut seen: HashSet<usize> = HashSet::new();
    for t in kb.facts.iter().chain(kb.train.iter()) {
        seen.insert(t.relation);
    }
    for kind in [SplitKind::Valid, SplitKind::Test] {
        for t in kb.split(kind) {
            if !seen.contains(&t.relation) {
                log::warn!(
                    "relation `{}` appears in {} but not in facts/train; \
                     rules for it cannot be learned",
                    kb.relation_names[t.relation],
                    kind
                );
                seen.insert(t.relation);
            }
        }
    }
    Ok(kb)
}

/// Writes the four split files back out under `dir` (created if absent),
/// one `head<TAB>relation<TAB>tail` line per triple, in stored order.
/// Reloading the result reproduces identical index assignments.
pub fn save_split_dir(kb: &KnowledgeBase, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for kind in SplitKind::ALL {
        let path = dir.join(kind.file_name());
        let mut out = String::new();
        for t in kb.split(kind) {
            out.push_str(&kb.entity_names[t.head]);
            out.push('\t');
            out.push_str(&kb.relation_names[t.relation]);
            out.push('\t');
            out.push_str(&kb.entity_names[t.tail]);
            out.push('\n');
        }
        let mut f = fs::File::create(&path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        f.write_all(out.as_bytes()).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
    }
    Ok(())
}

/// Index layout of the extended predicate set: the base relations first,
/// then one inverse per base relation, then the universally-true predicate
/// in the last slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ExtendedPredicates {
    pub base_count: usize,
}

impl ExtendedPredicates {
    pub fn total_count(&self) -> usize {
        2 * self.base_count + 1
    }

    pub fn true_index(&self) -> usize {
        2 * self.base_count
    }

    /// Involution swapping a predicate with its inverse; the true predicate
    /// is its own inverse.
    pub fn inverse_of(&self, k: usize) -> usize {
        if k < self.base_count {
            k + self.base_count
        } else if k < 2 * self.base_count {
            k - self.base_count
        } else {
            k
        }
    }

    pub fn is_inverse(&self, k: usize) -> bool {
        k >= self.base_count && k < 2 * self.base_count
    }

    /// Base relation index underlying `k` (identity for base predicates).
    pub fn base_of(&self, k: usize) -> usize {
        if self.is_inverse(k) {
            k - self.base_count
        } else {
            k
        }
    }
}

/// Builds the extended predicate layout for a loaded knowledge base.
pub fn build_extended(kb: &KnowledgeBase) -> ExtendedPredicates {
    ExtendedPredicates {
        base_count: kb.num_relations(),
    }
}

/// Per-predicate sparse binary adjacency, stored in both access orders.
///
/// For predicate `k`, entry `(j, i)` is set iff the (extended) background
/// contains an edge from entity `i` to entity `j` via `k`. `out` lists give
/// the j's per source i (column-major access), `in` lists the i's per
/// destination j (row-major access), so both the matrix and its transpose
/// multiply a vector in O(nnz). The true-predicate slice is empty and is
/// handled algorithmically by the inference engine.
#[derive(Debug, Clone)]
pub struct AdjacencyTensor {
    num_entities: usize,
    ext: ExtendedPredicates,
    preds: Vec<PredAdj>,
}

#[derive(Debug, Clone, Default)]
struct PredAdj {
    out_off: Vec<u32>,
    out_tgt: Vec<u32>,
    in_off: Vec<u32>,
    in_tgt: Vec<u32>,
}

impl PredAdj {
    fn build(n: usize, edges: &mut Vec<(u32, u32)>) -> PredAdj {
        edges.sort_unstable();
        edges.dedup();
        let mut out_off = vec![0u32; n + 1];
        let mut out_tgt = Vec::with_capacity(edges.len());
        for &(src, dst) in edges.iter() {
            out_off[src as usize + 1] += 1;
            out_tgt.push(dst);
        }
        for i in 0..n {
            out_off[i + 1] += out_off[i];
        }
        // transpose for the in-order
        let mut rev: Vec<(u32, u32)> = edges.iter().map(|&(s, d)| (d, s)).collect();
        rev.sort_unstable();
        let mut in_off = vec![0u32; n + 1];
        let mut in_tgt = Vec::with_capacity(rev.len());
        for &(dst, src) in rev.iter() {
            in_off[dst as usize + 1] += 1;
            in_tgt.push(src);
        }
        for i in 0..n {
            in_off[i + 1] += in_off[i];
        }
        PredAdj {
            out_off,
            out_tgt,
            in_off,
            in_tgt,
        }
    }
}

impl AdjacencyTensor {
    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_predicates(&self) -> usize {
        self.ext.total_count()
    }

    pub fn extended(&self) -> ExtendedPredicates {
        self.ext
    }

    /// Entities `j` reachable from `i` by one `k`-edge (sorted).
    pub fn out_neighbors(&self, k: usize, i: usize) -> &[u32] {
        let p = &self.preds[k];
        &p.out_tgt[p.out_off[i] as usize..p.out_off[i + 1] as usize]
    }

    /// Entities `i` with a `k`-edge into `j` (sorted).
    pub fn in_neighbors(&self, k: usize, j: usize) -> &[u32] {
        let p = &self.preds[k];
        &p.in_tgt[p.in_off[j] as usize..p.in_off[j + 1] as usize]
    }

    pub fn has_edge(&self, k: usize, i: usize, j: usize) -> bool {
        self.out_neighbors(k, i).binary_search(&(j as u32)).is_ok()
    }

    pub fn nnz(&self, k: usize) -> usize {
        self.preds[k].out_tgt.len()
    }

    pub fn total_nnz(&self) -> usize {
        self.preds.iter().map(|p| p.out_tgt.len()).sum()
    }
}

/// Builds the sparse adjacency tensor over the extended predicate set.
///
/// Every triple `(i, k, j)` contributes the edge `i -> j` in slice `k` and
/// the mirrored edge `j -> i` in slice `inverse_of(k)`. Duplicates collapse;
/// entries are binary. The true-predicate slice stays empty.
pub fn build_adjacency(
    triples: &[Triple],
    n_entities: usize,
    ext: ExtendedPredicates,
) -> Result<AdjacencyTensor> {
    let mut edges: Vec<Vec<(u32, u32)>> = vec![Vec::new(); ext.total_count()];
    for t in triples {
        if t.head >= n_entities {
            return Err(Error::EntityOutOfRange {
                index: t.head,
                bound: n_entities,
            });
        }
        if t.tail >= n_entities {
            return Err(Error::EntityOutOfRange {
                index: t.tail,
                bound: n_entities,
            });
        }
        if t.relation >= ext.base_count {
            return Err(Error::RelationOutOfRange {
                index: t.relation,
                bound: ext.base_count,
            });
        }
        edges[t.relation].push((t.head as u32, t.tail as u32));
        edges[ext.inverse_of(t.relation)].push((t.tail as u32, t.head as u32));
    }
    let preds = edges
        .iter_mut()
        .map(|e| PredAdj::build(n_entities, e))
        .collect();
    Ok(AdjacencyTensor {
        num_entities: n_entities,
        ext,
        preds,
    })
}

/// The background triples visible at a stage: facts only while training
/// (train positives must never be background), facts plus train afterwards,
/// deduplicated in first-appearance order.
pub fn background_for(stage: Stage, kb: &KnowledgeBase) -> Vec<Triple> {
    match stage {
        Stage::Train => kb.facts.clone(),
        Stage::Eval => {
            let mut seen: HashSet<Triple> = HashSet::new();
            let mut out = Vec::with_capacity(kb.facts.len() + kb.train.len());
            for &t in kb.facts.iter().chain(kb.train.iter()) {
                if seen.insert(t) {
                    out.push(t);
                }
            }
            out
        }
    }
}

/// Replaces, independently with probability `p`, the relation of each facts
/// and train triple by a uniformly random different relation. Valid and test
/// splits are untouched. Deterministic for a given seed.
pub fn apply_mislabeling(kb: &KnowledgeBase, p: f64, seed: u64) -> Result<KnowledgeBase> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!(
            "mislabeling probability {p} outside [0, 1]"
        )));
    }
    let n_rel = kb.num_relations();
    if p > 0.0 && n_rel < 2 {
        return Err(Error::InvalidConfig(
            "mislabeling requires at least 2 relations".into(),
        ));
    }
    let mut rng = rng_for(seed, "mislabel", &[]);
    let mut out = kb.clone();
    for split in [&mut out.facts, &mut out.train] {
        for t in split.iter_mut() {
            if rng.gen::<f64>() < p {
                let draw = rng.gen_range(0..n_rel - 1);
                t.relation = if draw >= t.relation { draw + 1 } else { draw };
            }
        }
    }
    Ok(out)
}

/// A `(head, relation, tail)` triple by name.
pub type NamedTriple<'a> = (&'a str, &'a str, &'a str);

/// Convenience: build a KB in memory from named triples per split.
pub fn kb_from_named(splits: &[(SplitKind, &[NamedTriple])]) -> KnowledgeBase {
    let mut kb = KnowledgeBase::default();
    for kind in SplitKind::ALL {
        for &(k, triples) in splits {
            if k == kind {
                for &(h, r, t) in triples {
                    kb.add_fact(kind, h, r, t);
                }
            }
        }
    }
    kb
}

/// Build a directory path for error contexts.
pub fn split_path(dir: &Path, kind: SplitKind) -> PathBuf {
    dir.join(kind.file_name())
}
