//! On-disk artifact layout shared by the subcommands: checkpoint trees,
//! extracted-rule files, rank records, and reports.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use glidr::eval::{MetricsReport, QueryDirection, RankRecord};
use glidr::kg::KnowledgeBase;
use glidr::rule::{
    load_checkpoint, save_checkpoint, HardEnsemble, HardRule, RuleEnsemble, SoftEnsemble,
};
use glidr::train::LossRecord;

/// A filesystem-safe tag for a relation: index prefix plus sanitized name.
pub fn relation_tag(idx: usize, name: &str) -> String {
    let mut safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    safe.truncate(48);
    format!("{idx:04}_{safe}")
}

pub fn checkpoints_dir(out: &Path) -> PathBuf {
    out.join("checkpoints")
}

/// Writes one checkpoint file per rule body under
/// `checkpoints/<idx>_<name>/body_<i>.json`.
pub fn save_ensemble(out: &Path, kb: &KnowledgeBase, ensemble: &SoftEnsemble) -> Result<()> {
    let rel = ensemble.target_relation;
    let dir = checkpoints_dir(out).join(relation_tag(rel, &kb.relation_names[rel]));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for (i, body) in ensemble.bodies.iter().enumerate() {
        let path = dir.join(format!("body_{i}.json"));
        save_checkpoint(
            body,
            &kb.relation_names[rel],
            ensemble.body_scores.as_ref().map(|s| s[i]),
            &path,
        )?;
    }
    Ok(())
}

/// Loads every per-relation checkpoint directory under `out/checkpoints`.
pub fn load_ensembles(out: &Path, kb: &KnowledgeBase) -> Result<HashMap<usize, SoftEnsemble>> {
    let root = checkpoints_dir(out);
    let mut map = HashMap::new();
    let entries =
        fs::read_dir(&root).with_context(|| format!("no checkpoints at {}", root.display()))?;
    for entry in entries {
        let dir = entry?.path();
        if !dir.is_dir() {
            continue;
        }
        let mut bodies = Vec::new();
        let mut weights = Vec::new();
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("body_") && n.ends_with(".json"))
        });
        files.sort();
        for path in files {
            let (body, weight) = load_checkpoint(&path)?;
            weights.push(weight);
            bodies.push(body);
        }
        if bodies.is_empty() {
            continue;
        }
        let relation = bodies[0].target_relation;
        if relation >= kb.num_relations() {
            bail!(
                "checkpoint {} targets relation {relation}, but the dataset has {}",
                dir.display(),
                kb.num_relations()
            );
        }
        let stored_name = read_target_name(&dir)?;
        if let Some(name) = stored_name {
            if name != kb.relation_names[relation] {
                log::warn!(
                    "checkpoint {} was trained for `{name}` but relation {relation} of this \
                     dataset is `{}`",
                    dir.display(),
                    kb.relation_names[relation]
                );
            }
        }
        let mut ensemble = RuleEnsemble::new(relation, bodies);
        if weights.iter().all(Option::is_some) {
            ensemble = ensemble.with_scores(weights.into_iter().flatten().collect());
        }
        map.insert(relation, ensemble);
    }
    if map.is_empty() {
        bail!("no checkpoints found under {}", root.display());
    }
    Ok(map)
}

fn read_target_name(dir: &Path) -> Result<Option<String>> {
    let path = dir.join("body_0.json");
    let text = fs::read_to_string(&path)?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    Ok(v["target_name"].as_str().map(str::to_owned))
}

pub fn save_loss_trace(out: &Path, tag: &str, trace: &[LossRecord]) -> Result<()> {
    let dir = out.join("loss");
    fs::create_dir_all(&dir)?;
    let mut text = String::new();
    for r in trace {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(dir.join(format!("{tag}.jsonl")), text)?;
    Ok(())
}

/// Machine-readable extracted rules: slot subsets per body per relation.
#[derive(serde::Serialize, serde::Deserialize)]
pub struct RuleFile {
    pub version: u32,
    pub extraction_p: f64,
    pub relations: Vec<RuleFileRelation>,
}

#[derive(serde::Serialize, serde::Deserialize)]
pub struct RuleFileRelation {
    pub relation: usize,
    pub relation_name: String,
    pub n_vars: usize,
    pub bodies: Vec<RuleFileBody>,
}

#[derive(serde::Serialize, serde::Deserialize)]
pub struct RuleFileBody {
    pub slots: Vec<Vec<usize>>,
    pub weight: f64,
}

pub fn save_rules(
    out: &Path,
    kb: &KnowledgeBase,
    p: f64,
    ensembles: &HashMap<usize, HardEnsemble>,
) -> Result<()> {
    let dir = out.join("rules");
    fs::create_dir_all(&dir)?;
    let mut relations: Vec<RuleFileRelation> = Vec::new();
    let mut keys: Vec<usize> = ensembles.keys().copied().collect();
    keys.sort_unstable();
    for rel in keys {
        let ensemble = &ensembles[&rel];
        let name = &kb.relation_names[rel];
        let mut text = String::new();
        for rule in &ensemble.bodies {
            text.push_str(&glidr::rule::render_rule(rule, &kb.relation_names));
            text.push('\n');
        }
        fs::write(dir.join(format!("{}.txt", relation_tag(rel, name))), text)?;
        relations.push(RuleFileRelation {
            relation: rel,
            relation_name: name.clone(),
            n_vars: ensemble.bodies.first().map_or(0, |r| r.schema.n_vars),
            bodies: ensemble
                .bodies
                .iter()
                .enumerate()
                .map(|(i, r)| RuleFileBody {
                    slots: r.slots.clone(),
                    weight: ensemble.body_weight(i),
                })
                .collect(),
        });
    }
    let file = RuleFile {
        version: 1,
        extraction_p: p,
        relations,
    };
    fs::write(out.join("rules.json"), serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_rules(out: &Path) -> Result<HashMap<usize, HardEnsemble>> {
    let path = out.join("rules.json");
    let text = fs::read_to_string(&path)
        .with_context(|| format!("no extracted rules at {}", path.display()))?;
    let file: RuleFile = serde_json::from_str(&text)?;
    let mut map = HashMap::new();
    for rel in file.relations {
        let schema = glidr::rule::RuleSchema::new(rel.n_vars)?;
        let mut bodies = Vec::new();
        let mut weights = Vec::new();
        for body in rel.bodies {
            weights.push(body.weight);
            bodies.push(HardRule {
                schema,
                target_relation: rel.relation,
                slots: body.slots,
            });
        }
        map.insert(
            rel.relation,
            RuleEnsemble::new(rel.relation, bodies).with_scores(weights),
        );
    }
    Ok(map)
}

#[derive(serde::Serialize)]
struct NamedRank<'a> {
    direction: QueryDirection,
    entity: &'a str,
    relation: &'a str,
    target: &'a str,
    rank: usize,
}

/// Appends rank records as JSON lines (append-only so sweeps can resume).
pub fn append_ranks(path: &Path, kb: &KnowledgeBase, records: &[RankRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut text = String::new();
    for r in records {
        let named = NamedRank {
            direction: r.direction,
            entity: &kb.entity_names[r.fixed_entity],
            relation: &kb.relation_names[r.relation],
            target: &kb.entity_names[r.target],
            rank: r.rank,
        };
        text.push_str(&serde_json::to_string(&named)?);
        text.push('\n');
    }
    f.write_all(text.as_bytes())?;
    Ok(())
}

#[derive(serde::Serialize)]
pub struct EvalReport<'a> {
    pub label: &'a str,
    pub mode: &'a str,
    pub split: &'a str,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

pub fn write_report(out: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out.join("metrics.jsonl"))?;
    writeln!(f, "{}", serde_json::to_string(report)?)?;
    Ok(())
}

pub fn append_csv(path: &Path, label: &str, m: &MetricsReport) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    if fresh {
        writeln!(f, "label,mrr,hits1,hits10,count")?;
    }
    writeln!(f, "{label},{},{},{},{}", m.mrr, m.hits1, m.hits10, m.count)?;
    Ok(())
}
