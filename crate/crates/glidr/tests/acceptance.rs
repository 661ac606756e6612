//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Criteria 1-6 are self-contained and always run. Criteria 7-11 reproduce
//! published-benchmark numbers on the UMLS and Kinships split datasets;
//! those datasets are not bundled, so the tests are `#[ignore]`d and fail
//! with instructions when the data is absent. Their full pipelines are
//! exercised end to end by the generated kinship-world counterparts in
//! `benchmark.rs`, which need no external data.
//!
//! Run everything runnable here with:
//!
//! ```text
//! cargo test -p glidr --test acceptance -- --include-ignored --nocapture
//! ```

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::time::Instant;

use glidr::eval::{evaluate, EvalConfig, EvalModel, MetricsReport};
use glidr::infer::Query;
use glidr::kg::{apply_mislabeling, load_split_dir, KnowledgeBase, SplitKind};
use glidr::rng::{derive_seed, rng_for};
use glidr::rule::{extract_argmax, extract_top_p, slot_distributions, HardEnsemble, SoftEnsemble};
use glidr::selfcheck;
use glidr::synth::{hinton_kinship_kb, planted_chain_dataset, recovers_planted_rule};
use glidr::train::{train_dataset, TrainConfig};
use rand::Rng;

fn pass_line(criterion: &str, pass: bool, detail: &str) {
    println!(
        "[{}] criterion {criterion}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion}: {detail}");
}

#[test]
fn criterion_1_gradient_correctness() {
    let t0 = Instant::now();
    let outcome = selfcheck::check_gradients(50, 0xC1).unwrap();
    let elapsed = t0.elapsed();
    let within_budget = elapsed.as_secs() < 120;
    pass_line(
        "1 (gradient correctness)",
        outcome.pass && within_budget,
        &format!("{} in {elapsed:.1?} (budget 2 min)", outcome.detail),
    );
}

#[test]
fn criterion_2_hard_oracle_equivalence() {
    let t0 = Instant::now();
    let outcome = selfcheck::check_oracle_equivalence(1000, 0xC2).unwrap();
    let elapsed = t0.elapsed();
    let within_budget = elapsed.as_secs() < 300;
    pass_line(
        "2 (hard/oracle equivalence)",
        outcome.pass && within_budget,
        &format!("{} in {elapsed:.1?} (budget 5 min)", outcome.detail),
    );
}

#[test]
fn criterion_3_soundness_one_sided() {
    let t0 = Instant::now();
    let outcome = selfcheck::check_soundness(1000, 0xC3).unwrap();
    let elapsed = t0.elapsed();
    let within_budget = elapsed.as_secs() < 300;
    pass_line(
        "3 (soundness one-sidedness)",
        outcome.pass && within_budget,
        &format!("{} in {elapsed:.1?} (budget 5 min)", outcome.detail),
    );
}

#[test]
fn criterion_4_chain_subsumption() {
    let outcome = selfcheck::check_chain_subsumption(200, 0xC4).unwrap();
    pass_line("4 (chain-like subsumption)", outcome.pass, &outcome.detail);
}

#[test]
fn criterion_5_planted_rule_recovery() {
    let t0 = Instant::now();
    let kb = planted_chain_dataset(0);
    let relation = kb.relation_id("h").unwrap();
    let mut recovered = 0usize;
    for seed in 0..10u64 {
        let config = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let trained = train_dataset(&kb, Some(&[relation]), &config).unwrap();
        let (ensemble, _) = &trained[&relation];
        let weights = ensemble.body_scores.as_ref().unwrap();
        let best = weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let hard = extract_argmax(&slot_distributions(&ensemble.bodies[best]));
        if recovers_planted_rule(&hard, &kb).unwrap() {
            recovered += 1;
        }
    }
    let elapsed = t0.elapsed();
    let ok = recovered >= 9 && elapsed.as_secs() < 600;
    pass_line(
        "5 (planted-rule recovery)",
        ok,
        &format!("{recovered}/10 seeds recovered in {elapsed:.1?} (budget 10 min, need >= 9)"),
    );
}

#[test]
fn criterion_6_noiseless_kinship_perfect() {
    let kb = hinton_kinship_kb(7);
    let config = TrainConfig {
        seed: 0,
        ..TrainConfig::default()
    };
    let trained = train_dataset(&kb, None, &config).unwrap();
    let ensembles: HashMap<usize, SoftEnsemble> =
        trained.into_iter().map(|(r, (e, _))| (r, e)).collect();

    // classify every held-out positive against sampled negatives, per
    // relation, over the facts+train background
    let bg = glidr::kg::background_for(glidr::kg::Stage::Eval, &kb);
    let b =
        glidr::kg::build_adjacency(&bg, kb.num_entities(), glidr::kg::build_extended(&kb)).unwrap();
    let cfg = config.inference();
    let all_true: HashSet<(usize, usize, usize)> = SplitKind::ALL
        .iter()
        .flat_map(|&k| kb.split(k))
        .map(|t| (t.head, t.relation, t.tail))
        .collect();
    let mut worst_margin = f64::INFINITY;
    for relation in 0..kb.num_relations() {
        let positives: Vec<Query> = kb
            .valid
            .iter()
            .chain(kb.test.iter())
            .filter(|t| t.relation == relation)
            .map(|t| Query {
                head: t.head,
                tail: t.tail,
                relation,
            })
            .collect();
        if positives.is_empty() {
            continue;
        }
        let mut rng = rng_for(0xC6, "negatives", &[relation as u64]);
        let mut negatives = Vec::new();
        while negatives.len() < 30 {
            let pair = (
                rng.gen_range(0..kb.num_entities()),
                rng.gen_range(0..kb.num_entities()),
            );
            if !all_true.contains(&(pair.0, relation, pair.1)) {
                negatives.push(Query {
                    head: pair.0,
                    tail: pair.1,
                    relation,
                });
            }
        }
        let ensemble = &ensembles[&relation];
        let score = |queries: &[Query]| -> Vec<f64> {
            let mut total = vec![0.0; queries.len()];
            for (bi, body) in ensemble.bodies.iter().enumerate() {
                let w = ensemble.body_weight(bi);
                let s = glidr::autodiff::forward_scores(queries, body, &b, &cfg).unwrap();
                for (t, v) in total.iter_mut().zip(s) {
                    *t += w * v;
                }
            }
            total
        };
        let pos = score(&positives);
        let neg = score(&negatives);
        let min_pos = pos.iter().copied().fold(f64::INFINITY, f64::min);
        let max_neg = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        worst_margin = worst_margin.min(min_pos - max_neg);
        if min_pos <= max_neg {
            pass_line(
                "6 (noiseless kinship)",
                false,
                &format!(
                    "relation `{}` not separated: min positive {min_pos:.4} <= max negative {max_neg:.4}",
                    kb.relation_names[relation]
                ),
            );
        }
    }
    pass_line(
        "6 (noiseless kinship)",
        true,
        &format!("all relations perfectly separated (worst margin {worst_margin:.4})"),
    );
}

// ---------------------------------------------------------------------------
// Criteria 7-11: published-benchmark reproductions (external datasets)
// ---------------------------------------------------------------------------

fn dataset_dir(name: &str, env: &str) -> PathBuf {
    if let Ok(dir) = std::env::var(env) {
        return PathBuf::from(dir);
    }
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join("data")
        .join(name)
}

fn require_dataset(criterion: &str, name: &str, env: &str) -> KnowledgeBase {
    let dir = dataset_dir(name, env);
    if !dir.join("facts.txt").exists() {
        panic!(
            "criterion {criterion} needs the {name} dataset in four-split format \
             (facts.txt/train.txt/valid.txt/test.txt, one head<TAB>relation<TAB>tail \
             per line). It is not redistributable with this repository; place it \
             under {} or point {env} at it.",
            dir.display()
        );
    }
    load_split_dir(&dir).unwrap()
}

fn soft_eval(
    kb: &KnowledgeBase,
    config: &TrainConfig,
) -> (HashMap<usize, SoftEnsemble>, MetricsReport) {
    let trained = train_dataset(kb, None, config).unwrap();
    let ensembles: HashMap<usize, SoftEnsemble> =
        trained.into_iter().map(|(r, (e, _))| (r, e)).collect();
    let eval_cfg = EvalConfig {
        inference: config.inference(),
        seed: derive_seed(config.seed, "eval", &[]),
        split: SplitKind::Test,
    };
    let (_, report) = evaluate(&EvalModel::Soft(ensembles.clone()), kb, &eval_cfg).unwrap();
    (ensembles, report)
}

fn umls_run() -> &'static (KnowledgeBase, HashMap<usize, SoftEnsemble>, MetricsReport) {
    static RUN: std::sync::OnceLock<(KnowledgeBase, HashMap<usize, SoftEnsemble>, MetricsReport)> =
        std::sync::OnceLock::new();
    RUN.get_or_init(|| {
        let kb = require_dataset("7/9", "umls", "GLIDR_UMLS_DIR");
        assert_eq!(
            (kb.num_entities(), kb.num_relations()),
            (135, 46),
            "the UMLS graph has 135 biomedical entities and 46 relations"
        );
        let config = TrainConfig::default();
        let (ensembles, report) = soft_eval(&kb, &config);
        (kb, ensembles, report)
    })
}

#[test]
#[ignore = "needs the UMLS split dataset (not bundled); expect hours"]
fn criterion_7_umls_soft_quality() {
    let (_, _, report) = umls_run();
    pass_line(
        "7 (UMLS soft)",
        report.hits1 >= 0.82 && report.mrr >= 0.75,
        &format!(
            "hits@1 {:.3} (need >= 0.82), mrr {:.3} (need >= 0.75), {} queries",
            report.hits1, report.mrr, report.count
        ),
    );
}

#[test]
#[ignore = "needs the Kinships split dataset (not bundled); expect hours"]
fn criterion_8_kinships_soft_quality() {
    let kb = require_dataset("8", "kinships", "GLIDR_KINSHIPS_DIR");
    assert_eq!(
        (kb.num_entities(), kb.num_relations()),
        (104, 25),
        "the Kinships graph has 104 people and 25 kinship terms"
    );
    let (_, report) = soft_eval(&kb, &TrainConfig::default());
    pass_line(
        "8 (Kinships soft)",
        report.hits1 >= 0.68 && report.hits10 >= 0.89,
        &format!(
            "hits@1 {:.3} (need >= 0.68), hits@10 {:.3} (need >= 0.89), {} queries",
            report.hits1, report.hits10, report.count
        ),
    );
}

#[test]
#[ignore = "needs the UMLS split dataset (not bundled); expect hours"]
fn criterion_9_umls_hard_retention() {
    let (kb, ensembles, _) = umls_run();
    let mut hard: HashMap<usize, HardEnsemble> = HashMap::new();
    for (rel, ensemble) in ensembles {
        let rules = ensemble
            .bodies
            .iter()
            .map(|b| extract_top_p(&slot_distributions(b), 0.25).unwrap())
            .collect();
        let mut he = HardEnsemble::new(*rel, rules);
        if let Some(s) = &ensemble.body_scores {
            he = he.with_scores(s.clone());
        }
        hard.insert(*rel, he);
    }
    let eval_cfg = EvalConfig {
        inference: Default::default(),
        seed: derive_seed(0, "eval-hard", &[]),
        split: SplitKind::Test,
    };
    let (_, report) = evaluate(&EvalModel::Hard(hard), kb, &eval_cfg).unwrap();
    pass_line(
        "9 (UMLS hard retention)",
        report.hits1 >= 0.63,
        &format!("hits@1 {:.3} (need >= 0.63)", report.hits1),
    );
}

/// Noise-robustness grid shared by criterion 10 and its synthetic twin:
/// trains and evaluates at each mislabeling level with a matched budget.
fn noise_grid(kb: &KnowledgeBase, config: &TrainConfig) -> Vec<(f64, f64)> {
    [0.0, 0.25, 0.5, 0.75, 1.0]
        .into_iter()
        .map(|p| {
            let noisy = apply_mislabeling(kb, p, derive_seed(config.seed, "noise", &[])).unwrap();
            let (_, report) = soft_eval(&noisy, config);
            println!("  mislabeling p = {p}: hits@1 {:.3}", report.hits1);
            (p, report.hits1)
        })
        .collect()
}

pub fn assert_noise_curve(criterion: &str, curve: &[(f64, f64)]) {
    let base = curve[0].1;
    let at_quarter = curve[1].1;
    let retention_ok = at_quarter >= 0.75 * base;
    let mut monotone_ok = true;
    for w in curve.windows(2) {
        if w[1].1 > w[0].1 + 0.03 {
            monotone_ok = false;
        }
    }
    pass_line(
        criterion,
        retention_ok && monotone_ok,
        &format!(
            "hits@1 at p=0.25 is {at_quarter:.3} vs {base:.3} at p=0 (need >= 0.75x); \
             non-increasing within 0.03 per step: {monotone_ok}"
        ),
    );
}

#[test]
#[ignore = "needs the Kinships split dataset (not bundled); expect hours"]
fn criterion_10_kinships_noise_robustness() {
    let kb = require_dataset("10", "kinships", "GLIDR_KINSHIPS_DIR");
    // matched training budget across the whole grid
    let config = TrainConfig {
        steps: 512,
        ..TrainConfig::default()
    };
    let curve = noise_grid(&kb, &config);
    assert_noise_curve("10 (Kinships noise robustness)", &curve);
}

pub fn schema_sweep(kb: &KnowledgeBase, config: &TrainConfig) -> Vec<(usize, f64)> {
    [2usize, 4, 6]
        .into_iter()
        .map(|n| {
            let cfg = TrainConfig {
                n_vars: n,
                ..*config
            };
            let (_, report) = soft_eval(kb, &cfg);
            println!("  N = {n}: hits@1 {:.3}", report.hits1);
            (n, report.hits1)
        })
        .collect()
}

pub fn assert_schema_plateau(criterion: &str, sweep: &[(usize, f64)]) {
    let h2 = sweep[0].1;
    let h4 = sweep[1].1;
    let h6 = sweep[2].1;
    pass_line(
        criterion,
        h4 >= h2 - 0.02 && (h6 - h4).abs() <= 0.05,
        &format!(
            "hits@1: N=2 {h2:.3}, N=4 {h4:.3} (need >= N=2 - 0.02), N=6 {h6:.3} \
             (need within 0.05 of N=4)"
        ),
    );
}

#[test]
#[ignore = "needs the Kinships split dataset (not bundled); expect hours"]
fn criterion_11_kinships_schema_plateau() {
    let kb = require_dataset("11", "kinships", "GLIDR_KINSHIPS_DIR");
    let config = TrainConfig {
        steps: 512,
        ..TrainConfig::default()
    };
    let sweep = schema_sweep(&kb, &config);
    assert_schema_plateau("11 (Kinships schema plateau)", &sweep);
}

// ---------------------------------------------------------------------------
// Declared non-reproducible at desk scale: smoke runs only
// ---------------------------------------------------------------------------

#[test]
#[ignore = "slow suite: needs the Family split dataset (not bundled); single-seed smoke"]
fn family_soft_smoke() {
    let kb = require_dataset("family smoke", "family", "GLIDR_FAMILY_DIR");
    let (_, report) = soft_eval(&kb, &TrainConfig::default());
    pass_line(
        "family smoke (declared slow-suite)",
        report.hits1 >= 0.85,
        &format!("hits@1 {:.3} (need >= 0.85)", report.hits1),
    );
}

#[test]
#[ignore = "slow suite: needs the Kinships split dataset (not bundled)"]
fn agngiya_rule_f1() {
    // transductive single-relation check: every split is background, the
    // relation is refit with a six-variable schema, and the extracted rule
    // is scored as a classifier over all entity pairs
    let kb = require_dataset("agngiya", "kinships", "GLIDR_KINSHIPS_DIR");
    let Some(relation) = kb
        .relation_id("term12")
        .or_else(|| kb.relation_id("agngiya"))
    else {
        panic!("no agngiya relation (term12) in this kinships encoding");
    };
    let mut transductive = kb.clone();
    let everything: Vec<_> = SplitKind::ALL
        .iter()
        .flat_map(|&k| kb.split(k))
        .copied()
        .collect();
    transductive.facts = everything.clone();
    transductive.train = everything
        .iter()
        .filter(|t| t.relation == relation)
        .copied()
        .collect();
    let config = TrainConfig {
        n_vars: 6,
        ..TrainConfig::default()
    };
    let trained = train_dataset(&transductive, Some(&[relation]), &config).unwrap();
    let (ensemble, _) = &trained[&relation];
    let best = ensemble
        .body_scores
        .as_ref()
        .map(|s| {
            s.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        })
        .unwrap_or(0);
    let rule = extract_top_p(&slot_distributions(&ensemble.bodies[best]), 0.25).unwrap();
    let ext = glidr::kg::build_extended(&transductive);
    let b = glidr::kg::build_adjacency(&everything, kb.num_entities(), ext).unwrap();
    let truth: HashSet<(usize, usize)> = everything
        .iter()
        .filter(|t| t.relation == relation)
        .map(|t| (t.head, t.tail))
        .collect();
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for h in 0..kb.num_entities() {
        for t in 0..kb.num_entities() {
            let predicted = glidr::infer::run_hard(
                &rule,
                Query {
                    head: h,
                    tail: t,
                    relation,
                },
                &b,
                None,
            )
            .unwrap()
            .entailed_by_propagation();
            match (predicted, truth.contains(&(h, t))) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let f1 = 2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fn_ as f64);
    pass_line(
        "agngiya F1 (declared slow-suite)",
        f1 >= 0.70,
        &format!("F1 {f1:.3} (need >= 0.70; tp {tp}, fp {fp}, fn {fn_})"),
    );
}
