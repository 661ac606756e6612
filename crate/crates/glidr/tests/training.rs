//! End-to-end training behavior on synthetic data.

use glidr::kg::{background_for, build_adjacency, build_extended, Stage};
use glidr::rule::{extract_argmax, slot_distributions};
use glidr::synth::{planted_chain_dataset, recovers_planted_rule};
use glidr::train::{train_relation, validation_weights, TrainConfig};

fn planted_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn planted_rule_recovered_by_best_body() {
    let kb = planted_chain_dataset(0);
    let relation = kb.relation_id("h").unwrap();
    let config = planted_config(1);
    let (ensemble, trace) = train_relation(&kb, relation, &config).unwrap();

    assert!(trace.iter().all(|r| r.mean_loss.is_finite()));
    // Scores live in [0, 1], so each ordered pair's loss is floored at
    // softplus(-1); convergence is measured as excess above that floor.
    // The expected pair count of a Bernoulli-balanced batch of 64 is
    // (64/2)^2 = 1024.
    let floor_per_pair = (1.0 + (-1.0f64).exp()).ln();
    let pairs = (config.batch_size as f64 / 2.0).powi(2);
    let first = trace.first().unwrap().mean_loss - pairs * floor_per_pair;
    let tail = &trace[trace.len() - trace.len() / 10..];
    let late: f64 =
        tail.iter().map(|r| r.mean_loss).sum::<f64>() / tail.len() as f64 - pairs * floor_per_pair;
    assert!(
        late * 10.0 <= first,
        "excess loss above the pair floor should fall tenfold: first {first:.1}, late {late:.1}"
    );

    let weights = validation_weights(&ensemble, &kb, relation, &config).unwrap();
    assert!((weights.iter().cloned().fold(f64::MIN, f64::max) - 1.0).abs() < 1e-12);
    assert!(weights.iter().all(|&w| w > 0.0 && w <= 1.0));
    let best = weights
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let hard = extract_argmax(&slot_distributions(&ensemble.bodies[best]));
    assert!(
        recovers_planted_rule(&hard, &kb).unwrap(),
        "best body failed to recover the planted rule"
    );
}

#[test]
fn training_is_reproducible_bitwise() {
    let kb = planted_chain_dataset(3);
    let relation = kb.relation_id("h").unwrap();
    let config = TrainConfig {
        steps: 40,
        seed: 9,
        ..TrainConfig::default()
    };
    let (a, trace_a) = train_relation(&kb, relation, &config).unwrap();
    let (b, trace_b) = train_relation(&kb, relation, &config).unwrap();
    for (x, y) in a.bodies.iter().zip(b.bodies.iter()) {
        assert_eq!(x.logits, y.logits);
    }
    for (ra, rb) in trace_a.iter().zip(trace_b.iter()) {
        assert_eq!(ra.mean_loss.to_bits(), rb.mean_loss.to_bits());
    }
}

#[test]
fn training_never_reads_heldout_positives() {
    // the train-stage background is the facts split only, so a train
    // positive can never be a background edge during its own training
    let kb = planted_chain_dataset(5);
    let bg = background_for(Stage::Train, &kb);
    let ext = build_extended(&kb);
    let b = build_adjacency(&bg, kb.num_entities(), ext).unwrap();
    let h = kb.relation_id("h").unwrap();
    for t in kb.train.iter().chain(kb.valid.iter()) {
        assert!(!b.has_edge(t.relation, t.head, t.tail));
    }
    let _ = h;
}

/// Timing probe for budgeting the long benchmark runs; run explicitly with
/// `cargo test -p glidr --test training -- --ignored probe --nocapture`.
#[test]
#[ignore]
fn probe_step_timing() {
    use std::time::Instant;
    let kb = glidr::synth::kinship_world_kb(8, 1);
    println!(
        "world: {} entities, {} facts, {} train",
        kb.num_entities(),
        kb.facts.len(),
        kb.train.len()
    );
    let relation = kb.relation_id("uncle").unwrap();
    let config = TrainConfig {
        steps: 24,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let (_, trace) = train_relation(&kb, relation, &config).unwrap();
    let dt = t0.elapsed();
    println!(
        "24 steps in {:.2?} ({:.1} ms/step); loss {:.4} -> {:.4}",
        dt,
        dt.as_secs_f64() * 1000.0 / 24.0,
        trace.first().unwrap().mean_loss,
        trace.last().unwrap().mean_loss
    );
}
