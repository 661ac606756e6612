//! Split-file round trips and loader error reporting.

use glidr::kg::{load_split_dir, save_split_dir, SplitKind};
use glidr::synth::hinton_kinship_kb;
use std::fs;

#[test]
fn split_files_round_trip_identically() {
    // one save/load pass canonicalizes a generator-built base to
    // first-appearance interning; from there the round trip is exact
    let built = hinton_kinship_kb(2);
    let dir0 = tempfile::tempdir().unwrap();
    save_split_dir(&built, dir0.path()).unwrap();
    let kb = load_split_dir(dir0.path()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    save_split_dir(&kb, dir.path()).unwrap();
    let reloaded = load_split_dir(dir.path()).unwrap();
    assert_eq!(reloaded.entity_names, kb.entity_names);
    assert_eq!(reloaded.relation_names, kb.relation_names);
    for kind in SplitKind::ALL {
        assert_eq!(reloaded.split(kind), kb.split(kind), "{kind} split");
    }
    // a second save is byte-identical
    let dir2 = tempfile::tempdir().unwrap();
    save_split_dir(&reloaded, dir2.path()).unwrap();
    for kind in SplitKind::ALL {
        let a = fs::read(dir.path().join(kind.file_name())).unwrap();
        let b = fs::read(dir2.path().join(kind.file_name())).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn loader_reports_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    for kind in SplitKind::ALL {
        fs::write(dir.path().join(kind.file_name()), "a\tr\tb\n").unwrap();
    }
    fs::write(dir.path().join("train.txt"), "a\tr\tb\nbroken line\n").unwrap();
    let err = load_split_dir(dir.path()).unwrap_err().to_string();
    assert!(err.contains("train.txt"), "{err}");
    assert!(err.contains(":2:"), "{err}");

    fs::write(dir.path().join("train.txt"), "a\tr\tb\n").unwrap();
    fs::remove_file(dir.path().join("valid.txt")).unwrap();
    let err = load_split_dir(dir.path()).unwrap_err().to_string();
    assert!(err.contains("valid.txt"), "{err}");
}

#[test]
fn loader_accepts_eval_only_symbols() {
    // entities and relations that appear only in valid/test are interned
    // with fresh indices and warned about, never rejected
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("facts.txt"), "a\tr\tb\n").unwrap();
    fs::write(dir.path().join("train.txt"), "b\tr\ta\n").unwrap();
    fs::write(dir.path().join("valid.txt"), "c\tr\ta\n").unwrap();
    fs::write(dir.path().join("test.txt"), "d\tq\tc\n").unwrap();
    let kb = load_split_dir(dir.path()).unwrap();
    assert_eq!(kb.num_entities(), 4);
    assert_eq!(kb.num_relations(), 2);
    assert_eq!(kb.entity_id("d"), Some(3));
    assert_eq!(kb.relation_id("q"), Some(1));
}

#[test]
fn loader_handles_missing_trailing_newline() {
    let dir = tempfile::tempdir().unwrap();
    for kind in SplitKind::ALL {
        fs::write(dir.path().join(kind.file_name()), "a\tr\tb").unwrap();
    }
    let kb = load_split_dir(dir.path()).unwrap();
    assert_eq!(kb.facts.len(), 1);
    assert_eq!(kb.test.len(), 1);
}
