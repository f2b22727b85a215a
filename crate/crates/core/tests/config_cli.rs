use std::collections::BTreeMap;

use brwlab::cli::output::CSV_SCHEMA;
use brwlab::cli::run::config_for;
use brwlab::cli::{execute, ExperimentConfig, ExperimentKind, LawBlock};
use brwlab::simulate::PruneRule;
use brwlab::Error;
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![0.0f64..10.0, (0u32..40).prop_map(|k| k as f64 / 4.0)]
}

prop_compose! {
    fn any_config()(
        kind in prop::sample::select(ExperimentKind::ALL.to_vec()),
        n in prop::collection::vec(1usize..5000, 0..4),
        y in prop::collection::vec(finite(), 0..4),
        z in prop::collection::vec(finite(), 0..3),
        h in prop::option::of(finite()),
        reps in 1u64..1_000_000,
        seed in any::<u64>(),
        workers in prop::option::of(1usize..16),
        beam in prop::option::of(1u64..100_000),
        window in prop::option::of((1u32..200).prop_map(|k| k as f64 / 8.0)),
        opt in prop::collection::btree_map("[a-z_]{1,8}", "[a-z0-9.:]{1,8}", 0..3),
        tol in prop::collection::btree_map("[a-z_]{1,8}", finite(), 0..3),
    ) -> ExperimentConfig {
        let mut prune = PruneRule::none();
        if let Some(b) = beam { prune = prune.with_beam(b); }
        if let Some(w) = window { prune = prune.with_window(w); }
        let mut c = ExperimentConfig::new(kind).with_law(LawBlock::new("lattice3"));
        c.n = n;
        c.y = y;
        c.z = z;
        c.h = h;
        c.reps = reps;
        c.seed = seed;
        c.workers = workers;
        c.prune = prune;
        c.options = opt;
        c.tol = tol;
        c
    }
}

proptest! {
    #[test]
    fn config_text_round_trip(c in any_config()) {
        let back = ExperimentConfig::from_text(&c.to_text()).unwrap();
        prop_assert_eq!(back, c);
    }
}

#[test]
fn duplicate_and_unknown_keys_are_rejected() {
    let base = config_for(ExperimentKind::Tail, "lattice3").to_text();
    let dup = format!("{base}run.seed = 3\n");
    assert!(matches!(ExperimentConfig::from_text(&dup), Err(Error::Config { .. })));
    let unknown = format!("{base}run.speed = 3\n");
    assert!(ExperimentConfig::from_text(&unknown).is_err());
}

#[test]
fn missing_law_names_the_key() {
    let mut c = ExperimentConfig::new(ExperimentKind::Tail);
    c.n = vec![4];
    match c.validate() {
        Err(Error::Config { key, .. }) => assert_eq!(key, "law.kind"),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn tail_beyond_sqrt_n_is_rejected() {
    let mut c = config_for(ExperimentKind::Tail, "lattice3");
    c.n = vec![4];
    c.y = vec![3.0];
    assert!(c.validate().is_err());
}

fn tail_config(dir: &std::path::Path, workers: usize) -> ExperimentConfig {
    let mut c = config_for(ExperimentKind::Tail, "lattice3");
    c.n = vec![8, 16];
    c.y = vec![0.0, 1.0, 2.0];
    c.reps = 400;
    c.seed = 11;
    c.prune = PruneRule::window(12.0);
    c.workers = Some(workers);
    c.out = Some(dir.join("tail.csv"));
    c
}

#[test]
fn outputs_are_byte_identical_across_workers() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (_, wa) = execute(&tail_config(a.path(), 1)).unwrap();
    let (_, wb) = execute(&tail_config(b.path(), 3)).unwrap();
    let read = |p: &Option<std::path::PathBuf>| std::fs::read(p.as_ref().unwrap()).unwrap();
    assert_eq!(read(&wa.payload), read(&wb.payload));
    assert_eq!(read(&wa.manifest), read(&wb.manifest));
    assert!(wa.timing.unwrap().exists());
}

#[test]
fn csv_and_manifest_shape() {
    let d = tempfile::tempdir().unwrap();
    let (_, w) = execute(&tail_config(d.path(), 1)).unwrap();
    let csv = std::fs::read_to_string(w.payload.unwrap()).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_SCHEMA));
    assert!(lines.next().unwrap().contains(','));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(w.manifest.unwrap()).unwrap()).unwrap();
    for key in ["config_hash", "code_version", "bands", "cells", "certificates"] {
        assert!(m.get(key).is_some(), "manifest lacks `{key}`");
    }
    let cfg: BTreeMap<String, String> = serde_json::from_value(m["config"].clone()).unwrap();
    assert!(!cfg.contains_key("run.workers"));
}

#[test]
fn reals_print_with_17_significant_digits() {
    assert_eq!(brwlab::format::real(0.1), "0.10000000000000001");
    assert_eq!(brwlab::format::real(1.0), "1");
}
