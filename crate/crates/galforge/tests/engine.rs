mod common;

use common::{small_config, small_generator, small_world};
use galforge::config::Config;
use galforge::engine::{audit_pseudo_labels, cycle_epsilon, replay_training_set, reuse_dataset, run_experiment};
use galforge::snapshot::SnapshotRow;

fn run(cfg: &Config) -> (Vec<galforge::results::ResultRow>, Vec<(u64, Vec<SnapshotRow>)>) {
    let exp = cfg.experiment().unwrap();
    run_experiment(&exp, small_world(), Some(small_generator()), "test").into_result().unwrap()
}

fn with(pairs: &[(&str, &str)]) -> Config {
    let mut c = small_config();
    for (k, v) in pairs {
        c.set(k, v).unwrap();
    }
    c
}

#[test]
fn al_rows_and_budgets() {
    let (rows, snaps) = run(&with(&[("run.mode", "al")]));
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r.annotation_budget, 20 * r.cycle);
        assert_eq!(r.method, "al:margin");
        assert!(r.mean_sigma_generated.is_none());
        assert!((0.0..=1.0).contains(&r.test_accuracy));
    }
    for (_, s) in &snaps {
        assert_eq!(s.len(), 60);
        assert!(s.iter().all(|r| r.provenance == "pool"));
    }
}

#[test]
fn joint_with_no_generation_equals_al() {
    let (al, _) = run(&with(&[("run.mode", "al")]));
    let (joint, _) = run(&with(&[("run.mode", "joint"), ("gal.b_gal", "fixed:0")]));
    assert_eq!(al.len(), joint.len());
    for (a, j) in al.iter().zip(&joint) {
        assert!(a.same_outcome(j), "{a:?} vs {j:?}");
    }
}

#[test]
fn joint_generates_equal_l_and_logs_diagnostics() {
    let (rows, snaps) = run(&with(&[("run.mode", "joint")]));
    for r in &rows {
        assert!(r.mean_sigma_generated.is_some());
        let p = r.pseudo_label_accuracy.unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
    for (_, s) in &snaps {
        let gen: Vec<_> = s.iter().filter(|r| r.provenance == "generated").collect();
        assert_eq!(gen.len(), 20 + 40 + 60);
        for c in 1..=3 {
            let n = gen.iter().filter(|r| r.cycle == c).count();
            assert_eq!(n, 20 * c);
            // round-robin keeps classes within one of each other
            let mut per = [0usize; 10];
            gen.iter().filter(|r| r.cycle == c).for_each(|r| per[r.label] += 1);
            assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
    }
}

#[test]
fn replace_retention_trains_on_latest_cycle_only() {
    let cfg = with(&[("run.mode", "gal"), ("gal.g_retention", "replace"), ("gal.b_gal", "fixed:15")]);
    let (_, snaps) = run(&cfg);
    let exp = cfg.experiment().unwrap();
    for (_, s) in &snaps {
        // the snapshot archives dropped cycles so they can be replayed
        assert_eq!(s.len(), 45);
        for c in 1..=3 {
            assert_eq!(s.iter().filter(|r| r.cycle == c).count(), 15);
            assert_eq!(replay_training_set(s, &exp, c, 2).unwrap().len(), 15);
        }
    }
}

#[test]
fn gal_mode_uses_no_annotations() {
    let (rows, _) = run(&with(&[("run.mode", "gal")]));
    assert!(rows.iter().all(|r| r.annotation_budget == 0));
}

#[test]
fn generation_multiplier_subsamples_to_budget() {
    let (_, a) = run(&with(&[("run.mode", "gal"), ("gal.b_gal", "fixed:10"), ("gal.gen_multiplier", "3")]));
    for (_, s) in &a {
        assert_eq!(s.len(), 30);
    }
}

#[test]
fn basic_mode_pins_epsilon_and_template() {
    let cfg = with(&[("run.mode", "joint_basic"), ("gal.template", "2")]).experiment().unwrap();
    assert_eq!(cfg.effective_template(), 0);
    for c in 1..=3 {
        assert_eq!(cycle_epsilon(&cfg, c).unwrap(), 0.0);
    }
    let fixed = with(&[("opt.epsilon_fixed", "0.3")]).experiment().unwrap();
    assert_eq!(cycle_epsilon(&fixed, 1).unwrap(), 0.3);
}

#[test]
fn full_mode_emits_one_row_per_seed() {
    let (rows, _) = run(&with(&[("run.mode", "full")]));
    assert_eq!(rows.len(), 2);
    let w = small_world();
    assert!(rows.iter().all(|r| r.annotation_budget == w.pool.len() + w.pretrain.len()));
}

#[test]
fn exhausting_the_pool_aborts_with_partial_rows() {
    let cfg = with(&[("run.mode", "al"), ("al.b_al", "120")]).experiment().unwrap();
    let out = run_experiment(&cfg, small_world(), None, "t");
    assert!(out.error.is_some());
    // 300 points allow two cycles of 120 per seed
    assert_eq!(out.rows.len(), 4);
}

#[test]
fn generating_modes_need_a_generator() {
    let cfg = with(&[("run.mode", "joint")]).experiment().unwrap();
    assert!(run_experiment(&cfg, small_world(), None, "t").error.is_some());
}

#[test]
fn runs_are_deterministic() {
    let cfg = with(&[("run.mode", "joint")]);
    assert_eq!(run(&cfg), run(&cfg));
}

#[test]
fn reuse_with_original_arch_reproduces_run() {
    let gen = small_generator();
    for (mode, reset) in [("joint", "false"), ("joint", "true"), ("al", "true"), ("gal", "false")] {
        let cfg = with(&[("run.mode", mode), ("gal.g_retention", "replace"), ("al.reset_labeled", reset)]);
        let (rows, snaps) = run(&cfg);
        let exp = cfg.experiment().unwrap();
        let before = gen.calls();
        let reused = reuse_dataset(&snaps, &exp.arch, small_world(), &exp, None, "r").unwrap();
        assert_eq!(gen.calls(), before);
        assert_eq!(reused.len(), rows.len());
        for (a, b) in rows.iter().zip(&reused) {
            assert_eq!((a.seed, a.cycle, a.annotation_budget), (b.seed, b.cycle, b.annotation_budget));
            assert_eq!(a.test_accuracy.to_bits(), b.test_accuracy.to_bits(), "{mode}: {a:?} vs {b:?}");
            assert_eq!(b.method, format!("reuse:{}", exp.arch));
        }
    }
}

#[test]
fn replay_respects_reset_and_retention() {
    let row = |prov: &str, cycle| SnapshotRow {
        x: vec![0.0, 0.0],
        label: 0,
        provenance: prov.into(),
        cycle,
    };
    let rows = vec![row("pool", 1), row("pool", 2), row("generated", 1), row("generated", 2)];
    let base = with(&[("run.mode", "joint")]).experiment().unwrap();
    assert_eq!(replay_training_set(&rows, &base, 1, 2).unwrap().len(), 2);
    assert_eq!(replay_training_set(&rows, &base, 2, 2).unwrap().len(), 4);
    let reset = with(&[("run.mode", "joint"), ("al.reset_labeled", "true"), ("gal.g_retention", "replace")])
        .experiment()
        .unwrap();
    assert_eq!(replay_training_set(&rows, &reset, 2, 2).unwrap().len(), 2);
    let al = with(&[("run.mode", "al")]).experiment().unwrap();
    assert_eq!(replay_training_set(&rows, &al, 2, 2).unwrap().len(), 2);
}

#[test]
fn audit_cells_cover_grid() {
    let cells = audit_pseudo_labels(small_generator(), small_world(), &[0.0, 0.5], &[0, 2], 50, 3).unwrap();
    assert_eq!(cells.len(), 4);
    for c in &cells {
        assert_eq!(c.total, 50);
        assert_eq!(c.per_class.iter().map(|p| p.1).sum::<usize>(), 50);
        assert_eq!(c.per_class.iter().map(|p| p.0).sum::<usize>(), c.correct);
    }
    assert_eq!(cells, audit_pseudo_labels(small_generator(), small_world(), &[0.0, 0.5], &[0, 2], 50, 3).unwrap());
}
