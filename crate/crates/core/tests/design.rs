mod common;

use std::sync::OnceLock;

use common::*;
use lclogit::data::task_record;
use lclogit::design::{annuity_factor, block_design};
use lclogit::{
    evaluate_design, generate_design, levy_bounds, load_design, AttributeSchema, Design, DesignConfig,
    ReferendumTask, TaskEncoder, Transform,
};

fn default_design() -> &'static Design {
    static D: OnceLock<Design> = OnceLock::new();
    D.get_or_init(|| generate_design(&DesignConfig::default(), 42).unwrap())
}

fn from_tasks(schema: &AttributeSchema, tasks: &[ReferendumTask]) -> Design {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let mut w = csv::Writer::from_path(&path).unwrap();
    w.write_record(schema.task_header()).unwrap();
    for t in tasks {
        w.write_record(task_record(schema, t)).unwrap();
    }
    w.flush().unwrap();
    load_design(&path, schema).unwrap()
}

#[test]
fn default_design_shape_and_balance() {
    let d = default_design();
    assert_eq!(d.tasks.len(), 48);
    assert_eq!(d.n_blocks(), 8);
    for b in 1..=8 {
        assert_eq!(d.block(b).len(), 6);
    }
    let counts: Vec<(&str, &Vec<usize>)> =
        d.diagnostics.level_counts.iter().map(|(n, c)| (n.as_str(), c)).collect();
    assert_eq!(counts[0], ("category", &vec![16; 3]));
    for (_, c) in &counts[1..4] {
        assert_eq!(*c, &vec![12; 4]);
    }
    assert_eq!(counts[4], ("levy", &vec![6; 8]));
    assert!(d.diagnostics.max_abs_correlation <= 0.05 || d.warning);
    // levy levels cannot all appear in a 6-task block
    assert!(d.diagnostics.block_imbalance > 0.0);
}

#[test]
fn coded_columns_of_the_default_design_sum_to_zero() {
    let d = default_design();
    let enc = TaskEncoder::new(&d.schema).unwrap();
    let rows: Vec<Vec<f64>> = d.tasks.iter().map(|t| enc.encode_task(t)).collect();
    for (j, col) in enc.columns().iter().enumerate() {
        if matches!(col.kind, lclogit::data::ColumnKind::Degree(_)) {
            let s: f64 = rows.iter().map(|r| r[j]).sum();
            assert!(s.abs() < 1e-9, "{} sums to {s}", col.attribute);
        }
    }
}

#[test]
fn same_seed_same_design() {
    let config = DesignConfig {
        iterations: 3000,
        ..DesignConfig::default()
    };
    let a = generate_design(&config, 7).unwrap();
    let b = generate_design(&config, 7).unwrap();
    assert_eq!(a, b);
    let c = generate_design(&config, 8).unwrap();
    assert_ne!(a.tasks, c.tasks);
}

#[test]
fn indivisible_task_counts_are_rejected() {
    let config = DesignConfig {
        tasks: 47,
        ..DesignConfig::default()
    };
    let e = generate_design(&config, 1).unwrap_err().to_string();
    assert!(e.contains("divisible"), "{e}");
}

#[test]
fn single_block_holds_the_whole_design() {
    let d = default_design();
    let b = block_design(d, 1, 3).unwrap();
    assert!(b.iter().all(|&x| x == 1));
    assert!(block_design(d, 5, 3).is_err());
}

#[test]
fn full_factorial_is_uncorrelated() {
    let schema = AttributeSchema {
        category: "site".into(),
        levy: "levy".into(),
        attributes: vec![
            categorical("site", &["a", "b"]),
            continuous("size", vec![1.0, 2.0, 3.0], Transform::Quadratic),
            continuous("levy", vec![1.0, 2.0, 3.0, 4.0], Transform::Linear),
        ],
    };
    let mut tasks = Vec::new();
    for c in 0..2 {
        for s in [1.0, 2.0, 3.0] {
            for l in [1.0, 2.0, 3.0, 4.0] {
                tasks.push(ReferendumTask {
                    task_id: tasks.len() as u32 + 1,
                    block_id: 1,
                    category: c,
                    values: vec![s, l],
                });
            }
        }
    }
    let d = from_tasks(&schema, &tasks);
    let diag = evaluate_design(&d);
    assert!(diag.max_abs_correlation < 1e-12, "{}", diag.max_abs_correlation);
    for (i, row) in diag.correlation.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                assert!(v.abs() < 1e-12);
            }
        }
    }
    assert!(diag.d_efficiency > 0.0);
}

#[test]
fn repeated_task_has_zero_d_efficiency() {
    let schema = AttributeSchema::table1();
    let tasks: Vec<ReferendumTask> = (0..48)
        .map(|k| ReferendumTask {
            task_id: k + 1,
            block_id: 1,
            category: 0,
            values: vec![10.0, 5.0, 1.0, 100_000.0],
        })
        .collect();
    assert_eq!(evaluate_design(&from_tasks(&schema, &tasks)).d_efficiency, 0.0);
}

#[test]
fn search_beats_its_balanced_random_start() {
    for seed in 0..4 {
        let start = DesignConfig {
            iterations: 0,
            restarts: 1,
            ..DesignConfig::default()
        };
        let searched = DesignConfig {
            restarts: 1,
            ..DesignConfig::default()
        };
        let a = generate_design(&start, seed).unwrap();
        let b = generate_design(&searched, seed).unwrap();
        assert!(b.diagnostics.max_abs_correlation <= a.diagnostics.max_abs_correlation);
        assert!(
            b.diagnostics.d_efficiency >= a.diagnostics.d_efficiency,
            "{} < {}",
            b.diagnostics.d_efficiency,
            a.diagnostics.d_efficiency
        );
    }
}

#[test]
fn levy_bounds_arithmetic() {
    let direct: f64 = (1..=50).map(|t| 1.03f64.powi(-t)).sum();
    assert!((annuity_factor(0.03, 50) - direct).abs() < 1e-12);
    assert!((annuity_factor(0.03, 50) - 25.7298).abs() < 1e-4);
    let b = levy_bounds(1e12, 400_000.0, 0.03, 50, 0.0).unwrap();
    assert_eq!(b.lower, b.upper);
    let half = levy_bounds(1e12, 800_000.0, 0.03, 50, 0.25).unwrap();
    let full = levy_bounds(1e12, 400_000.0, 0.03, 50, 0.25).unwrap();
    assert!((half.base * 2.0 - full.base).abs() < 1e-6 * full.base);
    assert!(full.lower < full.base && full.base < full.upper);
    assert!(levy_bounds(1e12, 0.0, 0.03, 50, 0.25).is_err());
}
