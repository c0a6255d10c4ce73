use stablept::harness::{emit_csv, read_csv, run_ablation, run_length_sweep, sibling, ExperimentPlan, GroupField, Runner};
use stablept::model::{SoftInit, Variant};

fn tiny_plan() -> ExperimentPlan {
    let mut plan = ExperimentPlan::default();
    plan.seeds = vec![0, 1];
    plan.train.epochs = 2;
    plan.strategies = vec![SoftInit::Random, SoftInit::Label];
    plan
}

#[test]
fn soft_stability_table_and_csv_round_trip() {
    let plan = tiny_plan();
    let mut runner = Runner::new(&plan).unwrap();
    let table = runner.stability_soft(&plan).unwrap();
    assert_eq!(table.rows.len(), 2 * 2 * 2);
    assert!(table.std_across(Variant::Full, GroupField::Strategy).is_some());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("soft.csv");
    emit_csv(&table, &path).unwrap();
    assert!(sibling(&path, "aggregate", "csv").exists());
    assert!(sibling(&path, "manifest", "json").exists());
    let back = read_csv(&path).unwrap();
    assert_eq!(back.rows.len(), table.rows.len());
    for (a, b) in back.rows.iter().zip(&table.rows) {
        assert_eq!(a.cell(), b.cell());
        assert_eq!(a.test_accuracy, b.test_accuracy);
        assert_eq!(a.test_correct, b.test_correct);
    }

    // Every cell is memoized: a second pass only reads cached rows.
    let again = runner.stability_soft(&plan).unwrap();
    assert_eq!(again.rows, table.rows);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let mut plan = tiny_plan();
    plan.variants = Variant::ALL.to_vec();
    plan.seeds = vec![3];
    let one = run_ablation(&plan).unwrap();
    plan.workers = 3;
    let three = run_ablation(&plan).unwrap();
    let acc = |t: &stablept::harness::ResultsTable| t.rows.iter().map(|r| (r.cell(), r.test_correct)).collect::<Vec<_>>();
    assert_eq!(acc(&one), acc(&three));
}

#[test]
fn protocol_preconditions() {
    let mut plan = tiny_plan();
    plan.template_ids = vec![0, 1];
    assert!(Runner::new(&plan).unwrap().stability_hard(&plan).is_err());
    plan.variants = vec![Variant::Full];
    assert!(Runner::new(&plan).unwrap().stability_soft(&plan).is_err());
    assert!(run_ablation(&plan).is_err());
    plan.prompt_lengths = vec![0];
    assert!(run_length_sweep(&plan).is_err());
}

#[test]
fn length_sweep_covers_long_prompts() {
    let mut plan = tiny_plan();
    plan.seeds = vec![0];
    plan.prompt_lengths = vec![1, 50];
    let t = run_length_sweep(&plan).unwrap();
    assert_eq!(t.rows.iter().map(|r| r.prompt_len).collect::<Vec<_>>(), vec![1, 50]);
}
