use quadflux::afem::{run_afem, AfemConfig};
use quadflux::benchmarks::Benchmark;
use quadflux::cli::summarize;
use quadflux::io::{
    read_convergence_csv, read_json, write_convergence_csv, write_json, ConvergenceRow, RunSummary,
};

fn lshape_run() -> quadflux::afem::AfemRun {
    let b = Benchmark::LShape;
    let config = AfemConfig {
        max_dofs: 300,
        energy_norm: Some(b.energy_norm().unwrap()),
        ..AfemConfig::default()
    };
    run_afem(&b.problem(), b.initial_mesh(), &config).unwrap()
}

#[test]
fn convergence_csv_round_trips() {
    let run = lshape_run();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("convergence.csv");
    write_convergence_csv(&path, &run.records).unwrap();
    let back = read_convergence_csv(&path).unwrap();
    let expected: Vec<ConvergenceRow> = run.records.iter().map(ConvergenceRow::from).collect();
    assert_eq!(back, expected);
    let header = std::fs::read_to_string(&path).unwrap();
    assert_eq!(
        header.lines().next().unwrap(),
        "iter,ndof,energy_error,eta_hat,eta_res,eff_hat,eff_res,n_marked,max_irregularity"
    );
}

#[test]
fn missing_exact_solution_leaves_empty_columns() {
    let b = Benchmark::Manufactured;
    let mut p = b.problem();
    p.exact = None;
    let config = AfemConfig {
        max_dofs: 100,
        ..AfemConfig::default()
    };
    let run = run_afem(&p, b.initial_mesh(), &config).unwrap();
    assert!(run
        .records
        .iter()
        .all(|r| r.energy_error.is_none() && r.eff_hat.is_none()));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    write_convergence_csv(&path, &run.records).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(!text.contains("NaN"));
    assert_eq!(
        read_convergence_csv(&path).unwrap().len(),
        run.records.len()
    );
}

#[test]
fn run_summary_json_round_trips() {
    let run = lshape_run();
    let config = AfemConfig {
        max_dofs: 300,
        ..AfemConfig::default()
    };
    let s = summarize(Benchmark::LShape, &config, &run.records, Ok(&run));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run_summary.json");
    write_json(&path, &s).unwrap();
    let back: RunSummary = read_json(&path).unwrap();
    assert_eq!(back, s);
    assert_eq!(back.iterations, run.records.len());
    assert_eq!(back.final_ndof, run.records.last().unwrap().ndof);
}
