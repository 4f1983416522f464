use sidae::gradcheck::{run_suite, standard_cases, DEFAULT_TOLERANCE, DEFAULT_TRIALS};

#[test]
fn every_op_and_loss_matches_finite_differences() {
    let report = run_suite(&standard_cases(), DEFAULT_TRIALS, DEFAULT_TOLERANCE, 7);
    for case in &report.cases {
        println!("{case}");
    }
    assert!(report.passed(), "{:?}", report.failures().map(|c| &c.name).collect::<Vec<_>>());
}
