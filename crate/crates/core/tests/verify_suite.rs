use tspg_core::verify::{run_suite, Fault, VerifyOptions};

#[test]
fn small_scale_suite_passes() {
    let report = run_suite(VerifyOptions::default()).unwrap();
    for c in &report.checks {
        println!("{:<48} {:<5} metric={:e} threshold={:e} {}", c.name, c.passed, c.metric, c.threshold, c.detail);
    }
    assert!(report.all_passed(), "failing: {:?}", report.failing());
    assert!(report.approx_table.is_none());
}

#[test]
fn corrupted_gradient_is_named_in_the_report() {
    let report = run_suite(VerifyOptions { fault: Some(Fault::CorruptGradient), ..Default::default() }).unwrap();
    assert_eq!(report.failing(), vec!["score_gradient_fd"]);
    let json = report.to_json();
    assert_eq!(json["all_passed"], false);
    assert_eq!(json["failing"][0], "score_gradient_fd");
}
