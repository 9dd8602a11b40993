use morf::verify::{run_suite, Suite};

fn assert_suite(suite: Suite, cases: usize) {
    let report = run_suite(suite, 1, cases);
    println!("{suite}: {}/{} passed, worst {:.3e}", report.passed, report.cases, report.worst_error);
    assert!(report.ok(), "{:#?}", report.failures);
}

#[test]
fn gradcheck() {
    assert_suite(Suite::Gradcheck, 100);
}

#[test]
fn metagradcheck() {
    assert_suite(Suite::Metagradcheck, 20);
}

#[test]
fn forest_invariants() {
    assert_suite(Suite::ForestInvariants, 10_000);
}

#[test]
fn gfs_invariants() {
    assert_suite(Suite::GfsInvariants, 1_000);
}

#[test]
fn reduction() {
    assert_suite(Suite::Reduction, 3);
}
