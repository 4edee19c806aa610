mod oracles;

use oracles::detector::{auc_worst_gap, smo_worst_gap};

#[test]
fn smo_matches_brute_force_qp_on_20_problems() {
    let (gap, violation) = smo_worst_gap(20, 99).expect("every solve converges inside the box");
    assert!(gap <= 1e-5, "objective gap {gap}");
    assert!(violation <= 1e-3, "KKT violation {violation}");
}

#[test]
fn trapezoidal_auc_equals_pairwise_statistic_on_100_sets() {
    let gap = auc_worst_gap(100, 5);
    assert!(gap <= 1e-9, "AUC gap {gap}");
}
