use fpcim::oracle::fuzz::run_differential;

#[test]
fn datapath_matches_naive_pipeline() {
    let s = run_differential(3000, 0x5eed);
    assert_eq!(s.mismatches, 0, "{}", s.first_mismatch.unwrap_or_default());
}
