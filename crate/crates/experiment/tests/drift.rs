use fpcim::CrossbarConfig;
use fpcim_experiment::drift::adder_level_errors;

#[test]
fn error_rises_after_global_alignment() {
    let cfg = CrossbarConfig::baseline();
    let ga = cfg.global_align_level().unwrap() as usize;
    let e = adder_level_errors(&cfg, 25, 40, 0).unwrap();
    assert_eq!(e.len(), 7);
    for level in ga + 1..=7 {
        assert!(e[level - 1] > e[ga - 1], "{e:?}");
    }
}

#[test]
fn error_is_level_invariant_before_global_alignment() {
    // A flip adds the same absolute 2^bit at every level ahead of the
    // shared group shift, so only rounding of the final word differs.
    let cfg = CrossbarConfig::baseline();
    let e = adder_level_errors(&cfg, 25, 40, 1).unwrap();
    for level in 2..=4 {
        assert!((e[level - 1] / e[0] - 1.0).abs() < 0.01, "{e:?}");
    }
}

#[test]
fn hardened_design_realigns_after_level_two() {
    let cfg = CrossbarConfig::hardened();
    let e = adder_level_errors(&cfg, 20, 40, 2).unwrap();
    assert_eq!(e.len(), 3);
    assert!(e[2] > e[1], "{e:?}");
}
