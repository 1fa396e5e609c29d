use std::process::{Command, Output};

fn fpcim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpcim"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_csv_and_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "design = \"pre\"\nstages = [\"memory-cell\"]\nbits = [12]\nfractions = [0.0, 0.01]\nseeds = [0, 1]\nsamples = 40\n",
    )
    .unwrap();
    let out = dir.path().join("o.csv");
    let o = fpcim(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "9",
        "--design",
        "post",
        "--workers",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text
        .lines()
        .skip(1)
        .all(|l| l.starts_with("post/memory-cell/-/12/") && l.contains(",9,")));
}

#[test]
fn guard_violations_exit_nonzero() {
    let o = fpcim(&[
        "sweep",
        "--stages",
        "multiplier-output",
        "--bits",
        "26",
        "--fractions",
        "0.1",
        "--samples",
        "5",
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("26-bit"));
    let o = fpcim(&[
        "sweep",
        "--design",
        "nope",
        "--stages",
        "memory-cell",
        "--bits",
        "1",
        "--fractions",
        "0.1",
    ]);
    assert!(!o.status.success());
    let o = fpcim(&["run", "--config", "/nonexistent.toml", "--out", "x.csv"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent.toml"));
}

#[test]
fn sweep_prints_records() {
    let o = fpcim(&[
        "sweep",
        "--stages",
        "adder-output",
        "--levels",
        "1,5",
        "--bits",
        "20",
        "--fractions",
        "0,0.01",
        "--samples",
        "20",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 5);
    assert!(text.contains("pre/adder-output/5/20/0.01/0,"));
}

#[test]
fn compare_prints_a_table() {
    let o = fpcim(&[
        "compare",
        "--designs",
        "pre,pre",
        "--stage",
        "adder-output",
        "--level",
        "1",
        "--bit",
        "25",
        "--seeds",
        "0",
        "--samples",
        "30",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "design,baseline,faulted,drop,drop_ratio");
    assert!(lines[2].ends_with(",1"));
    let o = fpcim(&[
        "compare",
        "--designs",
        "pre,pre",
        "--stage",
        "memory-cell",
        "--bit",
        "3",
        "--fraction",
        "0.1",
        "--sites",
        "2",
    ]);
    assert!(!o.status.success());
}

#[test]
fn campaign_files_round_trip_through_trace() {
    let dir = tempfile::tempdir().unwrap();
    let camp = dir.path().join("c.txt");
    let o = fpcim(&[
        "campaign",
        "generate",
        "--design",
        "hardened",
        "--stage",
        "adder-output",
        "--level",
        "2",
        "--bit",
        "20",
        "--fraction",
        "0.01",
        "--seed",
        "4",
        "--out",
        camp.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&camp).unwrap();
    assert!(text.starts_with("# fpcim fault campaign\n# stage=adder-output level=2 bit=20"));
    let faults = text.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(faults, 10);

    let o = fpcim(&[
        "campaign",
        "inspect",
        camp.to_str().unwrap(),
        "--design",
        "hardened",
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("faults    10 of 1024 units"));

    let o = fpcim(&[
        "trace",
        "--design",
        "hardened",
        "--campaign",
        camp.to_str().unwrap(),
        "--seed",
        "2",
    ]);
    assert!(o.status.success());
    let trace = stdout(&o);
    assert_eq!(
        trace
            .lines()
            .filter(|l| l.starts_with("# fault adder-output"))
            .count(),
        10
    );
    assert!(trace.lines().any(|l| l.starts_with("output 31 16 0x")));
    assert_eq!(
        trace,
        stdout(&fpcim(&[
            "trace",
            "--design",
            "hardened",
            "--campaign",
            camp.to_str().unwrap(),
            "--seed",
            "2"
        ]))
    );

    let o = fpcim(&["trace", "--fault", "multiplier-output 0,0 26"]);
    assert!(!o.status.success());
}

#[test]
fn int8_trace() {
    let o = fpcim(&[
        "trace",
        "--design",
        "pre-int8",
        "--fault",
        "memory-cell 0,0 7",
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("# fault memory-cell 0,0 7 hits 1"));
}
