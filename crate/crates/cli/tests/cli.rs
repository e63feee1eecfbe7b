use std::path::Path;
use std::process::{Command, Output};

use proptest::prelude::*;
use stackstream_cli::{build, parse};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stackstream"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .env("STACKSTREAM_TMPDIR", dir.join("scratch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen_volume(dir: &Path) {
    let o = run(dir, &["gen", "vol", "--dims", "64", "--pattern", "random", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

fn write_spec(dir: &Path, name: &str, body: &str) -> String {
    std::fs::write(dir.join(name), body).unwrap();
    name.to_string()
}

const BLUR: &str = "source 1GiB
  >=> read vol
  >=> discreteGaussian 1.5
  >=> write out
|> sink
";

#[test]
fn blur_example_is_a_three_stage_chain() {
    let spec = parse(BLUR).unwrap();
    let (g, budget) = build(&spec, 0).unwrap();
    assert_eq!(g.len(), 3);
    assert!(g.is_linear());
    assert_eq!(budget.cap(), 1 << 30);
}

#[test]
fn identity_plan_fits() {
    let dir = tempfile::tempdir().unwrap();
    gen_volume(dir.path());
    let f = write_spec(dir.path(), "id.ss", "source 1GiB\n  >=> read vol\n  >=> write out\n|> sink\n");
    let o = run(dir.path(), &["plan", &f]);
    assert_eq!(o.status.code(), Some(0));
    assert!(text(&o).contains("verdict: fits"));
}

#[test]
fn budget_below_two_stage_minimum_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    gen_volume(dir.path());
    let f = write_spec(dir.path(), "tiny.ss", "source 4KiB\n  >=> read vol\n  >=> write out\n|> sink\n");
    let o = run(dir.path(), &["plan", &f]);
    assert_eq!(o.status.code(), Some(2));
    let out = text(&o);
    assert!(out.contains("verdict: infeasible at write"), "{out}");
}

#[test]
fn tight_chain_plans_a_midwrite_and_runs() {
    let dir = tempfile::tempdir().unwrap();
    gen_volume(dir.path());
    let f = write_spec(
        dir.path(),
        "chain.ss",
        "source 28KiB epsilon=0
  >=> read vol
  >=> square
  >=> square
  >=> square
  >=> square
  >=> write out
|> sink
",
    );
    let o = run(dir.path(), &["plan", &f]);
    assert_eq!(o.status.code(), Some(0));
    assert!(text(&o).contains("midwrite after square2"), "{}", text(&o));

    let o = run(dir.path(), &["run", &f]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = text(&o);
    assert!(out.contains("segments: 2"));
    assert!(out.contains("live_slices: 0"));
    let scratch = dir.path().join("scratch");
    let left = std::fs::read_dir(&scratch).map(|d| d.count()).unwrap_or(0);
    assert_eq!(left, 0, "midwrite scratch is removed");
}

#[test]
fn run_reports_one_pull_per_slice() {
    let dir = tempfile::tempdir().unwrap();
    gen_volume(dir.path());
    let f = write_spec(dir.path(), "blur.ss", BLUR);
    for threads in ["1", "4"] {
        let o = run(dir.path(), &["run", &f, "--threads", threads]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let out = text(&o);
        assert!(out.contains("source_pulls: 64"), "{out}");
        assert!(out.contains("live_slices: 0"));
        assert!(out.contains("peak_within_estimate: true"));
    }
}

#[test]
fn branches_run_and_explain_with_io() {
    let dir = tempfile::tempdir().unwrap();
    gen_volume(dir.path());
    let f = write_spec(
        dir.path(),
        "br.ss",
        "source 1GiB
  >=> read vol
  >=>>
    >=> gaussian 1 pad=3
  ---
    >=> median r=1 pad=1
  >>=> add
  >=> write out
|> sink
",
    );
    let o = run(dir.path(), &["run", &f, "--threads", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(text(&o).contains("live_slices: 0"));

    let o = run(dir.path(), &["explain", &f, "--io"]);
    assert_eq!(o.status.code(), Some(0));
    let out = text(&o);
    assert!(out.contains(">>=> add"));
    assert!(out.contains("stage median:"));
    assert!(out.contains("amplification"));
}

#[test]
fn syntax_errors_exit_one_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_spec(dir.path(), "bad.ss", "source 1GiB\n  >=> read vol\n  >=> gaussian sigma=1 colour=red\n|> sink\n");
    let o = run(dir.path(), &["plan", &f]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("3:"));
}

#[test]
fn unwritable_output_exits_three_and_frees_slices() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("blocker"), b"file").unwrap();
    let f = write_spec(
        dir.path(),
        "gen.ss",
        "source 1MiB epsilon=0\n  >=> generate 8 pattern=ramp\n  >=> write blocker/out\n|> sink\n",
    );
    let o = run(dir.path(), &["run", &f]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn missing_spec_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["plan", "nope.ss"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gen_writes_chunk_stores() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["gen", "store", "--dims", "20x12x9", "--chunk", "8", "--dtype", "u16"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let f = write_spec(
        dir.path(),
        "ck.ss",
        "source 64MiB\n  >=> readInChunks store\n  >=> convolve box=3\n  >=> write out\n|> sink\n",
    );
    let o = run(dir.path(), &["plan", &f, "--io"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(text(&o).contains("chunk [8, 8, 8]"), "{}", text(&o));
    let o = run(dir.path(), &["run", &f]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(text(&o).contains("source_pulls: 9"));
}

fn stage_line() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("square".to_string()),
        Just("invert".to_string()),
        (0.5f64..3.0).prop_map(|s| format!("gaussian sigma={s:.2}")),
        (1usize..4).prop_map(|r| format!("median r={r} shape=ball")),
        (1usize..5).prop_map(|w| format!("threshold 10 w={w}")),
        Just("scale f=2 name=\"twice over\"".to_string()),
        Just("convert f32".to_string()),
    ]
}

fn spec_text() -> impl Strategy<Value = String> {
    (
        prop::collection::vec(stage_line(), 0..4),
        prop::option::of((prop::collection::vec(stage_line(), 1..3), prop::collection::vec(stage_line(), 1..3))),
    )
        .prop_map(|(stages, branch)| {
            let mut s = String::from("source 2GiB epsilon=1KiB\n  >=> read \"in dir\"\n");
            for l in &stages {
                s.push_str(&format!("  >=> {l}\n"));
            }
            match branch {
                Some((a, b)) => {
                    s.push_str("  >=>>\n");
                    for l in &a {
                        s.push_str(&format!("    >=> {l}\n"));
                    }
                    s.push_str("  ---\n");
                    for l in &b {
                        s.push_str(&format!("    >=> {l}\n"));
                    }
                    s.push_str("  >>=> max\n  >=> write out\n|> sink\n");
                }
                None => s.push_str("  >=> write out\n|> sink\n"),
            }
            s
        })
}

proptest! {
    #[test]
    fn parse_print_parse_is_a_fixpoint(src in spec_text()) {
        let a = parse(&src).unwrap();
        let printed = a.pretty();
        let b = parse(&printed).unwrap();
        prop_assert_eq!(&a.pretty(), &b.pretty());
        prop_assert_eq!(printed, b.pretty());
    }
}
