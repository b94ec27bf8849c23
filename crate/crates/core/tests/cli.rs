use std::path::Path;
use std::process::{Command, Output};

use nobacktrack::data::parse_anbn_blocks;
use nobacktrack::harness::{self, Algorithm, RunConfig, TraceWriter};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nobacktrack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn gen_anbn_writes_whole_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tiny.txt");
    let o = cli(&["gen-anbn", "--k", "1", "--l", "1", "--chars", "8", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&out).unwrap(), b"a\nb\na\nb\n");

    let out = dir.path().join("big.txt");
    let o = cli(&["gen-anbn", "--k", "3", "--l", "7", "--chars", "20000", "--seed", "5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let blocks = parse_anbn_blocks(&std::fs::read(&out).unwrap()).unwrap();
    assert!(blocks.iter().all(|n| (3..=7).contains(n)));
}

#[test]
fn zero_budget_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.csv");
    let o = cli(&["train", "--algorithm", "nbt-euclid", "--max-chars", "0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let (header, rows) = read_csv(&out);
    assert_eq!(header, ["chars_read", "avg_loss_bits", "wall_seconds"]);
    assert!(rows.is_empty());
}

#[test]
fn same_seed_gives_same_trace() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = cli(&[
            "train", "--algorithm", "nbt-kalman", "--units", "6", "--max-chars", "3000",
            "--report-interval", "500", "--seed", "9", "--baseline", "gzip=2.1", "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        read_csv(&out)
    };
    let (h1, a) = run("a.csv");
    let (h2, b) = run("b.csv");
    assert_eq!(h1, ["chars_read", "avg_loss_bits", "wall_seconds", "gzip"]);
    assert_eq!(h1, h2);
    assert_eq!(a.len(), 6);
    for (ra, rb) in a.iter().zip(&b) {
        assert_eq!((&ra[0], &ra[1], &ra[3]), (&rb[0], &rb[1], &rb[3]));
        assert_eq!(ra[3], "2.1");
    }
}

#[test]
fn seed_sweep_writes_one_file_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = cli(&[
        "train", "--algorithm", "tbptt", "--units", "4", "--max-chars", "1000", "--seed", "1,2",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, a) = read_csv(&dir.path().join("sweep-seed1.csv"));
    let (_, b) = read_csv(&dir.path().join("sweep-seed2.csv"));
    assert_eq!(a.last().unwrap()[0], "1000");
    assert_ne!(a.last().unwrap()[1], b.last().unwrap()[1]);
}

#[test]
fn frozen_zero_readout_scores_uniform() {
    let mut c = RunConfig::new(Algorithm::Rtrl);
    c.units = 5;
    c.eta0 = Some(0.0);
    c.max_chars = Some(2500);
    c.report_interval = 1000;
    let mut buf = Vec::new();
    let mut w = TraceWriter::new(&mut buf, &c).unwrap();
    let outcome = harness::train(&c, Some(&mut w)).unwrap();
    drop(w);
    let rows = &outcome.trace.rows;
    assert_eq!(rows.iter().map(|r| r.chars_read).collect::<Vec<_>>(), [1000, 2000, 2500]);
    for r in rows {
        assert!((r.avg_loss_bits - 3f64.log2()).abs() < 1e-12);
    }
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn text_file_training() {
    let dir = tempfile::tempdir().unwrap();
    let text = dir.path().join("corpus.txt");
    std::fs::write(&text, "to be or not to be\n".repeat(20)).unwrap();
    let out = dir.path().join("trace.csv");
    let o = cli(&[
        "train", "--algorithm", "nbt-euclid", "--units", "8", "--text", text.to_str().unwrap(), "--cycle",
        "--max-chars", "4000", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = read_csv(&out);
    assert_eq!(rows.last().unwrap()[0], "4000");

    // without cycling the run stops at the end of the file
    let o = cli(&["train", "--algorithm", "rtrl", "--units", "3", "--text", text.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let (_, rows) = read_csv(&out);
    assert_eq!(rows.last().unwrap()[0], "380");
}

#[test]
fn exit_codes() {
    assert_eq!(cli(&["check"]).status.code(), Some(0));
    assert_eq!(cli(&["check", "--corrupt-jacobian"]).status.code(), Some(3));
    assert_eq!(cli(&["train", "--algorithm", "nbt-kalman", "--truncation", "5"]).status.code(), Some(2));
    assert_eq!(cli(&["train", "--algorithm", "rtrl", "--units", "0"]).status.code(), Some(2));
    assert_eq!(cli(&["train", "--algorithm", "tbptt", "--text", "/nonexistent/corpus"]).status.code(), Some(2));
    let diverging = cli(&["train", "--algorithm", "rtrl", "--units", "5", "--eta0", "1e9", "--max-chars", "2000"]);
    assert_eq!(diverging.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&diverging.stderr).contains("divergence"));
    assert!(String::from_utf8_lossy(&diverging.stdout).starts_with("chars_read,avg_loss_bits,wall_seconds"));
}
