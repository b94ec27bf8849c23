use std::io::Write;

use nobacktrack::data::{self, gen_anbn_bytes, load_text, parse_anbn_blocks};

/// Upper 0.1% point of the chi-squared distribution with 31 degrees of freedom.
const CHI2_31_P001: f64 = 61.098;

#[test]
fn block_lengths_are_uniform() {
    let bytes = gen_anbn_bytes(1, 32, 3_600_000, 42).unwrap();
    let blocks = parse_anbn_blocks(&bytes).unwrap();
    let blocks = &blocks[..100_000];
    let mut counts = [0u32; 32];
    for &n in blocks {
        assert!((1..=32).contains(&n));
        counts[n - 1] += 1;
    }
    let expected = blocks.len() as f64 / 32.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < CHI2_31_P001, "chi2 = {chi2}");

    let mean_len = blocks.iter().map(|&n| (2 * n + 2) as f64).sum::<f64>() / blocks.len() as f64;
    assert!((mean_len / 35.0 - 1.0).abs() < 0.01, "mean block length {mean_len}");
}

#[test]
fn generator_is_deterministic_per_seed() {
    let a = gen_anbn_bytes(2, 9, 5000, 3).unwrap();
    assert_eq!(a, gen_anbn_bytes(2, 9, 5000, 3).unwrap());
    assert_ne!(a, gen_anbn_bytes(2, 9, 5000, 4).unwrap());
    assert!(a.len() >= 5000);
    assert!(parse_anbn_blocks(&a).unwrap().iter().all(|n| (2..=9).contains(n)));
}

#[test]
fn trivial_range_repeats_one_block() {
    let s = data::gen_anbn(1, 1, 8, 17).unwrap();
    assert_eq!(s.bytes(), b"a\nb\na\nb\n");
    assert_eq!(data::entropy_rate_anbn(1, 1).unwrap(), 0.0);
}

#[test]
fn invalid_range_is_rejected() {
    assert!(gen_anbn_bytes(0, 3, 10, 0).is_err());
    assert!(gen_anbn_bytes(5, 3, 10, 0).is_err());
}

fn temp_file(contents: &[u8]) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(contents).unwrap();
    f
}

#[test]
fn loaded_alphabet_is_sorted_and_stable() {
    let f = temp_file(b"ab\n");
    let s = load_text(f.path(), false).unwrap();
    assert_eq!(s.alphabet().bytes(), b"\nab");
    assert_eq!(s.len(), 3);
    assert_eq!(s.alphabet(), load_text(f.path(), false).unwrap().alphabet());
}

#[test]
fn cycling_stream_wraps() {
    let f = temp_file(b"xyz");
    let s = load_text(f.path(), true).unwrap();
    assert_eq!(s.byte_at(7), s.byte_at(1));
    let symbols: Vec<usize> = load_text(f.path(), true).unwrap().take(7).collect();
    assert_eq!(symbols, [0, 1, 2, 0, 1, 2, 0]);

    let once: Vec<usize> = load_text(f.path(), false).unwrap().collect();
    assert_eq!(once, [0, 1, 2]);
}

#[test]
fn missing_or_empty_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_text(dir.path().join("absent.txt"), false).is_err());
    let f = temp_file(b"");
    assert!(load_text(f.path(), true).is_err());
}
