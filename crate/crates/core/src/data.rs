//! Symbol streams: the `a^n b^n` generator and byte-level text files.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Sorted set of byte symbols; a symbol's index is its rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    bytes: Vec<u8>,
    index: [Option<u8>; 256],
}

impl Alphabet {
    /// Distinct bytes of `data`, in byte order.
    pub fn from_bytes(data: &[u8]) -> Self {
        let mut present = [false; 256];
        for &b in data {
            present[b as usize] = true;
        }
        let bytes: Vec<u8> = (0..=255u8).filter(|&b| present[b as usize]).collect();
        let mut index = [None; 256];
        for (i, &b) in bytes.iter().enumerate() {
            index[b as usize] = Some(i as u8);
        }
        Self { bytes, index }
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn index_of(&self, byte: u8) -> Option<usize> {
        self.index[byte as usize].map(usize::from)
    }

    pub fn symbol(&self, index: usize) -> Option<u8> {
        self.bytes.get(index).copied()
    }

    pub fn one_hot(&self, byte: u8) -> Result<Vec<f64>> {
        let i = self.index_of(byte).ok_or(Error::UnknownSymbol {
            symbol: byte as usize,
            size: self.len(),
        })?;
        let mut x = vec![0.0; self.len()];
        x[i] = 1.0;
        Ok(x)
    }

    /// Inverse of [`Alphabet::one_hot`]; `None` unless `x` has exactly one entry equal to 1 and the rest 0.
    pub fn decode_one_hot(&self, x: &[f64]) -> Option<u8> {
        if x.len() != self.len() {
            return None;
        }
        let mut hot = None;
        for (i, &v) in x.iter().enumerate() {
            if v == 1.0 && hot.is_none() {
                hot = Some(i);
            } else if v != 0.0 {
                return None;
            }
        }
        hot.and_then(|i| self.symbol(i))
    }
}

/// Finite byte sequence read symbol by symbol, optionally wrapping around.
#[derive(Debug, Clone)]
pub struct CharStream {
    alphabet: Alphabet,
    symbols: Vec<u8>,
    data: Vec<u8>,
    position: usize,
    cycle: bool,
}

impl CharStream {
    pub fn from_bytes(data: Vec<u8>, cycle: bool) -> Self {
        let alphabet = Alphabet::from_bytes(&data);
        let symbols = data
            .iter()
            .map(|&b| alphabet.index_of(b).expect("byte present") as u8)
            .collect();
        Self {
            alphabet,
            symbols,
            data,
            position: 0,
            cycle,
        }
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    /// Length of the underlying sequence (one period when cycling).
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn cycles(&self) -> bool {
        self.cycle
    }

    /// Byte at absolute position `pos`, wrapping if cycling.
    pub fn byte_at(&self, pos: usize) -> Option<u8> {
        if self.cycle && !self.data.is_empty() {
            Some(self.data[pos % self.data.len()])
        } else {
            self.data.get(pos).copied()
        }
    }

    pub fn rewind(&mut self) {
        self.position = 0;
    }
}

impl Iterator for CharStream {
    /// Symbol index in the alphabet.
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.symbols.is_empty() {
            return None;
        }
        let at = if self.cycle {
            self.position % self.symbols.len()
        } else if self.position < self.symbols.len() {
            self.position
        } else {
            return None;
        };
        self.position += 1;
        Some(self.symbols[at] as usize)
    }
}

fn check_range(k: u32, l: u32) -> Result<()> {
    if k < 1 || k > l {
        return Err(Error::Config(format!("block length range [{k}, {l}] needs 1 <= k <= l")));
    }
    Ok(())
}

/// Endless `a^n \n b^n \n` byte source with `n` uniform in `[k, l]`.
#[derive(Debug, Clone)]
pub struct AnbnSource {
    k: u32,
    l: u32,
    rng: rand_chacha::ChaCha8Rng,
    n: usize,
    pos: usize,
}

impl AnbnSource {
    pub fn new(k: u32, l: u32, seed: u64) -> Result<Self> {
        check_range(k, l)?;
        Ok(Self {
            k,
            l,
            rng: rng::stream(seed, rng::STREAM_DATA),
            n: 0,
            pos: 0,
        })
    }

    /// True between blocks.
    pub fn at_block_boundary(&self) -> bool {
        self.pos == 2 * self.n + 2 || self.n == 0
    }
}

impl Iterator for AnbnSource {
    type Item = u8;

    fn next(&mut self) -> Option<u8> {
        if self.at_block_boundary() {
            self.n = self.rng.random_range(self.k..=self.l) as usize;
            self.pos = 0;
        }
        let (n, p) = (self.n, self.pos);
        self.pos += 1;
        Some(if p < n {
            b'a'
        } else if p == n || p == 2 * n + 1 {
            b'\n'
        } else {
            b'b'
        })
    }
}

/// Whole blocks from [`AnbnSource`], at least `n_chars` bytes in total.
pub fn gen_anbn_bytes(k: u32, l: u32, n_chars: usize, seed: u64) -> Result<Vec<u8>> {
    let mut src = AnbnSource::new(k, l, seed)?;
    let mut out = Vec::with_capacity(n_chars + 2 * l as usize + 2);
    while out.len() < n_chars || !src.at_block_boundary() {
        out.push(src.next().expect("endless"));
    }
    Ok(out)
}

/// Non-cycling stream over `gen_anbn_bytes`. The alphabet is always
/// `{\n, a, b}`, even for tiny streams.
pub fn gen_anbn(k: u32, l: u32, n_chars: usize, seed: u64) -> Result<CharStream> {
    let data = gen_anbn_bytes(k, l, n_chars, seed)?;
    let mut stream = CharStream::from_bytes(data, false);
    stream.alphabet = Alphabet::from_bytes(b"\nab");
    Ok(stream)
}

/// Block lengths `n` of an `a^n b^n` byte sequence, or `None` if it does
/// not parse as a series of such blocks.
pub fn parse_anbn_blocks(data: &[u8]) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < data.len() {
        let a = data[i..].iter().take_while(|&&c| c == b'a').count();
        i += a;
        if a == 0 || data.get(i) != Some(&b'\n') {
            return None;
        }
        i += 1;
        let b = data[i..].iter().take_while(|&&c| c == b'b').count();
        i += b;
        if b != a || data.get(i) != Some(&b'\n') {
            return None;
        }
        i += 1;
        out.push(a);
    }
    Some(out)
}

/// Entropy rate of the `a^n b^n` source in bits per character:
/// `log2(l - k + 1) / (l + k + 2)`.
pub fn entropy_rate_anbn(k: u32, l: u32) -> Result<f64> {
    check_range(k, l)?;
    Ok(f64::from(l - k + 1).log2() / f64::from(l + k + 2))
}

/// Entropy rate of `a^n b^p` with independent `n` and `p`; twice the `a^n b^n` rate.
pub fn entropy_rate_anbp(k: u32, l: u32) -> Result<f64> {
    Ok(2.0 * entropy_rate_anbn(k, l)?)
}

pub fn load_text(path: impl AsRef<Path>, cycle: bool) -> Result<CharStream> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    if data.is_empty() {
        return Err(Error::Config(format!("{} is empty", path.display())));
    }
    Ok(CharStream::from_bytes(data, cycle))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alphabet_in_byte_order() {
        let a = Alphabet::from_bytes(b"ba\nab");
        assert_eq!(a.bytes(), b"\nab");
        assert_eq!(a.index_of(b'b'), Some(2));
        assert_eq!(a.index_of(b'z'), None);
    }

    #[test]
    fn one_hot_round_trip() {
        let a = Alphabet::from_bytes(b"hello world");
        for &b in a.bytes() {
            assert_eq!(a.decode_one_hot(&a.one_hot(b).unwrap()), Some(b));
        }
        assert!(a.one_hot(b'#').is_err());
        assert_eq!(a.decode_one_hot(&vec![0.0; a.len()]), None);
    }

    #[test]
    fn cycling_wraps() {
        let s = CharStream::from_bytes(b"ab\n".to_vec(), true);
        assert_eq!(s.byte_at(7), s.byte_at(1));
        let v: Vec<usize> = s.clone().take(7).collect();
        assert_eq!(v, vec![1, 2, 0, 1, 2, 0, 1]);
        let once: Vec<usize> = CharStream::from_bytes(b"ab\n".to_vec(), false).collect();
        assert_eq!(once.len(), 3);
    }

    #[test]
    fn generator_blocks() {
        let d = gen_anbn_bytes(3, 7, 1000, 5).unwrap();
        assert!(d.len() >= 1000);
        let blocks = parse_anbn_blocks(&d).unwrap();
        assert!(blocks.iter().all(|&n| (3..=7).contains(&n)));
        assert_eq!(d, gen_anbn_bytes(3, 7, 1000, 5).unwrap());
        assert_ne!(d, gen_anbn_bytes(3, 7, 1000, 6).unwrap());
    }

    #[test]
    fn degenerate_range() {
        let d = gen_anbn_bytes(1, 1, 8, 0).unwrap();
        assert_eq!(d, b"a\nb\na\nb\n");
        assert_eq!(entropy_rate_anbn(1, 1).unwrap(), 0.0);
        assert!(gen_anbn_bytes(0, 3, 8, 0).is_err());
        assert!(gen_anbn_bytes(4, 3, 8, 0).is_err());
    }

    #[test]
    fn entropy_rates() {
        assert!((entropy_rate_anbn(1, 32).unwrap() - 5.0 / 35.0).abs() < 1e-15);
        assert!((entropy_rate_anbp(1, 32).unwrap() - 10.0 / 35.0).abs() < 1e-15);
    }

    #[test]
    fn anbn_alphabet_fixed() {
        let s = gen_anbn(2, 2, 1, 0).unwrap();
        assert_eq!(s.alphabet().bytes(), b"\nab");
    }

    #[test]
    fn parser_rejects_malformed() {
        assert_eq!(parse_anbn_blocks(b"aa\nbb\n"), Some(vec![2]));
        assert_eq!(parse_anbn_blocks(b"aa\nb\n"), None);
        assert_eq!(parse_anbn_blocks(b"aa\nbb"), None);
        assert_eq!(parse_anbn_blocks(b"\n\n"), None);
    }
}
