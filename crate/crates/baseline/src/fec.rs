//! Forward error correction: Hamming(7,4) with syndrome decoding and
//! random regular LDPC codes with normalized min-sum decoding.
//!
//! LLR convention: positive means bit 0.

use std::collections::HashSet;

use icci_core::Rng;
use serde::{Deserialize, Serialize};

use crate::bitstream::BitStream;
use crate::error::{Result, ScError};

pub const DEFAULT_LDPC_N: usize = 648;
pub const DEFAULT_MAX_ITERS: usize = 50;
pub const MIN_SUM_SCALE: f64 = 0.75;
const COLUMN_WEIGHT: usize = 3;
const MAX_CONSTRUCTION_ATTEMPTS: u64 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LdpcRate {
    #[serde(rename = "1/2")]
    Half,
    #[serde(rename = "2/3")]
    TwoThirds,
    #[serde(rename = "3/4")]
    ThreeQuarters,
}

impl LdpcRate {
    pub fn fraction(self) -> (usize, usize) {
        match self {
            LdpcRate::Half => (1, 2),
            LdpcRate::TwoThirds => (2, 3),
            LdpcRate::ThreeQuarters => (3, 4),
        }
    }

    pub fn value(self) -> f64 {
        let (a, b) = self.fraction();
        a as f64 / b as f64
    }

    /// Check-node degree for column weight 3.
    pub fn row_weight(self) -> usize {
        let (a, b) = self.fraction();
        COLUMN_WEIGHT * b / (b - a)
    }
}

fn default_n() -> usize {
    DEFAULT_LDPC_N
}

fn default_iters() -> usize {
    DEFAULT_MAX_ITERS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FecConfig {
    Hamming74,
    Ldpc {
        #[serde(default = "default_n")]
        n: usize,
        rate: LdpcRate,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_iters")]
        max_iters: usize,
    },
}

impl FecConfig {
    pub fn ldpc(n: usize, rate: LdpcRate, seed: u64) -> Self {
        FecConfig::Ldpc {
            n,
            rate,
            seed,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }

    /// Code rate `k / n`.
    pub fn rate(&self) -> f64 {
        match self {
            FecConfig::Hamming74 => 4.0 / 7.0,
            FecConfig::Ldpc { rate, .. } => rate.value(),
        }
    }
}

/// Encoder output; `info_len` is the unpadded information length.
#[derive(Debug, Clone, PartialEq)]
pub struct Coded {
    pub bits: BitStream,
    pub info_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub bits: BitStream,
    /// All codewords satisfied their parity checks.
    pub converged: bool,
    /// Largest iteration count used by any codeword.
    pub iterations: usize,
}

/// A constructed code, ready to encode and decode.
#[derive(Debug, Clone)]
pub enum Fec {
    Hamming74,
    Ldpc(LdpcCode),
}

impl Fec {
    pub fn new(cfg: &FecConfig) -> Result<Self> {
        Ok(match *cfg {
            FecConfig::Hamming74 => Fec::Hamming74,
            FecConfig::Ldpc {
                n,
                rate,
                seed,
                max_iters,
            } => Fec::Ldpc(LdpcCode::new(n, rate, seed, max_iters)?),
        })
    }

    pub fn n(&self) -> usize {
        match self {
            Fec::Hamming74 => 7,
            Fec::Ldpc(c) => c.n,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Fec::Hamming74 => 4,
            Fec::Ldpc(c) => c.k(),
        }
    }

    /// Coded length for `info_len` information bits after zero padding.
    pub fn coded_len(&self, info_len: usize) -> usize {
        info_len.div_ceil(self.k()) * self.n()
    }

    /// Zero-pads to a multiple of `k` and encodes each block systematically.
    pub fn encode(&self, b: &BitStream) -> Coded {
        let k = self.k();
        let mut out = Vec::with_capacity(self.coded_len(b.len()));
        let mut block = vec![0u8; k];
        for chunk in b.bits().chunks(k) {
            block[..chunk.len()].copy_from_slice(chunk);
            block[chunk.len()..].fill(0);
            match self {
                Fec::Hamming74 => out.extend_from_slice(&hamming74_encode([block[0], block[1], block[2], block[3]])),
                Fec::Ldpc(c) => out.extend(c.encode(&block)),
            }
        }
        Coded {
            bits: BitStream::from_bits(out).expect("binary codeword"),
            info_len: b.len(),
        }
    }

    /// Decodes soft LLRs back to `info_len` information bits.
    pub fn decode(&self, llrs: &[f64], info_len: usize) -> Result<Decoded> {
        let n = self.n();
        if !llrs.len().is_multiple_of(n) {
            return Err(ScError::NotMultiple { len: llrs.len(), multiple: n });
        }
        if llrs.len() / n * self.k() < info_len {
            return Err(ScError::InvalidConfig(format!(
                "{} coded bits cannot carry {info_len} information bits",
                llrs.len()
            )));
        }
        let mut bits = Vec::with_capacity(llrs.len() / n * self.k());
        let mut converged = true;
        let mut iterations = 0;
        for cw in llrs.chunks(n) {
            match self {
                Fec::Hamming74 => {
                    let hard: Vec<u8> = cw.iter().map(|&l| (l < 0.0) as u8).collect();
                    bits.extend_from_slice(&hamming74_decode(hard[..].try_into().unwrap()));
                }
                Fec::Ldpc(c) => {
                    let r = c.decode(cw);
                    converged &= r.converged;
                    iterations = iterations.max(r.iterations);
                    bits.extend(r.info);
                }
            }
        }
        bits.truncate(info_len);
        Ok(Decoded {
            bits: BitStream::from_bits(bits).expect("binary decisions"),
            converged,
            iterations,
        })
    }

    /// Hard-decision decoding of received bits.
    pub fn decode_hard(&self, bits: &BitStream, info_len: usize) -> Result<Decoded> {
        let llrs: Vec<f64> = bits.bits().iter().map(|&b| if b == 0 { 1.0 } else { -1.0 }).collect();
        self.decode(&llrs, info_len)
    }
}

pub fn fec_encode(b: &BitStream, cfg: &FecConfig) -> Result<Coded> {
    Ok(Fec::new(cfg)?.encode(b))
}

pub fn fec_decode(llrs: &[f64], info_len: usize, cfg: &FecConfig) -> Result<Decoded> {
    Fec::new(cfg)?.decode(llrs, info_len)
}

/// Codeword `[d1 d2 d3 d4 p1 p2 p3]`.
pub fn hamming74_encode(d: [u8; 4]) -> [u8; 7] {
    [
        d[0],
        d[1],
        d[2],
        d[3],
        d[0] ^ d[1] ^ d[3],
        d[0] ^ d[2] ^ d[3],
        d[1] ^ d[2] ^ d[3],
    ]
}

/// Parity-check column of each codeword position, as (s1, s2, s3) bits.
const HAMMING_COLUMNS: [u8; 7] = [0b110, 0b101, 0b011, 0b111, 0b100, 0b010, 0b001];

/// Corrects up to one error and returns the data bits.
pub fn hamming74_decode(r: [u8; 7]) -> [u8; 4] {
    let s1 = r[4] ^ r[0] ^ r[1] ^ r[3];
    let s2 = r[5] ^ r[0] ^ r[2] ^ r[3];
    let s3 = r[6] ^ r[1] ^ r[2] ^ r[3];
    let syndrome = (s1 << 2) | (s2 << 1) | s3;
    let mut c = r;
    if syndrome != 0 {
        let pos = HAMMING_COLUMNS.iter().position(|&col| col == syndrome).unwrap();
        c[pos] ^= 1;
    }
    [c[0], c[1], c[2], c[3]]
}

/// Result of decoding one LDPC codeword.
#[derive(Debug, Clone, PartialEq)]
pub struct LdpcDecode {
    pub info: Vec<u8>,
    pub codeword: Vec<u8>,
    pub converged: bool,
    pub iterations: usize,
}

/// Column-weight-3 regular code with full-rank parity-check matrix.
#[derive(Debug, Clone)]
pub struct LdpcCode {
    pub n: usize,
    pub rate: LdpcRate,
    /// Variable indices of each check, in edge order.
    checks: Vec<Vec<usize>>,
    /// Edge indices incident on each variable.
    var_edges: Vec<Vec<usize>>,
    /// Reduced row echelon form of H, bit-packed.
    rref: Vec<Vec<u64>>,
    pivots: Vec<usize>,
    info_cols: Vec<usize>,
    max_iters: usize,
    /// Seed that produced a full-rank matrix.
    pub used_seed: u64,
}

fn bit_rows(checks: &[Vec<usize>], n: usize) -> Vec<Vec<u64>> {
    let words = n.div_ceil(64);
    checks
        .iter()
        .map(|row| {
            let mut r = vec![0u64; words];
            for &c in row {
                r[c / 64] ^= 1 << (c % 64);
            }
            r
        })
        .collect()
}

fn get_bit(row: &[u64], c: usize) -> bool {
    (row[c / 64] >> (c % 64)) & 1 == 1
}

/// Gauss-Jordan elimination over GF(2); returns the RREF rows and pivot
/// columns (fewer pivots than rows means rank deficiency).
fn rref(mut rows: Vec<Vec<u64>>, n: usize) -> (Vec<Vec<u64>>, Vec<usize>) {
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..n {
        if r == rows.len() {
            break;
        }
        let Some(p) = (r..rows.len()).find(|&i| get_bit(&rows[i], c)) else {
            continue;
        };
        rows.swap(r, p);
        let pivot_row = rows[r].clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if i != r && get_bit(row, c) {
                for (a, b) in row.iter_mut().zip(&pivot_row) {
                    *a ^= b;
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    rows.truncate(pivots.len());
    (rows, pivots)
}

/// Random socket matching followed by edge swaps that remove repeated
/// edges and length-4 cycles.
fn construct_checks(n: usize, m: usize, row_weight: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut sockets: Vec<usize> = (0..n).flat_map(|c| std::iter::repeat_n(c, COLUMN_WEIGHT)).collect();
    rng.shuffle(&mut sockets);
    let mut checks: Vec<Vec<usize>> = sockets.chunks(row_weight).map(|c| c.to_vec()).collect();
    debug_assert_eq!(checks.len(), m);
    for _ in 0..500 {
        let bad = offending_edges(&checks);
        if bad.is_empty() {
            break;
        }
        for (r1, e1) in bad {
            let r2 = rng.next_below(m);
            let e2 = rng.next_below(row_weight);
            if r1 == r2 {
                continue;
            }
            let (a, b) = (checks[r1][e1], checks[r2][e2]);
            if checks[r1].contains(&b) || checks[r2].contains(&a) {
                continue;
            }
            checks[r1][e1] = b;
            checks[r2][e2] = a;
        }
    }
    checks
}

/// Edges that repeat within a row or close a 4-cycle, as (row, slot).
fn offending_edges(checks: &[Vec<usize>]) -> Vec<(usize, usize)> {
    let mut pairs: HashSet<(usize, usize)> = HashSet::new();
    let mut bad = Vec::new();
    for (r, row) in checks.iter().enumerate() {
        let mut flagged = false;
        for i in 0..row.len() {
            for j in (i + 1)..row.len() {
                let key = (row[i].min(row[j]), row[i].max(row[j]));
                if (row[i] == row[j] || !pairs.insert(key))
                    && !flagged {
                        bad.push((r, j));
                        flagged = true;
                    }
            }
        }
    }
    bad
}

impl LdpcCode {
    /// Builds an `(n, n·r)` code, advancing the seed until H has full row rank.
    pub fn new(n: usize, rate: LdpcRate, seed: u64, max_iters: usize) -> Result<Self> {
        let (a, b) = rate.fraction();
        let wr = rate.row_weight();
        if n == 0 || !n.is_multiple_of(b) || !(COLUMN_WEIGHT * n).is_multiple_of(wr) {
            return Err(ScError::InvalidConfig(format!(
                "ldpc length {n} incompatible with rate {a}/{b}"
            )));
        }
        if max_iters == 0 {
            return Err(ScError::InvalidConfig("ldpc needs at least one iteration".into()));
        }
        let m = n - n * a / b;
        if m < 2 || wr > n {
            return Err(ScError::InvalidConfig(format!("ldpc length {n} too short")));
        }
        for attempt in 0..MAX_CONSTRUCTION_ATTEMPTS {
            let used_seed = seed.wrapping_add(attempt);
            let mut rng = Rng::new(used_seed);
            let checks = construct_checks(n, m, wr, &mut rng);
            if checks.iter().any(|row| {
                let mut r = row.clone();
                r.sort_unstable();
                r.windows(2).any(|w| w[0] == w[1])
            }) {
                continue;
            }
            let (rows, pivots) = rref(bit_rows(&checks, n), n);
            if pivots.len() < m {
                continue;
            }
            let pivot_set: HashSet<usize> = pivots.iter().copied().collect();
            let info_cols = (0..n).filter(|c| !pivot_set.contains(c)).collect();
            let mut var_edges = vec![Vec::new(); n];
            let mut e = 0;
            for row in &checks {
                for &v in row {
                    var_edges[v].push(e);
                    e += 1;
                }
            }
            return Ok(Self {
                n,
                rate,
                checks,
                var_edges,
                rref: rows,
                pivots,
                info_cols,
                max_iters,
                used_seed,
            });
        }
        Err(ScError::InvalidConfig(format!(
            "no full-rank ldpc matrix found for n = {n} after {MAX_CONSTRUCTION_ATTEMPTS} seeds"
        )))
    }

    pub fn k(&self) -> usize {
        self.n - self.checks.len()
    }

    pub fn m(&self) -> usize {
        self.checks.len()
    }

    pub fn checks(&self) -> &[Vec<usize>] {
        &self.checks
    }

    /// Codeword positions that carry the information bits, ascending.
    pub fn info_positions(&self) -> &[usize] {
        &self.info_cols
    }

    pub fn syndrome_ok(&self, cw: &[u8]) -> bool {
        self.checks.iter().all(|row| row.iter().fold(0u8, |acc, &v| acc ^ cw[v]) == 0)
    }

    pub fn has_four_cycles(&self) -> bool {
        !offending_edges(&self.checks).is_empty()
    }

    pub fn encode(&self, info: &[u8]) -> Vec<u8> {
        assert_eq!(info.len(), self.k(), "ldpc information length");
        let mut cw = vec![0u8; self.n];
        let mut packed = vec![0u64; self.n.div_ceil(64)];
        for (&c, &b) in self.info_cols.iter().zip(info) {
            cw[c] = b;
            if b == 1 {
                packed[c / 64] |= 1 << (c % 64);
            }
        }
        for (row, &p) in self.rref.iter().zip(&self.pivots) {
            let ones: u32 = row.iter().zip(&packed).map(|(a, b)| (a & b).count_ones()).sum();
            cw[p] = (ones % 2) as u8;
        }
        cw
    }

    /// Normalized min-sum belief propagation with early stopping.
    pub fn decode(&self, llr: &[f64]) -> LdpcDecode {
        assert_eq!(llr.len(), self.n, "ldpc codeword length");
        let mut hard: Vec<u8> = llr.iter().map(|&l| (l < 0.0) as u8).collect();
        let edges: usize = self.checks.iter().map(Vec::len).sum();
        let mut v2c = vec![0.0f64; edges];
        let mut c2v = vec![0.0f64; edges];
        let mut e = 0;
        for row in &self.checks {
            for &v in row {
                v2c[e] = llr[v];
                e += 1;
            }
        }
        let mut iterations = 0;
        let mut converged = self.syndrome_ok(&hard);
        while !converged && iterations < self.max_iters {
            iterations += 1;
            let mut base = 0;
            for row in &self.checks {
                let msgs = &v2c[base..base + row.len()];
                let mut sign = 1.0;
                let (mut min1, mut min2, mut arg) = (f64::INFINITY, f64::INFINITY, 0);
                for (i, &m) in msgs.iter().enumerate() {
                    if m < 0.0 {
                        sign = -sign;
                    }
                    let a = m.abs();
                    if a < min1 {
                        min2 = min1;
                        min1 = a;
                        arg = i;
                    } else if a < min2 {
                        min2 = a;
                    }
                }
                for (i, &m) in msgs.iter().enumerate() {
                    let mag = if i == arg { min2 } else { min1 };
                    let s = if m < 0.0 { -sign } else { sign };
                    c2v[base + i] = MIN_SUM_SCALE * s * mag;
                }
                base += row.len();
            }
            for (v, es) in self.var_edges.iter().enumerate() {
                let total = llr[v] + es.iter().map(|&e| c2v[e]).sum::<f64>();
                hard[v] = (total < 0.0) as u8;
                for &e in es {
                    v2c[e] = total - c2v[e];
                }
            }
            converged = self.syndrome_ok(&hard);
        }
        LdpcDecode {
            info: self.info_cols.iter().map(|&c| hard[c]).collect(),
            codeword: hard,
            converged,
            iterations,
        }
    }
}
