//! Bit sequences and their byte serialization: a 16-byte header
//! (`ICB1`, bit length as u64 LE, padding bit count as u32 LE) followed by
//! MSB-first packed bytes.

use crate::error::{Result, ScError};

pub const MAGIC: &[u8; 4] = b"ICB1";
pub const HEADER_LEN: usize = 16;

/// One bit per element, each 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitStream {
    bits: Vec<u8>,
}

impl BitStream {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fails if any element is not 0 or 1.
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(ScError::MalformedBitstream(format!("bit value {b}")));
        }
        Ok(Self { bits })
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<u8> {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn push(&mut self, bit: bool) {
        self.bits.push(bit as u8);
    }

    /// Appends the low `n` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, n: u32) {
        for i in (0..n).rev() {
            self.bits.push(((value >> i) & 1) as u8);
        }
    }

    /// Appends `v` as an order-0 Exp-Golomb code.
    pub fn push_ue(&mut self, v: u64) {
        let x = v + 1;
        let len = 64 - x.leading_zeros();
        for _ in 1..len {
            self.bits.push(0);
        }
        self.push_bits(x, len);
    }

    /// Signed Exp-Golomb: 0, 1, -1, 2, -2, ... map to 0, 1, 2, 3, 4, ...
    pub fn push_se(&mut self, v: i64) {
        let u = if v > 0 { 2 * v as u64 - 1 } else { 2 * v.unsigned_abs() };
        self.push_ue(u);
    }

    pub fn extend(&mut self, other: &BitStream) {
        self.bits.extend_from_slice(&other.bits);
    }

    pub fn reader(&self) -> BitReader<'_> {
        BitReader { bits: &self.bits, pos: 0 }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let padding = (8 - self.bits.len() % 8) % 8;
        let mut out = Vec::with_capacity(HEADER_LEN + self.bits.len().div_ceil(8));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.bits.len() as u64).to_le_bytes());
        out.extend_from_slice(&(padding as u32).to_le_bytes());
        for chunk in self.bits.chunks(8) {
            let mut byte = 0u8;
            for (i, &b) in chunk.iter().enumerate() {
                byte |= b << (7 - i);
            }
            out.push(byte);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(ScError::MalformedBitstream("truncated header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(ScError::MalformedBitstream(format!("bad magic {:02x?}", &bytes[..4])));
        }
        let len = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
        let padding = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as u64;
        let payload = &bytes[HEADER_LEN..];
        let expected = len.div_ceil(8);
        if payload.len() as u64 != expected {
            return Err(ScError::MalformedBitstream(format!(
                "payload has {} bytes, header implies {expected}",
                payload.len()
            )));
        }
        if padding != (8 - len % 8) % 8 {
            return Err(ScError::MalformedBitstream(format!("padding {padding} inconsistent with length {len}")));
        }
        let bits = (0..len as usize).map(|i| (payload[i / 8] >> (7 - i % 8)) & 1).collect();
        Ok(Self { bits })
    }
}

/// Sequential reader; every read fails cleanly past the end.
#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bits: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bits.len() - self.pos
    }

    pub fn read_bit(&mut self) -> Option<u8> {
        let b = *self.bits.get(self.pos)?;
        self.pos += 1;
        Some(b)
    }

    pub fn read_bits(&mut self, n: u32) -> Option<u64> {
        if self.remaining() < n as usize {
            return None;
        }
        let mut v = 0u64;
        for _ in 0..n {
            v = (v << 1) | self.bits[self.pos] as u64;
            self.pos += 1;
        }
        Some(v)
    }

    pub fn read_ue(&mut self) -> Option<u64> {
        let mut zeros = 0u32;
        while self.read_bit()? == 0 {
            zeros += 1;
            if zeros > 62 {
                return None;
            }
        }
        let rest = self.read_bits(zeros)?;
        Some(((1u64 << zeros) | rest) - 1)
    }

    pub fn read_se(&mut self) -> Option<i64> {
        let u = self.read_ue()?;
        Some(if u % 2 == 1 { u.div_ceil(2) as i64 } else { -((u / 2) as i64) })
    }
}
