//! Gray-mapped digital modulation with unit average power and max-log LLRs.
//!
//! Bit 0 maps to the negative level. Tables, bits listed first to last:
//!
//! * PAM2: 0 → −1, 1 → +1 (real stream).
//! * PAM4: 00 → −3, 01 → −1, 11 → +1, 10 → +3, scaled by 1/√5.
//! * PAM8: 000, 001, 011, 010, 110, 111, 101, 100 → −7, −5, …, +7, scaled by 1/√21.
//! * BPSK: PAM2 levels on the in-phase axis of a complex stream.
//! * QPSK: `((2b0 − 1) + j(2b1 − 1)) / √2`.
//! * 16QAM: PAM4 labels of (b0, b1) on I and of (b2, b3) on Q, scaled by 1/√10.

use icci_core::channel::{Domain, SymbolStream};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModFormat {
    Pam2,
    Pam4,
    Pam8,
    Bpsk,
    Qpsk,
    Qam16,
}

pub const ALL_FORMATS: [ModFormat; 6] = [
    ModFormat::Pam2,
    ModFormat::Pam4,
    ModFormat::Pam8,
    ModFormat::Bpsk,
    ModFormat::Qpsk,
    ModFormat::Qam16,
];

/// Gray label of each PAM level, from the most negative level upward.
const PAM4_LABELS: [u8; 4] = [0b00, 0b01, 0b11, 0b10];
const PAM8_LABELS: [u8; 8] = [0b000, 0b001, 0b011, 0b010, 0b110, 0b111, 0b101, 0b100];

fn pam_level(labels: &[u8], label: u8) -> f64 {
    let i = labels.iter().position(|&l| l == label).expect("valid label");
    (2 * i) as f64 - (labels.len() - 1) as f64
}

impl ModFormat {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            ModFormat::Pam2 | ModFormat::Bpsk => 1,
            ModFormat::Pam4 | ModFormat::Qpsk => 2,
            ModFormat::Pam8 => 3,
            ModFormat::Qam16 => 4,
        }
    }

    pub fn domain(self) -> Domain {
        match self {
            ModFormat::Pam2 | ModFormat::Pam4 | ModFormat::Pam8 => Domain::Real,
            ModFormat::Bpsk | ModFormat::Qpsk | ModFormat::Qam16 => Domain::Complex,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModFormat::Pam2 => "pam2",
            ModFormat::Pam4 => "pam4",
            ModFormat::Pam8 => "pam8",
            ModFormat::Bpsk => "bpsk",
            ModFormat::Qpsk => "qpsk",
            ModFormat::Qam16 => "qam16",
        }
    }

    /// Point for a label whose first bit is the most significant.
    pub fn point(self, label: u8) -> Complex64 {
        let b = |i: usize| ((label >> (self.bits_per_symbol() - 1 - i)) & 1) as f64;
        match self {
            ModFormat::Pam2 | ModFormat::Bpsk => Complex64::new(2.0 * b(0) - 1.0, 0.0),
            ModFormat::Pam4 => Complex64::new(pam_level(&PAM4_LABELS, label) / 5f64.sqrt(), 0.0),
            ModFormat::Pam8 => Complex64::new(pam_level(&PAM8_LABELS, label) / 21f64.sqrt(), 0.0),
            ModFormat::Qpsk => Complex64::new(2.0 * b(0) - 1.0, 2.0 * b(1) - 1.0) / 2f64.sqrt(),
            ModFormat::Qam16 => Complex64::new(
                pam_level(&PAM4_LABELS, label >> 2),
                pam_level(&PAM4_LABELS, label & 0b11),
            ) / 10f64.sqrt(),
        }
    }

    /// Every `(label, point)` pair, labels ascending.
    pub fn constellation(self) -> Vec<(u8, Complex64)> {
        (0..1u8 << self.bits_per_symbol()).map(|l| (l, self.point(l))).collect()
    }
}

pub fn modulate(bits: &[u8], format: ModFormat) -> Result<SymbolStream> {
    let k = format.bits_per_symbol();
    if !bits.len().is_multiple_of(k) {
        return Err(ScError::NotMultiple { len: bits.len(), multiple: k });
    }
    let labels = bits.chunks(k).map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | (b & 1)));
    Ok(match format.domain() {
        Domain::Real => SymbolStream::Real(labels.map(|l| format.point(l).re).collect()),
        Domain::Complex => SymbolStream::Complex(labels.map(|l| format.point(l)).collect()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demodulated {
    pub llrs: Vec<f64>,
    pub hard: Vec<u8>,
}

/// Max-log LLRs `(min_{b=1} d² − min_{b=0} d²) / N` per bit, where `N` is
/// `2σ²` for real streams and the total noise power for complex ones.
/// `noise_var` is the noise power per symbol as defined by the channel.
/// Optional per-symbol gains are divided out (perfect CSI).
pub fn demodulate(
    s: &SymbolStream,
    format: ModFormat,
    noise_var: f64,
    gains: Option<&[f64]>,
) -> Result<Demodulated> {
    if s.domain() != format.domain() {
        return Err(ScError::Domain(format!("{} expects a {:?} stream", format.name(), format.domain())));
    }
    if let Some(g) = gains {
        if g.len() != s.len() {
            return Err(ScError::InvalidConfig(format!("{} gains for {} symbols", g.len(), s.len())));
        }
    }
    let k = format.bits_per_symbol();
    let table = format.constellation();
    let received: Vec<Complex64> = match s {
        SymbolStream::Real(v) => v.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        SymbolStream::Complex(v) => v.clone(),
    };
    let denom_base = match format.domain() {
        Domain::Real => 2.0 * noise_var,
        Domain::Complex => noise_var,
    };
    let mut llrs = Vec::with_capacity(received.len() * k);
    for (i, r) in received.iter().enumerate() {
        let g = gains.map_or(1.0, |g| g[i]);
        let (r, denom) = if g != 0.0 { (r / g, denom_base / (g * g)) } else { (*r, denom_base) };
        let denom = denom.max(1e-12);
        let d: Vec<f64> = table.iter().map(|(_, p)| (r - p).norm_sqr()).collect();
        for bit in 0..k {
            let shift = k - 1 - bit;
            let (mut d0, mut d1) = (f64::INFINITY, f64::INFINITY);
            for ((label, _), &dist) in table.iter().zip(&d) {
                if (label >> shift) & 1 == 0 {
                    d0 = d0.min(dist);
                } else {
                    d1 = d1.min(dist);
                }
            }
            llrs.push((d1 - d0) / denom);
        }
    }
    let hard = llrs.iter().map(|&l| (l < 0.0) as u8).collect();
    Ok(Demodulated { llrs, hard })
}

/// Human-readable constellation table, one `format label re im` row per point.
pub fn constellation_table() -> String {
    let mut out = String::from("format,label,re,im\n");
    for f in ALL_FORMATS {
        for (label, p) in f.constellation() {
            out.push_str(&format!(
                "{},{:0width$b},{:.6},{:.6}\n",
                f.name(),
                label,
                p.re,
                p.im,
                width = f.bits_per_symbol()
            ));
        }
    }
    out
}
