//! Channel simulation: power normalization, AWGN, block slow fading and an
//! FIR-plus-cubic ISI surrogate for intensity-modulated fiber links.
//!
//! SNR is defined against unit average symbol power: the noise power is
//! `10^(-snr_db / 10)`, split evenly between quadratures for complex streams.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Real,
    Complex,
}

/// Discrete-time analog symbols.
#[derive(Debug, Clone, PartialEq)]
pub enum SymbolStream {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl SymbolStream {
    pub fn len(&self) -> usize {
        match self {
            SymbolStream::Real(v) => v.len(),
            SymbolStream::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn domain(&self) -> Domain {
        match self {
            SymbolStream::Real(_) => Domain::Real,
            SymbolStream::Complex(_) => Domain::Complex,
        }
    }

    pub fn mean_power(&self) -> f64 {
        let n = self.len().max(1) as f64;
        match self {
            SymbolStream::Real(v) => v.iter().map(|x| x * x).sum::<f64>() / n,
            SymbolStream::Complex(v) => v.iter().map(|x| x.norm_sqr()).sum::<f64>() / n,
        }
    }

    pub fn scaled(&self, factor: f64) -> SymbolStream {
        match self {
            SymbolStream::Real(v) => SymbolStream::Real(v.iter().map(|x| x * factor).collect()),
            SymbolStream::Complex(v) => SymbolStream::Complex(v.iter().map(|x| x * factor).collect()),
        }
    }

    /// Packs real values into a stream of the given domain; complex streams
    /// take consecutive pairs as (re, im).
    pub fn from_reals(values: &[f64], domain: Domain) -> SymbolStream {
        match domain {
            Domain::Real => SymbolStream::Real(values.to_vec()),
            Domain::Complex => SymbolStream::Complex(
                values
                    .chunks(2)
                    .map(|p| Complex64::new(p[0], p.get(1).copied().unwrap_or(0.0)))
                    .collect(),
            ),
        }
    }

    /// Inverse of [`SymbolStream::from_reals`].
    pub fn to_reals(&self) -> Vec<f64> {
        match self {
            SymbolStream::Real(v) => v.clone(),
            SymbolStream::Complex(v) => v.iter().flat_map(|c| [c.re, c.im]).collect(),
        }
    }
}

/// Scale applied by [`normalize_power`]; `normalized = original * factor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerScale(pub f64);

impl PowerScale {
    pub fn invert(&self, s: &SymbolStream) -> SymbolStream {
        s.scaled(1.0 / self.0)
    }
}

/// Scales `s` to unit mean power.
pub fn normalize_power(s: &SymbolStream) -> Result<(SymbolStream, PowerScale)> {
    let p = s.mean_power();
    if s.is_empty() || p == 0.0 || !p.is_finite() {
        return Err(CoreError::ZeroStream);
    }
    let factor = 1.0 / p.sqrt();
    Ok((s.scaled(factor), PowerScale(factor)))
}

/// Target SNR: a finite dB value or the noiseless sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SnrRepr", into = "SnrRepr")]
pub enum Snr {
    Noiseless,
    Db(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SnrRepr {
    Db(f64),
    Word(String),
}

impl TryFrom<SnrRepr> for Snr {
    type Error = String;

    fn try_from(r: SnrRepr) -> std::result::Result<Self, String> {
        match r {
            SnrRepr::Db(v) if v.is_finite() => Ok(Snr::Db(v)),
            SnrRepr::Db(v) => Err(format!("snr {v} is not finite")),
            SnrRepr::Word(w) if w == "noiseless" => Ok(Snr::Noiseless),
            SnrRepr::Word(w) => Err(format!("unknown snr '{w}'")),
        }
    }
}

impl From<Snr> for SnrRepr {
    fn from(s: Snr) -> Self {
        match s {
            Snr::Noiseless => SnrRepr::Word("noiseless".into()),
            Snr::Db(v) => SnrRepr::Db(v),
        }
    }
}

impl Snr {
    /// Total noise power for unit signal power; zero when noiseless.
    pub fn noise_power(&self) -> f64 {
        match self {
            Snr::Noiseless => 0.0,
            Snr::Db(db) => 10f64.powf(-db / 10.0),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Snr::Noiseless => "noiseless".into(),
            Snr::Db(db) => format!("{db}"),
        }
    }
}

impl std::fmt::Display for Snr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelFamily {
    Awgn,
    SlowFading,
    Isi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub family: ChannelFamily,
    pub snr_db: Snr,
    #[serde(default = "default_mu")]
    pub fading_mu: f64,
    #[serde(default = "default_sigma")]
    pub fading_sigma: f64,
    #[serde(default = "default_block")]
    pub block_len: usize,
    /// Gains with magnitude below this are pushed out to it, keeping their sign.
    #[serde(default = "default_clip")]
    pub fading_clip: f64,
    #[serde(default = "default_taps")]
    pub isi_taps: Vec<f64>,
    #[serde(default)]
    pub isi_gamma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_mu() -> f64 {
    1.0
}
fn default_sigma() -> f64 {
    0.3
}
fn default_block() -> usize {
    64
}
fn default_clip() -> f64 {
    0.05
}
fn default_taps() -> Vec<f64> {
    vec![1.0]
}

impl ChannelSpec {
    pub fn awgn(snr_db: Snr) -> Self {
        Self {
            family: ChannelFamily::Awgn,
            snr_db,
            fading_mu: default_mu(),
            fading_sigma: default_sigma(),
            block_len: default_block(),
            fading_clip: default_clip(),
            isi_taps: default_taps(),
            isi_gamma: 0.0,
            seed: 0,
        }
    }

    pub fn slow_fading(snr_db: Snr, mu: f64, sigma: f64, block_len: usize) -> Self {
        Self {
            family: ChannelFamily::SlowFading,
            fading_mu: mu,
            fading_sigma: sigma,
            block_len,
            ..Self::awgn(snr_db)
        }
    }

    pub fn isi(snr_db: Snr, taps: Vec<f64>, gamma: f64) -> Self {
        Self {
            family: ChannelFamily::Isi,
            isi_taps: taps,
            isi_gamma: gamma,
            ..Self::awgn(snr_db)
        }
    }

    pub fn with_snr(&self, snr_db: Snr) -> Self {
        Self {
            snr_db,
            ..self.clone()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ChannelSpec = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_len == 0 {
            return Err(CoreError::InvalidChannel("block_len must be >= 1".into()));
        }
        if self.isi_taps.is_empty() {
            return Err(CoreError::InvalidChannel("isi_taps must be nonempty".into()));
        }
        let finite = [self.fading_mu, self.fading_sigma, self.fading_clip, self.isi_gamma]
            .iter()
            .chain(&self.isi_taps)
            .all(|v| v.is_finite());
        if !finite || self.fading_sigma < 0.0 || self.fading_clip < 0.0 {
            return Err(CoreError::InvalidChannel("non-finite or negative parameter".into()));
        }
        Ok(())
    }
}

/// Adds i.i.d. Gaussian noise of total power `10^(-snr/10)` per symbol.
pub fn apply_awgn(s: &SymbolStream, snr: Snr, rng: &mut Rng) -> SymbolStream {
    let var = snr.noise_power();
    if var == 0.0 {
        return s.clone();
    }
    match s {
        SymbolStream::Real(v) => {
            let sd = var.sqrt();
            SymbolStream::Real(v.iter().map(|x| x + sd * rng.next_gaussian()).collect())
        }
        SymbolStream::Complex(v) => {
            let sd = (var / 2.0).sqrt();
            SymbolStream::Complex(
                v.iter()
                    .map(|x| {
                        let re = sd * rng.next_gaussian();
                        let im = sd * rng.next_gaussian();
                        x + Complex64::new(re, im)
                    })
                    .collect(),
            )
        }
    }
}

/// Draws one fading gain `h ~ N(mu, sigma^2)`, pushed out to `|h| >= clip`.
pub fn draw_fading_gain(spec: &ChannelSpec, rng: &mut Rng) -> f64 {
    let h = spec.fading_mu + spec.fading_sigma * rng.next_gaussian();
    if h.abs() < spec.fading_clip {
        if h < 0.0 {
            -spec.fading_clip
        } else {
            spec.fading_clip
        }
    } else {
        h
    }
}

/// Block fading `h·s + n`. All block gains are drawn first, then the noise.
/// Returns the output and one gain per block.
pub fn apply_slow_fading(s: &SymbolStream, spec: &ChannelSpec, rng: &mut Rng) -> (SymbolStream, Vec<f64>) {
    let blocks = s.len().div_ceil(spec.block_len.max(1));
    let gains: Vec<f64> = (0..blocks).map(|_| draw_fading_gain(spec, rng)).collect();
    let faded = match s {
        SymbolStream::Real(v) => SymbolStream::Real(
            v.iter()
                .enumerate()
                .map(|(i, x)| gains[i / spec.block_len] * x)
                .collect(),
        ),
        SymbolStream::Complex(v) => SymbolStream::Complex(
            v.iter()
                .enumerate()
                .map(|(i, x)| x * gains[i / spec.block_len])
                .collect(),
        ),
    };
    (apply_awgn(&faded, spec.snr_db, rng), gains)
}

/// Causal FIR with `spec.isi_taps`, then `u + gamma·u³`, then AWGN.
pub fn apply_isi(s: &SymbolStream, spec: &ChannelSpec, rng: &mut Rng) -> Result<SymbolStream> {
    let SymbolStream::Real(x) = s else {
        return Err(CoreError::ComplexIsi);
    };
    let taps = &spec.isi_taps;
    let g = spec.isi_gamma;
    let y: Vec<f64> = (0..x.len())
        .map(|n| {
            let u: f64 = taps
                .iter()
                .enumerate()
                .take(n + 1)
                .map(|(k, t)| t * x[n - k])
                .sum();
            u + g * u * u * u
        })
        .collect();
    Ok(apply_awgn(&SymbolStream::Real(y), spec.snr_db, rng))
}

/// Result of [`apply_channel`]; `gains` is set for slow fading only.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelOutput {
    pub stream: SymbolStream,
    pub gains: Option<Vec<f64>>,
}

pub fn apply_channel(s: &SymbolStream, spec: &ChannelSpec, rng: &mut Rng) -> Result<ChannelOutput> {
    spec.validate()?;
    Ok(match spec.family {
        ChannelFamily::Awgn => ChannelOutput {
            stream: apply_awgn(s, spec.snr_db, rng),
            gains: None,
        },
        ChannelFamily::SlowFading => {
            let (stream, gains) = apply_slow_fading(s, spec, rng);
            ChannelOutput {
                stream,
                gains: Some(gains),
            }
        }
        ChannelFamily::Isi => ChannelOutput {
            stream: apply_isi(s, spec, rng)?,
            gains: None,
        },
    })
}

/// Expands per-block gains to one gain per symbol.
pub fn per_symbol_gains(gains: &[f64], block_len: usize, len: usize) -> Vec<f64> {
    (0..len).map(|i| gains[i / block_len]).collect()
}

/// `10 log10(P_signal / P_noise)` with the noise taken as `received - sent`.
pub fn measured_snr_db(sent: &SymbolStream, received: &SymbolStream) -> f64 {
    let diff = match (sent, received) {
        (SymbolStream::Real(a), SymbolStream::Real(b)) => {
            SymbolStream::Real(a.iter().zip(b).map(|(x, y)| y - x).collect())
        }
        (SymbolStream::Complex(a), SymbolStream::Complex(b)) => {
            SymbolStream::Complex(a.iter().zip(b).map(|(x, y)| y - x).collect())
        }
        _ => panic!("domain mismatch"),
    };
    10.0 * (sent.mean_power() / diff.mean_power()).log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real(v: &[f64]) -> SymbolStream {
        SymbolStream::Real(v.to_vec())
    }

    #[test]
    fn normalize_constant_stream() {
        let (s, _) = normalize_power(&real(&[2.0; 4])).unwrap();
        assert_eq!(s, real(&[1.0; 4]));
    }

    #[test]
    fn normalize_hand_computed() {
        let (s, scale) = normalize_power(&real(&[3.0, 4.0])).unwrap();
        let d = 12.5f64.sqrt();
        let SymbolStream::Real(v) = &s else { unreachable!() };
        assert!((v[0] - 3.0 / d).abs() < 1e-15 && (v[1] - 4.0 / d).abs() < 1e-15);
        let SymbolStream::Real(back) = scale.invert(&s) else { unreachable!() };
        assert!((back[0] - 3.0).abs() < 1e-12 && (back[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_idempotent_and_zero_error() {
        let s = real(&[1.0, -1.0, 1.0, -1.0]);
        let (n, _) = normalize_power(&s).unwrap();
        assert_eq!(n, s);
        assert!(matches!(normalize_power(&real(&[0.0; 3])), Err(CoreError::ZeroStream)));
    }

    #[test]
    fn noiseless_is_identity() {
        let s = real(&[0.3, -1.2]);
        assert_eq!(apply_awgn(&s, Snr::Noiseless, &mut Rng::new(0)), s);
    }

    #[test]
    fn zero_input_gets_unit_variance_at_0db() {
        let s = real(&vec![0.0; 1_000_000]);
        let SymbolStream::Real(v) = apply_awgn(&s, Snr::Db(0.0), &mut Rng::new(4)) else { unreachable!() };
        let var = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        assert!((var - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn deterministic_fading() {
        let s = real(&[0.5; 8]);
        let mut degenerate = ChannelSpec::slow_fading(Snr::Noiseless, 1.0, 0.0, 2);
        assert_eq!(apply_slow_fading(&s, &degenerate, &mut Rng::new(0)).0, s);
        degenerate.fading_mu = 2.0;
        assert_eq!(apply_slow_fading(&s, &degenerate, &mut Rng::new(0)).0, real(&[1.0; 8]));
    }

    #[test]
    fn fading_clip_keeps_sign() {
        let spec = ChannelSpec::slow_fading(Snr::Noiseless, -0.01, 0.0, 1);
        assert_eq!(draw_fading_gain(&spec, &mut Rng::new(0)), -0.05);
        let spec = ChannelSpec::slow_fading(Snr::Noiseless, 0.0, 0.0, 1);
        assert_eq!(draw_fading_gain(&spec, &mut Rng::new(0)), 0.05);
    }

    #[test]
    fn isi_cases() {
        let id = ChannelSpec::isi(Snr::Noiseless, vec![1.0], 0.0);
        let s = real(&[1.0, -0.5, 2.0]);
        assert_eq!(apply_isi(&s, &id, &mut Rng::new(0)).unwrap(), s);

        let avg = ChannelSpec::isi(Snr::Noiseless, vec![0.5, 0.5], 0.0);
        let out = apply_isi(&real(&[1.0, 1.0, -1.0, -1.0, 1.0]), &avg, &mut Rng::new(0)).unwrap();
        assert_eq!(out, real(&[0.5, 1.0, 0.0, -1.0, 0.0]));

        let cubic = ChannelSpec::isi(Snr::Noiseless, vec![1.0], 0.1);
        let SymbolStream::Real(v) = apply_isi(&real(&[1.0; 4]), &cubic, &mut Rng::new(0)).unwrap() else {
            unreachable!()
        };
        assert!(v.iter().all(|&y| (y - 1.1).abs() < 1e-15));

        let c = SymbolStream::Complex(vec![Complex64::new(1.0, 0.0)]);
        assert!(matches!(apply_isi(&c, &id, &mut Rng::new(0)), Err(CoreError::ComplexIsi)));
    }

    #[test]
    fn spec_parses_sentinel_and_numbers() {
        let spec = ChannelSpec::from_toml("family = \"awgn\"\nsnr_db = \"noiseless\"\n").unwrap();
        assert_eq!(spec.snr_db, Snr::Noiseless);
        let spec = ChannelSpec::from_toml(
            "family = \"slow-fading\"\nsnr_db = 10\nfading_mu = 1.0\nfading_sigma = 0.3\nblock_len = 16\nseed = 9\n",
        )
        .unwrap();
        assert_eq!(spec.snr_db, Snr::Db(10.0));
        assert_eq!(spec.block_len, 16);
        assert!(ChannelSpec::from_toml("family = \"awgn\"\nsnr_db = \"loud\"\n").is_err());
        assert!(ChannelSpec::from_toml("family = \"isi\"\nsnr_db = 1\nisi_taps = []\n").is_err());
        let text = toml::to_string(&spec).unwrap();
        assert_eq!(ChannelSpec::from_toml(&text).unwrap(), spec);
    }
}
