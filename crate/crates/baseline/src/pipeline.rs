//! The full separate-coding chain: sense, source code, channel code,
//! modulate, transmit, equalize, demodulate, decode and reconstruct.

use std::time::Instant;

use icci_core::channel::{apply_channel, per_symbol_gains, ChannelFamily, ChannelSpec, SymbolStream};
use icci_core::metrics::{self, MetricsRecord};
use icci_core::sensing::SensingModel;
use icci_core::{Rng, Tensor};
use serde::{Deserialize, Serialize};

use crate::codec::{codec_decode, codec_encode, CodecConfig};
use crate::equalizer::EqualizerConfig;
use crate::error::{Result, ScError};
use crate::fec::{Fec, FecConfig, LdpcRate};
use crate::gaptv::{gaptv_reconstruct, GapTvConfig};
use crate::modulation::{demodulate, modulate, ModFormat};

pub const STAGES: [&str; 10] = [
    "sense",
    "source_encode",
    "channel_encode",
    "modulate",
    "channel",
    "equalize",
    "demodulate",
    "channel_decode",
    "source_decode",
    "reconstruct",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScConfig {
    #[serde(default)]
    pub codec: CodecConfig,
    pub fec: FecConfig,
    pub modulation: ModFormat,
    #[serde(default)]
    pub equalizer: Option<EqualizerConfig>,
    #[serde(default)]
    pub recon: GapTvConfig,
}

impl Default for ScConfig {
    fn default() -> Self {
        Self {
            codec: CodecConfig::default(),
            fec: FecConfig::ldpc(crate::fec::DEFAULT_LDPC_N, LdpcRate::Half, 0),
            modulation: ModFormat::Pam4,
            equalizer: None,
            recon: GapTvConfig::default(),
        }
    }
}

impl ScConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ScError::InvalidConfig(e.to_string()))
    }
}

/// Outcome of one transmission.
#[derive(Debug, Clone)]
pub struct ScRun {
    pub estimate: Tensor,
    pub record: MetricsRecord,
    /// Codec bits before channel coding.
    pub info_bits: usize,
    /// Data symbols sent, excluding pilots.
    pub symbols: usize,
    pub pilots: usize,
    pub converged: bool,
    /// The received codec stream had an unusable header.
    pub header_lost: bool,
}

/// A configured chain with its channel code built once.
#[derive(Debug, Clone)]
pub struct ScPipeline {
    pub config: ScConfig,
    fec: Fec,
}

struct Clock {
    last: Instant,
    timings: Vec<(String, f64)>,
}

impl Clock {
    fn new() -> Self {
        Self {
            last: Instant::now(),
            timings: Vec::new(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings
            .push((stage.to_string(), (now - self.last).as_secs_f64() * 1e3));
        self.last = now;
    }
}

impl ScPipeline {
    pub fn new(config: ScConfig) -> Result<Self> {
        config.codec.validate()?;
        config.recon.validate()?;
        let fec = Fec::new(&config.fec)?;
        Ok(Self { config, fec })
    }

    pub fn fec(&self) -> &Fec {
        &self.fec
    }

    /// Data symbols needed for `info_bits` codec bits.
    pub fn symbols_for_bits(&self, info_bits: usize) -> usize {
        self.fec.coded_len(info_bits).div_ceil(self.config.modulation.bits_per_symbol())
    }

    /// Symbols produced for a measurement at quantization step `q`.
    pub fn symbols_at(&self, m: &Tensor, q: f64) -> Result<usize> {
        Ok(self.symbols_for_bits(codec_encode(m, &CodecConfig::new(q))?.len()))
    }

    /// Source decode and reconstruction of a clean measurement, skipping the link.
    pub fn codec_only(&self, cube: &Tensor, sensing: &SensingModel, rng: &mut Rng) -> Result<Tensor> {
        let dims = cube.cube_dims()?;
        let m = sensing.forward(cube, rng)?;
        let bits = codec_encode(&m.data, &self.config.codec)?;
        let decoded = codec_decode(&bits, &self.config.codec)?;
        gaptv_reconstruct(&decoded, sensing, dims, &self.config.recon)
    }

    pub fn run(&self, cube: &Tensor, sensing: &SensingModel, channel: &ChannelSpec, rng: &mut Rng) -> Result<ScRun> {
        let dims = cube.cube_dims()?;
        let format = self.config.modulation;
        let bps = format.bits_per_symbol();
        let start = Instant::now();
        let mut clock = Clock::new();

        let m = sensing.forward(cube, rng)?;
        clock.lap("sense");

        let bits = codec_encode(&m.data, &self.config.codec)?;
        clock.lap("source_encode");

        let coded = self.fec.encode(&bits);
        let mut cbits = coded.bits.into_bits();
        let pad = (bps - cbits.len() % bps) % bps;
        cbits.extend(std::iter::repeat_n(0u8, pad));
        clock.lap("channel_encode");

        let data = modulate(&cbits, format)?;
        let symbols = data.len();
        let pilot_syms = match &self.config.equalizer {
            Some(eq) => {
                let n = ((symbols as f64 * eq.pilot_fraction()).ceil() as usize).max(eq.min_pilots());
                let pbits: Vec<u8> = (0..n * bps).map(|_| (rng.next_u64() & 1) as u8).collect();
                Some(modulate(&pbits, format)?)
            }
            None => None,
        };
        let tx = match &pilot_syms {
            Some(p) => concat(p, &data)?,
            None => data.clone(),
        };
        clock.lap("modulate");

        let out = apply_channel(&tx, channel, rng)?;
        clock.lap("channel");

        let pilots = pilot_syms.as_ref().map_or(0, SymbolStream::len);
        let mut noise_var = channel.snr_db.noise_power();
        let rx = match (&self.config.equalizer, &pilot_syms) {
            (Some(eq), Some(p)) => {
                let (SymbolStream::Real(r), SymbolStream::Real(pv)) = (&out.stream, p) else {
                    return Err(ScError::Domain("equalizers need a real stream".into()));
                };
                let z = eq.equalize(r, pv)?;
                let err: f64 = z.iter().zip(pv).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pv.len() as f64;
                noise_var = err.max(1e-6);
                SymbolStream::Real(z[pilots..].to_vec())
            }
            _ => out.stream.clone(),
        };
        clock.lap("equalize");

        let gains = match (&out.gains, channel.family) {
            (Some(g), ChannelFamily::SlowFading) => {
                let all = per_symbol_gains(g, channel.block_len, tx.len());
                Some(all[pilots..].to_vec())
            }
            _ => None,
        };
        let demod = demodulate(&rx, format, noise_var, gains.as_deref())?;
        clock.lap("demodulate");

        let coded_len = self.fec.coded_len(bits.len());
        let decoded = self.fec.decode(&demod.llrs[..coded_len], bits.len())?;
        clock.lap("channel_decode");

        let ber = metrics::ber(bits.bits(), decoded.bits.bits())?;
        let (h, wm) = sensing.measurement_dims(dims);
        let (meas, header_lost) = match codec_decode(&decoded.bits, &self.config.codec) {
            Ok(t) if t.dims() == [h, wm] => (t, false),
            _ => (Tensor::zeros(&[h, wm]), true),
        };
        clock.lap("source_decode");

        let estimate = gaptv_reconstruct(&meas, sensing, dims, &self.config.recon)?;
        clock.lap("reconstruct");
        let total = start.elapsed().as_secs_f64() * 1e3;

        let mut timings = clock.timings;
        timings.push(("total".into(), total));
        let record = MetricsRecord {
            scheme: "sc".into(),
            snr_db: channel.snr_db.label(),
            dcr: metrics::dcr(symbols, dims),
            psnr_db: metrics::psnr(&estimate, cube, 1.0)?,
            ssim: metrics::ssim(&estimate, cube).unwrap_or(f64::NAN),
            se: Vec::new(),
            ber: Some(ber),
            timings,
        };
        Ok(ScRun {
            estimate,
            record,
            info_bits: bits.len(),
            symbols,
            pilots,
            converged: decoded.converged,
            header_lost,
        })
    }
}

fn concat(a: &SymbolStream, b: &SymbolStream) -> Result<SymbolStream> {
    Ok(match (a, b) {
        (SymbolStream::Real(x), SymbolStream::Real(y)) => SymbolStream::Real([x.as_slice(), y].concat()),
        (SymbolStream::Complex(x), SymbolStream::Complex(y)) => SymbolStream::Complex([x.as_slice(), y].concat()),
        _ => return Err(ScError::Domain("pilot and data domains differ".into())),
    })
}

/// Result of [`rate_match`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateMatch {
    pub q: f64,
    pub symbols: usize,
    /// `|symbols − target| ≤ 5 % of target`.
    pub within_tolerance: bool,
}

/// Searches the quantization step (log-bisection over `[1e-4, 16]`) for the
/// symbol count closest to `target`; the best candidate is returned even
/// when no step reaches the tolerance.
pub fn rate_match(pipeline: &ScPipeline, m: &Tensor, target: usize) -> Result<RateMatch> {
    let (mut lo, mut hi) = (1e-4f64.ln(), 16f64.ln());
    let mut best: Option<(f64, usize)> = None;
    let mut consider = |q: f64, s: usize| {
        let better = best.is_none_or(|(_, bs)| s.abs_diff(target) < bs.abs_diff(target));
        if better {
            best = Some((q, s));
        }
    };
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let q = mid.exp();
        let s = pipeline.symbols_at(m, q)?;
        consider(q, s);
        if s > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (q, symbols) = best.expect("at least one candidate");
    Ok(RateMatch {
        q,
        symbols,
        within_tolerance: symbols.abs_diff(target) as f64 <= 0.05 * target as f64,
    })
}

/// Free-function form of [`ScPipeline::run`].
pub fn sc_pipeline(
    cube: &Tensor,
    sensing: &SensingModel,
    config: &ScConfig,
    channel: &ChannelSpec,
    rng: &mut Rng,
) -> Result<(Tensor, MetricsRecord)> {
    let run = ScPipeline::new(config.clone())?.run(cube, sensing, channel, rng)?;
    Ok((run.estimate, run.record))
}
