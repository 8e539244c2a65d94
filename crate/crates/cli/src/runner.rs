//! Mode implementations. Every mode writes its tables as CSV under the
//! output directory and returns the paths it wrote.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use icci_core::channel::{apply_channel, ChannelFamily, ChannelSpec, Domain, Snr};
use icci_core::ict::write_tensor;
use icci_core::metrics::{dcr, probe_spectrum, psnr, spectral_error, ssim, MetricsRecord};
use icci_core::scene::ProbeRegion;
use icci_core::sensing::SensingModel;
use icci_core::{Rng, Tensor};
use icci_model::training::{check_compat, derive_seed, evaluate};
use icci_model::{encode, interpret, ArchConfig, NetworkParams, Trainer};
use icci_sc::equalizer::{Cdan, Ffe};
use icci_sc::modulation::modulate;
use icci_sc::pipeline::{rate_match, ScPipeline};

use crate::error::{CliError, Result};
use crate::pgm::write_pgm;
use crate::report::run_report;
use crate::spec::{Datasets, Experiment, Mode, Scheme};

const STREAM_EVAL_NOISE: u64 = 200;
const STREAM_BENCH_BITS: u64 = 300;
const STREAM_BENCH_CHANNEL: u64 = 301;

/// Files written by a mode, in write order.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    /// Human-readable text for the terminal (report mode).
    pub summary: Option<String>,
}

pub fn run(mode: Mode, exp: &Experiment) -> Result<Outcome> {
    mkdir(&exp.out)?;
    match mode {
        Mode::Train => run_train(exp),
        Mode::Eval => run_eval(exp),
        Mode::SweepSnr => run_sweep_snr(exp),
        Mode::SweepDcr => run_sweep_dcr(exp),
        Mode::Baseline => run_baseline(exp),
        Mode::EqualizerBench => run_equalizer_bench(exp),
        Mode::Report => run_report(&exp.out),
    }
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| CliError::io(p, e))
}

/// Fixed-precision float cell; `nan` for undefined metrics.
pub fn cell(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

struct Clock {
    start: Instant,
    last: Instant,
    timings: Vec<(String, f64)>,
    zero: bool,
}

impl Clock {
    fn new(zero: bool) -> Self {
        let now = Instant::now();
        Self {
            start: now,
            last: now,
            timings: Vec::new(),
            zero,
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        let ms = if self.zero { 0.0 } else { (now - self.last).as_secs_f64() * 1e3 };
        self.timings.push((stage.into(), ms));
        self.last = now;
    }

    fn finish(mut self) -> Vec<(String, f64)> {
        let ms = if self.zero { 0.0 } else { self.start.elapsed().as_secs_f64() * 1e3 };
        self.timings.push(("total".into(), ms));
        self.timings
    }
}

fn elapsed_ms(t: Instant, zero: bool) -> f64 {
    if zero {
        0.0
    } else {
        t.elapsed().as_secs_f64() * 1e3
    }
}

struct Quality {
    psnr_db: f64,
    /// NaN below the window size.
    ssim: f64,
    se: Vec<(String, f64)>,
}

fn quality(est: &Tensor, cube: &Tensor, probes: &[ProbeRegion]) -> Result<Quality> {
    let psnr_db = psnr(est, cube, 1.0)?;
    let ssim = ssim(est, cube).unwrap_or(f64::NAN);
    let se = probes
        .iter()
        .map(|r| Ok((r.name.clone(), spectral_error(&probe_spectrum(est, r)?, &probe_spectrum(cube, r)?)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Quality { psnr_db, ssim, se })
}

/// Sensing, encoding, channel and interpretation of one cube; sensor noise
/// then channel noise come from `rng`.
pub fn icci_scene(
    params: &NetworkParams,
    sensing: &SensingModel,
    cube: &Tensor,
    channel: &ChannelSpec,
    rng: &mut Rng,
    probes: &[ProbeRegion],
    zero_timings: bool,
) -> Result<(Tensor, MetricsRecord)> {
    let mut clock = Clock::new(zero_timings);
    let m = sensing.forward(cube, rng)?;
    clock.lap("sense");
    let s = encode(&m.data, &sensing.mask, params)?;
    clock.lap("encode");
    let y = apply_channel(&s, channel, rng)?.stream;
    clock.lap("channel");
    let mut est = interpret(&y, &sensing.mask, params)?;
    est.clamp(0.0, 1.0);
    clock.lap("interpret");
    let Quality { psnr_db, ssim, se } = quality(&est, cube, probes)?;
    let record = MetricsRecord {
        scheme: Scheme::Icci.name().into(),
        snr_db: channel.snr_db.label(),
        dcr: dcr(s.len(), cube.cube_dims()?),
        psnr_db,
        ssim,
        se,
        ber: None,
        timings: clock.finish(),
    };
    Ok((est, record))
}

/// One SC run; with `target` the quantization step is first matched to that
/// symbol count.
#[allow(clippy::too_many_arguments)]
pub fn sc_scene(
    pipeline: &ScPipeline,
    sensing: &SensingModel,
    cube: &Tensor,
    channel: &ChannelSpec,
    rng: &mut Rng,
    probes: &[ProbeRegion],
    target: Option<usize>,
    zero_timings: bool,
) -> Result<(Tensor, MetricsRecord)> {
    let matched;
    let pipe = match target {
        Some(l) => {
            let m = sensing.forward(cube, &mut rng.clone())?;
            let rm = rate_match(pipeline, &m.data, l)?;
            let mut cfg = pipeline.config.clone();
            cfg.codec.q = rm.q;
            matched = ScPipeline::new(cfg)?;
            &matched
        }
        None => pipeline,
    };
    let run = pipe.run(cube, sensing, channel, rng)?;
    let mut record = run.record;
    record.se = quality(&run.estimate, cube, probes)?.se;
    if zero_timings {
        record.timings.iter_mut().for_each(|t| t.1 = 0.0);
    }
    Ok((run.estimate, record))
}

/// Parameters from the experiment's params directory, checked against the data.
pub fn load_params(exp: &Experiment, sensing: &SensingModel) -> Result<NetworkParams> {
    let dir = exp.params_dir();
    if !dir.is_dir() {
        return Err(CliError::MissingParams(dir));
    }
    let params = NetworkParams::load_embedded(&dir)?;
    check_compat(&params.arch, sensing, exp.cube_dims())?;
    Ok(params)
}

fn band(cube: &Tensor, b: usize) -> Vec<f64> {
    let c = cube.dims()[2];
    cube.data().iter().skip(b).step_by(c).map(|&v| v as f64).collect()
}

struct Dumper<'a> {
    exp: &'a Experiment,
    images: PathBuf,
    recon: PathBuf,
    written: Vec<PathBuf>,
}

impl<'a> Dumper<'a> {
    fn new(exp: &'a Experiment) -> Result<Self> {
        let d = Self {
            exp,
            images: exp.out.join("images"),
            recon: exp.out.join("recon"),
            written: Vec::new(),
        };
        if exp.spec.sweep.dump_images {
            mkdir(&d.images)?;
        }
        if exp.spec.sweep.save_cubes {
            mkdir(&d.recon)?;
        }
        Ok(d)
    }

    fn dump(&mut self, stem: &str, cube: &Tensor) -> Result<()> {
        let sweep = &self.exp.spec.sweep;
        let (h, w, c) = cube.cube_dims()?;
        if sweep.dump_images {
            for &b in sweep.dump_bands.iter().filter(|&&b| b < c) {
                let path = self.images.join(format!("{stem}_band{b}.pgm"));
                write_pgm(&path, &band(cube, b), h, w)?;
                self.written.push(path);
            }
        }
        if sweep.save_cubes {
            let path = self.recon.join(format!("{stem}.ict"));
            write_tensor(cube, &path)?;
            self.written.push(path);
        }
        Ok(())
    }
}

fn record_header(probes: &[ProbeRegion]) -> Vec<String> {
    let mut h = strings(&["scheme", "snr_db", "dcr", "psnr_db", "ssim"]);
    h.extend(probes.iter().map(|p| format!("se_probe_{}", p.name)));
    h.push("total_ms".into());
    h
}

fn record_row(r: &MetricsRecord) -> Vec<String> {
    let mut row = vec![r.scheme.clone(), r.snr_db.clone(), cell(r.dcr), cell(r.psnr_db), cell(r.ssim)];
    row.extend(r.se.iter().map(|(_, v)| cell(*v)));
    row.push(cell(r.total_ms()));
    row
}

/// Averaged records per (SNR, scheme), evaluating every scheme on the same
/// per-scene noise streams.
fn snr_records(exp: &Experiment, grid: &[Snr], schemes: &[Scheme], dump: bool) -> Result<(Vec<MetricsRecord>, Vec<PathBuf>)> {
    if grid.is_empty() {
        return Err(CliError::EmptyGrid("snr"));
    }
    if schemes.is_empty() {
        return Err(CliError::EmptyGrid("scheme"));
    }
    let sensing = exp.sensing()?;
    let cubes = exp.eval_set()?;
    if cubes.is_empty() {
        return Err(CliError::EmptyGrid("evaluation scene"));
    }
    let params = match schemes.contains(&Scheme::Icci) || exp.spec.sweep.rate_match {
        true => Some(load_params(exp, &sensing)?),
        false => None,
    };
    let sc = match schemes.contains(&Scheme::Sc) {
        true => Some(ScPipeline::new(exp.baseline()?)?),
        false => None,
    };
    let target = match (exp.spec.sweep.rate_match, &params) {
        (true, Some(p)) => Some(p.arch.symbol_count()),
        _ => None,
    };
    let probes = &exp.spec.data.probes;
    let base = exp.channel()?;
    let mut dumper = Dumper::new(exp)?;
    if dump {
        for (i, cube) in cubes.iter().enumerate() {
            dumper.dump(&format!("ref_scene{i}"), cube)?;
        }
    }
    let mut out = Vec::new();
    for snr in grid {
        let channel = base.with_snr(*snr);
        for &scheme in schemes {
            let mut recs = Vec::with_capacity(cubes.len());
            for (i, cube) in cubes.iter().enumerate() {
                let mut rng = Rng::new(derive_seed(exp.seed, STREAM_EVAL_NOISE, i as u64));
                let (est, rec) = match scheme {
                    Scheme::Icci => icci_scene(
                        params.as_ref().expect("loaded for icci"),
                        &sensing,
                        cube,
                        &channel,
                        &mut rng,
                        probes,
                        exp.deterministic,
                    )?,
                    Scheme::Sc => sc_scene(
                        sc.as_ref().expect("built for sc"),
                        &sensing,
                        cube,
                        &channel,
                        &mut rng,
                        probes,
                        target,
                        exp.deterministic,
                    )?,
                };
                if dump {
                    dumper.dump(&format!("{}_snr{}_scene{i}", scheme.name(), snr.label()), &est)?;
                }
                recs.push(rec);
            }
            out.push(MetricsRecord::average(&recs).expect("nonempty"));
        }
    }
    Ok((out, dumper.written))
}

fn run_sweep_snr(exp: &Experiment) -> Result<Outcome> {
    let sweep = &exp.spec.sweep;
    let (recs, mut written) = snr_records(exp, &sweep.snr_db, &sweep.schemes, true)?;
    let path = exp.out.join("sweep_snr.csv");
    let rows: Vec<_> = recs.iter().map(record_row).collect();
    write_csv(&path, &record_header(&exp.spec.data.probes), &rows)?;
    written.push(path);
    Ok(Outcome { written, summary: None })
}

/// ICCI on the evaluation set at the configured channel.
fn run_eval(exp: &Experiment) -> Result<Outcome> {
    let snr = exp.channel()?.snr_db;
    let (recs, _) = snr_records(exp, &[snr], &[Scheme::Icci], false)?;
    let path = exp.out.join("eval.csv");
    let rows: Vec<_> = recs.iter().map(record_row).collect();
    write_csv(&path, &record_header(&exp.spec.data.probes), &rows)?;
    Ok(Outcome {
        written: vec![path],
        summary: None,
    })
}

/// Trains `arch` on the experiment data and writes the parameters,
/// `history.csv` and `train_summary.csv` into `dir`.
fn train_into(exp: &Experiment, data: &Datasets, sensing: &SensingModel, arch: &ArchConfig, dir: &Path) -> Result<(NetworkParams, Vec<PathBuf>)> {
    if data.train.is_empty() {
        return Err(CliError::EmptyGrid("training scene"));
    }
    check_compat(arch, sensing, exp.cube_dims())?;
    let mut cfg = exp.train_config()?;
    if exp.spec.channel.is_some() {
        let randomize = exp.spec.train.is_some() && cfg.randomize_snr;
        cfg = cfg.with_channel(exp.channel()?);
        cfg.randomize_snr = randomize;
    }
    let channel = cfg.channel.clone();
    let ckpt = (cfg.ckpt_interval > 0).then(|| dir.join("ckpt"));
    let eval_seed = derive_seed(exp.seed, STREAM_EVAL_NOISE, 0);
    let init = NetworkParams::init(arch, cfg.seed)?;
    let before = match data.val.is_empty() {
        true => None,
        false => Some(evaluate(&init, sensing, &data.val, &channel, eval_seed)?.0),
    };
    let mut t = Trainer::new(init, sensing, &data.train, &data.val, cfg)?;
    t.run(ckpt.as_deref())?;
    let params_dir = dir.join("params");
    t.params.save(&params_dir)?;
    let history = dir.join("history.csv");
    fs::write(&history, t.history.to_csv(t.steps_per_epoch())).map_err(|e| CliError::io(&history, e))?;
    let after = match data.val.is_empty() {
        true => None,
        false => Some(evaluate(&t.params, sensing, &data.val, &channel, eval_seed)?.0),
    };
    let n = t.history.losses.len();
    let w = 20.min(n);
    let ma = |s| t.history.moving_average(s, w).unwrap_or(f64::NAN);
    let summary = dir.join("train_summary.csv");
    let opt = |v: Option<f64>| cell(v.unwrap_or(f64::NAN));
    write_csv(
        &summary,
        &strings(&["steps", "initial_val_psnr", "final_val_psnr", "loss_ma_start", "loss_ma_end"]),
        &[vec![n.to_string(), opt(before), opt(after), cell(ma(0)), cell(ma(n - w))]],
    )?;
    Ok((t.params, vec![params_dir, history, summary]))
}

fn run_train(exp: &Experiment) -> Result<Outcome> {
    let data = exp.datasets()?;
    let sensing = exp.sensing()?;
    let arch = exp.arch(&sensing, None)?;
    let dir = exp.params_dir();
    let parent = dir.parent().map(Path::to_path_buf).unwrap_or_else(|| exp.out.clone());
    mkdir(&parent)?;
    let (params, mut written) = train_into(exp, &data, &sensing, &arch, &exp.out)?;
    if dir != exp.out.join("params") {
        params.save(&dir)?;
        written.push(dir);
    }
    Ok(Outcome { written, summary: None })
}

fn run_sweep_dcr(exp: &Experiment) -> Result<Outcome> {
    let sweep = &exp.spec.sweep;
    if sweep.dcr.is_empty() {
        return Err(CliError::EmptyGrid("dcr"));
    }
    let sensing = exp.sensing()?;
    let cubes = exp.eval_set()?;
    if cubes.is_empty() {
        return Err(CliError::EmptyGrid("evaluation scene"));
    }
    let channel = exp.channel()?.with_snr(sweep.dcr_snr_db);
    let sc = match sweep.schemes.contains(&Scheme::Sc) {
        true => Some(ScPipeline::new(exp.baseline()?)?),
        false => None,
    };
    let mut data = None;
    let mut written = Vec::new();
    let mut rows = Vec::new();
    for &target in &sweep.dcr {
        let arch = exp.arch(&sensing, Some(target))?;
        let dir = exp.out.join("dcr").join(format!("{target}"));
        let params_dir = dir.join("params");
        let params = if params_dir.is_dir() {
            NetworkParams::load(&params_dir, &arch)?
        } else {
            mkdir(&dir)?;
            if data.is_none() {
                data = Some(exp.datasets()?);
            }
            let (p, w) = train_into(exp, data.as_ref().expect("loaded"), &sensing, &arch, &dir)?;
            written.extend(w);
            p
        };
        for &scheme in &sweep.schemes {
            let mut recs = Vec::new();
            for (i, cube) in cubes.iter().enumerate() {
                let mut rng = Rng::new(derive_seed(exp.seed, STREAM_EVAL_NOISE, i as u64));
                let probes = &exp.spec.data.probes;
                let rec = match scheme {
                    Scheme::Icci => icci_scene(&params, &sensing, cube, &channel, &mut rng, probes, exp.deterministic)?.1,
                    Scheme::Sc => {
                        let sc = sc.as_ref().expect("built for sc");
                        let l = Some(arch.symbol_count());
                        sc_scene(sc, &sensing, cube, &channel, &mut rng, probes, l, exp.deterministic)?.1
                    }
                };
                recs.push(rec);
            }
            let r = MetricsRecord::average(&recs).expect("nonempty");
            rows.push(vec![
                r.scheme.clone(),
                cell(target),
                cell(r.dcr),
                cell(r.psnr_db),
                cell(r.ssim),
                cell(r.total_ms()),
            ]);
        }
    }
    let path = exp.out.join("sweep_dcr.csv");
    write_csv(&path, &strings(&["scheme", "target_dcr", "dcr", "psnr_db", "ssim", "total_ms"]), &rows)?;
    written.push(path);
    Ok(Outcome { written, summary: None })
}

/// SC over the SNR grid with BER and per-stage timings.
fn run_baseline(exp: &Experiment) -> Result<Outcome> {
    let (recs, _) = snr_records(exp, &exp.spec.sweep.snr_db, &[Scheme::Sc], false)?;
    let mut header = strings(&["scheme", "snr_db", "dcr", "psnr_db", "ssim", "ber"]);
    header.extend(recs[0].timings.iter().map(|(k, _)| format!("{k}_ms")));
    let rows: Vec<_> = recs
        .iter()
        .map(|r| {
            let mut row = vec![
                r.scheme.clone(),
                r.snr_db.clone(),
                cell(r.dcr),
                cell(r.psnr_db),
                cell(r.ssim),
                cell(r.ber.unwrap_or(f64::NAN)),
            ];
            row.extend(r.timings.iter().map(|(_, v)| cell(*v)));
            row
        })
        .collect();
    let path = exp.out.join("baseline.csv");
    write_csv(&path, &header, &rows)?;
    Ok(Outcome {
        written: vec![path],
        summary: None,
    })
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
}

/// The configured ISI channel, or a two-tap link with cubic distortion.
fn bench_channel(exp: &Experiment) -> Result<ChannelSpec> {
    match &exp.spec.channel {
        Some(_) => {
            let ch = exp.channel()?;
            match ch.family {
                ChannelFamily::Isi => Ok(ch),
                _ => Err(CliError::Spec("equalizer bench needs an isi channel".into())),
            }
        }
        None => Ok(ChannelSpec::isi(Snr::Db(15.0), vec![1.0, 0.3], 0.1)),
    }
}

fn run_equalizer_bench(exp: &Experiment) -> Result<Outcome> {
    let bench = &exp.spec.bench;
    if bench.snr_db.is_empty() {
        return Err(CliError::EmptyGrid("snr"));
    }
    if bench.format.domain() != Domain::Real {
        return Err(CliError::Spec(format!("equalizer bench needs a real format, got {}", bench.format.name())));
    }
    let base = bench_channel(exp)?;
    let mut bit_rng = Rng::new(derive_seed(exp.seed, STREAM_BENCH_BITS, 0));
    let bits: Vec<u8> = (0..bench.symbols * bench.format.bits_per_symbol())
        .map(|_| (bit_rng.next_u64() & 1) as u8)
        .collect();
    let sent = modulate(&bits, bench.format)?;
    let s = sent.to_reals();
    let p = bench.cdan.pilot_count(s.len());
    let data: Vec<usize> = (p..s.len()).collect();
    let zero = exp.deterministic;
    let mut rows = Vec::new();
    for (j, &snr) in bench.snr_db.iter().enumerate() {
        let channel = base.with_snr(Snr::Db(snr));
        let mut rng = Rng::new(derive_seed(exp.seed, STREAM_BENCH_CHANNEL, j as u64));
        let r = apply_channel(&sent, &channel, &mut rng)?.stream.to_reals();
        let snr = cell(snr);
        rows.push(vec!["none".into(), snr.clone(), cell(mse(&r[p..], &s[p..])), cell(0.0), cell(0.0)]);

        let t = Instant::now();
        let ffe = Ffe::train(&r, &s[..p], bench.taps)?;
        let train_ms = elapsed_ms(t, zero);
        let t = Instant::now();
        let z = ffe.apply(&r);
        let apply_ms = elapsed_ms(t, zero);
        rows.push(vec![
            format!("ffe-{}", bench.taps),
            snr.clone(),
            cell(mse(&z[p..], &s[p..])),
            cell(train_ms),
            cell(apply_ms),
        ]);

        let t = Instant::now();
        let cdan = Cdan::train(&r, &s[..p], &bench.cdan)?;
        let train_ms = elapsed_ms(t, zero);
        let t = Instant::now();
        let z = cdan.apply_at(&r, &data);
        let apply_ms = elapsed_ms(t, zero);
        rows.push(vec!["cdan".into(), snr, cell(mse(&z, &s[p..])), cell(train_ms), cell(apply_ms)]);
    }
    let path = exp.out.join("equalizer_bench.csv");
    write_csv(&path, &strings(&["equalizer", "snr_db", "symbol_mse", "train_ms", "apply_ms"]), &rows)?;
    Ok(Outcome {
        written: vec![path],
        summary: None,
    })
}
