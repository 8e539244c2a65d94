//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Pass criterion numbers as arguments to run a subset.

use std::f64::consts::PI;
use std::fs;
use std::panic::catch_unwind;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use icci_cli::runner::icci_scene;
use icci_cli::{run, Experiment, Mode, Overrides};
use icci_core::channel::{apply_awgn, apply_channel, draw_fading_gain, measured_snr_db, ChannelSpec, SymbolStream};
use icci_core::channel::{Domain, Snr};
use icci_core::metrics::{dcr, psnr, psnr_from_mse, spectral_error, ssim};
use icci_core::scene::{generate_scene, SceneSpec};
use icci_core::sensing::{generate_mask, MaskPattern, SensingModel};
use icci_core::{Rng, Tensor};
use icci_model::gradcheck::{block_gradient_check, gradient_check, BlockKind, GradCheckReport};
use icci_model::training::evaluate;
use icci_model::{compute_arch_for_dcr, ArchConfig, NetworkParams, TrainConfig, Trainer, Variant};
use icci_sc::bitstream::BitStream;
use icci_sc::codec::CodecConfig;
use icci_sc::equalizer::{cdan_equalize, ffe_equalize, CdanConfig, FFE_TAPS};
use icci_sc::fec::{hamming74_decode, hamming74_encode, Fec, FecConfig, LdpcRate};
use icci_sc::gaptv::{adjoint_baseline, gaptv_with_trace, GapTvConfig};
use icci_sc::modulation::{demodulate, modulate, ModFormat};
use icci_sc::pipeline::{ScConfig, ScPipeline};
use tempfile::TempDir;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_bits(n: usize, rng: &mut Rng) -> Vec<u8> {
    (0..n).map(|_| (rng.next_u64() & 1) as u8).collect()
}

/// Gaussian tail by Craig's form, `(1/π) ∫₀^{π/2} exp(−x² / (2 sin²θ)) dθ`,
/// with composite Simpson on 4000 panels.
fn q_function(x: f64) -> f64 {
    let n = 4000;
    let h = PI / 2.0 / n as f64;
    let f = |t: f64| if t == 0.0 { 0.0 } else { (-x * x / (2.0 * t.sin().powi(2))).exp() };
    let inner: f64 = (1..n).map(|i| f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(0.0) + inner + f(PI / 2.0)) * h / 3.0 / PI
}

/// Explicit `H` built entry by entry from the mask; rows index the
/// row-major measurement, columns the row-major cube.
fn explicit_h(model: &SensingModel, cassi: bool, dims: (usize, usize, usize)) -> (Vec<Vec<f64>>, usize) {
    let (h, w, c) = dims;
    let step = model.dispersion_step;
    let wm = if cassi { w + step * (c - 1) } else { w };
    let mut m = vec![vec![0.0; h * w * c]; h * wm];
    for i in 0..h {
        for j in 0..w {
            for b in 0..c {
                let (row, weight) = if cassi {
                    (i * wm + j + step * b, model.mask.at(i, j, 0))
                } else {
                    (i * wm + j, model.mask.at(i, j, b))
                };
                m[row][(i * w + j) * c + b] += weight as f64;
            }
        }
    }
    (m, wm)
}

fn sensing_matrix() -> Check {
    let start = Instant::now();
    let mut rng = Rng::new(1);
    let mut worst: f64 = 0.0;
    for cassi in [true, false] {
        for k in 0..20u64 {
            let h = 2 + rng.next_below(7);
            let w = 2 + rng.next_below(7);
            let c = 1 + rng.next_below(4);
            let model = if cassi {
                let step = 1 + rng.next_below(2);
                SensingModel::cassi(generate_mask(h, w, 1, 0.5, k, MaskPattern::Bernoulli).unwrap(), step, 0.0)
            } else {
                SensingModel::cacti(generate_mask(h, w, c, 0.5, k, MaskPattern::Bernoulli).unwrap(), 0.0)
            };
            let x: Vec<f64> = (0..h * w * c).map(|_| rng.next_uniform()).collect();
            let cube = Tensor::from_f64(vec![h, w, c], &x).unwrap();
            let y = model.forward(&cube, &mut rng).unwrap().data.to_f64();
            let (hm, wm) = explicit_h(&model, cassi, (h, w, c));
            if y.len() != h * wm {
                return Err(format!("measurement length {} vs {}", y.len(), h * wm));
            }
            for (row, &yv) in hm.iter().zip(&y) {
                let r: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum();
                worst = worst.max((r - yv).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-5 && secs < 5.0,
        format!("40 instances, max |Δ| {worst:.2e}, {secs:.2}s"),
    )
}

fn channel_calibration() -> Check {
    let mut rng = Rng::new(2);
    let n = 1_000_000;
    let real = SymbolStream::Real((0..n).map(|_| if rng.next_u64() & 1 == 0 { -1.0 } else { 1.0 }).collect());
    let complex = modulate(&random_bits(2 * n, &mut rng), ModFormat::Qpsk).unwrap();
    let mut details = Vec::new();
    let mut ok = true;
    for target in [0.0, 10.0, 20.0] {
        for s in [&real, &complex] {
            let r = apply_awgn(s, Snr::Db(target), &mut rng);
            let m = measured_snr_db(s, &r);
            ok &= (m - target).abs() <= 0.1;
            details.push(format!("{m:.3}"));
        }
    }
    let spec = ChannelSpec::slow_fading(Snr::Db(10.0), 1.0, 0.3, 64);
    let g: Vec<f64> = (0..n).map(|_| draw_fading_gain(&spec, &mut rng)).collect();
    let mean = g.iter().sum::<f64>() / n as f64;
    let std = (g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    ok &= (mean - 1.0).abs() <= 0.01 && (std - 0.3).abs() <= 0.01;
    ensure(
        ok,
        format!("snr dB at 0/10/20 (real, complex) {details:?}; fading mean {mean:.4} std {std:.4}"),
    )
}

fn bpsk_errors(bits: &[u8], es_n0_db: f64, rng: &mut Rng) -> Vec<f64> {
    let s = modulate(bits, ModFormat::Bpsk).unwrap();
    let r = apply_awgn(&s, Snr::Db(es_n0_db), rng);
    demodulate(&r, ModFormat::Bpsk, Snr::Db(es_n0_db).noise_power(), None).unwrap().llrs
}

fn bit_errors(llrs: &[f64], bits: &[u8]) -> usize {
    llrs.iter().zip(bits).filter(|(l, b)| ((**l < 0.0) as u8) != **b).count()
}

fn bpsk_ber() -> Check {
    let mut rng = Rng::new(3);
    let bits = random_bits(1_000_000, &mut rng);
    let mut ok = true;
    let mut details = Vec::new();
    for eb_n0 in [0.0, 2.0, 4.0, 6.0] {
        let ber = bit_errors(&bpsk_errors(&bits, eb_n0, &mut rng), &bits) as f64 / 1e6;
        let oracle = q_function((2.0 * 10f64.powf(eb_n0 / 10.0)).sqrt());
        ok &= oracle >= 1e-3 && (ber - oracle).abs() <= 0.05 * oracle;
        details.push(format!("{eb_n0} dB {ber:.3e}/{oracle:.3e}"));
    }
    ensure(ok, details.join(", "))
}

fn fec() -> Check {
    let mut corrected = 0;
    for msg in 0..16u8 {
        let d = [(msg >> 3) & 1, (msg >> 2) & 1, (msg >> 1) & 1, msg & 1];
        let cw = hamming74_encode(d);
        for pos in 0..7 {
            let mut r = cw;
            r[pos] ^= 1;
            corrected += (hamming74_decode(r) == d) as usize;
        }
    }
    let eb_n0: f64 = 4.0;
    let fec = Fec::new(&FecConfig::ldpc(648, LdpcRate::Half, 0)).map_err(|e| e.to_string())?;
    let mut rng = Rng::new(4);
    let info = BitStream::from_bits(random_bits(1_000_000, &mut rng)).unwrap();
    let raw = bit_errors(&bpsk_errors(info.bits(), eb_n0, &mut rng), info.bits());
    let coded = fec.encode(&info);
    let llr = bpsk_errors(coded.bits.bits(), eb_n0 + 10.0 * 0.5f64.log10(), &mut rng);
    let out = fec.decode(&llr, info.len()).map_err(|e| e.to_string())?;
    let errs = out.bits.bits().iter().zip(info.bits()).filter(|(a, b)| a != b).count();
    let (ub, cb) = (raw as f64 / 1e6, errs as f64 / 1e6);
    ensure(
        corrected == 112 && cb * 10.0 <= ub,
        format!("hamming {corrected}/112 corrected; ldpc 4 dB ber {cb:.2e} vs uncoded {ub:.2e}"),
    )
}

fn gaptv() -> Check {
    let cube = generate_scene(&SceneSpec::spectral_blobs(64, 64, 8, 3)).unwrap();
    let model = SensingModel::cassi(generate_mask(64, 64, 1, 0.5, 5, MaskPattern::Bernoulli).unwrap(), 1, 0.0);
    let y = model.forward(&cube, &mut Rng::new(0)).unwrap().data;
    let out = gaptv_with_trace(&y, &model, (64, 64, 8), &GapTvConfig::default()).map_err(|e| e.to_string())?;
    let base = adjoint_baseline(&y, &model, (64, 64, 8)).unwrap();
    let p = psnr(&out.estimate, &cube, 1.0).unwrap();
    let p0 = psnr(&base, &cube, 1.0).unwrap();
    let ynorm = y.to_f64().iter().map(|v| v * v).sum::<f64>().sqrt();
    let monotone = out.residuals.windows(2).all(|w| w[1] <= w[0] + 1e-9 * ynorm);
    ensure(
        p >= 25.0 && p >= p0 + 5.0 && monotone,
        format!("gap-tv {p:.2} dB, adjoint {p0:.2} dB, residual non-increasing {monotone}"),
    )
}

fn report_line(name: &str, r: &GradCheckReport) -> (bool, String) {
    let ok = r.checks.len() >= 16 && r.pass_fraction() >= 0.95;
    (ok, format!("{name} {:.0}%", 100.0 * r.pass_fraction()))
}

fn gradients() -> Check {
    let mut ok = true;
    let mut details = Vec::new();
    for (name, kind) in [("trb", BlockKind::Trb), ("ssa", BlockKind::Ssa), ("ial", BlockKind::Ial)] {
        let r = block_gradient_check(kind, [2, 8, 5, 5], 16, 1e-3, 13).map_err(|e| e.to_string())?;
        let (o, d) = report_line(name, &r);
        ok &= o;
        details.push(d);
    }
    let mut arch = ArchConfig::new(Variant::Spectral, (8, 8, 2), 9, 1, 2);
    arch.base_width = 8;
    arch.trb_count = 1;
    let r = gradient_check(&arch, &ChannelSpec::awgn(Snr::Db(10.0)), 16, 1e-3, 5, false).map_err(|e| e.to_string())?;
    let (o, d) = report_line("end-to-end", &r);
    ok &= o;
    details.push(d);
    ensure(ok, format!("{} of 16 parameters within 1e-3", details.join(", ")))
}

const TOY: (usize, usize, usize) = (32, 32, 8);
const TOY_STEPS: usize = 2000;

struct Toy {
    sensing: SensingModel,
    arch: ArchConfig,
    train: Vec<Tensor>,
    val: Vec<Tensor>,
}

fn toy() -> Toy {
    let (h, w, c) = TOY;
    let sensing = SensingModel::cassi(generate_mask(h, w, 1, 0.5, 1, MaskPattern::Bernoulli).unwrap(), 1, 0.0);
    let (_, wm) = sensing.measurement_dims(TOY);
    let choice = compute_arch_for_dcr(TOY, wm, 0.02, Domain::Real).unwrap();
    let mut arch = ArchConfig::new(Variant::Spectral, TOY, wm, choice.k, choice.c_out);
    arch.base_width = 16;
    arch.trb_count = 1;
    let scenes = |range: std::ops::Range<u64>| {
        range
            .map(|i| generate_scene(&SceneSpec::spectral_blobs(h, w, c, i)).unwrap())
            .collect()
    };
    Toy {
        sensing,
        arch,
        train: scenes(0..512),
        val: scenes(10_000..10_008),
    }
}

fn train(toy: &Toy, cfg: TrainConfig) -> Result<Trainer<'_>, String> {
    let init = NetworkParams::init(&toy.arch, cfg.seed).map_err(|e| e.to_string())?;
    let mut t = Trainer::new(init, &toy.sensing, &toy.train, &[], cfg).map_err(|e| e.to_string())?;
    t.run(None).map_err(|e| e.to_string())?;
    Ok(t)
}

fn toy_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(1000, 4, 1e-3, seed);
    cfg.max_steps = Some(TOY_STEPS);
    cfg.deterministic = true;
    cfg
}

fn end_to_end_learning() -> Check {
    let toy = toy();
    let channel = ChannelSpec::awgn(Snr::Db(20.0));
    let cfg = toy_config(1).with_channel(channel.clone());
    let init = NetworkParams::init(&toy.arch, cfg.seed).map_err(|e| e.to_string())?;
    let (before, _) = evaluate(&init, &toy.sensing, &toy.val, &channel, 5).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let t = train(&toy, cfg)?;
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let (after, _) = evaluate(&t.params, &toy.sensing, &toy.val, &channel, 5).map_err(|e| e.to_string())?;
    let n = t.history.losses.len();
    let ma0 = t.history.moving_average(0, 20).unwrap_or(f64::NAN);
    let ma1 = t.history.moving_average(n - 20, 20).unwrap_or(f64::NAN);
    ensure(
        after - before >= 6.0 && ma1 < ma0 && minutes <= 30.0,
        format!(
            "dcr {:.4}, val psnr {before:.2} -> {after:.2} dB (+{:.2}), loss ma {ma0:.5} -> {ma1:.5}, {minutes:.1} min",
            toy.arch.dcr(),
            after - before
        ),
    )
}

const SNR_GRID: [f64; 5] = [0.0, 5.0, 10.0, 15.0, 20.0];

fn robustness() -> Check {
    let toy = toy();
    let mut cfg = toy_config(2);
    cfg.randomize_snr = true;
    cfg.snr_low = 0.0;
    cfg.snr_high = 20.0;
    let t = train(&toy, cfg)?;
    let icci: Vec<f64> = SNR_GRID
        .iter()
        .map(|&s| evaluate(&t.params, &toy.sensing, &toy.val, &ChannelSpec::awgn(Snr::Db(s)), 5).map(|r| r.0))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let monotone = icci.windows(2).all(|w| w[1] >= w[0]);
    let graceful = icci[0] >= icci[4] - 8.0;

    let cube = generate_scene(&SceneSpec::spectral_blobs(32, 32, 8, 2)).unwrap();
    let sensing = SensingModel::cassi(generate_mask(32, 32, 1, 0.5, 102, MaskPattern::Bernoulli).unwrap(), 1, 0.0);
    let sc = ScPipeline::new(ScConfig {
        codec: CodecConfig::new(0.01),
        fec: FecConfig::ldpc(648, LdpcRate::ThreeQuarters, 0),
        modulation: ModFormat::Qam16,
        equalizer: None,
        recon: GapTvConfig {
            iters: 60,
            ..GapTvConfig::default()
        },
    })
    .map_err(|e| e.to_string())?;
    let sc_psnr: Vec<f64> = SNR_GRID
        .iter()
        .map(|&s| sc.run(&cube, &sensing, &ChannelSpec::awgn(Snr::Db(s)), &mut Rng::new(7)).map(|r| r.record.psnr_db))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let cliff = sc_psnr.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let fmt = |v: &[f64]| v.iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>().join("/");
    ensure(
        monotone && graceful && cliff > 10.0,
        format!(
            "icci psnr {} (monotone {monotone}, 0 dB within 8 dB of 20 dB {graceful}); sc psnr {} (largest step {cliff:.2} dB)",
            fmt(&icci),
            fmt(&sc_psnr)
        ),
    )
}

fn equalizers() -> Check {
    let mut rng = Rng::new(8);
    let s = modulate(&random_bits(2_000_000, &mut rng), ModFormat::Pam4).unwrap().to_reals();
    let spec = ChannelSpec::isi(Snr::Db(15.0), vec![1.0, 0.3], 0.1);
    let r = apply_channel(&SymbolStream::Real(s.clone()), &spec, &mut Rng::new(9))
        .map_err(|e| e.to_string())?
        .stream
        .to_reals();
    let cfg = CdanConfig::default();
    let p = cfg.pilot_count(s.len());
    let zc = cdan_equalize(&r, &s, &cfg).map_err(|e| e.to_string())?;
    let zf = ffe_equalize(&r, &s[..p], FFE_TAPS).map_err(|e| e.to_string())?;
    let mse = |z: &[f64]| z[p..].iter().zip(&s[p..]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (s.len() - p) as f64;
    let (mc, mf, mn) = (mse(&zc), mse(&zf), mse(&r));
    ensure(
        mc <= 0.8 * mf,
        format!("symbol mse cdan {mc:.5}, ffe-61 {mf:.5}, none {mn:.5} (ratio {:.3})", mc / mf),
    )
}

fn dcr_accounting() -> Check {
    let anchor = dcr(8847, (256, 256, 27));
    let exact = anchor == 8847.0 / (256.0 * 256.0 * 27.0);
    let (h, w, c) = (16, 16, 4);
    let sensing = SensingModel::cassi(generate_mask(h, w, 1, 0.5, 1, MaskPattern::Bernoulli).unwrap(), 1, 0.0);
    let (_, wm) = sensing.measurement_dims((h, w, c));
    let choice = compute_arch_for_dcr((h, w, c), wm, 0.1, Domain::Real).map_err(|e| e.to_string())?;
    let mut arch = ArchConfig::new(Variant::Spectral, (h, w, c), wm, choice.k, choice.c_out);
    arch.base_width = 8;
    arch.trb_count = 1;
    let params = NetworkParams::init(&arch, 0).map_err(|e| e.to_string())?;
    let cube = generate_scene(&SceneSpec::spectral_blobs(h, w, c, 0)).unwrap();
    let channel = ChannelSpec::awgn(Snr::Db(10.0));
    let (_, rec) = icci_scene(&params, &sensing, &cube, &channel, &mut Rng::new(0), &[], true).map_err(|e| e.to_string())?;
    let l = arch.symbol_count();
    let row_exact = rec.dcr == l as f64 / (h * w * c) as f64;
    ensure(
        exact && (anchor - 0.005).abs() <= 1e-4 && row_exact,
        format!("256x256x27 with L = 8847 -> {anchor:.6}; reported row dcr {} = {l}/{}", rec.dcr, h * w * c),
    )
}

fn metric_oracles() -> Check {
    let mut rng = Rng::new(11);
    let x: Vec<f64> = (0..16 * 16 * 3).map(|_| rng.next_uniform()).collect();
    let t = Tensor::from_f64(vec![16, 16, 3], &x).unwrap();
    let s = ssim(&t, &t).map_err(|e| e.to_string())?;
    let p = psnr_from_mse(0.01, 1.0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = 1 + rng.next_below(64);
        let a: Vec<f64> = (0..n).map(|_| rng.next_uniform()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.next_uniform()).collect();
        let oracle: f64 = a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum();
        worst = worst.max((spectral_error(&a, &b).map_err(|e| e.to_string())? - oracle).abs());
    }
    ensure(
        (s - 1.0).abs() <= 1e-9 && p == 20.0 && worst <= 1e-6,
        format!("self-ssim {s}, psnr(mse 0.01) {p}, se max deviation {worst:.1e}"),
    )
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv" || x == "ict") {
                files.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn determinism() -> Check {
    let dir = TempDir::new().unwrap();
    let base = dir.path();
    fs::write(base.join("arch.toml"), "dcr = 0.1\nbase_width = 8\ntrb_count = 1\n").unwrap();
    fs::write(base.join("train.toml"), "epochs = 1\nbatch_size = 2\nmax_steps = 4\n").unwrap();
    fs::write(
        base.join("exp.toml"),
        "name = \"determinism\"\narch = \"arch.toml\"\ntrain = \"train.toml\"\nseed = 7\n\
         [data]\nheight = 16\nwidth = 16\ndepth = 4\ntrain_scenes = 4\nval_scenes = 1\neval_scenes = 2\n\
         [sweep]\nsnr_db = [0, 10, \"noiseless\"]\ndcr = [0.1]\nsave_cubes = true\n",
    )
    .unwrap();
    let mut runs = Vec::new();
    for k in 0..2 {
        let overrides = Overrides {
            out: Some(base.join(format!("run{k}"))),
            seed: None,
            deterministic: true,
        };
        let exp = Experiment::load(&base.join("exp.toml"), &overrides).map_err(|e| e.to_string())?;
        for mode in [Mode::Train, Mode::SweepSnr, Mode::SweepDcr] {
            run(mode, &exp).map_err(|e| e.to_string())?;
        }
        runs.push(snapshot(&exp.out));
    }
    let names: Vec<&str> = runs[0].iter().map(|f| f.0.as_str()).collect();
    let cubes = names.iter().filter(|n| n.starts_with("recon")).count();
    ensure(
        runs[0] == runs[1] && names.contains(&"sweep_snr.csv") && names.contains(&"sweep_dcr.csv") && cubes > 0,
        format!("{} csv/ict files identical across runs ({cubes} reconstructions)", names.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("sensing-matrix equivalence", sensing_matrix),
        ("channel calibration", channel_calibration),
        ("uncoded bpsk ber", bpsk_ber),
        ("hamming and ldpc", fec),
        ("gap-tv reconstruction", gaptv),
        ("gradient integrity", gradients),
        ("end-to-end learning", end_to_end_learning),
        ("snr robustness and sc cliff", robustness),
        ("cdan vs ffe", equalizers),
        ("dcr accounting", dcr_accounting),
        ("metric oracles", metric_oracles),
        ("determinism", determinism),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("PASS {id:>2} {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {d} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
