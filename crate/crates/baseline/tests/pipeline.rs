use icci_core::channel::{ChannelSpec, Snr};
use icci_core::metrics::psnr;
use icci_core::scene::{generate_scene, SceneSpec};
use icci_core::sensing::{generate_mask, MaskPattern, SensingModel};
use icci_core::{Rng, Tensor};
use icci_sc::codec::CodecConfig;
use icci_sc::equalizer::EqualizerConfig;
use icci_sc::fec::{FecConfig, LdpcRate};
use icci_sc::gaptv::GapTvConfig;
use icci_sc::modulation::ModFormat;
use icci_sc::pipeline::{rate_match, ScConfig, ScPipeline, STAGES};

fn setup(seed: u64) -> (Tensor, SensingModel) {
    let cube = generate_scene(&SceneSpec::spectral_blobs(32, 32, 8, seed)).unwrap();
    let mask = generate_mask(32, 32, 1, 0.5, seed + 100, MaskPattern::Bernoulli).unwrap();
    (cube, SensingModel::cassi(mask, 1, 0.0))
}

fn config(q: f64, rate: LdpcRate, modulation: ModFormat) -> ScConfig {
    ScConfig {
        codec: CodecConfig::new(q),
        fec: FecConfig::ldpc(648, rate, 0),
        modulation,
        equalizer: None,
        recon: GapTvConfig {
            iters: 60,
            ..GapTvConfig::default()
        },
    }
}

#[test]
fn transparent_link_matches_codec_only() {
    let (cube, sensing) = setup(1);
    let p = ScPipeline::new(config(0.002, LdpcRate::Half, ModFormat::Qpsk)).unwrap();
    let reference = p.codec_only(&cube, &sensing, &mut Rng::new(0)).unwrap();
    let run = p
        .run(&cube, &sensing, &ChannelSpec::awgn(Snr::Noiseless), &mut Rng::new(0))
        .unwrap();
    let (a, b) = (psnr(&reference, &cube, 1.0).unwrap(), run.record.psnr_db);
    assert!((a - b).abs() <= 1.0, "{a} vs {b}");
    assert_eq!(run.record.ber, Some(0.0));
    assert!(run.converged && !run.header_lost);
}

#[test]
fn snr_sweep_shows_a_cliff() {
    let (cube, sensing) = setup(2);
    let p = ScPipeline::new(config(0.01, LdpcRate::ThreeQuarters, ModFormat::Qam16)).unwrap();
    let psnrs: Vec<f64> = [0.0, 5.0, 10.0, 15.0, 20.0]
        .iter()
        .map(|&snr| {
            p.run(&cube, &sensing, &ChannelSpec::awgn(Snr::Db(snr)), &mut Rng::new(7))
                .unwrap()
                .record
                .psnr_db
        })
        .collect();
    eprintln!("{psnrs:?}");
    assert!(psnrs.windows(2).any(|w| w[1] - w[0] > 10.0), "{psnrs:?}");
}

#[test]
fn timings_cover_every_stage() {
    let (cube, sensing) = setup(3);
    let mut cfg = config(0.02, LdpcRate::Half, ModFormat::Pam4);
    cfg.equalizer = Some(EqualizerConfig::Ffe {
        taps: 61,
        pilot_fraction: 0.05,
    });
    let p = ScPipeline::new(cfg).unwrap();
    let channel = ChannelSpec::isi(Snr::Db(20.0), vec![1.0, 0.2], 0.0);
    let run = p.run(&cube, &sensing, &channel, &mut Rng::new(1)).unwrap();
    let t = &run.record.timings;
    assert_eq!(t.len(), STAGES.len() + 1);
    for (stage, (name, ms)) in STAGES.iter().zip(t) {
        assert_eq!(stage, name);
        assert!(*ms > 0.0, "{name}");
    }
    let sum: f64 = t[..STAGES.len()].iter().map(|(_, v)| v).sum();
    let total = run.record.total_ms();
    assert!((sum - total).abs() <= 0.05 * total, "{sum} vs {total}");
    assert!(run.pilots >= 61);
}

#[test]
fn fading_uses_known_gains() {
    let (cube, sensing) = setup(4);
    let p = ScPipeline::new(config(0.02, LdpcRate::Half, ModFormat::Pam4)).unwrap();
    let channel = ChannelSpec::slow_fading(Snr::Db(25.0), 1.0, 0.3, 16);
    let run = p.run(&cube, &sensing, &channel, &mut Rng::new(2)).unwrap();
    assert!(run.converged);
    assert_eq!(run.record.ber, Some(0.0));
}

#[test]
fn rate_matching_hits_target() {
    let (cube, sensing) = setup(5);
    let p = ScPipeline::new(config(0.05, LdpcRate::Half, ModFormat::Pam4)).unwrap();
    let m = sensing.forward(&cube, &mut Rng::new(0)).unwrap().data;
    let target = 3000;
    let r = rate_match(&p, &m, target).unwrap();
    assert!(r.within_tolerance, "{r:?}");
    assert_eq!(p.symbols_at(&m, r.q).unwrap(), r.symbols);
    let tiny = rate_match(&p, &m, 10).unwrap();
    assert!(!tiny.within_tolerance);
}

#[test]
fn config_parses_from_toml() {
    let text = r#"
        modulation = "qam16"
        [codec]
        q = 0.03
        [fec]
        scheme = "ldpc"
        rate = "2/3"
        [equalizer]
        kind = "ffe"
        taps = 31
    "#;
    let cfg = ScConfig::from_toml(text).unwrap();
    assert_eq!(cfg.modulation, ModFormat::Qam16);
    assert_eq!(cfg.fec, FecConfig::ldpc(648, LdpcRate::TwoThirds, 0));
    assert!(ScConfig::from_toml("modulation = \"qam64\"\n[fec]\nscheme = \"hamming74\"").is_err());
}
