use icci_core::channel::{apply_channel, ChannelSpec, Snr, SymbolStream};
use icci_core::Rng;
use icci_sc::equalizer::{cdan_equalize, ffe_equalize, window, Cdan, CdanConfig, Ffe, CDAN_WINDOW, FFE_TAPS};
use icci_sc::modulation::{modulate, ModFormat};
use icci_sc::ScError;

fn pam4(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    let bits: Vec<u8> = (0..2 * n).map(|_| (rng.next_u64() & 1) as u8).collect();
    modulate(&bits, ModFormat::Pam4).unwrap().to_reals()
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

#[test]
fn ffe_identity_channel() {
    let s = pam4(2000, 1);
    let ffe = Ffe::train(&s, &s[..500], FFE_TAPS).unwrap();
    let c = FFE_TAPS / 2;
    assert!((ffe.taps[c] - 1.0).abs() < 1e-3);
    assert!(ffe.taps.iter().enumerate().all(|(i, t)| i == c || t.abs() < 1e-3));
    assert!(mse(&ffe.apply(&s), &s) <= 1e-3);
}

#[test]
fn ffe_inverts_gain() {
    let s = pam4(2000, 2);
    let r: Vec<f64> = s.iter().map(|x| 2.0 * x).collect();
    let z = ffe_equalize(&r, &s[..1000], FFE_TAPS).unwrap();
    for (a, b) in z.iter().zip(&s) {
        assert!((a - b).abs() <= 0.01 * b.abs().max(1e-9), "{a} vs {b}");
    }
}

#[test]
fn ffe_reduces_three_tap_isi() {
    let s = pam4(4000, 3);
    let spec = ChannelSpec::isi(Snr::Db(25.0), vec![1.0, 0.4, 0.2], 0.0);
    let r = apply_channel(&SymbolStream::Real(s.clone()), &spec, &mut Rng::new(4))
        .unwrap()
        .stream
        .to_reals();
    let z = ffe_equalize(&r, &s[..1000], FFE_TAPS).unwrap();
    let (pre, post) = (mse(&r[1000..], &s[1000..]), mse(&z[1000..], &s[1000..]));
    assert!(post < pre, "{post} vs {pre}");
}

#[test]
fn ffe_rejects_bad_settings() {
    let s = pam4(100, 5);
    assert!(matches!(ffe_equalize(&s, &s[..60], 61), Err(ScError::TooFewPilots { .. })));
    assert!(ffe_equalize(&s, &s[..80], 60).is_err());
}

#[test]
fn window_centers_the_current_symbol() {
    let r: Vec<f64> = (0..300).map(|v| v as f64).collect();
    let w = window(&r, 150, CDAN_WINDOW);
    assert_eq!(w.len(), 121);
    assert_eq!(w[60], 150.0);
    assert_eq!(w[0], 90.0);
    assert_eq!(w[120], 210.0);
    let edge = window(&r, 0, CDAN_WINDOW);
    assert!(edge[..60].iter().all(|&v| v == 0.0));
    assert_eq!(edge[60], 0.0);
    assert_eq!(edge[61], 1.0);
}

#[test]
fn cdan_identity_channel() {
    let s = pam4(200_000, 6);
    let cfg = CdanConfig::default();
    let z = cdan_equalize(&s, &s, &cfg).unwrap();
    let p = cfg.pilot_count(s.len());
    let held = mse(&z[p..], &s[p..]);
    eprintln!("identity held-out mse {held:.5}");
    assert!(held <= 1e-2, "{held}");
}

#[test]
fn cdan_rejects_short_streams() {
    let s = pam4(100, 7);
    assert!(matches!(
        Cdan::train(&s, &s, &CdanConfig::default()),
        Err(ScError::StreamTooShort { len: 100, min: 121 })
    ));
}

#[test]
fn cdan_beats_ffe_on_nonlinear_isi() {
    let s = pam4(1_000_000, 8);
    let spec = ChannelSpec::isi(Snr::Db(15.0), vec![1.0, 0.3], 0.1);
    let r = apply_channel(&SymbolStream::Real(s.clone()), &spec, &mut Rng::new(9))
        .unwrap()
        .stream
        .to_reals();
    let cfg = CdanConfig::default();
    let p = cfg.pilot_count(s.len());
    let zc = cdan_equalize(&r, &s, &cfg).unwrap();
    let zf = ffe_equalize(&r, &s[..p], FFE_TAPS).unwrap();
    let (mc, mf) = (mse(&zc[p..], &s[p..]), mse(&zf[p..], &s[p..]));
    eprintln!("cdan {mc:.5} ffe {mf:.5} ratio {:.3}", mc / mf);
    assert!(mc <= 0.8 * mf, "{mc} vs {mf}");
}
