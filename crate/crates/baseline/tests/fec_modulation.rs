use icci_core::channel::{apply_awgn, Snr, SymbolStream};
use icci_core::Rng;
use icci_sc::fec::{hamming74_decode, hamming74_encode, Fec, FecConfig, LdpcCode, LdpcRate};
use icci_sc::modulation::{demodulate, modulate, ModFormat, ALL_FORMATS};
use icci_sc::BitStream;

/// Gaussian tail `Q(x)` by composite Simpson integration of the density.
fn q_function(x: f64) -> f64 {
    let (a, b, n) = (x, x + 40.0, 200_000);
    let h = (b - a) / n as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(a) + pdf(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(a + i as f64 * h);
    }
    s * h / 3.0
}

fn random_bits(n: usize, rng: &mut Rng) -> Vec<u8> {
    (0..n).map(|_| (rng.next_u64() & 1) as u8).collect()
}

#[test]
fn q_oracle_sanity() {
    assert!((q_function(0.0) - 0.5).abs() < 1e-9);
    assert!((q_function(1.0) - 0.158_655_253_9).abs() < 1e-8);
}

#[test]
fn hamming_corrects_every_single_error() {
    let mut cases = 0;
    for msg in 0..16u8 {
        let d = [(msg >> 3) & 1, (msg >> 2) & 1, (msg >> 1) & 1, msg & 1];
        let cw = hamming74_encode(d);
        assert_eq!(hamming74_decode(cw), d);
        for pos in 0..7 {
            let mut r = cw;
            r[pos] ^= 1;
            assert_eq!(hamming74_decode(r), d, "msg {msg} pos {pos}");
            cases += 1;
        }
    }
    assert_eq!(cases, 112);
}

#[test]
fn fec_streams_round_trip_with_padding() {
    let mut rng = Rng::new(1);
    for cfg in [FecConfig::Hamming74, FecConfig::ldpc(648, LdpcRate::TwoThirds, 3)] {
        let fec = Fec::new(&cfg).unwrap();
        let info = BitStream::from_bits(random_bits(1001, &mut rng)).unwrap();
        let coded = fec.encode(&info);
        assert_eq!(coded.bits.len(), fec.coded_len(1001));
        assert_eq!(coded.bits.len() % fec.n(), 0);
        let out = fec.decode_hard(&coded.bits, coded.info_len).unwrap();
        assert_eq!(out.bits, info);
        assert!(out.converged);
    }
}

#[test]
fn ldpc_clean_codewords_converge_immediately() {
    let mut rng = Rng::new(2);
    for rate in [LdpcRate::Half, LdpcRate::TwoThirds, LdpcRate::ThreeQuarters] {
        let code = LdpcCode::new(648, rate, 11, 50).unwrap();
        for _ in 0..5 {
            let info = random_bits(code.k(), &mut rng);
            let cw = code.encode(&info);
            let llr: Vec<f64> = cw.iter().map(|&b| if b == 0 { 4.0 } else { -4.0 }).collect();
            let r = code.decode(&llr);
            assert!(r.converged && r.iterations <= 2);
            assert_eq!(r.info, info);
        }
    }
}

#[test]
fn ldpc_fixes_a_few_flipped_bits() {
    let code = LdpcCode::new(648, LdpcRate::Half, 5, 50).unwrap();
    let mut rng = Rng::new(3);
    let info = random_bits(code.k(), &mut rng);
    let cw = code.encode(&info);
    let mut llr: Vec<f64> = cw.iter().map(|&b| if b == 0 { 2.0 } else { -2.0 }).collect();
    for i in [3, 100, 257, 400, 600] {
        llr[i] *= -0.5;
    }
    let r = code.decode(&llr);
    assert!(r.converged);
    assert_eq!(r.info, info);
}

#[test]
fn ldpc_rejects_bad_lengths() {
    assert!(LdpcCode::new(651, LdpcRate::Half, 0, 50).is_err());
    assert!(LdpcCode::new(648, LdpcRate::Half, 0, 0).is_err());
}

fn bpsk_ber(bits: &[u8], es_n0_db: f64, rng: &mut Rng) -> Vec<f64> {
    let s = modulate(bits, ModFormat::Bpsk).unwrap();
    let r = apply_awgn(&s, Snr::Db(es_n0_db), rng);
    demodulate(&r, ModFormat::Bpsk, Snr::Db(es_n0_db).noise_power(), None).unwrap().llrs
}

#[test]
fn uncoded_bpsk_matches_q_function() {
    let mut rng = Rng::new(4);
    let bits = random_bits(1_000_000, &mut rng);
    let llr = bpsk_ber(&bits, 0.0, &mut rng);
    let errors = llr.iter().zip(&bits).filter(|(l, b)| ((**l < 0.0) as u8) != **b).count();
    let ber = errors as f64 / bits.len() as f64;
    let oracle = q_function(2f64.sqrt());
    assert!((oracle - 0.0786).abs() < 1e-4);
    assert!((ber - oracle).abs() <= 0.05 * oracle, "{ber} vs {oracle}");
}

#[test]
fn ldpc_beats_uncoded_by_ten_at_4db() {
    let eb_n0 = 4.0;
    let fec = Fec::new(&FecConfig::ldpc(648, LdpcRate::Half, 0)).unwrap();
    let mut rng = Rng::new(5);
    let info = BitStream::from_bits(random_bits(1_000_000, &mut rng)).unwrap();
    let uncoded = bpsk_ber(info.bits(), eb_n0, &mut rng);
    let raw_errors = uncoded.iter().zip(info.bits()).filter(|(l, b)| ((**l < 0.0) as u8) != **b).count();
    let coded = fec.encode(&info);
    let es_n0 = eb_n0 + 10.0 * 0.5f64.log10();
    let llr = bpsk_ber(coded.bits.bits(), es_n0, &mut rng);
    let out = fec.decode(&llr, info.len()).unwrap();
    let coded_errors = out.bits.bits().iter().zip(info.bits()).filter(|(a, b)| a != b).count();
    let (ub, cb) = (raw_errors as f64 / 1e6, coded_errors as f64 / 1e6);
    eprintln!("uncoded {ub:.3e} coded {cb:.3e} oracle {:.3e}", q_function((2.0 * 10f64.powf(0.4)).sqrt()));
    assert!(cb <= ub / 10.0);
}

#[test]
fn modulation_round_trips_all_formats() {
    let mut rng = Rng::new(6);
    for f in ALL_FORMATS {
        let bits = random_bits(f.bits_per_symbol() * 500, &mut rng);
        let s = modulate(&bits, f).unwrap();
        assert_eq!(s.len(), 500);
        assert_eq!(s.domain(), f.domain());
        let d = demodulate(&s, f, 0.01, None).unwrap();
        assert_eq!(d.hard, bits, "{f:?}");
        assert!(modulate(&bits[1..], f).is_err() || f.bits_per_symbol() == 1);
    }
}

#[test]
fn pam4_table() {
    let s = modulate(&[0, 0, 0, 1, 1, 1, 1, 0], ModFormat::Pam4).unwrap().to_reals();
    let r5 = 5f64.sqrt();
    let want = [-3.0 / r5, -1.0 / r5, 1.0 / r5, 3.0 / r5];
    for (a, b) in s.iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn constellations_have_unit_power_and_gray_neighbours() {
    for f in ALL_FORMATS {
        let pts = f.constellation();
        let power: f64 = pts.iter().map(|(_, p)| p.norm_sqr()).sum::<f64>() / pts.len() as f64;
        assert!((power - 1.0).abs() < 1e-12, "{f:?}");
        let dmin = pts
            .iter()
            .flat_map(|(_, a)| pts.iter().map(move |(_, b)| (a - b).norm()))
            .filter(|&d| d > 1e-9)
            .fold(f64::INFINITY, f64::min);
        let mut pairs = 0;
        for (la, a) in &pts {
            for (lb, b) in &pts {
                if la < lb && ((a - b).norm() - dmin).abs() < 1e-9 {
                    assert_eq!((la ^ lb).count_ones(), 1, "{f:?} {la:b} {lb:b}");
                    pairs += 1;
                }
            }
        }
        assert!(pairs >= pts.len() - 1);
        let mut distinct: Vec<_> = pts.iter().map(|(_, p)| (p.re.to_bits(), p.im.to_bits())).collect();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct.len(), pts.len());
    }
}

#[test]
fn llr_signs_match_hard_decisions_at_high_snr() {
    let mut rng = Rng::new(7);
    for f in ALL_FORMATS {
        let bits = random_bits(f.bits_per_symbol() * 2000, &mut rng);
        let s = modulate(&bits, f).unwrap();
        let r = apply_awgn(&s, Snr::Db(40.0), &mut rng);
        let d = demodulate(&r, f, Snr::Db(40.0).noise_power(), None).unwrap();
        let signs: Vec<u8> = d.llrs.iter().map(|&l| (l < 0.0) as u8).collect();
        assert_eq!(signs, d.hard);
        assert_eq!(d.hard, bits);
    }
}

#[test]
fn demodulation_undoes_known_gains() {
    let bits = vec![0, 1, 1, 0, 1, 1];
    let s = modulate(&bits, ModFormat::Pam4).unwrap();
    let gains = [0.5, -2.0, 3.0];
    let SymbolStream::Real(v) = &s else { unreachable!() };
    let faded = SymbolStream::Real(v.iter().zip(gains).map(|(x, g)| x * g).collect());
    let d = demodulate(&faded, ModFormat::Pam4, 0.01, Some(&gains)).unwrap();
    assert_eq!(d.hard, bits);
}
