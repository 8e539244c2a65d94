use icci_core::metrics::psnr;
use icci_core::{Rng, Tensor};
use icci_sc::codec::{codec_decode, codec_encode, quantize_block, read_header, CodecConfig, BLOCK};
use icci_sc::{BitStream, ScError};
use proptest::prelude::*;

fn max_abs(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max)
}

#[test]
fn fine_quantization_is_near_lossless() {
    let data: Vec<f64> = (0..256)
        .map(|k| {
            let (i, j) = ((k / 16) as f64, (k % 16) as f64);
            0.5 + 0.3 * (i / 5.0).sin() * (j / 7.0).cos()
        })
        .collect();
    let m = Tensor::from_f64(vec![16, 16], &data).unwrap();
    let cfg = CodecConfig::new(1e-6);
    let back = codec_decode(&codec_encode(&m, &cfg).unwrap(), &cfg).unwrap();
    assert!(max_abs(&m, &back) <= 1e-3);
}

#[test]
fn constant_block_has_only_dc() {
    let block = [0.37; BLOCK * BLOCK];
    let q = quantize_block(&block, 0.01);
    assert_ne!(q[0], 0);
    assert!(q[1..].iter().all(|&v| v == 0));
    assert_eq!(q[0], (0.37f64 * 8.0 / 0.01).floor() as i64);
}

#[test]
fn finer_step_gives_higher_psnr() {
    let mut rng = Rng::new(9);
    let data: Vec<f64> = (0..256).map(|_| rng.next_uniform()).collect();
    let m = Tensor::from_f64(vec![16, 16], &data).unwrap();
    let at = |q: f64| {
        let cfg = CodecConfig::new(q);
        let bits = codec_encode(&m, &cfg).unwrap();
        (psnr(&codec_decode(&bits, &cfg).unwrap(), &m, 1.0).unwrap(), bits.len())
    };
    let (fine, fine_bits) = at(0.05);
    let (coarse, coarse_bits) = at(0.2);
    assert!(fine >= coarse, "{fine} vs {coarse}");
    assert!(fine_bits > coarse_bits);
}

#[test]
fn header_records_dims_and_range() {
    let m = Tensor::from_f64(vec![9, 13], &(0..117).map(|v| v as f64 / 10.0).collect::<Vec<_>>()).unwrap();
    let b = codec_encode(&m, &CodecConfig::default()).unwrap();
    let h = read_header(&b).unwrap();
    assert_eq!((h.height, h.width), (9, 13));
    assert_eq!((h.min, h.max), (0.0, 11.6));
}

#[test]
fn malformed_header_rejected() {
    let cfg = CodecConfig::default();
    let short = BitStream::from_bits(vec![1; 40]).unwrap();
    assert!(matches!(codec_decode(&short, &cfg), Err(ScError::MalformedBitstream(_))));
    let zeros = BitStream::from_bits(vec![0; 200]).unwrap();
    assert!(matches!(codec_decode(&zeros, &cfg), Err(ScError::MalformedBitstream(_))));
    assert!(codec_encode(&Tensor::zeros(&[4, 4]), &CodecConfig::new(0.0)).is_err());
    assert!(codec_encode(&Tensor::zeros(&[4, 4, 2]), &cfg).is_err());
}

#[test]
fn truncated_payload_decodes_best_effort() {
    let mut rng = Rng::new(3);
    let data: Vec<f64> = (0..24 * 24).map(|_| rng.next_uniform()).collect();
    let m = Tensor::from_f64(vec![24, 24], &data).unwrap();
    let cfg = CodecConfig::new(0.02);
    let mut bits = codec_encode(&m, &cfg).unwrap().into_bits();
    bits.truncate(bits.len() / 2);
    let back = codec_decode(&BitStream::from_bits(bits).unwrap(), &cfg).unwrap();
    assert_eq!(back.dims(), &[24, 24]);
    assert!(back.data().iter().all(|v| v.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn error_within_quantization_bound(
        h in 1usize..20, w in 1usize..20, q in 0.005f64..0.5, seed in any::<u64>(), scale in 0.1f64..50.0,
    ) {
        let mut rng = Rng::new(seed);
        let data: Vec<f64> = (0..h * w).map(|_| scale * rng.next_uniform()).collect();
        let m = Tensor::from_f64(vec![h, w], &data).unwrap();
        let cfg = CodecConfig::new(q);
        let back = codec_decode(&codec_encode(&m, &cfg).unwrap(), &cfg).unwrap();
        let (lo, hi) = m.min_max();
        let bound = BLOCK as f64 * q * (hi - lo) as f64 + 1e-4 * scale;
        prop_assert!(max_abs(&m, &back) <= bound);
    }

    #[test]
    fn corrupted_streams_never_panic(bits in proptest::collection::vec(0u8..2, 0..600), q in 0.01f64..1.0) {
        let b = BitStream::from_bits(bits).unwrap();
        if let Ok(t) = codec_decode(&b, &CodecConfig::new(q)) {
            prop_assert!(t.data().iter().all(|v| v.is_finite()));
        }
    }
}
