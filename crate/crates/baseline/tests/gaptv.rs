use icci_core::metrics::psnr;
use icci_core::scene::{generate_scene, SceneSpec};
use icci_core::sensing::{generate_mask, MaskPattern, SensingModel};
use icci_core::{Rng, Tensor};
use icci_sc::gaptv::{adjoint_baseline, gaptv_reconstruct, gaptv_with_trace, tv_denoise, GapTvConfig};
use icci_sc::ScError;

fn cassi(h: usize, w: usize, seed: u64) -> SensingModel {
    SensingModel::cassi(generate_mask(h, w, 1, 0.5, seed, MaskPattern::Bernoulli).unwrap(), 1, 0.0)
}

#[test]
fn identity_system_recovers_in_one_iteration() {
    let mask = generate_mask(12, 12, 1, 0.5, 0, MaskPattern::AllOnes).unwrap();
    let model = SensingModel::cassi(mask, 1, 0.0);
    let mut rng = Rng::new(1);
    let data: Vec<f64> = (0..144).map(|_| rng.next_uniform()).collect();
    let cube = Tensor::from_f64(vec![12, 12, 1], &data).unwrap();
    let y = model.forward(&cube, &mut rng).unwrap().data;
    let cfg = GapTvConfig {
        iters: 1,
        ..GapTvConfig::default()
    };
    let x = gaptv_reconstruct(&y, &model, (12, 12, 1), &cfg).unwrap();
    for (a, b) in x.data().iter().zip(cube.data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn residual_never_increases() {
    for seed in 0..4 {
        let model = cassi(16, 16, seed);
        let mut rng = Rng::new(seed + 10);
        let data: Vec<f64> = (0..16 * 16 * 4).map(|_| rng.next_uniform()).collect();
        let cube = Tensor::from_f64(vec![16, 16, 4], &data).unwrap();
        let y = model.forward(&cube, &mut rng).unwrap().data;
        let ynorm = y.to_f64().iter().map(|v| v * v).sum::<f64>().sqrt();
        let cfg = GapTvConfig {
            iters: 20,
            ..GapTvConfig::default()
        };
        let out = gaptv_with_trace(&y, &model, (16, 16, 4), &cfg).unwrap();
        for w in out.residuals.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * ynorm, "{w:?}");
        }
    }
}

#[test]
fn all_zero_mask_is_singular() {
    let mask = generate_mask(8, 8, 1, 0.5, 0, MaskPattern::AllZeros).unwrap();
    let model = SensingModel::cassi(mask, 1, 0.0);
    let y = Tensor::zeros(&[8, 9]);
    let err = gaptv_reconstruct(&y, &model, (8, 8, 2), &GapTvConfig::default()).unwrap_err();
    assert!(matches!(err, ScError::SingularMask));
}

#[test]
fn tv_denoise_flattens_noise_and_keeps_constants() {
    let flat = vec![0.3; 64];
    for v in tv_denoise(&flat, 8, 8, 0.1, 20) {
        assert!((v - 0.3).abs() < 1e-12);
    }
    let mut rng = Rng::new(2);
    let noisy: Vec<f64> = (0..64).map(|_| 0.5 + 0.1 * rng.next_gaussian()).collect();
    let tv = |x: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                if j + 1 < 8 {
                    s += (x[i * 8 + j + 1] - x[i * 8 + j]).abs();
                }
                if i + 1 < 8 {
                    s += (x[i * 8 + j + 8] - x[i * 8 + j]).abs();
                }
            }
        }
        s
    };
    let d = tv_denoise(&noisy, 8, 8, 0.05, 50);
    assert!(tv(&d) < tv(&noisy));
    let mean_in: f64 = noisy.iter().sum::<f64>() / 64.0;
    let mean_out: f64 = d.iter().sum::<f64>() / 64.0;
    assert!((mean_in - mean_out).abs() < 1e-9);
}

#[test]
fn synthetic_cassi_beats_adjoint() {
    let cube = generate_scene(&SceneSpec::spectral_blobs(64, 64, 8, 3)).unwrap();
    let model = cassi(64, 64, 5);
    let y = model.forward(&cube, &mut Rng::new(0)).unwrap().data;
    let x = gaptv_reconstruct(&y, &model, (64, 64, 8), &GapTvConfig::default()).unwrap();
    let base = adjoint_baseline(&y, &model, (64, 64, 8)).unwrap();
    let p = psnr(&x, &cube, 1.0).unwrap();
    let p0 = psnr(&base, &cube, 1.0).unwrap();
    eprintln!("gap-tv {p:.2} dB, adjoint {p0:.2} dB");
    assert!(p >= 25.0 && p >= p0 + 5.0, "{p} vs {p0}");
}
