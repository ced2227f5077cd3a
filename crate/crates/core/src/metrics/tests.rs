use super::*;
use crate::tensor::box_filter;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_image(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(0.0..1.0))
}

fn smooth_image(shape: &[usize], seed: u64) -> Tensor {
    box_filter(&random_image(shape, seed), 5).unwrap()
}

/// Per-window loop with an explicitly formed 2-D Gaussian kernel.
fn ssim_oracle(a: &Tensor, b: &Tensor, cfg: &MsSsimConfig) -> f64 {
    let w = cfg.window;
    let half = (w / 2) as f64;
    let mut kernel = vec![0.0; w * w];
    for i in 0..w {
        for j in 0..w {
            let r2 = (i as f64 - half).powi(2) + (j as f64 - half).powi(2);
            kernel[i * w + j] = (-r2 / (2.0 * cfg.sigma * cfg.sigma)).exp();
        }
    }
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= total);
    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
    let (h, wd) = (a.shape()[0], a.shape()[1]);
    let mut acc = 0.0;
    let mut count = 0.0;
    for y in 0..=h - w {
        for x in 0..=wd - w {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..w {
                for j in 0..w {
                    let k = kernel[i * w + j];
                    let (u, v) = (a.get(&[y + i, x + j]), b.get(&[y + i, x + j]));
                    ma += k * u;
                    mb += k * v;
                    saa += k * u * u;
                    sbb += k * v * v;
                    sab += k * u * v;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1.0;
        }
    }
    acc / count
}

#[test]
fn psnr_examples() {
    let a = random_image(&[8, 8], 1);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    let b = a.map(|v| v + 0.1);
    assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    let c = 7.5;
    let scaled = psnr(&a.scale(c), &b.scale(c), c).unwrap();
    assert!((scaled - psnr(&a, &b, 1.0).unwrap()).abs() < 1e-9);
    assert!(matches!(psnr(&a, &Tensor::zeros(&[8, 9]), 1.0), Err(crate::Error::Dimension(_))));
}

#[test]
fn ssim_matches_window_loop_oracle() {
    let cfg = MsSsimConfig::default();
    for seed in 0..3 {
        let a = random_image(&[32, 32], seed);
        let b = a.zip_map(&random_image(&[32, 32], seed + 100), |u, v| 0.7 * u + 0.3 * v).unwrap();
        let fast = ssim(&a, &b, &cfg).unwrap();
        assert!((fast - ssim_oracle(&a, &b, &cfg)).abs() < 1e-10);
        assert_eq!(fast, ssim(&b, &a, &cfg).unwrap());
    }
}

#[test]
fn ssim_identity_and_errors() {
    let cfg = MsSsimConfig::default();
    let a = smooth_image(&[20, 24], 4);
    assert!((ssim(&a, &a, &cfg).unwrap() - 1.0).abs() < 1e-12);
    assert!(matches!(ssim(&a.crop(&[0, 0], &[10, 24]).unwrap(), &a.crop(&[0, 0], &[10, 24]).unwrap(), &cfg), Err(crate::Error::Dimension(_))));
    let v = smooth_image(&[12, 12, 12], 5);
    assert!((ms_ssim(&v, &v, &cfg).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn scale_selection() {
    let cfg = MsSsimConfig::default();
    let w = cfg.effective_weights(&[64, 64]);
    assert_eq!(w.len(), 3);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    assert!((w[0] - 0.0448 / (0.0448 + 0.2856 + 0.3001)).abs() < 1e-15);
    assert_eq!(cfg.effective_weights(&[256, 200]).len(), 5);
    assert_eq!(cfg.effective_weights(&[11, 11]), vec![1.0]);
}

#[test]
fn single_scale_ms_ssim_is_ssim() {
    let a = random_image(&[24, 24], 6);
    let b = smooth_image(&[24, 24], 6);
    let cfg = MsSsimConfig::single_scale();
    assert_eq!(ms_ssim(&a, &b, &cfg).unwrap(), ssim(&a, &b, &cfg).unwrap().max(0.0));
}

#[test]
fn ms_ssim_decreases_with_noise() {
    let cfg = MsSsimConfig::default();
    let sigmas = [0.01, 0.05, 0.1];
    let mut means = [0.0; 3];
    let mut monotone = 0;
    for trial in 0..50 {
        let a = smooth_image(&[64, 64], 1000 + trial);
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let scores: Vec<f64> = sigmas
            .iter()
            .map(|&s| {
                let n = Normal::new(0.0, s).unwrap();
                let b = Tensor::from_fn(a.shape(), |i| a.data()[i] + n.sample(&mut rng));
                ms_ssim(&a, &b, &cfg).unwrap()
            })
            .collect();
        monotone += (scores[0] > scores[1] && scores[1] > scores[2]) as usize;
        for (m, s) in means.iter_mut().zip(&scores) {
            *m += s / 50.0;
        }
    }
    assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
    assert_eq!(monotone, 50);
}

#[test]
fn downsample_averages_blocks() {
    let t = Tensor::from_vec(&[2, 4], vec![1., 3., 5., 7., 1., 3., 5., 7.]).unwrap();
    assert_eq!(downsample2(&t).unwrap().data(), &[2.0, 6.0]);
    let odd = Tensor::from_fn(&[5, 5], |i| i as f64);
    assert_eq!(downsample2(&odd).unwrap().shape(), &[2, 2]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn ms_ssim_symmetric_and_bounded(seed in 0u64..1000, mix in 0.0f64..1.0) {
        let a = smooth_image(&[48, 48], seed);
        let b = a.zip_map(&random_image(&[48, 48], seed + 1), |u, v| (1.0 - mix) * u + mix * v).unwrap();
        let cfg = MsSsimConfig::default();
        let ab = ms_ssim(&a, &b, &cfg).unwrap();
        prop_assert_eq!(ab, ms_ssim(&b, &a, &cfg).unwrap());
        prop_assert!(ab <= 1.0 + 1e-12);
        prop_assert!((ms_ssim(&a, &a, &cfg).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn otsu_bin_attains_exhaustive_maximum(seed in 0u64..1000, bins in 2usize..64) {
        let img = random_image(&[16, 16], seed).map(|v| v * v);
        let o = otsu_threshold(&img, bins).unwrap();
        let (hist, _, _) = histogram(&img, bins);
        let best = (0..bins - 1).map(|t| between_class_variance(&hist, t)).fold(f64::MIN, f64::max);
        prop_assert_eq!(o.between_variance, best);
        for t in 0..o.bin {
            prop_assert!(between_class_variance(&hist, t) < best);
        }
    }

    #[test]
    fn otsu_invariant_under_affine_rescaling(seed in 0u64..1000, shift in -8i32..8, power in -2i32..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Tensor::from_fn(&[12, 12], |_| rng.gen_range(0..64) as f64 / 64.0);
        prop_assume!(img.max() > img.min());
        let scaled = img.map(|v| v * 2f64.powi(power) + shift as f64);
        prop_assert_eq!(otsu_threshold(&img, 16).unwrap().bin, otsu_threshold(&scaled, 16).unwrap().bin);
    }

    #[test]
    fn mip_matches_column_max(seed in 0u64..1000, axis in 0usize..3) {
        let v = random_image(&[4, 5, 6], seed);
        let p = mip(&v, axis).unwrap();
        let shape = v.shape();
        for_each_index(p.shape(), |idx, flat| {
            let mut best = f64::MIN;
            for k in 0..shape[axis] {
                let mut full = idx.to_vec();
                full.insert(axis, k);
                best = best.max(v.get(&full));
            }
            assert_eq!(p.data()[flat], best);
        });
    }
}

#[test]
fn otsu_two_class_example() {
    let img = Tensor::from_fn(&[10, 10], |i| if i < 90 { 0.1 } else { 0.9 });
    let o = otsu_threshold(&img, 256).unwrap();
    assert!(o.threshold > 0.1 && o.threshold < 0.9, "{o:?}");
    assert_eq!(o.bin, 0);
    assert!((o.occupancy(&img) - 0.1).abs() < 1e-15);
    assert!(otsu_threshold(&Tensor::full(&[4, 4], 0.3), 256).is_err());
    assert!(otsu_threshold(&img, 1).is_err());
}

#[test]
fn mip_examples() {
    let mut v = Tensor::zeros(&[4, 4, 4]);
    v.set(&[1, 2, 3], 0.7);
    let p = mip(&v, 2).unwrap();
    assert_eq!(p.shape(), &[4, 4]);
    assert_eq!(p.data().iter().filter(|&&x| x != 0.0).count(), 1);
    assert_eq!(p.get(&[1, 2]), 0.7);
    assert!(matches!(mip(&v, 3), Err(crate::Error::Dimension(_))));
}
