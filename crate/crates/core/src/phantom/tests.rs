use super::*;
use crate::metrics::otsu_threshold;
use proptest::prelude::*;

#[test]
fn seeds_are_stable_and_distinct() {
    assert_eq!(derive_seed(7, "train", 3), derive_seed(7, "train", 3));
    assert_ne!(derive_seed(7, "train", 3), derive_seed(7, "train", 4));
    assert_ne!(derive_seed(7, "train", 3), derive_seed(7, "test", 3));
    assert_ne!(derive_seed(7, "train", 3), derive_seed(8, "train", 3));
}

#[test]
fn sphere_phantom_contract() {
    let spec = SpherePhantomSpec::reference(&[48, 48, 48]);
    let a = gen_spheres(&spec, 1).unwrap();
    assert_eq!(a, gen_spheres(&spec, 1).unwrap());
    assert_ne!(a, gen_spheres(&spec, 2).unwrap());
    assert_eq!(a.shape(), &[48, 48, 48]);
    assert_eq!(a.max(), 1.0);
    assert!(a.min() >= 0.0);
}

#[test]
fn reference_draws_stay_in_range() {
    let spec = SpherePhantomSpec::reference(&[128, 128, 128]);
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = draw_spheres(&spec, &mut rng).unwrap();
        assert!((25..=50).contains(&s.len()));
        for sp in &s {
            assert!((5.0..=10.0).contains(&sp.radius));
            assert!((1.0..=5.0).contains(&sp.magnitude));
            assert!(sp.center.iter().all(|&c| (0.0..128.0).contains(&c)));
        }
    }
}

#[test]
fn degenerate_specs_rejected() {
    let mut s = SpherePhantomSpec::reference(&[32, 32]);
    s.radius = (5.0, 20.0);
    assert!(gen_spheres(&s, 0).is_err());
    let mut s = SpherePhantomSpec::reference(&[32, 32]);
    s.count = (3, 2);
    assert!(gen_spheres(&s, 0).is_err());
    let mut s = SpherePhantomSpec::reference(&[32, 32]);
    s.smoothing = 4;
    assert!(gen_spheres(&s, 0).is_err());
    let mut v = VesselPhantomSpec::default_for(&[32, 32]);
    v.radius = (0.5, 1.0);
    assert!(gen_vessels(&v, 0).is_err());
}

#[test]
fn overlapping_spheres_take_the_max() {
    let s = [
        Sphere { center: vec![5.0, 5.0], radius: 3.0, magnitude: 2.0 },
        Sphere { center: vec![6.0, 5.0], radius: 3.0, magnitude: 1.0 },
    ];
    let t = rasterize_spheres(&[12, 12], &s);
    assert_eq!(t.get(&[5, 5]), 2.0);
    assert_eq!(t.get(&[9, 5]), 1.0);
    assert_eq!(t.get(&[0, 0]), 0.0);
}

#[test]
fn vessels() {
    let mut spec = VesselPhantomSpec::default_for(&[64, 64]);
    let a = gen_vessels(&spec, 3).unwrap();
    assert_eq!(a, gen_vessels(&spec, 3).unwrap());
    assert_eq!(a.max(), 1.0);
    spec.branches = (0, 0);
    assert_eq!(gen_vessels(&spec, 3).unwrap().max_abs(), 0.0);
    let v3 = gen_vessels(&VesselPhantomSpec::default_for(&[24, 24, 24]), 4).unwrap();
    assert_eq!(v3.shape(), &[24, 24, 24]);
}

#[test]
fn vessel_occupancy_is_sparse() {
    let spec = VesselPhantomSpec::default_for(&[64, 64]);
    let mut total = 0.0;
    for seed in 0..100 {
        let v = gen_vessels(&spec, seed).unwrap();
        total += otsu_threshold(&v, 256).unwrap().occupancy(&v);
    }
    let mean = total / 100.0;
    println!("mean vessel occupancy {mean:.4}");
    assert!((0.01..=0.08).contains(&mean), "{mean}");
}

#[test]
fn zero_rotation_full_crop_is_identity() {
    let v = gen_spheres(&SpherePhantomSpec::reference(&[24, 24, 24]), 5).unwrap();
    assert_eq!(augment_rotate_crop(&v, &[0.0, 0.0, 0.0], &[24, 24, 24], 1).unwrap(), v);
    assert!(matches!(augment_rotate_crop(&v, &[0.0; 3], &[25, 24, 24], 1), Err(crate::Error::Dimension(_))));
}

#[test]
fn quarter_turn_is_a_permutation() {
    let n = 9;
    let mut l = Tensor::zeros(&[n, n]);
    for i in 1..7 {
        l.set(&[i, 2], 1.0);
    }
    for j in 2..6 {
        l.set(&[6, j], 0.5);
    }
    let r = rotate(&l, &[90.0]).unwrap();
    for i in 0..n {
        for j in 0..n {
            assert_eq!(r.get(&[i, j]), l.get(&[j, n - 1 - i]));
        }
    }
    let back = rotate(&r, &[-90.0]).unwrap();
    assert_eq!(back, l);
    let v = Tensor::from_fn(&[5, 5, 5], |i| i as f64);
    let r3 = rotate(&v, &[0.0, 0.0, 90.0]).unwrap();
    for k in 0..5 {
        assert_eq!(r3.get(&[1, 2, k]), v.get(&[2, 3, k]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn rotation_stays_within_input_range(seed in 0u64..1000, angle in -180.0f64..180.0) {
        let v = gen_spheres(&SpherePhantomSpec { count: (2, 4), radius: (2.0, 4.0), ..SpherePhantomSpec::reference(&[20, 20]) }, seed).unwrap();
        let out = augment_rotate_crop(&v, &[angle], &[16, 16], seed).unwrap();
        prop_assert!(out.min() >= 0.0);
        prop_assert!(out.max() <= v.max() + 1e-12);
    }

    #[test]
    fn smoothing_never_raises_the_maximum(seed in 0u64..1000) {
        let spec = SpherePhantomSpec { count: (1, 5), radius: (1.0, 4.0), ..SpherePhantomSpec::reference(&[16, 16]) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = rasterize_spheres(&spec.extents, &draw_spheres(&spec, &mut rng).unwrap());
        prop_assert!(box_filter(&raw, 5).unwrap().max() <= raw.max() * (1.0 + 1e-15));
        let out = gen_spheres(&spec, seed).unwrap();
        prop_assert!(out.min() >= 0.0 && out.max() <= 1.0);
    }
}
