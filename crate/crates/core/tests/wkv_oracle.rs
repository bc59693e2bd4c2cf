mod common;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use srlm_core::rwkv::{wkv_step, WkvState};

#[test]
fn stabilized_wkv_matches_direct_sum_over_100_seeds() {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let d = rng.random_range(1..=8);
        let t_len = rng.random_range(1..=64);
        let w: Vec<f32> = (0..d).map(|_| rng.random_range(0.01..3.0)).collect();
        let u: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ks: Vec<Vec<f32>> = (0..t_len)
            .map(|_| (0..d).map(|_| rng.random_range(-4.0..4.0)).collect())
            .collect();
        let vs: Vec<Vec<f32>> = (0..t_len)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();

        let mut state = WkvState::new(d);
        let got: Vec<Vec<f32>> = ks
            .iter()
            .zip(&vs)
            .map(|(k, v)| wkv_step(&mut state, k, v, &w, &u).unwrap().into_inner())
            .collect();

        let as64 = |m: &[Vec<f32>]| -> Vec<Vec<f64>> {
            m.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect()
        };
        let w64: Vec<f64> = w.iter().map(|&x| x as f64).collect();
        let u64_: Vec<f64> = u.iter().map(|&x| x as f64).collect();
        let want = common::wkv_direct(&as64(&ks), &as64(&vs), &w64, &u64_);

        for (g, r) in got.iter().zip(&want) {
            for (&a, &b) in g.iter().zip(r) {
                let err = (a as f64 - b).abs() / b.abs().max(1e-2);
                worst = worst.max(err);
                assert!(err < 1e-4, "seed {seed}: {a} vs {b}");
            }
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn large_keys_stay_finite() {
    let mut state = WkvState::new(1);
    for t in 0..64 {
        let k = [80.0 + t as f32];
        let out = wkv_step(&mut state, &k, &[1.5], &[0.5], &[0.3]).unwrap();
        assert!((out.as_slice()[0] - 1.5).abs() < 1e-5);
    }
}
