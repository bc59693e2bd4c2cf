use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use srlm_core::numerics::{linear_forward, LinearMode};
use srlm_core::threshold::apply_in_place;
use srlm_core::Matrix;

#[test]
fn event_mode_is_bit_identical_to_dense() {
    let start = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(2024);
    for case in 0..1000 {
        let rows = rng.random_range(1..48);
        let cols = rng.random_range(1..48);
        let w = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0f32..1.0));
        let mut x: Vec<f32> = (0..cols).map(|_| rng.random_range(-2.0f32..2.0)).collect();
        let sparsity: f64 = rng.random();
        for v in x.iter_mut() {
            if rng.random_bool(sparsity) {
                *v = if rng.random_bool(0.5) { 0.0 } else { -0.0 };
            }
        }
        if case % 3 == 0 {
            apply_in_place(&mut x, rng.random_range(0.0..1.5));
        }
        let bias: Option<Vec<f32>> = (case % 2 == 0).then(|| (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect());
        let (dense, td) = linear_forward(&w, bias.as_deref(), &x, LinearMode::Dense).unwrap();
        let (event, te) = linear_forward(&w, bias.as_deref(), &x, LinearMode::Event).unwrap();
        for (a, b) in dense.as_slice().iter().zip(event.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits(), "case {case}");
        }
        let nonzero = x.iter().filter(|v| **v != 0.0).count() as u64;
        assert_eq!(td.mac_count, (rows * cols) as u64);
        assert_eq!(te.mac_count, nonzero * rows as u64);
        assert_eq!(te.skipped_count, cols as u64 - nonzero);
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}
