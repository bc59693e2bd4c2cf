use proptest::prelude::*;
use srlm_core::threshold::apply;

fn vectors() -> impl Strategy<Value = Vec<f32>> {
    proptest::collection::vec(
        prop_oneof![-8.0f32..8.0, Just(0.0f32), Just(-0.0f32), (-4i32..=4).prop_map(|i| i as f32 * 0.5)],
        1..48,
    )
}

fn lambdas() -> impl Strategy<Value = f32> {
    prop_oneof![0.0f32..6.0, (0i32..=8).prop_map(|i| i as f32 * 0.5)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn keeps_at_or_above_and_zeroes_below(x in vectors(), lambda in lambdas()) {
        let y = apply(&x, lambda).unwrap();
        for (&a, &b) in x.iter().zip(y.as_slice()) {
            if a.abs() >= lambda {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            } else {
                prop_assert_eq!(b, 0.0);
            }
        }
    }

    #[test]
    fn boundary_magnitude_survives(lambda in 0.01f32..6.0) {
        let y = apply(&[lambda, -lambda, lambda.next_down()], lambda).unwrap();
        prop_assert_eq!(y.as_slice(), &[lambda, -lambda, 0.0][..]);
    }

    #[test]
    fn idempotent(x in vectors(), lambda in lambdas()) {
        let once = apply(&x, lambda).unwrap();
        let twice = apply(once.as_slice(), lambda).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn sign_equivariant(x in vectors(), lambda in lambdas()) {
        let neg: Vec<f32> = x.iter().map(|v| -v).collect();
        let a = apply(&neg, lambda).unwrap();
        let b = apply(&x, lambda).unwrap();
        for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert_eq!(*p, -*q);
        }
    }

    #[test]
    fn zero_lambda_is_identity(x in vectors()) {
        let y = apply(&x, 0.0).unwrap();
        let same = x.iter().zip(y.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn larger_lambda_never_adds_nonzeros(x in vectors(), a in lambdas(), b in lambdas()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let zeros = |l: f32| apply(&x, l).unwrap().as_slice().iter().filter(|v| **v == 0.0).count();
        prop_assert!(zeros(lo) <= zeros(hi));
    }
}

#[test]
fn rejects_negative_lambda() {
    assert!(apply(&[1.0], -0.5).is_err());
}
