use contlab::mcshane::{extend, Sample};
use contlab::Error;
use proptest::prelude::*;

fn samples(n: usize, l: f64) -> Vec<Sample> {
    // values of the L-Lipschitz map (x, t) ↦ L(‖x‖ + t) are consistent by construction
    (0..n)
        .map(|i| {
            let state: Vec<f64> = (0..4).map(|j| ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.6).collect();
            let time = 0.1 * i as f64;
            let norm = (state.iter().map(|v| v * v).sum::<f64>() * 0.5).sqrt();
            Sample { state, time, value: l * 0.5 * (norm + time) }
        })
        .collect()
}

#[test]
fn reproduces_the_samples() {
    let s = samples(6, 2.0);
    let e = extend(s.clone(), 2.0, 0.5).unwrap();
    for x in &s {
        assert!((e.eval(&x.state, x.time) - x.value).abs() < 1e-14);
    }
}

#[test]
fn too_small_a_constant_is_rejected() {
    let s = samples(6, 2.0);
    // the generating map has slope L/2 = 1 so anything below fails
    assert!(matches!(extend(s.clone(), 0.5, 0.5), Err(Error::InconsistentSamples { .. })));
    assert!(extend(s, 1.0, 0.5).is_ok());
}

#[test]
fn rejects_degenerate_input() {
    assert!(extend(vec![], 1.0, 1.0).is_err());
    let s = vec![
        Sample { state: vec![0.0], time: 0.0, value: 0.0 },
        Sample { state: vec![0.0, 1.0], time: 0.0, value: 0.0 },
    ];
    assert!(matches!(extend(s, 1.0, 1.0), Err(Error::GridMismatch(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extension_is_lipschitz(
        a in prop::collection::vec(-2.0..2.0f64, 4),
        b in prop::collection::vec(-2.0..2.0f64, 4),
        ta in 0.0..1.0f64,
        tb in 0.0..1.0f64,
    ) {
        let e = extend(samples(6, 2.0), 2.0, 0.5).unwrap();
        let gap = (e.eval(&a, ta) - e.eval(&b, tb)).abs();
        prop_assert!(gap <= 2.0 * e.distance(&a, ta, &b, tb) * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn extension_never_exceeds_a_cone(x in prop::collection::vec(-2.0..2.0f64, 4), t in 0.0..1.0f64) {
        let s = samples(6, 2.0);
        let e = extend(s.clone(), 2.0, 0.5).unwrap();
        let v = e.eval(&x, t);
        for smp in &s {
            prop_assert!(v <= smp.value + 2.0 * e.distance(&x, t, &smp.state, smp.time) + 1e-14);
        }
    }
}
