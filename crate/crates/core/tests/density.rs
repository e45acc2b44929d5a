use contlab::constraint::{eta, ConstraintGeometry, SlackEvaluator};
use contlab::density::{h1_norm, interpolation_inequality, l2_norm, make_initial};
use contlab::flow::FlowConfig;
use contlab::{Aabb, Ball, ControlSchedule, ConvexBody, Error, Grid, GridDensity, Profile, QuarticBump, Transport, VectorField};
use proptest::prelude::*;

fn line(h: f64) -> Grid<1> {
    Grid::new(Aabb::new([-3.0], [3.0]), h).unwrap()
}

fn bump(c: f64, r: f64, a: f64) -> Profile<1> {
    Profile {
        bumps: vec![QuarticBump {
            center: [c],
            radius: r,
            amplitude: a,
        }],
    }
}

// Closed forms for A(1 − y²/r²)² on the line:
//   ∫ m = 16Ar/15,  ∫ m² = 256A²r/315,  ∫ m'² = 256A²/(105 r).
#[test]
fn quartic_bump_norms_match_hand_integrals() {
    let (c, r, a) = (0.3, 0.6, 1.7);
    let g = line(1.0 / 512.0);
    let m = GridDensity::from_values(g, g.sample(|x| bump(c, r, a).value(x)), 0.0).unwrap();
    let mass = 16.0 * a * r / 15.0;
    let l2 = (256.0 * a * a * r / 315.0).sqrt();
    let h1 = (l2 * l2 + 256.0 * a * a / (105.0 * r)).sqrt();
    // the second derivative jumps at the edges: node sums converge at O(h³)
    assert!((m.mass() - mass).abs() < 1e-7 * mass);
    assert!((l2_norm(&g, &m.values) - l2).abs() < 1e-7 * l2);
    assert!((h1_norm(&g, &m.values) - h1).abs() < 1e-4 * h1);
}

#[test]
fn slack_of_a_detached_bump() {
    // Ω = [−1, 1]; a bump sitting entirely at distance c − 1 on average
    let g = line(1.0 / 256.0);
    let geom = ConstraintGeometry::new(ConvexBody::Ball(Ball::new([0.0], 1.0)), Ball::new([0.0], 2.0), [0.0], 0.5).unwrap();
    let (c, r, a) = (1.5, 0.2, 2.0);
    let m = GridDensity::from_values(g, g.sample(|x| bump(c, r, a).value(x)), 0.0).unwrap();
    let expected = 0.5 - (c - 1.0) * 16.0 * a * r / 15.0;
    assert!((eta(&geom, &m) - expected).abs() < 1e-6);
    let slack = SlackEvaluator::new(&geom, &g);
    assert_eq!(slack.eta(&m.values), eta(&geom, &m));
    // a bump inside Ω leaves the full budget
    let inside = GridDensity::from_values(g, g.sample(|x| bump(0.2, 0.5, 3.0).value(x)), 0.0).unwrap();
    assert_eq!(eta(&geom, &inside), 0.5);
}

#[test]
fn initial_class_rejects_bad_profiles() {
    let g = line(1.0 / 64.0);
    let ot = Ball::new([0.0], 1.0);
    let out = make_initial(&bump(0.9, 0.3, 1.0), &g, &ot, 100.0);
    assert!(matches!(out, Err(Error::ProfileOutOfClass(_))));
    // W^{2,∞} of the bump is 4A/r²
    let steep = make_initial(&bump(0.0, 0.1, 1.0), &g, &ot, 100.0);
    assert!(matches!(steep, Err(Error::ProfileOutOfClass(_))));
    assert!(make_initial(&bump(0.0, 0.5, 1.0), &g, &ot, 100.0).is_ok());
}

#[test]
fn interpolation_is_sharp_on_a_single_mode() {
    let g = line(1.0 / 64.0);
    let period = (g.counts[0] - 1) as f64 * g.h;
    let w = g.sample(|x| (2.0 * std::f64::consts::PI * 2.0 * (x[0] + 3.0) / period).cos());
    let c = interpolation_inequality(&g, &w);
    assert!((c.lhs - c.rhs).abs() <= 1e-10 * c.rhs);
}

#[test]
fn pushforward_and_transport_agree() {
    let g = line(1.0 / 128.0);
    let m0 = GridDensity::from_values(g, g.sample(|x| bump(0.0, 0.5, 1.0).value(x)), 0.0).unwrap();
    let sched = ControlSchedule::constant(VectorField::Linear([[0.3]]), 0.0, 1.0);
    let direct = contlab::density::pushforward(&m0, &sched, 0.5, &FlowConfig::new(1e-3, g.domain)).unwrap();
    let engine = Transport::new(g, 1e-3, 50).unwrap();
    let stepped = engine.run(&m0, &sched, 0.5, |_, _| true).unwrap();
    let err = direct.values.iter().zip(&stepped.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-3, "max difference {err}");
    // linear dilation: m(t, x) = e^{−0.3t} m0(e^{−0.3t} x)
    let s = (-0.15f64).exp();
    let exact = g.sample(|x| s * bump(0.0, 0.5, 1.0).value(&[s * x[0]]));
    let err = direct.values.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-3, "max error {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn transport_keeps_mass_and_sign(c in -0.5..0.5f64, a in -0.3..0.3f64, center in -0.5..0.5f64) {
        let g = line(1.0 / 64.0);
        let m0 = GridDensity::from_values(g, g.sample(|x| bump(center, 0.4, 1.0).value(x)), 0.0).unwrap();
        let engine = Transport::new(g, 1e-2, 10).unwrap();
        let sched = ControlSchedule::piecewise(&[VectorField::Constant([c]), VectorField::Linear([[a]])], 0.0, 1.0).unwrap();
        let mass0 = m0.mass();
        let mut worst: f64 = 0.0;
        let mut lowest = f64::INFINITY;
        engine.run(&m0, &sched, 1.0, |_, v| {
            worst = worst.max((v.iter().sum::<f64>() * g.h - mass0).abs() / mass0);
            lowest = v.iter().copied().fold(lowest, f64::min);
            true
        }).unwrap();
        prop_assert!(worst < 1e-3, "mass drift {}", worst);
        prop_assert!(lowest >= 0.0);
    }

    #[test]
    fn eta_is_affine_in_the_density(s in 0.0..3.0f64, c in 1.0..1.5f64) {
        let g = line(1.0 / 64.0);
        let geom = ConstraintGeometry::new(ConvexBody::Ball(Ball::new([0.0], 1.0)), Ball::new([0.0], 2.0), [0.0], 0.1).unwrap();
        let m = GridDensity::from_values(g, g.sample(|x| bump(c, 0.3, 1.0).value(x)), 0.0).unwrap();
        let scaled = GridDensity::from_values(g, m.values.iter().map(|v| s * v).collect(), 0.0).unwrap();
        let lhs = eta(&geom, &scaled);
        let rhs = 0.1 - s * (0.1 - eta(&geom, &m));
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }
}
