use contlab::flow::{flow_backward, flow_forward};
use contlab::linalg::{self, Mat, Point};
use contlab::{Aabb, ControlSchedule, FlowConfig, VectorField};
use proptest::prelude::*;

fn domain2() -> Aabb<2> {
    Aabb::new([-10.0, -10.0], [10.0, 10.0])
}

/// exp(tA) for A = [[a, -b], [b, a]].
fn spiral_exp(a: f64, b: f64, t: f64) -> Mat<2> {
    let r = (a * t).exp();
    let (s, c) = (b * t).sin_cos();
    [[r * c, -r * s], [r * s, r * c]]
}

#[test]
fn spiral_flow_matches_matrix_exponential() {
    let (a, b) = (-0.3, 1.1);
    let sched = ControlSchedule::constant(VectorField::Linear([[a, -b], [b, a]]), 0.0, 2.0);
    let cfg = FlowConfig::new(1e-3, domain2());
    let x = [0.7, -0.4];
    let r = flow_forward(&sched, &x, 0.0, 2.0, &cfg).unwrap();
    let e = spiral_exp(a, b, 2.0);
    let exact = linalg::mat_vec(&e, &x);
    assert!(linalg::norm_inf(&linalg::sub(&r.endpoint, &exact)) < 1e-10);
    assert!(linalg::mat_norm_inf(&linalg::mat_axpy(-1.0, &e, &r.jacobian)) < 1e-10);
    assert!((r.log_det - 2.0 * a * 2.0).abs() < 1e-10);
}

#[test]
fn schedule_switch_composes_flows() {
    let c1 = VectorField::Constant([0.5, 0.0]);
    let c2 = VectorField::Linear([[0.2, 0.0], [0.0, -0.1]]);
    let sched = ControlSchedule::piecewise(&[c1, c2], 0.0, 1.0).unwrap();
    let cfg = FlowConfig::new(1e-3, domain2());
    let x = [1.0, 2.0];
    let r = flow_forward(&sched, &x, 0.0, 1.0, &cfg).unwrap();
    // translate for half a unit, then scale each axis
    let mid = [x[0] + 0.25, x[1]];
    let exact = [mid[0] * (0.1f64).exp(), mid[1] * (-0.05f64).exp()];
    assert!(linalg::norm_inf(&linalg::sub(&r.endpoint, &exact)) < 1e-10);
    assert!((r.log_det - 0.5 * 0.1).abs() < 1e-10);
}

#[test]
fn rk4_error_drops_at_fourth_order() {
    let sched = ControlSchedule::constant(VectorField::Linear([[-2.0, 0.0], [0.0, -2.0]]), 0.0, 1.0);
    let x = [1.0, 0.5];
    let exact = linalg::scale((-2.0f64).exp(), &x);
    let err = |dt: f64| {
        let r = flow_forward(&sched, &x, 0.0, 1.0, &FlowConfig::new(dt, domain2())).unwrap();
        linalg::norm_inf(&linalg::sub(&r.endpoint, &exact))
    };
    let (e1, e2) = (err(0.1), err(0.05));
    assert!(e1 / e2 > 12.0, "ratio {}", e1 / e2);
}

#[test]
fn leaving_the_box_is_reported() {
    let sched = ControlSchedule::constant(VectorField::Constant([5.0]), 0.0, 1.0);
    let cfg = FlowConfig::new(1e-2, Aabb::new([-1.0], [1.0]));
    let r = flow_forward(&sched, &[0.0], 0.0, 1.0, &cfg);
    assert!(matches!(r, Err(contlab::Error::EndpointOutOfBox { .. })));
}

fn field() -> impl Strategy<Value = VectorField<2>> {
    prop_oneof![
        (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b)| VectorField::Constant([a, b])),
        prop::array::uniform4(-0.5..0.5f64).prop_map(|v| VectorField::Linear([[v[0], v[1]], [v[2], v[3]]])),
        (-1.0..1.0f64, 0.5..2.0f64, -0.5..0.5f64).prop_map(|(c, r, a)| VectorField::SmoothBump {
            center: [c, 0.0],
            radius: r,
            direction: [1.0, 0.5],
            amplitude: a,
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn backward_inverts_forward(f in field(), x in prop::array::uniform2(-2.0..2.0f64), s in 0.1..1.5f64) {
        let sched = ControlSchedule::constant(f, 0.0, 2.0);
        let cfg = FlowConfig::new(1e-2, domain2());
        let fwd = flow_forward(&sched, &x, 0.0, s, &cfg).unwrap();
        let back = flow_backward(&sched, &fwd.endpoint, 0.0, s, &cfg).unwrap();
        prop_assert!(linalg::norm_inf(&linalg::sub(&back.endpoint, &x)) < 1e-8);
        // same log-det, evaluated at the same foot
        prop_assert!((back.log_det - fwd.log_det).abs() < 1e-8);
        let prod = linalg::mat_mul(&back.jacobian, &fwd.jacobian);
        prop_assert!(linalg::mat_norm_inf(&linalg::mat_axpy(-1.0, &linalg::identity(), &prod)) < 1e-7);
    }

    #[test]
    fn log_det_matches_jacobian(f in field(), x in prop::array::uniform2(-2.0..2.0f64)) {
        let sched = ControlSchedule::constant(f, 0.0, 1.0);
        let r = flow_forward(&sched, &x, 0.0, 1.0, &FlowConfig::new(1e-2, domain2())).unwrap();
        prop_assert!((r.log_det.exp() - linalg::det(&r.jacobian)).abs() < 1e-8 * r.log_det.exp().max(1.0));
    }

    #[test]
    fn constant_fields_translate(c in prop::array::uniform2(-1.0..1.0f64), x in prop::array::uniform2(-2.0..2.0f64)) {
        let sched = ControlSchedule::constant(VectorField::Constant(c), 0.0, 1.0);
        let r = flow_forward(&sched, &x, 0.0, 0.8, &FlowConfig::new(0.1, domain2())).unwrap();
        let expect: Point<2> = linalg::axpy(0.8, &c, &x);
        prop_assert!(linalg::norm_inf(&linalg::sub(&r.endpoint, &expect)) < 1e-12);
    }
}
