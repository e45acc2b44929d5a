use contlab::constraint::{
    build_pushback, constraint_value, gain_rate, is_feasible, pushback_inequality, ConstraintGeometry, ConstraintVariant,
};
use contlab::linalg;
use contlab::{Aabb, Ball, ConvexBody, Grid, GridDensity, Polytope, VectorField};
use proptest::prelude::*;

fn square() -> ConstraintGeometry<2> {
    let p = Polytope::from_vertices(vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]).unwrap();
    ConstraintGeometry::new(ConvexBody::Polytope(p), Ball::new([0.0, 0.0], 2.0), [0.0, 0.0], 0.1).unwrap()
}

fn interval() -> ConstraintGeometry<1> {
    ConstraintGeometry::new(ConvexBody::Ball(Ball::new([0.0], 1.0)), Ball::new([0.0], 1.5), [0.0], 0.01).unwrap()
}

#[test]
fn geometry_rejects_bad_inputs() {
    let body = ConvexBody::Ball(Ball::new([0.0], 1.0));
    assert!(ConstraintGeometry::new(body.clone(), Ball::new([0.0], 1.5), [0.0], 0.0).is_err());
    assert!(ConstraintGeometry::new(body.clone(), Ball::new([0.0], 1.5), [1.0], 0.1).is_err());
    assert!(ConstraintGeometry::new(body, Ball::new([0.0], 0.9), [0.0], 0.1).is_err());
}

#[test]
fn interior_depth_is_the_inscribed_radius() {
    assert!((square().r0 - 1.0).abs() < 1e-12);
    assert!((interval().r0 - 1.0).abs() < 1e-12);
}

#[test]
fn variants_separate_near_and_far_tails() {
    let g = Grid::new(Aabb::new([-3.0], [3.0]), 1.0 / 64.0).unwrap();
    let geom = interval();
    // equal exterior mass, placed at different distances from ∂Ω
    let near = GridDensity::from_values(g, g.sample(|x| if (1.0..1.1).contains(&x[0]) { 1.0 } else { 0.0 }), 0.0).unwrap();
    let far = GridDensity::from_values(g, g.sample(|x| if (1.3..1.4).contains(&x[0]) { 1.0 } else { 0.0 }), 0.0).unwrap();
    let u = |m| constraint_value(ConstraintVariant::UnweightedTail, &geom, m);
    let w = |m| constraint_value(ConstraintVariant::WeightedTail, &geom, m);
    assert!((u(&near) - u(&far)).abs() < 1e-12 + 1e-9 * u(&near));
    assert!(w(&far) > w(&near) * 3.0);
    assert!(!is_feasible(ConstraintVariant::HardSupport, &geom, &near));
    let inside = GridDensity::from_values(g, g.sample(|x| if x[0].abs() < 0.5 { 1.0 } else { 0.0 }), 0.0).unwrap();
    for v in [ConstraintVariant::WeightedTail, ConstraintVariant::UnweightedTail, ConstraintVariant::HardSupport] {
        assert!(is_feasible(v, &geom, &inside), "{v:?}");
    }
}

#[test]
fn pushback_points_inward_and_certifies() {
    let geom = interval();
    let domain = Aabb::new([-4.0], [4.0]);
    let ot = geom.omega_tilde_at(1.0, 1.0);
    let pb = build_pushback(&geom, &ot, 0.5, 1.0, &domain, 1.0 / 128.0).unwrap();
    assert!(pb.certification.ok);
    assert!(pb.strength > 0.0 && pb.strength <= 1.0);
    let ineq = pushback_inequality(&geom, &pb, &ot, 2000);
    assert!(ineq.ok, "{ineq:?}");
    // −∇p·a_p = M̄|x| on the exterior of an interval centred at x_Ω
    let x = [2.0];
    assert!((-linalg::dot(&geom.weight_gradient(&x), &pb.field.eval(&x)) - 2.0 * pb.strength).abs() < 1e-12);
    let c1 = gain_rate(&geom, pb.strength, &ot);
    assert!((c1 - geom.delta * pb.strength * geom.r0 / (2.0 * geom.sup_weight_on(&ot))).abs() < 1e-18);
    // vanishes beyond the band
    assert_eq!(pb.field.eval(&[ot.radius + 0.5 + 1e-9]), [0.0]);
}

#[test]
fn stronger_bound_gives_stronger_pushback() {
    let geom = interval();
    let domain = Aabb::new([-4.0], [4.0]);
    let ot = geom.omega_tilde_at(1.0, 1.0);
    let weak = build_pushback(&geom, &ot, 0.5, 1.0, &domain, 1.0 / 64.0).unwrap();
    let strong = build_pushback(&geom, &ot, 0.5, 2.0, &domain, 1.0 / 64.0).unwrap();
    assert!(strong.strength > weak.strength);
    assert!(matches!(strong.field, VectorField::Pushback { .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn square_distance_matches_closed_form(x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let geom = square();
        let dx = (x.abs() - 1.0).max(0.0);
        let dy = (y.abs() - 1.0).max(0.0);
        prop_assert!((geom.weight(&[x, y]) - dx.hypot(dy)).abs() < 1e-12);
    }

    #[test]
    fn weight_gradient_is_a_unit_normal_outside(x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let geom = square();
        let g = geom.weight_gradient(&[x, y]);
        if geom.weight(&[x, y]) > 1e-9 {
            prop_assert!((linalg::norm2(&g) - 1.0).abs() < 1e-9);
            // pointing away from the body: moving along it increases p at unit rate
            let s = 1e-6;
            let moved = geom.weight(&linalg::axpy(s, &g, &[x, y]));
            prop_assert!(((moved - geom.weight(&[x, y])) / s - 1.0).abs() < 1e-4);
        } else {
            prop_assert_eq!(g, [0.0, 0.0]);
        }
    }
}
