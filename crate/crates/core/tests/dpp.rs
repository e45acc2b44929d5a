use contlab::constraint::{ConstraintGeometry, SlackEvaluator};
use contlab::dpp::{CostModel, Problem, ScalarSpec, ETA_TOL};
use contlab::{Aabb, Ball, ControlSchedule, ConvexBody, Error, Grid, GridDensity, Profile, QuarticBump, Segment, Transport, VectorField};

struct Setup {
    engine: Transport<1>,
    cost: CostModel<1>,
    geom: ConstraintGeometry<1>,
    m0: GridDensity<1>,
}

const HORIZON: i64 = 40;

fn setup(center: f64) -> Setup {
    let grid = Grid::new(Aabb::new([-3.0], [3.0]), 1.0 / 32.0).unwrap();
    let engine = Transport::new(grid, 0.01, 5).unwrap();
    let cost = CostModel::new(
        grid,
        0.01,
        &ScalarSpec::Quadratic {
            center: vec![0.0],
            scale: 0.05,
            offset: 0.0,
        },
        &ScalarSpec::Affine {
            slope: vec![-1.0],
            offset: 0.0,
        },
    )
    .unwrap();
    let profile = Profile {
        bumps: vec![QuarticBump {
            center: [center],
            radius: 0.3,
            amplitude: 1.0,
        }],
    };
    let m0 = GridDensity::from_values(grid, grid.sample(|x| profile.value(x)), 0.0).unwrap();
    let geom = ConstraintGeometry::new(ConvexBody::Ball(Ball::new([0.0], 1.0)), Ball::new([0.0], 1.5), [0.0], 1.0).unwrap();
    Setup { engine, cost, geom, m0 }
}

fn slack(s: &Setup, delta: f64) -> SlackEvaluator {
    SlackEvaluator {
        delta,
        ..SlackEvaluator::new(&s.geom, &s.engine.grid)
    }
}

fn atlas() -> Vec<VectorField<1>> {
    vec![VectorField::Zero, VectorField::Constant([0.5]), VectorField::Constant([-0.5])]
}

/// Every schedule constant on the cells, simulated step by step and priced
/// with the trapezoid rule; infeasible ones are dropped.
fn brute_force(s: &Setup, slack: &SlackEvaluator, atlas: &[VectorField<1>], partition: &[i64]) -> Option<(f64, Vec<usize>)> {
    let cells = partition.len() - 1;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for code in 0..atlas.len().pow(cells as u32) {
        let choice: Vec<usize> = (0..cells).map(|c| code / atlas.len().pow((cells - 1 - c) as u32) % atlas.len()).collect();
        let segs = (0..cells)
            .map(|c| Segment {
                start: s.engine.time(partition[c]),
                end: s.engine.time(partition[c + 1]),
                field: atlas[choice[c]].clone(),
            })
            .collect();
        let sched = ControlSchedule::new(segs).unwrap();
        let m0 = GridDensity {
            time: s.engine.time(partition[0]),
            ..s.m0.clone()
        };
        let mut states = vec![m0.values.clone()];
        let end = s
            .engine
            .run(&m0, &sched, s.engine.time(HORIZON), |_, v| {
                states.push(v.to_vec());
                true
            })
            .unwrap();
        if states[1..].iter().any(|v| slack.eta(v) < -ETA_TOL) {
            continue;
        }
        let mut total = 0.0;
        for (c, w) in partition.windows(2).enumerate() {
            let e = s.cost.field_energy(&atlas[choice[c]]);
            for k in w[0]..w[1] {
                let i = (k - partition[0]) as usize;
                total += 0.5 * s.engine.dt * (s.cost.running(&states[i], e) + s.cost.running(&states[i + 1], e));
            }
        }
        total += s.cost.terminal(&end.values);
        if best.as_ref().is_none_or(|(v, _)| total < *v - 1e-12) {
            best = Some((total, choice));
        }
    }
    best
}

#[test]
fn exhaustive_search_matches_brute_force() {
    let s = setup(0.8);
    let atlas = atlas();
    let base = SlackEvaluator::new(&s.geom, &s.engine.grid).weighted(&s.m0.values);
    let mut optima = Vec::new();
    for factor in [1.05, 3.0, 1e3] {
        let sl = slack(&s, base * factor);
        let p = Problem {
            engine: &s.engine,
            cost: &s.cost,
            slack: &sl,
            atlas: &atlas,
            horizon: HORIZON,
        };
        for depth in [1, 2, 4] {
            let partition = p.uniform_partition(0, depth).unwrap();
            let got = p.value_on(&s.m0, &partition).unwrap();
            let (v, choice) = brute_force(&s, &sl, &atlas, &partition).expect("some feasible schedule");
            assert!((got.value - v).abs() < 1e-12, "factor {factor} depth {depth}: {} vs {v}", got.value);
            assert_eq!(got.choices, choice, "factor {factor} depth {depth}");
            assert!(!got.fallback);
            if depth == 4 {
                optima.push(got.choices);
            }
        }
    }
    // the budget binds: tight and loose budgets pick different schedules
    assert_ne!(optima[0], optima[2]);
}

#[test]
fn value_is_monotone_in_the_budget() {
    let s = setup(0.8);
    let atlas = atlas();
    let base = SlackEvaluator::new(&s.geom, &s.engine.grid).weighted(&s.m0.values);
    let mut prev = f64::INFINITY;
    for factor in [1.01, 1.2, 2.0, 8.0] {
        let sl = slack(&s, base * factor);
        let p = Problem {
            engine: &s.engine,
            cost: &s.cost,
            slack: &sl,
            atlas: &atlas,
            horizon: HORIZON,
        };
        let v = p.value(&s.m0, 4).unwrap().value;
        assert!(v <= prev + 1e-15);
        prev = v;
    }
}

#[test]
fn ties_go_to_the_first_field() {
    let s = setup(0.0);
    let sl = slack(&s, 10.0);
    let atlas = vec![VectorField::Constant([0.3]), VectorField::Constant([0.3])];
    let p = Problem {
        engine: &s.engine,
        cost: &s.cost,
        slack: &sl,
        atlas: &atlas,
        horizon: HORIZON,
    };
    assert_eq!(p.value(&s.m0, 4).unwrap().choices, vec![0; 4]);
}

#[test]
fn no_admissible_branch_falls_back_to_zero() {
    let s = setup(0.8);
    let base = SlackEvaluator::new(&s.geom, &s.engine.grid).weighted(&s.m0.values);
    let sl = slack(&s, base);
    let atlas = vec![VectorField::Constant([0.5])];
    let p = Problem {
        engine: &s.engine,
        cost: &s.cost,
        slack: &sl,
        atlas: &atlas,
        horizon: HORIZON,
    };
    let r = p.value(&s.m0, 2).unwrap();
    assert!(r.fallback);
    let zero = ControlSchedule::constant(VectorField::Zero, 0.0, s.engine.time(HORIZON));
    assert_eq!(r.value, p.cost(&s.m0, &zero).unwrap());
}

#[test]
fn infeasible_start_is_rejected() {
    let s = setup(0.8);
    let base = SlackEvaluator::new(&s.geom, &s.engine.grid).weighted(&s.m0.values);
    let sl = slack(&s, 0.5 * base);
    let atlas = atlas();
    let p = Problem {
        engine: &s.engine,
        cost: &s.cost,
        slack: &sl,
        atlas: &atlas,
        horizon: HORIZON,
    };
    assert!(matches!(p.value(&s.m0, 2), Err(Error::InfeasibleStart { .. })));
}

#[test]
fn dynamic_programming_identity_is_exact() {
    let s = setup(0.8);
    let atlas = atlas();
    let base = SlackEvaluator::new(&s.geom, &s.engine.grid).weighted(&s.m0.values);
    let sl = slack(&s, 1.3 * base);
    let p = Problem {
        engine: &s.engine,
        cost: &s.cost,
        slack: &sl,
        atlas: &atlas,
        horizon: HORIZON,
    };
    for tau in p.uniform_partition(0, 4).unwrap() {
        let c = p.dpp_check(&s.m0, 4, tau).unwrap();
        assert!(c.gap <= 1e-12, "tau {tau}: {c:?}");
    }
    assert!(p.dpp_check(&s.m0, 4, 7).is_err());
    let res = p.hjb_residual(&s.m0, 4, 0.05).unwrap();
    assert!(res.passes(1e-9), "{res:?}");
    assert_eq!(res.terminal_gap, 0.0);
}

#[test]
fn terminal_value_is_the_terminal_cost() {
    let s = setup(0.8);
    let atlas = atlas();
    let sl = slack(&s, 1.0);
    let p = Problem {
        engine: &s.engine,
        cost: &s.cost,
        slack: &sl,
        atlas: &atlas,
        horizon: HORIZON,
    };
    let m = GridDensity {
        time: s.engine.time(HORIZON),
        ..s.m0.clone()
    };
    let r = p.value_on(&m, &[HORIZON]).unwrap();
    assert_eq!(r.value, s.cost.terminal(&m.values));
    assert!(r.optimal_schedule.is_none());
}
