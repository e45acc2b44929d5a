//! The weighted state constraint `⟨p, m⟩ ≤ δ` with `p = dist(·, Ω)`: slack,
//! pushback control, the η-gain estimate, the inward-cone probe and the
//! alternative constraint variants.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{inner, l2_norm, pushforward, GridDensity};
use crate::error::{Error, Result};
use crate::fields::{bisect_admissible_scale, certify_membership, Certification, Cutoff, VectorField};
use crate::flow::FlowConfig;
use crate::geometry::{Aabb, Ball, ConvexBody};
use crate::grid::Grid;
use crate::linalg::{self, Point};
use crate::schedule::ControlSchedule;

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintGeometry<const D: usize> {
    pub omega: ConvexBody<D>,
    pub omega_tilde: Ball<D>,
    pub x_omega: Point<D>,
    pub r0: f64,
    pub delta: f64,
}

impl<const D: usize> ConstraintGeometry<D> {
    pub fn new(omega: ConvexBody<D>, omega_tilde: Ball<D>, x_omega: Point<D>, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::InvalidArgument("delta must be positive".into()));
        }
        let r0 = omega.depth(&x_omega);
        if !(r0 > 0.0) {
            return Err(Error::InvalidArgument("x_omega must be an interior point of omega".into()));
        }
        let inside = match &omega {
            ConvexBody::Ball(b) => omega_tilde.contains_ball(b),
            ConvexBody::Polytope(p) => p.vertices().iter().all(|v| {
                linalg::norm2(&linalg::sub(v, &omega_tilde.center)) < omega_tilde.radius
            }),
        };
        if !inside {
            return Err(Error::InvalidArgument("omega must lie inside omega_tilde".into()));
        }
        Ok(Self {
            omega,
            omega_tilde,
            x_omega,
            r0,
            delta,
        })
    }

    /// `p(x) = dist(x, Ω)`.
    pub fn weight(&self, x: &Point<D>) -> f64 {
        self.omega.distance(x)
    }

    /// `∇p(x)`; zero on the closed body.
    pub fn weight_gradient(&self, x: &Point<D>) -> Point<D> {
        self.omega.distance_gradient(x)
    }

    pub fn weight_on(&self, grid: &Grid<D>) -> Vec<f64> {
        grid.sample(|x| self.weight(x))
    }

    /// `Ω̃(t)`: the superset dilated by `M t`.
    pub fn omega_tilde_at(&self, m_bound: f64, t: f64) -> Ball<D> {
        self.omega_tilde.dilate(m_bound * t)
    }

    /// `sup p` over a ball.
    pub fn sup_weight_on(&self, ball: &Ball<D>) -> f64 {
        match &self.omega {
            ConvexBody::Ball(b) => {
                (linalg::norm2(&linalg::sub(&b.center, &ball.center)) + ball.radius - b.radius).max(0.0)
            }
            ConvexBody::Polytope(_) => {
                // convex function: the maximum sits on the sphere
                let pts = sphere_points(ball, 4096);
                pts.iter().map(|x| self.weight(x)).fold(0.0, f64::max)
            }
        }
    }

    /// Discrete `‖p‖_{L²(ball)}` over grid nodes inside the ball.
    pub fn weight_l2_on(&self, grid: &Grid<D>, ball: &Ball<D>) -> f64 {
        let s: f64 = grid
            .nodes()
            .filter(|x| ball.distance(x) == 0.0)
            .map(|x| self.weight(&x).powi(2))
            .sum();
        (s * grid.cell_volume()).sqrt()
    }

    /// Largest `∇p(x)·(x_Ω − x) + r0` over exterior points; ≤ 0 when the
    /// uniform inward condition holds.
    pub fn uniform_condition_excess(&self, points: &[Point<D>]) -> f64 {
        points
            .iter()
            .filter(|x| !self.omega.contains(x))
            .map(|x| linalg::dot(&self.weight_gradient(x), &linalg::sub(&self.x_omega, x)) + self.r0)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn sphere_points<const D: usize>(ball: &Ball<D>, n: usize) -> Vec<Point<D>> {
    match D {
        1 => vec![
            std::array::from_fn(|_| ball.center[0] - ball.radius),
            std::array::from_fn(|_| ball.center[0] + ball.radius),
        ],
        2 => (0..n)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                let dir = [a.cos(), a.sin()];
                std::array::from_fn(|d| ball.center[d] + ball.radius * dir[d])
            })
            .collect(),
        _ => unimplemented!("sphere sampling only in one and two dimensions"),
    }
}

/// Weighted precomputed `p` on a grid, for repeated slack evaluations.
#[derive(Clone, Debug)]
pub struct SlackEvaluator {
    pub weight: Vec<f64>,
    pub cell_volume: f64,
    pub delta: f64,
}

impl SlackEvaluator {
    pub fn new<const D: usize>(geom: &ConstraintGeometry<D>, grid: &Grid<D>) -> Self {
        Self {
            weight: geom.weight_on(grid),
            cell_volume: grid.cell_volume(),
            delta: geom.delta,
        }
    }

    pub fn weighted(&self, values: &[f64]) -> f64 {
        self.weight.iter().zip(values).map(|(p, m)| p * m).sum::<f64>() * self.cell_volume
    }

    pub fn eta(&self, values: &[f64]) -> f64 {
        self.delta - self.weighted(values)
    }
}

/// `η(m) = δ − ⟨p, m⟩`.
pub fn eta<const D: usize>(geom: &ConstraintGeometry<D>, m: &GridDensity<D>) -> f64 {
    geom.delta - inner(&m.grid, &geom.weight_on(&m.grid), &m.values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintVariant {
    WeightedTail,
    UnweightedTail,
    HardSupport,
}

/// `⟨p, m⟩` for the weighted variant, the exterior mass otherwise.
pub fn constraint_value<const D: usize>(variant: ConstraintVariant, geom: &ConstraintGeometry<D>, m: &GridDensity<D>) -> f64 {
    match variant {
        ConstraintVariant::WeightedTail => geom.delta - eta(geom, m),
        ConstraintVariant::UnweightedTail | ConstraintVariant::HardSupport => {
            let s: f64 = m
                .values
                .iter()
                .enumerate()
                .filter(|(k, _)| !geom.omega.contains(&m.grid.node(*k)))
                .map(|(_, v)| v)
                .sum();
            s * m.grid.cell_volume()
        }
    }
}

pub fn is_feasible<const D: usize>(variant: ConstraintVariant, geom: &ConstraintGeometry<D>, m: &GridDensity<D>) -> bool {
    let v = constraint_value(variant, geom, m);
    match variant {
        ConstraintVariant::HardSupport => v == 0.0,
        _ => v <= geom.delta,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pushback<const D: usize> {
    pub field: VectorField<D>,
    pub strength: f64,
    pub cutoff: Cutoff<D>,
    pub certification: Certification,
}

/// `a_p = M̄ φ (x_Ω − x)` with the cutoff equal to one on `Ω̃(T)` and the
/// largest `M̄` that certifies against `m_bound` on `domain`.
pub fn build_pushback<const D: usize>(
    geom: &ConstraintGeometry<D>,
    omega_tilde_t: &Ball<D>,
    band: f64,
    m_bound: f64,
    domain: &Aabb<D>,
    spacing: f64,
) -> Result<Pushback<D>> {
    let cutoff = Cutoff::new(*omega_tilde_t, band);
    let unit = VectorField::Pushback {
        center: geom.x_omega,
        strength: 1.0,
        cutoff,
    };
    let strength = bisect_admissible_scale(&unit, domain, spacing, m_bound, 1e-8, m_bound).ok_or_else(|| {
        Error::ConstructionFailed(format!("no strength above 1e-8 certifies against M = {m_bound}"))
    })?;
    let field = unit.scaled(strength);
    let certification = certify_membership(&field, domain, spacing, m_bound);
    Ok(Pushback {
        field,
        strength,
        cutoff,
        certification,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushbackInequality {
    /// `min −∇p·a_p` over the sampled exterior points.
    pub min_decrease: f64,
    /// `M̄ r0`.
    pub bound: f64,
    pub samples: usize,
    pub ok: bool,
}

/// Samples `−∇p·a_p` on a lattice of about `target` points over `Ω̃(T)\Ω`.
pub fn pushback_inequality<const D: usize>(
    geom: &ConstraintGeometry<D>,
    pb: &Pushback<D>,
    omega_tilde_t: &Ball<D>,
    target: usize,
) -> PushbackInequality {
    let per_axis = (target as f64).powf(1.0 / D as f64).ceil() as usize;
    let lo: Point<D> = std::array::from_fn(|d| omega_tilde_t.center[d] - omega_tilde_t.radius);
    let step = 2.0 * omega_tilde_t.radius / (per_axis - 1) as f64;
    let total = per_axis.pow(D as u32);
    let vals: Vec<f64> = (0..total)
        .into_par_iter()
        .filter_map(|flat| {
            let mut rem = flat;
            let x: Point<D> = std::array::from_fn(|d| {
                let i = rem % per_axis;
                rem /= per_axis;
                lo[d] + i as f64 * step
            });
            if omega_tilde_t.distance(&x) > 0.0 || geom.omega.contains(&x) {
                return None;
            }
            Some(-linalg::dot(&geom.weight_gradient(&x), &pb.field.eval(&x)))
        })
        .collect();
    let min_decrease = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let bound = pb.strength * geom.r0;
    PushbackInequality {
        min_decrease,
        bound,
        samples: vals.len(),
        ok: !vals.is_empty() && min_decrease >= bound * (1.0 - 1e-9),
    }
}

/// `C₁ = δ M̄ r0 / (2 ‖p‖_{L∞(Ω̃(T))})`.
pub fn gain_rate<const D: usize>(geom: &ConstraintGeometry<D>, strength: f64, omega_tilde_t: &Ball<D>) -> f64 {
    geom.delta * strength * geom.r0 / (2.0 * geom.sup_weight_on(omega_tilde_t))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainCheck {
    /// Centered difference of η along the measure pushforward `⟨p∘Φ, m⟩`.
    pub finite_difference: f64,
    /// The same difference through the grid transport; carries the O(h)
    /// interpolation error of the kink of `p` and is reported only.
    pub grid_difference: f64,
    /// `−∫ (∇p·a_p) m`.
    pub integral: f64,
    pub c1: f64,
    pub relative_gap: f64,
    pub ok: bool,
}

/// Rate of change of η under the pushback, computed two ways.
pub fn eta_gain_check<const D: usize>(
    geom: &ConstraintGeometry<D>,
    m: &GridDensity<D>,
    pb: &Pushback<D>,
    omega_tilde_t: &Ball<D>,
    dt_probe: f64,
    substep: f64,
) -> Result<GainCheck> {
    let grid = m.grid;
    let p = geom.weight_on(&grid);
    let weighted = inner(&grid, &p, &m.values);
    if weighted < geom.delta / 2.0 {
        return Err(Error::RegimeViolated {
            weighted,
            half_delta: geom.delta / 2.0,
        });
    }
    let cfg = FlowConfig::new(substep.min(dt_probe), grid.domain);
    let fwd = ControlSchedule::constant(pb.field.clone(), m.time, m.time + dt_probe);
    let bwd = ControlSchedule::constant(pb.field.scaled(-1.0), m.time, m.time + dt_probe);
    let ahead = pushforward(m, &fwd, m.time + dt_probe, &cfg)?;
    let behind = pushforward(m, &bwd, m.time + dt_probe, &cfg)?;
    let grid_difference = (inner(&grid, &p, &behind.values) - inner(&grid, &p, &ahead.values)) / (2.0 * dt_probe);
    let moved = |s: &ControlSchedule<D>| -> Result<f64> {
        let parts = (0..grid.len())
            .into_par_iter()
            .filter(|&k| m.values[k] != 0.0)
            .map(|k| {
                let y = crate::flow::flow_forward(s, &grid.node(k), m.time, m.time + dt_probe, &cfg)?.endpoint;
                Ok(geom.weight(&y) * m.values[k])
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(parts.iter().sum::<f64>() * grid.cell_volume())
    };
    let fd = (moved(&bwd)? - moved(&fwd)?) / (2.0 * dt_probe);
    // ∇p jumps across ∂Ω; boundary nodes take the average of the one-sided
    // limits (half the outward normal), as the trapezoid rule does.
    let gradient = |x: &Point<D>| {
        let g = geom.weight_gradient(x);
        if linalg::norm2(&g) > 0.0 || !geom.omega.contains(x) {
            return g;
        }
        let out = linalg::sub(x, &geom.x_omega);
        let len = linalg::norm2(&out);
        if len == 0.0 {
            return g;
        }
        let probe = linalg::add(x, &linalg::scale(1e-9 / len, &out));
        if geom.weight(&probe) > 0.0 {
            linalg::scale(0.5, &geom.weight_gradient(&probe))
        } else {
            g
        }
    };
    let integral = -grid
        .nodes()
        .zip(&m.values)
        .map(|(x, v)| linalg::dot(&gradient(&x), &pb.field.eval(&x)) * v)
        .sum::<f64>()
        * grid.cell_volume();
    let c1 = gain_rate(geom, pb.strength, omega_tilde_t);
    let relative_gap = (fd - integral).abs() / integral.abs().max(f64::MIN_POSITIVE);
    Ok(GainCheck {
        finite_difference: fd,
        grid_difference,
        integral,
        c1,
        relative_gap,
        ok: relative_gap <= 1e-2 && fd >= c1 && integral >= c1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeReport {
    pub b: f64,
    /// The three candidates whose minimum is `B`.
    pub b_terms: [f64; 3],
    pub zeta: f64,
    pub epsilon: f64,
    pub radius: f64,
    /// `⟨p, ·⟩` of the pushed state at the ball center.
    pub center_weighted: f64,
    /// Smallest `δ − ⟨p, m̃⟩` over the samples.
    pub worst_margin: f64,
    pub samples: usize,
    pub all_feasible: bool,
}

/// `B = min{ √(δ/(2‖p‖₂)), δ/(4L_η), M̄ r0 δ/(4 d ‖p‖₂) }` with norms over `Ω̃(T)`.
pub fn cone_radius_factor<const D: usize>(
    geom: &ConstraintGeometry<D>,
    grid: &Grid<D>,
    strength: f64,
    omega_tilde_t: &Ball<D>,
    l_eta: f64,
) -> (f64, [f64; 3]) {
    let pl2 = geom.weight_l2_on(grid, omega_tilde_t);
    let d = geom.sup_weight_on(omega_tilde_t);
    let terms = [
        (geom.delta / (2.0 * pl2)).sqrt(),
        geom.delta / (4.0 * l_eta),
        strength * geom.r0 * geom.delta / (4.0 * d * pl2),
    ];
    (terms.iter().copied().fold(f64::INFINITY, f64::min), terms)
}

pub struct ConeProbe<'a, const D: usize> {
    pub geom: &'a ConstraintGeometry<D>,
    pub pushback: &'a Pushback<D>,
    pub omega_tilde_t: Ball<D>,
    pub l_eta: f64,
    pub horizon: f64,
    pub dt: f64,
}

impl<const D: usize> ConeProbe<'_, D> {
    /// Pushes `m` for time `epsilon` under `ζ a_p` and samples the `L²` ball
    /// of radius `ζ ε B` around the result. Sample 0 is the worst direction,
    /// a multiple of `p` on `Ω̃(T)`; the others are clamped Gaussian
    /// perturbations seeded with `seed + index`.
    pub fn run(&self, m: &GridDensity<D>, zeta: f64, epsilon: f64, n_samples: usize, seed: u64) -> Result<ConeReport> {
        let grid = m.grid;
        let (b, b_terms) = cone_radius_factor(self.geom, &grid, self.pushback.strength, &self.omega_tilde_t, self.l_eta);
        if !(zeta > 0.0 && zeta <= 1.0) {
            return Err(Error::InvalidArgument(format!("zeta = {zeta} outside (0, 1]")));
        }
        let eps_max = b.min(self.horizon - m.time);
        if !(epsilon > 0.0 && epsilon <= eps_max * (1.0 + 1e-12)) {
            return Err(Error::InvalidArgument(format!("epsilon = {epsilon} outside (0, {eps_max}]")));
        }
        let p = self.geom.weight_on(&grid);
        let w0 = inner(&grid, &p, &m.values);
        if w0 > self.geom.delta {
            return Err(Error::InvalidArgument(format!("state is infeasible: <p,m> = {w0}")));
        }
        let field = self.pushback.field.scaled(zeta);
        let sched = ControlSchedule::constant(field, m.time, m.time + epsilon);
        let cfg = FlowConfig::new(self.dt.min(epsilon), grid.domain);
        let center = pushforward(m, &sched, m.time + epsilon, &cfg)?;
        let center_weighted = inner(&grid, &p, &center.values);
        let radius = zeta * epsilon * b * (1.0 - 1e-12);
        let support: Vec<bool> = grid.nodes().map(|x| self.omega_tilde_t.distance(&x) == 0.0).collect();

        let margins: Vec<f64> = (0..n_samples)
            .into_par_iter()
            .map(|i| {
                let d = if i == 0 {
                    let dir: Vec<f64> = p.iter().zip(&support).map(|(v, s)| if *s { *v } else { 0.0 }).collect();
                    let n = l2_norm(&grid, &dir);
                    dir.iter().map(|v| v * radius / n).collect()
                } else {
                    gaussian_perturbation(&grid, &center.values, &support, radius, seed.wrapping_add(i as u64))
                };
                let pert: f64 = p.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() * grid.cell_volume();
                self.geom.delta - (center_weighted + pert)
            })
            .collect();
        let worst_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(ConeReport {
            b,
            b_terms,
            zeta,
            epsilon,
            radius,
            center_weighted,
            worst_margin,
            samples: n_samples,
            all_feasible: worst_margin > 0.0,
        })
    }
}

/// A perturbation `d` supported on `support` with `center + d ≥ 0` and
/// `‖d‖_{L²} ≤ radius`, pushed towards the sphere by repeated
/// scale-and-clamp passes.
fn gaussian_perturbation<const D: usize>(grid: &Grid<D>, center: &[f64], support: &[bool], radius: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = support
        .iter()
        .map(|s| {
            let z: f64 = StandardNormal.sample(&mut rng);
            if *s {
                z
            } else {
                0.0
            }
        })
        .collect();
    let mut d = raw;
    for _ in 0..20 {
        let n = l2_norm(grid, &d);
        if n == 0.0 {
            break;
        }
        let s = radius / n;
        for (v, c) in d.iter_mut().zip(center) {
            *v = (*v * s).max(-c);
        }
        if (l2_norm(grid, &d) - radius).abs() <= 1e-9 * radius {
            break;
        }
    }
    let n = l2_norm(grid, &d);
    if n > radius {
        let s = radius / n;
        d.iter_mut().for_each(|v| *v *= s);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polytope;

    fn geom_ball2() -> ConstraintGeometry<2> {
        ConstraintGeometry::new(ConvexBody::Ball(Ball::new([0.0, 0.0], 1.0)), Ball::new([0.0, 0.0], 2.0), [0.0, 0.0], 0.1)
            .unwrap()
    }

    #[test]
    fn weights() {
        let g = geom_ball2();
        assert_eq!(g.weight(&[0.3, 0.2]), 0.0);
        assert!((g.weight(&[2.0, 0.0]) - 1.0).abs() < 1e-15);
        let sq = Polytope::from_vertices(vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]).unwrap();
        let gs = ConstraintGeometry::new(ConvexBody::Polytope(sq), Ball::new([0.0, 0.0], 3.0), [0.0, 0.0], 0.1).unwrap();
        assert!((gs.weight(&[2.0, 2.0]) - 2f64.sqrt()).abs() < 1e-15);
        assert!((gs.r0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_geometry() {
        let big = ConvexBody::Ball(Ball::new([0.0, 0.0], 3.0));
        assert!(ConstraintGeometry::new(big, Ball::new([0.0, 0.0], 2.0), [0.0, 0.0], 0.1).is_err());
        let om = ConvexBody::Ball(Ball::new([0.0, 0.0], 1.0));
        assert!(ConstraintGeometry::new(om, Ball::new([0.0, 0.0], 2.0), [1.5, 0.0], 0.1).is_err());
    }

    #[test]
    fn uniform_condition_for_ball() {
        let g = geom_ball2();
        let pts: Vec<Point<2>> = (0..100).map(|i| [1.0 + 0.01 * i as f64, 0.3]).collect();
        assert!(g.uniform_condition_excess(&pts) <= 1e-9);
    }

    #[test]
    fn sup_weight_ball_formula() {
        let g = geom_ball2();
        assert!((g.sup_weight_on(&Ball::new([0.5, 0.0], 2.0)) - 1.5).abs() < 1e-15);
    }
}
