//! Grid densities, their discrete norms, the admissible initial class, the
//! direct pushforward `m(x,s) = m̄(Ψ(x)) / det DΦ(Ψ(x))`, and the stability
//! and interpolation checks.
//!
//! Derivative norms follow the field conventions: order 1 is `Σ|∂ᵢm|`, order
//! 2 is `Σ|∂ᵢⱼm|`, and `W^{k,∞}` is the maximum over orders ≤ k of the node
//! sup. Integrals are node sums times `hⁿ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{flow_backward, FlowConfig};
use crate::geometry::Ball;
use crate::grid::Grid;
use crate::linalg::{self, Point};
use crate::schedule::ControlSchedule;
use crate::spectral;
use crate::transport::Transport;

#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity<const D: usize> {
    pub grid: Grid<D>,
    pub values: Vec<f64>,
    pub time: f64,
}

impl<const D: usize> GridDensity<D> {
    pub fn zeros(grid: Grid<D>, time: f64) -> Self {
        Self {
            values: vec![0.0; grid.len()],
            grid,
            time,
        }
    }

    pub fn from_values(grid: Grid<D>, values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} values for {} nodes", values.len(), grid.len())));
        }
        Ok(Self { grid, values, time })
    }

    pub fn mass(&self) -> f64 {
        integrate(&self.grid, &self.values)
    }

    pub fn norms(&self) -> NormReport {
        norms(&self.grid, &self.values)
    }

    /// Largest distance from a positive node to `ball` (0 when empty).
    pub fn support_excess(&self, ball: &Ball<D>) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(k, _)| ball.distance(&self.grid.node(k)))
            .fold(0.0, f64::max)
    }

    pub fn difference(&self, other: &Self) -> Result<Vec<f64>> {
        self.grid.ensure_same(&other.grid)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect())
    }
}

/// Node sum times `hⁿ`, ascending index order.
pub fn integrate<const D: usize>(grid: &Grid<D>, values: &[f64]) -> f64 {
    values.iter().sum::<f64>() * grid.cell_volume()
}

pub fn inner<const D: usize>(grid: &Grid<D>, a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * grid.cell_volume()
}

pub fn l2_norm<const D: usize>(grid: &Grid<D>, v: &[f64]) -> f64 {
    inner(grid, v, v).sqrt()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub l2: f64,
    pub h1: f64,
    pub h2: f64,
    pub w1inf: f64,
    pub w2inf: f64,
}

pub fn norms<const D: usize>(grid: &Grid<D>, v: &[f64]) -> NormReport {
    // per-node [v², |∇v|², |D²v|², sup0, sup1, sup2]
    let per: Vec<[f64; 6]> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let g = grid.gradient_at(v, k);
            let hs = grid.hessian_at(v, k);
            let g2: f64 = g.iter().map(|x| x * x).sum();
            let h2: f64 = hs.iter().flatten().map(|x| x * x).sum();
            let s1: f64 = g.iter().map(|x| x.abs()).sum();
            let s2: f64 = hs.iter().flatten().map(|x| x.abs()).sum();
            [v[k] * v[k], g2, h2, v[k].abs(), s1, s2]
        })
        .collect();
    let mut acc = [0.0f64; 3];
    let mut sup = [0.0f64; 3];
    for p in &per {
        for i in 0..3 {
            acc[i] += p[i];
            sup[i] = sup[i].max(p[3 + i]);
        }
    }
    let w = grid.cell_volume();
    let l2sq = acc[0] * w;
    let h1sq = l2sq + acc[1] * w;
    let h2sq = h1sq + acc[2] * w;
    NormReport {
        l2: l2sq.sqrt(),
        h1: h1sq.sqrt(),
        h2: h2sq.sqrt(),
        w1inf: sup[0].max(sup[1]),
        w2inf: sup[0].max(sup[1]).max(sup[2]),
    }
}

pub fn h1_norm<const D: usize>(grid: &Grid<D>, v: &[f64]) -> f64 {
    let s: f64 = (0..grid.len())
        .map(|k| {
            let g = grid.gradient_at(v, k);
            v[k] * v[k] + g.iter().map(|x| x * x).sum::<f64>()
        })
        .sum();
    (s * grid.cell_volume()).sqrt()
}

/// `A (1 − |x − c|²/r²)²` on the ball `B(c, r)`, zero outside.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuarticBump<const D: usize> {
    #[serde(with = "crate::geometry::serde_arrays")]
    pub center: Point<D>,
    pub radius: f64,
    pub amplitude: f64,
}

impl<const D: usize> QuarticBump<D> {
    pub fn value(&self, x: &Point<D>) -> f64 {
        let y = linalg::sub(x, &self.center);
        let u = 1.0 - linalg::dot(&y, &y) / (self.radius * self.radius);
        if u <= 0.0 {
            0.0
        } else {
            self.amplitude * u * u
        }
    }
}

/// Sum of quartic bumps; the empty profile is the zero density.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Profile<const D: usize> {
    pub bumps: Vec<QuarticBump<D>>,
}

impl<const D: usize> Profile<D> {
    pub fn value(&self, x: &Point<D>) -> f64 {
        self.bumps.iter().map(|b| b.value(x)).sum()
    }
}

/// Samples `profile` and checks membership in the admissible initial class:
/// nonnegative, supported in `omega_tilde`, `W^{2,∞}` and `H¹` norms ≤ `c_u`.
pub fn make_initial<const D: usize>(
    profile: &Profile<D>,
    grid: &Grid<D>,
    omega_tilde: &Ball<D>,
    c_u: f64,
) -> Result<GridDensity<D>> {
    for (i, b) in profile.bumps.iter().enumerate() {
        if b.amplitude < 0.0 || b.radius <= 0.0 {
            return Err(Error::ProfileOutOfClass(format!("bump {i} has negative amplitude or radius")));
        }
        if b.amplitude > 0.0 && !omega_tilde.contains_ball(&Ball::new(b.center, b.radius)) {
            return Err(Error::ProfileOutOfClass(format!("bump {i} support leaves the constraint superset")));
        }
    }
    let m = GridDensity {
        values: grid.sample(|x| profile.value(x)),
        grid: *grid,
        time: 0.0,
    };
    let n = m.norms();
    if n.w2inf > c_u || n.h1 > c_u {
        return Err(Error::ProfileOutOfClass(format!(
            "W2inf = {:.6e}, H1 = {:.6e} exceed the bound {c_u}",
            n.w2inf, n.h1
        )));
    }
    Ok(m)
}

/// Direct evaluation of the pushforward representation: each node is traced
/// back to time `t` through the whole schedule and `m0` is interpolated once.
/// Nodes whose characteristic leaves the box receive zero.
pub fn pushforward<const D: usize>(
    m0: &GridDensity<D>,
    schedule: &ControlSchedule<D>,
    s: f64,
    cfg: &FlowConfig<D>,
) -> Result<GridDensity<D>> {
    let t = m0.time;
    if s < t {
        return Err(Error::InvalidArgument(format!("pushforward needs t <= s, got {t} > {s}")));
    }
    let grid = m0.grid;
    let values = (0..grid.len())
        .into_par_iter()
        .map(|k| match flow_backward(schedule, &grid.node(k), t, s, cfg) {
            Ok(r) => Ok((grid.interpolate(&m0.values, &r.endpoint) * (-r.log_det).exp()).max(0.0)),
            Err(Error::EndpointOutOfBox { .. }) => Ok(0.0),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(GridDensity { grid, values, time: s })
}

/// Measured stability constants along one evolution.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// `max |‖m(s₁)−m(s₂)‖_{H¹}| / |s₁−s₂|` over consecutive time steps.
    pub time_lipschitz: f64,
    /// `max ln(‖m(s)‖_{H¹}/‖m̄‖_{H¹}) / (s−t)`, floored at zero.
    pub h1_growth: f64,
    /// `max ‖m(s;m₁)−m(s;m₂)‖_{L²} / ‖m₁−m₂‖_{L²}`.
    pub data_lipschitz: f64,
    pub ok: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityBounds {
    pub time_lipschitz: f64,
    pub h1_growth: f64,
    pub data_lipschitz: f64,
}

/// Evolves `m1` and `m2` under `schedule` from their common time to `until`
/// and measures the three stability constants; compares against `bounds`
/// when given.
pub fn check_stability<const D: usize>(
    engine: &Transport<D>,
    m1: &GridDensity<D>,
    m2: &GridDensity<D>,
    schedule: &ControlSchedule<D>,
    until: f64,
    bounds: Option<&StabilityBounds>,
) -> Result<StabilityReport> {
    m1.grid.ensure_same(&m2.grid)?;
    let grid = m1.grid;
    let t = m1.time;
    let h1_0 = h1_norm(&grid, &m1.values);
    let d0 = l2_norm(&grid, &m1.difference(m2)?);
    let mut rep = StabilityReport::default();

    let mut traj1: Vec<(f64, Vec<f64>)> = vec![(t, m1.values.clone())];
    engine.run(m1, schedule, until, |k, v| {
        traj1.push((engine.time(k), v.to_vec()));
        true
    })?;
    let mut traj2: Vec<Vec<f64>> = vec![m2.values.clone()];
    engine.run(m2, schedule, until, |_, v| {
        traj2.push(v.to_vec());
        true
    })?;

    let h1s: Vec<f64> = traj1.par_iter().map(|(_, v)| h1_norm(&grid, v)).collect();
    let steps: Vec<f64> = traj1
        .par_windows(2)
        .map(|w| {
            let diff: Vec<f64> = w[1].1.iter().zip(&w[0].1).map(|(a, b)| a - b).collect();
            h1_norm(&grid, &diff) / (w[1].0 - w[0].0)
        })
        .collect();
    rep.time_lipschitz = steps.iter().copied().fold(0.0, f64::max);
    if h1_0 > 0.0 {
        for (i, (s, _)) in traj1.iter().enumerate().skip(1) {
            rep.h1_growth = rep.h1_growth.max((h1s[i] / h1_0).ln() / (s - t));
        }
    }
    if d0 > 0.0 {
        for (a, b) in traj1.iter().zip(&traj2) {
            let diff: Vec<f64> = a.1.iter().zip(b).map(|(x, y)| x - y).collect();
            rep.data_lipschitz = rep.data_lipschitz.max(l2_norm(&grid, &diff) / d0);
        }
    }
    rep.ok = bounds.is_none_or(|b| {
        rep.time_lipschitz <= b.time_lipschitz && rep.h1_growth <= b.h1_growth && rep.data_lipschitz <= b.data_lipschitz
    });
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCheck {
    /// `‖w‖²_{H¹}`.
    pub lhs: f64,
    /// `‖w‖_{H²}·‖w‖_{L²}`.
    pub rhs: f64,
    pub ok: bool,
}

pub fn interpolation_inequality_check<const D: usize>(
    m1: &GridDensity<D>,
    m2: &GridDensity<D>,
) -> Result<InterpolationCheck> {
    let w = m1.difference(m2)?;
    Ok(interpolation_inequality(&m1.grid, &w))
}

pub fn interpolation_inequality<const D: usize>(grid: &Grid<D>, w: &[f64]) -> InterpolationCheck {
    let n = spectral::sobolev_norms_sq(grid, w, &[0.0, 1.0, 2.0]);
    let lhs = n[1];
    let rhs = n[2].sqrt() * n[0].sqrt();
    InterpolationCheck {
        lhs,
        rhs,
        ok: lhs <= rhs * (1.0 + 1e-10),
    }
}
