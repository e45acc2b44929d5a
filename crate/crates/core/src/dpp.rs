//! Costs, the constrained value function by exhaustive search over
//! piecewise-constant atlas schedules, the dynamic programming check,
//! HJB residuals along optimal branches, and an empirical Lipschitz probe.
//!
//! Controls are constant on the cells of a fixed time partition. The value
//! at a partition point enumerates every atlas field on every remaining cell
//! and discards branches whose slack drops below `-ETA_TOL` at any time step.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraint::SlackEvaluator;
use crate::density::{inner, l2_norm, GridDensity};
use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::geometry::Ball;
use crate::grid::Grid;
use crate::linalg::{self, Point};
use crate::schedule::{ControlSchedule, Segment};
use crate::transport::{Evolution, Transport};

/// Slack tolerance shared by admissibility checks and certificates.
pub const ETA_TOL: f64 = 1e-9;

/// Analytic scalar functions used for cost weights and test functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarSpec {
    Zero,
    Constant { value: f64 },
    Affine { slope: Vec<f64>, offset: f64 },
    /// `scale · |x − center|² + offset`.
    Quadratic { center: Vec<f64>, scale: f64, offset: f64 },
    /// `amplitude · (1 − |x − center|²/radius²)₊²`.
    Bump { center: Vec<f64>, radius: f64, amplitude: f64 },
    /// `amplitude · exp(−|x − center|²/(2 width²))`.
    Gaussian { center: Vec<f64>, width: f64, amplitude: f64 },
}

impl ScalarSpec {
    fn vec<const D: usize>(v: &[f64]) -> Point<D> {
        std::array::from_fn(|i| v.get(i).copied().unwrap_or(0.0))
    }

    pub fn value<const D: usize>(&self, x: &Point<D>) -> f64 {
        match self {
            ScalarSpec::Zero => 0.0,
            ScalarSpec::Constant { value } => *value,
            ScalarSpec::Affine { slope, offset } => linalg::dot(&Self::vec::<D>(slope), x) + offset,
            ScalarSpec::Quadratic { center, scale, offset } => {
                let y = linalg::sub(x, &Self::vec::<D>(center));
                scale * linalg::dot(&y, &y) + offset
            }
            ScalarSpec::Bump { center, radius, amplitude } => {
                let y = linalg::sub(x, &Self::vec::<D>(center));
                let u = 1.0 - linalg::dot(&y, &y) / (radius * radius);
                if u > 0.0 {
                    amplitude * u * u
                } else {
                    0.0
                }
            }
            ScalarSpec::Gaussian { center, width, amplitude } => {
                let y = linalg::sub(x, &Self::vec::<D>(center));
                amplitude * (-linalg::dot(&y, &y) / (2.0 * width * width)).exp()
            }
        }
    }

    pub fn gradient<const D: usize>(&self, x: &Point<D>) -> Point<D> {
        match self {
            ScalarSpec::Zero | ScalarSpec::Constant { .. } => [0.0; D],
            ScalarSpec::Affine { slope, .. } => Self::vec::<D>(slope),
            ScalarSpec::Quadratic { center, scale, .. } => {
                linalg::scale(2.0 * scale, &linalg::sub(x, &Self::vec::<D>(center)))
            }
            ScalarSpec::Bump { center, radius, amplitude } => {
                let y = linalg::sub(x, &Self::vec::<D>(center));
                let r2 = radius * radius;
                let u = 1.0 - linalg::dot(&y, &y) / r2;
                if u > 0.0 {
                    linalg::scale(-4.0 * amplitude * u / r2, &y)
                } else {
                    [0.0; D]
                }
            }
            ScalarSpec::Gaussian { center, width, .. } => {
                let y = linalg::sub(x, &Self::vec::<D>(center));
                linalg::scale(-self.value(x) / (width * width), &y)
            }
        }
    }

    /// Node samples, shifted up by the negative part of their minimum.
    pub fn sample_nonnegative<const D: usize>(&self, grid: &Grid<D>) -> Vec<f64> {
        let v = grid.sample(|x| self.value(x));
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        if lo < 0.0 {
            v.iter().map(|x| x - lo).collect()
        } else {
            v
        }
    }
}

/// `ℓ(m, a) = c_a ‖a‖²_{L²} + ⟨g, m⟩`, `ψ(m) = ⟨h_ψ, m⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostModel<const D: usize> {
    pub grid: Grid<D>,
    pub control_weight: f64,
    pub running_weight: Vec<f64>,
    pub terminal_weight: Vec<f64>,
}

impl<const D: usize> CostModel<D> {
    pub fn new(grid: Grid<D>, control_weight: f64, g: &ScalarSpec, h_psi: &ScalarSpec) -> Result<Self> {
        if control_weight < 0.0 {
            return Err(Error::InvalidArgument("control weight must be nonnegative".into()));
        }
        Ok(Self {
            grid,
            control_weight,
            running_weight: g.sample_nonnegative(&grid),
            terminal_weight: h_psi.sample_nonnegative(&grid),
        })
    }

    /// Discrete `‖a‖²_{L²}` over the box.
    pub fn field_energy(&self, a: &VectorField<D>) -> f64 {
        if *a == VectorField::Zero {
            return 0.0;
        }
        self.grid
            .nodes()
            .map(|x| {
                let v = a.eval(&x);
                linalg::dot(&v, &v)
            })
            .sum::<f64>()
            * self.grid.cell_volume()
    }

    pub fn running(&self, values: &[f64], energy: f64) -> f64 {
        self.control_weight * energy + inner(&self.grid, &self.running_weight, values)
    }

    pub fn terminal(&self, values: &[f64]) -> f64 {
        inner(&self.grid, &self.terminal_weight, values)
    }

    /// `L_ℓ = ‖g‖_{L²}`.
    pub fn running_lipschitz(&self) -> f64 {
        l2_norm(&self.grid, &self.running_weight)
    }

    /// `L_ψ = ‖h_ψ‖_{L²}`.
    pub fn terminal_lipschitz(&self) -> f64 {
        l2_norm(&self.grid, &self.terminal_weight)
    }

    /// Bounds `(N_ℓ, N_ψ)` on densities supported in `support` with sup-norm
    /// at most `sup_bound`.
    pub fn bounds(&self, atlas: &[VectorField<D>], support: &Ball<D>, sup_bound: f64) -> (f64, f64) {
        let sup_on = |w: &[f64]| {
            self.grid
                .nodes()
                .zip(w)
                .filter(|(x, _)| support.distance(x) <= 2.0 * self.grid.h)
                .map(|(_, v)| v.abs())
                .fold(0.0, f64::max)
        };
        let mass = sup_bound * support.dilate(2.0 * self.grid.h).measure();
        let e = atlas.iter().map(|a| self.field_energy(a)).fold(0.0, f64::max);
        (
            self.control_weight * e + sup_on(&self.running_weight) * mass,
            sup_on(&self.terminal_weight) * mass,
        )
    }
}

/// Everything needed to simulate, price and constrain trajectories.
pub struct Problem<'a, const D: usize> {
    pub engine: &'a Transport<D>,
    pub cost: &'a CostModel<D>,
    pub slack: &'a SlackEvaluator,
    pub atlas: &'a [VectorField<D>],
    /// Step index of the horizon `T`.
    pub horizon: i64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TreeStats {
    pub expanded: u64,
    pub pruned: u64,
}

#[derive(Clone, Debug)]
pub struct ValueResult<const D: usize> {
    pub value: f64,
    /// Atlas indices along the optimal branch, one per cell.
    pub choices: Vec<usize>,
    /// `None` when the start is the terminal time.
    pub optimal_schedule: Option<ControlSchedule<D>>,
    pub stats: TreeStats,
    /// True when no branch was admissible and the zero control was used.
    pub fallback: bool,
}

struct Counters {
    expanded: AtomicU64,
    pruned: AtomicU64,
}

impl<const D: usize> Problem<'_, D> {
    /// Partition `t0 = s₀ < … < s_d = T` into `d` equal cells.
    pub fn uniform_partition(&self, t0: i64, depth: usize) -> Result<Vec<i64>> {
        let span = self.horizon - t0;
        if depth == 0 || span <= 0 || span % depth as i64 != 0 {
            return Err(Error::InvalidArgument(format!(
                "{span} steps cannot be split into {depth} equal segments"
            )));
        }
        let len = span / depth as i64;
        Ok((0..=depth as i64).map(|i| t0 + i * len).collect())
    }

    /// Runs one cell under `field`, returning its trapezoid running cost, or
    /// `None` when the slack leaves the admissible range.
    pub fn run_cell(&self, evo: &mut Evolution<'_, D>, field: &VectorField<D>, until: i64, prune: bool) -> Option<f64> {
        let energy = self.cost.field_energy(field);
        let dt = self.engine.dt;
        let mut prev = self.cost.running(evo.values(), energy);
        let mut acc = 0.0;
        while evo.step_index() < until {
            let v = evo.step(field);
            if prune && self.slack.eta(v) < -ETA_TOL {
                return None;
            }
            let cur = self.cost.running(v, energy);
            acc += 0.5 * dt * (prev + cur);
            prev = cur;
        }
        Some(acc)
    }

    /// Cost of `schedule` from `m0` to the horizon (no admissibility check).
    pub fn cost(&self, m0: &GridDensity<D>, schedule: &ControlSchedule<D>) -> Result<f64> {
        let k0 = self.engine.step_of(m0.time)?;
        let mut evo = self.engine.evolution(m0.values.clone(), k0);
        let mut total = 0.0;
        let mut k = k0;
        for (field, len) in self.engine.pieces(schedule, k0, self.horizon)? {
            k += len as i64;
            total += self.run_cell(&mut evo, &field, k, false).expect("unpruned run");
        }
        Ok(total + self.cost.terminal(evo.values()))
    }

    /// Running cost of `schedule` on `[t0, t0 + h]` (no terminal term).
    pub fn truncated_cost(&self, m0: &GridDensity<D>, schedule: &ControlSchedule<D>, steps: i64) -> Result<f64> {
        let k0 = self.engine.step_of(m0.time)?;
        let mut evo = self.engine.evolution(m0.values.clone(), k0);
        let mut total = 0.0;
        let mut k = k0;
        for (field, len) in self.engine.pieces(schedule, k0, k0 + steps)? {
            k += len as i64;
            total += self.run_cell(&mut evo, &field, k, false).expect("unpruned run");
        }
        Ok(total)
    }

    fn search(&self, evo: Evolution<'_, D>, cells: &[i64], counters: &Counters) -> Option<(f64, Vec<usize>)> {
        if cells.is_empty() {
            return Some((self.cost.terminal(evo.values()), Vec::new()));
        }
        let until = cells[0];
        let branches: Vec<Option<(f64, Vec<usize>)>> = self
            .atlas
            .par_iter()
            .enumerate()
            .map(|(i, a)| {
                counters.expanded.fetch_add(1, Ordering::Relaxed);
                let mut e = evo.clone();
                let Some(run) = self.run_cell(&mut e, a, until, true) else {
                    counters.pruned.fetch_add(1, Ordering::Relaxed);
                    return None;
                };
                let (rest, mut path) = self.search(e, &cells[1..], counters)?;
                path.insert(0, i);
                Some((run + rest, path))
            })
            .collect();
        // first strict minimum in atlas order
        let mut best: Option<(f64, Vec<usize>)> = None;
        for b in branches.into_iter().flatten() {
            if best.as_ref().is_none_or(|(v, _)| b.0 < *v) {
                best = Some(b);
            }
        }
        best
    }

    fn schedule_from(&self, partition: &[i64], choices: &[usize]) -> Option<ControlSchedule<D>> {
        if choices.is_empty() {
            return None;
        }
        let segs = choices
            .iter()
            .enumerate()
            .map(|(i, &c)| Segment {
                start: self.engine.time(partition[i]),
                end: self.engine.time(partition[i + 1]),
                field: self.atlas[c].clone(),
            })
            .collect();
        Some(ControlSchedule::new(segs).expect("partition cells are ordered"))
    }

    /// `V(m0, partition[0])` over schedules constant on the partition cells.
    pub fn value_on(&self, m0: &GridDensity<D>, partition: &[i64]) -> Result<ValueResult<D>> {
        let eta0 = self.slack.eta(&m0.values);
        if eta0 < -ETA_TOL {
            return Err(Error::InfeasibleStart { eta: eta0 });
        }
        let k0 = self.engine.step_of(m0.time)?;
        if partition.first() != Some(&k0) || partition.last() != Some(&self.horizon) || partition.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("partition must run increasing from the density time to T".into()));
        }
        let counters = Counters {
            expanded: AtomicU64::new(0),
            pruned: AtomicU64::new(0),
        };
        let evo = self.engine.evolution(m0.values.clone(), k0);
        let found = self.search(evo, &partition[1..], &counters);
        let stats = TreeStats {
            expanded: counters.expanded.load(Ordering::Relaxed),
            pruned: counters.pruned.load(Ordering::Relaxed),
        };
        Ok(match found {
            Some((value, choices)) => ValueResult {
                value,
                optimal_schedule: self.schedule_from(partition, &choices),
                choices,
                stats,
                fallback: false,
            },
            None => {
                let zero = ControlSchedule::constant(
                    VectorField::Zero,
                    self.engine.time(k0),
                    self.engine.time(self.horizon),
                );
                ValueResult {
                    value: self.cost(m0, &zero)?,
                    optimal_schedule: Some(zero),
                    choices: Vec::new(),
                    stats,
                    fallback: true,
                }
            }
        })
    }

    pub fn value(&self, m0: &GridDensity<D>, depth: usize) -> Result<ValueResult<D>> {
        let k0 = self.engine.step_of(m0.time)?;
        self.value_on(m0, &self.uniform_partition(k0, depth)?)
    }

    /// Compares `V(m0, t0)` with the optimum over first-phase schedules on
    /// `[t0, τ]` of running cost plus `V(·, τ)`; `τ` must be a partition point.
    pub fn dpp_check(&self, m0: &GridDensity<D>, depth: usize, tau: i64) -> Result<DppCheck> {
        let k0 = self.engine.step_of(m0.time)?;
        let partition = self.uniform_partition(k0, depth)?;
        let j = partition
            .iter()
            .position(|&s| s == tau)
            .ok_or_else(|| Error::InvalidArgument(format!("tau step {tau} is not a segment boundary")))?;
        let lhs = self.value_on(m0, &partition)?.value;
        let first = &partition[1..=j];
        let rest = &partition[j..];
        let evo = self.engine.evolution(m0.values.clone(), k0);
        let rhs = self.first_phase_min(evo, first, rest)?;
        let rhs = rhs.ok_or_else(|| Error::InvalidArgument("no admissible first-phase schedule".into()))?;
        Ok(DppCheck {
            tau: self.engine.time(tau),
            lhs,
            rhs,
            gap: (lhs - rhs).abs(),
        })
    }

    fn first_phase_min(&self, evo: Evolution<'_, D>, cells: &[i64], rest: &[i64]) -> Result<Option<f64>> {
        if cells.is_empty() {
            let m = evo.to_density();
            return Ok(Some(self.value_on(&m, rest)?.value));
        }
        let until = cells[0];
        let parts: Vec<Result<Option<f64>>> = self
            .atlas
            .par_iter()
            .map(|a| {
                let mut e = evo.clone();
                let Some(run) = self.run_cell(&mut e, a, until, true) else {
                    return Ok(None);
                };
                Ok(self.first_phase_min(e, &cells[1..], rest)?.map(|v| run + v))
            })
            .collect();
        let mut best: Option<f64> = None;
        for p in parts {
            if let Some(v) = p? {
                if best.is_none_or(|b| v < b) {
                    best = Some(v);
                }
            }
        }
        Ok(best)
    }

    /// Discrete HJB residuals at the cell boundaries of the optimal branch.
    pub fn hjb_residual(&self, m0: &GridDensity<D>, depth: usize, binding_fraction: f64) -> Result<ResidualSeries> {
        let k0 = self.engine.step_of(m0.time)?;
        let partition = self.uniform_partition(k0, depth)?;
        let root = self.value_on(m0, &partition)?;
        let mut points = Vec::with_capacity(depth + 1);
        let mut evo = self.engine.evolution(m0.values.clone(), k0);
        for (i, w) in partition.windows(2).enumerate() {
            let m = evo.to_density();
            let v_here = self.value_on(&m, &partition[i..])?.value;
            let delta_t = self.engine.time(w[1]) - self.engine.time(w[0]);
            let options: Vec<Result<Option<f64>>> = self
                .atlas
                .par_iter()
                .map(|a| {
                    let mut e = evo.clone();
                    let Some(run) = self.run_cell(&mut e, a, w[1], true) else {
                        return Ok(None);
                    };
                    let next = self.value_on(&e.to_density(), &partition[i + 1..])?.value;
                    Ok(Some((next - v_here) / delta_t + run / delta_t))
                })
                .collect();
            let mut r: Option<f64> = None;
            for o in options {
                if let Some(v) = o? {
                    r = Some(r.map_or(v, |b: f64| b.min(v)));
                }
            }
            let eta = self.slack.eta(evo.values());
            points.push(ResidualPoint {
                time: self.engine.time(w[0]),
                eta,
                binding: eta <= binding_fraction * self.slack.delta,
                residual: r.unwrap_or(f64::NAN),
            });
            let field = if root.fallback { VectorField::Zero } else { self.atlas[root.choices[i]].clone() };
            self.run_cell(&mut evo, &field, w[1], false);
        }
        let terminal_gap = (self.value_on(&evo.to_density(), &[self.horizon])?.value - self.cost.terminal(evo.values())).abs();
        Ok(ResidualSeries {
            points,
            terminal_gap,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DppCheck {
    pub tau: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualPoint {
    pub time: f64,
    pub eta: f64,
    pub binding: bool,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries {
    pub points: Vec<ResidualPoint>,
    /// `|V(m, T) − ψ(m)|` at the terminal state of the optimal branch.
    pub terminal_gap: f64,
}

impl ResidualSeries {
    /// Interior points need `|r| ≤ tol`; binding ones only `r ≥ −tol`.
    pub fn passes(&self, tol: f64) -> bool {
        self.terminal_gap == 0.0
            && self.points.iter().all(|p| {
                if p.binding {
                    p.residual >= -tol
                } else {
                    p.residual.abs() <= tol
                }
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzProbe {
    pub max_ratio_space: f64,
    pub max_ratio_time: f64,
    pub pairs: usize,
}

/// Empirical Lipschitz moduli of `V` in the state (random nonnegative
/// perturbations of `m0` supported where `support` is true, scaled to
/// `L²` size `size`) and in time (start shifted by `time_shift` steps,
/// keeping the later partition points).
pub fn lipschitz_probe<const D: usize>(
    problem: &Problem<'_, D>,
    m0: &GridDensity<D>,
    depth: usize,
    support: &[bool],
    size: f64,
    time_shift: i64,
    n_pairs: usize,
    seed: u64,
) -> Result<LipschitzProbe> {
    if n_pairs == 0 {
        return Err(Error::InvalidArgument("need at least one pair".into()));
    }
    let grid = m0.grid;
    let k0 = problem.engine.step_of(m0.time)?;
    let partition = problem.uniform_partition(k0, depth)?;
    let v0 = problem.value_on(m0, &partition)?.value;
    let mut space: f64 = 0.0;
    for i in 0..n_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
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
        let n = l2_norm(&grid, &raw);
        let values: Vec<f64> = raw.iter().zip(&m0.values).map(|(r, m)| (m + r * size / n).max(0.0)).collect();
        let m2 = GridDensity::from_values(grid, values, m0.time)?;
        if problem.slack.eta(&m2.values) < -ETA_TOL {
            continue;
        }
        let dm = l2_norm(&grid, &m0.difference(&m2)?);
        if dm < 1e-12 {
            continue;
        }
        let v2 = problem.value_on(&m2, &partition)?.value;
        space = space.max((v2 - v0).abs() / dm);
    }
    let mut time: f64 = 0.0;
    if time_shift > 0 && time_shift < partition[1] - partition[0] {
        let later = GridDensity {
            time: problem.engine.time(k0 + time_shift),
            ..m0.clone()
        };
        let mut p2 = vec![k0 + time_shift];
        p2.extend_from_slice(&partition[1..]);
        let v1 = problem.value_on(&later, &p2)?.value;
        time = (v1 - v0).abs() / problem.engine.time(time_shift);
    }
    Ok(LipschitzProbe {
        max_ratio_space: space,
        max_ratio_time: time,
        pairs: n_pairs,
    })
}
