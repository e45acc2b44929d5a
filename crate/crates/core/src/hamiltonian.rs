//! The Hamiltonian `H(m, q) = max_a ⟨q, div(a m)⟩ − ℓ(m, a)` over the atlas,
//! its Lipschitz estimate, and the chain rule for linear test functionals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::density::{h1_norm, inner, l2_norm, GridDensity};
use crate::dpp::{CostModel, ScalarSpec};
use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::grid::Grid;
use crate::linalg;
use crate::schedule::ControlSchedule;
use crate::transport::Transport;

/// `div(a m)` at every node by central differences of the product.
pub fn flux_divergence<const D: usize>(grid: &Grid<D>, a: &VectorField<D>, m: &[f64]) -> Vec<f64> {
    if *a == VectorField::Zero {
        return vec![0.0; grid.len()];
    }
    let mut comps = vec![vec![0.0; grid.len()]; D];
    for (k, x) in grid.nodes().enumerate() {
        let v = a.eval(&x);
        for d in 0..D {
            comps[d][k] = v[d] * m[k];
        }
    }
    (0..grid.len()).map(|k| grid.divergence_at(&comps, k)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianValue {
    pub value: f64,
    /// Index of the maximizing atlas field (first on ties).
    pub argmax: usize,
    /// `⟨q, div(a m)⟩ − ℓ(m, a)` per atlas field.
    pub terms: Vec<f64>,
}

pub fn hamiltonian<const D: usize>(
    cost: &CostModel<D>,
    m: &GridDensity<D>,
    q: &[f64],
    atlas: &[VectorField<D>],
) -> Result<HamiltonianValue> {
    m.grid.ensure_same(&cost.grid)?;
    if q.len() != m.grid.len() {
        return Err(Error::GridMismatch(format!("q has {} nodes, grid has {}", q.len(), m.grid.len())));
    }
    if atlas.is_empty() {
        return Err(Error::InvalidArgument("empty atlas".into()));
    }
    let terms: Vec<f64> = atlas
        .iter()
        .map(|a| {
            let div = flux_divergence(&m.grid, a, &m.values);
            inner(&m.grid, q, &div) - cost.running(&m.values, cost.field_energy(a))
        })
        .collect();
    let mut argmax = 0;
    for (i, t) in terms.iter().enumerate() {
        if *t > terms[argmax] {
            argmax = i;
        }
    }
    Ok(HamiltonianValue {
        value: terms[argmax],
        argmax,
        terms,
    })
}

/// `⟨q, div(a m)⟩` against `−⟨∇q·a, m⟩` with the analytic gradient of `q`.
pub fn integration_by_parts<const D: usize>(m: &GridDensity<D>, q: &ScalarSpec, a: &VectorField<D>) -> (f64, f64) {
    let grid = m.grid;
    let qv = grid.sample(|x| q.value(x));
    let lhs = inner(&grid, &qv, &flux_divergence(&grid, a, &m.values));
    let dual = grid.sample(|x| linalg::dot(&q.gradient(x), &a.eval(x)));
    (lhs, -inner(&grid, &dual, &m.values))
}

/// One sampled pair `(m₁, q₁)`, `(m₂, q₂)`.
pub struct HamiltonianPair<'a, const D: usize> {
    pub m1: &'a GridDensity<D>,
    pub q1: &'a [f64],
    pub m2: &'a GridDensity<D>,
    pub q2: &'a [f64],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzRow {
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianLipschitzReport {
    pub rows: Vec<LipschitzRow>,
    /// Largest `lhs / rhs` over pairs with `rhs > 0`.
    pub max_ratio: f64,
    pub ok: bool,
}

/// `|ΔH| ≤ M C̃_U ‖Δq‖ + M ‖q₁‖ ‖Δm‖_{H¹} + L_ℓ ‖Δm‖_{L²}` per pair.
pub fn hamiltonian_lipschitz_check<const D: usize>(
    cost: &CostModel<D>,
    atlas: &[VectorField<D>],
    m_bound: f64,
    c_u_tilde: f64,
    pairs: &[HamiltonianPair<'_, D>],
) -> Result<HamiltonianLipschitzReport> {
    let grid = cost.grid;
    let l_ell = cost.running_lipschitz();
    let mut rows = Vec::with_capacity(pairs.len());
    let mut max_ratio: f64 = 0.0;
    let mut ok = true;
    for p in pairs {
        let h1 = hamiltonian(cost, p.m1, p.q1, atlas)?.value;
        let h2 = hamiltonian(cost, p.m2, p.q2, atlas)?.value;
        let dq: Vec<f64> = p.q1.iter().zip(p.q2).map(|(a, b)| a - b).collect();
        let dm = p.m1.difference(p.m2)?;
        let rhs = m_bound * c_u_tilde * l2_norm(&grid, &dq)
            + m_bound * l2_norm(&grid, p.q1) * h1_norm(&grid, &dm)
            + l_ell * l2_norm(&grid, &dm);
        let lhs = (h1 - h2).abs();
        ok &= lhs <= rhs * (1.0 + 1e-12) + 1e-14;
        if rhs > 0.0 {
            max_ratio = max_ratio.max(lhs / rhs);
        }
        rows.push(LipschitzRow { lhs, rhs });
    }
    Ok(HamiltonianLipschitzReport { rows, max_ratio, ok })
}

/// Smooth random test function: a sum of `terms` Gaussian-weighted bumps
/// drawn from `seed`, scaled to unit `L²` norm.
pub fn random_test_function<const D: usize>(grid: &Grid<D>, seed: u64, terms: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width: Vec<f64> = (0..D).map(|d| grid.domain.upper[d] - grid.domain.lower[d]).collect();
    let bumps: Vec<(f64, ScalarSpec)> = (0..terms)
        .map(|_| {
            let w: f64 = StandardNormal.sample(&mut rng);
            let center: Vec<f64> = (0..D)
                .map(|d| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    grid.domain.lower[d] + width[d] * (0.5 + 0.15 * z)
                })
                .collect();
            let radius = 0.25 * width.iter().copied().fold(f64::INFINITY, f64::min);
            (w, ScalarSpec::Bump { center, radius, amplitude: 1.0 })
        })
        .collect();
    let v = grid.sample(|x| bumps.iter().map(|(w, b)| w * b.value(x)).sum());
    let n = l2_norm(grid, &v);
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRule {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// Centered difference of `⟨g, m(t)⟩` against `⟨∇g·α(t), m(t)⟩`; `t` must
/// lie at least one step after the density time.
pub fn chain_rule_check<const D: usize>(
    engine: &Transport<D>,
    m0: &GridDensity<D>,
    schedule: &ControlSchedule<D>,
    g: &ScalarSpec,
    t: f64,
) -> Result<ChainRule> {
    let k0 = engine.step_of(m0.time)?;
    let k = engine.step_of(t)?;
    if k <= k0 {
        return Err(Error::InvalidArgument("chain rule needs t past the density time".into()));
    }
    let grid = m0.grid;
    let gv = grid.sample(|x| g.value(x));
    let mut evo = engine.evolution(m0.values.clone(), k0);
    let mut window = Vec::with_capacity(3);
    for j in k0..=k {
        if j + 1 >= k {
            window.push(inner(&grid, &gv, evo.values()));
        }
        if j == k {
            break;
        }
        evo.step(&schedule.field_at(engine.time(j) + 0.5 * engine.dt));
    }
    let mid = evo.values().to_vec();
    evo.step(&schedule.field_at(t + 0.5 * engine.dt));
    window.push(inner(&grid, &gv, evo.values()));
    let lhs = (window[2] - window[0]) / (2.0 * engine.dt);
    // α at t: the field is right-continuous, so average both sides at a switch
    let left = schedule.field_at(t - 0.5 * engine.dt);
    let right = schedule.field_at(t + 0.5 * engine.dt);
    let dual = grid.sample(|x| {
        let v = linalg::scale(0.5, &linalg::add(&left.eval(x), &right.eval(x)));
        linalg::dot(&g.gradient(x), &v)
    });
    let rhs = inner(&grid, &dual, &mid);
    Ok(ChainRule {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;

    fn setup() -> (Grid<1>, GridDensity<1>, CostModel<1>) {
        let g = Grid::new(Aabb::new([-4.0], [4.0]), 1.0 / 32.0).unwrap();
        let m = GridDensity::from_values(g, g.sample(|x| (1.0 - x[0] * x[0]).max(0.0).powi(2)), 0.0).unwrap();
        let c = CostModel::new(g, 0.5, &ScalarSpec::Quadratic { center: vec![0.0], scale: 1.0, offset: 0.0 }, &ScalarSpec::Zero).unwrap();
        (g, m, c)
    }

    #[test]
    fn zero_costate_gives_minus_min_cost() {
        let (g, m, c) = setup();
        let atlas = [VectorField::Constant([0.5]), VectorField::Zero];
        let h = hamiltonian(&c, &m, &vec![0.0; g.len()], &atlas).unwrap();
        let min_cost = atlas.iter().map(|a| c.running(&m.values, c.field_energy(a))).fold(f64::INFINITY, f64::min);
        assert_eq!(h.value, -min_cost);
        assert_eq!(h.argmax, 1);
    }

    #[test]
    fn translation_chain_rule() {
        let (g, m, _) = setup();
        let e = Transport::new(g, 1e-3, 50).unwrap();
        let s = ControlSchedule::constant(VectorField::Constant([0.4]), 0.0, 1.0);
        let r = chain_rule_check(&e, &m, &s, &ScalarSpec::Affine { slope: vec![1.0], offset: 0.0 }, 0.01).unwrap();
        assert!((r.rhs - 0.4 * m.mass()).abs() < 1e-4 * m.mass());
        assert!(r.gap < 1e-3 * r.rhs.abs(), "{r:?}");
    }

    #[test]
    fn mismatched_costate_rejected() {
        let (_, m, c) = setup();
        assert!(hamiltonian(&c, &m, &[0.0; 3], &[VectorField::Zero]).is_err());
    }
}
