//! Control atlas: analytic velocity fields with closed-form derivatives up to
//! third order, the smooth cutoff used by the pushback control, and lattice
//! certification of the `max{‖a‖_{W^{3,∞}}, ‖a‖_{H¹}} ≤ M` bound.
//!
//! Norm conventions on the lattice: order 0 uses the max-abs component, order
//! k ≥ 1 the largest per-component sum of absolute k-th partials (order 1 is
//! thus the induced ∞-norm of the Jacobian). `w3inf` is the maximum over the
//! four orders. The H¹ surrogate is a midpoint rule for ∫ |a|² + |Da|²_F over
//! the box.

use rayon::prelude::*;
use serde::Serialize;

use crate::geometry::{Aabb, Ball};
use crate::jet::{smoothstep7, Jet};
use crate::linalg::{self, Mat, Point};

/// Smooth cutoff: 1 on a closed ball, 0 at distance ≥ `band` from it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cutoff<const D: usize> {
    pub inner: Ball<D>,
    pub band: f64,
}

impl<const D: usize> Cutoff<D> {
    pub fn new(inner: Ball<D>, band: f64) -> Self {
        assert!(band > 0.0, "cutoff band must be positive");
        Self { inner, band }
    }

    fn band_coordinate(&self, x: &Point<D>) -> (f64, f64) {
        let r = linalg::norm2(&linalg::sub(x, &self.inner.center));
        (r, (r - self.inner.radius) / self.band)
    }

    pub fn value(&self, x: &Point<D>) -> f64 {
        let (_, s) = self.band_coordinate(x);
        1.0 - smoothstep7(s)[0]
    }

    pub fn value_and_gradient(&self, x: &Point<D>) -> (f64, Point<D>) {
        let (r, s) = self.band_coordinate(x);
        if s <= 0.0 {
            return (1.0, [0.0; D]);
        }
        if s >= 1.0 {
            return (0.0, [0.0; D]);
        }
        let sv = smoothstep7(s);
        let dr = -sv[1] / self.band;
        let y = linalg::sub(x, &self.inner.center);
        (1.0 - sv[0], linalg::scale(dr / r, &y))
    }

    pub fn jet(&self, x: &Point<D>) -> Jet<D> {
        let (_, s) = self.band_coordinate(x);
        if s <= 0.0 {
            return Jet::constant(1.0);
        }
        if s >= 1.0 {
            return Jet::constant(0.0);
        }
        let sv = smoothstep7(s);
        let e = self.band;
        Jet::distance(x, &self.inner.center).compose([
            1.0 - sv[0],
            -sv[1] / e,
            -sv[2] / (e * e),
            -sv[3] / (e * e * e),
        ])
    }
}

/// A time-constant velocity field of the atlas.
#[derive(Clone, Debug, PartialEq)]
pub enum VectorField<const D: usize> {
    Zero,
    Constant(Point<D>),
    /// `x ↦ A x`.
    Linear(Mat<D>),
    /// `x ↦ strength · φ(x) · (center − x)`.
    Pushback {
        center: Point<D>,
        strength: f64,
        cutoff: Cutoff<D>,
    },
    /// `x ↦ amplitude · (1 − |x − center|²/radius²)₊⁴ · direction`.
    SmoothBump {
        center: Point<D>,
        radius: f64,
        direction: Point<D>,
        amplitude: f64,
    },
}

impl<const D: usize> VectorField<D> {
    pub fn eval(&self, x: &Point<D>) -> Point<D> {
        match self {
            VectorField::Zero => [0.0; D],
            VectorField::Constant(c) => *c,
            VectorField::Linear(a) => linalg::mat_vec(a, x),
            VectorField::Pushback {
                center,
                strength,
                cutoff,
            } => {
                let phi = cutoff.value(x);
                if phi == 0.0 {
                    return [0.0; D];
                }
                linalg::scale(strength * phi, &linalg::sub(center, x))
            }
            VectorField::SmoothBump {
                center,
                radius,
                direction,
                amplitude,
            } => {
                let u = bump_base(x, center, *radius);
                if u <= 0.0 {
                    return [0.0; D];
                }
                linalg::scale(amplitude * u.powi(4), direction)
            }
        }
    }

    pub fn jacobian(&self, x: &Point<D>) -> Mat<D> {
        match self {
            VectorField::Zero | VectorField::Constant(_) => [[0.0; D]; D],
            VectorField::Linear(a) => *a,
            VectorField::Pushback {
                center,
                strength,
                cutoff,
            } => {
                let (phi, grad) = cutoff.value_and_gradient(x);
                let g = linalg::sub(center, x);
                std::array::from_fn(|i| {
                    std::array::from_fn(|j| {
                        let diag = if i == j { phi } else { 0.0 };
                        strength * (grad[j] * g[i] - diag)
                    })
                })
            }
            VectorField::SmoothBump {
                center,
                radius,
                direction,
                amplitude,
            } => {
                let u = bump_base(x, center, *radius);
                if u <= 0.0 {
                    return [[0.0; D]; D];
                }
                let s = -8.0 * u.powi(3) / (radius * radius);
                std::array::from_fn(|i| {
                    std::array::from_fn(|j| amplitude * direction[i] * s * (x[j] - center[j]))
                })
            }
        }
    }

    pub fn divergence(&self, x: &Point<D>) -> f64 {
        linalg::trace(&self.jacobian(x))
    }

    /// Per-component third-order jets.
    pub fn jet(&self, x: &Point<D>) -> [Jet<D>; D] {
        match self {
            VectorField::Zero => [Jet::constant(0.0); D],
            VectorField::Constant(c) => std::array::from_fn(|i| Jet::constant(c[i])),
            VectorField::Linear(a) => std::array::from_fn(|i| Jet::affine(x, &a[i], 0.0)),
            VectorField::Pushback {
                center,
                strength,
                cutoff,
            } => {
                let phi = cutoff.jet(x);
                std::array::from_fn(|i| {
                    let mut slope = [0.0; D];
                    slope[i] = -1.0;
                    phi.mul(&Jet::affine(x, &slope, center[i])).scaled(*strength)
                })
            }
            VectorField::SmoothBump {
                center,
                radius,
                direction,
                amplitude,
            } => {
                let u = Jet::radial_quadratic(x, center, *radius);
                let b = if u.value <= 0.0 {
                    Jet::constant(0.0)
                } else {
                    let v = u.value;
                    u.compose([v.powi(4), 4.0 * v.powi(3), 12.0 * v * v, 24.0 * v])
                };
                std::array::from_fn(|i| b.scaled(amplitude * direction[i]))
            }
        }
    }

    /// Same field multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            VectorField::Zero => VectorField::Zero,
            VectorField::Constant(c) => VectorField::Constant(linalg::scale(factor, c)),
            VectorField::Linear(a) => VectorField::Linear(a.map(|r| r.map(|x| factor * x))),
            VectorField::Pushback {
                center,
                strength,
                cutoff,
            } => VectorField::Pushback {
                center: *center,
                strength: strength * factor,
                cutoff: *cutoff,
            },
            VectorField::SmoothBump {
                center,
                radius,
                direction,
                amplitude,
            } => VectorField::SmoothBump {
                center: *center,
                radius: *radius,
                direction: *direction,
                amplitude: amplitude * factor,
            },
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            VectorField::Zero => "zero",
            VectorField::Constant(_) => "constant",
            VectorField::Linear(_) => "linear",
            VectorField::Pushback { .. } => "pushback",
            VectorField::SmoothBump { .. } => "smooth_bump",
        }
    }
}

fn bump_base<const D: usize>(x: &Point<D>, c: &Point<D>, rho: f64) -> f64 {
    let y = linalg::sub(x, c);
    1.0 - linalg::dot(&y, &y) / (rho * rho)
}

/// Measured lattice bounds of a field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeasuredBounds {
    /// Sup over the lattice of the order-k measure, k = 0..=3.
    pub sup_orders: [f64; 4],
    pub w3inf: f64,
    pub h1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Certification {
    pub ok: bool,
    pub bound: f64,
    pub measured: MeasuredBounds,
}

fn lattice_counts<const D: usize>(bx: &Aabb<D>, spacing: f64) -> [usize; D] {
    std::array::from_fn(|i| ((bx.upper[i] - bx.lower[i]) / spacing + 1e-9).floor() as usize + 1)
}

fn unflatten<const D: usize>(mut k: usize, counts: &[usize; D]) -> [usize; D] {
    let mut idx = [0; D];
    for d in (0..D).rev() {
        idx[d] = k % counts[d];
        k /= counts[d];
    }
    idx
}

/// Samples value and derivatives on a lattice of the given spacing and
/// integrates |a|² + |Da|² by the midpoint rule.
pub fn measure_bounds<const D: usize>(field: &VectorField<D>, bx: &Aabb<D>, spacing: f64) -> MeasuredBounds {
    assert!(spacing > 0.0, "sample spacing must be positive");
    let nodes = lattice_counts(bx, spacing);
    let total: usize = nodes.iter().product();
    let sups: Vec<[f64; 4]> = (0..total)
        .into_par_iter()
        .map(|k| {
            let idx = unflatten(k, &nodes);
            let x: Point<D> = std::array::from_fn(|d| bx.lower[d] + idx[d] as f64 * spacing);
            let jets = field.jet(&x);
            std::array::from_fn(|o| jets.iter().map(|j| j.order_abs_sum(o)).fold(0.0, f64::max))
        })
        .collect();
    let mut sup_orders = [0.0f64; 4];
    for s in &sups {
        for o in 0..4 {
            sup_orders[o] = sup_orders[o].max(s[o]);
        }
    }

    let cells: [usize; D] = std::array::from_fn(|d| nodes[d].saturating_sub(1).max(1));
    let total_cells: usize = cells.iter().product();
    let vol = spacing.powi(D as i32);
    let integrands: Vec<f64> = (0..total_cells)
        .into_par_iter()
        .map(|k| {
            let idx = unflatten(k, &cells);
            let x: Point<D> = std::array::from_fn(|d| bx.lower[d] + (idx[d] as f64 + 0.5) * spacing);
            let a = field.eval(&x);
            let da = field.jacobian(&x);
            linalg::dot(&a, &a) + da.iter().flatten().map(|v| v * v).sum::<f64>()
        })
        .collect();
    let h1 = (integrands.iter().sum::<f64>() * vol).sqrt();
    MeasuredBounds {
        sup_orders,
        w3inf: sup_orders.iter().copied().fold(0.0, f64::max),
        h1,
    }
}

pub fn certify_membership<const D: usize>(
    field: &VectorField<D>,
    bx: &Aabb<D>,
    spacing: f64,
    bound: f64,
) -> Certification {
    let measured = measure_bounds(field, bx, spacing);
    Certification {
        ok: measured.w3inf <= bound && measured.h1 <= bound,
        bound,
        measured,
    }
}

/// Largest factor `s ∈ [lo, hi]` (to bisection tolerance) such that
/// `field.scaled(s)` certifies, or `None` when even `lo` fails.
pub fn bisect_admissible_scale<const D: usize>(
    field: &VectorField<D>,
    bx: &Aabb<D>,
    spacing: f64,
    bound: f64,
    lo: f64,
    hi: f64,
) -> Option<f64> {
    let passes = |s: f64| certify_membership(&field.scaled(s), bx, spacing, bound).ok;
    if !passes(lo) {
        return None;
    }
    if passes(hi) {
        return Some(hi);
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..60 {
        let mid = 0.5 * (a + b);
        if passes(mid) {
            a = mid;
        } else {
            b = mid;
        }
        if (b - a) <= 1e-10 * b {
            break;
        }
    }
    Some(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pushback_1d(strength: f64) -> VectorField<1> {
        VectorField::Pushback {
            center: [0.0],
            strength,
            cutoff: Cutoff::new(Ball::new([0.0], 2.0), 1.0),
        }
    }

    fn bump_2d() -> VectorField<2> {
        VectorField::SmoothBump {
            center: [0.2, -0.1],
            radius: 1.3,
            direction: [0.6, 0.8],
            amplitude: 0.05,
        }
    }

    #[test]
    fn zero_and_constant_eval() {
        assert_eq!(VectorField::<2>::Zero.eval(&[1.0, 2.0]), [0.0, 0.0]);
        assert_eq!(VectorField::Constant([1.0, 0.0]).eval(&[3.0, 5.0]), [1.0, 0.0]);
        assert_eq!(VectorField::<2>::Zero.jacobian(&[1.0, 2.0]), [[0.0; 2]; 2]);
    }

    #[test]
    fn pushback_inside_cutoff() {
        let f = VectorField::Pushback {
            center: [0.0, 0.0],
            strength: 0.1,
            cutoff: Cutoff::new(Ball::new([0.0, 0.0], 3.0), 0.5),
        };
        let v = f.eval(&[2.0, 0.0]);
        assert!((v[0] + 0.2).abs() < 1e-15 && v[1] == 0.0);
        let j = f.jacobian(&[2.0, 0.0]);
        assert_eq!(j, [[-0.1, 0.0], [0.0, -0.1]]);
    }

    #[test]
    fn linear_jacobian_is_constant() {
        let f = VectorField::Linear([[-1.0, 0.0], [0.0, -1.0]]);
        assert_eq!(f.jacobian(&[3.0, -7.0]), [[-1.0, 0.0], [0.0, -1.0]]);
    }

    #[test]
    fn pushback_vanishes_beyond_band() {
        let f = pushback_1d(0.2);
        for k in 0..200 {
            let x = 3.0 + k as f64 * 0.005;
            assert_eq!(f.eval(&[x]), [0.0]);
            assert_eq!(f.eval(&[-x]), [0.0]);
        }
    }

    fn jacobian_fd_error<const D: usize>(f: &VectorField<D>, x: &Point<D>, h: f64) -> f64 {
        let jac = f.jacobian(x);
        let mut err: f64 = 0.0;
        for j in 0..D {
            let mut xp = *x;
            let mut xm = *x;
            xp[j] += h;
            xm[j] -= h;
            let (ap, am) = (f.eval(&xp), f.eval(&xm));
            for i in 0..D {
                err = err.max(((ap[i] - am[i]) / (2.0 * h) - jac[i][j]).abs());
            }
        }
        err / linalg::mat_norm_inf(&jac).max(1e-300)
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let pts1 = [[2.3], [2.71], [-2.45], [0.4]];
        for x in &pts1 {
            for &h in &[1e-2, 1e-3] {
                let e = jacobian_fd_error(&pushback_1d(0.3), x, h);
                assert!(e <= 10.0 * h * h, "pushback at {x:?}: {e}");
            }
        }
        let f = bump_2d();
        for x in &[[0.5, 0.3], [-0.4, 0.2], [1.0, -0.6]] {
            for &h in &[1e-2, 1e-3] {
                let e = jacobian_fd_error(&f, x, h);
                assert!(e <= 10.0 * h * h, "bump at {x:?}: {e}");
            }
        }
    }

    #[test]
    fn jets_agree_with_fast_paths() {
        let f = pushback_1d(0.3);
        let x = [2.37];
        let j = f.jet(&x);
        assert!((j[0].value - f.eval(&x)[0]).abs() < 1e-15);
        assert!((j[0].grad[0] - f.jacobian(&x)[0][0]).abs() < 1e-14);

        let g = bump_2d();
        let x = [0.4, 0.1];
        let j = g.jet(&x);
        let jac = g.jacobian(&x);
        for i in 0..2 {
            assert!((j[i].value - g.eval(&x)[i]).abs() < 1e-15);
            for k in 0..2 {
                assert!((j[i].grad[k] - jac[i][k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn certification_cases() {
        let bx = Aabb::new([-4.0], [4.0]);
        let zero = certify_membership(&VectorField::<1>::Zero, &bx, 1.0 / 256.0, 1.0);
        assert!(zero.ok);
        assert_eq!(zero.measured.w3inf, 0.0);
        assert_eq!(zero.measured.h1, 0.0);

        let c = certify_membership(&VectorField::Constant([2.0]), &bx, 1.0 / 256.0, 1.0);
        assert!(!c.ok);
        assert_eq!(c.measured.sup_orders[0], 2.0);

        let scale = bisect_admissible_scale(&pushback_1d(1.0), &bx, 1.0 / 256.0, 1.0, 1e-8, 1.0).unwrap();
        assert!(certify_membership(&pushback_1d(scale), &bx, 1.0 / 256.0, 1.0).ok);
        assert!(!certify_membership(&pushback_1d(scale * 1.001), &bx, 1.0 / 256.0, 1.0).ok);
    }
}
