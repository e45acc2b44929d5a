//! Third-order Taylor jets of scalar functions on ℝᴰ.
//!
//! A [`Jet`] carries the value, gradient, Hessian and third-derivative tensor
//! of a scalar function at one point. Closed-form field derivatives are built
//! from a handful of primitives (coordinates, Euclidean distance, polynomial
//! profiles) with the chain and Leibniz rules below.

use crate::linalg::Point;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<const D: usize> {
    pub value: f64,
    pub grad: [f64; D],
    pub hess: [[f64; D]; D],
    pub third: [[[f64; D]; D]; D],
}

impl<const D: usize> Jet<D> {
    pub fn constant(value: f64) -> Self {
        Self {
            value,
            grad: [0.0; D],
            hess: [[0.0; D]; D],
            third: [[[0.0; D]; D]; D],
        }
    }

    /// The affine function `x ↦ offset + slope · x` evaluated at `x`.
    pub fn affine(x: &Point<D>, slope: &Point<D>, offset: f64) -> Self {
        let mut j = Self::constant(offset + crate::linalg::dot(slope, x));
        j.grad = *slope;
        j
    }

    /// `x ↦ |x − c|`, valid away from `c`.
    pub fn distance(x: &Point<D>, c: &Point<D>) -> Self {
        let y = crate::linalg::sub(x, c);
        let r = crate::linalg::norm2(&y);
        let g: [f64; D] = std::array::from_fn(|i| y[i] / r);
        let kd = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
        let hess = std::array::from_fn(|i| std::array::from_fn(|j| (kd(i, j) - g[i] * g[j]) / r));
        let r2 = r * r;
        let third = std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                std::array::from_fn(|k| {
                    (3.0 * g[i] * g[j] * g[k] - kd(i, j) * g[k] - kd(i, k) * g[j] - kd(j, k) * g[i]) / r2
                })
            })
        });
        Self {
            value: r,
            grad: g,
            hess,
            third,
        }
    }

    /// `x ↦ 1 − |x − c|² / ρ²`.
    pub fn radial_quadratic(x: &Point<D>, c: &Point<D>, rho: f64) -> Self {
        let y = crate::linalg::sub(x, c);
        let s = 1.0 / (rho * rho);
        let mut j = Self::constant(1.0 - crate::linalg::dot(&y, &y) * s);
        for i in 0..D {
            j.grad[i] = -2.0 * y[i] * s;
            j.hess[i][i] = -2.0 * s;
        }
        j
    }

    /// `F ∘ self`, given `[F, F', F'', F''']` evaluated at `self.value`.
    pub fn compose(&self, f: [f64; 4]) -> Self {
        let u = self;
        let [f0, f1, f2, f3] = f;
        let grad = std::array::from_fn(|i| f1 * u.grad[i]);
        let hess = std::array::from_fn(|i| {
            std::array::from_fn(|j| f2 * u.grad[i] * u.grad[j] + f1 * u.hess[i][j])
        });
        let third = std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                std::array::from_fn(|k| {
                    f3 * u.grad[i] * u.grad[j] * u.grad[k]
                        + f2 * (u.hess[i][j] * u.grad[k]
                            + u.hess[i][k] * u.grad[j]
                            + u.hess[j][k] * u.grad[i])
                        + f1 * u.third[i][j][k]
                })
            })
        });
        Self {
            value: f0,
            grad,
            hess,
            third,
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        let (f, g) = (self, o);
        let grad = std::array::from_fn(|i| f.grad[i] * g.value + f.value * g.grad[i]);
        let hess = std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                f.hess[i][j] * g.value
                    + f.grad[i] * g.grad[j]
                    + f.grad[j] * g.grad[i]
                    + f.value * g.hess[i][j]
            })
        });
        let third = std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                std::array::from_fn(|k| {
                    f.third[i][j][k] * g.value
                        + f.hess[i][j] * g.grad[k]
                        + f.hess[i][k] * g.grad[j]
                        + f.hess[j][k] * g.grad[i]
                        + f.grad[i] * g.hess[j][k]
                        + f.grad[j] * g.hess[i][k]
                        + f.grad[k] * g.hess[i][j]
                        + f.value * g.third[i][j][k]
                })
            })
        });
        Self {
            value: f.value * g.value,
            grad,
            hess,
            third,
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            value: a * self.value,
            grad: self.grad.map(|x| a * x),
            hess: self.hess.map(|r| r.map(|x| a * x)),
            third: self.third.map(|m| m.map(|r| r.map(|x| a * x))),
        }
    }

    /// Sum of absolute entries of the derivative tensor of the given order.
    pub fn order_abs_sum(&self, order: usize) -> f64 {
        match order {
            0 => self.value.abs(),
            1 => self.grad.iter().map(|x| x.abs()).sum(),
            2 => self.hess.iter().flatten().map(|x| x.abs()).sum(),
            3 => self.third.iter().flatten().flatten().map(|x| x.abs()).sum(),
            _ => panic!("jets carry derivatives up to order 3"),
        }
    }
}

/// Septic smoothstep `S(s) = 35s⁴ − 84s⁵ + 70s⁶ − 20s⁷` on [0, 1] and its
/// first three derivatives; all three vanish at both ends.
pub fn smoothstep7(s: f64) -> [f64; 4] {
    if s <= 0.0 {
        return [0.0; 4];
    }
    if s >= 1.0 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    [
        s4 * (35.0 - 84.0 * s + 70.0 * s2 - 20.0 * s3),
        140.0 * s3 * (1.0 - s).powi(3),
        420.0 * s2 * (1.0 - s).powi(2) * (1.0 - 2.0 * s),
        840.0 * s - 5040.0 * s2 + 8400.0 * s3 - 4200.0 * s4,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn smoothstep_derivatives_match_differences() {
        for &s in &[0.1, 0.37, 0.5, 0.81] {
            let v = smoothstep7(s);
            for k in 0..3 {
                let d = fd(|t| smoothstep7(t)[k], s, 1e-5);
                assert!((d - v[k + 1]).abs() < 1e-6, "order {k} at {s}");
            }
        }
        assert_eq!(smoothstep7(1.0)[0], 1.0);
    }

    #[test]
    fn distance_jet_matches_differences_2d() {
        let c = [0.3, -0.2];
        let x = [1.1, 0.7];
        let j = Jet::distance(&x, &c);
        let h = 1e-5;
        for a in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[a] += h;
            xm[a] -= h;
            let jp = Jet::distance(&xp, &c);
            let jm = Jet::distance(&xm, &c);
            assert!(((jp.value - jm.value) / (2.0 * h) - j.grad[a]).abs() < 1e-8);
            for b in 0..2 {
                let d = (jp.grad[b] - jm.grad[b]) / (2.0 * h);
                assert!((d - j.hess[a][b]).abs() < 1e-7);
                for e in 0..2 {
                    let d3 = (jp.hess[b][e] - jm.hess[b][e]) / (2.0 * h);
                    assert!((d3 - j.third[a][b][e]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn product_rule_on_polynomials() {
        // (x + 2y)(x - y) = x² + xy - 2y²
        let x = [0.7, -1.3];
        let f = Jet::affine(&x, &[1.0, 2.0], 0.0);
        let g = Jet::affine(&x, &[1.0, -1.0], 0.0);
        let p = f.mul(&g);
        assert!((p.value - (0.49 - 0.91 - 2.0 * 1.69)).abs() < 1e-12);
        assert!((p.grad[0] - (2.0 * 0.7 - 1.3)).abs() < 1e-12);
        assert!((p.grad[1] - (0.7 + 4.0 * 1.3)).abs() < 1e-12);
        assert_eq!(p.hess, [[2.0, 1.0], [1.0, -4.0]]);
        assert_eq!(p.order_abs_sum(3), 0.0);
    }
}
