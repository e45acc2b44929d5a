//! Uniform Cartesian grids, cubic interpolation and central differences.
//!
//! Node values are stored row-major (last axis fastest). Everything outside
//! the node range is treated as zero, which matches compactly supported
//! densities kept well inside the box.

use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::linalg::Point;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid<const D: usize> {
    pub domain: Aabb<D>,
    pub h: f64,
    pub counts: [usize; D],
}

impl<const D: usize> Grid<D> {
    /// `h` must divide every side of the box.
    pub fn new(domain: Aabb<D>, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::InvalidArgument("grid spacing must be positive".into()));
        }
        let mut counts = [0; D];
        for d in 0..D {
            let cells = (domain.upper[d] - domain.lower[d]) / h;
            let r = cells.round();
            if r < 4.0 || (cells - r).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "grid spacing {h} does not divide box side {d} into at least 4 cells"
                )));
            }
            counts[d] = r as usize + 1;
        }
        Ok(Self { domain, h, counts })
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature weight `hⁿ`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(D as i32)
    }

    pub fn index(&self, multi: &[usize; D]) -> usize {
        let mut k = 0;
        for d in 0..D {
            k = k * self.counts[d] + multi[d];
        }
        k
    }

    pub fn multi_index(&self, mut k: usize) -> [usize; D] {
        let mut idx = [0; D];
        for d in (0..D).rev() {
            idx[d] = k % self.counts[d];
            k /= self.counts[d];
        }
        idx
    }

    pub fn node(&self, k: usize) -> Point<D> {
        let idx = self.multi_index(k);
        std::array::from_fn(|d| self.domain.lower[d] + idx[d] as f64 * self.h)
    }

    pub fn nodes(&self) -> impl Iterator<Item = Point<D>> + '_ {
        (0..self.len()).map(|k| self.node(k))
    }

    pub fn sample<F: Fn(&Point<D>) -> f64>(&self, f: F) -> Vec<f64> {
        self.nodes().map(|x| f(&x)).collect()
    }

    pub fn ensure_same(&self, other: &Self) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{:?} vs {:?}", self.counts, other.counts)))
        }
    }

    /// Value at node `idx + offset`, zero outside the grid.
    #[inline]
    pub fn at_offset(&self, values: &[f64], idx: &[usize; D], axis: usize, offset: isize) -> f64 {
        let j = idx[axis] as isize + offset;
        if j < 0 || j >= self.counts[axis] as isize {
            return 0.0;
        }
        let mut m = *idx;
        m[axis] = j as usize;
        values[self.index(&m)]
    }

    #[inline]
    fn at_offset2(&self, values: &[f64], idx: &[usize; D], a: usize, oa: isize, b: usize, ob: isize) -> f64 {
        let ja = idx[a] as isize + oa;
        let jb = idx[b] as isize + ob;
        if ja < 0 || jb < 0 || ja >= self.counts[a] as isize || jb >= self.counts[b] as isize {
            return 0.0;
        }
        let mut m = *idx;
        m[a] = ja as usize;
        m[b] = jb as usize;
        values[self.index(&m)]
    }

    /// Central-difference gradient at node `k`.
    pub fn gradient_at(&self, values: &[f64], k: usize) -> [f64; D] {
        let idx = self.multi_index(k);
        std::array::from_fn(|a| {
            (self.at_offset(values, &idx, a, 1) - self.at_offset(values, &idx, a, -1)) / (2.0 * self.h)
        })
    }

    /// Central-difference Hessian at node `k`.
    pub fn hessian_at(&self, values: &[f64], k: usize) -> [[f64; D]; D] {
        let idx = self.multi_index(k);
        let h2 = self.h * self.h;
        let v0 = values[k];
        std::array::from_fn(|a| {
            std::array::from_fn(|b| {
                if a == b {
                    (self.at_offset(values, &idx, a, 1) - 2.0 * v0 + self.at_offset(values, &idx, a, -1)) / h2
                } else {
                    (self.at_offset2(values, &idx, a, 1, b, 1) - self.at_offset2(values, &idx, a, 1, b, -1)
                        - self.at_offset2(values, &idx, a, -1, b, 1)
                        + self.at_offset2(values, &idx, a, -1, b, -1))
                        / (4.0 * h2)
                }
            })
        })
    }

    /// Central-difference divergence of a node-sampled vector field.
    pub fn divergence_at(&self, comps: &[Vec<f64>], k: usize) -> f64 {
        let idx = self.multi_index(k);
        (0..D)
            .map(|a| {
                (self.at_offset(&comps[a], &idx, a, 1) - self.at_offset(&comps[a], &idx, a, -1)) / (2.0 * self.h)
            })
            .sum()
    }

    /// Tensor-product four-point Lagrange interpolation with zero extension.
    pub fn interpolate(&self, values: &[f64], x: &Point<D>) -> f64 {
        let mut base = [0isize; D];
        let mut w = [[0.0; 4]; D];
        for d in 0..D {
            let u = (x[d] - self.domain.lower[d]) / self.h;
            if !(u > -2.0 && u < self.counts[d] as f64 + 1.0) {
                return 0.0;
            }
            let f = u.floor();
            base[d] = f as isize - 1;
            w[d] = cubic_weights(u - f);
        }
        let mut acc = 0.0;
        'stencil: for flat in 0..4usize.pow(D as u32) {
            let mut idx = [0usize; D];
            let mut weight = 1.0;
            let mut rem = flat;
            for d in 0..D {
                let o = rem % 4;
                rem /= 4;
                let j = base[d] + o as isize;
                if j < 0 || j >= self.counts[d] as isize {
                    continue 'stencil;
                }
                idx[d] = j as usize;
                weight *= w[d][o];
            }
            acc += weight * values[self.index(&idx)];
        }
        acc
    }
}

/// Lagrange weights for nodes −1, 0, 1, 2 at offset `t ∈ [0, 1)`.
#[inline]
pub fn cubic_weights(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g1() -> Grid<1> {
        Grid::new(Aabb::new([-1.0], [1.0]), 0.125).unwrap()
    }

    #[test]
    fn counts_and_nodes() {
        let g = g1();
        assert_eq!(g.len(), 17);
        assert_eq!(g.node(8), [0.0]);
        assert!(Grid::new(Aabb::new([0.0], [1.0]), 0.3).is_err());
        let g2 = Grid::new(Aabb::new([0.0, 0.0], [1.0, 2.0]), 0.25).unwrap();
        assert_eq!(g2.counts, [5, 9]);
        let k = g2.index(&[2, 3]);
        assert_eq!(g2.multi_index(k), [2, 3]);
        assert_eq!(g2.node(k), [0.5, 0.75]);
    }

    #[test]
    fn interpolation_reproduces_nodes_and_cubics() {
        let g = g1();
        let v = g.sample(|x| 1.0 + x[0] - 2.0 * x[0].powi(3));
        for k in 2..15 {
            assert_eq!(g.interpolate(&v, &g.node(k)), v[k]);
        }
        for &x in &[-0.61, 0.07, 0.5001] {
            let e = 1.0 + x - 2.0 * x * x * x;
            assert!((g.interpolate(&v, &[x]) - e).abs() < 1e-13);
        }
    }

    #[test]
    fn bilinear_product_exact_in_2d() {
        let g = Grid::new(Aabb::new([-1.0, -1.0], [1.0, 1.0]), 0.125).unwrap();
        let v = g.sample(|x| x[0] * x[0] * x[1] - x[1]);
        let p = [0.13, -0.42];
        let e = p[0] * p[0] * p[1] - p[1];
        assert!((g.interpolate(&v, &p) - e).abs() < 1e-13);
    }

    #[test]
    fn differences_of_quadratic() {
        let g = Grid::new(Aabb::new([-1.0, -1.0], [1.0, 1.0]), 0.125).unwrap();
        let v = g.sample(|x| x[0] * x[0] + 3.0 * x[0] * x[1]);
        let k = g.index(&[8, 8]);
        let gr = g.gradient_at(&v, k);
        assert!(gr[0].abs() < 1e-13 && gr[1].abs() < 1e-13);
        let hs = g.hessian_at(&v, g.index(&[5, 9]));
        assert!((hs[0][0] - 2.0).abs() < 1e-10);
        assert!((hs[0][1] - 3.0).abs() < 1e-10 && (hs[1][0] - 3.0).abs() < 1e-10);
        assert!(hs[1][1].abs() < 1e-10);
    }
}
