//! Boxes, balls and convex polytopes with exact projections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Point};

/// Axis-aligned box `[lower, upper]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb<const D: usize> {
    #[serde(with = "serde_arrays")]
    pub lower: Point<D>,
    #[serde(with = "serde_arrays")]
    pub upper: Point<D>,
}

impl<const D: usize> Aabb<D> {
    pub fn new(lower: Point<D>, upper: Point<D>) -> Self {
        Self { lower, upper }
    }

    pub fn contains(&self, x: &Point<D>) -> bool {
        (0..D).all(|i| x[i] >= self.lower[i] && x[i] <= self.upper[i])
    }

    pub fn volume(&self) -> f64 {
        (0..D).map(|i| self.upper[i] - self.lower[i]).product()
    }

    /// Distance from `x` (inside) to the nearest face.
    pub fn inner_margin(&self, x: &Point<D>) -> f64 {
        (0..D)
            .map(|i| (x[i] - self.lower[i]).min(self.upper[i] - x[i]))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball<const D: usize> {
    #[serde(with = "serde_arrays")]
    pub center: Point<D>,
    pub radius: f64,
}

impl<const D: usize> Ball<D> {
    pub fn new(center: Point<D>, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn distance(&self, x: &Point<D>) -> f64 {
        (linalg::norm2(&linalg::sub(x, &self.center)) - self.radius).max(0.0)
    }

    pub fn dilate(&self, by: f64) -> Self {
        Self::new(self.center, self.radius + by)
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }

    /// Lebesgue measure (length in 1-D, area in 2-D).
    pub fn measure(&self) -> f64 {
        match D {
            1 => 2.0 * self.radius,
            2 => std::f64::consts::PI * self.radius * self.radius,
            _ => {
                let n = D as f64;
                std::f64::consts::PI.powf(n / 2.0) / gamma_half_int(D + 2) * self.radius.powi(D as i32)
            }
        }
    }

    pub fn contains_ball(&self, other: &Ball<D>) -> bool {
        linalg::norm2(&linalg::sub(&other.center, &self.center)) + other.radius <= self.radius + 1e-12
    }
}

// Γ(k/2) for integer k ≥ 1.
fn gamma_half_int(k: usize) -> f64 {
    match k {
        1 => std::f64::consts::PI.sqrt(),
        2 => 1.0,
        _ => (k as f64 / 2.0 - 1.0) * gamma_half_int(k - 2),
    }
}

/// Convex polytope given by its vertices; supported for D ∈ {1, 2}.
#[derive(Clone, Debug, PartialEq)]
pub struct Polytope<const D: usize> {
    vertices: Vec<Point<D>>,
    // outward unit normals and offsets, n · x ≤ b
    normals: Vec<Point<D>>,
    offsets: Vec<f64>,
}

impl<const D: usize> Polytope<D> {
    pub fn from_vertices(vertices: Vec<Point<D>>) -> Result<Self> {
        match D {
            1 => {
                if vertices.len() < 2 {
                    return Err(Error::InvalidArgument("interval needs two endpoints".into()));
                }
                let lo = vertices.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
                let hi = vertices.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
                if hi <= lo {
                    return Err(Error::InvalidArgument("degenerate interval".into()));
                }
                let mut n_lo = [0.0; D];
                n_lo[0] = -1.0;
                let mut n_hi = [0.0; D];
                n_hi[0] = 1.0;
                let mut v_lo = [0.0; D];
                v_lo[0] = lo;
                let mut v_hi = [0.0; D];
                v_hi[0] = hi;
                Ok(Self {
                    vertices: vec![v_lo, v_hi],
                    normals: vec![n_lo, n_hi],
                    offsets: vec![-lo, hi],
                })
            }
            2 => {
                if vertices.len() < 3 {
                    return Err(Error::InvalidArgument("polygon needs three vertices".into()));
                }
                let n = vertices.len() as f64;
                let cx = vertices.iter().map(|v| v[0]).sum::<f64>() / n;
                let cy = vertices.iter().map(|v| v[..][1]).sum::<f64>() / n;
                let mut vs = vertices;
                vs.sort_by(|a, b| {
                    let ta = (a[..][1] - cy).atan2(a[0] - cx);
                    let tb = (b[..][1] - cy).atan2(b[0] - cx);
                    ta.total_cmp(&tb)
                });
                let mut normals = Vec::with_capacity(vs.len());
                let mut offsets = Vec::with_capacity(vs.len());
                for k in 0..vs.len() {
                    let a = &vs[k][..];
                    let b = &vs[(k + 1) % vs.len()][..];
                    let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
                    let len = (ex * ex + ey * ey).sqrt();
                    if len == 0.0 {
                        return Err(Error::InvalidArgument("repeated polygon vertex".into()));
                    }
                    // counter-clockwise order: outward normal is the edge rotated by -90°
                    let mut nrm = [0.0; D];
                    nrm[0] = ey / len;
                    nrm[..][1] = -ex / len;
                    offsets.push(nrm[0] * a[0] + nrm[..][1] * a[1]);
                    normals.push(nrm);
                }
                for v in &vs {
                    for (nrm, b) in normals.iter().zip(&offsets) {
                        if linalg::dot(nrm, v) > b + 1e-9 {
                            return Err(Error::InvalidArgument("polygon is not convex".into()));
                        }
                    }
                }
                Ok(Self {
                    vertices: vs,
                    normals,
                    offsets,
                })
            }
            _ => Err(Error::InvalidArgument(format!("polytopes are supported for n ≤ 2, got {D}"))),
        }
    }

    pub fn vertices(&self) -> &[Point<D>] {
        &self.vertices
    }

    pub fn contains(&self, x: &Point<D>) -> bool {
        self.normals
            .iter()
            .zip(&self.offsets)
            .all(|(n, b)| linalg::dot(n, x) <= *b)
    }

    pub fn project(&self, x: &Point<D>) -> Point<D> {
        if self.contains(x) {
            return *x;
        }
        if D == 1 {
            let mut p = *x;
            p[0] = x[0].clamp(self.vertices[0][0], self.vertices[1][0]);
            return p;
        }
        let mut best = *x;
        let mut best_d = f64::INFINITY;
        let nv = self.vertices.len();
        for k in 0..nv {
            let a = &self.vertices[k];
            let b = &self.vertices[(k + 1) % nv];
            let e = linalg::sub(b, a);
            let t = (linalg::dot(&linalg::sub(x, a), &e) / linalg::dot(&e, &e)).clamp(0.0, 1.0);
            let p = linalg::axpy(t, &e, a);
            let d = linalg::norm2(&linalg::sub(x, &p));
            if d < best_d {
                best_d = d;
                best = p;
            }
        }
        best
    }

    /// Distance from an interior point to the boundary.
    pub fn depth(&self, x: &Point<D>) -> f64 {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(n, b)| b - linalg::dot(n, x))
            .fold(f64::INFINITY, f64::min)
    }
}

/// A closed convex body Ω with exact distance and distance gradient.
#[derive(Clone, Debug, PartialEq)]
pub enum ConvexBody<const D: usize> {
    Ball(Ball<D>),
    Polytope(Polytope<D>),
}

impl<const D: usize> ConvexBody<D> {
    pub fn contains(&self, x: &Point<D>) -> bool {
        match self {
            ConvexBody::Ball(b) => linalg::norm2(&linalg::sub(x, &b.center)) <= b.radius,
            ConvexBody::Polytope(p) => p.contains(x),
        }
    }

    pub fn project(&self, x: &Point<D>) -> Point<D> {
        match self {
            ConvexBody::Ball(b) => {
                let y = linalg::sub(x, &b.center);
                let r = linalg::norm2(&y);
                if r <= b.radius {
                    *x
                } else {
                    linalg::axpy(b.radius / r, &y, &b.center)
                }
            }
            ConvexBody::Polytope(p) => p.project(x),
        }
    }

    pub fn distance(&self, x: &Point<D>) -> f64 {
        match self {
            ConvexBody::Ball(b) => b.distance(x),
            ConvexBody::Polytope(p) => linalg::norm2(&linalg::sub(x, &p.project(x))),
        }
    }

    /// ∇ dist(·, Ω): the unit vector from the projection to `x` outside Ω,
    /// zero on the closed body.
    pub fn distance_gradient(&self, x: &Point<D>) -> Point<D> {
        let p = self.project(x);
        let y = linalg::sub(x, &p);
        let d = linalg::norm2(&y);
        if d == 0.0 {
            [0.0; D]
        } else {
            linalg::scale(1.0 / d, &y)
        }
    }

    /// dist(x, ∂Ω) for x in Ω.
    pub fn depth(&self, x: &Point<D>) -> f64 {
        match self {
            ConvexBody::Ball(b) => b.radius - linalg::norm2(&linalg::sub(x, &b.center)),
            ConvexBody::Polytope(p) => p.depth(x),
        }
    }
}

/// Serde helpers for const-generic arrays (serialized as sequences).
pub mod serde_arrays {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, const D: usize>(v: &[f64; D], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, De: Deserializer<'de>, const D: usize>(d: De) -> Result<[f64; D], De::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        v.as_slice()
            .try_into()
            .map_err(|_| De::Error::custom(format!("expected {D} components, got {}", v.len())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_ball_distance() {
        let b = ConvexBody::Ball(Ball::new([0.0, 0.0], 1.0));
        assert_eq!(b.distance(&[2.0, 0.0]), 1.0);
        assert_eq!(b.distance(&[0.2, 0.3]), 0.0);
        assert_eq!(b.distance_gradient(&[2.0, 0.0]), [1.0, 0.0]);
    }

    #[test]
    fn square_corner_distance() {
        let sq = Polytope::from_vertices(vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]).unwrap();
        let body = ConvexBody::Polytope(sq);
        assert!((body.distance(&[2.0, 2.0]) - 2f64.sqrt()).abs() < 1e-14);
        assert!((body.distance(&[3.0, 0.5]) - 2.0).abs() < 1e-14);
        assert!((body.depth(&[0.0, 0.0]) - 1.0).abs() < 1e-14);
        let g = body.distance_gradient(&[2.0, 2.0]);
        assert!((g[0] - 0.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn interval_polytope() {
        let iv = ConvexBody::Polytope(Polytope::from_vertices(vec![[1.0], [-1.0]]).unwrap());
        assert_eq!(iv.distance(&[-2.5]), 1.5);
        assert_eq!(iv.distance_gradient(&[-2.5]), [-1.0]);
        assert_eq!(iv.depth(&[0.5]), 0.5);
    }

    #[test]
    fn rejects_nonconvex() {
        let r = Polytope::from_vertices(vec![[0.0, 0.0], [2.0, 0.0], [0.2, 0.2], [0.0, 2.0]]);
        assert!(r.is_err());
    }

    #[test]
    fn ball_measure() {
        assert_eq!(Ball::new([0.0], 1.5).measure(), 3.0);
        assert!((Ball::new([0.0, 0.0], 1.0).measure() - std::f64::consts::PI).abs() < 1e-15);
    }
}
