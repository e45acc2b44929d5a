//! Fixed-size vector and matrix helpers on plain arrays.

pub type Point<const D: usize> = [f64; D];
pub type Mat<const D: usize> = [[f64; D]; D];

pub fn identity<const D: usize>() -> Mat<D> {
    let mut m = [[0.0; D]; D];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn dot<const D: usize>(a: &Point<D>, b: &Point<D>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2<const D: usize>(a: &Point<D>) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf<const D: usize>(a: &Point<D>) -> f64 {
    a.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn sub<const D: usize>(a: &Point<D>, b: &Point<D>) -> Point<D> {
    std::array::from_fn(|i| a[i] - b[i])
}

pub fn add<const D: usize>(a: &Point<D>, b: &Point<D>) -> Point<D> {
    std::array::from_fn(|i| a[i] + b[i])
}

pub fn axpy<const D: usize>(a: f64, x: &Point<D>, y: &Point<D>) -> Point<D> {
    std::array::from_fn(|i| a * x[i] + y[i])
}

pub fn scale<const D: usize>(a: f64, x: &Point<D>) -> Point<D> {
    std::array::from_fn(|i| a * x[i])
}

pub fn mat_vec<const D: usize>(m: &Mat<D>, v: &Point<D>) -> Point<D> {
    std::array::from_fn(|i| dot(&m[i], v))
}

pub fn mat_mul<const D: usize>(a: &Mat<D>, b: &Mat<D>) -> Mat<D> {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..D).map(|k| a[i][k] * b[k][j]).sum()))
}

pub fn mat_axpy<const D: usize>(a: f64, x: &Mat<D>, y: &Mat<D>) -> Mat<D> {
    std::array::from_fn(|i| std::array::from_fn(|j| a * x[i][j] + y[i][j]))
}

pub fn trace<const D: usize>(m: &Mat<D>) -> f64 {
    (0..D).map(|i| m[i][i]).sum()
}

/// Induced infinity norm (maximum absolute row sum).
pub fn mat_norm_inf<const D: usize>(m: &Mat<D>) -> f64 {
    m.iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det<const D: usize>(m: &Mat<D>) -> f64 {
    let mut a = *m;
    let mut det = 1.0;
    for col in 0..D {
        let pivot = (col..D)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        if a[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            a.swap(pivot, col);
            det = -det;
        }
        det *= a[col][col];
        for row in col + 1..D {
            let f = a[row][col] / a[col][col];
            for k in col..D {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    det
}

pub fn from_slice<const D: usize>(v: &[f64]) -> Option<Point<D>> {
    v.try_into().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_matches_closed_form() {
        let m = [[2.0, 1.0], [4.0, 3.0]];
        assert!((det(&m) - 2.0).abs() < 1e-14);
        let p = [[0.0, 1.0], [1.0, 0.0]];
        assert!((det(&p) + 1.0).abs() < 1e-14);
        assert_eq!(det(&[[5.0]]), 5.0);
    }

    #[test]
    fn row_sum_norm() {
        assert_eq!(mat_norm_inf(&[[1.0, -2.0], [0.5, 0.5]]), 3.0);
    }
}
