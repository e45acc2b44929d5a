//! Fourier Sobolev norms on the periodized box.
//!
//! The last node along each axis duplicates the first under periodization
//! and is dropped; the period is `(counts − 1)·h`. With `N` retained nodes,
//! `‖w‖²_{H^s} = (hⁿ/N) Σ_k (1 + |ξ_k|²)^s |ŵ_k|²`, which equals the plain
//! quadrature `Σ |w|² hⁿ` for `s = 0`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::grid::Grid;

fn wavenumber(k: usize, n: usize, period: f64) -> f64 {
    let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    2.0 * std::f64::consts::PI * signed / period
}

/// Squared spectral magnitudes `|ŵ_k|²` and the matching `|ξ_k|²`.
pub fn power_spectrum<const D: usize>(grid: &Grid<D>, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dims: [usize; D] = std::array::from_fn(|d| grid.counts[d] - 1);
    let total: usize = dims.iter().product();
    let mut buf: Vec<Complex<f64>> = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut idx = [0usize; D];
        for d in (0..D).rev() {
            idx[d] = rem % dims[d];
            rem /= dims[d];
        }
        buf.push(Complex::new(values[grid.index(&idx)], 0.0));
    }
    let mut planner = FftPlanner::<f64>::new();
    // axis-by-axis transforms with the given stride
    let mut stride = 1usize;
    for d in (0..D).rev() {
        let len = dims[d];
        let fft = planner.plan_fft_forward(len);
        let outer = total / (len * stride);
        let mut line = vec![Complex::new(0.0, 0.0); len];
        for o in 0..outer {
            for s in 0..stride {
                let base = o * len * stride + s;
                for i in 0..len {
                    line[i] = buf[base + i * stride];
                }
                fft.process(&mut line);
                for i in 0..len {
                    buf[base + i * stride] = line[i];
                }
            }
        }
        stride *= len;
    }
    let periods: [f64; D] = std::array::from_fn(|d| dims[d] as f64 * grid.h);
    let mut xi2 = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut acc = 0.0;
        for d in (0..D).rev() {
            let k = rem % dims[d];
            rem /= dims[d];
            let xi = wavenumber(k, dims[d], periods[d]);
            acc += xi * xi;
        }
        xi2.push(acc);
    }
    (buf.iter().map(|c| c.norm_sqr()).collect(), xi2)
}

/// `‖w‖²_{H^s}` for each requested `s`.
pub fn sobolev_norms_sq<const D: usize>(grid: &Grid<D>, values: &[f64], orders: &[f64]) -> Vec<f64> {
    let (pow, xi2) = power_spectrum(grid, values);
    let n = pow.len() as f64;
    let w = grid.cell_volume() / n;
    orders
        .iter()
        .map(|&s| {
            pow.iter()
                .zip(&xi2)
                .map(|(p, x)| (1.0 + x).powf(s) * p)
                .sum::<f64>()
                * w
        })
        .collect()
}
