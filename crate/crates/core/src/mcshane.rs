//! Lipschitz extension from finitely many samples by the inf-convolution
//! `f̃(x, t) = min_i v_i + L(‖x − x_i‖_{L²} + |t − t_i|)`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Grid vector of the state.
    pub state: Vec<f64>,
    pub time: f64,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct Extension {
    samples: Vec<Sample>,
    lipschitz: f64,
    /// Quadrature weight turning the Euclidean norm into the discrete `L²` one.
    cell_volume: f64,
}

impl Extension {
    pub fn distance(&self, a: &[f64], ta: f64, b: &[f64], tb: f64) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (sq * self.cell_volume).sqrt() + (ta - tb).abs()
    }

    pub fn eval(&self, state: &[f64], time: f64) -> f64 {
        self.samples
            .iter()
            .map(|s| s.value + self.lipschitz * self.distance(state, time, &s.state, s.time))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }
}

/// Checks pairwise consistency with the bound `L` (relative slack 1e-12)
/// and returns the extension.
pub fn extend(samples: Vec<Sample>, lipschitz: f64, cell_volume: f64) -> Result<Extension> {
    if samples.is_empty() || !(lipschitz >= 0.0) || !(cell_volume > 0.0) {
        return Err(Error::InvalidArgument("need samples, L ≥ 0 and a positive cell volume".into()));
    }
    if samples.iter().any(|s| s.state.len() != samples[0].state.len()) {
        return Err(Error::GridMismatch("sample states differ in length".into()));
    }
    let ext = Extension {
        samples,
        lipschitz,
        cell_volume,
    };
    for (i, a) in ext.samples.iter().enumerate() {
        for (j, b) in ext.samples.iter().enumerate().skip(i + 1) {
            let bound = lipschitz * ext.distance(&a.state, a.time, &b.state, b.time);
            if (a.value - b.value).abs() > bound * (1.0 + 1e-12) + 1e-15 {
                return Err(Error::InconsistentSamples { i, j });
            }
        }
    }
    Ok(ext)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_is_a_cone() {
        let e = extend(vec![Sample { state: vec![0.0, 0.0], time: 0.0, value: 1.0 }], 2.0, 0.25).unwrap();
        // ‖(1,1)‖ with cell volume 1/4 is √(2/4)
        let v = e.eval(&[1.0, 1.0], 0.5);
        assert!((v - (1.0 + 2.0 * (0.5f64.sqrt() + 0.5))).abs() < 1e-15);
    }

    #[test]
    fn inconsistent_pair_rejected() {
        let s = vec![
            Sample { state: vec![0.0], time: 0.0, value: 0.0 },
            Sample { state: vec![1.0], time: 0.0, value: 3.0 },
        ];
        assert_eq!(extend(s, 1.0, 1.0).unwrap_err(), Error::InconsistentSamples { i: 0, j: 1 });
    }
}
