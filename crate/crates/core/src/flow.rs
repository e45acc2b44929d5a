//! Characteristics of `∂ₜm + div(αm) = 0`: the flow map, its Jacobian from
//! the variational equation `Y' = Dα Y`, and `log det` from `L' = div α`,
//! all advanced together by classical RK4 with a fixed step.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::geometry::Aabb;
use crate::linalg::{self, Mat, Point};
use crate::schedule::ControlSchedule;

#[derive(Clone, Copy, Debug)]
pub struct FlowConfig<const D: usize> {
    pub dt: f64,
    /// Characteristics must stay inside this box.
    pub domain: Aabb<D>,
    pub record_path: bool,
}

impl<const D: usize> FlowConfig<D> {
    pub fn new(dt: f64, domain: Aabb<D>) -> Self {
        assert!(dt > 0.0, "time step must be positive");
        Self {
            dt,
            domain,
            record_path: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowResult<const D: usize> {
    pub endpoint: Point<D>,
    /// `DΦ_{t,s}(x)` forward; `DΨ_{t,s}(x)` for backward flows.
    pub jacobian: Mat<D>,
    /// `log det DΦ_{t,s}`, at `x` forward and at the foot `Ψ_{t,s}(x)` backward.
    pub log_det: f64,
    pub path_samples: Option<Vec<(f64, Point<D>)>>,
}

#[derive(Clone, Copy)]
struct State<const D: usize> {
    y: Point<D>,
    jac: Mat<D>,
    log_det: f64,
}

fn rhs<const D: usize>(f: &VectorField<D>, s: &State<D>) -> State<D> {
    let da = f.jacobian(&s.y);
    State {
        y: f.eval(&s.y),
        jac: linalg::mat_mul(&da, &s.jac),
        log_det: linalg::trace(&da),
    }
}

fn shifted<const D: usize>(s: &State<D>, h: f64, k: &State<D>) -> State<D> {
    State {
        y: linalg::axpy(h, &k.y, &s.y),
        jac: linalg::mat_axpy(h, &k.jac, &s.jac),
        log_det: s.log_det + h * k.log_det,
    }
}

fn rk4_step<const D: usize>(f: &VectorField<D>, s: &State<D>, h: f64) -> State<D> {
    let k1 = rhs(f, s);
    let k2 = rhs(f, &shifted(s, 0.5 * h, &k1));
    let k3 = rhs(f, &shifted(s, 0.5 * h, &k2));
    let k4 = rhs(f, &shifted(s, h, &k3));
    let w = h / 6.0;
    State {
        y: std::array::from_fn(|i| s.y[i] + w * (k1.y[i] + 2.0 * k2.y[i] + 2.0 * k3.y[i] + k4.y[i])),
        jac: std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                s.jac[i][j] + w * (k1.jac[i][j] + 2.0 * k2.jac[i][j] + 2.0 * k3.jac[i][j] + k4.jac[i][j])
            })
        }),
        log_det: s.log_det + w * (k1.log_det + 2.0 * k2.log_det + 2.0 * k3.log_det + k4.log_det),
    }
}

/// One RK4 step of the characteristic ODE with a time-constant field,
/// returning the new point and the increment of `∫ div α`.
pub fn step_point<const D: usize>(f: &VectorField<D>, y: &Point<D>, h: f64) -> (Point<D>, f64) {
    let s = State {
        y: *y,
        jac: linalg::identity(),
        log_det: 0.0,
    };
    let n = rk4_step(f, &s, h);
    (n.y, n.log_det)
}

/// Integrates from time `from` to time `to` (either order) and returns the
/// raw state: point, accumulated Jacobian, and `∫_from^to div α`.
fn integrate<const D: usize>(
    schedule: &ControlSchedule<D>,
    x: &Point<D>,
    from: f64,
    to: f64,
    cfg: &FlowConfig<D>,
) -> Result<(State<D>, Option<Vec<(f64, Point<D>)>>)> {
    if !cfg.domain.contains(x) {
        return Err(Error::EndpointOutOfBox {
            time: from,
            point: x.to_vec(),
        });
    }
    let mut state = State {
        y: *x,
        jac: linalg::identity(),
        log_det: 0.0,
    };
    let mut path = cfg.record_path.then(|| vec![(from, *x)]);
    let dir = if to >= from { 1.0 } else { -1.0 };
    let mut knots = vec![from];
    let mut inner = schedule.breakpoints_between(from, to);
    if dir < 0.0 {
        inner.reverse();
    }
    knots.extend(inner);
    knots.push(to);
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = (b - a).abs();
        if len == 0.0 {
            continue;
        }
        // the field active on the open piece between the knots
        let field = schedule.field_at(a.min(b));
        let n = ((len / cfg.dt) - 1e-9).ceil().max(1.0) as usize;
        let h = dir * len / n as f64;
        for k in 0..n {
            state = rk4_step(&field, &state, h);
            let t = a + (k + 1) as f64 * h;
            if !cfg.domain.contains(&state.y) {
                return Err(Error::EndpointOutOfBox {
                    time: t,
                    point: state.y.to_vec(),
                });
            }
            if let Some(p) = path.as_mut() {
                p.push((t, state.y));
            }
        }
    }
    Ok((state, path))
}

/// `Φ_{t,s}(x)` with `DΦ_{t,s}(x)` and `log det DΦ_{t,s}(x)`.
pub fn flow_forward<const D: usize>(
    schedule: &ControlSchedule<D>,
    x: &Point<D>,
    t: f64,
    s: f64,
    cfg: &FlowConfig<D>,
) -> Result<FlowResult<D>> {
    if s < t {
        return Err(Error::InvalidArgument(format!("forward flow needs t <= s, got {t} > {s}")));
    }
    let (st, path) = integrate(schedule, x, t, s, cfg)?;
    Ok(FlowResult {
        endpoint: st.y,
        jacobian: st.jac,
        log_det: st.log_det,
        path_samples: path,
    })
}

/// `Ψ_{t,s}(x)`: the time-`t` foot of the characteristic through `x` at time
/// `s`, with `DΨ_{t,s}(x)` and the forward `log det DΦ_{t,s}` at that foot.
pub fn flow_backward<const D: usize>(
    schedule: &ControlSchedule<D>,
    x: &Point<D>,
    t: f64,
    s: f64,
    cfg: &FlowConfig<D>,
) -> Result<FlowResult<D>> {
    if s < t {
        return Err(Error::InvalidArgument(format!("backward flow needs t <= s, got {t} > {s}")));
    }
    let (st, path) = integrate(schedule, x, s, t, cfg)?;
    Ok(FlowResult {
        endpoint: st.y,
        jacobian: st.jac,
        log_det: -st.log_det,
        path_samples: path,
    })
}

/// Worst measured/allowed ratios of the a-priori flow-map estimates.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AppendixReport {
    /// `‖Φ_{t,s₁}−Φ_{t,s₂}‖∞ / (M|s₁−s₂|)`.
    pub a1: f64,
    /// `max(‖DΦ‖, ‖DΨ‖) / e^{M(s−t)}`.
    pub a2: f64,
    /// `‖Ψ_{t,s₁}−Ψ_{t,s₂}‖∞ / (M e^{MT}|s₁−s₂|)`.
    pub a3: f64,
    /// `|log det DΦ| / (nM(s−t))`.
    pub a5: f64,
    /// `|det Y − exp(L)| / exp(L)` between the two determinant routes.
    pub det_disagreement: f64,
    pub samples: usize,
    pub ok: bool,
}

pub const APPENDIX_REL_TOL: f64 = 1e-6;
pub const DET_AGREEMENT_TOL: f64 = 1e-8;

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Checks the flow estimates at sample pairs `(x, s)` with `t < s`, using the
/// midpoint `s₂ = (t+s)/2` as the second time for the Lipschitz-in-time bounds.
pub fn check_appendix_bounds<const D: usize>(
    schedule: &ControlSchedule<D>,
    samples: &[(Point<D>, f64)],
    t: f64,
    horizon: f64,
    m_bound: f64,
    cfg: &FlowConfig<D>,
) -> Result<AppendixReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no sample points".into()));
    }
    let per: Vec<Result<[f64; 5]>> = samples
        .par_iter()
        .map(|(x, s)| {
            let s = *s;
            let s2 = 0.5 * (t + s);
            let f1 = flow_forward(schedule, x, t, s, cfg)?;
            let f2 = flow_forward(schedule, x, t, s2, cfg)?;
            let b1 = flow_backward(schedule, x, t, s, cfg)?;
            let b2 = flow_backward(schedule, x, t, s2, cfg)?;
            let ds = s - s2;
            let a1 = ratio(linalg::norm_inf(&linalg::sub(&f1.endpoint, &f2.endpoint)), m_bound * ds);
            let growth = (m_bound * (s - t)).exp();
            let a2 = linalg::mat_norm_inf(&f1.jacobian).max(linalg::mat_norm_inf(&b1.jacobian)) / growth;
            let a3 = ratio(
                linalg::norm_inf(&linalg::sub(&b1.endpoint, &b2.endpoint)),
                m_bound * (m_bound * horizon).exp() * ds,
            );
            let a5 = ratio(f1.log_det.abs(), D as f64 * m_bound * (s - t));
            let e = f1.log_det.exp();
            let dis = (linalg::det(&f1.jacobian) - e).abs() / e;
            Ok([a1, a2, a3, a5, dis])
        })
        .collect();
    let mut rep = AppendixReport {
        samples: samples.len(),
        ..Default::default()
    };
    for r in per {
        let [a1, a2, a3, a5, dis] = r?;
        rep.a1 = rep.a1.max(a1);
        rep.a2 = rep.a2.max(a2);
        rep.a3 = rep.a3.max(a3);
        rep.a5 = rep.a5.max(a5);
        rep.det_disagreement = rep.det_disagreement.max(dis);
    }
    let lim = 1.0 + APPENDIX_REL_TOL;
    rep.ok = rep.a1 <= lim
        && rep.a2 <= lim
        && rep.a3 <= lim
        && rep.a5 <= lim
        && rep.det_disagreement <= DET_AGREEMENT_TOL;
    Ok(rep)
}

/// Finite-difference spot check of higher flow regularity: second
/// derivatives of `Φ` and `Ψ`, and first/second derivatives of
/// `J = (det DΦ)^{-1}` at the backward foot, by central differences of the
/// variational/trace outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RegularityReport {
    pub d2_phi: f64,
    pub d2_psi: f64,
    pub grad_j: f64,
    pub hess_j: f64,
}

pub fn regularity_spot_check<const D: usize>(
    schedule: &ControlSchedule<D>,
    points: &[Point<D>],
    t: f64,
    s: f64,
    fd_step: f64,
    cfg: &FlowConfig<D>,
) -> Result<RegularityReport> {
    let per: Vec<Result<[f64; 4]>> = points
        .par_iter()
        .map(|x| {
            let mut d2_phi: f64 = 0.0;
            let mut d2_psi: f64 = 0.0;
            let mut grad_j: f64 = 0.0;
            let mut hess_j: f64 = 0.0;
            let j_at = |y: &Point<D>| -> Result<f64> { Ok((-flow_backward(schedule, y, t, s, cfg)?.log_det).exp()) };
            let j0 = j_at(x)?;
            for k in 0..D {
                let mut xp = *x;
                let mut xm = *x;
                xp[k] += fd_step;
                xm[k] -= fd_step;
                let (fp, fm) = (flow_forward(schedule, &xp, t, s, cfg)?, flow_forward(schedule, &xm, t, s, cfg)?);
                let (bp, bm) = (flow_backward(schedule, &xp, t, s, cfg)?, flow_backward(schedule, &xm, t, s, cfg)?);
                for i in 0..D {
                    for j in 0..D {
                        d2_phi = d2_phi.max(((fp.jacobian[i][j] - fm.jacobian[i][j]) / (2.0 * fd_step)).abs());
                        d2_psi = d2_psi.max(((bp.jacobian[i][j] - bm.jacobian[i][j]) / (2.0 * fd_step)).abs());
                    }
                }
                let (jp, jm) = ((-bp.log_det).exp(), (-bm.log_det).exp());
                grad_j = grad_j.max(((jp - jm) / (2.0 * fd_step)).abs());
                hess_j = hess_j.max(((jp - 2.0 * j0 + jm) / (fd_step * fd_step)).abs());
            }
            Ok([d2_phi, d2_psi, grad_j, hess_j])
        })
        .collect();
    let mut rep = RegularityReport::default();
    for r in per {
        let v = r?;
        rep.d2_phi = rep.d2_phi.max(v[0]);
        rep.d2_psi = rep.d2_psi.max(v[1]);
        rep.grad_j = rep.grad_j.max(v[2]);
        rep.hess_j = rep.hess_j.max(v[3]);
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg1(dt: f64) -> FlowConfig<1> {
        FlowConfig::new(dt, Aabb::new([-4.0], [4.0]))
    }

    #[test]
    fn zero_schedule_is_identity() {
        let s = ControlSchedule::constant(VectorField::<1>::Zero, 0.0, 1.0);
        let r = flow_forward(&s, &[0.3], 0.0, 1.0, &cfg1(1e-3)).unwrap();
        assert_eq!(r.endpoint, [0.3]);
        assert_eq!(r.jacobian, [[1.0]]);
        assert_eq!(r.log_det, 0.0);
    }

    #[test]
    fn constant_field_translates() {
        let s = ControlSchedule::constant(VectorField::Constant([0.5]), 0.0, 1.0);
        let f = flow_forward(&s, &[0.3], 0.0, 0.8, &cfg1(1e-3)).unwrap();
        assert!((f.endpoint[0] - 0.7).abs() < 1e-12);
        let b = flow_backward(&s, &[0.3], 0.0, 0.8, &cfg1(1e-3)).unwrap();
        assert!((b.endpoint[0] + 0.1).abs() < 1e-12);
        assert_eq!(b.log_det, 0.0);
    }

    #[test]
    fn leaving_the_box_is_reported() {
        let s = ControlSchedule::constant(VectorField::Constant([1.0]), 0.0, 1.0);
        let r = flow_forward(&s, &[3.5], 0.0, 1.0, &cfg1(1e-2));
        assert!(matches!(r, Err(Error::EndpointOutOfBox { .. })));
    }

    #[test]
    fn path_is_recorded_when_requested() {
        let s = ControlSchedule::constant(VectorField::Constant([0.5]), 0.0, 1.0);
        let mut c = cfg1(0.1);
        c.record_path = true;
        let r = flow_forward(&s, &[0.0], 0.0, 1.0, &c).unwrap();
        let p = r.path_samples.unwrap();
        assert_eq!(p.len(), 11);
        assert!((p[10].1[0] - 0.5).abs() < 1e-12);
    }
}
