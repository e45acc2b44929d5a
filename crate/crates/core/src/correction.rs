//! Constructive correction of constraint-violating schedules.
//!
//! Within a window of length `t*` the schedule runs unchanged until the last
//! feasible step `t₁` before the first violation, then the pushback control
//! is applied for a dwell of `kε` (rounded up one step), after which the
//! original control resumes delayed by the accumulated dwell. Windows are
//! chained up to the horizon; after a splice the next window opens at the
//! end of the dwell and `ε` is recomputed from the current state.

use serde::{Deserialize, Serialize};

use crate::constraint::SlackEvaluator;
use crate::density::GridDensity;
use crate::dpp::{Problem, ETA_TOL};
use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::schedule::{ControlSchedule, Segment};
use crate::transport::{Evolution, Transport};

/// Measured inputs from which the correction constants are instantiated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantInputs {
    pub delta: f64,
    /// Pushback strength `M̄`.
    pub strength: f64,
    pub r0: f64,
    /// `‖p‖_{L∞(Ω̃(T))}`.
    pub p_sup: f64,
    /// Lipschitz constant of `t ↦ η(m(t))`.
    pub l_eta: f64,
    /// Largest atlas speed on the box.
    pub v_max: f64,
    /// `|Ω̃(T) \ Ω|`.
    pub exterior_measure: f64,
    /// Time-Lipschitz constant of trajectories in `H¹`.
    pub time_lipschitz: f64,
    /// Exponential `H¹` growth rate.
    pub growth: f64,
    /// Bound on the running cost.
    pub n_ell: f64,
    /// Lipschitz constant of the running cost in `L²`.
    pub l_ell: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionConstants {
    /// Window length actually used (snapped to the time grid).
    pub t_star: f64,
    /// Window length before snapping.
    pub t_star_raw: f64,
    pub k: f64,
    pub c1: f64,
    pub c2: f64,
    pub c_star: f64,
    pub l_eta: f64,
    pub t_bar: f64,
    pub growth: f64,
    pub time_lipschitz: f64,
}

impl CorrectionConstants {
    /// Instantiates the closed-form constants; the window is snapped down to
    /// a multiple of `4·dt`, never below `4·dt`.
    pub fn derive(inp: &ConstantInputs, dt: f64) -> Result<Self> {
        let positive = [
            ("delta", inp.delta),
            ("strength", inp.strength),
            ("r0", inp.r0),
            ("p_sup", inp.p_sup),
            ("l_eta", inp.l_eta),
            ("growth", inp.growth),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::InvalidArgument(format!("correction input {name} must be positive")));
        }
        let c1 = inp.delta * inp.strength * inp.r0 / (2.0 * inp.p_sup);
        let c = inp.growth;
        let c2 = inp.v_max * inp.exterior_measure.sqrt() * inp.time_lipschitz / c;
        let t_bar = inp.delta / (2.0 * inp.l_eta);
        let t_raw = if c2 > 0.0 { ((c1 / (2.0 * c2) + 1.0).ln() / c).min(t_bar) } else { t_bar };
        let quantum = 4.0 * dt;
        let t_star = ((t_raw / quantum).floor() * quantum).max(quantum);
        let k = 2.0 / c1;
        let c_star = 2.0 * inp.n_ell * k + inp.l_ell * inp.time_lipschitz * k * ((c * t_star).exp() - 1.0) / c;
        Ok(Self {
            t_star,
            t_star_raw: t_raw,
            k,
            c1,
            c2,
            c_star,
            l_eta: inp.l_eta,
            t_bar,
            growth: c,
            time_lipschitz: inp.time_lipschitz,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// First violating grid time minus the start time, if any in the window.
    pub t_e: Option<f64>,
    pub epsilon: f64,
}

/// Everything the correction needs besides the schedule and the start.
pub struct Corrector<'a, const D: usize> {
    pub engine: &'a Transport<D>,
    pub slack: &'a SlackEvaluator,
    pub pushback: &'a VectorField<D>,
    pub constants: CorrectionConstants,
    /// Step index of the horizon `T`.
    pub horizon: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub start: f64,
    pub end: f64,
    pub t_e: f64,
    pub t1: f64,
    pub t2: f64,
    pub epsilon: f64,
    /// Cumulative delay of the original control after this splice.
    pub delay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// `(t, η)` at every grid time along the corrected trajectory.
    pub eta: Vec<(f64, f64)>,
    pub min_eta: f64,
    pub windows: Vec<WindowRecord>,
    pub constants: CorrectionConstants,
}

#[derive(Clone, Debug)]
pub struct Correction<const D: usize> {
    pub corrected: ControlSchedule<D>,
    pub certificate: Certificate,
}

impl<const D: usize> Corrector<'_, D> {
    fn window_steps(&self) -> i64 {
        ((self.constants.t_star / self.engine.dt).round() as i64).max(1)
    }

    fn delayed(&self, schedule: &ControlSchedule<D>, j: i64, delay: i64) -> VectorField<D> {
        schedule.field_at(self.engine.time(j - delay) + 0.5 * self.engine.dt)
    }

    fn feasible_start(&self, m0: &GridDensity<D>) -> Result<i64> {
        let eta = self.slack.eta(&m0.values);
        if eta < -ETA_TOL {
            return Err(Error::InfeasibleStart { eta });
        }
        self.engine.step_of(m0.time)
    }

    /// First violation in `[t0, t0 + t*]` and the worst slack deficit there.
    pub fn first_violation(&self, m0: &GridDensity<D>, schedule: &ControlSchedule<D>) -> Result<Violation> {
        let k0 = self.feasible_start(m0)?;
        let end = (k0 + self.window_steps()).min(self.horizon);
        Ok(self.scan(&self.engine.evolution(m0.values.clone(), k0), schedule, 0, end))
    }

    fn scan(&self, evo: &Evolution<'_, D>, schedule: &ControlSchedule<D>, delay: i64, end: i64) -> Violation {
        let start = evo.step_index();
        let mut trial = evo.clone();
        let mut first = None;
        let mut eps: f64 = 0.0;
        for j in start..end {
            let e = self.slack.eta(trial.step(&self.delayed(schedule, j, delay)));
            if e < -ETA_TOL && first.is_none() {
                first = Some(j + 1);
            }
            eps = eps.max(-e);
        }
        Violation {
            t_e: first.map(|k| self.engine.time(k - start)),
            epsilon: eps,
        }
    }

    /// Builds the corrected schedule without certifying it.
    pub fn construct(&self, m0: &GridDensity<D>, schedule: &ControlSchedule<D>) -> Result<(ControlSchedule<D>, Vec<WindowRecord>)> {
        let k0 = self.feasible_start(m0)?;
        let dt = self.engine.dt;
        let w_len = self.window_steps();
        let mut evo = self.engine.evolution(m0.values.clone(), k0);
        let mut steps: Vec<VectorField<D>> = Vec::new();
        let mut windows = Vec::new();
        let mut delay = 0i64;
        let mut w = k0;
        while w < self.horizon {
            let end = (w + w_len).min(self.horizon);
            let v = self.scan(&evo, schedule, delay, end);
            let Some(t_e) = v.t_e else {
                for j in w..end {
                    let f = self.delayed(schedule, j, delay);
                    evo.step(&f);
                    steps.push(f);
                }
                w = end;
                continue;
            };
            let ke = w + (t_e / dt).round() as i64;
            let t1 = ke - 1;
            for j in w..t1 {
                let f = self.delayed(schedule, j, delay);
                evo.step(&f);
                steps.push(f);
            }
            let dwell = (self.constants.k * v.epsilon / dt).ceil() as i64 + 1;
            let t2 = end.min(t1 + dwell);
            for _ in t1..t2 {
                evo.step(self.pushback);
                steps.push(self.pushback.clone());
            }
            delay += t2 - t1;
            windows.push(WindowRecord {
                start: self.engine.time(w),
                end: self.engine.time(end),
                t_e: self.engine.time(ke),
                t1: self.engine.time(t1),
                t2: self.engine.time(t2),
                epsilon: v.epsilon,
                delay: self.engine.time(delay),
            });
            w = t2;
        }
        if windows.is_empty() {
            let t0 = self.engine.time(k0);
            return Ok((schedule.restrict(t0, self.engine.time(self.horizon))?, windows));
        }
        let segments = steps
            .into_iter()
            .enumerate()
            .map(|(i, field)| Segment {
                start: self.engine.time(k0 + i as i64),
                end: self.engine.time(k0 + i as i64 + 1),
                field,
            })
            .collect();
        Ok((ControlSchedule::new(segments)?.merged(), windows))
    }

    /// Corrects `schedule` from `m0` and certifies `η ≥ −ETA_TOL` at every
    /// grid time of the corrected trajectory.
    pub fn correct(&self, m0: &GridDensity<D>, schedule: &ControlSchedule<D>) -> Result<Correction<D>> {
        let (corrected, windows) = self.construct(m0, schedule)?;
        let mut eta = vec![(m0.time, self.slack.eta(&m0.values))];
        self.engine.run(m0, &corrected, self.engine.time(self.horizon), |k, v| {
            eta.push((self.engine.time(k), self.slack.eta(v)));
            true
        })?;
        let (t_min, min_eta) = eta.iter().copied().fold((m0.time, f64::INFINITY), |acc, (t, e)| if e < acc.1 { (t, e) } else { acc });
        if min_eta < -ETA_TOL {
            return Err(Error::CertificationFailed { time: t_min, eta: min_eta });
        }
        Ok(Correction {
            corrected,
            certificate: Certificate {
                eta,
                min_eta,
                windows,
                constants: self.constants,
            },
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProximityRow {
    pub h: f64,
    pub j_original: f64,
    pub j_corrected: f64,
    /// `|ΔJ_h| / ε`, absent when `ε = 0`.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProximityReport {
    pub epsilon: f64,
    pub c_star: f64,
    pub rows: Vec<ProximityRow>,
    pub ok: bool,
}

/// Compares truncated running costs of the original and corrected
/// schedules over each horizon in `horizons`.
pub fn cost_proximity_check<const D: usize>(
    problem: &Problem<'_, D>,
    m0: &GridDensity<D>,
    original: &ControlSchedule<D>,
    corrected: &ControlSchedule<D>,
    epsilon: f64,
    horizons: &[f64],
    c_star: f64,
) -> Result<ProximityReport> {
    let mut rows = Vec::with_capacity(horizons.len());
    let mut ok = true;
    for &h in horizons {
        let steps = problem.engine.step_of(h)?;
        let a = problem.truncated_cost(m0, original, steps)?;
        let b = problem.truncated_cost(m0, corrected, steps)?;
        let ratio = (epsilon > 0.0).then(|| (b - a).abs() / epsilon);
        ok &= match ratio {
            Some(r) => r <= c_star,
            None => a == b,
        };
        rows.push(ProximityRow {
            h,
            j_original: a,
            j_corrected: b,
            ratio,
        });
    }
    Ok(ProximityReport {
        epsilon,
        c_star,
        rows,
        ok,
    })
}
