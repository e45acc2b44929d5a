//! Time-stepped semi-Lagrangian evolution used by every trajectory-level
//! computation (costs, constraint monitoring, dynamic programming,
//! corrections).
//!
//! Time is an integer step index `k` with `t = k·dt`. Between two *rebase
//! points* the density at step `base + j` is `m_base(Ψ_j(x)) · e^{−L_j(x)}`
//! with `Ψ_j` the `j`-step backward RK4 foot and `L_j` the forward log-det;
//! both are tabulated once per field. The density is rebased (reinterpolated
//! onto the grid) at every multiple of `rebase_steps` and whenever the field
//! changes. Because rebasing happens on an absolute clock, restarting from an
//! intermediate tick state reproduces the continued trajectory bit for bit.

use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::density::GridDensity;
use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::flow::step_point;
use crate::grid::Grid;
use crate::linalg::Point;
use crate::schedule::ControlSchedule;

// Node work per step is a few dozen flops; smaller chunks cost more in
// scheduling than they save.
const MIN_CHUNK: usize = 2048;

struct Table<const D: usize> {
    /// `feet[j-1][node]`, `None` once the characteristic left the box.
    feet: Vec<Vec<Option<Point<D>>>>,
    log_det: Vec<Vec<f64>>,
}

pub struct Transport<const D: usize> {
    pub grid: Grid<D>,
    pub dt: f64,
    pub rebase_steps: usize,
    tables: Mutex<Vec<(VectorField<D>, Arc<Table<D>>)>>,
}

impl<const D: usize> Clone for Transport<D> {
    fn clone(&self) -> Self {
        Self {
            grid: self.grid,
            dt: self.dt,
            rebase_steps: self.rebase_steps,
            tables: Mutex::new(self.tables.lock().expect("table cache").clone()),
        }
    }
}

impl<const D: usize> Transport<D> {
    pub fn new(grid: Grid<D>, dt: f64, rebase_steps: usize) -> Result<Self> {
        if !(dt > 0.0) || rebase_steps == 0 {
            return Err(Error::InvalidArgument("dt and rebase_steps must be positive".into()));
        }
        Ok(Self {
            grid,
            dt,
            rebase_steps,
            tables: Mutex::new(Vec::new()),
        })
    }

    pub fn time(&self, k: i64) -> f64 {
        k as f64 * self.dt
    }

    /// Step index of `t`, which must lie on the time grid.
    pub fn step_of(&self, t: f64) -> Result<i64> {
        let r = (t / self.dt).round();
        if (t / self.dt - r).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("time {t} is not a multiple of dt = {}", self.dt)));
        }
        Ok(r as i64)
    }

    fn table(&self, field: &VectorField<D>) -> Arc<Table<D>> {
        if let Some((_, t)) = self.tables.lock().expect("table cache").iter().find(|(f, _)| f == field) {
            return t.clone();
        }
        let t = Arc::new(self.build_table(field));
        let mut cache = self.tables.lock().expect("table cache");
        if let Some((_, existing)) = cache.iter().find(|(f, _)| f == field) {
            return existing.clone();
        }
        cache.push((field.clone(), t.clone()));
        t
    }

    fn build_table(&self, field: &VectorField<D>) -> Table<D> {
        let n = self.grid.len();
        let mut feet: Vec<Vec<Option<Point<D>>>> = Vec::with_capacity(self.rebase_steps);
        let mut log_det: Vec<Vec<f64>> = Vec::with_capacity(self.rebase_steps);
        let mut prev_feet: Vec<Option<Point<D>>> = (0..n).map(|k| Some(self.grid.node(k))).collect();
        let mut prev_ld = vec![0.0; n];
        let domain = self.grid.domain;
        for _ in 0..self.rebase_steps {
            let row: Vec<(Option<Point<D>>, f64)> = prev_feet
                .par_iter()
                .zip(prev_ld.par_iter())
                .with_min_len(MIN_CHUNK)
                .map(|(y, ld)| match y {
                    None => (None, 0.0),
                    Some(y) => {
                        let (z, inc) = step_point(field, y, -self.dt);
                        if domain.contains(&z) {
                            (Some(z), ld - inc)
                        } else {
                            (None, 0.0)
                        }
                    }
                })
                .collect();
            let (f, l): (Vec<_>, Vec<_>) = row.into_iter().unzip();
            feet.push(f.clone());
            log_det.push(l.clone());
            prev_feet = f;
            prev_ld = l;
        }
        Table { feet, log_det }
    }

    fn apply(&self, table: &Table<D>, j: usize, base: &[f64]) -> Vec<f64> {
        if j == 0 {
            return base.to_vec();
        }
        let feet = &table.feet[j - 1];
        let ld = &table.log_det[j - 1];
        feet.par_iter()
            .zip(ld.par_iter())
            .with_min_len(MIN_CHUNK)
            .map(|(y, l)| match y {
                Some(y) => (self.grid.interpolate(base, y) * (-l).exp()).max(0.0),
                None => 0.0,
            })
            .collect()
    }

    /// Starts an evolution from node values living at step `k`.
    pub fn evolution(&self, values: Vec<f64>, k: i64) -> Evolution<'_, D> {
        Evolution {
            engine: self,
            base: values.clone(),
            base_k: k,
            k,
            current: values,
            field: None,
            table: None,
        }
    }

    /// Evolves node values living at step `k0` under a constant `field` for
    /// `n` steps. `visit(k, values)` sees the density after every step and
    /// may return `false` to stop early. Returns the last visited values and
    /// whether all `n` steps were taken.
    pub fn advance<F>(&self, values: &[f64], k0: i64, field: &VectorField<D>, n: usize, mut visit: F) -> (Vec<f64>, bool)
    where
        F: FnMut(i64, &[f64]) -> bool,
    {
        let mut evo = self.evolution(values.to_vec(), k0);
        for _ in 0..n {
            evo.step(field);
            if !visit(evo.k, &evo.current) {
                return (evo.current, false);
            }
        }
        (evo.current, true)
    }

    /// Evolves `m0` from its time tag to `until` along `schedule` (zero past
    /// its end). Stops early when `visit` returns `false`; returns the
    /// density at the last visited step.
    pub fn run<F>(&self, m0: &GridDensity<D>, schedule: &ControlSchedule<D>, until: f64, mut visit: F) -> Result<GridDensity<D>>
    where
        F: FnMut(i64, &[f64]) -> bool,
    {
        let k_start = self.step_of(m0.time)?;
        let k_end = self.step_of(until)?;
        if k_end < k_start {
            return Err(Error::InvalidArgument("run end precedes the density time".into()));
        }
        let mut evo = self.evolution(m0.values.clone(), k_start);
        'outer: for (field, len) in self.pieces(schedule, k_start, k_end)? {
            for _ in 0..len {
                evo.step(&field);
                if !visit(evo.k, &evo.current) {
                    break 'outer;
                }
            }
        }
        Ok(evo.to_density())
    }

    /// Constant-field pieces `(field, steps)` covering `[k_start, k_end]`.
    pub fn pieces(&self, schedule: &ControlSchedule<D>, k_start: i64, k_end: i64) -> Result<Vec<(VectorField<D>, usize)>> {
        let mut cuts = vec![k_start];
        for s in schedule.segments() {
            for t in [s.start, s.end] {
                let k = self.step_of(t)?;
                if k > k_start && k < k_end {
                    cuts.push(k);
                }
            }
        }
        cuts.push(k_end);
        cuts.sort_unstable();
        cuts.dedup();
        let mut out: Vec<(VectorField<D>, usize)> = Vec::new();
        for w in cuts.windows(2) {
            let f = schedule.field_at(self.time(w[0]) + 0.5 * self.dt);
            let n = (w[1] - w[0]) as usize;
            match out.last_mut() {
                Some((g, len)) if *g == f => *len += n,
                _ => out.push((f, n)),
            }
        }
        Ok(out)
    }
}

/// A density trajectory in progress. The density is rebased at every
/// multiple of `rebase_steps` and whenever the stepping field changes, so the
/// trajectory depends only on the sequence of fields, not on how the calls
/// are chunked. Cloning branches the trajectory.
#[derive(Clone)]
pub struct Evolution<'a, const D: usize> {
    engine: &'a Transport<D>,
    base: Vec<f64>,
    base_k: i64,
    k: i64,
    current: Vec<f64>,
    field: Option<VectorField<D>>,
    table: Option<Arc<Table<D>>>,
}

impl<const D: usize> Evolution<'_, D> {
    pub fn step_index(&self) -> i64 {
        self.k
    }

    pub fn time(&self) -> f64 {
        self.engine.time(self.k)
    }

    pub fn values(&self) -> &[f64] {
        &self.current
    }

    pub fn to_density(&self) -> GridDensity<D> {
        GridDensity {
            grid: self.engine.grid,
            values: self.current.clone(),
            time: self.time(),
        }
    }

    /// Advances one time step under `field`.
    pub fn step(&mut self, field: &VectorField<D>) -> &[f64] {
        if self.field.as_ref() != Some(field) {
            self.base.clone_from(&self.current);
            self.base_k = self.k;
            self.table = (*field != VectorField::Zero).then(|| self.engine.table(field));
            self.field = Some(field.clone());
        }
        self.k += 1;
        if let Some(t) = &self.table {
            self.current = self.engine.apply(t, (self.k - self.base_k) as usize, &self.base);
        }
        if self.k.rem_euclid(self.engine.rebase_steps as i64) == 0 {
            self.base.clone_from(&self.current);
            self.base_k = self.k;
        }
        &self.current
    }
}
