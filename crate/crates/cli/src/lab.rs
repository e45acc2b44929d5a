//! A scenario instantiated at a fixed dimension: grid, transport engine,
//! constraint geometry, certified atlas, pushback and costs.

use contlab::constraint::{build_pushback, ConstraintGeometry, Pushback, SlackEvaluator};
use contlab::correction::{CorrectionConstants, Corrector};
use contlab::density::{inner, make_initial};
use contlab::dpp::{CostModel, Problem};
use contlab::fields::{certify_membership, Certification};
use contlab::{Aabb, Ball, ControlSchedule, Grid, GridDensity, Segment, Transport, VectorField};

use crate::calibrate::Calibration;
use crate::error::{CliError, CliResult};
use crate::scenario::{arr, DpState, Loaded, ProfileSpec, Scenario};

pub struct Lab<const D: usize> {
    pub loaded: Loaded,
    pub grid: Grid<D>,
    pub engine: Transport<D>,
    pub geom: ConstraintGeometry<D>,
    pub slack: SlackEvaluator,
    pub omega_tilde_t: Ball<D>,
    pub band: f64,
    pub atlas: Vec<VectorField<D>>,
    pub certifications: Vec<Certification>,
    pub pushback: Pushback<D>,
    pub cost: CostModel<D>,
    pub m0: GridDensity<D>,
    pub horizon_k: i64,
    pub calibration: Option<Calibration>,
}

impl<const D: usize> Lab<D> {
    pub fn scenario(&self) -> &Scenario {
        &self.loaded.scenario
    }

    pub fn m_bound(&self) -> f64 {
        self.scenario().constants.m_bound
    }

    pub fn horizon(&self) -> f64 {
        self.scenario().domain.horizon
    }

    pub fn spacing(&self) -> f64 {
        self.grid.h / 2.0
    }

    pub fn build(loaded: Loaded) -> CliResult<Self> {
        let sc = &loaded.scenario;
        let dom = &sc.domain;
        let domain = Aabb::new(arr(&dom.lower, "box lower")?, arr(&dom.upper, "box upper")?);
        let grid = Grid::new(domain, dom.h).map_err(|e| CliError::validation("grid", e.to_string()))?;
        let engine = Transport::new(grid, dom.dt, dom.rebase_steps)?;
        let omega_tilde = sc.omega_tilde::<D>()?;
        let m = sc.constants.m_bound;
        let margin = (0..D)
            .map(|d| (omega_tilde.center[d] - omega_tilde.radius - domain.lower[d]).min(domain.upper[d] - omega_tilde.center[d] - omega_tilde.radius))
            .fold(f64::INFINITY, f64::min);
        let need = m * dom.horizon + 4.0 * dom.h;
        if margin < need {
            return Err(CliError::validation("box margin", format!("margin {margin} < M·T + 4h = {need}")));
        }
        let geom = ConstraintGeometry::new(sc.body::<D>()?, omega_tilde, arr(&sc.geometry.x_omega, "x_omega")?, sc.constants.delta)
            .map_err(|e| CliError::validation("geometry", e.to_string()))?;
        let omega_tilde_t = geom.omega_tilde_at(m, dom.horizon);
        let band = sc.geometry.cutoff_band.unwrap_or(0.1 * omega_tilde_t.diameter());
        if !(band > 0.0) {
            return Err(CliError::validation("cutoff band", "band must be positive"));
        }
        let mut atlas = Vec::with_capacity(sc.atlas.len());
        let mut certifications = Vec::with_capacity(sc.atlas.len());
        for (i, spec) in sc.atlas.iter().enumerate() {
            let f = Scenario::field::<D>(spec)?;
            let c = certify_membership(&f, &domain, dom.h / 2.0, m);
            if !c.ok {
                return Err(CliError::validation(
                    "atlas certification",
                    format!("field {i} ({}) exceeds M = {m}: W3inf = {}, H1 = {}", f.kind_name(), c.measured.w3inf, c.measured.h1),
                ));
            }
            atlas.push(f);
            certifications.push(c);
        }
        let pushback = build_pushback(&geom, &omega_tilde_t, band, m, &domain, dom.h / 2.0)?;
        let slack = SlackEvaluator::new(&geom, &grid);
        let m0 = make_initial(&Scenario::profile::<D>(&sc.initial)?, &grid, &omega_tilde, sc.constants.c_u)?;
        let eta0 = slack.eta(&m0.values);
        if eta0 < 0.0 {
            return Err(CliError::validation("initial feasibility", format!("eta(m0) = {eta0} < 0")));
        }
        let cost = CostModel::new(grid, sc.cost.control_weight, &sc.cost.running, &sc.cost.terminal)?;
        let horizon_k = engine.step_of(dom.horizon)?;
        Ok(Self {
            loaded,
            grid,
            engine,
            geom,
            slack,
            omega_tilde_t,
            band,
            atlas,
            certifications,
            pushback,
            cost,
            m0,
            horizon_k,
            calibration: None,
        })
    }

    pub fn calibration(&self) -> &Calibration {
        self.calibration.as_ref().expect("calibration loaded")
    }

    pub fn problem(&self) -> Problem<'_, D> {
        self.problem_with(&self.slack, &self.atlas)
    }

    pub fn problem_with<'a>(&'a self, slack: &'a SlackEvaluator, atlas: &'a [VectorField<D>]) -> Problem<'a, D> {
        Problem {
            engine: &self.engine,
            cost: &self.cost,
            slack,
            atlas,
            horizon: self.horizon_k,
        }
    }

    pub fn corrector(&self, constants: CorrectionConstants) -> Corrector<'_, D> {
        Corrector {
            engine: &self.engine,
            slack: &self.slack,
            pushback: &self.pushback.field,
            constants,
            horizon: self.horizon_k,
        }
    }

    /// `m0` re-tagged at time `t`.
    pub fn m0_at(&self, t: f64) -> GridDensity<D> {
        GridDensity { time: t, ..self.m0.clone() }
    }

    /// Starting density of a DP run at time `start`.
    pub fn dp_state(&self, state: DpState, start: f64) -> CliResult<GridDensity<D>> {
        Ok(match state {
            DpState::Initial => self.m0_at(start),
            DpState::Boundary => GridDensity {
                time: start,
                ..self.boundary_state(1.0)?
            },
        })
    }

    /// A profile rescaled so that `⟨p, m⟩ = fraction · δ`.
    pub fn scaled_profile(&self, spec: &ProfileSpec, fraction: f64) -> CliResult<GridDensity<D>> {
        let mut profile = Scenario::profile::<D>(spec)?;
        let raw = GridDensity {
            values: self.grid.sample(|x| profile.value(x)),
            grid: self.grid,
            time: 0.0,
        };
        let w = inner(&self.grid, &self.slack.weight, &raw.values);
        if !(w > 0.0) {
            return Err(CliError::validation("boundary profile", "profile has no mass outside omega"));
        }
        let s = fraction * self.geom.delta / w;
        profile.bumps.iter_mut().for_each(|b| b.amplitude *= s);
        Ok(make_initial(&profile, &self.grid, &self.geom.omega_tilde, self.scenario().constants.c_u)?)
    }

    /// Initial state of the correction experiment.
    pub fn boundary_state(&self, fraction: f64) -> CliResult<GridDensity<D>> {
        self.scaled_profile(&self.scenario().correction.initial, fraction)
    }

    pub fn constant_schedule(&self, field: &VectorField<D>, start: f64) -> ControlSchedule<D> {
        ControlSchedule::constant(field.clone(), start, self.horizon())
    }

    /// The `simulate` schedule from the scenario, or the first atlas field.
    pub fn scenario_schedule(&self) -> CliResult<ControlSchedule<D>> {
        let sc = self.scenario();
        if sc.schedule.is_empty() {
            return Ok(self.constant_schedule(&self.atlas[0], 0.0));
        }
        let segs = sc
            .schedule
            .iter()
            .map(|s| Segment {
                start: s.start,
                end: s.end,
                field: self.atlas[s.field].clone(),
            })
            .collect();
        ControlSchedule::new(segs).map_err(|e| CliError::validation("schedule", e.to_string()))
    }

    /// Largest sampled speed over the atlas.
    pub fn v_max(&self) -> f64 {
        self.certifications.iter().map(|c| c.measured.sup_orders[0]).fold(0.0, f64::max)
    }

    /// `|Ω̃(T) \ Ω|` by node counting.
    pub fn exterior_measure(&self) -> f64 {
        self.grid
            .nodes()
            .filter(|x| self.omega_tilde_t.distance(x) == 0.0 && !self.geom.omega.contains(x))
            .count() as f64
            * self.grid.cell_volume()
    }
}
