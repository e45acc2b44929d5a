//! Calibrate-then-freeze for constants whose existence is known but whose
//! values are not: measured on reference evolutions, inflated by a safety
//! factor and stored in a sidecar next to the scenario.

use std::path::Path;

use serde::{Deserialize, Serialize};

use contlab::correction::{ConstantInputs, CorrectionConstants};
use contlab::density::check_stability;
use contlab::dpp::lipschitz_probe;
use contlab::flow::regularity_spot_check;
use contlab::{FlowConfig, GridDensity, VectorField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, CliResult};
use crate::lab::Lab;
use crate::scenario::Scenario;

pub const SAFETY_FACTOR: f64 = 1.5;

/// Measured (or frozen) existence-level constants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Lipschitz constant of `t ↦ η(m(t))`.
    pub l_eta: f64,
    /// Time-Lipschitz constant `L_T` in `H¹`.
    pub time_lipschitz: f64,
    /// Exponential `H¹` growth rate.
    pub h1_growth: f64,
    /// `L²` data-stability constant.
    pub data_lipschitz: f64,
    /// Sup of the discrete `W^{2,∞}` norm along evolutions.
    pub c_u_tilde: f64,
    pub d2_phi: f64,
    pub d2_psi: f64,
    pub grad_j: f64,
    pub hess_j: f64,
    pub value_lipschitz_space: f64,
    pub value_lipschitz_time: f64,
}

impl Constants {
    fn scaled(&self, f: f64) -> Self {
        Self {
            l_eta: f * self.l_eta,
            time_lipschitz: f * self.time_lipschitz,
            h1_growth: f * self.h1_growth,
            data_lipschitz: f * self.data_lipschitz,
            c_u_tilde: f * self.c_u_tilde,
            d2_phi: f * self.d2_phi,
            d2_psi: f * self.d2_psi,
            grad_j: f * self.grad_j,
            hess_j: f * self.hess_j,
            value_lipschitz_space: f * self.value_lipschitz_space,
            value_lipschitz_time: f * self.value_lipschitz_time,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub scenario_sha256: String,
    pub safety_factor: f64,
    pub measured: Constants,
    pub frozen: Constants,
    pub pushback_strength: f64,
    pub n_ell: f64,
    pub n_psi: f64,
    pub l_ell: f64,
    pub l_psi: f64,
    pub correction: CorrectionConstants,
}

/// Floor for rates that vanish on degenerate scenarios (e.g. a zero atlas),
/// keeping the closed-form constants finite.
const RATE_FLOOR: f64 = 1e-3;

fn trajectories<const D: usize>(lab: &Lab<D>, m: &GridDensity<D>, field: &VectorField<D>, out: &mut Constants) -> CliResult<()> {
    let sched = lab.constant_schedule(field, m.time);
    let mut prev = lab.slack.eta(&m.values);
    let dt = lab.engine.dt;
    out.c_u_tilde = out.c_u_tilde.max(m.norms().w2inf);
    lab.engine.run(m, &sched, lab.horizon(), |_, v| {
        let e = lab.slack.eta(v);
        out.l_eta = out.l_eta.max((e - prev).abs() / dt);
        prev = e;
        out.c_u_tilde = out.c_u_tilde.max(contlab::density::norms(&lab.grid, v).w2inf);
        true
    })?;
    let scaled = GridDensity {
        values: m.values.iter().map(|v| 1.01 * v).collect(),
        ..m.clone()
    };
    let st = check_stability(&lab.engine, m, &scaled, &sched, lab.horizon(), None)?;
    out.time_lipschitz = out.time_lipschitz.max(st.time_lipschitz);
    out.h1_growth = out.h1_growth.max(st.h1_growth);
    out.data_lipschitz = out.data_lipschitz.max(st.data_lipschitz);
    Ok(())
}

pub fn measure<const D: usize>(lab: &Lab<D>) -> CliResult<Calibration> {
    let sc = lab.scenario();
    let mut c = Constants::default();
    let boundary = lab.boundary_state(sc.correction.weighted_fraction)?;
    let mut fields = lab.atlas.clone();
    fields.push(lab.pushback.field.clone());
    for f in &fields {
        trajectories(lab, &lab.m0, f, &mut c)?;
        trajectories(lab, &boundary, f, &mut c)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(sc.seeds.base ^ 0xCA1B);
    let pts: Vec<_> = (0..10)
        .map(|_| {
            std::array::from_fn::<f64, D, _>(|d| {
                lab.geom.omega_tilde.center[d] + lab.geom.omega_tilde.radius * rng.random_range(-1.0..1.0)
            })
        })
        .collect();
    let cfg = FlowConfig::new(lab.engine.dt, lab.grid.domain);
    for f in &fields {
        let r = regularity_spot_check(&lab.constant_schedule(f, 0.0), &pts, 0.0, lab.horizon(), 1e-3, &cfg)?;
        c.d2_phi = c.d2_phi.max(r.d2_phi);
        c.d2_psi = c.d2_psi.max(r.d2_psi);
        c.grad_j = c.grad_j.max(r.grad_j);
        c.hess_j = c.hess_j.max(r.hess_j);
    }

    let support: Vec<bool> = lab.grid.nodes().map(|x| lab.geom.omega.contains(&x)).collect();
    let size = 0.05 * contlab::density::l2_norm(&lab.grid, &lab.m0.values);
    let probe = lipschitz_probe(
        &lab.problem(),
        &lab.m0,
        sc.dp.probe_depth,
        &support,
        size,
        10,
        sc.probes.lipschitz_pairs,
        sc.seeds.base,
    )?;
    c.value_lipschitz_space = probe.max_ratio_space;
    c.value_lipschitz_time = probe.max_ratio_time;

    let frozen = c.scaled(SAFETY_FACTOR);
    let (n_ell, n_psi) = lab.cost.bounds(&lab.atlas, &lab.omega_tilde_t, frozen.c_u_tilde);
    let l_ell = lab.cost.running_lipschitz();
    let inputs = ConstantInputs {
        delta: lab.geom.delta,
        strength: lab.pushback.strength,
        r0: lab.geom.r0,
        p_sup: lab.geom.sup_weight_on(&lab.omega_tilde_t),
        l_eta: frozen.l_eta.max(RATE_FLOOR),
        v_max: lab.v_max(),
        exterior_measure: lab.exterior_measure(),
        time_lipschitz: frozen.time_lipschitz,
        growth: frozen.h1_growth.max(RATE_FLOOR),
        n_ell,
        l_ell,
    };
    let correction = CorrectionConstants::derive(&inputs, lab.engine.dt)?;
    Ok(Calibration {
        scenario_sha256: lab.loaded.sha256.clone(),
        safety_factor: SAFETY_FACTOR,
        measured: c,
        frozen,
        pushback_strength: lab.pushback.strength,
        n_ell,
        n_psi,
        l_ell,
        l_psi: lab.cost.terminal_lipschitz(),
        correction,
    })
}

pub fn read_sidecar(path: &Path) -> CliResult<Calibration> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

pub fn write_sidecar(path: &Path, cal: &Calibration) -> CliResult<()> {
    let text = toml::to_string(cal).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(path, format!("# calibrated constants; measured values times {SAFETY_FACTOR} are frozen\n{text}"))?;
    Ok(())
}

/// Loads the sidecar, calibrating first when the scenario asks for it and
/// the sidecar is missing or stale.
pub fn ensure<const D: usize>(lab: &mut Lab<D>, recalibrate: bool) -> CliResult<()> {
    let path = Scenario::sidecar_path(&lab.loaded.path);
    let mode = lab.scenario().correction.constants.clone();
    let existing = if path.exists() && !recalibrate { Some(read_sidecar(&path)?) } else { None };
    let cal = match existing {
        Some(c) if c.scenario_sha256 == lab.loaded.sha256 => c,
        Some(_) if mode == "frozen" => {
            return Err(CliError::validation("calibration sidecar", "sidecar was produced for a different scenario file"));
        }
        None if mode == "frozen" && !recalibrate => {
            return Err(CliError::validation("calibration sidecar", format!("{} is missing", path.display())));
        }
        _ => {
            let c = measure(lab)?;
            write_sidecar(&path, &c)?;
            c
        }
    };
    lab.calibration = Some(cal);
    Ok(())
}
