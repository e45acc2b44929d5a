//! Command-line surface: argument definitions and one handler per command.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use contlab::constraint::{constraint_value, gain_rate, is_feasible, ConeProbe, ConstraintVariant};
use contlab::density::make_initial;
use contlab::linalg;
use contlab::{ControlSchedule, GridDensity};

use crate::calibrate;
use crate::error::{CliError, CliResult};
use crate::lab::Lab;
use crate::output::{num, OutDir};
use crate::scenario::{load_scenario, DpState, Loaded, Scenario};
use crate::suites::{run_suite, SuiteResult, SUITES};

#[derive(Debug, Parser)]
#[command(name = "contlab", version, about = "State-constrained control of the continuity equation")]
pub struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Re-measure calibrated constants and rewrite the sidecar.
    #[arg(long)]
    pub recalibrate: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evolve the initial density under the scenario schedule.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of density snapshots, evenly spaced in time.
        #[arg(long, default_value_t = 5)]
        snapshots: usize,
    },
    /// Correct the constant drive from the boundary state and certify it.
    Correct {
        #[command(flatten)]
        common: Common,
    },
    /// Constrained value by exhaustive search over the atlas.
    Value {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        start: f64,
        /// Starting density.
        #[arg(long, value_enum, default_value_t = DpState::Initial)]
        state: DpState,
    },
    /// Dynamic programming identity at intermediate times.
    Dpp {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        start: f64,
        /// Starting density.
        #[arg(long, value_enum, default_value_t = DpState::Initial)]
        state: DpState,
        /// Intermediate time; all partition points when omitted.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// HJB residuals along the optimal branch.
    Residual {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        start: f64,
        /// Starting density.
        #[arg(long, value_enum, default_value_t = DpState::Initial)]
        state: DpState,
    },
    /// Run verification suites; exits 3 when any fails.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Restrict to the named suites.
        #[arg(long)]
        suite: Vec<String>,
    },
    /// Sample the forward-invariant cone around a state.
    ProbeCone {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1.0)]
        zeta: f64,
        /// Fraction of the admissible ε range.
        #[arg(long, default_value_t = 1.0)]
        epsilon_fraction: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = StateChoice::Boundary)]
        state: StateChoice,
    },
    /// Compare constraint variants on densities with equal exterior mass.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = VariantChoice::All)]
        variant: VariantChoice,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StateChoice {
    Boundary,
    Initial,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VariantChoice {
    WeightedTail,
    UnweightedTail,
    HardSupport,
    All,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate { common, .. }
            | Command::Correct { common }
            | Command::Value { common, .. }
            | Command::Dpp { common, .. }
            | Command::Residual { common, .. }
            | Command::Verify { common, .. }
            | Command::ProbeCone { common, .. }
            | Command::Sensitivity { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Correct { .. } => "correct",
            Command::Value { .. } => "value",
            Command::Dpp { .. } => "dpp",
            Command::Residual { .. } => "residual",
            Command::Verify { .. } => "verify",
            Command::ProbeCone { .. } => "probe-cone",
            Command::Sensitivity { .. } => "sensitivity",
        }
    }

    fn needs_calibration(&self) -> bool {
        matches!(self, Command::Correct { .. } | Command::Verify { .. } | Command::ProbeCone { .. })
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> CliResult<i32> {
    match cli.workers {
        Some(n) => {
            if n == 0 {
                return Err(CliError::validation("workers", "need at least one worker"));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Io(e.to_string()))?;
            pool.install(|| dispatch(&cli.command))
        }
        None => dispatch(&cli.command),
    }
}

fn dispatch(cmd: &Command) -> CliResult<i32> {
    let loaded = load_scenario(&cmd.common().scenario)?;
    match loaded.scenario.dimension {
        1 => execute::<1>(cmd, loaded),
        2 => execute::<2>(cmd, loaded),
        d => Err(CliError::validation("dimension", format!("unsupported dimension {d}"))),
    }
}

/// Builds the lab for a scenario, loading (or producing) calibrated constants.
pub fn open<const D: usize>(loaded: Loaded, recalibrate: bool) -> CliResult<Lab<D>> {
    let mut lab = Lab::<D>::build(loaded)?;
    calibrate::ensure(&mut lab, recalibrate)?;
    Ok(lab)
}

fn execute<const D: usize>(cmd: &Command, loaded: Loaded) -> CliResult<i32> {
    let common = cmd.common();
    let mut lab = Lab::<D>::build(loaded)?;
    if cmd.needs_calibration() || common.recalibrate {
        calibrate::ensure(&mut lab, common.recalibrate)?;
    }
    let out = OutDir::new(&common.out)?;
    let name = cmd.name();
    match cmd {
        Command::Simulate { snapshots, .. } => simulate(&lab, &out, *snapshots),
        Command::Correct { .. } => correct(&lab, &out),
        Command::Value { depth, start, state, .. } => value(&lab, &out, *depth, lab.dp_state(*state, *start)?),
        Command::Dpp { depth, start, state, tau, .. } => dpp(&lab, &out, *depth, lab.dp_state(*state, *start)?, *tau),
        Command::Residual { depth, start, state, .. } => residual(&lab, &out, *depth, lab.dp_state(*state, *start)?),
        Command::Verify { suite, .. } => {
            let report = verify(&lab, suite)?;
            for s in &report.suites {
                println!("{} {}", if s.passed { "PASS" } else { "FAIL" }, s.name);
            }
            out.json("verify.json", &lab.loaded, name, &report)?;
            Ok(if report.passed { 0 } else { 3 })
        }
        Command::ProbeCone {
            zeta,
            epsilon_fraction,
            seed,
            state,
            ..
        } => probe_cone(&lab, &out, *zeta, *epsilon_fraction, *seed, *state),
        Command::Sensitivity { variant, .. } => sensitivity(&lab, &out, *variant),
    }
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
}

/// Runs the named suites (all when empty) in a fixed order.
pub fn verify<const D: usize>(lab: &Lab<D>, filter: &[String]) -> CliResult<VerifyReport> {
    for f in filter {
        if !SUITES.contains(&f.as_str()) {
            return Err(CliError::validation("suite", format!("unknown suite {f:?}; known: {}", SUITES.join(", "))));
        }
    }
    let suites = SUITES
        .iter()
        .filter(|s| filter.is_empty() || filter.iter().any(|f| f == *s))
        .map(|s| run_suite(lab, s))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(VerifyReport {
        passed: suites.iter().all(|s| s.passed),
        suites,
    })
}

#[derive(Serialize)]
struct SegmentOut {
    start: f64,
    end: f64,
    kind: &'static str,
    atlas_index: Option<usize>,
}

fn segments_out<const D: usize>(lab: &Lab<D>, s: &ControlSchedule<D>) -> Vec<SegmentOut> {
    s.segments()
        .iter()
        .map(|seg| SegmentOut {
            start: seg.start,
            end: seg.end,
            kind: seg.field.kind_name(),
            atlas_index: lab.atlas.iter().position(|f| *f == seg.field),
        })
        .collect()
}

fn default_depth<const D: usize>(lab: &Lab<D>, depth: Option<usize>) -> usize {
    depth.or_else(|| lab.scenario().dp.runs.first().map(|r| r.depth)).unwrap_or(2)
}

fn simulate<const D: usize>(lab: &Lab<D>, out: &OutDir, snapshots: usize) -> CliResult<i32> {
    let schedule = lab.scenario_schedule()?;
    let k_end = lab.horizon_k;
    let marks: Vec<i64> = (0..snapshots.max(1)).map(|i| if snapshots <= 1 { k_end } else { k_end * i as i64 / (snapshots as i64 - 1) }).collect();
    let mut rows = Vec::new();
    let mut snaps = Vec::new();
    let mut record = |k: i64, v: &[f64]| {
        let t = lab.engine.time(k);
        let n = contlab::density::norms(&lab.grid, v);
        let mass: f64 = v.iter().sum::<f64>() * lab.grid.cell_volume();
        rows.push(vec![num(t), num(lab.slack.eta(v)), num(mass), num(n.l2), num(n.h1), num(n.w2inf)]);
        if marks.contains(&k) {
            snaps.push((k, v.to_vec()));
        }
    };
    record(0, &lab.m0.values);
    let end = lab.engine.run(&lab.m0, &schedule, lab.horizon(), |k, v| {
        record(k, v);
        true
    })?;
    out.csv("trajectory.csv", &lab.loaded, &["time", "eta", "mass", "l2", "h1", "w2inf"], &rows)?;
    let header = crate::output::csv_header(&lab.loaded);
    let mut files = Vec::new();
    for (k, v) in snaps {
        let m = GridDensity::from_values(lab.grid, v, lab.engine.time(k))?;
        let name = format!("density_{k:06}.csv");
        let mut buf = Vec::new();
        contlab::io::write_csv(&m, &header, &mut buf)?;
        out.write(&name, &buf)?;
        files.push(name);
    }
    let summary = json!({
        "schedule": segments_out(lab, &schedule),
        "steps": k_end,
        "final_eta": lab.slack.eta(&end.values),
        "min_eta": rows.iter().map(|r| r[1].parse::<f64>().unwrap_or(f64::NAN)).fold(f64::INFINITY, f64::min),
        "snapshots": files,
    });
    out.json("simulate.json", &lab.loaded, "simulate", &summary)?;
    Ok(0)
}

fn correct<const D: usize>(lab: &Lab<D>, out: &OutDir) -> CliResult<i32> {
    let sc = lab.scenario();
    let constants = lab.calibration().correction;
    let m = lab.boundary_state(sc.correction.weighted_fraction)?;
    let drive = lab.constant_schedule(&lab.atlas[sc.correction.drive], 0.0);
    let corr = lab.corrector(constants);
    let violation = corr.first_violation(&m, &drive)?;
    let fixed = corr.correct(&m, &drive)?;
    let rows: Vec<Vec<String>> = fixed.certificate.eta.iter().map(|(t, e)| vec![num(*t), num(*e)]).collect();
    out.csv("certificate.csv", &lab.loaded, &["time", "eta"], &rows)?;
    let report = json!({
        "violation": violation,
        "constants": constants,
        "windows": fixed.certificate.windows,
        "min_eta": fixed.certificate.min_eta,
        "corrected": segments_out(lab, &fixed.corrected),
    });
    out.json("correct.json", &lab.loaded, "correct", &report)?;
    Ok(0)
}

fn value<const D: usize>(lab: &Lab<D>, out: &OutDir, depth: Option<usize>, m: GridDensity<D>) -> CliResult<i32> {
    let depth = default_depth(lab, depth);
    let start = m.time;
    let v = lab.problem().value(&m, depth)?;
    let report = json!({
        "depth": depth,
        "start": start,
        "value": v.value,
        "choices": v.choices,
        "schedule": v.optimal_schedule.as_ref().map(|s| segments_out(lab, s)),
        "stats": v.stats,
        "fallback": v.fallback,
    });
    out.json("value.json", &lab.loaded, "value", &report)?;
    println!("{}", v.value);
    Ok(0)
}

fn dpp<const D: usize>(lab: &Lab<D>, out: &OutDir, depth: Option<usize>, m: GridDensity<D>, tau: Option<f64>) -> CliResult<i32> {
    let depth = default_depth(lab, depth);
    let problem = lab.problem();
    let start = m.time;
    let taus = match tau {
        Some(t) => vec![lab.engine.step_of(t)?],
        None => problem.uniform_partition(lab.engine.step_of(start)?, depth)?,
    };
    let checks = taus.iter().map(|&k| problem.dpp_check(&m, depth, k)).collect::<contlab::Result<Vec<_>>>()?;
    let rows: Vec<Vec<String>> = checks.iter().map(|c| vec![num(c.tau), num(c.lhs), num(c.rhs), num(c.gap)]).collect();
    out.csv("dpp.csv", &lab.loaded, &["tau", "lhs", "rhs", "gap"], &rows)?;
    out.json("dpp.json", &lab.loaded, "dpp", &json!({ "depth": depth, "start": start, "checks": checks }))?;
    Ok(0)
}

fn residual<const D: usize>(lab: &Lab<D>, out: &OutDir, depth: Option<usize>, m: GridDensity<D>) -> CliResult<i32> {
    let depth = default_depth(lab, depth);
    let start = m.time;
    let s = lab.problem().hjb_residual(&m, depth, 0.05)?;
    let rows: Vec<Vec<String>> = s
        .points
        .iter()
        .map(|p| vec![num(p.time), num(p.eta), p.binding.to_string(), num(p.residual)])
        .collect();
    out.csv("residual.csv", &lab.loaded, &["time", "eta", "binding", "residual"], &rows)?;
    out.json("residual.json", &lab.loaded, "residual", &json!({ "depth": depth, "start": start, "series": s }))?;
    Ok(0)
}

fn probe_cone<const D: usize>(lab: &Lab<D>, out: &OutDir, zeta: f64, frac: f64, seed: Option<u64>, state: StateChoice) -> CliResult<i32> {
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(CliError::validation("epsilon fraction", "must lie in (0, 1]"));
    }
    let probe = ConeProbe {
        geom: &lab.geom,
        pushback: &lab.pushback,
        omega_tilde_t: lab.omega_tilde_t,
        l_eta: lab.calibration().frozen.l_eta,
        horizon: lab.horizon(),
        dt: lab.engine.dt,
    };
    let m = match state {
        StateChoice::Boundary => lab.boundary_state(1.0)?,
        StateChoice::Initial => lab.m0.clone(),
    };
    let (b, _) = contlab::constraint::cone_radius_factor(&lab.geom, &lab.grid, lab.pushback.strength, &lab.omega_tilde_t, probe.l_eta);
    let eps = frac * b.min(lab.horizon() - m.time);
    let rep = probe.run(&m, zeta, eps, lab.scenario().probes.cone_samples, seed.unwrap_or(lab.scenario().seeds.base))?;
    out.json("cone.json", &lab.loaded, "probe-cone", &rep)?;
    Ok(if rep.all_feasible { 0 } else { 3 })
}

/// Two densities with the same exterior mass, one hugging ∂Ω and one pushed
/// further out: the weighted tail separates them, the unweighted one cannot.
fn sensitivity<const D: usize>(lab: &Lab<D>, out: &OutDir, choice: VariantChoice) -> CliResult<i32> {
    let sc = lab.scenario();
    let near = lab.boundary_state(1.0)?;
    let mut profile = Scenario::profile::<D>(&sc.correction.initial)?;
    let ot = lab.geom.omega_tilde;
    let x_omega = linalg::sub(&profile.bumps[0].center, &lab.geom.x_omega);
    let dir = linalg::scale(1.0 / linalg::norm2(&x_omega).max(1e-300), &x_omega);
    let room = profile
        .bumps
        .iter()
        .map(|b| ot.radius - linalg::norm2(&linalg::sub(&b.center, &ot.center)) - b.radius - lab.grid.h)
        .fold(f64::INFINITY, f64::min)
        .max(0.0);
    let shift = room.min(0.5 * profile.bumps[0].radius);
    for b in &mut profile.bumps {
        b.center = linalg::add(&b.center, &linalg::scale(shift, &dir));
    }
    let raw = make_initial(&profile, &lab.grid, &ot, f64::INFINITY)?;
    let target = constraint_value(ConstraintVariant::UnweightedTail, &lab.geom, &near);
    let have = constraint_value(ConstraintVariant::UnweightedTail, &lab.geom, &raw);
    let scale = if have > 0.0 { target / have } else { 1.0 };
    let far = GridDensity::from_values(lab.grid, raw.values.iter().map(|v| v * scale).collect(), 0.0)?;

    let variants: Vec<ConstraintVariant> = match choice {
        VariantChoice::WeightedTail => vec![ConstraintVariant::WeightedTail],
        VariantChoice::UnweightedTail => vec![ConstraintVariant::UnweightedTail],
        VariantChoice::HardSupport => vec![ConstraintVariant::HardSupport],
        VariantChoice::All => vec![ConstraintVariant::WeightedTail, ConstraintVariant::UnweightedTail, ConstraintVariant::HardSupport],
    };
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for v in variants {
        let (a, b) = (constraint_value(v, &lab.geom, &near), constraint_value(v, &lab.geom, &far));
        let (fa, fb) = (is_feasible(v, &lab.geom, &near), is_feasible(v, &lab.geom, &far));
        rows.push(vec![format!("{v:?}"), num(a), num(b), fa.to_string(), fb.to_string()]);
        table.push(json!({ "variant": v, "near": a, "far": b, "near_feasible": fa, "far_feasible": fb }));
    }
    out.csv("sensitivity.csv", &lab.loaded, &["variant", "near", "far", "near_feasible", "far_feasible"], &rows)?;
    let report = json!({
        "shift": shift,
        "variants": table,
        "weighted_gain_rate": gain_rate(&lab.geom, lab.pushback.strength, &lab.omega_tilde_t),
    });
    out.json("sensitivity.json", &lab.loaded, "sensitivity", &report)?;
    Ok(0)
}
