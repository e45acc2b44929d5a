//! Scenario files (TOML or JSON) and their validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use contlab::dpp::ScalarSpec;
use contlab::linalg::{Mat, Point};
use contlab::{Ball, ConvexBody, Polytope, Profile, QuarticBump, VectorField};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub dimension: usize,
    pub domain: DomainSpec,
    pub constants: ConstantsSpec,
    pub geometry: GeometrySpec,
    pub atlas: Vec<FieldSpec>,
    pub cost: CostSpec,
    pub initial: ProfileSpec,
    /// Schedule used by `simulate`; defaults to the first atlas field.
    #[serde(default)]
    pub schedule: Vec<SegmentSpec>,
    pub dp: DpSpec,
    pub correction: CorrectionSpec,
    #[serde(default)]
    pub probes: ProbeSpec,
    pub seeds: SeedSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub h: f64,
    pub dt: f64,
    pub horizon: f64,
    #[serde(default = "default_rebase")]
    pub rebase_steps: usize,
}

fn default_rebase() -> usize {
    50
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSpec {
    /// Uniform bound `M` on the atlas.
    #[serde(rename = "M")]
    pub m_bound: f64,
    /// Bound `C_U` on initial densities.
    #[serde(rename = "C_U")]
    pub c_u: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BodySpec {
    Ball { center: Vec<f64>, radius: f64 },
    Polytope { vertices: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallSpec {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub omega: BodySpec,
    pub omega_tilde: BallSpec,
    pub x_omega: Vec<f64>,
    /// Cutoff band; defaults to a tenth of the diameter of the dilated superset.
    pub cutoff_band: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero,
    Constant { value: Vec<f64> },
    Linear { matrix: Vec<Vec<f64>> },
    SmoothBump { center: Vec<f64>, radius: f64, direction: Vec<f64>, amplitude: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub control_weight: f64,
    pub running: ScalarSpec,
    pub terminal: ScalarSpec,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    #[serde(default)]
    pub bumps: Vec<BumpSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    pub center: Vec<f64>,
    pub radius: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub start: f64,
    pub end: f64,
    /// Atlas index.
    pub field: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpRun {
    pub depth: usize,
    #[serde(default)]
    pub start: f64,
    #[serde(default)]
    pub state: DpState,
}

/// Starting density of a DP run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DpState {
    /// The scenario's initial density.
    #[default]
    Initial,
    /// The correction's boundary profile scaled to `⟨p, m⟩ = δ`.
    Boundary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSpec {
    pub runs: Vec<DpRun>,
    /// Depth used by the state-Lipschitz and δ-monotonicity experiments.
    #[serde(default = "default_probe_depth")]
    pub probe_depth: usize,
}

fn default_probe_depth() -> usize {
    2
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionSpec {
    /// Bump straddling ∂Ω; its amplitudes are rescaled so that
    /// `⟨p, m⟩ = weighted_fraction · δ`.
    pub initial: ProfileSpec,
    pub weighted_fraction: f64,
    /// Atlas index of the constant drive to be corrected.
    pub drive: usize,
    /// `"calibrate"` or `"frozen"`; frozen values live in the sidecar.
    #[serde(default = "default_mode")]
    pub constants: String,
}

fn default_mode() -> String {
    "calibrate".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub appendix_samples: usize,
    pub cone_samples: usize,
    pub cone_zetas: Vec<f64>,
    /// Fractions of the admissible `ε` range.
    pub cone_eps_fractions: Vec<f64>,
    pub interpolation_pairs: usize,
    pub hamiltonian_pairs: usize,
    pub mcshane_queries: usize,
    pub lipschitz_pairs: usize,
    pub pushback_lattice: usize,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            appendix_samples: 200,
            cone_samples: 500,
            cone_zetas: vec![0.5, 1.0],
            cone_eps_fractions: vec![0.25, 1.0],
            interpolation_pairs: 100,
            hamiltonian_pairs: 100,
            mcshane_queries: 1000,
            lipschitz_pairs: 6,
            pushback_lattice: 10_000,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    pub base: u64,
}

/// A parsed scenario together with its source hash.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub scenario: Scenario,
    pub sha256: String,
    pub path: std::path::PathBuf,
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Reads a scenario; the format follows the extension (`.json` or TOML).
pub fn load_scenario(path: &Path) -> CliResult<Loaded> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| CliError::Parse(e.to_string()))?;
    let scenario: Scenario = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(|e| CliError::Parse(e.to_string()))?,
        _ => toml::from_str(&text).map_err(|e| CliError::Parse(e.to_string()))?,
    };
    scenario.check_shape()?;
    Ok(Loaded {
        scenario,
        sha256: hash_bytes(&bytes),
        path: path.to_path_buf(),
    })
}

pub fn arr<const D: usize>(v: &[f64], what: &str) -> CliResult<Point<D>> {
    <[f64; D]>::try_from(v).map_err(|_| CliError::validation("dimension", format!("{what} has {} entries, expected {D}", v.len())))
}

impl Scenario {
    /// Dimension-independent checks.
    fn check_shape(&self) -> CliResult<()> {
        if !(1..=2).contains(&self.dimension) {
            return Err(CliError::validation("dimension", "dimension must be 1 or 2"));
        }
        let d = &self.domain;
        if !(d.h > 0.0 && d.dt > 0.0 && d.horizon > 0.0) {
            return Err(CliError::validation("discretization", "h, dt and horizon must be positive"));
        }
        let steps = d.horizon / d.dt;
        if (steps - steps.round()).abs() > 1e-6 {
            return Err(CliError::validation("time grid", "dt must divide the horizon"));
        }
        if self.atlas.is_empty() {
            return Err(CliError::validation("atlas", "atlas is empty"));
        }
        if self.correction.drive >= self.atlas.len() {
            return Err(CliError::validation("atlas", "correction drive index out of range"));
        }
        if self.schedule.iter().any(|s| s.field >= self.atlas.len()) {
            return Err(CliError::validation("atlas", "schedule references a missing atlas field"));
        }
        let tick = d.dt * d.rebase_steps as f64;
        for run in &self.dp.runs {
            if run.depth == 0 {
                return Err(CliError::validation("dp depth", "depth must be positive"));
            }
            let seg = (d.horizon - run.start) / run.depth as f64 / tick;
            if run.start < 0.0 || (seg - seg.round()).abs() > 1e-6 || seg.round() < 1.0 {
                return Err(CliError::validation(
                    "dp depth",
                    format!(
                        "depth {} from t = {}: segment length must be a positive multiple of {tick}",
                        run.depth, run.start
                    ),
                ));
            }
        }
        if !matches!(self.correction.constants.as_str(), "calibrate" | "frozen") {
            return Err(CliError::validation("correction constants", "expected \"calibrate\" or \"frozen\""));
        }
        Ok(())
    }

    pub fn body<const D: usize>(&self) -> CliResult<ConvexBody<D>> {
        Ok(match &self.geometry.omega {
            BodySpec::Ball { center, radius } => ConvexBody::Ball(Ball::new(arr(center, "omega center")?, *radius)),
            BodySpec::Polytope { vertices } => {
                let v = vertices.iter().map(|v| arr(v, "omega vertex")).collect::<CliResult<Vec<_>>>()?;
                ConvexBody::Polytope(Polytope::from_vertices(v)?)
            }
        })
    }

    pub fn omega_tilde<const D: usize>(&self) -> CliResult<Ball<D>> {
        let b = &self.geometry.omega_tilde;
        Ok(Ball::new(arr(&b.center, "omega_tilde center")?, b.radius))
    }

    pub fn field<const D: usize>(spec: &FieldSpec) -> CliResult<VectorField<D>> {
        Ok(match spec {
            FieldSpec::Zero => VectorField::Zero,
            FieldSpec::Constant { value } => VectorField::Constant(arr(value, "constant field")?),
            FieldSpec::Linear { matrix } => {
                if matrix.len() != D {
                    return Err(CliError::validation("dimension", "linear field matrix has the wrong number of rows"));
                }
                let mut a: Mat<D> = [[0.0; D]; D];
                for (row, src) in a.iter_mut().zip(matrix) {
                    *row = arr(src, "linear field row")?;
                }
                VectorField::Linear(a)
            }
            FieldSpec::SmoothBump {
                center,
                radius,
                direction,
                amplitude,
            } => VectorField::SmoothBump {
                center: arr(center, "bump center")?,
                radius: *radius,
                direction: arr(direction, "bump direction")?,
                amplitude: *amplitude,
            },
        })
    }

    pub fn profile<const D: usize>(spec: &ProfileSpec) -> CliResult<Profile<D>> {
        Ok(Profile {
            bumps: spec
                .bumps
                .iter()
                .map(|b| {
                    Ok(QuarticBump {
                        center: arr(&b.center, "bump center")?,
                        radius: b.radius,
                        amplitude: b.amplitude,
                    })
                })
                .collect::<CliResult<Vec<_>>>()?,
        })
    }

    /// Sidecar path holding calibrated constants.
    pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
        path.with_file_name(format!("{stem}.calibration.toml"))
    }
}
