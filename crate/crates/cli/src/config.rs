//! Run configuration: a single TOML document fixes the scenario, model,
//! grid, solver, controllers, and episode suite, so every subcommand is a
//! pure function of (config, flags) and re-runs are byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use dualguard::benchmark::SuiteSpec;
use dualguard::controllers::{Method, MethodParams, MppiParams, TrackObjective};
use dualguard::dynamics::{Bicycle3D, Dubins3D, DynamicsModel, Integrator1D};
use dualguard::environment::{
    generate_environment, Box2, EnvSpec, Racetrack, Scene, Task,
};
use dualguard::grid::{Axis, Grid};
use dualguard::hj::{SolverParams, DEFAULT_MAX_ITERATIONS};
use dualguard::SVec;

use crate::pipeline::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub scenario: ScenarioConfig,
    pub model: ModelConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub task: TaskConfig,
    #[serde(default)]
    pub episodes: EpisodesConfig,
    pub run: RunSection,
    pub mppi: MppiConfig,
    #[serde(default)]
    pub method_params: MethodParamsConfig,
    /// Per-method overrides of the MPPI and penalty knobs, keyed by
    /// method name.
    #[serde(default)]
    pub method_overrides: BTreeMap<String, MethodOverride>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioConfig {
    Planar {
        /// [x_min, y_min, x_max, y_max].
        domain: [f64; 4],
        seed: u64,
        obstacle_count: usize,
        /// [min, max] obstacle diameter (m).
        diameter_range: [f64; 2],
        #[serde(default = "default_true")]
        boundary_is_failure: bool,
    },
    Racetrack {
        centerline: Vec<[f64; 2]>,
        half_width: f64,
    },
    /// 1-d solver check: l(x) = x - threshold. Solve-only; the benchmark
    /// subcommands reject it.
    Interval {
        domain: [f64; 2],
        #[serde(default)]
        threshold: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Dubins {
        speed: f64,
        turn_max: f64,
    },
    Bicycle {
        v_range: [f64; 2],
        delta_max: f64,
        d_max: f64,
        wheelbase: f64,
    },
    Integrator1d,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Node counts per state dimension; the heading axis is periodic.
    pub nodes: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub cfl: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverParams::<f64>::default();
        SolverConfig {
            cfl: d.cfl,
            tolerance: d.tolerance,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub goal_radius: f64,
    /// Quadratic state weights, one per state dimension.
    pub q: Vec<f64>,
    pub control_effort: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodesConfig {
    pub count: u32,
    /// Episode horizon T (s).
    pub horizon: f64,
    /// Simulation and actuation period (s).
    pub dt: f64,
    pub seed: u64,
    pub min_separation: f64,
    pub boundary_fraction: f64,
    pub disturbance: bool,
    /// Minimum start/goal value during generation; defaults to the
    /// runtime switching band. Larger values keep suites clear of goals
    /// that sit inside the filter's effective keep-out.
    pub safety_margin: Option<f64>,
}

impl Default for EpisodesConfig {
    fn default() -> Self {
        let d = SuiteSpec::default();
        EpisodesConfig {
            count: d.episodes,
            horizon: d.horizon,
            dt: d.dt,
            seed: d.seed,
            min_separation: d.min_separation,
            boundary_fraction: d.boundary_fraction,
            disturbance: d.disturbance,
            safety_margin: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub sample_counts: Vec<usize>,
    #[serde(default = "all_method_names")]
    pub methods: Vec<String>,
    #[serde(default = "default_reference")]
    pub reference: String,
    #[serde(default)]
    pub relcost_success_only: bool,
    #[serde(default)]
    pub record_timing: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MppiConfig {
    /// Horizon steps H; the rollout period is the episode dt.
    pub horizon: usize,
    pub lambda: f64,
    pub sigma: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodParamsConfig {
    pub penalty_weight: f64,
    pub gamma: f64,
    /// Filter switching band; derived from the field when absent.
    pub eps_switch: Option<f64>,
    pub output_filter: bool,
    /// Track objective (racetrack scenario only).
    pub v_max: Option<f64>,
    pub centerline_weight: Option<f64>,
}

impl Default for MethodParamsConfig {
    fn default() -> Self {
        let d = MethodParams::<f64>::default();
        MethodParamsConfig {
            penalty_weight: d.penalty_weight,
            gamma: d.gamma,
            eps_switch: None,
            output_filter: d.output_filter,
            v_max: None,
            centerline_weight: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodOverride {
    pub lambda: Option<f64>,
    pub sigma: Option<Vec<f64>>,
    pub penalty_weight: Option<f64>,
    pub gamma: Option<f64>,
}

fn default_true() -> bool {
    true
}

fn default_reference() -> String {
    Method::DualGuard.name().to_string()
}

fn all_method_names() -> Vec<String> {
    Method::ALL.iter().map(|m| m.name().to_string()).collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        let model = self.model.build();
        if self.grid.nodes.len() != model.state_dim() {
            return bad(format!(
                "grid has {} dimensions but the model state has {}",
                self.grid.nodes.len(),
                model.state_dim()
            ));
        }
        if self.grid.nodes.iter().any(|&n| n < 2) {
            return bad("every grid axis needs at least 2 nodes".into());
        }
        if self.mppi.sigma.len() != model.control_dim() {
            return bad(format!(
                "mppi.sigma has {} entries but the model has {} control channels",
                self.mppi.sigma.len(),
                model.control_dim()
            ));
        }
        if self.task.q.len() != model.state_dim() {
            return bad(format!(
                "task.q has {} entries but the model state has {}",
                self.task.q.len(),
                model.state_dim()
            ));
        }
        if self.run.sample_counts.is_empty() {
            return bad("run.sample_counts must not be empty".into());
        }
        if self.run.methods.is_empty() {
            return bad("run.methods must not be empty".into());
        }
        for name in &self.run.methods {
            parse_method(name)?;
        }
        parse_method(&self.run.reference)?;
        for name in self.method_overrides.keys() {
            parse_method(name)?;
            if let Some(sigma) = &self.method_overrides[name].sigma {
                if sigma.len() != model.control_dim() {
                    return bad(format!(
                        "method_overrides.{name}.sigma has {} entries but the model has {} control channels",
                        sigma.len(),
                        model.control_dim()
                    ));
                }
            }
        }
        match &self.scenario {
            ScenarioConfig::Planar { domain, diameter_range, .. } => {
                if domain[0] >= domain[2] || domain[1] >= domain[3] {
                    return bad("scenario.domain must satisfy min < max per axis".into());
                }
                if diameter_range[0] <= 0.0 || diameter_range[0] > diameter_range[1] {
                    return bad("scenario.diameter_range must be positive and ordered".into());
                }
            }
            ScenarioConfig::Racetrack { centerline, half_width } => {
                if centerline.len() < 3 {
                    return bad("scenario.centerline needs at least 3 vertices".into());
                }
                if *half_width <= 0.0 {
                    return bad("scenario.half_width must be positive".into());
                }
            }
            ScenarioConfig::Interval { domain, .. } => {
                if domain[0] >= domain[1] {
                    return bad("scenario.domain must satisfy min < max".into());
                }
            }
        }
        Ok(())
    }

    pub fn build_model(&self) -> Box<dyn DynamicsModel<f64>> {
        self.model.build()
    }

    /// Scene construction is deterministic: planar obstacles come from the
    /// seeded generator, so every subcommand sees the same geometry.
    pub fn build_scene(&self) -> Result<Scene<f64>, CliError> {
        match &self.scenario {
            ScenarioConfig::Planar {
                domain,
                seed,
                obstacle_count,
                diameter_range,
                boundary_is_failure,
            } => {
                let spec = EnvSpec {
                    domain: Box2::new([domain[0], domain[1]], [domain[2], domain[3]]),
                    obstacle_count: *obstacle_count,
                    diameter_range: (diameter_range[0], diameter_range[1]),
                    boundary_is_failure: *boundary_is_failure,
                };
                let env = generate_environment(*seed, &spec)
                    .map_err(|e| CliError::Validation(format!("environment generation: {e}")))?;
                Ok(Scene::Planar(env))
            }
            ScenarioConfig::Racetrack { centerline, half_width } => {
                let track = Racetrack::new(centerline.clone(), *half_width)
                    .map_err(|e| CliError::Validation(format!("racetrack: {e}")))?;
                Ok(Scene::Track(track))
            }
            ScenarioConfig::Interval { .. } => Err(CliError::Validation(
                "the interval scenario only supports `solve`; benchmarking needs a planar or racetrack scenario"
                    .into(),
            )),
        }
    }

    pub fn build_grid(&self, scene: &Scene<f64>) -> Result<Grid<f64>, CliError> {
        let domain = scene.domain();
        let nodes = &self.grid.nodes;
        let axes = vec![
            Axis::new(domain.min[0], domain.max[0], nodes[0]),
            Axis::new(domain.min[1], domain.max[1], nodes[1]),
            Axis::periodic(0.0, std::f64::consts::TAU, nodes[2]),
        ];
        Grid::new(axes).map_err(|e| CliError::Validation(format!("grid: {e}")))
    }

    pub fn solver_params(&self) -> SolverParams<f64> {
        SolverParams {
            cfl: self.solver.cfl,
            tolerance: self.solver.tolerance,
            max_iterations: self.solver.max_iterations,
        }
    }

    pub fn suite_spec(&self) -> SuiteSpec {
        SuiteSpec {
            episodes: self.episodes.count,
            horizon: self.episodes.horizon,
            dt: self.episodes.dt,
            seed: self.episodes.seed,
            min_separation: self.episodes.min_separation,
            boundary_fraction: self.episodes.boundary_fraction,
            disturbance: self.episodes.disturbance,
        }
    }

    /// Goal-free task template; the benchmark fills the goal per episode.
    pub fn task_template(&self, model: &dyn DynamicsModel<f64>) -> Task<f64> {
        let zeros: SVec<f64> = std::iter::repeat(0.0).take(model.state_dim()).collect();
        Task::new(
            zeros,
            self.task.goal_radius,
            self.episodes.horizon,
            self.task.q.iter().copied().collect(),
            self.task.control_effort,
        )
    }

    pub fn run_methods(&self) -> Result<Vec<Method>, CliError> {
        self.run.methods.iter().map(|n| parse_method(n)).collect()
    }

    pub fn reference_method(&self) -> Result<Method, CliError> {
        parse_method(&self.run.reference)
    }

    /// Base MPPI parameters plus the per-method overrides. Samples, dt,
    /// and seed are placeholders the benchmark overwrites per episode.
    pub fn mppi_params(&self, method: Method) -> MppiParams<f64> {
        let over = self.method_overrides.get(method.name());
        MppiParams {
            samples: 1,
            horizon: self.mppi.horizon,
            dt: self.episodes.dt,
            lambda: over
                .and_then(|o| o.lambda)
                .unwrap_or(self.mppi.lambda),
            sigma: over
                .and_then(|o| o.sigma.clone())
                .unwrap_or_else(|| self.mppi.sigma.clone())
                .into_iter()
                .collect(),
            seed: 0,
        }
    }

    pub fn method_params(&self, method: Method, model: &dyn DynamicsModel<f64>) -> MethodParams<f64> {
        let over = self.method_overrides.get(method.name());
        let track = match &self.scenario {
            ScenarioConfig::Planar { .. } | ScenarioConfig::Interval { .. } => None,
            ScenarioConfig::Racetrack { .. } => {
                let bounds = model.control_bounds();
                Some(TrackObjective {
                    v_max: self.method_params.v_max.unwrap_or_else(|| bounds.hi(0)),
                    centerline_weight: self.method_params.centerline_weight.unwrap_or(1.0),
                })
            }
        };
        MethodParams {
            penalty_weight: over
                .and_then(|o| o.penalty_weight)
                .unwrap_or(self.method_params.penalty_weight),
            gamma: over.and_then(|o| o.gamma).unwrap_or(self.method_params.gamma),
            eps_switch: self.method_params.eps_switch,
            output_filter: self.method_params.output_filter,
            track,
        }
    }
}

impl ModelConfig {
    pub fn build(&self) -> Box<dyn DynamicsModel<f64>> {
        match self {
            ModelConfig::Dubins { speed, turn_max } => Box::new(Dubins3D::new(*speed, *turn_max)),
            ModelConfig::Bicycle {
                v_range,
                delta_max,
                d_max,
                wheelbase,
            } => Box::new(Bicycle3D::new(
                (v_range[0], v_range[1]),
                *delta_max,
                *d_max,
                *wheelbase,
            )),
            ModelConfig::Integrator1d => Box::new(Integrator1D::new()),
        }
    }
}

pub fn parse_method(name: &str) -> Result<Method, CliError> {
    name.parse()
        .map_err(|e: String| CliError::Validation(e))
}
