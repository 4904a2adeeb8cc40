//! Subcommand implementations. Each writes artifacts under the config's
//! output directory and is deterministic for fixed inputs; `run` journals
//! per-episode rows so interrupted suites resume instead of recomputing.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use dualguard::benchmark::{
    self, compute_metrics, csv_line, format_table, generate_episodes, generate_track_episodes,
    load_episodes, metrics_json, read_results_csv, save_episodes, write_results_csv, BenchError,
    EpisodeResult, RunKey, RunPlan, CSV_HEADER,
};
use dualguard::environment::{Environment, Scene};
use dualguard::filter::switching_band;
use dualguard::grid::{Axis, Grid};
use dualguard::hj::{self, SolveError, ValueField};
use dualguard::render::{brt_slice_contours, render_svg, RenderOptions, Trace};

use crate::config::{parse_method, RunConfig, ScenarioConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad config or flags; exit 2.
    Validation(String),
    /// Solver failed to converge; exit 3.
    NonConvergence(String),
    /// Missing or unreadable artifacts; exit 4.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid configuration: {m}"),
            CliError::NonConvergence(m) => write!(f, "solver did not converge: {m}"),
            CliError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Generation { .. } | BenchError::MismatchedEpisodes(_) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Io(e.to_string()),
        }
    }
}

/// Artifact layout under the output directory.
pub struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Self {
        Artifacts { dir: dir.to_path_buf() }
    }
    pub fn value_field(&self) -> PathBuf {
        self.dir.join("value_field.hjvf")
    }
    pub fn environment(&self) -> PathBuf {
        self.dir.join("environment.json")
    }
    pub fn episodes(&self) -> PathBuf {
        self.dir.join("episodes.json")
    }
    pub fn results(&self) -> PathBuf {
        self.dir.join("results.csv")
    }
    pub fn journal(&self) -> PathBuf {
        self.dir.join("results.partial.csv")
    }
    pub fn trajectories(&self) -> PathBuf {
        self.dir.join("trajectories")
    }
    pub fn trajectory(&self, method: &str, samples: usize, episode: u32) -> PathBuf {
        self.trajectories()
            .join(format!("{method}_K{samples}_ep{episode:03}.json"))
    }
    pub fn report_text(&self) -> PathBuf {
        self.dir.join("report.txt")
    }
    pub fn report_json(&self) -> PathBuf {
        self.dir.join("report.json")
    }
    pub fn render(&self) -> PathBuf {
        self.dir.join("render.svg")
    }
}

fn load_value_field(path: &Path) -> Result<ValueField<f64>, CliError> {
    if !path.exists() {
        return Err(CliError::Io(format!(
            "value field not found at {}; run `dualguard solve --config <config>` first",
            path.display()
        )));
    }
    ValueField::load(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn warn_on_model_mismatch(vf: &ValueField<f64>, model_id: &str) {
    if vf.model_id() != model_id {
        eprintln!(
            "warning: value field was solved for model '{}' but the config selects '{}'",
            vf.model_id(),
            model_id
        );
    }
}

/// Per-episode executed trajectory, one JSON file per (method, K, episode).
#[derive(Debug, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub method: String,
    pub samples: usize,
    pub episode_id: u32,
    pub outcome: String,
    pub states: Vec<Vec<f64>>,
}

pub fn cmd_solve(config: &RunConfig, out: Option<PathBuf>) -> Result<(), CliError> {
    let model = config.build_model();
    fs::create_dir_all(&config.output_dir)?;
    let artifacts = Artifacts::new(&config.output_dir);
    let params = config.solver_params();
    let map_solve = |e: SolveError| match e {
        SolveError::NonConvergence { .. } => CliError::NonConvergence(e.to_string()),
        other => CliError::Validation(other.to_string()),
    };
    let vf = match &config.scenario {
        ScenarioConfig::Interval { domain, threshold } => {
            let grid = Grid::new(vec![Axis::new(domain[0], domain[1], config.grid.nodes[0])])
                .map_err(|e| CliError::Validation(format!("grid: {e}")))?;
            let threshold = *threshold;
            let failure = move |x: &[f64]| x[0] - threshold;
            hj::solve(model.as_ref(), &failure, &grid, &params).map_err(map_solve)?
        }
        _ => {
            let scene = config.build_scene()?;
            let grid = config.build_grid(&scene)?;
            if let Scene::Planar(env) = &scene {
                env.save_json(&artifacts.environment())
                    .map_err(|e| CliError::Io(e.to_string()))?;
            }
            hj::solve(model.as_ref(), &scene, &grid, &params).map_err(map_solve)?
        }
    };
    let out = out.unwrap_or_else(|| artifacts.value_field());
    vf.save(&out).map_err(|e| CliError::Io(e.to_string()))?;
    println!(
        "solved {} nodes in {} iterations, residual {:.3e}",
        vf.grid().len(),
        vf.iterations(),
        vf.residual()
    );
    println!("BRT volume fraction {:.4}", vf.brt_volume_fraction());
    println!("wrote {}", out.display());
    Ok(())
}

pub fn cmd_episodes(config: &RunConfig, out: Option<PathBuf>) -> Result<(), CliError> {
    let model = config.build_model();
    let scene = config.build_scene()?;
    let artifacts = Artifacts::new(&config.output_dir);
    let vf = load_value_field(&artifacts.value_field())?;
    warn_on_model_mismatch(&vf, model.id());
    let suite = config.suite_spec();
    let band = config
        .method_params
        .eps_switch
        .unwrap_or_else(|| switching_band(&vf, model.as_ref(), suite.dt));
    let eps = config.episodes.safety_margin.unwrap_or(band).max(band);
    let specs = match &scene {
        Scene::Planar(env) => generate_episodes(&env.domain, &vf, &suite, eps)?,
        Scene::Track(track) => generate_track_episodes(track, &vf, &suite, eps)?,
    };
    fs::create_dir_all(&config.output_dir)?;
    let out = out.unwrap_or_else(|| artifacts.episodes());
    save_episodes(&out, &specs)?;
    println!("wrote {} episodes to {}", specs.len(), out.display());
    Ok(())
}

fn parse_subset_filter<T: std::str::FromStr>(
    flag: &str,
    raw: &Option<String>,
) -> Result<Option<Vec<T>>, CliError>
where
    T::Err: std::fmt::Display,
{
    let Some(raw) = raw else {
        return Ok(None);
    };
    raw.split(',')
        .map(|part| {
            part.trim()
                .parse::<T>()
                .map_err(|e| CliError::Validation(format!("--{flag} '{part}': {e}")))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

/// Journal rows survive interruption; completed (method, K, episode) keys
/// are skipped on re-run and the final CSV is rebuilt from the journal.
pub fn cmd_run(
    config: &RunConfig,
    methods_flag: &Option<String>,
    samples_flag: &Option<String>,
) -> Result<(), CliError> {
    // Flag validation first so a typo fails before any artifact I/O.
    let mut methods = config.run_methods()?;
    if let Some(subset) = parse_subset_filter::<String>("methods", methods_flag)? {
        let subset = subset
            .iter()
            .map(|n| parse_method(n))
            .collect::<Result<Vec<_>, _>>()?;
        methods.retain(|m| subset.contains(m));
    }
    let mut sample_counts = config.run.sample_counts.clone();
    if let Some(subset) = parse_subset_filter::<usize>("K", samples_flag)? {
        sample_counts.retain(|k| subset.contains(k));
    }
    if methods.is_empty() || sample_counts.is_empty() {
        return Err(CliError::Validation(
            "the requested method/K subset is empty".into(),
        ));
    }

    let model = config.build_model();
    let scene = config.build_scene()?;
    let artifacts = Artifacts::new(&config.output_dir);
    let vf = load_value_field(&artifacts.value_field())?;
    warn_on_model_mismatch(&vf, model.id());
    let episodes_path = artifacts.episodes();
    if !episodes_path.exists() {
        return Err(CliError::Io(format!(
            "episodes not found at {}; run `dualguard episodes --config <config>` first",
            episodes_path.display()
        )));
    }
    let episodes = load_episodes(&episodes_path)?;

    // Resume: completed keys come from the journal, tolerating a torn
    // final line from a hard kill.
    let journal_path = artifacts.journal();
    let mut prior_text = String::new();
    if journal_path.exists() {
        prior_text = fs::read_to_string(&journal_path)?;
        if !prior_text.ends_with('\n') {
            let cut = prior_text.rfind('\n').map_or(0, |i| i + 1);
            prior_text.truncate(cut);
        }
    }
    let skip: HashSet<RunKey> = if prior_text.is_empty() {
        HashSet::new()
    } else {
        benchmark::parse_results_csv(&prior_text, &journal_path.display().to_string())?
            .iter()
            .map(|r| (r.method, r.samples, r.episode_id))
            .collect()
    };

    fs::create_dir_all(artifacts.trajectories())?;
    let mut journal_file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&journal_path)?;
    if prior_text.is_empty() {
        // Fresh journal (or only a torn line): rewrite from the header.
        journal_file.set_len(0)?;
        writeln!(journal_file, "{CSV_HEADER}")?;
    } else if fs::metadata(&journal_path)?.len() != prior_text.len() as u64 {
        fs::write(&journal_path, &prior_text)?;
        journal_file = fs::OpenOptions::new().append(true).open(&journal_path)?;
    }
    let journal = Mutex::new(journal_file);

    let on_result = |result: &EpisodeResult| {
        let record = TrajectoryRecord {
            method: result.row.method.name().to_string(),
            samples: result.row.samples,
            episode_id: result.row.episode_id,
            outcome: result.row.outcome.name().to_string(),
            states: result.trajectory.clone(),
        };
        let path = artifacts.trajectory(
            &record.method,
            record.samples,
            record.episode_id,
        );
        let json = serde_json::to_string_pretty(&record).expect("trajectory serializes");
        if let Err(e) = fs::write(&path, json + "\n") {
            eprintln!("warning: could not write {}: {e}", path.display());
        }
        let mut file = journal.lock().expect("journal lock");
        if writeln!(file, "{}", csv_line(&result.row)).and_then(|_| file.flush()).is_err() {
            eprintln!("warning: journal write failed; resume data may be incomplete");
        }
    };

    let mut executed = 0usize;
    for &method in &methods {
        let plan = RunPlan {
            model: model.as_ref(),
            vf: &vf,
            scene: &scene,
            task: config.task_template(model.as_ref()),
            episodes: &episodes,
            methods: vec![method],
            sample_counts: sample_counts.clone(),
            mppi: config.mppi_params(method),
            extra: config.method_params(method, model.as_ref()),
            record_timing: config.run.record_timing,
        };
        executed += benchmark::run_suite(&plan, &skip, on_result).len();
    }
    drop(journal);

    // The journal now holds every completed row; the published CSV is its
    // sorted image.
    let rows = read_results_csv(&journal_path)?;
    write_results_csv(&artifacts.results(), &rows)?;
    println!(
        "ran {} episodes ({} resumed), wrote {} rows to {}",
        executed,
        skip.len(),
        rows.len(),
        artifacts.results().display()
    );
    Ok(())
}

pub fn cmd_report(config: &RunConfig, csv: Option<PathBuf>) -> Result<(), CliError> {
    let artifacts = Artifacts::new(&config.output_dir);
    let csv_path = csv.unwrap_or_else(|| artifacts.results());
    if !csv_path.exists() {
        return Err(CliError::Io(format!(
            "results not found at {}; run `dualguard run --config <config>` first",
            csv_path.display()
        )));
    }
    let rows = read_results_csv(&csv_path)?;
    let reference = config.reference_method()?;
    let mut text = String::new();
    let mut tables = Vec::new();
    for &samples in &config.run.sample_counts {
        if !rows.iter().any(|r| r.samples == samples) {
            continue;
        }
        let table = compute_metrics(&rows, samples, reference, config.run.relcost_success_only)?;
        text.push_str(&format_table(&table));
        text.push('\n');
        tables.push(metrics_json(&table));
    }
    if tables.is_empty() {
        return Err(CliError::Validation(format!(
            "{} has no rows at the configured sample counts",
            csv_path.display()
        )));
    }
    print!("{text}");
    fs::write(artifacts.report_text(), &text)?;
    let json = serde_json::Value::Array(tables);
    fs::write(
        artifacts.report_json(),
        serde_json::to_string_pretty(&json).expect("report serializes") + "\n",
    )?;
    Ok(())
}

pub fn cmd_render(
    config: &RunConfig,
    trajectories: &[PathBuf],
    heading_deg: Option<f64>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let artifacts = Artifacts::new(&config.output_dir);
    // Prefer the solved environment artifact so renders match the run.
    let scene = match &config.scenario {
        ScenarioConfig::Planar { .. } if artifacts.environment().exists() => {
            let env = Environment::load_json(&artifacts.environment())
                .map_err(|e| CliError::Io(format!("{}: {e}", artifacts.environment().display())))?;
            Scene::Planar(env)
        }
        _ => config.build_scene()?,
    };
    let contour = match heading_deg {
        Some(deg) => {
            let vf = load_value_field(&artifacts.value_field())?;
            if vf.grid().dims() != 3 {
                return Err(CliError::Validation(format!(
                    "heading slice needs a 3-dimensional field, got {} dimensions",
                    vf.grid().dims()
                )));
            }
            Some(brt_slice_contours(&vf, deg.to_radians()))
        }
        None => None,
    };
    let mut traces = Vec::new();
    for path in trajectories {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let record: TrajectoryRecord = serde_json::from_str(&text)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        traces.push(Trace {
            label: format!("{} K={} ep{}", record.method, record.samples, record.episode_id),
            points: record
                .states
                .iter()
                .map(|x| [x[0], x[1]])
                .collect(),
        });
    }
    let svg = render_svg(&scene, contour.as_ref(), &traces, &RenderOptions::default());
    fs::create_dir_all(&config.output_dir)?;
    let out = out.unwrap_or_else(|| artifacts.render());
    fs::write(&out, svg)?;
    println!("wrote {}", out.display());
    Ok(())
}
