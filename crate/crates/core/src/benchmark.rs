//! Episode generation, closed-loop execution, and the metric suite:
//! Success/Timeout/Failure rates, relative cost over common safe
//! episodes, and paired significance tests. The harness runs at f64.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::{
    stage_cost, Controller, CostSpec, Method, MethodParams, MppiParams, PenaltyKind,
};
use crate::dynamics::{step, DynamicsModel, State};
use crate::environment::{Box2, Racetrack, Scene, Task};
use crate::hj::ValueField;
use crate::scalar::Real;
use crate::stats::{paired_t_test, standard_error};

const TAU: f64 = std::f64::consts::TAU;

/// Rejection budget per episode during generation.
const MAX_EPISODE_ATTEMPTS: usize = 10_000;
/// Goal redraws allowed before the start state itself is redrawn.
const MAX_GOAL_ATTEMPTS: usize = 200;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("episode generation exhausted {attempts} attempts (episode {episode})")]
    Generation { episode: u32, attempts: usize },
    #[error("result files disagree on episode sets: {0}")]
    MismatchedEpisodes(String),
    #[error("{path}: line {line}: {message}")]
    BadRecord {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Per-step actuation noise during execution: off, or uniform over the
/// model's disturbance box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub enabled: bool,
    pub seed: u64,
}

/// One benchmark episode; the same spec is replayed by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub id: u32,
    /// Full start state.
    pub x0: Vec<f64>,
    /// Goal as a state; position components drive the task.
    pub goal: Vec<f64>,
    /// Episode horizon T (s).
    pub horizon: f64,
    /// Simulation and actuation period (s).
    pub dt: f64,
    pub disturbance: DisturbanceSpec,
    /// Seeds the controller RNG; independent of method and sample count.
    pub seed: u64,
}

/// Suite-level generation parameters.
#[derive(Debug, Clone)]
pub struct SuiteSpec {
    pub episodes: u32,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    /// Minimum planar start-to-goal separation (m).
    pub min_separation: f64,
    /// Starts and goals live in the border band of this fraction of the
    /// domain half-extent.
    pub boundary_fraction: f64,
    pub disturbance: bool,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec {
            episodes: 50,
            horizon: 20.0,
            dt: 0.02,
            seed: 0,
            min_separation: 5.0,
            boundary_fraction: 0.2,
            disturbance: false,
        }
    }
}

/// splitmix64 finalizer; decouples derived seeds from draw order.
fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn band_width(domain: &Box2<f64>, fraction: f64) -> f64 {
    0.5 * domain.extent(0).min(domain.extent(1)) * fraction
}

/// Draw start/goal pairs in the outer border band, both provably safe
/// (V above the switching band) and at least `min_separation` apart.
pub fn generate_episodes(
    domain: &Box2<f64>,
    vf: &ValueField<f64>,
    suite: &SuiteSpec,
    eps_switch: f64,
) -> Result<Vec<EpisodeSpec>, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(suite.seed);
    let band = band_width(domain, suite.boundary_fraction);
    let draw_state = |rng: &mut ChaCha8Rng, attempts: &mut usize| -> Option<Vec<f64>> {
        while *attempts > 0 {
            *attempts -= 1;
            let p = [
                f64::uniform(rng, domain.min[0], domain.max[0]),
                f64::uniform(rng, domain.min[1], domain.max[1]),
            ];
            let heading = f64::uniform(rng, 0.0, TAU);
            if domain.inward_distance(p) > band {
                continue;
            }
            let x = vec![p[0], p[1], heading];
            if vf.value(&x) > eps_switch {
                return Some(x);
            }
        }
        None
    };

    let mut specs = Vec::with_capacity(suite.episodes as usize);
    for id in 0..suite.episodes {
        let mut attempts = MAX_EPISODE_ATTEMPTS;
        let pair = 'pair: loop {
            let Some(x0) = draw_state(&mut rng, &mut attempts) else {
                break None;
            };
            for _ in 0..MAX_GOAL_ATTEMPTS {
                let Some(goal) = draw_state(&mut rng, &mut attempts) else {
                    break 'pair None;
                };
                let dx = goal[0] - x0[0];
                let dy = goal[1] - x0[1];
                if (dx * dx + dy * dy).sqrt() >= suite.min_separation {
                    break 'pair Some((x0, goal));
                }
            }
        };
        let Some((x0, goal)) = pair else {
            return Err(BenchError::Generation {
                episode: id,
                attempts: MAX_EPISODE_ATTEMPTS,
            });
        };
        let seed = mix_seed(suite.seed, id as u64 + 1);
        specs.push(EpisodeSpec {
            id,
            x0,
            goal,
            horizon: suite.horizon,
            dt: suite.dt,
            disturbance: DisturbanceSpec {
                enabled: suite.disturbance,
                seed: mix_seed(seed, 0xD157),
            },
            seed,
        });
    }
    Ok(specs)
}

/// Track-suite variant: starts spread evenly along the centerline with
/// the local tangent heading, goals a fixed arclength ahead.
pub fn generate_track_episodes(
    track: &Racetrack<f64>,
    vf: &ValueField<f64>,
    suite: &SuiteSpec,
    eps_switch: f64,
) -> Result<Vec<EpisodeSpec>, BenchError> {
    let total = track.total_length();
    let ahead = (total * 0.25).max(suite.min_separation);
    let mut specs = Vec::with_capacity(suite.episodes as usize);
    for id in 0..suite.episodes {
        let base = total * id as f64 / suite.episodes as f64;
        let mut found = None;
        // Nudge along the track until both endpoints clear the band.
        for k in 0..MAX_GOAL_ATTEMPTS {
            let s = (base + total * k as f64 * 1e-3) % total;
            let (p0, h0) = track.point_at(s);
            let (p1, h1) = track.point_at((s + ahead) % total);
            let x0 = vec![p0[0], p0[1], h0];
            let goal = vec![p1[0], p1[1], h1];
            if vf.value(&x0) > eps_switch && vf.value(&goal) > eps_switch {
                found = Some((x0, goal));
                break;
            }
        }
        let Some((x0, goal)) = found else {
            return Err(BenchError::Generation {
                episode: id,
                attempts: MAX_GOAL_ATTEMPTS,
            });
        };
        let seed = mix_seed(suite.seed, id as u64 + 1);
        specs.push(EpisodeSpec {
            id,
            x0,
            goal,
            horizon: suite.horizon,
            dt: suite.dt,
            disturbance: DisturbanceSpec {
                enabled: suite.disturbance,
                seed: mix_seed(seed, 0xD157),
            },
            seed,
        });
    }
    Ok(specs)
}

pub fn save_episodes(path: &Path, specs: &[EpisodeSpec]) -> Result<(), BenchError> {
    let text = serde_json::to_string_pretty(specs)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_episodes(path: &Path) -> Result<Vec<EpisodeSpec>, BenchError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Success,
    Timeout,
    Failure,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Timeout => "timeout",
            Outcome::Failure => "failure",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "success" => Ok(Outcome::Success),
            "timeout" => Ok(Outcome::Timeout),
            "failure" => Ok(Outcome::Failure),
            other => Err(format!("unknown outcome '{other}'")),
        }
    }
}

/// One raw results row; mirrors the CSV columns exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub samples: usize,
    pub episode_id: u32,
    pub outcome: Outcome,
    pub steps: u32,
    /// Accumulated performance cost (goal quadratic + control effort);
    /// never includes safety penalties.
    pub cost: f64,
    /// 0 unless timing was recorded.
    pub mean_step_ms: f64,
    pub min_l: f64,
    pub min_v: f64,
}

/// Full in-memory episode outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub row: ResultRow,
    /// min l over every rollout state of every controller step; +inf when
    /// no step ran.
    pub rollout_min_l: f64,
    /// Executed states, x0 first.
    pub trajectory: Vec<Vec<f64>>,
}

pub type RunKey = (Method, usize, u32);

/// Execute one episode closed-loop.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    model: &dyn DynamicsModel<f64>,
    vf: &ValueField<f64>,
    scene: &Scene<f64>,
    task_template: &Task<f64>,
    method: Method,
    samples: usize,
    mppi: &MppiParams<f64>,
    extra: &MethodParams<f64>,
    spec: &EpisodeSpec,
    record_timing: bool,
) -> EpisodeResult {
    let mut task = task_template.clone();
    task.goal = spec.goal.iter().copied().collect();
    let mut params = mppi.clone();
    params.samples = samples;
    params.dt = spec.dt;
    params.seed = spec.seed;
    // Performance-only costing for the reported episode cost.
    let mut perf = CostSpec::new(task.clone(), PenaltyKind::None, 0.0);
    perf.track = extra.track.clone();

    let mut ctl = Controller::new(method, model, vf, scene, task.clone(), params, extra.clone());
    let mut dist_rng = spec
        .disturbance
        .enabled
        .then(|| ChaCha8Rng::seed_from_u64(spec.disturbance.seed));
    let db = model.disturbance_bounds().clone();

    let steps_max = (spec.horizon / spec.dt).round() as u32;
    let mut x: State<f64> = spec.x0.iter().copied().collect();
    let mut trajectory = vec![spec.x0.clone()];
    let mut cost = 0.0;
    let mut min_l = scene.l(&x);
    let mut min_v = vf.value(&x);
    let mut steps = 0u32;
    let mut elapsed = 0.0f64;

    let outcome = loop {
        if min_l <= 0.0 {
            break Outcome::Failure;
        }
        if task.reached(&x) {
            break Outcome::Success;
        }
        if steps >= steps_max {
            break Outcome::Timeout;
        }
        let t0 = record_timing.then(Instant::now);
        let out = ctl.controller_step(&x);
        if let Some(t0) = t0 {
            elapsed += t0.elapsed().as_secs_f64() * 1e3;
        }
        cost += stage_cost(&perf, scene, vf, &x, &out.control);
        let d: State<f64> = match &mut dist_rng {
            Some(rng) => (0..db.dim())
                .map(|i| f64::uniform(rng, db.lo(i), db.hi(i)))
                .collect(),
            None => std::iter::repeat(0.0).take(db.dim()).collect(),
        };
        x = step(model, &x, &out.control, &d, spec.dt);
        steps += 1;
        min_l = min_l.min(scene.l(&x));
        min_v = min_v.min(vf.value(&x));
        trajectory.push(x.to_vec());
    };

    EpisodeResult {
        row: ResultRow {
            method,
            samples,
            episode_id: spec.id,
            outcome,
            steps,
            cost,
            mean_step_ms: if record_timing && steps > 0 {
                elapsed / steps as f64
            } else {
                0.0
            },
            min_l,
            min_v,
        },
        rollout_min_l: ctl.episode_rollout_min_l(),
        trajectory,
    }
}

/// Everything a full (method x K x episode) sweep needs.
pub struct RunPlan<'a> {
    pub model: &'a dyn DynamicsModel<f64>,
    pub vf: &'a ValueField<f64>,
    pub scene: &'a Scene<f64>,
    pub task: Task<f64>,
    pub episodes: &'a [EpisodeSpec],
    pub methods: Vec<Method>,
    pub sample_counts: Vec<usize>,
    pub mppi: MppiParams<f64>,
    pub extra: MethodParams<f64>,
    pub record_timing: bool,
}

/// Run the full cross product minus `skip`, episodes in parallel.
/// `on_result` fires from worker threads as episodes finish (journaling);
/// the returned order is the deterministic (method, K, episode) order.
pub fn run_suite<F>(plan: &RunPlan, skip: &HashSet<RunKey>, on_result: F) -> Vec<EpisodeResult>
where
    F: Fn(&EpisodeResult) + Sync,
{
    let mut triples = Vec::new();
    for &method in &plan.methods {
        for &samples in &plan.sample_counts {
            for spec in plan.episodes {
                if !skip.contains(&(method, samples, spec.id)) {
                    triples.push((method, samples, spec));
                }
            }
        }
    }
    triples
        .into_par_iter()
        .map(|(method, samples, spec)| {
            let result = run_episode(
                plan.model,
                plan.vf,
                plan.scene,
                &plan.task,
                method,
                samples,
                &plan.mppi,
                &plan.extra,
                spec,
                plan.record_timing,
            );
            on_result(&result);
            result
        })
        .collect()
}

pub const CSV_HEADER: &str = "method,K,episode_id,outcome,steps,cost,mean_step_ms,min_l,min_V";

/// One row without trailing newline; floats print shortest-round-trip.
pub fn csv_line(r: &ResultRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        r.method, r.samples, r.episode_id, r.outcome, r.steps, r.cost, r.mean_step_ms, r.min_l, r.min_v
    )
}

/// Canonical row order: byte-identical files regardless of execution
/// interleaving.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        (a.method.name(), a.samples, a.episode_id).cmp(&(b.method.name(), b.samples, b.episode_id))
    });
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<(), BenchError> {
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for r in &sorted {
        text.push_str(&csv_line(r));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>, BenchError> {
    let text = std::fs::read_to_string(path)?;
    parse_results_csv(&text, &path.display().to_string())
}

pub fn parse_results_csv(text: &str, origin: &str) -> Result<Vec<ResultRow>, BenchError> {
    let bad = |line: usize, message: String| BenchError::BadRecord {
        path: origin.to_string(),
        line,
        message,
    };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != CSV_HEADER {
                return Err(bad(1, format!("expected header '{CSV_HEADER}'")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(bad(i + 1, format!("expected 9 fields, got {}", fields.len())));
        }
        let row = (|| -> Result<ResultRow, String> {
            Ok(ResultRow {
                method: fields[0].parse()?,
                samples: fields[1].parse().map_err(|e| format!("K: {e}"))?,
                episode_id: fields[2].parse().map_err(|e| format!("episode_id: {e}"))?,
                outcome: fields[3].parse()?,
                steps: fields[4].parse().map_err(|e| format!("steps: {e}"))?,
                cost: fields[5].parse().map_err(|e| format!("cost: {e}"))?,
                mean_step_ms: fields[6].parse().map_err(|e| format!("mean_step_ms: {e}"))?,
                min_l: fields[7].parse().map_err(|e| format!("min_l: {e}"))?,
                min_v: fields[8].parse().map_err(|e| format!("min_V: {e}"))?,
            })
        })()
        .map_err(|m| bad(i + 1, m))?;
        rows.push(row);
    }
    Ok(rows)
}

/// One method's line in the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodMetrics {
    pub method: Method,
    pub episodes: usize,
    pub success_pct: f64,
    pub timeout_pct: f64,
    pub failure_pct: f64,
    /// None when the common set is empty (undefined).
    pub rel_cost: Option<f64>,
    pub rel_cost_se: Option<f64>,
    pub p_value: Option<f64>,
    /// Size of the common non-failed episode set vs the reference.
    pub common: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub samples: usize,
    pub reference: Method,
    /// True when the common set kept only successes.
    pub success_only: bool,
    pub rows: Vec<MethodMetrics>,
}

/// Aggregate one K's rows. Episode order is canonicalized internally, so
/// the result is invariant to row permutation.
pub fn compute_metrics(
    rows: &[ResultRow],
    samples: usize,
    reference: Method,
    success_only: bool,
) -> Result<MetricsTable, BenchError> {
    let mut by_method: BTreeMap<&'static str, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.samples == samples) {
        by_method.entry(r.method.name()).or_default().push(r);
    }
    for list in by_method.values_mut() {
        list.sort_by_key(|r| r.episode_id);
    }
    let Some(ref_rows) = by_method.get(reference.name()).cloned() else {
        return Err(BenchError::MismatchedEpisodes(format!(
            "reference method '{}' missing at K = {}",
            reference.name(),
            samples
        )));
    };
    let ref_ids: Vec<u32> = ref_rows.iter().map(|r| r.episode_id).collect();

    let keep = |r: &ResultRow| {
        if success_only {
            r.outcome == Outcome::Success
        } else {
            r.outcome != Outcome::Failure
        }
    };

    let mut out = Vec::new();
    for method in Method::ALL {
        let Some(list) = by_method.get(method.name()) else {
            continue;
        };
        let ids: Vec<u32> = list.iter().map(|r| r.episode_id).collect();
        if ids != ref_ids {
            return Err(BenchError::MismatchedEpisodes(format!(
                "method '{}' ran a different episode set than '{}'",
                method.name(),
                reference.name()
            )));
        }
        let n = list.len();
        let count = |o: Outcome| list.iter().filter(|r| r.outcome == o).count();
        let pct = |c: usize| 100.0 * c as f64 / n as f64;

        let mut mine = Vec::new();
        let mut theirs = Vec::new();
        for (r, rr) in list.iter().zip(&ref_rows) {
            if keep(r) && keep(rr) {
                mine.push(r.cost);
                theirs.push(rr.cost);
            }
        }
        let common = mine.len();
        let (rel_cost, rel_cost_se, p_value) = if common == 0 {
            (None, None, None)
        } else {
            let mean_ref = theirs.iter().sum::<f64>() / common as f64;
            if mean_ref > 0.0 {
                let mean = mine.iter().sum::<f64>() / common as f64;
                (
                    Some(mean / mean_ref),
                    Some(standard_error(&mine) / mean_ref),
                    Some(paired_t_test(&mine, &theirs).p),
                )
            } else {
                (None, None, None)
            }
        };
        out.push(MethodMetrics {
            method,
            episodes: n,
            success_pct: pct(count(Outcome::Success)),
            timeout_pct: pct(count(Outcome::Timeout)),
            failure_pct: pct(count(Outcome::Failure)),
            rel_cost,
            rel_cost_se,
            p_value,
            common,
        });
    }
    Ok(MetricsTable {
        samples,
        reference,
        success_only,
        rows: out,
    })
}

/// Aligned-text rendering; a trailing * marks p < 0.05 against the
/// reference.
pub fn format_table(table: &MetricsTable) -> String {
    let mut s = format!(
        "K = {}  (reference: {}, common set: {})\n",
        table.samples,
        table.reference.name(),
        if table.success_only {
            "successes"
        } else {
            "non-failures"
        }
    );
    s.push_str(&format!(
        "{:<16} {:>9} {:>9} {:>9} {:>17} {:>9} {:>7}\n",
        "method", "success%", "timeout%", "failure%", "relcost", "p", "common"
    ));
    for r in &table.rows {
        let relcost = match (r.rel_cost, r.rel_cost_se) {
            (Some(c), Some(se)) => format!("{c:.3} +/- {se:.3}"),
            _ => "n/a".to_string(),
        };
        let p = match r.p_value {
            Some(p) if r.method != table.reference && p < 0.05 => format!("{p:.4}*"),
            Some(p) => format!("{p:.4}"),
            None => "n/a".to_string(),
        };
        s.push_str(&format!(
            "{:<16} {:>9.1} {:>9.1} {:>9.1} {:>17} {:>9} {:>7}\n",
            r.method.name(),
            r.success_pct,
            r.timeout_pct,
            r.failure_pct,
            relcost,
            p,
            r.common
        ));
    }
    s
}

/// JSON mirror of the table for machine consumption.
pub fn metrics_json(table: &MetricsTable) -> serde_json::Value {
    serde_json::json!({
        "K": table.samples,
        "reference": table.reference.name(),
        "success_only": table.success_only,
        "rows": table.rows.iter().map(|r| serde_json::json!({
            "method": r.method.name(),
            "episodes": r.episodes,
            "success_pct": r.success_pct,
            "timeout_pct": r.timeout_pct,
            "failure_pct": r.failure_pct,
            "rel_cost": r.rel_cost,
            "rel_cost_se": r.rel_cost_se,
            "p_value": r.p_value,
            "common": r.common,
        })).collect::<Vec<_>>(),
    })
}
