//! End-to-end tests against the compiled binary: artifact determinism,
//! journal-based resumption, exit codes, and the report/render outputs.
//!
//! A small shared pipeline (coarse grid, 3 episodes, K in {12, 6}) is run
//! once; tests that mutate artifacts get their own directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dualguard")
}

fn run_cli(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn assert_code(out: &Output, expected: i32) {
    let code = out.status.code().expect("exit code");
    assert_eq!(
        code,
        expected,
        "exit {code}, wanted {expected}\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Coarse planar suite: solves in well under a second, produces a mix of
/// success/timeout/failure outcomes, and keeps the run deterministic.
fn tiny_config_text(out_dir: &Path) -> String {
    format!(
        r#"output_dir = "{}"

[scenario]
kind = "planar"
domain = [0.0, 0.0, 10.0, 10.0]
seed = 11
obstacle_count = 4
diameter_range = [1.0, 2.0]

[model]
kind = "dubins"
speed = 2.0
turn_max = 3.0

[grid]
nodes = [31, 31, 16]

[solver]
cfl = 0.8
tolerance = 1e-3

[task]
goal_radius = 0.5
q = [1.0, 1.0, 0.0]
control_effort = 0.1

[episodes]
count = 3
horizon = 6.0
dt = 0.05
seed = 7
min_separation = 4.0

[run]
sample_counts = [12, 6]
methods = ["obs_penalty", "dualguard"]

[mppi]
horizon = 15
lambda = 40.0
sigma = [1.2]
"#,
        out_dir.display()
    )
}

fn write_tiny_config(dir: &Path) -> (PathBuf, PathBuf) {
    let out_dir = dir.join("out");
    let config = dir.join("run.toml");
    fs::write(&config, tiny_config_text(&out_dir)).unwrap();
    (config, out_dir)
}

struct Fixture {
    _dir: TempDir,
    config: PathBuf,
    out: PathBuf,
}

/// Solved + generated + fully run pipeline, shared read-only by tests.
fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let (config, out) = write_tiny_config(dir.path());
        let cfg = config.to_str().unwrap();
        for sub in ["solve", "episodes", "run"] {
            let res = run_cli(&[sub, "--config", cfg], &[]);
            assert_code(&res, 0);
        }
        Fixture { _dir: dir, config, out }
    })
}

#[test]
fn solve_prints_summary_and_is_deterministic() {
    let fx = fixture();
    let dir = TempDir::new().unwrap();
    let (config, out) = write_tiny_config(dir.path());
    let res = run_cli(&["solve", "--config", config.to_str().unwrap()], &[]);
    assert_code(&res, 0);
    let text = stdout_of(&res);
    assert!(text.contains("solved 15376 nodes"), "stdout: {text}");
    assert!(text.contains("BRT volume fraction 0.2871"), "stdout: {text}");
    assert!(text.contains("wrote "), "stdout: {text}");

    let field_a = fs::read(fx.out.join("value_field.hjvf")).unwrap();
    let field_b = fs::read(out.join("value_field.hjvf")).unwrap();
    assert_eq!(field_a, field_b, "value field bytes differ across runs");
    let env_a = fs::read(fx.out.join("environment.json")).unwrap();
    let env_b = fs::read(out.join("environment.json")).unwrap();
    assert_eq!(env_a, env_b, "environment bytes differ across runs");
}

#[test]
fn episodes_require_a_solved_field() {
    let dir = TempDir::new().unwrap();
    let (config, _) = write_tiny_config(dir.path());
    let res = run_cli(&["episodes", "--config", config.to_str().unwrap()], &[]);
    assert_code(&res, 4);
    assert!(stderr_of(&res).contains("dualguard solve"));
}

#[test]
fn run_requires_episodes() {
    let fx = fixture();
    let dir = TempDir::new().unwrap();
    let (config, out) = write_tiny_config(dir.path());
    fs::create_dir_all(&out).unwrap();
    fs::copy(fx.out.join("value_field.hjvf"), out.join("value_field.hjvf")).unwrap();
    let res = run_cli(&["run", "--config", config.to_str().unwrap()], &[]);
    assert_code(&res, 4);
    assert!(stderr_of(&res).contains("dualguard episodes"));
}

#[test]
fn report_requires_results() {
    let dir = TempDir::new().unwrap();
    let (config, _) = write_tiny_config(dir.path());
    let res = run_cli(&["report", "--config", config.to_str().unwrap()], &[]);
    assert_code(&res, 4);
    assert!(stderr_of(&res).contains("dualguard run"));
}

#[test]
fn bad_run_flags_fail_before_artifact_io() {
    // No artifacts exist, so a 4 here would mean the flags were not
    // checked first.
    let dir = TempDir::new().unwrap();
    let (config, _) = write_tiny_config(dir.path());
    let cfg = config.to_str().unwrap();

    let res = run_cli(&["run", "--config", cfg, "--methods", "bogus"], &[]);
    assert_code(&res, 2);
    assert!(stderr_of(&res).contains("bogus"));

    let res = run_cli(&["run", "--config", cfg, "--K", "99"], &[]);
    assert_code(&res, 2);
    assert!(stderr_of(&res).contains("subset is empty"));

    let res = run_cli(&["run", "--config", cfg, "--K", "twelve"], &[]);
    assert_code(&res, 2);
    assert!(stderr_of(&res).contains("twelve"));
}

#[test]
fn results_are_byte_identical_across_thread_counts() {
    let fx = fixture();
    let dir = TempDir::new().unwrap();
    let (config, out) = write_tiny_config(dir.path());
    let cfg = config.to_str().unwrap();
    let envs = [("DUALGUARD_THREADS", "4")];
    for sub in ["solve", "episodes", "run"] {
        let res = run_cli(&[sub, "--config", cfg], &envs);
        assert_code(&res, 0);
    }
    for name in ["value_field.hjvf", "episodes.json", "results.csv"] {
        let a = fs::read(fx.out.join(name)).unwrap();
        let b = fs::read(out.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between thread counts");
    }
}

#[test]
fn interrupted_runs_resume_from_the_journal() {
    let fx = fixture();
    let dir = TempDir::new().unwrap();
    let (config, out) = write_tiny_config(dir.path());
    let cfg = config.to_str().unwrap();
    fs::create_dir_all(&out).unwrap();
    for name in ["value_field.hjvf", "environment.json", "episodes.json"] {
        fs::copy(fx.out.join(name), out.join(name)).unwrap();
    }
    let reference = fs::read(fx.out.join("results.csv")).unwrap();

    // Half the suite, then the rest: completed rows are not recomputed.
    let res = run_cli(&["run", "--config", cfg, "--methods", "obs_penalty"], &[]);
    assert_code(&res, 0);
    assert!(stdout_of(&res).contains("ran 6 episodes (0 resumed)"));

    let res = run_cli(&["run", "--config", cfg], &[]);
    assert_code(&res, 0);
    let text = stdout_of(&res);
    assert!(text.contains("ran 6 episodes (6 resumed)"), "stdout: {text}");
    assert!(text.contains("wrote 12 rows"), "stdout: {text}");
    assert_eq!(fs::read(out.join("results.csv")).unwrap(), reference);

    // A torn final journal line (hard kill mid-write) is recomputed.
    let journal = out.join("results.partial.csv");
    let mut bytes = fs::read(&journal).unwrap();
    bytes.truncate(bytes.len() - 10);
    fs::write(&journal, &bytes).unwrap();
    fs::remove_file(out.join("results.csv")).unwrap();
    let res = run_cli(&["run", "--config", cfg], &[]);
    assert_code(&res, 0);
    assert!(stdout_of(&res).contains("ran 1 episodes (11 resumed)"));
    assert_eq!(fs::read(out.join("results.csv")).unwrap(), reference);

    // A fully complete journal leaves nothing to do.
    let res = run_cli(&["run", "--config", cfg, "--K", "12"], &[]);
    assert_code(&res, 0);
    assert!(stdout_of(&res).contains("ran 0 episodes"));
}

#[test]
fn report_lists_both_sample_counts_with_unit_reference_relcost() {
    let fx = fixture();
    let res = run_cli(&["report", "--config", fx.config.to_str().unwrap()], &[]);
    assert_code(&res, 0);
    let text = stdout_of(&res);
    assert!(text.contains("K = 12"), "stdout: {text}");
    assert!(text.contains("K = 6"), "stdout: {text}");
    assert!(text.contains("reference: dualguard"), "stdout: {text}");
    for line in text.lines().filter(|l| l.starts_with("dualguard")) {
        assert!(line.contains("1.000 +/-"), "reference relcost: {line}");
    }

    assert_eq!(fs::read_to_string(fx.out.join("report.txt")).unwrap(), text);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fx.out.join("report.json")).unwrap()).unwrap();
    let tables = json.as_array().unwrap();
    assert_eq!(tables.len(), 2);
    assert_eq!(tables[0]["K"], 12);
    assert_eq!(tables[1]["K"], 6);
    for table in tables {
        let methods: Vec<&str> = table["rows"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| r["method"].as_str().unwrap())
            .collect();
        assert_eq!(methods, ["obs_penalty", "dualguard"]);
    }
}

#[test]
fn render_is_deterministic_and_layers_slice_and_trajectory() {
    let fx = fixture();
    let dir = TempDir::new().unwrap();
    let cfg = fx.config.to_str().unwrap();
    let plain_a = dir.path().join("a.svg");
    let plain_b = dir.path().join("b.svg");
    for out in [&plain_a, &plain_b] {
        let res = run_cli(&["render", "--config", cfg, "--out", out.to_str().unwrap()], &[]);
        assert_code(&res, 0);
    }
    let svg = fs::read_to_string(&plain_a).unwrap();
    assert!(svg.starts_with("<svg"), "not an svg: {}", &svg[..60.min(svg.len())]);
    assert!(svg.contains("<circle"), "obstacles missing");
    assert!(!svg.contains("<path"), "environment-only render has no contours");
    assert_eq!(fs::read(&plain_a).unwrap(), fs::read(&plain_b).unwrap());

    let sliced = dir.path().join("slice.svg");
    let res = run_cli(
        &[
            "render",
            "--config",
            cfg,
            "--heading-deg",
            "225",
            "--out",
            sliced.to_str().unwrap(),
        ],
        &[],
    );
    assert_code(&res, 0);
    let svg = fs::read_to_string(&sliced).unwrap();
    assert!(svg.contains("#18867d"), "unsafe-set contour missing");

    let traj = fx.out.join("trajectories").join("dualguard_K12_ep000.json");
    let traced = dir.path().join("traj.svg");
    let res = run_cli(
        &[
            "render",
            "--config",
            cfg,
            traj.to_str().unwrap(),
            "--out",
            traced.to_str().unwrap(),
        ],
        &[],
    );
    assert_code(&res, 0);
    let svg = fs::read_to_string(&traced).unwrap();
    assert!(svg.contains("dualguard K=12 ep0"), "legend label missing");
    assert!(svg.contains("#d62728"), "trajectory stroke missing");
}

#[test]
fn interval_scenario_solves_but_rejects_benchmarking() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("out");
    let config = dir.path().join("interval.toml");
    fs::write(
        &config,
        format!(
            r#"output_dir = "{}"

[scenario]
kind = "interval"
domain = [-2.0, 2.0]

[model]
kind = "integrator1d"

[grid]
nodes = [401]

[task]
goal_radius = 0.1
q = [1.0]
control_effort = 0.1

[run]
sample_counts = [16]

[mppi]
horizon = 10
lambda = 1.0
sigma = [0.3]
"#,
            out_dir.display()
        ),
    )
    .unwrap();
    let cfg = config.to_str().unwrap();

    let custom = dir.path().join("field.hjvf");
    let res = run_cli(&["solve", "--config", cfg, "--out", custom.to_str().unwrap()], &[]);
    assert_code(&res, 0);
    let text = stdout_of(&res);
    assert!(text.contains("solved 401 nodes"), "stdout: {text}");
    assert!(custom.exists(), "--out path ignored");
    let frac: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("BRT volume fraction "))
        .expect("volume line")
        .trim()
        .parse()
        .unwrap();
    // Failure set x <= 0 is invariant for the 1-d integrator, so the
    // unsafe fraction of [-2, 2] is one half.
    assert!((frac - 0.5).abs() < 0.01, "volume fraction {frac}");

    let res = run_cli(&["run", "--config", cfg], &[]);
    assert_code(&res, 2);
    assert!(stderr_of(&res).contains("only supports `solve`"));
}

#[test]
fn model_mismatch_warns_but_proceeds() {
    let fx = fixture();
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("out");
    let config = dir.path().join("bicycle.toml");
    fs::write(
        &config,
        format!(
            r#"output_dir = "{}"

[scenario]
kind = "planar"
domain = [0.0, 0.0, 10.0, 10.0]
seed = 11
obstacle_count = 4
diameter_range = [1.0, 2.0]

[model]
kind = "bicycle"
v_range = [0.7, 1.4]
delta_max = 0.4363
d_max = 0.1
wheelbase = 0.235

[grid]
nodes = [31, 31, 16]

[task]
goal_radius = 0.5
q = [1.0, 1.0, 0.0]
control_effort = 0.1

[episodes]
count = 3
horizon = 6.0
dt = 0.05
seed = 7
min_separation = 4.0

[run]
sample_counts = [12]

[mppi]
horizon = 15
lambda = 40.0
sigma = [0.25, 0.2]
"#,
            out_dir.display()
        ),
    )
    .unwrap();
    fs::create_dir_all(&out_dir).unwrap();
    fs::copy(fx.out.join("value_field.hjvf"), out_dir.join("value_field.hjvf")).unwrap();
    let res = run_cli(&["episodes", "--config", config.to_str().unwrap()], &[]);
    assert_code(&res, 0);
    assert!(stderr_of(&res).contains("warning: value field was solved for model"));
}

#[test]
fn invalid_configs_and_flags_exit_two() {
    let dir = TempDir::new().unwrap();
    let (config, out_dir) = write_tiny_config(dir.path());
    let base = tiny_config_text(&out_dir);

    let unknown = dir.path().join("unknown.toml");
    fs::write(&unknown, format!("{base}\nbogus_knob = 1\n")).unwrap();
    let res = run_cli(&["solve", "--config", unknown.to_str().unwrap()], &[]);
    assert_code(&res, 2);
    assert!(stderr_of(&res).contains("invalid configuration"));

    let bad_sigma = dir.path().join("sigma.toml");
    fs::write(&bad_sigma, base.replace("sigma = [1.2]", "sigma = [1.2, 0.3]")).unwrap();
    let res = run_cli(&["solve", "--config", bad_sigma.to_str().unwrap()], &[]);
    assert_code(&res, 2);
    assert!(stderr_of(&res).contains("control channels"));

    let bad_method = dir.path().join("method.toml");
    fs::write(&bad_method, base.replace("\"obs_penalty\"", "\"warp_drive\"")).unwrap();
    let res = run_cli(&["solve", "--config", bad_method.to_str().unwrap()], &[]);
    assert_code(&res, 2);

    let cfg = config.to_str().unwrap();
    let res = run_cli(&["solve", "--config", cfg], &[("DUALGUARD_THREADS", "abc")]);
    assert_code(&res, 2);
    assert!(stderr_of(&res).contains("DUALGUARD_THREADS"));
    let res = run_cli(&["solve", "--config", cfg], &[("DUALGUARD_THREADS", "0")]);
    assert_code(&res, 2);

    // clap usage errors share the validation exit code.
    let res = run_cli(&["warp"], &[]);
    assert_code(&res, 2);
    let res = run_cli(&["solve"], &[]);
    assert_code(&res, 2);
}

#[test]
fn solver_nonconvergence_exits_three() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("out");
    let base = tiny_config_text(&out_dir);
    let config = dir.path().join("strict.toml");
    fs::write(
        &config,
        base.replace(
            "tolerance = 1e-3",
            "tolerance = 1e-12\nmax_iterations = 3",
        ),
    )
    .unwrap();
    let res = run_cli(&["solve", "--config", config.to_str().unwrap()], &[]);
    assert_code(&res, 3);
    assert!(stderr_of(&res).contains("did not converge"));
}
