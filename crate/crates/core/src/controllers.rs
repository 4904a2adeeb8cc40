//! Sampling-based predictive control: one shared rollout engine, the
//! exponentially weighted perturbation update, and six closed-loop method
//! variants that differ only in how rollouts are costed, whether rollouts
//! are filtered, and what touches the first control before actuation.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{step, Control, ControlBounds, DynamicsModel, State, Stepper};
use crate::environment::{Scene, Task};
use crate::filter::{filter, switching_band};
use crate::hj::ValueField;
use crate::scalar::Real;
use crate::SVec;

/// The benchmarked closed-loop variants. All share one rollout engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Plain rollouts, stage penalty on failure-set hits, raw output.
    ObstaclePenalty,
    /// ObstaclePenalty plus an output filter step.
    ObstaclePenaltyLrf,
    /// Plain rollouts, stage penalty on entering the unsafe sublevel of V.
    BrtPenalty,
    /// BrtPenalty plus an output filter step.
    BrtPenaltyLrf,
    /// Barrier-decrease rollout cost plus a blending repair on the output.
    Shield,
    /// Filtered rollouts and a filtered output.
    DualGuard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RolloutKind {
    Plain,
    Safe,
    Shield,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::ObstaclePenalty,
        Method::ObstaclePenaltyLrf,
        Method::BrtPenalty,
        Method::BrtPenaltyLrf,
        Method::Shield,
        Method::DualGuard,
    ];

    /// Stable identifier used in configs, CSV rows, and CLI flags.
    pub fn name(self) -> &'static str {
        match self {
            Method::ObstaclePenalty => "obs_penalty",
            Method::ObstaclePenaltyLrf => "obs_penalty_lrf",
            Method::BrtPenalty => "brt_penalty",
            Method::BrtPenaltyLrf => "brt_penalty_lrf",
            Method::Shield => "shield",
            Method::DualGuard => "dualguard",
        }
    }

    /// Whether the first control gets a final filter step before actuation.
    pub fn output_lrf(self) -> bool {
        matches!(
            self,
            Method::ObstaclePenaltyLrf | Method::BrtPenaltyLrf | Method::DualGuard
        )
    }

    pub fn penalty_kind(self) -> PenaltyKind {
        match self {
            Method::ObstaclePenalty | Method::ObstaclePenaltyLrf => PenaltyKind::Obstacle,
            Method::BrtPenalty | Method::BrtPenaltyLrf => PenaltyKind::Brt,
            Method::Shield => PenaltyKind::CbfCondition,
            Method::DualGuard => PenaltyKind::None,
        }
    }

    fn rollout_kind(self) -> RolloutKind {
        match self {
            Method::DualGuard => RolloutKind::Safe,
            Method::Shield => RolloutKind::Shield,
            _ => RolloutKind::Plain,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                format!("unknown method '{}' (expected one of {})", s, names.join(", "))
            })
    }
}

/// Stage safety penalty P(x). The barrier-condition kind needs state
/// pairs and is accounted inside shield_rollout, not in stage_cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyKind {
    None,
    Obstacle,
    Brt,
    CbfCondition,
}

/// Sampling parameters for one controller instance.
#[derive(Debug, Clone)]
pub struct MppiParams<T> {
    /// Sample count K.
    pub samples: usize,
    /// Horizon steps H.
    pub horizon: usize,
    /// Rollout step (s); also the closed-loop actuation period.
    pub dt: T,
    /// Softmax temperature, > 0.
    pub lambda: T,
    /// Perturbation standard deviation per control channel.
    pub sigma: SVec<T>,
    pub seed: u64,
}

impl<T: Real> MppiParams<T> {
    fn validate(&self, control_dim: usize) {
        assert!(self.samples >= 1);
        assert!(self.horizon >= 1);
        assert!(self.dt > T::zero());
        assert!(self.lambda > T::zero());
        assert_eq!(self.sigma.len(), control_dim);
        assert!(self.sigma.iter().all(|s| *s >= T::zero()));
    }
}

/// Track-following objective terms; channel 0 of the control is the speed
/// command on the track scenario.
#[derive(Debug, Clone)]
pub struct TrackObjective<T> {
    pub v_max: T,
    pub centerline_weight: T,
}

/// What a rollout pays for: task performance terms plus a method penalty.
#[derive(Debug, Clone)]
pub struct CostSpec<T> {
    pub task: Task<T>,
    pub penalty: PenaltyKind,
    /// Penalty weight C.
    pub penalty_weight: T,
    pub track: Option<TrackObjective<T>>,
}

impl<T: Real> CostSpec<T> {
    pub fn new(task: Task<T>, penalty: PenaltyKind, penalty_weight: T) -> Self {
        assert!(penalty_weight >= T::zero());
        CostSpec {
            task,
            penalty,
            penalty_weight,
            track: None,
        }
    }
}

/// State-dependent performance terms: the quadratic goal cost, or the
/// centerline deviation on a track.
fn performance_state_cost<T: Real>(spec: &CostSpec<T>, scene: &Scene<T>, x: &[T]) -> T {
    match (&spec.track, scene) {
        (Some(t), Scene::Track(rt)) => t.centerline_weight * rt.centerline_distance(x),
        _ => spec.task.state_cost(x),
    }
}

/// Control-dependent performance terms: effort, plus the slow-speed
/// penalty on a track.
fn performance_control_cost<T: Real>(spec: &CostSpec<T>, u: &[T]) -> T {
    let effort: T = u.iter().map(|&c| c * c).sum();
    let mut s = spec.task.control_effort * effort;
    if let Some(t) = &spec.track {
        let dv = t.v_max - u[0];
        s = s + dv * dv;
    }
    s
}

fn penalty_cost<T: Real>(
    spec: &CostSpec<T>,
    scene: &Scene<T>,
    vf: &ValueField<T>,
    x: &[T],
) -> (T, bool) {
    let fired = match spec.penalty {
        PenaltyKind::Obstacle => scene.l(x) <= T::zero(),
        PenaltyKind::Brt => vf.value(x) <= T::zero(),
        PenaltyKind::None | PenaltyKind::CbfCondition => false,
    };
    if fired {
        (spec.penalty_weight, true)
    } else {
        (T::zero(), false)
    }
}

/// Full stage cost at (x, u).
pub fn stage_cost<T: Real>(
    spec: &CostSpec<T>,
    scene: &Scene<T>,
    vf: &ValueField<T>,
    x: &[T],
    u: &[T],
) -> T {
    performance_state_cost(spec, scene, x)
        + performance_control_cost(spec, u)
        + penalty_cost(spec, scene, vf, x).0
}

/// A nominal or updated control plan, H steps of m channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence<T> {
    steps: Vec<Control<T>>,
}

impl<T: Real> ControlSequence<T> {
    pub fn new(steps: Vec<Control<T>>) -> Self {
        assert!(!steps.is_empty());
        debug_assert!(steps.iter().all(|s| s.len() == steps[0].len()));
        ControlSequence { steps }
    }

    pub fn constant(horizon: usize, u: Control<T>) -> Self {
        ControlSequence::new(vec![u; horizon])
    }

    /// Episode bootstrap: every step at the bound midpoints (zero turn for
    /// the symmetric-turn car, mid speed and zero steer for the bicycle).
    pub fn midpoints(bounds: &ControlBounds<T>, horizon: usize) -> Self {
        ControlSequence::constant(horizon, bounds.midpoints())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.steps[0].len()
    }

    pub fn step(&self, j: usize) -> &[T] {
        &self.steps[j]
    }

    pub fn steps(&self) -> &[Control<T>] {
        &self.steps
    }

    pub fn clamp(&mut self, bounds: &ControlBounds<T>) {
        for s in &mut self.steps {
            bounds.clamp(s);
        }
    }

    /// Receding-horizon shift: drop the first step, repeat the last.
    pub fn shifted(&self) -> Self {
        let mut steps: Vec<Control<T>> = self.steps[1..].to_vec();
        steps.push(self.steps.last().unwrap().clone());
        ControlSequence { steps }
    }
}

/// One simulated sample trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<T> {
    /// H+1 states, states[0] = x0.
    pub states: Vec<State<T>>,
    /// The H controls actually flown.
    pub controls: Vec<Control<T>>,
    /// H deviations from nominal fed to the update: the raw draw for
    /// unfiltered rollouts, the post-filter deviation for safe ones.
    pub deltas: Vec<Control<T>>,
    /// Cost-to-go S.
    pub cost: T,
    /// Per-step filter activation; all false for unfiltered rollouts.
    pub mask: Vec<bool>,
    /// min over the trajectory of l(x).
    pub min_l: T,
    /// Whether any penalty or barrier violation contributed to the cost.
    pub penalized: bool,
}

fn zero_disturbance<T: Real>(model: &dyn DynamicsModel<T>) -> SVec<T> {
    std::iter::repeat(T::zero())
        .take(model.disturbance_bounds().dim())
        .collect()
}

/// Rollout with the filter applied at every step: the sample never leaves
/// the safe set, so costing skips the safety penalty entirely.
#[allow(clippy::too_many_arguments)]
pub fn safe_rollout<T: Real>(
    model: &dyn DynamicsModel<T>,
    vf: &ValueField<T>,
    scene: &Scene<T>,
    spec: &CostSpec<T>,
    x0: &[T],
    nominal: &ControlSequence<T>,
    deltas: &[T],
    eps_switch: T,
    dt: T,
) -> Rollout<T> {
    let h = nominal.len();
    let m = nominal.dim();
    debug_assert_eq!(deltas.len(), h * m);
    let bounds = model.control_bounds();
    let dzero = zero_disturbance(model);
    let mut stepper = Stepper::new(model.state_dim());
    let mut x: State<T> = x0.iter().copied().collect();
    let mut states = Vec::with_capacity(h + 1);
    let mut controls = Vec::with_capacity(h);
    let mut out_deltas = Vec::with_capacity(h);
    let mut mask = Vec::with_capacity(h);
    let mut cost = T::zero();
    let mut min_l = scene.l(&x);
    states.push(x.clone());
    for j in 0..h {
        let mut u_raw: Control<T> = nominal
            .step(j)
            .iter()
            .zip(&deltas[j * m..(j + 1) * m])
            .map(|(n, d)| *n + *d)
            .collect();
        bounds.clamp(&mut u_raw);
        let decision = filter(vf, model, &x, &u_raw, eps_switch);
        let delta: Control<T> = decision
            .control
            .iter()
            .zip(nominal.step(j))
            .map(|(c, n)| *c - *n)
            .collect();
        cost = cost
            + performance_state_cost(spec, scene, &x)
            + performance_control_cost(spec, &decision.control);
        stepper.step(model, &mut x, &decision.control, &dzero, dt);
        min_l = min_l.min(scene.l(&x));
        mask.push(decision.activated);
        controls.push(decision.control);
        out_deltas.push(delta);
        states.push(x.clone());
    }
    cost = cost + performance_state_cost(spec, scene, &x);
    Rollout {
        states,
        controls,
        deltas: out_deltas,
        cost,
        mask,
        min_l,
        penalized: false,
    }
}

/// Unfiltered rollout costed with the spec's stage penalty.
pub fn plain_rollout<T: Real>(
    model: &dyn DynamicsModel<T>,
    vf: &ValueField<T>,
    scene: &Scene<T>,
    spec: &CostSpec<T>,
    x0: &[T],
    nominal: &ControlSequence<T>,
    deltas: &[T],
    dt: T,
) -> Rollout<T> {
    let h = nominal.len();
    let m = nominal.dim();
    debug_assert_eq!(deltas.len(), h * m);
    let bounds = model.control_bounds();
    let dzero = zero_disturbance(model);
    let mut stepper = Stepper::new(model.state_dim());
    let mut x: State<T> = x0.iter().copied().collect();
    let mut states = Vec::with_capacity(h + 1);
    let mut controls = Vec::with_capacity(h);
    let mut out_deltas = Vec::with_capacity(h);
    let mut cost = T::zero();
    let mut min_l = scene.l(&x);
    let mut penalized = false;
    states.push(x.clone());
    for j in 0..h {
        let raw: Control<T> = deltas[j * m..(j + 1) * m].iter().copied().collect();
        let mut u: Control<T> = nominal
            .step(j)
            .iter()
            .zip(&raw)
            .map(|(n, d)| *n + *d)
            .collect();
        bounds.clamp(&mut u);
        let (p, fired) = penalty_cost(spec, scene, vf, &x);
        penalized |= fired;
        cost = cost
            + performance_state_cost(spec, scene, &x)
            + p
            + performance_control_cost(spec, &u);
        stepper.step(model, &mut x, &u, &dzero, dt);
        min_l = min_l.min(scene.l(&x));
        controls.push(u);
        out_deltas.push(raw);
        states.push(x.clone());
    }
    let (p, fired) = penalty_cost(spec, scene, vf, &x);
    penalized |= fired;
    cost = cost + performance_state_cost(spec, scene, &x) + p;
    Rollout {
        states,
        controls,
        deltas: out_deltas,
        cost,
        mask: vec![false; h],
        min_l,
        penalized,
    }
}

/// Unfiltered rollout whose stage cost adds the discrete barrier-decrease
/// violation C * max(0, (1 - gamma) V(x_j) - V(x_{j+1})).
#[allow(clippy::too_many_arguments)]
pub fn shield_rollout<T: Real>(
    model: &dyn DynamicsModel<T>,
    vf: &ValueField<T>,
    scene: &Scene<T>,
    spec: &CostSpec<T>,
    x0: &[T],
    nominal: &ControlSequence<T>,
    deltas: &[T],
    gamma: T,
    dt: T,
) -> Rollout<T> {
    let h = nominal.len();
    let m = nominal.dim();
    debug_assert_eq!(deltas.len(), h * m);
    let bounds = model.control_bounds();
    let dzero = zero_disturbance(model);
    let mut stepper = Stepper::new(model.state_dim());
    let mut x: State<T> = x0.iter().copied().collect();
    let mut states = Vec::with_capacity(h + 1);
    let mut controls = Vec::with_capacity(h);
    let mut out_deltas = Vec::with_capacity(h);
    let mut cost = T::zero();
    let mut min_l = scene.l(&x);
    let mut penalized = false;
    let mut v_here = vf.value(&x);
    states.push(x.clone());
    for j in 0..h {
        let raw: Control<T> = deltas[j * m..(j + 1) * m].iter().copied().collect();
        let mut u: Control<T> = nominal
            .step(j)
            .iter()
            .zip(&raw)
            .map(|(n, d)| *n + *d)
            .collect();
        bounds.clamp(&mut u);
        cost = cost + performance_state_cost(spec, scene, &x) + performance_control_cost(spec, &u);
        stepper.step(model, &mut x, &u, &dzero, dt);
        let v_next = vf.value(&x);
        let violation = ((T::one() - gamma) * v_here - v_next).max(T::zero());
        if violation > T::zero() {
            penalized = true;
        }
        cost = cost + spec.penalty_weight * violation;
        v_here = v_next;
        min_l = min_l.min(scene.l(&x));
        controls.push(u);
        out_deltas.push(raw);
        states.push(x.clone());
    }
    cost = cost + performance_state_cost(spec, scene, &x);
    Rollout {
        states,
        controls,
        deltas: out_deltas,
        cost,
        mask: vec![false; h],
        min_l,
        penalized,
    }
}

/// Repair a candidate control so the next state keeps the discrete
/// barrier-decrease condition V(x+) >= (1 - gamma) V(x). Returns the
/// candidate unchanged when it already satisfies the condition, otherwise
/// the smallest sufficient convex blend toward the optimal safe control
/// (20 bisection rounds), falling back to the safe control itself.
pub fn shield_repair<T: Real>(
    vf: &ValueField<T>,
    model: &dyn DynamicsModel<T>,
    x: &[T],
    u: &[T],
    gamma: T,
    dt: T,
) -> Control<T> {
    debug_assert!(gamma >= T::zero() && gamma < T::one());
    let dzero = zero_disturbance(model);
    let threshold = (T::one() - gamma) * vf.value(x);
    let ok = |cand: &Control<T>| -> bool {
        let next = step(model, x, cand, &dzero, dt);
        vf.value(&next) >= threshold
    };
    let mut candidate: Control<T> = u.iter().copied().collect();
    model.control_bounds().clamp(&mut candidate);
    if ok(&candidate) {
        return candidate;
    }
    let safe = vf.optimal_safe_control(model, x);
    if !ok(&safe) {
        return safe;
    }
    let blend = |beta: T| -> Control<T> {
        candidate
            .iter()
            .zip(&safe)
            .map(|(a, b)| (T::one() - beta) * *a + beta * *b)
            .collect()
    };
    // Invariant: blend(lo) fails, blend(hi) holds.
    let mut lo = T::zero();
    let mut hi = T::one();
    for _ in 0..20 {
        let mid = (lo + hi) * T::of(0.5);
        if ok(&blend(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    blend(hi)
}

/// Exponential weights exp(-(S_k - min S) / lambda), normalized. The min
/// shift cancels in the normalization and keeps every exponent <= 0, so
/// the largest weight is 1 before normalizing and the sum cannot
/// underflow.
pub fn mppi_weights<T: Real>(costs: &[T], lambda: T) -> Vec<T> {
    assert!(!costs.is_empty());
    assert!(lambda > T::zero());
    debug_assert!(costs.iter().all(|c| c.is_finite()));
    let min = costs.iter().copied().fold(T::infinity(), T::min);
    let mut w: Vec<T> = costs.iter().map(|&s| (-(s - min) / lambda).exp()).collect();
    let total: T = w.iter().copied().sum();
    for v in &mut w {
        *v = *v / total;
    }
    w
}

/// Shannon entropy of the weight simplex, a collapse diagnostic.
pub fn weight_entropy<T: Real>(weights: &[T]) -> T {
    let mut e = T::zero();
    for &w in weights {
        if w > T::zero() {
            e = e - w * w.ln();
        }
    }
    e
}

/// u*_j = u_j + sum_k w_k Delta_j^k, clamped to bounds. `deltas` is flat,
/// indexed (k * H + j) * m + c.
pub fn mppi_update<T: Real>(
    nominal: &ControlSequence<T>,
    deltas: &[T],
    costs: &[T],
    lambda: T,
    bounds: &ControlBounds<T>,
) -> ControlSequence<T> {
    let k_count = costs.len();
    let h = nominal.len();
    let m = nominal.dim();
    assert_eq!(deltas.len(), k_count * h * m);
    let w = mppi_weights(costs, lambda);
    let mut steps = Vec::with_capacity(h);
    for j in 0..h {
        let mut u: Control<T> = nominal.step(j).iter().copied().collect();
        for k in 0..k_count {
            let base = (k * h + j) * m;
            for c in 0..m {
                u[c] = u[c] + w[k] * deltas[base + c];
            }
        }
        bounds.clamp(&mut u);
        steps.push(u);
    }
    ControlSequence::new(steps)
}

/// Method-level knobs that are not sampling parameters.
#[derive(Debug, Clone)]
pub struct MethodParams<T> {
    /// Penalty weight C for indicator and barrier-violation costs.
    pub penalty_weight: T,
    /// Barrier decrease rate for the shield variant.
    pub gamma: T,
    /// Filter switching band override; None derives the band from the
    /// field's Lipschitz bound and the rollout dt.
    pub eps_switch: Option<T>,
    /// Ablation knob for the output filter of the LRF variants.
    pub output_filter: bool,
    pub track: Option<TrackObjective<T>>,
}

impl<T: Real> Default for MethodParams<T> {
    fn default() -> Self {
        MethodParams {
            penalty_weight: T::of(1e4),
            gamma: T::of(0.1),
            eps_switch: None,
            output_filter: true,
            track: None,
        }
    }
}

/// Per-step controller diagnostics.
#[derive(Debug, Clone)]
pub struct StepDiagnostics<T> {
    pub rollout_costs: Vec<T>,
    pub weight_entropy: T,
    /// Fraction of the K * H rollout steps where the filter activated.
    pub filter_activation_fraction: T,
    /// Fraction of rollouts free of penalties and barrier violations.
    pub unpenalized_fraction: T,
    /// min over this step's rollouts of min_l.
    pub rollout_min_l: T,
    /// Whether the output stage changed the first control.
    pub output_filtered: bool,
}

#[derive(Debug, Clone)]
pub struct StepOutcome<T> {
    pub control: Control<T>,
    pub diag: StepDiagnostics<T>,
}

/// One closed-loop controller instance; single-owner, one per episode.
pub struct Controller<'a, T: Real> {
    method: Method,
    model: &'a dyn DynamicsModel<T>,
    vf: &'a ValueField<T>,
    scene: &'a Scene<T>,
    spec: CostSpec<T>,
    params: MppiParams<T>,
    gamma: T,
    output_filter: bool,
    eps_switch: T,
    nominal: ControlSequence<T>,
    rng: ChaCha8Rng,
    draws: Vec<T>,
    episode_min_l: T,
}

impl<'a, T: Real> Controller<'a, T> {
    pub fn new(
        method: Method,
        model: &'a dyn DynamicsModel<T>,
        vf: &'a ValueField<T>,
        scene: &'a Scene<T>,
        task: Task<T>,
        params: MppiParams<T>,
        extra: MethodParams<T>,
    ) -> Self {
        params.validate(model.control_dim());
        assert!(extra.penalty_weight >= T::zero());
        assert!(extra.gamma >= T::zero() && extra.gamma < T::one());
        assert_eq!(vf.grid().dims(), model.state_dim());
        let eps_switch = extra
            .eps_switch
            .unwrap_or_else(|| switching_band(vf, model, params.dt));
        let nominal = ControlSequence::midpoints(model.control_bounds(), params.horizon);
        let rng = ChaCha8Rng::seed_from_u64(params.seed);
        let spec = CostSpec {
            task,
            penalty: method.penalty_kind(),
            penalty_weight: extra.penalty_weight,
            track: extra.track,
        };
        Controller {
            method,
            model,
            vf,
            scene,
            spec,
            params,
            gamma: extra.gamma,
            output_filter: extra.output_filter,
            eps_switch,
            nominal,
            rng,
            draws: Vec::new(),
            episode_min_l: T::infinity(),
        }
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn eps_switch(&self) -> T {
        self.eps_switch
    }

    pub fn nominal(&self) -> &ControlSequence<T> {
        &self.nominal
    }

    /// min over every rollout of every step so far of min_l; +inf before
    /// the first step.
    pub fn episode_rollout_min_l(&self) -> T {
        self.episode_min_l
    }

    pub fn set_output_filter(&mut self, on: bool) {
        self.output_filter = on;
    }

    /// One receding-horizon step: draw, roll out, reweight, guard the
    /// output, shift the nominal.
    pub fn controller_step(&mut self, x: &[T]) -> StepOutcome<T> {
        let k_count = self.params.samples;
        let h = self.params.horizon;
        let m = self.model.control_dim();
        let hm = h * m;

        // Draws are sequential from the owned RNG so parallel rollout
        // scheduling cannot perturb them.
        self.draws.clear();
        self.draws.reserve(k_count * hm);
        for _ in 0..(k_count * h) {
            for c in 0..m {
                let z = T::standard_normal(&mut self.rng);
                self.draws.push(self.params.sigma[c] * z);
            }
        }

        let model = self.model;
        let vf = self.vf;
        let scene = self.scene;
        let spec = &self.spec;
        let nominal = &self.nominal;
        let draws = &self.draws;
        let eps = self.eps_switch;
        let gamma = self.gamma;
        let dt = self.params.dt;
        let kind = self.method.rollout_kind();
        let rollouts: Vec<Rollout<T>> = (0..k_count)
            .into_par_iter()
            .map(|k| {
                let slice = &draws[k * hm..(k + 1) * hm];
                match kind {
                    RolloutKind::Safe => {
                        safe_rollout(model, vf, scene, spec, x, nominal, slice, eps, dt)
                    }
                    RolloutKind::Plain => {
                        plain_rollout(model, vf, scene, spec, x, nominal, slice, dt)
                    }
                    RolloutKind::Shield => {
                        shield_rollout(model, vf, scene, spec, x, nominal, slice, gamma, dt)
                    }
                }
            })
            .collect();

        let costs: Vec<T> = rollouts.iter().map(|r| r.cost).collect();
        let mut flat: Vec<T> = Vec::with_capacity(k_count * hm);
        for r in &rollouts {
            for d in &r.deltas {
                flat.extend(d.iter().copied());
            }
        }
        let u_star = mppi_update(
            nominal,
            &flat,
            &costs,
            self.params.lambda,
            model.control_bounds(),
        );

        let step_min_l = rollouts
            .iter()
            .map(|r| r.min_l)
            .fold(T::infinity(), T::min);
        self.episode_min_l = self.episode_min_l.min(step_min_l);
        let activations: usize = rollouts
            .iter()
            .map(|r| r.mask.iter().filter(|&&b| b).count())
            .sum();
        let unpenalized = rollouts.iter().filter(|r| !r.penalized).count();
        let weights = mppi_weights(&costs, self.params.lambda);
        let entropy = weight_entropy(&weights);

        let u0: Control<T> = u_star.step(0).iter().copied().collect();
        let (control, output_filtered) = if self.method == Method::Shield {
            let repaired = shield_repair(vf, model, x, &u0, gamma, dt);
            let changed = repaired != u0;
            (repaired, changed)
        } else if self.method.output_lrf() && self.output_filter {
            let decision = filter(vf, model, x, &u0, eps);
            (decision.control, decision.activated)
        } else {
            (u0, false)
        };

        self.nominal = u_star.shifted();

        StepOutcome {
            control,
            diag: StepDiagnostics {
                rollout_costs: costs,
                weight_entropy: entropy,
                filter_activation_fraction: T::of(activations as f64 / (k_count * h) as f64),
                unpenalized_fraction: T::of(unpenalized as f64 / k_count as f64),
                rollout_min_l: step_min_l,
                output_filtered,
            },
        }
    }
}
