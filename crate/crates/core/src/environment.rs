//! Failure sets and signed distances l(x), task definitions, procedural
//! cluttered environments, and the closed racetrack band.
//!
//! Sign convention throughout: l(x) > 0 is safe, l(x) <= 0 is failure.

use crate::scalar::Real;
use crate::SVec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// When nothing defines failure (no obstacles, boundary not failure), l is
/// this constant: effectively "infinitely safe" while keeping fields finite.
const UNBOUNDED_SAFE: f64 = 1.0e9;

/// Free-space connectivity during generation is checked on this many cells
/// per axis.
const CONNECTIVITY_RES: usize = 64;

const MAX_PLACEMENT_ATTEMPTS: usize = 400;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("obstacle {index} center lies outside the domain")]
    CenterOutsideDomain { index: usize },
    #[error("obstacle {index} has non-positive radius")]
    BadRadius { index: usize },
    #[error("infeasible obstacle spec: minimum packing exceeds the domain")]
    TooDense,
    #[error("could not place obstacle {index} in {attempts} attempts without disconnecting free space")]
    PlacementAttemptsExceeded { index: usize, attempts: usize },
    #[error("racetrack centerline needs at least 3 vertices")]
    DegenerateCenterline,
    #[error("racetrack centerline is self-intersecting")]
    SelfIntersecting,
    #[error("racetrack half-width must be positive")]
    BadHalfWidth,
    #[error("environment i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("environment json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Anything that exposes a signed distance to its failure set.
pub trait FailureSet<T>: Send + Sync {
    fn l(&self, x: &[T]) -> T;
}

impl<T: Real, F: Fn(&[T]) -> T + Send + Sync> FailureSet<T> for F {
    fn l(&self, x: &[T]) -> T {
        self(x)
    }
}

/// Axis-aligned box in the position plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2<T> {
    pub min: [T; 2],
    pub max: [T; 2],
}

impl<T: Real> Box2<T> {
    pub fn new(min: [T; 2], max: [T; 2]) -> Self {
        assert!(min[0] < max[0] && min[1] < max[1]);
        Box2 { min, max }
    }

    #[inline]
    pub fn extent(&self, i: usize) -> T {
        self.max[i] - self.min[i]
    }

    pub fn area(&self) -> T {
        self.extent(0) * self.extent(1)
    }

    pub fn contains(&self, p: [T; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn center(&self) -> [T; 2] {
        [
            (self.min[0] + self.max[0]) * T::of(0.5),
            (self.min[1] + self.max[1]) * T::of(0.5),
        ]
    }

    /// Signed inward distance to the boundary: exact inside, per-axis
    /// deficit (still 1-Lipschitz, sign-correct) outside.
    #[inline]
    pub fn inward_distance(&self, p: [T; 2]) -> T {
        let dx = (p[0] - self.min[0]).min(self.max[0] - p[0]);
        let dy = (p[1] - self.min[1]).min(self.max[1] - p[1]);
        dx.min(dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle<T> {
    pub center: [T; 2],
    pub radius: T,
}

impl<T: Real> Circle<T> {
    /// Signed distance to the circle surface, positive outside.
    #[inline]
    pub fn distance(&self, p: [T; 2]) -> T {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        (dx * dx + dy * dy).sqrt() - self.radius
    }
}

/// Cluttered planar environment: circular obstacles inside a rectangular
/// enclosure whose boundary may itself be part of the failure set.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment<T> {
    pub domain: Box2<T>,
    pub obstacles: Vec<Circle<T>>,
    pub boundary_is_failure: bool,
    pub seed: u64,
}

impl<T: Real> Environment<T> {
    pub fn new(
        domain: Box2<T>,
        obstacles: Vec<Circle<T>>,
        boundary_is_failure: bool,
        seed: u64,
    ) -> Result<Self, EnvError> {
        for (i, c) in obstacles.iter().enumerate() {
            if !domain.contains(c.center) {
                return Err(EnvError::CenterOutsideDomain { index: i });
            }
            if !(c.radius > T::zero()) {
                return Err(EnvError::BadRadius { index: i });
            }
        }
        Ok(Environment {
            domain,
            obstacles,
            boundary_is_failure,
            seed,
        })
    }

    pub fn empty(domain: Box2<T>, boundary_is_failure: bool) -> Self {
        Environment {
            domain,
            obstacles: Vec::new(),
            boundary_is_failure,
            seed: 0,
        }
    }

    /// Signed distance to the failure set in the position plane; heading
    /// and any further state components are ignored.
    pub fn l(&self, x: &[T]) -> T {
        let p = [x[0], x[1]];
        let mut best = T::of(UNBOUNDED_SAFE);
        if self.boundary_is_failure {
            best = self.domain.inward_distance(p);
        }
        for c in &self.obstacles {
            best = best.min(c.distance(p));
        }
        best
    }

    pub fn save_json(&self, path: &Path) -> Result<(), EnvError> {
        let doc = EnvDoc::from(self);
        std::fs::write(path, serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, EnvError> {
        let doc: EnvDoc = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        doc.into_env()
    }
}

impl<T: Real> FailureSet<T> for Environment<T> {
    fn l(&self, x: &[T]) -> T {
        Environment::l(self, x)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ObstacleDoc {
    c: [f64; 2],
    r: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct EnvDoc {
    domain: [[f64; 2]; 2],
    boundary_is_failure: bool,
    obstacles: Vec<ObstacleDoc>,
    seed: u64,
}

impl<T: Real> From<&Environment<T>> for EnvDoc {
    fn from(env: &Environment<T>) -> Self {
        EnvDoc {
            domain: [
                [env.domain.min[0].as_f64(), env.domain.min[1].as_f64()],
                [env.domain.max[0].as_f64(), env.domain.max[1].as_f64()],
            ],
            boundary_is_failure: env.boundary_is_failure,
            obstacles: env
                .obstacles
                .iter()
                .map(|o| ObstacleDoc {
                    c: [o.center[0].as_f64(), o.center[1].as_f64()],
                    r: o.radius.as_f64(),
                })
                .collect(),
            seed: env.seed,
        }
    }
}

impl EnvDoc {
    fn into_env<T: Real>(self) -> Result<Environment<T>, EnvError> {
        Environment::new(
            Box2::new(
                [T::of(self.domain[0][0]), T::of(self.domain[0][1])],
                [T::of(self.domain[1][0]), T::of(self.domain[1][1])],
            ),
            self.obstacles
                .iter()
                .map(|o| Circle {
                    center: [T::of(o.c[0]), T::of(o.c[1])],
                    radius: T::of(o.r),
                })
                .collect(),
            self.boundary_is_failure,
            self.seed,
        )
    }
}

/// Obstacle generation spec.
#[derive(Debug, Clone)]
pub struct EnvSpec<T> {
    pub domain: Box2<T>,
    pub obstacle_count: usize,
    pub diameter_range: (T, T),
    pub boundary_is_failure: bool,
}

/// Deterministic cluttered-environment generation. Each obstacle placement
/// that would disconnect the grid-sampled free space (or swallow it
/// entirely) is re-sampled, so generated scenarios always keep corridors.
pub fn generate_environment<T: Real>(seed: u64, spec: &EnvSpec<T>) -> Result<Environment<T>, EnvError> {
    assert!(spec.diameter_range.0 > T::zero() && spec.diameter_range.0 <= spec.diameter_range.1);
    let min_r = spec.diameter_range.0 * T::of(0.5);
    let min_area =
        T::of(std::f64::consts::PI) * min_r * min_r * T::from_usize(spec.obstacle_count).unwrap();
    if min_area > spec.domain.area() * T::of(0.8) {
        return Err(EnvError::TooDense);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = Environment::empty(spec.domain, spec.boundary_is_failure);
    env.seed = seed;
    for index in 0..spec.obstacle_count {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let cx = T::uniform(&mut rng, spec.domain.min[0], spec.domain.max[0]);
            let cy = T::uniform(&mut rng, spec.domain.min[1], spec.domain.max[1]);
            let d = T::uniform(&mut rng, spec.diameter_range.0, spec.diameter_range.1);
            env.obstacles.push(Circle {
                center: [cx, cy],
                radius: d * T::of(0.5),
            });
            if free_space_connected(&env) {
                placed = true;
                break;
            }
            env.obstacles.pop();
        }
        if !placed {
            return Err(EnvError::PlacementAttemptsExceeded {
                index,
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
    }
    Ok(env)
}

/// BFS flood fill over cell centers at generation resolution: true when
/// all free cells form one 4-connected component (and at least one cell is
/// free).
pub fn free_space_connected<T: Real>(env: &Environment<T>) -> bool {
    let res = CONNECTIVITY_RES;
    let mut free = vec![false; res * res];
    let mut first = None;
    let mut free_count = 0usize;
    for iy in 0..res {
        for ix in 0..res {
            let fx = (ix as f64 + 0.5) / res as f64;
            let fy = (iy as f64 + 0.5) / res as f64;
            let p = [
                env.domain.min[0] + T::of(fx) * env.domain.extent(0),
                env.domain.min[1] + T::of(fy) * env.domain.extent(1),
            ];
            if env.l(&p) > T::zero() {
                free[iy * res + ix] = true;
                free_count += 1;
                if first.is_none() {
                    first = Some((ix, iy));
                }
            }
        }
    }
    let Some(start) = first else {
        return false;
    };
    let mut seen = vec![false; res * res];
    let mut queue = std::collections::VecDeque::new();
    seen[start.1 * res + start.0] = true;
    queue.push_back(start);
    let mut reached = 1usize;
    while let Some((x, y)) = queue.pop_front() {
        let mut push = |nx: usize, ny: usize, seen: &mut Vec<bool>, queue: &mut std::collections::VecDeque<(usize, usize)>| {
            let i = ny * res + nx;
            if free[i] && !seen[i] {
                seen[i] = true;
                reached += 1;
                queue.push_back((nx, ny));
            }
        };
        if x > 0 {
            push(x - 1, y, &mut seen, &mut queue);
        }
        if x + 1 < res {
            push(x + 1, y, &mut seen, &mut queue);
        }
        if y > 0 {
            push(x, y - 1, &mut seen, &mut queue);
        }
        if y + 1 < res {
            push(x, y + 1, &mut seen, &mut queue);
        }
    }
    reached == free_count
}

/// Navigation task: reach a goal ball while staying safe.
#[derive(Debug, Clone)]
pub struct Task<T> {
    /// Goal state; components with zero Q weight are "don't care".
    pub goal: SVec<T>,
    pub goal_radius: T,
    /// Episode horizon in seconds.
    pub horizon: T,
    /// Diagonal of the state-cost matrix Q.
    pub q: SVec<T>,
    /// Control-effort weight.
    pub control_effort: T,
}

impl<T: Real> Task<T> {
    pub fn new(goal: SVec<T>, goal_radius: T, horizon: T, q: SVec<T>, control_effort: T) -> Self {
        assert!(goal_radius > T::zero());
        assert!(horizon > T::zero());
        assert_eq!(goal.len(), q.len());
        assert!(q.iter().all(|w| *w >= T::zero()));
        Task {
            goal,
            goal_radius,
            horizon,
            q,
            control_effort,
        }
    }

    /// (x - x_g)ᵀ Q (x - x_g) over the diagonal Q.
    #[inline]
    pub fn state_cost(&self, x: &[T]) -> T {
        let mut s = T::zero();
        for i in 0..self.q.len() {
            let d = x[i] - self.goal[i];
            s = s + self.q[i] * d * d;
        }
        s
    }

    /// Planar distance from the goal position.
    pub fn goal_distance(&self, x: &[T]) -> T {
        let dx = x[0] - self.goal[0];
        let dy = x[1] - self.goal[1];
        (dx * dx + dy * dy).sqrt()
    }

    pub fn reached(&self, x: &[T]) -> bool {
        self.goal_distance(x) <= self.goal_radius
    }
}

/// Closed track band around a centerline polyline. The failure set is
/// everything outside the band: l(x) = half_width - distance(pos,
/// centerline).
#[derive(Debug, Clone)]
pub struct Racetrack<T> {
    centerline: Vec<[T; 2]>,
    half_width: T,
    cum_length: Vec<T>,
    total_length: T,
    domain: Box2<T>,
}

fn seg_distance_t<T: Real>(p: [T; 2], a: [T; 2], b: [T; 2]) -> (T, T) {
    let abx = b[0] - a[0];
    let aby = b[1] - a[1];
    let apx = p[0] - a[0];
    let apy = p[1] - a[1];
    let len2 = abx * abx + aby * aby;
    let t = if len2 > T::zero() {
        ((apx * abx + apy * aby) / len2).max(T::zero()).min(T::one())
    } else {
        T::zero()
    };
    let dx = apx - t * abx;
    let dy = apy - t * aby;
    ((dx * dx + dy * dy).sqrt(), t)
}

fn segments_intersect<T: Real>(a: [T; 2], b: [T; 2], c: [T; 2], d: [T; 2]) -> bool {
    let orient = |p: [T; 2], q: [T; 2], r: [T; 2]| -> T {
        (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    };
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    o1 * o2 < T::zero() && o3 * o4 < T::zero()
}

impl<T: Real> Racetrack<T> {
    /// `centerline` is a closed polyline: the last vertex connects back to
    /// the first.
    pub fn new(centerline: Vec<[T; 2]>, half_width: T) -> Result<Self, EnvError> {
        if centerline.len() < 3 {
            return Err(EnvError::DegenerateCenterline);
        }
        if !(half_width > T::zero()) {
            return Err(EnvError::BadHalfWidth);
        }
        let n = centerline.len();
        for i in 0..n {
            for j in (i + 1)..n {
                // Adjacent segments (sharing a vertex) cannot properly
                // intersect; skip them, including the last-first pair.
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = (centerline[i], centerline[(i + 1) % n]);
                let (c, d) = (centerline[j], centerline[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return Err(EnvError::SelfIntersecting);
                }
            }
        }
        let mut cum = Vec::with_capacity(n);
        let mut total = T::zero();
        for i in 0..n {
            cum.push(total);
            let a = centerline[i];
            let b = centerline[(i + 1) % n];
            let dx = b[0] - a[0];
            let dy = b[1] - a[1];
            total = total + (dx * dx + dy * dy).sqrt();
        }
        let margin = half_width * T::of(2.0);
        let mut min = [T::infinity(), T::infinity()];
        let mut max = [T::neg_infinity(), T::neg_infinity()];
        for p in &centerline {
            for i in 0..2 {
                min[i] = min[i].min(p[i]);
                max[i] = max[i].max(p[i]);
            }
        }
        let domain = Box2::new(
            [min[0] - margin, min[1] - margin],
            [max[0] + margin, max[1] + margin],
        );
        Ok(Racetrack {
            centerline,
            half_width,
            cum_length: cum,
            total_length: total,
            domain,
        })
    }

    pub fn half_width(&self) -> T {
        self.half_width
    }

    pub fn total_length(&self) -> T {
        self.total_length
    }

    pub fn domain(&self) -> &Box2<T> {
        &self.domain
    }

    fn closest(&self, p: [T; 2]) -> (T, usize, T) {
        let n = self.centerline.len();
        let mut best = (T::infinity(), 0usize, T::zero());
        for i in 0..n {
            let a = self.centerline[i];
            let b = self.centerline[(i + 1) % n];
            let (d, t) = seg_distance_t(p, a, b);
            if d < best.0 {
                best = (d, i, t);
            }
        }
        best
    }

    /// Distance from the position to the centerline.
    pub fn centerline_distance(&self, x: &[T]) -> T {
        self.closest([x[0], x[1]]).0
    }

    /// Signed distance to the track edges: positive inside the band.
    pub fn l(&self, x: &[T]) -> T {
        self.half_width - self.centerline_distance(x)
    }

    /// Arclength coordinate of the closest centerline point, in
    /// [0, total_length).
    pub fn progress(&self, x: &[T]) -> T {
        let (_, i, t) = self.closest([x[0], x[1]]);
        let a = self.centerline[i];
        let b = self.centerline[(i + 1) % self.centerline.len()];
        let dx = b[0] - a[0];
        let dy = b[1] - a[1];
        self.cum_length[i] + t * (dx * dx + dy * dy).sqrt()
    }

    /// Centerline point and tangent heading at arclength s (wrapped into
    /// one lap).
    pub fn point_at(&self, s: T) -> ([T; 2], T) {
        let n = self.centerline.len();
        let mut s = s % self.total_length;
        if s < T::zero() {
            s = s + self.total_length;
        }
        let mut i = n - 1;
        for j in 0..n {
            let end = if j + 1 < n {
                self.cum_length[j + 1]
            } else {
                self.total_length
            };
            if s < end {
                i = j;
                break;
            }
        }
        let a = self.centerline[i];
        let b = self.centerline[(i + 1) % n];
        let dx = b[0] - a[0];
        let dy = b[1] - a[1];
        let len = (dx * dx + dy * dy).sqrt();
        let t = if len > T::zero() {
            (s - self.cum_length[i]) / len
        } else {
            T::zero()
        };
        ([a[0] + t * dx, a[1] + t * dy], dy.atan2(dx))
    }
}

impl<T: Real> FailureSet<T> for Racetrack<T> {
    fn l(&self, x: &[T]) -> T {
        Racetrack::l(self, x)
    }
}

/// A benchmark scenario's world: cluttered enclosure or track band.
#[derive(Debug, Clone)]
pub enum Scene<T> {
    Planar(Environment<T>),
    Track(Racetrack<T>),
}

impl<T: Real> Scene<T> {
    pub fn l(&self, x: &[T]) -> T {
        match self {
            Scene::Planar(e) => e.l(x),
            Scene::Track(t) => t.l(x),
        }
    }

    pub fn domain(&self) -> &Box2<T> {
        match self {
            Scene::Planar(e) => &e.domain,
            Scene::Track(t) => t.domain(),
        }
    }
}

impl<T: Real> FailureSet<T> for Scene<T> {
    fn l(&self, x: &[T]) -> T {
        Scene::l(self, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn unit_env() -> Environment<f64> {
        Environment::new(
            Box2::new([-5.0, -5.0], [5.0, 5.0]),
            vec![Circle {
                center: [0.0, 0.0],
                radius: 1.0,
            }],
            false,
            0,
        )
        .unwrap()
    }

    #[test]
    fn signed_distance_to_circle() {
        let env = unit_env();
        assert_relative_eq!(env.l(&[2.0, 0.0, 0.3]), 1.0);
        assert_relative_eq!(env.l(&[0.5, 0.0, 0.0]), -0.5);
    }

    #[test]
    fn boundary_distance() {
        let env = Environment::empty(Box2::new([0.0, 0.0], [10.0, 10.0]), true);
        assert_relative_eq!(env.l(&[3.0, 10.0]), 0.0);
        assert_relative_eq!(env.l(&[3.0, 9.0]), 1.0);
        assert_relative_eq!(env.l(&[5.0, 5.0]), 5.0);
    }

    #[test]
    fn l_is_heading_independent() {
        let env = unit_env();
        assert_eq!(env.l(&[1.3, 0.4, 0.0]), env.l(&[1.3, 0.4, 2.9]));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = EnvSpec {
            domain: Box2::new([0.0, 0.0], [10.0, 10.0]),
            obstacle_count: 15,
            diameter_range: (0.35, 3.5),
            boundary_is_failure: true,
        };
        let a = generate_environment(7, &spec).unwrap();
        let b = generate_environment(7, &spec).unwrap();
        assert_eq!(a, b);
        let c = generate_environment(8, &spec).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_diameters_within_range_and_connected() {
        let spec = EnvSpec {
            domain: Box2::new([0.0, 0.0], [10.0, 10.0]),
            obstacle_count: 40,
            diameter_range: (0.35, 3.5),
            boundary_is_failure: true,
        };
        let env = generate_environment(3, &spec).unwrap();
        assert_eq!(env.obstacles.len(), 40);
        for o in &env.obstacles {
            let d = 2.0 * o.radius;
            assert!((0.35..=3.5).contains(&d));
            assert!(env.domain.contains(o.center));
        }
        assert!(free_space_connected(&env));
    }

    #[test]
    fn zero_obstacles_reduce_to_boundary_distance() {
        let spec = EnvSpec {
            domain: Box2::new([0.0, 0.0], [10.0, 10.0]),
            obstacle_count: 0,
            diameter_range: (0.35, 3.5),
            boundary_is_failure: true,
        };
        let env = generate_environment(1, &spec).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)];
            assert_relative_eq!(env.l(&p), env.domain.inward_distance(p));
        }
    }

    #[test]
    fn l_is_one_lipschitz() {
        let spec = EnvSpec {
            domain: Box2::new([0.0, 0.0], [10.0, 10.0]),
            obstacle_count: 15,
            diameter_range: (0.35, 3.5),
            boundary_is_failure: true,
        };
        let env = generate_environment(9, &spec).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..2000 {
            let a: [f64; 2] = [rng.random_range(-2.0..12.0), rng.random_range(-2.0..12.0)];
            let b: [f64; 2] = [rng.random_range(-2.0..12.0), rng.random_range(-2.0..12.0)];
            let dist = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            assert!((env.l(&a) - env.l(&b)).abs() <= dist + 1e-12);
        }
    }

    #[test]
    fn sign_matches_direct_containment() {
        let spec = EnvSpec {
            domain: Box2::new([0.0, 0.0], [10.0, 10.0]),
            obstacle_count: 15,
            diameter_range: (0.35, 3.5),
            boundary_is_failure: true,
        };
        let env = generate_environment(21, &spec).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..2000 {
            let p = [rng.random_range(-1.0..11.0), rng.random_range(-1.0..11.0)];
            let inside_obstacle = env.obstacles.iter().any(|o| o.distance(p) <= 0.0);
            let outside = !(p[0] > 0.0 && p[0] < 10.0 && p[1] > 0.0 && p[1] < 10.0);
            assert_eq!(env.l(&p) <= 0.0, inside_obstacle || outside, "at {p:?}");
        }
    }

    #[test]
    fn task_costs() {
        let task = Task::new(
            [9.0, 5.0, 0.0].into_iter().collect(),
            0.1,
            20.0,
            [1.0, 1.0, 0.0].into_iter().collect(),
            0.1,
        );
        assert_relative_eq!(task.state_cost(&[9.0, 5.0, 2.0]), 0.0);
        assert_relative_eq!(task.state_cost(&[8.0, 3.0, 0.0]), 1.0 + 4.0);
        assert!(task.reached(&[9.05, 5.0, 1.0]));
        assert!(!task.reached(&[8.0, 5.0, 1.0]));
    }

    fn square_track() -> Racetrack<f64> {
        Racetrack::new(
            vec![[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]],
            0.4,
        )
        .unwrap()
    }

    #[test]
    fn track_signed_distance() {
        let t = square_track();
        assert_relative_eq!(t.l(&[2.0, 0.0]), 0.4);
        assert_relative_eq!(t.l(&[2.0, 0.4]), 0.0);
        assert_relative_eq!(t.l(&[2.0, 0.1]), 0.3);
        assert!(t.l(&[2.0, 2.0]) < 0.0);
    }

    #[test]
    fn track_progress_accumulates_along_segments() {
        let t = square_track();
        assert_relative_eq!(t.progress(&[1.0, 0.0]), 1.0);
        assert_relative_eq!(t.progress(&[4.0, 1.0]), 5.0);
        assert_relative_eq!(t.total_length(), 16.0);
    }

    #[test]
    fn track_rejects_bad_centerlines() {
        assert!(matches!(
            Racetrack::new(vec![[0.0, 0.0], [1.0, 0.0]], 0.4),
            Err(EnvError::DegenerateCenterline)
        ));
        // Bowtie: segments 0-1 and 2-3 cross.
        assert!(matches!(
            Racetrack::new(
                vec![[0.0, 0.0], [4.0, 4.0], [4.0, 0.0], [0.0, 4.0]],
                0.4
            ),
            Err(EnvError::SelfIntersecting)
        ));
    }

    #[test]
    fn json_round_trip() {
        let spec = EnvSpec {
            domain: Box2::new([0.0, 0.0], [10.0, 10.0]),
            obstacle_count: 15,
            diameter_range: (0.35, 3.5),
            boundary_is_failure: true,
        };
        let env = generate_environment(7, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("env.json");
        env.save_json(&path).unwrap();
        let back = Environment::<f64>::load_json(&path).unwrap();
        assert_eq!(env, back);
    }
}
