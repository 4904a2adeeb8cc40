//! Continuous-time dynamics models with box-bounded controls and
//! disturbances, RK4 integration for rollouts, and per-model resolution of
//! the Hamiltonian extremizers used by the reachability solver.

use crate::scalar::Real;
use crate::SVec;

pub type State<T> = SVec<T>;
pub type Control<T> = SVec<T>;

/// Per-channel box bounds. A zero-channel instance models "no disturbance".
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBounds<T> {
    lo: SVec<T>,
    hi: SVec<T>,
}

impl<T: Real> ControlBounds<T> {
    pub fn new(lo: SVec<T>, hi: SVec<T>) -> Self {
        assert_eq!(lo.len(), hi.len());
        for (l, h) in lo.iter().zip(&hi) {
            assert!(*l <= *h, "lower bound above upper bound");
        }
        ControlBounds { lo, hi }
    }

    pub fn empty() -> Self {
        ControlBounds {
            lo: SVec::new(),
            hi: SVec::new(),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    #[inline]
    pub fn lo(&self, i: usize) -> T {
        self.lo[i]
    }

    #[inline]
    pub fn hi(&self, i: usize) -> T {
        self.hi[i]
    }

    #[inline]
    pub fn midpoint(&self, i: usize) -> T {
        (self.lo[i] + self.hi[i]) * T::of(0.5)
    }

    pub fn midpoints(&self) -> SVec<T> {
        (0..self.dim()).map(|i| self.midpoint(i)).collect()
    }

    pub fn clamp(&self, u: &mut [T]) {
        debug_assert_eq!(u.len(), self.dim());
        for (i, v) in u.iter_mut().enumerate() {
            *v = v.max(self.lo[i]).min(self.hi[i]);
        }
    }

    pub fn contains(&self, u: &[T]) -> bool {
        u.len() == self.dim()
            && u.iter()
                .enumerate()
                .all(|(i, v)| *v >= self.lo[i] && *v <= self.hi[i])
    }

    /// Box corner selected by the bit mask (bit i set = upper bound on
    /// channel i).
    pub fn corner(&self, mask: usize) -> SVec<T> {
        (0..self.dim())
            .map(|i| if (mask >> i) & 1 == 1 { self.hi[i] } else { self.lo[i] })
            .collect()
    }
}

/// Which player the returned control extremizes for; the disturbance always
/// takes the opposite side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlSense {
    Maximize,
    Minimize,
}

impl ControlSense {
    #[inline]
    fn flip(self) -> Self {
        match self {
            ControlSense::Maximize => ControlSense::Minimize,
            ControlSense::Minimize => ControlSense::Maximize,
        }
    }
}

/// Extremizers of p·f(x,u,d) over the control and disturbance boxes,
/// together with the extremized value.
#[derive(Debug, Clone)]
pub struct HamiltonianExtremum<T> {
    pub control: Control<T>,
    pub disturbance: SVec<T>,
    pub value: T,
}

/// Endpoint selection for a channel entering p·f linearly with the given
/// coefficient; zero coefficient ties break to the midpoint so downstream
/// consumers stay deterministic.
#[inline]
fn pick_endpoint<T: Real>(coeff: T, lo: T, hi: T, sense: ControlSense) -> T {
    let want_hi = match sense {
        ControlSense::Maximize => coeff > T::zero(),
        ControlSense::Minimize => coeff < T::zero(),
    };
    if coeff == T::zero() {
        (lo + hi) * T::of(0.5)
    } else if want_hi {
        hi
    } else {
        lo
    }
}

pub trait DynamicsModel<T: Real>: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn control_bounds(&self) -> &ControlBounds<T>;
    fn disturbance_bounds(&self) -> &ControlBounds<T>;

    /// Stable identifier embedded in persisted value fields.
    fn id(&self) -> &'static str;

    /// ẋ = f(x, u, d) written into `out`.
    fn flow(&self, x: &[T], u: &[T], d: &[T], out: &mut [T]);

    /// Extremizers of p·f over the boxes: the control takes `sense`, the
    /// disturbance the opposite. Exact for these models because p·f is
    /// separable across the two boxes and monotone per channel.
    fn hamiltonian_extrema(&self, x: &[T], p: &[T], sense: ControlSense) -> HamiltonianExtremum<T>;

    /// Per-dimension bound on |f_i| over the control and disturbance boxes
    /// (Lax-Friedrichs dissipation coefficients). Corner enumeration is
    /// exact because every flow component is multilinear in (u, d).
    fn speed_bounds(&self, x: &[T], out: &mut [T]) {
        let cb = self.control_bounds();
        let db = self.disturbance_bounds();
        for v in out.iter_mut() {
            *v = T::zero();
        }
        let mut f: SVec<T> = std::iter::repeat(T::zero()).take(self.state_dim()).collect();
        for cm in 0..(1usize << cb.dim()) {
            let u = cb.corner(cm);
            for dm in 0..(1usize << db.dim()) {
                let d = db.corner(dm);
                self.flow(x, &u, &d, &mut f);
                for (o, fi) in out.iter_mut().zip(&f) {
                    *o = o.max(fi.abs());
                }
            }
        }
    }

    /// Wrap periodic state components back into their principal range
    /// (called after every integration step).
    fn wrap_state(&self, _x: &mut [T]) {}
}

/// One RK4 step with (u, d) held constant; scratch buffers live in the
/// stepper so rollout hot loops do not allocate.
#[derive(Debug, Clone)]
pub struct Stepper<T> {
    k1: SVec<T>,
    k2: SVec<T>,
    k3: SVec<T>,
    k4: SVec<T>,
    tmp: SVec<T>,
}

impl<T: Real> Stepper<T> {
    pub fn new(state_dim: usize) -> Self {
        let z: SVec<T> = std::iter::repeat(T::zero()).take(state_dim).collect();
        Stepper {
            k1: z.clone(),
            k2: z.clone(),
            k3: z.clone(),
            k4: z.clone(),
            tmp: z,
        }
    }

    pub fn step(&mut self, model: &dyn DynamicsModel<T>, x: &mut [T], u: &[T], d: &[T], dt: T) {
        debug_assert!(dt > T::zero());
        debug_assert!(model.control_bounds().contains(u));
        debug_assert!(model.disturbance_bounds().contains(d));
        let n = x.len();
        let half = dt * T::of(0.5);
        model.flow(x, u, d, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + half * self.k1[i];
        }
        model.flow(&self.tmp, u, d, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + half * self.k2[i];
        }
        model.flow(&self.tmp, u, d, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + dt * self.k3[i];
        }
        model.flow(&self.tmp, u, d, &mut self.k4);
        let sixth = dt / T::of(6.0);
        for i in 0..n {
            x[i] = x[i]
                + sixth * (self.k1[i] + T::of(2.0) * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
        model.wrap_state(x);
    }
}

/// Convenience single step for tests and episode simulation.
pub fn step<T: Real>(model: &dyn DynamicsModel<T>, x: &[T], u: &[T], d: &[T], dt: T) -> State<T> {
    let mut out: State<T> = x.iter().copied().collect();
    Stepper::new(x.len()).step(model, &mut out, u, d, dt);
    out
}

fn wrap_angle<T: Real>(theta: T) -> T {
    let tau = T::of(std::f64::consts::TAU);
    let mut r = theta % tau;
    if r < T::zero() {
        r = r + tau;
    }
    r
}

/// ẋ = u, u ∈ [−1, 1]. Solver validation oracle: with l(x) = x the
/// converged safety value is exactly x.
#[derive(Debug, Clone)]
pub struct Integrator1D<T> {
    control: ControlBounds<T>,
    disturbance: ControlBounds<T>,
}

impl<T: Real> Integrator1D<T> {
    pub fn new() -> Self {
        Integrator1D {
            control: ControlBounds::new(
                std::iter::once(T::of(-1.0)).collect(),
                std::iter::once(T::of(1.0)).collect(),
            ),
            disturbance: ControlBounds::empty(),
        }
    }
}

impl<T: Real> Default for Integrator1D<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> DynamicsModel<T> for Integrator1D<T> {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn control_bounds(&self) -> &ControlBounds<T> {
        &self.control
    }
    fn disturbance_bounds(&self) -> &ControlBounds<T> {
        &self.disturbance
    }
    fn id(&self) -> &'static str {
        "integrator1d"
    }

    fn flow(&self, _x: &[T], u: &[T], _d: &[T], out: &mut [T]) {
        out[0] = u[0];
    }

    fn hamiltonian_extrema(&self, _x: &[T], p: &[T], sense: ControlSense) -> HamiltonianExtremum<T> {
        let u = pick_endpoint(p[0], self.control.lo(0), self.control.hi(0), sense);
        HamiltonianExtremum {
            control: std::iter::once(u).collect(),
            disturbance: SVec::new(),
            value: p[0] * u,
        }
    }
}

/// ẋ = v, v̇ = u, u ∈ [−u_max, u_max]. Oracle with the analytic avoid
/// boundary x = v²/(2 u_max) for v < 0 when failure is {x ≤ 0}.
#[derive(Debug, Clone)]
pub struct DoubleIntegrator<T> {
    control: ControlBounds<T>,
    disturbance: ControlBounds<T>,
}

impl<T: Real> DoubleIntegrator<T> {
    pub fn new(u_max: T) -> Self {
        assert!(u_max > T::zero());
        DoubleIntegrator {
            control: ControlBounds::new(
                std::iter::once(-u_max).collect(),
                std::iter::once(u_max).collect(),
            ),
            disturbance: ControlBounds::empty(),
        }
    }
}

impl<T: Real> DynamicsModel<T> for DoubleIntegrator<T> {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn control_bounds(&self) -> &ControlBounds<T> {
        &self.control
    }
    fn disturbance_bounds(&self) -> &ControlBounds<T> {
        &self.disturbance
    }
    fn id(&self) -> &'static str {
        "double_integrator"
    }

    fn flow(&self, x: &[T], u: &[T], _d: &[T], out: &mut [T]) {
        out[0] = x[1];
        out[1] = u[0];
    }

    fn hamiltonian_extrema(&self, x: &[T], p: &[T], sense: ControlSense) -> HamiltonianExtremum<T> {
        let u = pick_endpoint(p[1], self.control.lo(0), self.control.hi(0), sense);
        HamiltonianExtremum {
            control: std::iter::once(u).collect(),
            disturbance: SVec::new(),
            value: p[0] * x[1] + p[1] * u,
        }
    }
}

/// Planar unicycle at fixed speed: ẋ = V cos θ, ẏ = V sin θ, θ̇ = u.
#[derive(Debug, Clone)]
pub struct Dubins3D<T> {
    pub speed: T,
    control: ControlBounds<T>,
    disturbance: ControlBounds<T>,
}

impl<T: Real> Dubins3D<T> {
    pub fn new(speed: T, turn_max: T) -> Self {
        assert!(speed > T::zero() && turn_max > T::zero());
        Dubins3D {
            speed,
            control: ControlBounds::new(
                std::iter::once(-turn_max).collect(),
                std::iter::once(turn_max).collect(),
            ),
            disturbance: ControlBounds::empty(),
        }
    }

    /// V = 2 m/s, u ∈ [−3, 3] rad/s.
    pub fn standard() -> Self {
        Self::new(T::of(2.0), T::of(3.0))
    }
}

impl<T: Real> DynamicsModel<T> for Dubins3D<T> {
    fn state_dim(&self) -> usize {
        3
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn control_bounds(&self) -> &ControlBounds<T> {
        &self.control
    }
    fn disturbance_bounds(&self) -> &ControlBounds<T> {
        &self.disturbance
    }
    fn id(&self) -> &'static str {
        "dubins3d"
    }

    fn flow(&self, x: &[T], u: &[T], _d: &[T], out: &mut [T]) {
        let (s, c) = x[2].sin_cos();
        out[0] = self.speed * c;
        out[1] = self.speed * s;
        out[2] = u[0];
    }

    fn hamiltonian_extrema(&self, x: &[T], p: &[T], sense: ControlSense) -> HamiltonianExtremum<T> {
        let (s, c) = x[2].sin_cos();
        let u = pick_endpoint(p[2], self.control.lo(0), self.control.hi(0), sense);
        HamiltonianExtremum {
            control: std::iter::once(u).collect(),
            disturbance: SVec::new(),
            value: self.speed * (p[0] * c + p[1] * s) + p[2] * u,
        }
    }

    fn wrap_state(&self, x: &mut [T]) {
        x[2] = wrap_angle(x[2]);
    }
}

/// Kinematic bicycle with additive planar velocity disturbance:
/// ẋ = V cos θ + d_x, ẏ = V sin θ + d_y, θ̇ = V tan(δ) / L, u = [V, δ].
#[derive(Debug, Clone)]
pub struct Bicycle3D<T> {
    pub wheelbase: T,
    control: ControlBounds<T>,
    disturbance: ControlBounds<T>,
}

impl<T: Real> Bicycle3D<T> {
    pub fn new(v_range: (T, T), delta_max: T, d_max: T, wheelbase: T) -> Self {
        assert!(v_range.0 > T::zero() && v_range.0 <= v_range.1);
        assert!(delta_max > T::zero() && delta_max < T::of(std::f64::consts::FRAC_PI_2));
        assert!(d_max >= T::zero() && wheelbase > T::zero());
        Bicycle3D {
            wheelbase,
            control: ControlBounds::new(
                [v_range.0, -delta_max].into_iter().collect(),
                [v_range.1, delta_max].into_iter().collect(),
            ),
            disturbance: ControlBounds::new(
                [-d_max, -d_max].into_iter().collect(),
                [d_max, d_max].into_iter().collect(),
            ),
        }
    }

    /// V ∈ [0.7, 1.4] m/s, δ ∈ ±25°, d ∈ ±0.1 m/s, L = 0.235 m.
    pub fn standard() -> Self {
        Self::new(
            (T::of(0.7), T::of(1.4)),
            T::of(25.0 * std::f64::consts::PI / 180.0),
            T::of(0.1),
            T::of(0.235),
        )
    }
}

impl<T: Real> DynamicsModel<T> for Bicycle3D<T> {
    fn state_dim(&self) -> usize {
        3
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn control_bounds(&self) -> &ControlBounds<T> {
        &self.control
    }
    fn disturbance_bounds(&self) -> &ControlBounds<T> {
        &self.disturbance
    }
    fn id(&self) -> &'static str {
        "bicycle3d"
    }

    fn flow(&self, x: &[T], u: &[T], d: &[T], out: &mut [T]) {
        let (s, c) = x[2].sin_cos();
        out[0] = u[0] * c + d[0];
        out[1] = u[0] * s + d[1];
        out[2] = u[0] * u[1].tan() / self.wheelbase;
    }

    fn hamiltonian_extrema(&self, x: &[T], p: &[T], sense: ControlSense) -> HamiltonianExtremum<T> {
        let (s, c) = x[2].sin_cos();
        let heading = p[0] * c + p[1] * s;
        // With V > 0 throughout the box, the bracket V·(heading +
        // p_θ·tanδ/L) is extremized by first extremizing over δ (tan is
        // increasing) and then choosing V by the bracket's sign.
        let delta = pick_endpoint(p[2], self.control.lo(1), self.control.hi(1), sense);
        let bracket = heading + p[2] * delta.tan() / self.wheelbase;
        let v = pick_endpoint(bracket, self.control.lo(0), self.control.hi(0), sense);
        let dsense = sense.flip();
        let dx = pick_endpoint(p[0], self.disturbance.lo(0), self.disturbance.hi(0), dsense);
        let dy = pick_endpoint(p[1], self.disturbance.lo(1), self.disturbance.hi(1), dsense);
        HamiltonianExtremum {
            control: [v, delta].into_iter().collect(),
            disturbance: [dx, dy].into_iter().collect(),
            value: v * bracket + p[0] * dx + p[1] * dy,
        }
    }

    fn wrap_state(&self, x: &mut [T]) {
        x[2] = wrap_angle(x[2]);
    }
}
