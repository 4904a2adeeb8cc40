//! Least restrictive safety filter: pass the nominal control while the
//! state is strictly inside the safe set, override with the optimal safe
//! control at the boundary.
//!
//! The continuous-time switch sits exactly on V(x) = 0, which a discrete
//! loop steps over. The band `eps_switch` widens the switch by the largest
//! value drop one step can produce, making the discrete guarantee hold.

use crate::dynamics::{Control, DynamicsModel};
use crate::grid::Grid;
use crate::hj::ValueField;
use crate::scalar::Real;
use crate::{IVec, SVec};

#[derive(Debug, Clone)]
pub struct FilterDecision<T> {
    /// The control to apply.
    pub control: Control<T>,
    /// True when the safe control replaced the nominal.
    pub activated: bool,
    /// V at the queried state.
    pub value: T,
}

/// Apply the filter at one state. Nominal controls outside the bounds are
/// clamped before the pass-through branch.
#[inline]
pub fn filter<T: Real>(
    vf: &ValueField<T>,
    model: &dyn DynamicsModel<T>,
    x: &[T],
    u_nom: &[T],
    eps_switch: T,
) -> FilterDecision<T> {
    let value = vf.value(x);
    if value > eps_switch {
        let mut control: Control<T> = u_nom.iter().copied().collect();
        model.control_bounds().clamp(&mut control);
        FilterDecision {
            control,
            activated: false,
            value,
        }
    } else {
        FilterDecision {
            control: vf.optimal_safe_control(model, x),
            activated: true,
            value,
        }
    }
}

/// Max state-space speed sqrt(sum_i max|f_i|^2) over all grid nodes and
/// the control/disturbance boxes.
pub fn max_speed<T: Real>(model: &dyn DynamicsModel<T>, grid: &Grid<T>) -> T {
    let n = grid.dims();
    let mut coords: IVec = std::iter::repeat(0usize).take(n).collect();
    let mut alpha: SVec<T> = std::iter::repeat(T::zero()).take(n).collect();
    let mut best = T::zero();
    for flat in 0..grid.len() {
        grid.unravel(flat, &mut coords);
        let x = grid.node_state(&coords);
        model.speed_bounds(&x, &mut alpha);
        let norm2: T = alpha.iter().map(|a| *a * *a).sum();
        best = best.max(norm2);
    }
    best.sqrt()
}

/// Default switching band: eps = L_V * v_max * dt, the largest value drop
/// achievable in one discrete step.
pub fn switching_band<T: Real>(vf: &ValueField<T>, model: &dyn DynamicsModel<T>, dt: T) -> T {
    vf.lipschitz_bound() * max_speed(model, vf.grid()) * dt
}
