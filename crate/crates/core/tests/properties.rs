//! Randomized invariants: interpolation and gradient behavior on sampled
//! fields, Hamiltonian extremizers against brute force, signed-distance
//! geometry, filter switching, and the MPPI weight simplex.

use std::f64::consts::TAU;

use dualguard::controllers::{mppi_update, mppi_weights, ControlSequence};
use dualguard::dynamics::{
    Bicycle3D, ControlBounds, ControlSense, Dubins3D, DynamicsModel,
};
use dualguard::environment::{Box2, Circle, Environment};
use dualguard::filter::filter;
use dualguard::grid::{Axis, Grid, ScalarField};
use dualguard::hj::{solve, SolverParams, ValueField};
use dualguard::SVec;
use once_cell::sync::Lazy;
use proptest::prelude::*;

fn field_on(
    axes: Vec<Axis<f64>>,
    f: impl Fn(&[f64]) -> f64,
) -> ScalarField<f64> {
    let grid = Grid::new(axes).unwrap();
    ScalarField::from_fn(grid, f).unwrap()
}

proptest! {
    /// Multilinear functions are reproduced exactly everywhere, not just
    /// at nodes: they are the interpolant's own function class.
    #[test]
    fn interpolation_is_exact_for_multilinear_fields(
        a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, d in -5.0f64..5.0,
        qx in -1.0f64..2.0, qy in 0.5f64..3.0,
    ) {
        let f = move |p: &[f64]| a + b * p[0] + c * p[1] + d * p[0] * p[1];
        let field = field_on(
            vec![Axis::new(-1.0, 2.0, 7), Axis::new(0.5, 3.0, 6)],
            f,
        );
        let s = field.interpolate(&[qx, qy]);
        prop_assert!(!s.clamped);
        prop_assert!((s.value - f(&[qx, qy])).abs() < 1e-12);

        let grid = field.grid().clone();
        let mut coords = [0usize; 2];
        grid.unravel(grid.len() / 2, &mut coords);
        let node = grid.node_state(&coords);
        let at_node = field.interpolate(&node);
        prop_assert_eq!(at_node.value, f(&node));
    }

    /// The gradient of a linear field is its coefficient vector at every
    /// interior point.
    #[test]
    fn gradient_of_a_linear_field_is_its_coefficients(
        b in prop::array::uniform3(-4.0f64..4.0),
        q in prop::array::uniform3(0.15f64..0.85),
    ) {
        let f = move |p: &[f64]| 1.0 + b[0] * p[0] + b[1] * p[1] + b[2] * p[2];
        let field = field_on(
            vec![
                Axis::new(0.0, 1.0, 11),
                Axis::new(-1.0, 1.0, 9),
                Axis::new(2.0, 5.0, 13),
            ],
            f,
        );
        let grid = field.grid();
        let x = [
            q[0],
            -1.0 + 2.0 * q[1],
            2.0 + 3.0 * q[2],
        ];
        let g = field.gradient(&x);
        prop_assert!(!g.clamped);
        for i in 0..3 {
            prop_assert!(
                (g.gradient[i] - b[i]).abs() < 1e-9,
                "dim {i}: {} vs {} (spacing {})",
                g.gradient[i], b[i], grid.axis(i).spacing()
            );
        }
    }

    /// Shifting a query by whole periods of a periodic axis does not
    /// change the interpolated value.
    #[test]
    fn periodic_queries_are_shift_invariant(
        a in -2.0f64..2.0, k in 1.0f64..4.0,
        qx in 0.0f64..4.0, qt in 0.0f64..TAU,
        shift in -3i32..4,
    ) {
        let f = move |p: &[f64]| a * (k * p[1]).sin() * (1.0 + p[0]);
        let field = field_on(
            vec![Axis::new(0.0, 4.0, 9), Axis::periodic(0.0, TAU, 24)],
            f,
        );
        let base = field.interpolate(&[qx, qt]).value;
        let moved = field.interpolate(&[qx, qt + f64::from(shift) * TAU]).value;
        prop_assert!((base - moved).abs() < 1e-12, "{base} vs {moved}");
    }

    /// gradient() agrees with central differences of interpolate() at a
    /// one-cell step, for smooth sampled fields.
    #[test]
    fn gradient_matches_finite_differences_of_interpolate(
        a in -1.0f64..1.0, b in -0.5f64..0.5, c in -0.5f64..0.5,
        q in prop::array::uniform2(0.08f64..0.92),
    ) {
        let f = move |p: &[f64]| {
            a * p[0].sin() * p[1].cos() + 0.5 * b * p[0] * p[0] + 0.5 * c * p[1] * p[1]
        };
        let field = field_on(
            vec![Axis::new(0.0, 3.0, 61), Axis::new(0.0, 3.0, 61)],
            f,
        );
        let x = [3.0 * q[0], 3.0 * q[1]];
        let g = field.gradient(&x);
        for i in 0..2 {
            let h = field.grid().axis(i).spacing();
            let mut lo = x;
            let mut hi = x;
            lo[i] -= h;
            hi[i] += h;
            let fd = (field.interpolate(&hi).value - field.interpolate(&lo).value) / (2.0 * h);
            prop_assert!(
                (g.gradient[i] - fd).abs() < 1e-2,
                "dim {i}: gradient {} vs fd {}",
                g.gradient[i], fd
            );
        }
    }
}

/// All points of the 101-per-channel product grid over a box, flattened
/// with stride dim (a single empty tuple for a zero-dimensional box).
fn box_grid(bounds: &ControlBounds<f64>) -> (Vec<f64>, usize) {
    let dim = bounds.dim();
    let mut flat = Vec::new();
    let mut tuples: Vec<Vec<f64>> = vec![vec![]];
    for ch in 0..dim {
        tuples = tuples
            .into_iter()
            .flat_map(|u| {
                (0..=100).map(move |i| {
                    let v = bounds.lo(ch)
                        + (bounds.hi(ch) - bounds.lo(ch)) * i as f64 / 100.0;
                    let mut u = u.clone();
                    u.push(v);
                    u
                })
            })
            .collect();
    }
    for t in &tuples {
        flat.extend_from_slice(t);
    }
    (flat, dim.max(1))
}

/// Generic (not dyn) so `flow` inlines into the scan; the bicycle case
/// visits 101^4 points.
fn brute_force_extremum<M: DynamicsModel<f64>>(
    model: &M,
    x: &[f64],
    p: &[f64],
    sense: ControlSense,
) -> f64 {
    let (controls, cstride) = box_grid(model.control_bounds());
    let (disturbances, dstride) = box_grid(model.disturbance_bounds());
    let mut f = vec![0.0; model.state_dim()];
    let mut outer = f64::NEG_INFINITY;
    let flip = match sense {
        ControlSense::Maximize => 1.0,
        ControlSense::Minimize => -1.0,
    };
    let empty: [f64; 0] = [];
    let ctuples: Vec<&[f64]> = if model.control_bounds().dim() == 0 {
        vec![&empty]
    } else {
        controls.chunks_exact(cstride).collect()
    };
    let dtuples: Vec<&[f64]> = if model.disturbance_bounds().dim() == 0 {
        vec![&empty]
    } else {
        disturbances.chunks_exact(dstride).collect()
    };
    for u in &ctuples {
        // The disturbance always takes the opposite sense of the control.
        let mut inner = f64::INFINITY;
        for d in &dtuples {
            model.flow(x, u, d, &mut f);
            let dot: f64 = p.iter().zip(&f).map(|(pi, fi)| pi * fi).sum();
            inner = inner.min(flip * dot);
        }
        outer = outer.max(inner);
    }
    flip * outer
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn dubins_extrema_match_brute_force(
        theta in 0.0f64..TAU,
        p in prop::array::uniform3(-5.0f64..5.0),
        maximize in any::<bool>(),
    ) {
        let model = Dubins3D::new(2.0, 3.0);
        let x = [1.0, -2.0, theta];
        let sense = if maximize { ControlSense::Maximize } else { ControlSense::Minimize };
        let ext = model.hamiltonian_extrema(&x, &p, sense);
        let brute = brute_force_extremum(&model, &x, &p, sense);
        prop_assert!((ext.value - brute).abs() < 1e-9, "{} vs {brute}", ext.value);

        let mut f = [0.0; 3];
        model.flow(&x, &ext.control, &ext.disturbance, &mut f);
        let dot: f64 = p.iter().zip(&f).map(|(pi, fi)| pi * fi).sum();
        prop_assert!((ext.value - dot).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]
    #[test]
    fn bicycle_extrema_match_brute_force(
        theta in 0.0f64..TAU,
        p in prop::array::uniform3(-5.0f64..5.0),
        maximize in any::<bool>(),
    ) {
        let model = Bicycle3D::new((0.7, 1.4), 0.4363, 0.1, 0.235);
        let x = [0.5, 0.5, theta];
        let sense = if maximize { ControlSense::Maximize } else { ControlSense::Minimize };
        let ext = model.hamiltonian_extrema(&x, &p, sense);
        let brute = brute_force_extremum(&model, &x, &p, sense);
        prop_assert!((ext.value - brute).abs() < 1e-9, "{} vs {brute}", ext.value);
    }
}

static CLUTTER: Lazy<Environment<f64>> = Lazy::new(|| {
    Environment::new(
        Box2::new([0.0, 0.0], [10.0, 10.0]),
        vec![
            Circle { center: [3.0, 4.0], radius: 1.1 },
            Circle { center: [7.5, 2.0], radius: 0.6 },
            Circle { center: [6.0, 8.0], radius: 1.7 },
        ],
        true,
        0,
    )
    .unwrap()
});

proptest! {
    /// The failure margin is 1-Lipschitz in the position plane, inside
    /// and outside the domain alike.
    #[test]
    fn failure_margin_is_one_lipschitz(
        ax in -2.0f64..12.0, ay in -2.0f64..12.0,
        bx in -2.0f64..12.0, by in -2.0f64..12.0,
        theta in 0.0f64..TAU,
    ) {
        let la = CLUTTER.l(&[ax, ay, theta]);
        let lb = CLUTTER.l(&[bx, by, 0.0]);
        let dist = ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt();
        prop_assert!((la - lb).abs() <= dist + 1e-12, "|{la} - {lb}| > {dist}");
    }

    /// Sign agreement with direct containment tests, away from the exact
    /// zero level.
    #[test]
    fn failure_sign_matches_direct_containment(
        px in -2.0f64..12.0, py in -2.0f64..12.0,
    ) {
        let l = CLUTTER.l(&[px, py]);
        prop_assume!(l.abs() > 1e-9);
        let in_obstacle = CLUTTER.obstacles.iter().any(|c| {
            (px - c.center[0]).powi(2) + (py - c.center[1]).powi(2) < c.radius * c.radius
        });
        let outside = px < 0.0 || px > 10.0 || py < 0.0 || py > 10.0;
        prop_assert_eq!(l < 0.0, in_obstacle || outside);
    }
}

/// Small solved Dubins field shared by the filter properties.
static FILTER_FIELD: Lazy<(Dubins3D<f64>, ValueField<f64>)> = Lazy::new(|| {
    let model = Dubins3D::new(2.0, 3.0);
    let env = Environment::new(
        Box2::new([0.0, 0.0], [8.0, 8.0]),
        vec![Circle { center: [4.0, 4.0], radius: 1.3 }],
        true,
        0,
    )
    .unwrap();
    let grid = Grid::new(vec![
        Axis::new(0.0, 8.0, 27),
        Axis::new(0.0, 8.0, 27),
        Axis::periodic(0.0, TAU, 16),
    ])
    .unwrap();
    let params = SolverParams {
        tolerance: 1e-3,
        ..SolverParams::default()
    };
    let vf = solve(&model, &env, &grid, &params).unwrap();
    (model, vf)
});

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]
    /// Above the band the nominal passes through bit-exactly (after bound
    /// clamping); at or below it the optimal safe control replaces it.
    #[test]
    fn filter_only_alters_unsafe_nominals(
        px in 0.0f64..8.0, py in 0.0f64..8.0, theta in 0.0f64..TAU,
        u_nom in -5.0f64..5.0,
        eps in 0.01f64..0.6,
    ) {
        let (model, vf) = &*FILTER_FIELD;
        let x = [px, py, theta];
        let decision = filter(vf, model, &x, &[u_nom], eps);
        prop_assert_eq!(decision.value, vf.value(&x));
        if decision.activated {
            prop_assert!(decision.value <= eps);
            let expected = vf.optimal_safe_control(model, &x);
            prop_assert_eq!(&decision.control[..], &expected[..]);
        } else {
            prop_assert!(decision.value > eps);
            let mut expected: SVec<f64> = [u_nom].iter().copied().collect();
            model.control_bounds().clamp(&mut expected);
            prop_assert_eq!(&decision.control[..], &expected[..]);
        }
    }

    /// Widening the band can only switch activations on, never off.
    #[test]
    fn activation_is_monotone_in_the_band(
        px in 0.0f64..8.0, py in 0.0f64..8.0, theta in 0.0f64..TAU,
        lo in 0.01f64..0.3, extra in 0.0f64..0.3,
    ) {
        let (model, vf) = &*FILTER_FIELD;
        let x = [px, py, theta];
        let narrow = filter(vf, model, &x, &[0.0], lo);
        let wide = filter(vf, model, &x, &[0.0], lo + extra);
        prop_assert!(!narrow.activated || wide.activated);
    }
}

proptest! {
    /// Weights form a probability simplex and depend on cost differences
    /// only.
    #[test]
    fn weights_are_a_shift_invariant_simplex(
        costs in prop::collection::vec(-1e3f64..1e3, 1..40),
        lambda in 1e-3f64..100.0,
        shift in -1e4f64..1e4,
    ) {
        let w = mppi_weights(&costs, lambda);
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        let total: f64 = w.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);

        let shifted: Vec<f64> = costs.iter().map(|c| c + shift).collect();
        let ws = mppi_weights(&shifted, lambda);
        for (a, b) in w.iter().zip(&ws) {
            prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    /// Before clamping interferes, the update moves each channel by a
    /// convex combination of the sampled deviations.
    #[test]
    fn update_stays_inside_the_sampled_deviation_hull(
        h in 1usize..5, m in 1usize..3, k in 1usize..6,
        seed_vals in prop::collection::vec(-1.0f64..1.0, 4 * 2),
        deltas_raw in prop::collection::vec(-2.0f64..2.0, 5 * 4 * 2),
        costs_raw in prop::collection::vec(0.0f64..50.0, 5),
        lambda in 0.1f64..20.0,
    ) {
        let nominal = ControlSequence::new(
            (0..h)
                .map(|j| (0..m).map(|c| seed_vals[j * 2 + c]).collect())
                .collect(),
        );
        let deltas: Vec<f64> = (0..k * h * m).map(|i| deltas_raw[i % deltas_raw.len()]).collect();
        let costs: Vec<f64> = costs_raw[..k].to_vec();
        let wide: SVec<f64> = std::iter::repeat(100.0).take(m).collect();
        let bounds = ControlBounds::new(wide.iter().map(|v| -v).collect(), wide);
        let updated = mppi_update(&nominal, &deltas, &costs, lambda, &bounds);
        for j in 0..h {
            for c in 0..m {
                let moved = updated.step(j)[c] - nominal.step(j)[c];
                let samples: Vec<f64> =
                    (0..k).map(|kk| deltas[(kk * h + j) * m + c]).collect();
                let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(
                    moved >= lo - 1e-9 && moved <= hi + 1e-9,
                    "step {j} channel {c}: {moved} outside [{lo}, {hi}]"
                );
            }
        }
    }
}
