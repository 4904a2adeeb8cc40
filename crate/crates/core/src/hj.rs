//! Backward reachability: solve the safety variational inequality to a
//! converged value function V(x), expose BRT membership and the optimal
//! safe control, and persist value fields.
//!
//! The iteration is Jacobi-style value iteration on
//!     V <- min(V + dt * H_lf(x, DV), l(x), V)
//! with a first-order Lax-Friedrichs numerical Hamiltonian. The control
//! maximizes and the disturbance minimizes p·f (the avoid game: safety is
//! maintainable exactly where the converged V is positive). The trailing
//! min with the previous iterate is inert in exact arithmetic for this
//! monotone scheme; it pins down the monotone-convergence invariant against
//! floating-point rounding.

use crate::dynamics::{ControlSense, DynamicsModel};
use crate::environment::FailureSet;
use crate::grid::{Grid, GridError, ScalarField};
use crate::scalar::Real;
use crate::{IVec, SVec};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use std::io::{Read, Write};
use std::path::Path;

pub const DEFAULT_CFL: f64 = 0.5;
pub const DEFAULT_TOLERANCE: f64 = 1.0e-4;
pub const DEFAULT_MAX_ITERATIONS: usize = 20_000;

const MAGIC: &[u8; 4] = b"HJVF";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct SolverParams<T> {
    /// CFL number in (0, 1].
    pub cfl: T,
    /// Convergence tolerance on the max pointwise update per sweep.
    pub tolerance: T,
    pub max_iterations: usize,
}

impl<T: Real> Default for SolverParams<T> {
    fn default() -> Self {
        SolverParams {
            cfl: T::of(DEFAULT_CFL),
            tolerance: T::of(DEFAULT_TOLERANCE),
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error("model state dimension {model} does not match grid dimension {grid}")]
    DimensionMismatch { model: usize, grid: usize },
    #[error("invalid solver params: {0}")]
    BadParams(String),
    #[error(
        "no convergence in {iterations} iterations (last residual {last_residual:.3e}, tolerance {tolerance:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        last_residual: f64,
        tolerance: f64,
        residual_history: Vec<f64>,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: not a value-field file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("trailing bytes after value-field payload")]
    TrailingBytes,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("value field i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Solve metadata that exists only on freshly solved fields (the file
/// format keeps iterations and residual, not the scheme internals).
#[derive(Debug, Clone)]
pub struct SolveDetail<T> {
    pub dt_pde: T,
    /// Max Lax-Friedrichs dissipation coefficient per dimension.
    pub alpha_max: SVec<T>,
    pub residual_history: Vec<T>,
    /// Post-update invariant violations; structurally zero.
    pub monotone_violations: u64,
    pub l_violations: u64,
}

/// Converged safety value function on a grid.
#[derive(Debug, Clone)]
pub struct ValueField<T> {
    field: ScalarField<T>,
    model_id: String,
    iterations: u64,
    residual: T,
    detail: Option<SolveDetail<T>>,
}

impl<T: Real> ValueField<T> {
    pub fn field(&self) -> &ScalarField<T> {
        &self.field
    }

    pub fn grid(&self) -> &Grid<T> {
        self.field.grid()
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn residual(&self) -> T {
        self.residual
    }

    pub fn detail(&self) -> Option<&SolveDetail<T>> {
        self.detail.as_ref()
    }

    /// Wrap an existing field (synthetic fields in tests; not a solve).
    #[cfg(test)]
    pub(crate) fn synthetic(field: ScalarField<T>, model_id: &str) -> Self {
        ValueField {
            field,
            model_id: model_id.to_string(),
            iterations: 0,
            residual: T::zero(),
            detail: None,
        }
    }

    /// V(x), multilinearly interpolated; out-of-domain queries clamp.
    #[inline]
    pub fn value(&self, x: &[T]) -> T {
        self.field.interpolate(x).value
    }

    /// V(x) plus the clamp flag for callers that care about domain exits.
    #[inline]
    pub fn value_sample(&self, x: &[T]) -> crate::grid::Sample<T> {
        self.field.interpolate(x)
    }

    /// The BRT is the sub-zero level set of V.
    #[inline]
    pub fn brt_contains(&self, x: &[T]) -> bool {
        self.value(x) <= T::zero()
    }

    /// argmax over u (min over d) of DV(x)·f(x,u,d); at flat spots the
    /// extremizer tie-breaks to channel midpoints.
    pub fn optimal_safe_control(&self, model: &dyn DynamicsModel<T>, x: &[T]) -> SVec<T> {
        let g = self.field.gradient(x);
        model
            .hamiltonian_extrema(x, &g.gradient, ControlSense::Maximize)
            .control
    }

    /// Share of nodes inside the BRT.
    pub fn brt_volume_fraction(&self) -> f64 {
        let inside = self
            .field
            .values()
            .iter()
            .filter(|v| **v <= T::zero())
            .count();
        inside as f64 / self.field.values().len() as f64
    }

    /// Estimated Lipschitz bound of V: max adjacent-node difference over
    /// spacing, across all dimensions.
    pub fn lipschitz_bound(&self) -> T {
        let grid = self.field.grid();
        let vals = self.field.values();
        let mut best = T::zero();
        let mut coords: IVec = std::iter::repeat(0usize).take(grid.dims()).collect();
        for flat in 0..grid.len() {
            grid.unravel(flat, &mut coords);
            for dim in 0..grid.dims() {
                let ax = grid.axis(dim);
                let up = if coords[dim] + 1 < ax.count {
                    flat + grid.stride(dim)
                } else if ax.periodic {
                    flat - coords[dim] * grid.stride(dim)
                } else {
                    continue;
                };
                let diff = (vals[up] - vals[flat]).abs() / ax.spacing();
                best = best.max(diff);
            }
        }
        best
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        let grid = self.field.grid();
        w.write_u32::<LittleEndian>(grid.dims() as u32)?;
        for ax in grid.axes() {
            w.write_f64::<LittleEndian>(ax.min.as_f64())?;
            w.write_f64::<LittleEndian>(ax.max.as_f64())?;
            w.write_u64::<LittleEndian>(ax.count as u64)?;
            w.write_u8(ax.periodic as u8)?;
        }
        let id = self.model_id.as_bytes();
        w.write_u32::<LittleEndian>(id.len() as u32)?;
        w.write_all(id)?;
        for v in self.field.values() {
            w.write_f64::<LittleEndian>(v.as_f64())?;
        }
        w.write_f64::<LittleEndian>(self.residual.as_f64())?;
        w.write_u64::<LittleEndian>(self.iterations)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(FormatError::BadVersion(version));
        }
        let n = r.read_u32::<LittleEndian>()? as usize;
        let mut axes = Vec::with_capacity(n);
        for _ in 0..n {
            let min = r.read_f64::<LittleEndian>()?;
            let max = r.read_f64::<LittleEndian>()?;
            let count = r.read_u64::<LittleEndian>()? as usize;
            let periodic = r.read_u8()? != 0;
            axes.push(crate::grid::Axis {
                min: T::of(min),
                max: T::of(max),
                count,
                periodic,
            });
        }
        let grid = Grid::new(axes)?;
        let id_len = r.read_u32::<LittleEndian>()? as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id)?;
        let model_id = String::from_utf8_lossy(&id).into_owned();
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            values.push(T::of(r.read_f64::<LittleEndian>()?));
        }
        let residual = T::of(r.read_f64::<LittleEndian>()?);
        let iterations = r.read_u64::<LittleEndian>()?;
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(FormatError::TrailingBytes);
        }
        Ok(ValueField {
            field: ScalarField::new(grid, values)?,
            model_id,
            iterations,
            residual,
            detail: None,
        })
    }
}

/// Sample the terminal condition V(x, T) = l(x) on the grid; this is the
/// solver's initial iterate.
pub fn terminal_condition<T: Real>(
    failure: &dyn FailureSet<T>,
    grid: &Grid<T>,
) -> Result<ScalarField<T>, GridError> {
    ScalarField::from_fn(grid.clone(), |x| failure.l(x))
}

struct NodeTables<T> {
    /// Node states, interleaved [node * n + dim].
    states: Vec<T>,
    /// Per-node dissipation bounds, same layout.
    alphas: Vec<T>,
}

fn build_tables<T: Real>(model: &dyn DynamicsModel<T>, grid: &Grid<T>) -> NodeTables<T> {
    let n = grid.dims();
    let mut states = vec![T::zero(); grid.len() * n];
    let mut alphas = vec![T::zero(); grid.len() * n];
    states
        .par_chunks_mut(n)
        .zip(alphas.par_chunks_mut(n))
        .enumerate()
        .for_each(|(flat, (xs, al))| {
            let mut coords: IVec = std::iter::repeat(0usize).take(n).collect();
            grid.unravel(flat, &mut coords);
            for (i, c) in coords.iter().enumerate() {
                xs[i] = grid.axis(i).node(*c);
            }
            model.speed_bounds(xs, al);
        });
    NodeTables { states, alphas }
}

/// Solve the safety variational inequality to convergence.
pub fn solve<T: Real>(
    model: &dyn DynamicsModel<T>,
    failure: &dyn FailureSet<T>,
    grid: &Grid<T>,
    params: &SolverParams<T>,
) -> Result<ValueField<T>, SolveError> {
    if model.state_dim() != grid.dims() {
        return Err(SolveError::DimensionMismatch {
            model: model.state_dim(),
            grid: grid.dims(),
        });
    }
    if !(params.cfl > T::zero() && params.cfl <= T::one()) {
        return Err(SolveError::BadParams(format!(
            "CFL {} outside (0, 1]",
            params.cfl
        )));
    }
    if !(params.tolerance > T::zero()) {
        return Err(SolveError::BadParams("tolerance must be positive".into()));
    }

    let n = grid.dims();
    let l_field = terminal_condition(failure, grid)?;
    let l = l_field.values().to_vec();
    let tables = build_tables(model, grid);

    let spacing: SVec<T> = (0..n).map(|i| grid.axis(i).spacing()).collect();
    let worst_rate = tables
        .alphas
        .par_chunks(n)
        .map(|al| {
            let mut s = T::zero();
            for i in 0..n {
                s = s + al[i] / spacing[i];
            }
            s
        })
        .reduce(T::zero, T::max);
    let dt = if worst_rate > T::zero() {
        params.cfl / worst_rate
    } else {
        T::one()
    };
    let alpha_max: SVec<T> = (0..n)
        .map(|i| {
            tables
                .alphas
                .par_chunks(n)
                .map(|al| al[i])
                .reduce(T::zero, T::max)
        })
        .collect();

    let mut v_old = l.clone();
    let mut v_new = vec![T::zero(); l.len()];
    let mut history: Vec<T> = Vec::new();
    let mut monotone_violations = 0u64;
    let mut l_violations = 0u64;

    for iter in 0..params.max_iterations {
        let (residual, mono_bad, l_bad) = {
            let v_in = &v_old;
            let l_ref = &l;
            let tab = &tables;
            let sp = &spacing;
            v_new
                .par_iter_mut()
                .enumerate()
                .map(|(flat, out)| {
                    let mut coords: IVec = std::iter::repeat(0usize).take(n).collect();
                    grid.unravel(flat, &mut coords);
                    let here = v_in[flat];
                    let mut p_avg: SVec<T> = std::iter::repeat(T::zero()).take(n).collect();
                    let mut dissipation = T::zero();
                    let al = &tab.alphas[flat * n..flat * n + n];
                    for dim in 0..n {
                        let ax = grid.axis(dim);
                        let stride = grid.stride(dim);
                        let c = coords[dim];
                        let (p_minus, p_plus) = if ax.periodic {
                            let up = if c + 1 >= ax.count {
                                flat - c * stride
                            } else {
                                flat + stride
                            };
                            let down = if c == 0 {
                                flat + (ax.count - 1) * stride
                            } else {
                                flat - stride
                            };
                            (
                                (here - v_in[down]) / sp[dim],
                                (v_in[up] - here) / sp[dim],
                            )
                        } else if c == 0 {
                            // Linear extrapolation: the ghost difference
                            // copies the interior one.
                            let p = (v_in[flat + stride] - here) / sp[dim];
                            (p, p)
                        } else if c + 1 >= ax.count {
                            let p = (here - v_in[flat - stride]) / sp[dim];
                            (p, p)
                        } else {
                            (
                                (here - v_in[flat - stride]) / sp[dim],
                                (v_in[flat + stride] - here) / sp[dim],
                            )
                        };
                        p_avg[dim] = (p_minus + p_plus) * T::of(0.5);
                        dissipation = dissipation + al[dim] * (p_plus - p_minus) * T::of(0.5);
                    }
                    let x = &tab.states[flat * n..flat * n + n];
                    let h = model
                        .hamiltonian_extrema(x, &p_avg, ControlSense::Maximize)
                        .value;
                    // The dissipation enters with + here: the update runs
                    // forward in fictitious time s = T - t, so the monotone
                    // stencil needs +alpha*(p+ - p-)/2 (a diffusion term;
                    // the subtracted variant is anti-diffusive and blows
                    // up). Coefficient check: dV_new/dV_i = 1 - dt*sum_i
                    // alpha_i/dx_i >= 0 under CFL, neighbor coefficients
                    // alpha_i/(2dx_i) +- H_p/(2dx_i) >= 0 since alpha_i
                    // bounds |f_i| = |dH/dp_i|.
                    let updated = (here + dt * (h + dissipation)).min(l_ref[flat]).min(here);
                    *out = updated;
                    let mono = (updated > here) as u64;
                    let lb = (updated > l_ref[flat]) as u64;
                    (here - updated, mono, lb)
                })
                .reduce(
                    || (T::zero(), 0u64, 0u64),
                    |a, b| (a.0.max(b.0), a.1 + b.1, a.2 + b.2),
                )
        };
        monotone_violations += mono_bad;
        l_violations += l_bad;
        assert_eq!(mono_bad, 0, "monotone convergence violated");
        assert_eq!(l_bad, 0, "V <= l violated");
        assert!(residual.is_finite(), "non-finite sweep residual");
        history.push(residual);
        std::mem::swap(&mut v_old, &mut v_new);
        if residual < params.tolerance {
            let field = ScalarField::new(grid.clone(), v_old)?;
            return Ok(ValueField {
                field,
                model_id: model.id().to_string(),
                iterations: (iter + 1) as u64,
                residual,
                detail: Some(SolveDetail {
                    dt_pde: dt,
                    alpha_max,
                    residual_history: history,
                    monotone_violations,
                    l_violations,
                }),
            });
        }
    }
    Err(SolveError::NonConvergence {
        iterations: params.max_iterations,
        last_residual: history.last().map(|r| r.as_f64()).unwrap_or(f64::NAN),
        tolerance: params.tolerance.as_f64(),
        residual_history: history.iter().map(|r| r.as_f64()).collect(),
    })
}
