//! Rectangular state-space grids with multilinear interpolation and
//! finite-difference gradients.
//!
//! Node storage is row-major with the last dimension fastest; this is also
//! the persistence order of the value-field file format.

use crate::scalar::Real;
use crate::{IVec, SVec};

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("axis {axis}: node count {count} is below the minimum of 3")]
    TooFewNodes { axis: usize, count: usize },
    #[error("axis {axis}: lower bound {min} is not below upper bound {max}")]
    BadExtent { axis: usize, min: f64, max: f64 },
    #[error("dimension mismatch: grid has {expect} dims, point has {got}")]
    DimensionMismatch { expect: usize, got: usize },
    #[error("coordinate {value} outside axis {axis} range [{min}, {max}]")]
    OutOfDomain {
        axis: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("field length {got} does not match grid node count {expect}")]
    LengthMismatch { expect: usize, got: usize },
    #[error("non-finite value at node {index}")]
    NonFinite { index: usize },
}

/// One grid dimension.
///
/// For a periodic axis the stored span covers exactly one period: nodes sit
/// at `min + i * spacing` with `spacing = (max - min) / count`, so `max`
/// itself is the wrap-around image of `min` and is not a stored node.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis<T> {
    pub min: T,
    pub max: T,
    pub count: usize,
    pub periodic: bool,
}

impl<T: Real> Axis<T> {
    pub fn new(min: T, max: T, count: usize) -> Self {
        Axis {
            min,
            max,
            count,
            periodic: false,
        }
    }

    pub fn periodic(min: T, max: T, count: usize) -> Self {
        Axis {
            min,
            max,
            count,
            periodic: true,
        }
    }

    #[inline]
    pub fn spacing(&self) -> T {
        let cells = if self.periodic {
            self.count
        } else {
            self.count - 1
        };
        (self.max - self.min) / T::from_usize(cells).unwrap()
    }

    #[inline]
    pub fn node(&self, i: usize) -> T {
        self.min + T::from_usize(i).unwrap() * self.spacing()
    }

    #[inline]
    pub fn period(&self) -> T {
        self.max - self.min
    }

    /// Wrap a coordinate into `[min, max)` for periodic axes; identity
    /// otherwise.
    #[inline]
    pub fn wrap(&self, x: T) -> T {
        if !self.periodic {
            return x;
        }
        let p = self.period();
        let mut r = (x - self.min) % p;
        if r < T::zero() {
            r = r + p;
        }
        self.min + r
    }
}

/// Location of a point within the grid: per-dimension cell index and the
/// fractional offset inside that cell.
///
/// Offsets lie in `[0, 1)` except exactly at a non-periodic upper boundary,
/// where the last cell is reused with offset 1.
#[derive(Debug, Clone)]
pub struct CellRef<T> {
    pub cell: IVec,
    pub frac: SVec<T>,
}

/// Interpolation result; `clamped` flags queries that fell outside the
/// domain in a non-periodic dimension and were pulled to the boundary.
#[derive(Debug, Clone, Copy)]
pub struct Sample<T> {
    pub value: T,
    pub clamped: bool,
}

#[derive(Debug, Clone)]
pub struct GradientSample<T> {
    pub gradient: SVec<T>,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    axes: Vec<Axis<T>>,
    strides: Vec<usize>,
    len: usize,
}

impl<T: Real> Grid<T> {
    pub fn new(axes: Vec<Axis<T>>) -> Result<Self, GridError> {
        for (i, ax) in axes.iter().enumerate() {
            if ax.count < 3 {
                return Err(GridError::TooFewNodes {
                    axis: i,
                    count: ax.count,
                });
            }
            if !(ax.min < ax.max) {
                return Err(GridError::BadExtent {
                    axis: i,
                    min: ax.min.as_f64(),
                    max: ax.max.as_f64(),
                });
            }
        }
        let n = axes.len();
        let mut strides = vec![0usize; n];
        let mut len = 1usize;
        for i in (0..n).rev() {
            strides[i] = len;
            len *= axes[i].count;
        }
        Ok(Grid { axes, strides, len })
    }

    #[inline]
    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn axes(&self) -> &[Axis<T>] {
        &self.axes
    }

    #[inline]
    pub fn axis(&self, i: usize) -> &Axis<T> {
        &self.axes[i]
    }

    #[inline]
    pub fn stride(&self, i: usize) -> usize {
        self.strides[i]
    }

    #[inline]
    pub fn flat_index(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.strides)
            .map(|(c, s)| c * s)
            .sum()
    }

    /// Decompose a flat node index into per-dimension coordinates.
    #[inline]
    pub fn unravel(&self, mut flat: usize, coords: &mut [usize]) {
        for i in 0..self.axes.len() {
            coords[i] = flat / self.strides[i];
            flat %= self.strides[i];
        }
    }

    /// State vector of the node at the given coordinates.
    pub fn node_state(&self, coords: &[usize]) -> SVec<T> {
        coords
            .iter()
            .zip(&self.axes)
            .map(|(&c, ax)| ax.node(c))
            .collect()
    }

    /// Index of the upper interpolation neighbor along one dimension,
    /// wrapping for periodic axes.
    #[inline]
    pub fn upper_neighbor(&self, dim: usize, cell: usize) -> usize {
        let ax = &self.axes[dim];
        if cell + 1 >= ax.count {
            debug_assert!(ax.periodic);
            0
        } else {
            cell + 1
        }
    }

    fn check_dims(&self, x: &[T]) -> Result<(), GridError> {
        if x.len() != self.axes.len() {
            return Err(GridError::DimensionMismatch {
                expect: self.axes.len(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Strict cell lookup: errors when the point is outside the extent of a
    /// non-periodic dimension. Periodic dimensions are wrapped first.
    pub fn locate(&self, x: &[T]) -> Result<CellRef<T>, GridError> {
        self.check_dims(x)?;
        for (i, (&xi, ax)) in x.iter().zip(&self.axes).enumerate() {
            if !ax.periodic && (xi < ax.min || xi > ax.max) {
                return Err(GridError::OutOfDomain {
                    axis: i,
                    value: xi.as_f64(),
                    min: ax.min.as_f64(),
                    max: ax.max.as_f64(),
                });
            }
        }
        Ok(self.locate_clamped(x).0)
    }

    /// Clamping cell lookup used on hot query paths; the flag reports
    /// whether any non-periodic coordinate had to be clamped.
    pub fn locate_clamped(&self, x: &[T]) -> (CellRef<T>, bool) {
        debug_assert_eq!(x.len(), self.axes.len());
        let mut cell = IVec::new();
        let mut frac = SVec::new();
        let mut clamped = false;
        for (&xi, ax) in x.iter().zip(&self.axes) {
            let dx = ax.spacing();
            if ax.periodic {
                let w = ax.wrap(xi);
                let u = (w - ax.min) / dx;
                let mut c = u.floor().to_usize().unwrap_or(0);
                if c >= ax.count {
                    // Rounding during wrap can land exactly on the excluded
                    // upper image of min.
                    c = 0;
                }
                let f = u - T::from_usize(c).unwrap();
                cell.push(c);
                frac.push(f.max(T::zero()).min(T::one()));
            } else {
                let mut w = xi;
                if w < ax.min {
                    w = ax.min;
                    clamped = true;
                } else if w > ax.max {
                    w = ax.max;
                    clamped = true;
                }
                let u = (w - ax.min) / dx;
                let mut c = u.floor().to_usize().unwrap_or(0);
                if c > ax.count - 2 {
                    c = ax.count - 2;
                }
                let f = u - T::from_usize(c).unwrap();
                cell.push(c);
                frac.push(f.max(T::zero()).min(T::one()));
            }
        }
        (CellRef { cell, frac }, clamped)
    }
}

/// A scalar sampled at every grid node.
#[derive(Debug, Clone)]
pub struct ScalarField<T> {
    grid: Grid<T>,
    values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn new(grid: Grid<T>, values: Vec<T>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch {
                expect: grid.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { index: i });
        }
        Ok(ScalarField { grid, values })
    }

    /// Sample a function at every node.
    pub fn from_fn(grid: Grid<T>, f: impl Fn(&[T]) -> T) -> Result<Self, GridError> {
        let n = grid.dims();
        let mut coords = vec![0usize; n];
        let mut values = Vec::with_capacity(grid.len());
        for flat in 0..grid.len() {
            grid.unravel(flat, &mut coords);
            let x = grid.node_state(&coords);
            values.push(f(&x));
        }
        ScalarField::new(grid, values)
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn value_at(&self, flat: usize) -> T {
        self.values[flat]
    }

    /// Multilinear interpolation over the 2^n nodes surrounding `x`.
    pub fn interpolate(&self, x: &[T]) -> Sample<T> {
        let (loc, clamped) = self.grid.locate_clamped(x);
        let n = self.grid.dims();
        let mut value = T::zero();
        for corner in 0..(1usize << n) {
            let mut w = T::one();
            let mut idx = 0usize;
            for i in 0..n {
                if (corner >> i) & 1 == 1 {
                    w = w * loc.frac[i];
                    idx += self.grid.upper_neighbor(i, loc.cell[i]) * self.grid.stride(i);
                } else {
                    w = w * (T::one() - loc.frac[i]);
                    idx += loc.cell[i] * self.grid.stride(i);
                }
            }
            if w != T::zero() {
                value = value + w * self.values[idx];
            }
        }
        Sample { value, clamped }
    }

    /// Central-difference gradient at a node, one-sided at non-periodic
    /// boundaries, wrapping across periodic ones.
    pub fn node_gradient(&self, coords: &[usize], dim: usize) -> T {
        let ax = self.grid.axis(dim);
        let dx = ax.spacing();
        let here = self.grid.flat_index(coords);
        let stride = self.grid.stride(dim);
        let c = coords[dim];
        if ax.periodic {
            let up = if c + 1 >= ax.count {
                here - c * stride
            } else {
                here + stride
            };
            let down = if c == 0 {
                here + (ax.count - 1) * stride
            } else {
                here - stride
            };
            (self.values[up] - self.values[down]) / (T::of(2.0) * dx)
        } else if c == 0 {
            (self.values[here + stride] - self.values[here]) / dx
        } else if c + 1 >= ax.count {
            (self.values[here] - self.values[here - stride]) / dx
        } else {
            (self.values[here + stride] - self.values[here - stride]) / (T::of(2.0) * dx)
        }
    }

    /// Gradient at an arbitrary point: node gradients of the surrounding
    /// cell corners, multilinearly interpolated.
    pub fn gradient(&self, x: &[T]) -> GradientSample<T> {
        let (loc, clamped) = self.grid.locate_clamped(x);
        let n = self.grid.dims();
        let mut gradient: SVec<T> = std::iter::repeat(T::zero()).take(n).collect();
        let mut coords = IVec::new();
        for corner in 0..(1usize << n) {
            let mut w = T::one();
            coords.clear();
            for i in 0..n {
                if (corner >> i) & 1 == 1 {
                    w = w * loc.frac[i];
                    coords.push(self.grid.upper_neighbor(i, loc.cell[i]));
                } else {
                    w = w * (T::one() - loc.frac[i]);
                    coords.push(loc.cell[i]);
                }
            }
            if w == T::zero() {
                continue;
            }
            for dim in 0..n {
                gradient[dim] = gradient[dim] + w * self.node_gradient(&coords, dim);
            }
        }
        GradientSample { gradient, clamped }
    }
}
