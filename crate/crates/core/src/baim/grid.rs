use serde::{Deserialize, Serialize};

use super::BaimError;
use crate::exec::Exec;
use crate::math::Vec3;
use crate::mesh::PeriodicSpec;
use crate::sparse::{OperatorKind, SparseOperator};

/// Largest supported projection order.
pub const MAX_ORDER: usize = 7;

/// Uniform Cartesian grid. On periodic axes it spans exactly one period
/// (`dims·spacing = L`, no duplicated endpoint); on open axes it covers the
/// point cloud, `(dims − 1)·spacing ≥ D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: Vec3,
    pub periodic: [bool; 3],
}

impl Grid {
    pub fn n_points(&self) -> usize {
        self.dims.iter().product()
    }

    /// Number of grid cells, counting the wrap-around cell on periodic axes.
    pub fn n_boxes(&self) -> usize {
        (0..3)
            .map(|a| {
                if self.periodic[a] {
                    self.dims[a]
                } else {
                    self.dims[a].saturating_sub(1).max(1)
                }
            })
            .product()
    }

    #[inline]
    pub fn index(&self, i: [usize; 3]) -> usize {
        (i[2] * self.dims[1] + i[1]) * self.dims[0] + i[0]
    }

    pub fn point(&self, i: [usize; 3]) -> Vec3 {
        std::array::from_fn(|a| self.origin[a] + i[a] as f64 * self.spacing[a])
    }

    /// Dimensions of the transform domain: one period on periodic axes,
    /// doubled for linear convolution on open axes.
    pub fn transform_dims(&self) -> [usize; 3] {
        std::array::from_fn(|a| {
            if self.periodic[a] || self.dims[a] == 1 {
                self.dims[a]
            } else {
                2 * self.dims[a]
            }
        })
    }

    /// Stencil length along `axis` for interpolation order `order`.
    pub fn stencil_len(&self, axis: usize, order: usize) -> usize {
        if self.periodic[axis] {
            order + 1
        } else {
            (order + 1).min(self.dims[axis])
        }
    }
}

/// Rounds `n` up to the next `2^a 3^b 5^c`.
pub fn fft_friendly(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

fn extent(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

/// Grid with explicitly chosen point counts.
pub fn grid_with_dims(
    points: &[Vec3],
    spec: &PeriodicSpec,
    dims: [usize; 3],
) -> Result<Grid, BaimError> {
    if points.is_empty() {
        return Err(BaimError::Grid("no source points".into()));
    }
    let (lo, hi) = extent(points);
    let mut spacing = [0.0; 3];
    for a in 0..3 {
        if dims[a] == 0 {
            return Err(BaimError::Grid(format!("axis {a} has zero grid points")));
        }
        if spec.periodic[a] {
            spacing[a] = spec.periods[a] / dims[a] as f64;
        } else {
            let d = hi[a] - lo[a];
            if dims[a] == 1 {
                if d > 0.0 {
                    return Err(BaimError::Grid(format!(
                        "axis {a}: one plane cannot cover extent {d:e}"
                    )));
                }
                spacing[a] = 1.0;
            } else {
                if !(d > 0.0) {
                    return Err(BaimError::Grid(format!(
                        "axis {a}: zero extent with {} requested planes",
                        dims[a]
                    )));
                }
                spacing[a] = d / (dims[a] - 1) as f64;
            }
        }
    }
    Ok(Grid {
        dims,
        spacing,
        origin: lo,
        periodic: spec.periodic,
    })
}

/// Grid whose cell count is close to `points.len() / points_per_box`, with
/// FFT-friendly point counts on periodic axes. The spacing is refined until
/// `rer_scale` spacings fit inside half the shortest period. Open axes get
/// `(order + 1)/2` extra planes on each side so that stencils near the hull
/// stay centred.
pub fn build_grid(
    points: &[Vec3],
    spec: &PeriodicSpec,
    points_per_box: f64,
    order: usize,
    rer_scale: f64,
) -> Result<Grid, BaimError> {
    if !(points_per_box > 0.0) {
        return Err(BaimError::Grid("points_per_box must be positive".into()));
    }
    if points.is_empty() {
        return Err(BaimError::Grid("no source points".into()));
    }
    let (lo, hi) = extent(points);
    let len: Vec3 = std::array::from_fn(|a| {
        if spec.periodic[a] {
            spec.periods[a]
        } else {
            hi[a] - lo[a]
        }
    });
    let active: Vec<usize> = (0..3).filter(|&a| len[a] > 0.0).collect();
    let volume: f64 = active.iter().map(|&a| len[a]).product();
    let boxes = (points.len() as f64 / points_per_box).max(1.0);
    let mut h = (volume / boxes).powf(1.0 / active.len().max(1) as f64);
    let half_period = (0..3)
        .filter(|&a| spec.periodic[a])
        .map(|a| 0.5 * spec.periods[a])
        .fold(f64::INFINITY, f64::min);
    let margin = (order + 1) / 2;
    for _ in 0..64 {
        let mut grid = Grid {
            dims: [1; 3],
            spacing: [1.0; 3],
            origin: lo,
            periodic: spec.periodic,
        };
        for a in 0..3 {
            if spec.periodic[a] {
                let n = fft_friendly(((len[a] / h).round() as usize).max(order + 1));
                grid.dims[a] = n;
                grid.spacing[a] = len[a] / n as f64;
            } else if len[a] > 0.0 {
                let inner = ((len[a] / h).round() as usize + 1).max(2);
                let n = fft_friendly(inner + 2 * margin);
                grid.dims[a] = n;
                grid.spacing[a] = len[a] / (inner - 1) as f64;
                grid.origin[a] = lo[a] - ((n - inner) / 2) as f64 * grid.spacing[a];
            }
        }
        let hmax = (0..3)
            .filter(|&a| grid.dims[a] > 1)
            .map(|a| grid.spacing[a])
            .fold(0.0, f64::max);
        if rer_scale * hmax < half_period {
            return Ok(grid);
        }
        h *= 0.9;
    }
    Err(BaimError::Grid(format!(
        "no grid fits rer_scale {rer_scale} inside the period"
    )))
}

/// Per-point interpolation stencil: unwrapped start index and 1D weights on
/// each axis.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub start: [i64; 3],
    pub len: [usize; 3],
    pub w: [[f64; MAX_ORDER + 1]; 3],
}

fn lagrange_weights(t: f64, start: i64, len: usize, out: &mut [f64; MAX_ORDER + 1]) {
    for j in 0..len {
        let mut w = 1.0;
        for m in 0..len {
            if m != j {
                w *= (t - (start + m as i64) as f64) / (j as f64 - m as f64);
            }
        }
        out[j] = w;
    }
}

/// Lagrange stencils of order `order` (trilinear for 1) for every point.
pub fn stencils(points: &[Vec3], grid: &Grid, order: usize) -> Result<Vec<Stencil>, BaimError> {
    if order == 0 || order > MAX_ORDER {
        return Err(BaimError::Grid(format!("order must be in 1..={MAX_ORDER}")));
    }
    for a in 0..3 {
        if grid.periodic[a] && grid.dims[a] < order + 1 {
            return Err(BaimError::Grid(format!(
                "axis {a}: {} grid points are too few for order {order}",
                grid.dims[a]
            )));
        }
    }
    let mut out = Vec::with_capacity(points.len());
    for (n, p) in points.iter().enumerate() {
        let mut s = Stencil {
            start: [0; 3],
            len: [1; 3],
            w: [[0.0; MAX_ORDER + 1]; 3],
        };
        for a in 0..3 {
            let len = grid.stencil_len(a, order);
            let nd = grid.dims[a];
            let mut t = (p[a] - grid.origin[a]) / grid.spacing[a];
            if grid.periodic[a] {
                t = t.rem_euclid(nd as f64);
            } else {
                let slack = 1e-9 * nd as f64;
                if t < -slack || t > (nd - 1) as f64 + slack {
                    return Err(BaimError::OutsideHull { node: n, axis: a });
                }
                t = t.clamp(0.0, (nd - 1) as f64);
            }
            let mut start = (t - (len as f64 - 2.0) / 2.0).floor() as i64;
            if !grid.periodic[a] {
                start = start.clamp(0, (nd - len) as i64);
            }
            s.start[a] = start;
            s.len[a] = len;
            lagrange_weights(t, start, len, &mut s.w[a]);
        }
        out.push(s);
    }
    Ok(out)
}

/// Interpolation operator (points × grid points); its transpose projects
/// point charges onto the grid.
pub fn build_projection(
    points: &[Vec3],
    grid: &Grid,
    order: usize,
    exec: Exec,
) -> Result<SparseOperator, BaimError> {
    let st = stencils(points, grid, order)?;
    Ok(projection_from_stencils(&st, grid, exec))
}

pub(crate) fn projection_from_stencils(st: &[Stencil], grid: &Grid, exec: Exec) -> SparseOperator {
    let rows: Vec<Vec<(usize, usize, f64)>> = exec.map_collect(st.len(), |n| {
        let s = &st[n];
        let mut row = Vec::with_capacity(s.len.iter().product());
        let wrap = |a: usize, i: i64| i.rem_euclid(grid.dims[a] as i64) as usize;
        for c in 0..s.len[2] {
            for b in 0..s.len[1] {
                for a in 0..s.len[0] {
                    let w = s.w[0][a] * s.w[1][b] * s.w[2][c];
                    if w == 0.0 {
                        continue;
                    }
                    let idx = grid.index([
                        wrap(0, s.start[0] + a as i64),
                        wrap(1, s.start[1] + b as i64),
                        wrap(2, s.start[2] + c as i64),
                    ]);
                    row.push((n, idx, w));
                }
            }
        }
        row
    });
    SparseOperator::from_triplets(
        OperatorKind::Projection,
        st.len(),
        grid.n_points(),
        rows.into_iter().flatten().collect(),
    )
}
