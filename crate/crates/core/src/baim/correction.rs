use super::grid::{Grid, Stencil, MAX_ORDER};
use super::BaimError;
use crate::exec::Exec;
use crate::math::{norm, Vec3};
use crate::pgf::Pgf;
use crate::sparse::{OperatorKind, SparseOperator};

/// Near-field correction: for every observer `n` and source `k` whose
/// minimum-image distance is at most `r_er`, the exact `1/|d|` minus the
/// grid-mediated free-space response between their stencils.
#[derive(Debug, Clone)]
pub struct CorrectionSetup {
    pub r_er: f64,
    pub matrix: SparseOperator,
    /// Minimum-image displacement `r_n − r_k` for every stored entry, in the
    /// entry order of `matrix`.
    pub displacements: Vec<Vec3>,
}

impl CorrectionSetup {
    pub fn n_pairs(&self) -> usize {
        self.matrix.nnz()
    }

    /// Near sources of observer `n` with their minimum-image displacements.
    pub fn near_of(&self, n: usize) -> impl Iterator<Item = (usize, Vec3)> + '_ {
        let (cols, _) = self.matrix.row(n);
        cols.iter()
            .zip(&self.displacements[self.matrix.row_range(n)])
            .map(|(&c, &d)| (c, d))
    }
}

/// Uniform cell list with periodic wrap used to find near pairs.
struct CellList {
    n: [usize; 3],
    lo: Vec3,
    size: Vec3,
    periodic: [bool; 3],
    start: Vec<usize>,
    items: Vec<usize>,
}

impl CellList {
    fn new(points: &[Vec3], grid: &Grid, r: f64, pgf: &Pgf) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            let w = pgf.min_image(*p);
            for a in 0..3 {
                lo[a] = lo[a].min(w[a]);
                hi[a] = hi[a].max(w[a]);
            }
        }
        let mut n = [1usize; 3];
        let mut size = [1.0; 3];
        for a in 0..3 {
            let len = if grid.periodic[a] {
                lo[a] = -0.5 * grid.spacing[a] * grid.dims[a] as f64;
                grid.spacing[a] * grid.dims[a] as f64
            } else {
                hi[a] - lo[a]
            };
            n[a] = ((len / r).floor() as usize).clamp(1, 1 << 10);
            size[a] = if len > 0.0 { len / n[a] as f64 } else { 1.0 };
            if !grid.periodic[a] {
                // open axes: ensure the last point falls inside the last cell
                size[a] *= 1.0 + 1e-12;
            }
        }
        let cell_of = |p: Vec3| -> usize {
            let w = pgf.min_image(p);
            let c: [usize; 3] = std::array::from_fn(|a| {
                let t = ((w[a] - lo[a]) / size[a]).floor() as i64;
                if grid.periodic[a] {
                    t.rem_euclid(n[a] as i64) as usize
                } else {
                    t.clamp(0, n[a] as i64 - 1) as usize
                }
            });
            (c[2] * n[1] + c[1]) * n[0] + c[0]
        };
        let total = n[0] * n[1] * n[2];
        let cells: Vec<usize> = points.iter().map(|&p| cell_of(p)).collect();
        let mut count = vec![0usize; total + 1];
        for &c in &cells {
            count[c + 1] += 1;
        }
        for i in 0..total {
            count[i + 1] += count[i];
        }
        let start = count.clone();
        let mut fill = count;
        let mut items = vec![0; points.len()];
        for (i, &c) in cells.iter().enumerate() {
            items[fill[c]] = i;
            fill[c] += 1;
        }
        CellList {
            n,
            lo,
            size,
            periodic: grid.periodic,
            start,
            items,
        }
    }

    fn neighbours(&self, p: Vec3, pgf: &Pgf, out: &mut Vec<usize>) {
        out.clear();
        let w = pgf.min_image(p);
        let mut axis: [Vec<usize>; 3] = Default::default();
        for a in 0..3 {
            let c = ((w[a] - self.lo[a]) / self.size[a]).floor() as i64;
            let n = self.n[a] as i64;
            let mut v: Vec<usize> = (-1..=1)
                .filter_map(|d| {
                    let i = c + d;
                    if self.periodic[a] {
                        Some(i.rem_euclid(n) as usize)
                    } else if (0..n).contains(&i) {
                        Some(i as usize)
                    } else {
                        None
                    }
                })
                .collect();
            if !self.periodic[a] && v.is_empty() {
                v.push(c.clamp(0, n - 1) as usize);
            }
            v.sort_unstable();
            v.dedup();
            axis[a] = v;
        }
        for &k in &axis[2] {
            for &j in &axis[1] {
                for &i in &axis[0] {
                    let cell = (k * self.n[1] + j) * self.n[0] + i;
                    out.extend_from_slice(&self.items[self.start[cell]..self.start[cell + 1]]);
                }
            }
        }
    }
}

/// One-dimensional cross-correlation `c(e) = Σ_{a−b=e} u_a v_b` for
/// `e ∈ [−P, P]` stored at `e + P`.
#[inline]
fn correlate(u: &[f64], v: &[f64], p: usize, out: &mut [f64; 2 * MAX_ORDER + 1]) {
    out[..2 * p + 1].fill(0.0);
    for (a, &ua) in u.iter().enumerate() {
        for (b, &vb) in v.iter().enumerate() {
            out[(a + p) - b] += ua * vb;
        }
    }
}

/// Free-space `1/|δΔ|` on unwrapped grid offsets `δ ∈ [−R, R]` (zero at the
/// origin).
struct LocalKernel {
    reach: [usize; 3],
    side: [usize; 3],
    samples: Vec<f64>,
}

impl LocalKernel {
    fn new(grid: &Grid, reach: [usize; 3]) -> Self {
        let side = reach.map(|r| 2 * r + 1);
        let mut samples = vec![0.0; side[0] * side[1] * side[2]];
        for k in 0..side[2] {
            for j in 0..side[1] {
                for i in 0..side[0] {
                    let o = [i, j, k];
                    let d: Vec3 =
                        std::array::from_fn(|a| (o[a] as f64 - reach[a] as f64) * grid.spacing[a]);
                    let r = norm(d);
                    samples[(k * side[1] + j) * side[0] + i] = if r > 0.0 { 1.0 / r } else { 0.0 };
                }
            }
        }
        LocalKernel {
            reach,
            side,
            samples,
        }
    }
}

/// Builds the correction matrix.
pub fn build_correction(
    points: &[Vec3],
    grid: &Grid,
    st: &[Stencil],
    pgf: &Pgf,
    r_er: f64,
    exec: Exec,
) -> Result<CorrectionSetup, BaimError> {
    for a in 0..3 {
        if grid.periodic[a] {
            let half = 0.5 * grid.spacing[a] * grid.dims[a] as f64;
            if r_er >= half {
                return Err(BaimError::CorrectionRadius { r_er, limit: half });
            }
        }
    }
    let cells = CellList::new(points, grid, r_er, pgf);
    let p: [usize; 3] = std::array::from_fn(|a| st.iter().map(|s| s.len[a]).max().unwrap_or(1) - 1);
    let reach: [usize; 3] = std::array::from_fn(|a| {
        if p[a] == 0 {
            0
        } else {
            (r_er / grid.spacing[a]).ceil() as usize + 2 * p[a] + 2
        }
    });
    let k0 = LocalKernel::new(grid, reach);
    let td = k0.side;
    // continuous grid coordinate, wrapped into one period on periodic axes
    let coord = |x: Vec3, a: usize| {
        let t = (x[a] - grid.origin[a]) / grid.spacing[a];
        if grid.periodic[a] {
            t.rem_euclid(grid.dims[a] as f64)
        } else {
            t
        }
    };
    let rows: Vec<Vec<(usize, f64, Vec3)>> = exec.map_collect(points.len(), |n| {
        let mut near = Vec::new();
        cells.neighbours(points[n], pgf, &mut near);
        near.sort_unstable();
        let sn = &st[n];
        let mut row = Vec::new();
        let mut c: [[f64; 2 * MAX_ORDER + 1]; 3] = [[0.0; 2 * MAX_ORDER + 1]; 3];
        let mut idx: [[usize; 2 * MAX_ORDER + 1]; 3] = [[0; 2 * MAX_ORDER + 1]; 3];
        for &k in &near {
            let d = pgf.min_image([
                points[n][0] - points[k][0],
                points[n][1] - points[k][1],
                points[n][2] - points[k][2],
            ]);
            let dist = norm(d);
            if dist > r_er {
                continue;
            }
            let sk = &st[k];
            for a in 0..3 {
                correlate(
                    &sn.w[a][..sn.len[a]],
                    &sk.w[a][..sk.len[a]],
                    p[a],
                    &mut c[a],
                );
                let mut base = sn.start[a] - sk.start[a];
                if grid.periodic[a] && p[a] > 0 {
                    let raw = coord(points[n], a) - coord(points[k], a);
                    let shift =
                        ((raw - d[a] / grid.spacing[a]) / grid.dims[a] as f64).round() as i64;
                    base -= shift * grid.dims[a] as i64;
                }
                for e in 0..=2 * p[a] {
                    let off = base + e as i64 - p[a] as i64 + k0.reach[a] as i64;
                    idx[a][e] = off as usize;
                }
            }
            let mut grid_term = 0.0;
            for ez in 0..=2 * p[2] {
                let cz = c[2][ez];
                if cz == 0.0 {
                    continue;
                }
                for ey in 0..=2 * p[1] {
                    let cyz = c[1][ey] * cz;
                    if cyz == 0.0 {
                        continue;
                    }
                    let rowbase = (idx[2][ez] * td[1] + idx[1][ey]) * td[0];
                    let mut s = 0.0;
                    for ex in 0..=2 * p[0] {
                        s += c[0][ex] * k0.samples[rowbase + idx[0][ex]];
                    }
                    grid_term += cyz * s;
                }
            }
            let exact = if k == n { 0.0 } else { 1.0 / dist };
            row.push((k, exact - grid_term, d));
        }
        row
    });
    let mut trip = Vec::new();
    let mut displacements = Vec::new();
    for (n, row) in rows.into_iter().enumerate() {
        for (k, w, d) in row {
            trip.push((n, k, w));
            displacements.push(d);
        }
    }
    let matrix =
        SparseOperator::from_triplets(OperatorKind::Correction, points.len(), points.len(), trip);
    Ok(CorrectionSetup {
        r_er,
        matrix,
        displacements,
    })
}
