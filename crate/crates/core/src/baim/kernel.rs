use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::grid::Grid;
use super::BaimError;
use crate::exec::Exec;
use crate::math::Vec3;
use crate::pgf::Pgf;

/// Three-dimensional complex FFT on a row-major `[z][y][x]` buffer, applied
/// as 1D passes along each axis.
#[derive(Clone)]
pub struct Fft3 {
    dims: [usize; 3],
    fwd: [Arc<dyn Fft<f64>>; 3],
    inv: [Arc<dyn Fft<f64>>; 3],
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("dims", &self.dims).finish()
    }
}

impl Fft3 {
    pub fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = std::array::from_fn(|a| planner.plan_fft_forward(dims[a]));
        let inv = std::array::from_fn(|a| planner.plan_fft_inverse(dims[a]));
        Fft3 { dims, fwd, inv }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, buf: &mut [Complex<f64>], exec: Exec) {
        self.run(buf, &self.fwd, exec);
    }

    /// Unnormalised inverse transform.
    pub fn inverse(&self, buf: &mut [Complex<f64>], exec: Exec) {
        self.run(buf, &self.inv, exec);
    }

    fn run(&self, buf: &mut [Complex<f64>], plans: &[Arc<dyn Fft<f64>>; 3], exec: Exec) {
        let [nx, ny, nz] = self.dims;
        if nx > 1 {
            let plan = &plans[0];
            exec.for_each_chunk_mut(buf, nx * ny.max(1), |_, slab| {
                let mut scratch = vec![Complex::default(); plan.get_inplace_scratch_len()];
                plan.process_with_scratch(slab, &mut scratch);
            });
        }
        if ny > 1 {
            let plan = &plans[1];
            exec.for_each_chunk_mut(buf, nx * ny, |_, slab| {
                let mut line = vec![Complex::default(); ny * nx];
                // transpose the slab so that y lines are contiguous
                for j in 0..ny {
                    for i in 0..nx {
                        line[i * ny + j] = slab[j * nx + i];
                    }
                }
                let mut scratch = vec![Complex::default(); plan.get_inplace_scratch_len()];
                plan.process_with_scratch(&mut line, &mut scratch);
                for j in 0..ny {
                    for i in 0..nx {
                        slab[j * nx + i] = line[i * ny + j];
                    }
                }
            });
        }
        if nz > 1 {
            let plan = &plans[2];
            let plane = nx * ny;
            // gather z lines, transform, scatter back
            let src: &[Complex<f64>] = buf;
            let lines: Vec<Vec<Complex<f64>>> = exec.map_collect(plane, |p| {
                let mut line: Vec<Complex<f64>> = (0..nz).map(|k| src[k * plane + p]).collect();
                let mut scratch = vec![Complex::default(); plan.get_inplace_scratch_len()];
                plan.process_with_scratch(&mut line, &mut scratch);
                line
            });
            exec.for_each_chunk_mut(buf, plane, |k, slab| {
                for (p, v) in slab.iter_mut().enumerate() {
                    *v = lines[p][k];
                }
            });
        }
    }
}

/// Kernel samples on the transform domain of a grid, and their spectrum.
///
/// Index `(i, j, k)` of the transform domain holds the kernel at grid
/// displacement `(i, j, k)` reduced to `[−M/2, M/2)` per axis, where `M` is
/// the transform length; on open axes `M = 2N` so the circular convolution
/// equals the linear one on the `N` physical planes.
#[derive(Debug, Clone)]
pub struct KernelTable {
    pub dims: [usize; 3],
    pub samples: Vec<f64>,
    spectrum: Vec<Complex<f64>>,
    fft: Fft3,
}

/// Signed displacement represented by transform index `i` on an axis of
/// transform length `m`.
#[inline]
pub fn signed_offset(i: usize, m: usize) -> i64 {
    if 2 * i < m {
        i as i64
    } else {
        i as i64 - m as i64
    }
}

impl KernelTable {
    /// Tabulates `f(displacement)` on the transform domain of `grid`.
    pub fn tabulate(grid: &Grid, exec: Exec, f: impl Fn(Vec3, bool) -> f64 + Sync + Send) -> Self {
        let dims = grid.transform_dims();
        let [mx, my, _] = dims;
        let n: usize = dims.iter().product();
        let mut samples = vec![0.0; n];
        exec.fill(&mut samples, |idx| {
            let i = [idx % mx, (idx / mx) % my, idx / (mx * my)];
            let zero = i == [0, 0, 0];
            let d: Vec3 =
                std::array::from_fn(|a| signed_offset(i[a], dims[a]) as f64 * grid.spacing[a]);
            // the unused middle plane of a padded axis is never reached
            f(d, zero)
        });
        Self::from_samples(dims, samples, exec)
    }

    /// Periodic kernel of `pgf`, with the regularised self term at zero
    /// displacement.
    pub fn periodic(grid: &Grid, pgf: &Pgf, exec: Exec) -> Result<Self, BaimError> {
        let self_term = pgf.self_term();
        let table = Self::tabulate(grid, exec, |d, zero| {
            if zero {
                self_term
            } else {
                pgf.eval(d).unwrap_or(f64::NAN)
            }
        });
        if table.samples.iter().any(|v| !v.is_finite()) {
            return Err(BaimError::Grid(
                "kernel tabulation hit a lattice image of the origin".into(),
            ));
        }
        Ok(table)
    }

    pub fn from_samples(dims: [usize; 3], samples: Vec<f64>, exec: Exec) -> Self {
        let fft = Fft3::new(dims);
        let mut spectrum: Vec<Complex<f64>> =
            samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fft.forward(&mut spectrum, exec);
        KernelTable {
            dims,
            samples,
            spectrum,
            fft,
        }
    }

    #[inline]
    pub fn sample(&self, i: [usize; 3]) -> f64 {
        self.samples[(i[2] * self.dims[1] + i[1]) * self.dims[0] + i[0]]
    }

    /// Convolves grid charges (on the physical grid of `grid`) with the
    /// kernel and returns grid potentials.
    pub fn convolve(
        &self,
        grid: &Grid,
        charges: &[f64],
        exec: Exec,
    ) -> Result<Vec<f64>, BaimError> {
        if charges.len() != grid.n_points() {
            return Err(BaimError::DimensionMismatch {
                expected: grid.n_points(),
                got: charges.len(),
            });
        }
        if grid.transform_dims() != self.dims {
            return Err(BaimError::DimensionMismatch {
                expected: self.dims.iter().product(),
                got: grid.transform_dims().iter().product(),
            });
        }
        let [gx, gy, gz] = grid.dims;
        let [mx, my, _] = self.dims;
        let mut buf = vec![Complex::default(); self.fft.len()];
        for k in 0..gz {
            for j in 0..gy {
                let src = &charges[(k * gy + j) * gx..(k * gy + j + 1) * gx];
                let dst = &mut buf[(k * my + j) * mx..(k * my + j) * mx + gx];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = Complex::new(s, 0.0);
                }
            }
        }
        self.fft.forward(&mut buf, exec);
        let spec = &self.spectrum;
        exec.for_each_mut(&mut buf, |i, v| *v *= spec[i]);
        self.fft.inverse(&mut buf, exec);
        let scale = 1.0 / self.fft.len() as f64;
        let mut out = vec![0.0; grid.n_points()];
        exec.fill(&mut out, |idx| {
            let i = idx % gx;
            let j = (idx / gx) % gy;
            let k = idx / (gx * gy);
            buf[(k * my + j) * mx + i].re * scale
        });
        Ok(out)
    }
}
