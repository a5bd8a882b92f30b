//! Structured tetrahedral meshes for tests, benchmarks and the CLI examples.
//!
//! Hexahedral cells are split into six tetrahedra around the cell diagonal
//! (Kuhn split), which is conforming across neighbouring cells. Curved shapes
//! are obtained by smoothly mapping a structured cube or square prism, so
//! boundary nodes lie exactly on the curved surface.

use crate::math::Vec3;
use crate::mesh::Mesh;

const KUHN: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Nodes of an `(nx+1) x (ny+1) x (nz+1)` lattice mapped through `map`, and
/// Kuhn tetrahedra of every cell.
fn lattice_mesh(
    cells: [usize; 3],
    map: impl Fn([f64; 3]) -> Vec3,
    region: impl Fn(Vec3) -> u32,
) -> Mesh {
    let [nx, ny, nz] = cells;
    let idx = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                let u = [
                    i as f64 / nx as f64,
                    j as f64 / ny as f64,
                    k as f64 / nz as f64,
                ];
                nodes.push(map(u));
            }
        }
    }
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    let mut regions = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for perm in KUHN {
                    let mut c = [i, j, k];
                    let mut t = [idx(c[0], c[1], c[2]); 4];
                    for (s, &ax) in perm.iter().enumerate() {
                        c[ax] += 1;
                        t[s + 1] = idx(c[0], c[1], c[2]);
                    }
                    let centroid = {
                        let mut m = [0.0; 3];
                        for &n in &t {
                            for a in 0..3 {
                                m[a] += nodes[n][a] / 4.0;
                            }
                        }
                        m
                    };
                    tets.push(t);
                    regions.push(region(centroid));
                }
            }
        }
    }
    Mesh::from_parts(nodes, tets, regions).expect("structured mesh is valid")
}

/// Axis-aligned box `origin + [0, size]` with `cells` hexahedra per axis.
pub fn box_mesh(cells: [usize; 3], size: [f64; 3], origin: Vec3) -> Mesh {
    lattice_mesh(
        cells,
        |u| {
            [
                origin[0] + u[0] * size[0],
                origin[1] + u[1] * size[1],
                origin[2] + u[2] * size[2],
            ]
        },
        |_| 0,
    )
}

/// Box mesh whose region tag is `1` in the half `x >= origin + size/2`.
pub fn two_region_box_mesh(cells: [usize; 3], size: [f64; 3], origin: Vec3) -> Mesh {
    let mid = origin[0] + 0.5 * size[0];
    lattice_mesh(
        cells,
        |u| {
            [
                origin[0] + u[0] * size[0],
                origin[1] + u[1] * size[1],
                origin[2] + u[2] * size[2],
            ]
        },
        |c| u32::from(c[0] >= mid),
    )
}

/// Ball of `radius` around `center`, from a cube with `2 n` cells per axis
/// mapped to the ball by `x ↦ x·√(1 − y²/2 − z²/2 + y²z²/3)` (and cyclic).
pub fn ball_mesh(n: usize, radius: f64, center: Vec3) -> Mesh {
    lattice_mesh(
        [2 * n; 3],
        |u| {
            let x = 2.0 * u[0] - 1.0;
            let y = 2.0 * u[1] - 1.0;
            let z = 2.0 * u[2] - 1.0;
            let (x2, y2, z2) = (x * x, y * y, z * z);
            let xs = x * (1.0 - y2 / 2.0 - z2 / 2.0 + y2 * z2 / 3.0).sqrt();
            let ys = y * (1.0 - z2 / 2.0 - x2 / 2.0 + z2 * x2 / 3.0).sqrt();
            let zs = z * (1.0 - x2 / 2.0 - y2 / 2.0 + x2 * y2 / 3.0).sqrt();
            [
                center[0] + radius * xs,
                center[1] + radius * ys,
                center[2] + radius * zs,
            ]
        },
        |_| 0,
    )
}

/// Circular cylinder of `radius` whose axis is coordinate `axis`, spanning
/// `[0, height]` along it and centred on the origin in the cross-section.
/// The cross-section has `2 n` cells per side, the axis `n_axis` cells.
pub fn cylinder_mesh(n: usize, n_axis: usize, radius: f64, height: f64, axis: usize) -> Mesh {
    let (a1, a2) = match axis {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    };
    let mut cells = [2 * n; 3];
    cells[axis] = n_axis;
    lattice_mesh(
        cells,
        |u| {
            let s = 2.0 * u[a1] - 1.0;
            let t = 2.0 * u[a2] - 1.0;
            let mut p = [0.0; 3];
            p[a1] = radius * s * (1.0 - t * t / 2.0).sqrt();
            p[a2] = radius * t * (1.0 - s * s / 2.0).sqrt();
            p[axis] = height * u[axis];
            p
        },
        |_| 0,
    )
}

/// Slanted bar: rows `x ∈ [offset·y/height, period + offset·y/height]`,
/// `y ∈ [0, height]`, `z ∈ [0, thickness]`. Its end faces are translates by
/// `period` along x and its x-extent is `period + offset`.
pub fn parallelogram_mesh(
    cells: [usize; 3],
    period: f64,
    height: f64,
    thickness: f64,
    offset: f64,
) -> Mesh {
    lattice_mesh(
        cells,
        |u| {
            [
                u[0] * period + offset * u[1],
                u[1] * height,
                u[2] * thickness,
            ]
        },
        |_| 0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::norm;

    #[test]
    fn ball_volume_converges() {
        let r = 1.0;
        let exact = 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
        let e4 = (ball_mesh(4, r, [0.0; 3]).total_volume() - exact).abs();
        let e8 = (ball_mesh(8, r, [0.0; 3]).total_volume() - exact).abs();
        assert!(e8 < e4 / 3.0, "{e4} {e8}");
        assert!(e8 / exact < 0.02);
    }

    #[test]
    fn ball_boundary_on_sphere() {
        let m = ball_mesh(3, 2.0, [1.0, 0.0, 0.0]);
        let max_r = m
            .nodes
            .iter()
            .map(|p| norm([p[0] - 1.0, p[1], p[2]]))
            .fold(0.0, f64::max);
        assert!((max_r - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cylinder_extent() {
        let m = cylinder_mesh(2, 3, 0.5, 2.0, 2);
        let (lo, hi) = Mesh::bounds_of(&m.nodes);
        assert!((hi[2] - lo[2] - 2.0).abs() < 1e-12);
        assert!((hi[0] - 0.5).abs() < 1e-12 && (lo[0] + 0.5).abs() < 1e-12);
    }
}
