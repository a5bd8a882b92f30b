//! Periodicity-aware sparse operators on linear tetrahedra.
//!
//! Every operator is assembled element by element over all `N` mesh nodes and
//! then folded onto the `N′` parents: a row belonging to a child is added to
//! its parent's row, and a column belonging to a child is remapped to its
//! parent's column, duplicates summed. For a node on a periodic face this
//! gathers the elements from both sides of the cell, which is exactly the
//! generalized neighbourhood needed by the exchange, charge and gradient
//! stencils. Without periodic pairs the fold is the identity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::math::{add, cross, dot, norm, scale, sub, tet_basis_gradients, Vec3};
use crate::mesh::Mesh;
use crate::sparse::{OperatorKind, SparseOperator};

#[derive(Debug, Error)]
pub enum FemError {
    #[error("region tag {0} has no material entry")]
    MissingMaterial(u32),
    #[error("node {0} has zero lumped volume")]
    ZeroVolume(usize),
    #[error("material for region {tag}: {msg}")]
    BadMaterial { tag: u32, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Anisotropy {
    None,
    /// Energy density `-K_u (m·u)²`.
    Uniaxial {
        ku: f64,
        axis: Vec3,
    },
    /// First-order cubic, energy density `K_1 (m₁²m₂² + m₂²m₃² + m₃²m₁²)` in
    /// the crystal frame spanned by `axes`.
    Cubic {
        k1: f64,
        axes: [Vec3; 3],
    },
}

impl Default for Anisotropy {
    fn default() -> Self {
        Anisotropy::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// Saturation magnetisation, emu/cm³.
    pub ms: f64,
    /// Exchange stiffness, erg/cm.
    pub a_ex: f64,
    #[serde(default)]
    pub anisotropy: Anisotropy,
    /// Gilbert damping.
    #[serde(default)]
    pub alpha: f64,
}

impl Material {
    pub fn validate(&self, tag: u32) -> Result<(), FemError> {
        let bad = |msg: String| FemError::BadMaterial { tag, msg };
        if !(self.ms > 0.0) {
            return Err(bad(format!("Ms must be positive, got {}", self.ms)));
        }
        if !(self.a_ex >= 0.0) || !(self.alpha >= 0.0) {
            return Err(bad("A_ex and alpha must be non-negative".into()));
        }
        match self.anisotropy {
            Anisotropy::None => {}
            Anisotropy::Uniaxial { axis, .. } => {
                if (norm(axis) - 1.0).abs() > 1e-8 {
                    return Err(bad("uniaxial axis must be unit length".into()));
                }
            }
            Anisotropy::Cubic { axes, .. } => {
                for i in 0..3 {
                    if (norm(axes[i]) - 1.0).abs() > 1e-8 {
                        return Err(bad(format!("cubic axis {i} must be unit length")));
                    }
                    for j in i + 1..3 {
                        if dot(axes[i], axes[j]).abs() > 1e-8 {
                            return Err(bad(format!("cubic axes {i} and {j} are not orthogonal")));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Materials keyed by region tag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MaterialTable(pub BTreeMap<u32, Material>);

impl MaterialTable {
    pub fn single(m: Material) -> Self {
        MaterialTable(BTreeMap::from([(0, m)]))
    }

    pub fn get(&self, tag: u32) -> Result<&Material, FemError> {
        self.0.get(&tag).ok_or(FemError::MissingMaterial(tag))
    }

    pub fn validate(&self) -> Result<(), FemError> {
        self.0.iter().try_for_each(|(&t, m)| m.validate(t))
    }
}

/// Element geometry: basis gradients and volume per tetrahedron.
pub struct ElementGeometry {
    pub grads: Vec<[Vec3; 4]>,
    pub volumes: Vec<f64>,
}

impl ElementGeometry {
    pub fn new(mesh: &Mesh, exec: Exec) -> Self {
        let g: Vec<([Vec3; 4], f64)> = exec.map_collect(mesh.tets.len(), |e| {
            let t = mesh.tets[e];
            tet_basis_gradients(&[
                mesh.nodes[t[0]],
                mesh.nodes[t[1]],
                mesh.nodes[t[2]],
                mesh.nodes[t[3]],
            ])
        });
        let (grads, volumes) = g.into_iter().unzip();
        ElementGeometry { grads, volumes }
    }
}

/// Lumped nodal volume `V_n = Σ V_e / 4`, accumulated over each periodic class.
pub fn lumped_volumes(mesh: &Mesh) -> Result<Vec<f64>, FemError> {
    let lca = mesh.lca();
    let mut v = vec![0.0; mesh.n_parents()];
    for (e, t) in mesh.tets.iter().enumerate() {
        let q = mesh.tet_volume(e) / 4.0;
        for &n in t {
            v[lca[n]] += q;
        }
    }
    if let Some(n) = v.iter().position(|&x| !(x > 0.0)) {
        return Err(FemError::ZeroVolume(n));
    }
    Ok(v)
}

/// Potential at each parent node of its own unit lumped charge, spread in
/// proportion to `φ_n` over the node's boundary triangles for nodes on the
/// magnetic surface and over its tetrahedra otherwise. Boundary faces are
/// those used by a single element after folding, so periodic faces do not
/// count.
pub fn self_potential_coefficients(mesh: &Mesh) -> Vec<f64> {
    let lca = mesh.lca();
    let np = mesh.n_parents();
    let mut faces: BTreeMap<[usize; 3], (usize, usize, usize)> = BTreeMap::new();
    for (e, t) in mesh.tets.iter().enumerate() {
        for f in 0..4 {
            let mut key = [
                lca[t[(f + 1) % 4]],
                lca[t[(f + 2) % 4]],
                lca[t[(f + 3) % 4]],
            ];
            key.sort_unstable();
            faces.entry(key).or_insert((0, e, f)).0 += 1;
        }
    }
    let (mut surf_num, mut surf_den) = (vec![0.0; np], vec![0.0; np]);
    for &(count, e, f) in faces.values() {
        if count != 1 {
            continue;
        }
        let t = mesh.tets[e];
        let v = [1, 2, 3].map(|i| t[(f + i) % 4]);
        let area = 0.5
            * norm(cross(
                sub(mesh.nodes[v[1]], mesh.nodes[v[0]]),
                sub(mesh.nodes[v[2]], mesh.nodes[v[0]]),
            ));
        for i in 0..3 {
            let x = mesh.nodes[v[i]];
            let (a, b) = (mesh.nodes[v[(i + 1) % 3]], mesh.nodes[v[(i + 2) % 3]]);
            // r = x + s (y - x), y on the opposite edge: dA = s ds d_e dl
            let l = norm(sub(b, a));
            let d_e = norm(cross(sub(a, x), sub(b, x))) / l;
            surf_num[lca[v[i]]] += 0.5 * d_e * segment_inverse_distance(x, a, b);
            surf_den[lca[v[i]]] += area / 3.0;
        }
    }
    let (mut vol_num, mut vol_den) = (vec![0.0; np], vec![0.0; np]);
    for (e, t) in mesh.tets.iter().enumerate() {
        let vol = mesh.tet_volume(e);
        for i in 0..4 {
            let x = mesh.nodes[t[i]];
            let f = [1, 2, 3].map(|k| mesh.nodes[t[(i + k) % 4]]);
            // r = x + s (y - x), y on the opposite face: dV = s² ds d dA
            let n = cross(sub(f[1], f[0]), sub(f[2], f[0]));
            let d = dot(sub(x, f[0]), n).abs() / norm(n);
            vol_num[lca[t[i]]] += d / 6.0 * triangle_inverse_distance(x, f);
            vol_den[lca[t[i]]] += vol / 4.0;
        }
    }
    (0..np)
        .map(|n| {
            if surf_den[n] > 0.0 {
                surf_num[n] / surf_den[n]
            } else {
                vol_num[n] / vol_den[n]
            }
        })
        .collect()
}

/// `∫ dl / |y − x|` along the segment `[a, b]`.
fn segment_inverse_distance(x: Vec3, a: Vec3, b: Vec3) -> f64 {
    let (ra, rb, l) = (norm(sub(a, x)), norm(sub(b, x)), norm(sub(b, a)));
    ((ra + rb + l) / (ra + rb - l)).ln()
}

/// `∫ dA / |y − x|` over a triangle not containing `x`, by a three-point
/// rule on a uniform subdivision.
fn triangle_inverse_distance(x: Vec3, f: [Vec3; 3]) -> f64 {
    const M: usize = 8;
    let e1 = scale(sub(f[1], f[0]), 1.0 / M as f64);
    let e2 = scale(sub(f[2], f[0]), 1.0 / M as f64);
    let sub_area = 0.5 * norm(cross(e1, e2));
    let at = |u: f64, v: f64| add(f[0], add(scale(e1, u), scale(e2, v)));
    let mut s = 0.0;
    for i in 0..M {
        for j in 0..M - i {
            let (u, v) = (i as f64, j as f64);
            for (du, dv) in [
                (1.0 / 6.0, 1.0 / 6.0),
                (2.0 / 3.0, 1.0 / 6.0),
                (1.0 / 6.0, 2.0 / 3.0),
            ] {
                s += 1.0 / norm(sub(at(u + du, v + dv), x));
            }
            if i + j + 1 < M {
                for (du, dv) in [
                    (5.0 / 6.0, 5.0 / 6.0),
                    (1.0 / 3.0, 5.0 / 6.0),
                    (5.0 / 6.0, 1.0 / 3.0),
                ] {
                    s += 1.0 / norm(sub(at(u + du, v + dv), x));
                }
            }
        }
    }
    s * sub_area / 3.0
}

fn folded_triplets<F>(mesh: &Mesh, exec: Exec, per_element: F) -> Vec<(usize, usize, f64)>
where
    F: Fn(usize, &mut Vec<(usize, usize, f64)>) + Sync + Send,
{
    let lca = mesh.lca();
    let chunks: Vec<Vec<(usize, usize, f64)>> = exec.map_collect(mesh.tets.len(), |e| {
        let mut local = Vec::with_capacity(16);
        per_element(e, &mut local);
        for t in local.iter_mut() {
            t.0 = lca[t.0];
            t.1 = lca[t.1];
        }
        local
    });
    chunks.into_iter().flatten().collect()
}

/// Unscaled stiffness `∫ ∇φ_m·∇φ_n dV` folded onto parents, without any
/// material factor.
pub fn assemble_stiffness(mesh: &Mesh, geom: &ElementGeometry, exec: Exec) -> SparseOperator {
    let trip = folded_triplets(mesh, exec, |e, out| {
        let g = &geom.grads[e];
        let v = geom.volumes[e];
        let t = mesh.tets[e];
        for a in 0..4 {
            for b in 0..4 {
                out.push((t[a], t[b], v * dot(g[a], g[b])));
            }
        }
    });
    let np = mesh.n_parents();
    SparseOperator::from_triplets(OperatorKind::Laplace, np, np, trip)
}

/// Exchange operator mapping nodal `M` (emu/cm³) to nodal `H_ex` (Oe):
/// `H_ex,n = -(1/V_n) Σ_e (2A_e/Ms_e²) ∫_e ∇φ_n·∇φ_m dV M_m`.
pub fn assemble_exchange(
    mesh: &Mesh,
    materials: &MaterialTable,
    exec: Exec,
) -> Result<SparseOperator, FemError> {
    let coeff: Vec<f64> = mesh
        .region
        .iter()
        .map(|&r| materials.get(r).map(|m| 2.0 * m.a_ex / (m.ms * m.ms)))
        .collect::<Result<_, _>>()?;
    let geom = ElementGeometry::new(mesh, exec);
    let vol = lumped_volumes(mesh)?;
    let trip = folded_triplets(mesh, exec, |e, out| {
        let g = &geom.grads[e];
        let w = geom.volumes[e] * coeff[e];
        let t = mesh.tets[e];
        for a in 0..4 {
            for b in 0..4 {
                out.push((t[a], t[b], w * dot(g[a], g[b])));
            }
        }
    });
    let np = mesh.n_parents();
    let mut op = SparseOperator::from_triplets(OperatorKind::Laplace, np, np, trip);
    let s: Vec<f64> = vol.iter().map(|v| -1.0 / v).collect();
    op.scale_rows(&s);
    Ok(op)
}

/// Nodal magnetic charges `q_n = ∫ M·∇φ_n dV`, one operator per component of
/// `M`. This is `-∫∇·M φ_n` plus the boundary term `∮ (M·n̂) φ_n`, so the
/// volume and surface charges need no separate treatment.
pub fn assemble_charge(mesh: &Mesh, exec: Exec) -> [SparseOperator; 3] {
    let geom = ElementGeometry::new(mesh, exec);
    let np = mesh.n_parents();
    std::array::from_fn(|c| {
        let trip = folded_triplets(mesh, exec, |e, out| {
            let g = &geom.grads[e];
            let q = geom.volumes[e] / 4.0;
            let t = mesh.tets[e];
            for a in 0..4 {
                for b in 0..4 {
                    out.push((t[a], t[b], q * g[a][c]));
                }
            }
        });
        SparseOperator::from_triplets(OperatorKind::Charge(c), np, np, trip)
    })
}

/// Nodal gradient recovery: lumped-volume weighted average of the constant
/// element gradients around each node (both sides of a periodic face).
pub fn assemble_gradient(mesh: &Mesh, exec: Exec) -> Result<[SparseOperator; 3], FemError> {
    let geom = ElementGeometry::new(mesh, exec);
    let vol = lumped_volumes(mesh)?;
    let inv: Vec<f64> = vol.iter().map(|v| 1.0 / v).collect();
    let np = mesh.n_parents();
    Ok(std::array::from_fn(|c| {
        let trip = folded_triplets(mesh, exec, |e, out| {
            let g = &geom.grads[e];
            let q = geom.volumes[e] / 4.0;
            let t = mesh.tets[e];
            for a in 0..4 {
                for b in 0..4 {
                    out.push((t[a], t[b], q * g[b][c]));
                }
            }
        });
        let mut op = SparseOperator::from_triplets(OperatorKind::Grad(c), np, np, trip);
        op.scale_rows(&inv);
        op
    }))
}

/// Per-parent material data: volume-weighted `Ms` and `alpha`, and the
/// material of the region holding the largest share of the node's volume.
#[derive(Debug, Clone)]
pub struct NodalMaterials {
    pub ms: Vec<f64>,
    pub alpha: Vec<f64>,
    pub dominant: Vec<Material>,
}

impl NodalMaterials {
    pub fn new(mesh: &Mesh, materials: &MaterialTable) -> Result<Self, FemError> {
        materials.validate()?;
        let lca = mesh.lca();
        let np = mesh.n_parents();
        let mut vol = vec![0.0; np];
        let mut ms = vec![0.0; np];
        let mut alpha = vec![0.0; np];
        let mut shares: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); np];
        for (e, t) in mesh.tets.iter().enumerate() {
            let tag = mesh.region[e];
            let m = materials.get(tag)?;
            let q = mesh.tet_volume(e) / 4.0;
            for &n in t {
                let p = lca[n];
                vol[p] += q;
                ms[p] += q * m.ms;
                alpha[p] += q * m.alpha;
                *shares[p].entry(tag).or_default() += q;
            }
        }
        let mut dominant = Vec::with_capacity(np);
        for p in 0..np {
            if !(vol[p] > 0.0) {
                return Err(FemError::ZeroVolume(p));
            }
            ms[p] /= vol[p];
            alpha[p] /= vol[p];
            let (&tag, _) = shares[p]
                .iter()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("node belongs to an element");
            dominant.push(*materials.get(tag)?);
        }
        Ok(NodalMaterials {
            ms,
            alpha,
            dominant,
        })
    }
}
