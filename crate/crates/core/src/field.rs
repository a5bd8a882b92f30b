//! Effective field `H_eff = H_ex + H_ms + H_an + H_ap` on the parent nodes of
//! a prepared mesh, and the matching energies.

use serde::{Deserialize, Serialize};

use crate::baim::{Baim, BaimParams};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::femops::{
    assemble_charge, assemble_exchange, assemble_gradient, lumped_volumes,
    self_potential_coefficients, Anisotropy, MaterialTable, NodalMaterials,
};
use crate::math::{add, dot, norm, scale, sub, Vec3};
use crate::mesh::Mesh;
use crate::pgf::{PgfMethod, PgfSpec};
use crate::sparse::SparseOperator;

/// Externally applied field, Oe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AppliedFieldSpec {
    UniformStatic {
        h0: Vec3,
    },
    /// `h0 cos(ω t)`.
    UniformAc {
        h0: Vec3,
        omega: f64,
    },
    /// `h0 cos(ω₀ t − |k| y)` on nodes within `width/2` of the line through
    /// `position` along `axis`, zero elsewhere. `y` is the lab y coordinate.
    LineSource {
        h0: Vec3,
        omega0: f64,
        k: f64,
        axis: Vec3,
        position: Vec3,
        width: f64,
    },
}

impl AppliedFieldSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: Vec3| v.iter().all(|c| c.is_finite());
        let ok = match *self {
            AppliedFieldSpec::UniformStatic { h0 } => finite(h0),
            AppliedFieldSpec::UniformAc { h0, omega } => finite(h0) && omega.is_finite(),
            AppliedFieldSpec::LineSource {
                h0,
                omega0,
                k,
                axis,
                position,
                width,
            } => {
                finite(h0)
                    && omega0.is_finite()
                    && k.is_finite()
                    && finite(position)
                    && norm(axis) > 0.0
                    && width > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Field(format!("invalid applied field {self:?}")))
        }
    }

    pub fn at(&self, r: Vec3, t: f64) -> Vec3 {
        match *self {
            AppliedFieldSpec::UniformStatic { h0 } => h0,
            AppliedFieldSpec::UniformAc { h0, omega } => scale(h0, (omega * t).cos()),
            AppliedFieldSpec::LineSource {
                h0,
                omega0,
                k,
                axis,
                position,
                width,
            } => {
                let a = scale(axis, 1.0 / norm(axis));
                let d = sub(r, position);
                let perp = sub(d, scale(a, dot(d, a)));
                if norm(perp) <= 0.5 * width {
                    scale(h0, (omega0 * t - k.abs() * r[1]).cos())
                } else {
                    [0.0; 3]
                }
            }
        }
    }
}

/// Which contributions enter the effective field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldTerms {
    pub exchange: bool,
    pub magnetostatic: bool,
    pub anisotropy: bool,
    pub applied: bool,
}

impl Default for FieldTerms {
    fn default() -> Self {
        FieldTerms {
            exchange: true,
            magnetostatic: true,
            anisotropy: true,
            applied: true,
        }
    }
}

/// Energy split by term, erg.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Energies {
    pub exchange: f64,
    pub magnetostatic: f64,
    pub anisotropy: f64,
    pub applied: f64,
}

impl Energies {
    pub fn total(&self) -> f64 {
        self.exchange + self.magnetostatic + self.anisotropy + self.applied
    }
}

/// Anything the integrators can drive: a nodal magnetisation model with
/// weights, saturation values, damping and a field.
pub trait EffectiveField: Sync {
    fn n_nodes(&self) -> usize;
    /// Nodal weights (cm³) used for averages and energies.
    fn volumes(&self) -> &[f64];
    fn ms(&self) -> &[f64];
    fn alpha(&self) -> &[f64];
    fn effective_field(&self, m: &[Vec3], t: f64) -> Result<Vec<Vec3>>;
    fn energies(&self, m: &[Vec3], t: f64) -> Result<Energies>;
    /// Uniform extra field added to the applied term, e.g. a sweep value.
    fn set_bias(&mut self, h: Vec3);
    fn bias(&self) -> Vec3;
}

/// Magnetostatic solver options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldOptions {
    pub terms: FieldTerms,
    pub baim: BaimParams,
    pub pgf_method: PgfMethod,
    /// Add each node's own smeared-charge potential to the point-charge sum.
    pub self_potential: bool,
}

impl Default for FieldOptions {
    fn default() -> Self {
        FieldOptions {
            terms: FieldTerms::default(),
            baim: BaimParams::default(),
            pgf_method: PgfMethod::Ewald,
            self_potential: true,
        }
    }
}

/// Operators and solver state for one prepared mesh.
pub struct FieldAssembly {
    fingerprint: [u8; 32],
    volumes: Vec<f64>,
    nodal: NodalMaterials,
    positions: Vec<Vec3>,
    exchange: SparseOperator,
    charge: [SparseOperator; 3],
    gradient: [SparseOperator; 3],
    baim: Option<Baim>,
    self_coef: Vec<f64>,
    applied: Vec<AppliedFieldSpec>,
    bias: Vec3,
    terms: FieldTerms,
    exec: Exec,
}

impl FieldAssembly {
    /// `mesh` must already be prepared (folded and paired) when periodic.
    pub fn new(
        mesh: &Mesh,
        materials: &MaterialTable,
        applied: Vec<AppliedFieldSpec>,
        options: &FieldOptions,
        exec: Exec,
    ) -> Result<Self> {
        for a in &applied {
            a.validate()?;
        }
        let nodal = NodalMaterials::new(mesh, materials)?;
        let volumes = lumped_volumes(mesh)?;
        let exchange = assemble_exchange(mesh, materials, exec)?;
        let charge = assemble_charge(mesh, exec);
        let gradient = assemble_gradient(mesh, exec)?;
        let baim = if options.terms.magnetostatic {
            let pgf = match mesh.periodic_spec() {
                Some(s) => PgfSpec::from_periodic(s),
                None => PgfSpec::free_space(),
            }
            .with_method(options.pgf_method);
            Some(Baim::for_mesh(mesh, &pgf, &options.baim, exec)?)
        } else {
            None
        };
        let self_coef = if baim.is_some() && options.self_potential {
            self_potential_coefficients(mesh)
        } else {
            Vec::new()
        };
        Ok(FieldAssembly {
            fingerprint: mesh.fingerprint(),
            volumes,
            nodal,
            positions: mesh.nodes[..mesh.n_parents()].to_vec(),
            exchange,
            charge,
            gradient,
            baim,
            self_coef,
            applied,
            bias: [0.0; 3],
            terms: options.terms,
            exec,
        })
    }

    pub fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        if mesh.fingerprint() != self.fingerprint {
            return Err(Error::Field(
                "mesh does not match the one the operators were built on".into(),
            ));
        }
        Ok(())
    }

    pub fn baim(&self) -> Option<&Baim> {
        self.baim.as_ref()
    }

    pub fn terms(&self) -> FieldTerms {
        self.terms
    }

    pub fn nodal_materials(&self) -> &NodalMaterials {
        &self.nodal
    }

    pub fn applied(&self) -> &[AppliedFieldSpec] {
        &self.applied
    }

    pub fn exchange_operator(&self) -> &SparseOperator {
        &self.exchange
    }

    pub fn gradient_operators(&self) -> &[SparseOperator; 3] {
        &self.gradient
    }

    pub fn charge_operators(&self) -> &[SparseOperator; 3] {
        &self.charge
    }

    fn check_len(&self, m: &[Vec3]) -> Result<()> {
        if m.len() != self.volumes.len() {
            return Err(Error::Field(format!(
                "magnetisation has {} entries, the mesh has {} parent nodes",
                m.len(),
                self.volumes.len()
            )));
        }
        Ok(())
    }

    pub fn exchange_field(&self, m: &[Vec3]) -> Result<Vec<Vec3>> {
        self.check_len(m)?;
        Ok(self.exchange.apply_vec(m, self.exec))
    }

    /// Nodal charges `q_n = ∫ M·∇φ_n dV`.
    pub fn charges(&self, m: &[Vec3]) -> Result<Vec<f64>> {
        self.check_len(m)?;
        let mut q = vec![0.0; m.len()];
        let mut comp = vec![0.0; m.len()];
        for c in 0..3 {
            for (x, v) in comp.iter_mut().zip(m) {
                *x = v[c];
            }
            for (acc, v) in q.iter_mut().zip(self.charge[c].apply(&comp, self.exec)) {
                *acc += v;
            }
        }
        Ok(q)
    }

    /// Scalar potential at the parent nodes.
    pub fn potential(&self, m: &[Vec3]) -> Result<Vec<f64>> {
        let baim = self
            .baim
            .as_ref()
            .ok_or_else(|| Error::Field("magnetostatics disabled".into()))?;
        let q = self.charges(m)?;
        let mut u = baim.compute_psp(&q)?;
        for ((u, q), s) in u.iter_mut().zip(&q).zip(&self.self_coef) {
            *u += s * q;
        }
        Ok(u)
    }

    pub fn magnetostatic_field(&self, m: &[Vec3]) -> Result<Vec<Vec3>> {
        let u = self.potential(m)?;
        let g: Vec<Vec<f64>> = self
            .gradient
            .iter()
            .map(|op| op.apply(&u, self.exec))
            .collect();
        Ok((0..u.len())
            .map(|n| [-g[0][n], -g[1][n], -g[2][n]])
            .collect())
    }

    pub fn anisotropy_field(&self, m: &[Vec3]) -> Result<Vec<Vec3>> {
        self.check_len(m)?;
        let mut out = vec![[0.0; 3]; m.len()];
        self.exec.fill(&mut out, |n| {
            anisotropy_at(&self.nodal.dominant[n].anisotropy, self.nodal.ms[n], m[n])
        });
        Ok(out)
    }

    pub fn applied_field(&self, t: f64) -> Vec<Vec3> {
        self.positions
            .iter()
            .map(|&r| {
                self.applied
                    .iter()
                    .fold(self.bias, |h, a| add(h, a.at(r, t)))
            })
            .collect()
    }
}

pub(crate) fn anisotropy_at(an: &Anisotropy, ms: f64, m: Vec3) -> Vec3 {
    match *an {
        Anisotropy::None => [0.0; 3],
        Anisotropy::Uniaxial { ku, axis } => scale(axis, 2.0 * ku / (ms * ms) * dot(m, axis)),
        Anisotropy::Cubic { k1, axes } => {
            let c: Vec3 = std::array::from_fn(|i| dot(m, axes[i]));
            let s = -2.0 * k1 / ms.powi(4);
            let mut h = [0.0; 3];
            for i in 0..3 {
                let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                h = add(h, scale(axes[i], s * c[i] * (c[j] * c[j] + c[k] * c[k])));
            }
            h
        }
    }
}

pub(crate) fn anisotropy_energy_density(an: &Anisotropy, ms: f64, m: Vec3) -> f64 {
    match *an {
        Anisotropy::None => 0.0,
        Anisotropy::Uniaxial { ku, axis } => -ku * (dot(m, axis) / ms).powi(2),
        Anisotropy::Cubic { k1, axes } => {
            let c: Vec3 = std::array::from_fn(|i| (dot(m, axes[i]) / ms).powi(2));
            k1 * (c[0] * c[1] + c[1] * c[2] + c[2] * c[0])
        }
    }
}

fn weighted_dot(v: &[f64], a: &[Vec3], b: &[Vec3]) -> f64 {
    v.iter()
        .zip(a)
        .zip(b)
        .map(|((w, x), y)| w * dot(*x, *y))
        .sum()
}

impl EffectiveField for FieldAssembly {
    fn n_nodes(&self) -> usize {
        self.volumes.len()
    }

    fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    fn ms(&self) -> &[f64] {
        &self.nodal.ms
    }

    fn alpha(&self) -> &[f64] {
        &self.nodal.alpha
    }

    fn effective_field(&self, m: &[Vec3], t: f64) -> Result<Vec<Vec3>> {
        self.check_len(m)?;
        let mut h = vec![[0.0; 3]; m.len()];
        let mut accumulate = |part: Vec<Vec3>| {
            for (a, b) in h.iter_mut().zip(part) {
                *a = add(*a, b);
            }
        };
        if self.terms.exchange {
            accumulate(self.exchange_field(m)?);
        }
        if self.terms.magnetostatic {
            accumulate(self.magnetostatic_field(m)?);
        }
        if self.terms.anisotropy {
            accumulate(self.anisotropy_field(m)?);
        }
        if self.terms.applied {
            accumulate(self.applied_field(t));
        }
        Ok(h)
    }

    fn energies(&self, m: &[Vec3], t: f64) -> Result<Energies> {
        self.check_len(m)?;
        let v = &self.volumes;
        let mut e = Energies::default();
        if self.terms.exchange {
            e.exchange = -0.5 * weighted_dot(v, m, &self.exchange_field(m)?);
        }
        if self.terms.magnetostatic {
            e.magnetostatic = -0.5 * weighted_dot(v, m, &self.magnetostatic_field(m)?);
        }
        if self.terms.anisotropy {
            e.anisotropy = (0..m.len())
                .map(|n| {
                    v[n] * anisotropy_energy_density(
                        &self.nodal.dominant[n].anisotropy,
                        self.nodal.ms[n],
                        m[n],
                    )
                })
                .sum();
        }
        if self.terms.applied {
            e.applied = -weighted_dot(v, m, &self.applied_field(t));
        }
        Ok(e)
    }

    fn set_bias(&mut self, h: Vec3) {
        self.bias = h;
    }

    fn bias(&self) -> Vec3 {
        self.bias
    }
}

/// Volume-weighted mean of a nodal vector field.
pub fn volume_average(volumes: &[f64], f: &[Vec3]) -> Vec3 {
    let total: f64 = volumes.iter().sum();
    let s = volumes
        .iter()
        .zip(f)
        .fold([0.0; 3], |acc, (&w, v)| add(acc, scale(*v, w)));
    scale(s, 1.0 / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::femops::Material;
    use crate::math::normalize;
    use crate::mesh::PeriodicSpec;
    use crate::meshgen::{ball_mesh, box_mesh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const MS: f64 = 800.0;

    fn permalloy(anisotropy: Anisotropy) -> MaterialTable {
        MaterialTable::single(Material {
            ms: MS,
            a_ex: 1.3e-6,
            anisotropy,
            alpha: 0.02,
        })
    }

    fn only(terms: &[&str]) -> FieldOptions {
        FieldOptions {
            terms: FieldTerms {
                exchange: terms.contains(&"ex"),
                magnetostatic: terms.contains(&"ms"),
                anisotropy: terms.contains(&"an"),
                applied: terms.contains(&"ap"),
            },
            ..Default::default()
        }
    }

    fn random_m(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                scale(
                    normalize([
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ]),
                    MS,
                )
            })
            .collect()
    }

    #[test]
    fn applied_field_examples() {
        let s = AppliedFieldSpec::UniformStatic {
            h0: [0.0, 0.0, 100.0],
        };
        assert_eq!(s.at([1.0, 2.0, 3.0], 5.0), [0.0, 0.0, 100.0]);
        let ac = AppliedFieldSpec::UniformAc {
            h0: [1.0, 0.0, 0.0],
            omega: 2.0 * PI * 5e6,
        };
        assert_eq!(ac.at([0.0; 3], 0.0), [1.0, 0.0, 0.0]);
        assert!(ac.at([0.0; 3], 0.25 / 5e6)[0].abs() < 1e-12);
        let line = AppliedFieldSpec::LineSource {
            h0: [0.0, 0.0, 5.0],
            omega0: 1e9,
            k: 2e5,
            axis: [1.0, 0.0, 0.0],
            position: [0.0, 0.0, 0.0],
            width: 1e-6,
        };
        assert_eq!(line.at([3.0, 1e-6, 0.0], 0.0), [0.0; 3]);
        assert_eq!(line.at([3.0, 0.0, 0.0], 0.0), [0.0, 0.0, 5.0]);
        let bad = AppliedFieldSpec::LineSource {
            h0: [0.0; 3],
            omega0: 0.0,
            k: 0.0,
            axis: [1.0, 0.0, 0.0],
            position: [0.0; 3],
            width: 0.0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn anisotropy_examples() {
        let u = Anisotropy::Uniaxial {
            ku: 5e5,
            axis: [0.0, 0.0, 1.0],
        };
        let h = anisotropy_at(&u, MS, [0.0, 0.0, MS]);
        assert!((h[2] - 2.0 * 5e5 / MS).abs() < 1e-9);
        assert_eq!(anisotropy_at(&u, MS, [MS, 0.0, 0.0]), [0.0; 3]);
        let c = Anisotropy::Cubic {
            k1: 3e4,
            axes: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        };
        assert_eq!(anisotropy_at(&c, MS, [0.0, MS, 0.0]), [0.0; 3]);
    }

    #[test]
    fn anisotropy_matches_energy_gradient() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let cases = [
            Anisotropy::Uniaxial {
                ku: 4e5,
                axis: normalize([1.0, 2.0, 2.0]),
            },
            Anisotropy::Cubic {
                k1: 3e4,
                axes: [[s, s, 0.0], [-s, s, 0.0], [0.0, 0.0, 1.0]],
            },
        ];
        for an in cases {
            let m = [310.0, -420.0, 540.0];
            let h = anisotropy_at(&an, MS, m);
            for c in 0..3 {
                let d = 1e-3;
                let mut p = m;
                let mut q = m;
                p[c] += d;
                q[c] -= d;
                let fd = -(anisotropy_energy_density(&an, MS, p)
                    - anisotropy_energy_density(&an, MS, q))
                    / (2.0 * d);
                assert!(
                    (fd - h[c]).abs() < 1e-6 * norm(h).max(1.0),
                    "{an:?} c={c}: {fd} vs {}",
                    h[c]
                );
            }
        }
    }

    #[test]
    fn zero_materials_leave_applied_field() {
        let mesh = box_mesh([2, 2, 2], [1e-6; 3], [0.0; 3]);
        let mats = MaterialTable::single(Material {
            ms: 1.0,
            a_ex: 0.0,
            anisotropy: Anisotropy::None,
            alpha: 0.0,
        });
        let h0 = [3.0, -1.0, 7.0];
        let mut opts = FieldOptions::default();
        opts.terms.magnetostatic = false;
        let fa = FieldAssembly::new(
            &mesh,
            &mats,
            vec![AppliedFieldSpec::UniformStatic { h0 }],
            &opts,
            Exec::Sequential,
        )
        .unwrap();
        let m = vec![[0.0, 0.0, 1.0]; fa.n_nodes()];
        let h = fa.effective_field(&m, 0.0).unwrap();
        assert!(h.iter().all(|v| *v == h0));
        let mut fb = fa;
        fb.set_bias([1.0, 0.0, 0.0]);
        let h2 = fb.effective_field(&m, 0.0).unwrap();
        assert!(h2
            .iter()
            .zip(&h)
            .all(|(a, b)| sub(*a, *b) == [1.0, 0.0, 0.0]));
    }

    #[test]
    fn exchange_pulls_towards_neighbours() {
        let mesh = box_mesh([1, 1, 1], [1e-6; 3], [0.0; 3]);
        let fa = FieldAssembly::new(
            &mesh,
            &permalloy(Anisotropy::None),
            vec![],
            &only(&["ex"]),
            Exec::Sequential,
        )
        .unwrap();
        let mut m = vec![[0.0, 0.0, MS]; fa.n_nodes()];
        m[0] = [0.0, 0.0, -MS];
        let h = fa.exchange_field(&m).unwrap();
        for k in 1..m.len() {
            assert!(dot(h[0], sub(m[k], m[0])) >= 0.0);
        }
        let uniform = vec![[0.0, 0.0, MS]; fa.n_nodes()];
        assert!(fa
            .exchange_field(&uniform)
            .unwrap()
            .iter()
            .all(|v| norm(*v) < 1e-10 * MS));
    }

    #[test]
    fn field_is_energy_gradient() {
        let spec = PeriodicSpec::new([true, false, false], [4e-6, 0.0, 0.0]);
        let mesh = box_mesh([4, 2, 2], [4e-6, 2e-6, 2e-6], [0.0; 3])
            .prepare_periodic(&spec)
            .unwrap();
        let an = Anisotropy::Uniaxial {
            ku: 1e5,
            axis: [0.0, 0.0, 1.0],
        };
        let applied = vec![AppliedFieldSpec::UniformStatic {
            h0: [10.0, 20.0, -30.0],
        }];
        for term in ["ex", "ms", "an", "ap"] {
            let fa = FieldAssembly::new(
                &mesh,
                &permalloy(an),
                applied.clone(),
                &only(&[term]),
                Exec::Sequential,
            )
            .unwrap();
            let m = random_m(fa.n_nodes(), 9);
            let h = fa.effective_field(&m, 0.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let dm: Vec<Vec3> = (0..m.len())
                .map(|_| {
                    [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ]
                })
                .collect();
            let eps = 1e-2;
            let shifted = |s: f64| -> Vec<Vec3> {
                m.iter()
                    .zip(&dm)
                    .map(|(a, b)| add(*a, scale(*b, s * eps)))
                    .collect()
            };
            let ep = fa.energies(&shifted(1.0), 0.0).unwrap().total();
            let em = fa.energies(&shifted(-1.0), 0.0).unwrap().total();
            let fd = (ep - em) / (2.0 * eps);
            let predicted = -weighted_dot(fa.volumes(), &h, &dm);
            assert!(
                (fd - predicted).abs() <= 1e-4 * predicted.abs(),
                "{term}: finite difference {fd} vs {predicted}"
            );
        }
    }

    #[test]
    fn magnetostatics_is_reciprocal() {
        let spec = PeriodicSpec::new([true, true, false], [3e-6, 3e-6, 0.0]);
        let mesh = box_mesh([4, 4, 2], [3e-6, 3e-6, 1e-6], [0.0; 3])
            .prepare_periodic(&spec)
            .unwrap();
        let fa = FieldAssembly::new(
            &mesh,
            &permalloy(Anisotropy::None),
            vec![],
            &only(&["ms"]),
            Exec::Sequential,
        )
        .unwrap();
        let m1 = random_m(fa.n_nodes(), 1);
        let m2 = random_m(fa.n_nodes(), 2);
        let a = weighted_dot(fa.volumes(), &m1, &fa.magnetostatic_field(&m2).unwrap());
        let b = weighted_dot(fa.volumes(), &m2, &fa.magnetostatic_field(&m1).unwrap());
        assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()), "{a} vs {b}");
    }

    #[test]
    fn uniform_periodic_bulk_has_no_demag_field() {
        let l = 2e-6;
        let spec = PeriodicSpec::new([true; 3], [l; 3]);
        let mesh = box_mesh([4, 4, 4], [l; 3], [0.0; 3])
            .prepare_periodic(&spec)
            .unwrap();
        let fa = FieldAssembly::new(
            &mesh,
            &permalloy(Anisotropy::None),
            vec![],
            &only(&["ms"]),
            Exec::Sequential,
        )
        .unwrap();
        let m = vec![normalize([1.0, 2.0, 3.0]).map(|c| c * MS); fa.n_nodes()];
        let h = fa.magnetostatic_field(&m).unwrap();
        let worst = h.iter().map(|v| norm(*v)).fold(0.0, f64::max);
        assert!(worst <= 1e-3 * 4.0 * PI * MS, "max |H_ms| = {worst}");
    }

    #[test]
    fn wrong_length_is_rejected() {
        let mesh = box_mesh([1, 1, 1], [1e-6; 3], [0.0; 3]);
        let fa = FieldAssembly::new(
            &mesh,
            &permalloy(Anisotropy::None),
            vec![],
            &only(&["ex"]),
            Exec::Sequential,
        )
        .unwrap();
        assert!(fa.exchange_field(&[[0.0; 3]; 3]).is_err());
        let other = box_mesh([2, 1, 1], [1e-6; 3], [0.0; 3]);
        assert!(fa.check_mesh(&other).is_err());
        assert!(fa.check_mesh(&mesh).is_ok());
    }

    #[test]
    fn self_potential_improves_whole_body_sphere_energy() {
        let mesh = ball_mesh(5, 1e-6, [0.0; 3]);
        let ratio = |self_potential: bool| {
            let options = FieldOptions {
                self_potential,
                ..only(&["ms"])
            };
            let fa = FieldAssembly::new(
                &mesh,
                &permalloy(Anisotropy::None),
                vec![],
                &options,
                Exec::Sequential,
            )
            .unwrap();
            let m = vec![[0.0, 0.0, MS]; fa.n_nodes()];
            let v: f64 = fa.volumes().iter().sum();
            fa.energies(&m, 0.0).unwrap().magnetostatic / (2.0 / 3.0 * PI * MS * MS * v)
        };
        let (without, with) = (ratio(false), ratio(true));
        assert!((with - 1.0).abs() < 0.05, "{with}");
        assert!(
            (with - 1.0).abs() < 0.5 * (without - 1.0).abs(),
            "{with} vs {without}"
        );
    }

    #[test]
    fn sphere_demag_factor() {
        let r = 1e-6;
        let mesh = ball_mesh(5, r, [0.0; 3]);
        let fa = FieldAssembly::new(
            &mesh,
            &permalloy(Anisotropy::None),
            vec![],
            &only(&["ms"]),
            Exec::Parallel,
        )
        .unwrap();
        let m = vec![[0.0, 0.0, MS]; fa.n_nodes()];
        let h = fa.magnetostatic_field(&m).unwrap();
        let (mut s, mut w) = (0.0, 0.0);
        for (n, p) in mesh.nodes.iter().enumerate() {
            if norm(*p) < 0.5 * r {
                s += fa.volumes()[n] * h[n][2];
                w += fa.volumes()[n];
            }
        }
        let expected = -4.0 * PI / 3.0 * MS;
        assert!(
            (s / w - expected).abs() < 0.03 * expected.abs(),
            "{} vs {expected}",
            s / w
        );
    }

    #[test]
    fn periodic_film_demag_factors() {
        let (l, t) = (4e-6, 1e-6);
        let spec = PeriodicSpec::new([true, true, false], [l, l, 0.0]);
        let mesh = box_mesh([16, 16, 8], [l, l, t], [0.0; 3])
            .prepare_periodic(&spec)
            .unwrap();
        let fa = FieldAssembly::new(
            &mesh,
            &permalloy(Anisotropy::None),
            vec![],
            &only(&["ms"]),
            Exec::Parallel,
        )
        .unwrap();
        let interior: Vec<usize> = (0..fa.n_nodes())
            .filter(|&n| (mesh.nodes[n][2] - 0.5 * t).abs() < 0.3 * t)
            .collect();
        assert!(!interior.is_empty());
        let hz = fa
            .magnetostatic_field(&vec![[0.0, 0.0, MS]; fa.n_nodes()])
            .unwrap();
        for &n in &interior {
            assert!(
                (hz[n][2] + 4.0 * PI * MS).abs() < 0.02 * 4.0 * PI * MS,
                "H_z = {}",
                hz[n][2]
            );
        }
        let hx = fa
            .magnetostatic_field(&vec![[MS, 0.0, 0.0]; fa.n_nodes()])
            .unwrap();
        for &n in &interior {
            assert!(
                norm(hx[n]) < 0.02 * 4.0 * PI * MS,
                "in-plane |H| = {}",
                norm(hx[n])
            );
        }
    }
}
