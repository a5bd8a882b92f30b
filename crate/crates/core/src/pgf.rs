//! Free-space and periodic `1/r` Green's functions.
//!
//! The bare lattice sums `Σ 1/|r − R|` diverge for one- and two-dimensional
//! lattices and converge only conditionally in three, so every periodic
//! kernel here is defined up to a convention-dependent additive constant:
//!
//! * 1D: the renormalised sum `Σ_i [1/|r − iL x̂| − (1 − δ_i0)/|iL|]`.
//! * 2D: the Ewald form whose zero-wavevector term is
//!   `−(2√π/A)[e^{−α²z²}/α + √π|z| erf(α|z|)]`.
//! * 3D: the zero-mean kernel of a unit charge in a neutralising background.
//!
//! All three are independent of the Ewald splitting parameter. Only
//! differences of potentials of neutral charge sets are physical.
//!
//! Two evaluation methods are provided: Ewald summation (the default,
//! exponentially convergent) and a brute-force image box with analytic
//! shape/tail terms, which exists as an independent reference.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{norm, Vec3};
use crate::mesh::PeriodicSpec;
use crate::special::{ein, erf, erfc, exp_erfc, gauss_legendre, EULER_GAMMA};

#[derive(Debug, Error)]
pub enum PgfError {
    #[error("displacement {r:?} coincides with a lattice image of the origin")]
    Coincident { r: Vec3 },
    #[error("cutoffs reach an estimated relative error of {achieved:.2e}, target {target:.2e}")]
    Cutoff { achieved: f64, target: f64 },
    #[error("invalid kernel specification: {0}")]
    BadSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PgfMethod {
    #[default]
    Ewald,
    TruncatedDirect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgfSpec {
    pub periodic: [bool; 3],
    pub periods: [f64; 3],
    #[serde(default)]
    pub method: PgfMethod,
    /// Splitting parameter in cm⁻¹; defaults to `√π / min L`.
    #[serde(default)]
    pub ewald_alpha: Option<f64>,
    /// Largest image index per periodic axis in the real-space (or direct) sum.
    #[serde(default)]
    pub real_cutoff: Option<usize>,
    /// Largest reciprocal index per periodic axis.
    #[serde(default)]
    pub recip_cutoff: Option<usize>,
    #[serde(default = "default_target")]
    pub target_rel_error: f64,
}

fn default_target() -> f64 {
    1e-8
}

impl PgfSpec {
    pub fn new(periodic: [bool; 3], periods: [f64; 3]) -> Self {
        PgfSpec {
            periodic,
            periods,
            method: PgfMethod::Ewald,
            ewald_alpha: None,
            real_cutoff: None,
            recip_cutoff: None,
            target_rel_error: default_target(),
        }
    }

    pub fn free_space() -> Self {
        Self::new([false; 3], [0.0; 3])
    }

    pub fn from_periodic(spec: &PeriodicSpec) -> Self {
        Self::new(spec.periodic, spec.periods)
    }

    pub fn with_method(mut self, method: PgfMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.ewald_alpha = Some(alpha);
        self
    }

    pub fn with_target(mut self, tol: f64) -> Self {
        self.target_rel_error = tol;
        self
    }

    pub fn with_cutoffs(mut self, real: usize, recip: usize) -> Self {
        self.real_cutoff = Some(real);
        self.recip_cutoff = Some(recip);
        self
    }

    /// Number of periodic directions.
    pub fn dims(&self) -> usize {
        self.periodic.iter().filter(|&&p| p).count()
    }

    pub fn validate(&self) -> Result<(), PgfError> {
        for a in 0..3 {
            if self.periodic[a] && !(self.periods[a] > 0.0 && self.periods[a].is_finite()) {
                return Err(PgfError::BadSpec(format!(
                    "period along axis {a} must be positive"
                )));
            }
        }
        if !(self.target_rel_error > 0.0 && self.target_rel_error < 1.0) {
            return Err(PgfError::BadSpec(
                "target_rel_error must lie in (0, 1)".into(),
            ));
        }
        if let Some(a) = self.ewald_alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(PgfError::BadSpec("ewald_alpha must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Free-space Green's function `1/|r|`.
pub fn g0(r: Vec3) -> Result<f64, PgfError> {
    let d = norm(r);
    if d == 0.0 {
        return Err(PgfError::Coincident { r });
    }
    Ok(1.0 / d)
}

/// Convenience wrapper that builds a one-off evaluator.
pub fn pgf_eval(spec: &PgfSpec, r: Vec3) -> Result<f64, PgfError> {
    Pgf::new(spec)?.eval(r)
}

/// `G(r1) − G(r2)`: free of the regularisation constant.
pub fn pgf_difference_field(spec: &PgfSpec, r1: Vec3, r2: Vec3) -> Result<f64, PgfError> {
    let g = Pgf::new(spec)?;
    g.difference(r1, r2)
}

/// Precomputed evaluator for one [`PgfSpec`].
#[derive(Debug, Clone)]
pub struct Pgf {
    spec: PgfSpec,
    dims: usize,
    /// `perm[c]` is the physical axis stored in canonical slot `c`; periodic
    /// axes come first.
    perm: [usize; 3],
    len: [f64; 3],
    alpha: f64,
    /// Real-space (or direct) lattice vectors in canonical coordinates.
    images: Vec<Vec3>,
    real_radius: f64,
    recip: Recip,
    direct_m: usize,
}

#[derive(Debug, Clone)]
enum Recip {
    None,
    /// 1D: wavenumbers with Gauss–Legendre tables for the Bessel-like integral.
    Line {
        k: Vec<f64>,
        nodes: Vec<f64>,
        weights: Vec<f64>,
    },
    /// 2D: shells of equal |k|, each with its member index pairs.
    Plane {
        n: [usize; 2],
        shells: Vec<(f64, Vec<[usize; 2]>)>,
    },
    /// 3D: half-space wavevectors with their prefactor.
    Bulk {
        n: [usize; 3],
        terms: Vec<([usize; 3], f64)>,
    },
}

impl Pgf {
    pub fn new(spec: &PgfSpec) -> Result<Self, PgfError> {
        spec.validate()?;
        let dims = spec.dims();
        let mut perm = [0usize; 3];
        let mut c = 0;
        for pass in [true, false] {
            for a in 0..3 {
                if spec.periodic[a] == pass {
                    perm[c] = a;
                    c += 1;
                }
            }
        }
        let mut len = [0.0; 3];
        for c in 0..dims {
            len[c] = spec.periods[perm[c]];
        }
        let lmin = len[..dims].iter().copied().fold(f64::INFINITY, f64::min);
        let alpha = spec
            .ewald_alpha
            .unwrap_or(if dims > 0 { PI.sqrt() / lmin } else { 0.0 });
        let mut g = Pgf {
            spec: spec.clone(),
            dims,
            perm,
            len,
            alpha,
            images: Vec::new(),
            real_radius: f64::INFINITY,
            recip: Recip::None,
            direct_m: 0,
        };
        if dims == 0 {
            return Ok(g);
        }
        match spec.method {
            PgfMethod::Ewald => g.setup_ewald()?,
            PgfMethod::TruncatedDirect => g.setup_direct()?,
        }
        Ok(g)
    }

    pub fn spec(&self) -> &PgfSpec {
        &self.spec
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn setup_ewald(&mut self) -> Result<(), PgfError> {
        let d = self.dims;
        let tol = self.spec.target_rel_error;
        let s = ((1.0 / tol).ln() + 2.0).sqrt();
        let alpha = self.alpha;
        let lmin = self.len[..d].iter().copied().fold(f64::INFINITY, f64::min);
        let lmax = self.len[..d].iter().copied().fold(0.0, f64::max);
        let half_diag = 0.5 * self.len[..d].iter().map(|l| l * l).sum::<f64>().sqrt();

        // real space
        let (n_real, radius): ([usize; 3], f64) = match self.spec.real_cutoff {
            Some(n) => ([n; 3], f64::INFINITY),
            None => {
                let rc = s / alpha;
                let mut n = [0; 3];
                for c in 0..d {
                    n[c] = ((rc + half_diag) / self.len[c]).ceil() as usize;
                }
                (n, rc)
            }
        };
        self.real_radius = radius;
        let real_err = if radius.is_finite() {
            erfc(alpha * radius) * lmin / radius
        } else {
            let dmin = (0..d)
                .map(|c| (n_real[c] as f64 + 0.5) * self.len[c])
                .fold(f64::INFINITY, f64::min);
            erfc(alpha * dmin) * lmin / dmin
        };
        self.images = lattice(d, n_real, self.len, |r| norm(r) <= radius + half_diag);

        // reciprocal space
        let kc = 2.0 * alpha * s;
        let n_recip: [usize; 3] = match self.spec.recip_cutoff {
            Some(n) => [n; 3],
            None => {
                let mut n = [0; 3];
                for c in 0..d {
                    n[c] = (kc * self.len[c] / (2.0 * PI)).ceil() as usize;
                }
                n
            }
        };
        let auto_k = self.spec.recip_cutoff.is_none();
        let kmin_excluded = match self.spec.recip_cutoff {
            Some(n) => 2.0 * PI * (n as f64 + 1.0) / lmax,
            None => kc,
        };
        let recip_err = (-kmin_excluded * kmin_excluded / (4.0 * alpha * alpha)).exp();
        let achieved = real_err.max(recip_err);
        if achieved > tol {
            return Err(PgfError::Cutoff {
                achieved,
                target: tol,
            });
        }
        let kvec = |m: [i64; 3]| -> Vec3 {
            let mut k = [0.0; 3];
            for c in 0..d {
                k[c] = 2.0 * PI * m[c] as f64 / self.len[c];
            }
            k
        };
        let keep = |k: f64| !auto_k || k <= kc;
        self.recip = match d {
            1 => {
                let ks: Vec<f64> = (1..=n_recip[0] as i64)
                    .map(|m| kvec([m, 0, 0])[0])
                    .filter(|&k| keep(k))
                    .collect();
                let (nodes, weights) = gauss_legendre(64);
                Recip::Line {
                    k: ks,
                    nodes,
                    weights,
                }
            }
            2 => {
                let mut list: Vec<(f64, [usize; 2])> = Vec::new();
                let (n0, n1) = (n_recip[0] as i64, n_recip[1] as i64);
                for m0 in -n0..=n0 {
                    for m1 in -n1..=n1 {
                        // half plane: (m0 > 0) or (m0 == 0 and m1 > 0)
                        if m0 < 0 || (m0 == 0 && m1 <= 0) {
                            continue;
                        }
                        let k = norm(kvec([m0, m1, 0]));
                        if keep(k) {
                            list.push((k, [(m0 + n0) as usize, (m1 + n1) as usize]));
                        }
                    }
                }
                list.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut shells: Vec<(f64, Vec<[usize; 2]>)> = Vec::new();
                for (k, idx) in list {
                    match shells.last_mut() {
                        Some((k0, v)) if (k - *k0).abs() <= 1e-12 * k => v.push(idx),
                        _ => shells.push((k, vec![idx])),
                    }
                }
                Recip::Plane {
                    n: [n_recip[0], n_recip[1]],
                    shells,
                }
            }
            _ => {
                let vol = self.len[0] * self.len[1] * self.len[2];
                let n = [n_recip[0] as i64, n_recip[1] as i64, n_recip[2] as i64];
                let mut terms = Vec::new();
                for m0 in -n[0]..=n[0] {
                    for m1 in -n[1]..=n[1] {
                        for m2 in -n[2]..=n[2] {
                            let first = if m0 != 0 {
                                m0
                            } else if m1 != 0 {
                                m1
                            } else {
                                m2
                            };
                            if first <= 0 {
                                continue;
                            }
                            let kv = kvec([m0, m1, m2]);
                            let k2 = kv[0] * kv[0] + kv[1] * kv[1] + kv[2] * kv[2];
                            if !keep(k2.sqrt()) {
                                continue;
                            }
                            let coef =
                                2.0 * 4.0 * PI / vol * (-k2 / (4.0 * alpha * alpha)).exp() / k2;
                            let idx = [
                                (m0 + n[0]) as usize,
                                (m1 + n[1]) as usize,
                                (m2 + n[2]) as usize,
                            ];
                            terms.push((idx, coef));
                        }
                    }
                }
                // small terms first for a better-conditioned sum
                terms.sort_by(|a, b| a.1.total_cmp(&b.1));
                Recip::Bulk { n: n_recip, terms }
            }
        };
        Ok(())
    }

    fn setup_direct(&mut self) -> Result<(), PgfError> {
        let d = self.dims;
        if d >= 2 {
            let l0 = self.len[0];
            if self.len[..d].iter().any(|&l| (l - l0).abs() > 1e-12 * l0) {
                return Err(PgfError::BadSpec(
                    "truncated_direct requires equal periods on all periodic axes".into(),
                ));
            }
        }
        let m = self.spec.real_cutoff.unwrap_or(match d {
            1 => 2000,
            2 => 300,
            _ => 40,
        });
        self.direct_m = m;
        self.images = lattice(d, [m; 3], self.len, |_| true);
        Ok(())
    }

    fn canonical(&self, r: Vec3) -> Vec3 {
        let mut c = [r[self.perm[0]], r[self.perm[1]], r[self.perm[2]]];
        for a in 0..self.dims {
            let l = self.len[a];
            c[a] -= l * (c[a] / l).round();
        }
        c
    }

    /// Minimum-image displacement in physical coordinates.
    pub fn min_image(&self, r: Vec3) -> Vec3 {
        let c = self.canonical(r);
        let mut out = [0.0; 3];
        for k in 0..3 {
            out[self.perm[k]] = c[k];
        }
        out
    }

    /// Periodic kernel at displacement `r`.
    pub fn eval(&self, r: Vec3) -> Result<f64, PgfError> {
        let c = self.canonical(r);
        let d = norm(c);
        let scale = if self.dims > 0 { self.len[0] } else { d };
        if d <= 1e-14 * scale {
            return Err(PgfError::Coincident { r });
        }
        Ok(1.0 / d + self.smooth(c))
    }

    /// `G(r) − 1/|r_min|` with `r_min` the minimum image of `r`; finite at
    /// `r = 0`, where it is the image-only self term.
    pub fn eval_regular(&self, r: Vec3) -> f64 {
        self.smooth(self.canonical(r))
    }

    /// Regularised self interaction `lim_{r→0} [G(r) − 1/r]`.
    pub fn self_term(&self) -> f64 {
        self.smooth([0.0; 3])
    }

    pub fn difference(&self, r1: Vec3, r2: Vec3) -> Result<f64, PgfError> {
        Ok(self.eval(r1)? - self.eval(r2)?)
    }

    fn smooth(&self, c: Vec3) -> f64 {
        if self.dims == 0 {
            return 0.0;
        }
        match self.spec.method {
            PgfMethod::Ewald => self.ewald_smooth(c),
            PgfMethod::TruncatedDirect => self.direct_smooth(c),
        }
    }

    fn ewald_smooth(&self, c: Vec3) -> f64 {
        let alpha = self.alpha;
        let r0 = norm(c);
        let x = alpha * r0;
        let mut real = if x < 1e-4 {
            -2.0 * alpha / PI.sqrt() * (1.0 - x * x / 3.0)
        } else {
            -erf(x) / r0
        };
        let rc2 = self.real_radius * self.real_radius;
        for img in &self.images {
            if img[0] == 0.0 && img[1] == 0.0 && img[2] == 0.0 {
                continue;
            }
            let dv = [c[0] - img[0], c[1] - img[1], c[2] - img[2]];
            let d2 = dv[0] * dv[0] + dv[1] * dv[1] + dv[2] * dv[2];
            if d2 > rc2 {
                continue;
            }
            let d = d2.sqrt();
            real += erfc(alpha * d) / d;
        }
        real + self.ewald_long(c)
    }

    fn ewald_long(&self, c: Vec3) -> f64 {
        let alpha = self.alpha;
        match &self.recip {
            Recip::None => 0.0,
            Recip::Line { k, nodes, weights } => {
                let l = self.len[0];
                let rho2 = c[1] * c[1] + c[2] * c[2];
                let t0 = 1.0 / (4.0 * alpha * alpha);
                let b = rho2 / (4.0 * t0);
                let mut sum = 0.0;
                for &km in k {
                    let a = km * km * t0;
                    if a > 60.0 {
                        break;
                    }
                    // ∫_0^U exp(−a e^u − b e^{−u}) du, integrand negligible beyond U
                    let upper = (60.0 / a).ln().max(1e-3);
                    let half = 0.5 * upper;
                    let mut integral = 0.0;
                    for (xi, wi) in nodes.iter().zip(weights) {
                        let u = half * (xi + 1.0);
                        let eu = u.exp();
                        integral += wi * (-a * eu - b / eu).exp();
                    }
                    sum += (km * c[0]).cos() * integral * half;
                }
                2.0 / l * sum - ein(alpha * alpha * rho2) / l
                    + (2.0 * (2.0 * alpha * l).ln() - EULER_GAMMA) / l
            }
            Recip::Plane { n, shells } => {
                let area = self.len[0] * self.len[1];
                let ex = phases(c[0], 2.0 * PI / self.len[0], n[0]);
                let ey = phases(c[1], 2.0 * PI / self.len[1], n[1]);
                let z = c[2];
                let mut sum = 0.0;
                for (k, members) in shells {
                    let zf = exp_erfc(k * z, k / (2.0 * alpha) + alpha * z)
                        + exp_erfc(-k * z, k / (2.0 * alpha) - alpha * z);
                    if zf == 0.0 {
                        continue;
                    }
                    let mut cs = 0.0;
                    for &[i, j] in members {
                        cs += ex[i].0 * ey[j].0 - ex[i].1 * ey[j].1;
                    }
                    sum += 2.0 * cs * zf / k;
                }
                let az = z.abs();
                PI / area * sum
                    - 2.0 * PI.sqrt() / area
                        * ((-alpha * alpha * z * z).exp() / alpha
                            + PI.sqrt() * az * erf(alpha * az))
            }
            Recip::Bulk { n, terms } => {
                let vol = self.len[0] * self.len[1] * self.len[2];
                let ex = phases(c[0], 2.0 * PI / self.len[0], n[0]);
                let ey = phases(c[1], 2.0 * PI / self.len[1], n[1]);
                let ez = phases(c[2], 2.0 * PI / self.len[2], n[2]);
                let mut sum = 0.0;
                for &([i, j, k], coef) in terms {
                    let (a, b) = ex[i];
                    let (p, q) = ey[j];
                    let re = a * p - b * q;
                    let im = a * q + b * p;
                    sum += coef * (re * ez[k].0 - im * ez[k].1);
                }
                sum - PI / (alpha * alpha * vol)
            }
        }
    }

    fn direct_smooth(&self, c: Vec3) -> f64 {
        let mut sum = 0.0;
        for img in &self.images {
            if img[0] == 0.0 && img[1] == 0.0 && img[2] == 0.0 {
                continue;
            }
            let dv = [c[0] - img[0], c[1] - img[1], c[2] - img[2]];
            sum += 1.0 / norm(dv) - 1.0 / norm(*img);
        }
        let m = self.direct_m as f64 + 0.5;
        match self.dims {
            1 => {
                let l = self.len[0];
                let rho2 = c[1] * c[1] + c[2] * c[2];
                sum + (2.0 * c[0] * c[0] - rho2) / (l * l * l * 2.0 * m * m)
            }
            2 => {
                let a = m * self.len[0];
                let area = self.len[0] * self.len[1];
                sum + 2.0 * 2f64.sqrt() / (area * a)
                    * (0.5 * (c[0] * c[0] + c[1] * c[1]) - c[2] * c[2])
            }
            _ => {
                let vol = self.len[0] * self.len[1] * self.len[2];
                sum + 2.0 * PI / (3.0 * vol) * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2])
            }
        }
    }
}

/// `(cos mθ, sin mθ)` for `m ∈ [−n, n]` at index `m + n`, with `θ = k₁ x`.
fn phases(x: f64, k1: f64, n: usize) -> Vec<(f64, f64)> {
    let mut out = vec![(1.0, 0.0); 2 * n + 1];
    let (s, c) = (k1 * x).sin_cos();
    let mut cur = (1.0, 0.0);
    for m in 1..=n {
        cur = (cur.0 * c - cur.1 * s, cur.0 * s + cur.1 * c);
        // refresh periodically to bound recurrence drift
        if m % 16 == 0 {
            let (sm, cm) = (k1 * x * m as f64).sin_cos();
            cur = (cm, sm);
        }
        out[n + m] = cur;
        out[n - m] = (cur.0, -cur.1);
    }
    out
}

fn lattice(d: usize, n: [usize; 3], len: [f64; 3], keep: impl Fn(Vec3) -> bool) -> Vec<Vec3> {
    let r = |c: usize| if c < d { n[c] as i64 } else { 0 };
    let mut out = Vec::new();
    for i in -r(0)..=r(0) {
        for j in -r(1)..=r(1) {
            for k in -r(2)..=r(2) {
                let v = [i as f64 * len[0], j as f64 * len[1], k as f64 * len[2]];
                if keep(v) {
                    out.push(v);
                }
            }
        }
    }
    out
}

/// One line of the method-agreement suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SelftestCheck {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl SelftestCheck {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

/// Cross-checks the evaluators on unit lattices in 1, 2 and 3 dimensions:
/// Ewald against truncated direct summation on differences, invariance under
/// doubling the splitting parameter, and lattice periodicity.
pub fn selftest() -> Result<Vec<SelftestCheck>, PgfError> {
    let cases: [(&str, PgfSpec, usize); 3] = [
        (
            "1d",
            PgfSpec::new([true, false, false], [1.0, 0.0, 0.0]),
            3000,
        ),
        (
            "2d",
            PgfSpec::new([true, true, false], [1.0, 1.0, 0.0]),
            250,
        ),
        ("3d", PgfSpec::new([true; 3], [1.0; 3]), 60),
    ];
    let pts = [
        ([0.1, 0.2, -0.15], [-0.25, 0.05, 0.2]),
        ([0.3, -0.1, 0.05], [0.0, 0.25, -0.3]),
        ([0.45, 0.4, 0.1], [-0.05, -0.35, 0.4]),
    ];
    let mut out = Vec::new();
    for (label, spec, m) in cases {
        let tol = (3.0 * spec.target_rel_error).max(1e-5);
        let ew = Pgf::new(&spec)?;
        let mut dspec = spec.clone().with_method(PgfMethod::TruncatedDirect);
        dspec.real_cutoff = Some(m);
        let td = Pgf::new(&dspec)?;
        let alpha2 = Pgf::new(&spec.clone().with_alpha(2.0 * ew.alpha()))?;
        let (mut agree, mut split, mut period) = (0.0f64, 0.0f64, 0.0f64);
        for (r1, r2) in pts {
            let a = ew.difference(r1, r2)?;
            let b = td.difference(r1, r2)?;
            agree = agree.max((a - b).abs() / a.abs().max(1.0));
            let c = alpha2.difference(r1, r2)?;
            split = split.max((a - c).abs() / a.abs().max(1.0));
            let v = ew.eval(r1)?;
            for ax in 0..spec.dims() {
                let mut s = r1;
                s[ax] += 1.0;
                period = period.max((ew.eval(s)? - v).abs() / v.abs().max(1.0));
            }
        }
        out.push(SelftestCheck {
            name: format!("{label} ewald vs truncated direct"),
            error: agree,
            tolerance: tol,
        });
        out.push(SelftestCheck {
            name: format!("{label} splitting parameter x2"),
            error: split,
            tolerance: 10.0 * spec.target_rel_error,
        });
        out.push(SelftestCheck {
            name: format!("{label} lattice periodicity"),
            error: period,
            tolerance: 10.0 * spec.target_rel_error,
        });
    }
    Ok(out)
}
