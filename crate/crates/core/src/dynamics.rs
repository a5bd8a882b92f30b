//! LLG time integration, relaxation and hysteresis drivers, and the thin-film
//! spin-wave dispersion used as an analytic reference.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Result;
use crate::femops::Anisotropy;
use crate::field::{anisotropy_at, anisotropy_energy_density, EffectiveField, Energies};
use crate::math::{add, cross, dot, norm, normalize, scale, sub, Vec3};
use crate::special::brent;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("corrector did not converge at t = {t:e} s even with dt = {dt:e} s")]
    CorrectorStalled { t: f64, dt: f64 },
    #[error("time step fell below dt_min ({dt_min:e} s) at t = {t:e} s")]
    StepTooSmall { t: f64, dt_min: f64 },
    #[error("no dispersion root for k in [{lo:e}, {hi:e}] cm^-1")]
    NoRoot { lo: f64, hi: f64 },
    #[error("{0}")]
    Invalid(String),
}

/// LLG constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlgParams {
    /// Gyromagnetic ratio, rad s⁻¹ Oe⁻¹.
    pub gamma: f64,
    /// Replaces the nodal damping when set.
    pub alpha_override: Option<f64>,
    pub renormalize_every: usize,
}

impl Default for LlgParams {
    fn default() -> Self {
        LlgParams {
            gamma: 1.7595e7,
            alpha_override: None,
            renormalize_every: 1,
        }
    }
}

impl LlgParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.gamma > 0.0) {
            return Err(DynamicsError::Invalid("gamma must be positive".into()));
        }
        if let Some(a) = self.alpha_override {
            if !(a >= 0.0) {
                return Err(DynamicsError::Invalid("alpha must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// `dM/dt = −γ/(1+α²) [M×H + (α/Ms) M×(M×H)]` at one node.
#[inline]
pub fn llg_rhs_node(m: Vec3, h: Vec3, ms: f64, alpha: f64, gamma: f64) -> Vec3 {
    let mxh = cross(m, h);
    let damp = cross(m, mxh);
    scale(
        add(mxh, scale(damp, alpha / ms)),
        -gamma / (1.0 + alpha * alpha),
    )
}

pub fn llg_rhs(m: &[Vec3], h: &[Vec3], ms: &[f64], alpha: &[f64], params: &LlgParams) -> Vec<Vec3> {
    (0..m.len())
        .map(|n| {
            let a = params.alpha_override.unwrap_or(alpha[n]);
            llg_rhs_node(m[n], h[n], ms[n], a, params.gamma)
        })
        .collect()
}

/// Largest normalised torque `|M×H| / (Ms (|H| + 1 Oe))`.
pub fn max_torque(m: &[Vec3], h: &[Vec3], ms: &[f64]) -> f64 {
    (0..m.len())
        .map(|n| norm(cross(m[n], h[n])) / (ms[n] * (norm(h[n]) + 1.0)))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepperParams {
    /// Local error tolerance of the predictor–corrector pair.
    pub tol: f64,
    pub dt_initial: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// When false every step uses `dt_initial` and is always accepted.
    pub adaptive: bool,
    pub corrector_tol: f64,
    pub corrector_max_iter: usize,
}

impl Default for StepperParams {
    fn default() -> Self {
        StepperParams {
            tol: 1e-5,
            dt_initial: 1e-14,
            dt_min: 1e-20,
            dt_max: 1e-10,
            adaptive: true,
            corrector_tol: 1e-8,
            corrector_max_iter: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepperState {
    pub t: f64,
    pub dt: f64,
    pub m: Vec<Vec3>,
    pub m_prev: Vec<Vec3>,
    /// Error estimate of the last accepted step.
    pub error: f64,
    pub accepted: usize,
    pub rejected: usize,
    /// Largest `||M_n| − Ms| / Ms` seen before renormalisation.
    pub norm_drift: f64,
    history: Option<(Vec<Vec3>, f64)>,
    /// Step cap learned from corrector stalls; creeps upward while steps
    /// keep converging.
    ceiling: Option<f64>,
}

impl StepperState {
    pub fn new(m: Vec<Vec3>, params: &StepperParams) -> Self {
        StepperState {
            t: 0.0,
            dt: params.dt_initial,
            m_prev: m.clone(),
            m,
            error: 0.0,
            accepted: 0,
            rejected: 0,
            norm_drift: 0.0,
            history: None,
            ceiling: None,
        }
    }

    /// Forgets the multistep history and the learned step cap, e.g. after
    /// the field changed abruptly.
    pub fn reset_history(&mut self) {
        self.history = None;
        self.ceiling = None;
    }
}

fn rel_diff(a: &[Vec3], b: &[Vec3], scale_ref: f64) -> f64 {
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| crate::math::norm2(sub(*x, *y)))
        .sum();
    s.sqrt() / scale_ref
}

fn field_norm(a: &[Vec3]) -> f64 {
    a.iter().map(|v| crate::math::norm2(*v)).sum::<f64>().sqrt()
}

fn renormalize(m: &mut [Vec3], ms: &[f64]) -> f64 {
    let mut drift: f64 = 0.0;
    for (v, &s) in m.iter_mut().zip(ms) {
        let r = norm(*v);
        drift = drift.max((r - s).abs() / s);
        *v = scale(*v, s / r);
    }
    drift
}

fn rhs<F: EffectiveField + ?Sized>(
    model: &F,
    m: &[Vec3],
    t: f64,
    llg: &LlgParams,
) -> Result<Vec<Vec3>> {
    let h = model.effective_field(m, t)?;
    Ok(llg_rhs(m, &h, model.ms(), model.alpha(), llg))
}

/// Advances by one accepted step: AB2 predictor (Euler on the first step),
/// implicit-midpoint corrector by fixed-point iteration, error estimate from
/// their difference.
pub fn step<F: EffectiveField + ?Sized>(
    state: &mut StepperState,
    model: &F,
    llg: &LlgParams,
    params: &StepperParams,
) -> Result<()> {
    let f_n = rhs(model, &state.m, state.t, llg)?;
    let mref = field_norm(&state.m).max(f64::MIN_POSITIVE);
    let adapt = |est: f64| (0.9 * (params.tol / est).powf(1.0 / 3.0)).clamp(0.3, 2.0);
    loop {
        let dt = state.dt;
        let pred: Vec<Vec3> = match &state.history {
            Some((f_old, dt_old)) => {
                let r = dt / dt_old;
                (0..state.m.len())
                    .map(|n| {
                        add(
                            state.m[n],
                            scale(
                                sub(scale(f_n[n], 1.0 + 0.5 * r), scale(f_old[n], 0.5 * r)),
                                dt,
                            ),
                        )
                    })
                    .collect()
            }
            None => state
                .m
                .iter()
                .zip(&f_n)
                .map(|(m, f)| add(*m, scale(*f, dt)))
                .collect(),
        };
        let mut x = pred.clone();
        let mut converged = false;
        let mut last = f64::INFINITY;
        let mut iters = 0;
        for it in 0..params.corrector_max_iter {
            iters = it + 1;
            let mid: Vec<Vec3> = state
                .m
                .iter()
                .zip(&x)
                .map(|(a, b)| scale(add(*a, *b), 0.5))
                .collect();
            let f_mid = rhs(model, &mid, state.t + 0.5 * dt, llg)?;
            let next: Vec<Vec3> = state
                .m
                .iter()
                .zip(&f_mid)
                .map(|(m, f)| add(*m, scale(*f, dt)))
                .collect();
            let delta = rel_diff(&next, &x, mref);
            x = next;
            if delta < params.corrector_tol {
                converged = true;
                break;
            }
            // the fixed-point map is not contracting at this step size
            if it >= 2 && delta > last {
                break;
            }
            last = delta;
        }
        if !converged {
            if !params.adaptive {
                return Err(DynamicsError::CorrectorStalled { t: state.t, dt }.into());
            }
            state.rejected += 1;
            state.dt = 0.5 * dt;
            state.ceiling = Some(0.9 * dt);
            if state.dt < params.dt_min {
                return Err(DynamicsError::CorrectorStalled { t: state.t, dt }.into());
            }
            continue;
        }
        let est = rel_diff(&x, &pred, mref);
        if params.adaptive && est >= params.tol {
            state.rejected += 1;
            state.dt = dt * adapt(est);
            if state.dt < params.dt_min {
                return Err(DynamicsError::StepTooSmall {
                    t: state.t,
                    dt_min: params.dt_min,
                }
                .into());
            }
            continue;
        }
        state.m_prev = std::mem::replace(&mut state.m, x);
        state.t += dt;
        state.error = est;
        state.accepted += 1;
        state.history = Some((f_n, dt));
        if llg.renormalize_every > 0 && state.accepted % llg.renormalize_every == 0 {
            let drift = renormalize(&mut state.m, model.ms());
            state.norm_drift = state.norm_drift.max(drift);
        }
        if params.adaptive {
            let factor = if est > 0.0 { adapt(est) } else { 2.0 };
            let mut next = dt * factor;
            // slow contraction costs more field evaluations than a shorter step
            if iters > 6 {
                next = next.min(0.7 * dt);
            }
            if let Some(c) = state.ceiling.as_mut() {
                next = next.min(*c);
                *c *= 1.01;
            }
            state.dt = next.clamp(params.dt_min, params.dt_max);
        }
        return Ok(());
    }
}

/// One row of a time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub m_avg: Vec3,
    pub energy: f64,
    pub dt: f64,
}

pub fn sample<F: EffectiveField + ?Sized>(state: &StepperState, model: &F) -> Result<Sample> {
    Ok(Sample {
        t: state.t,
        m_avg: crate::field::volume_average(model.volumes(), &state.m),
        energy: model.energies(&state.m, state.t)?.total(),
        dt: state.dt,
    })
}

/// Integrates to `t_end`, sampling whenever at least `every` seconds have
/// elapsed since the previous sample. The last step is shortened to land on
/// `t_end`.
pub fn run_dynamics<F: EffectiveField + ?Sized>(
    state: &mut StepperState,
    model: &F,
    llg: &LlgParams,
    params: &StepperParams,
    t_end: f64,
    every: f64,
) -> Result<Vec<Sample>> {
    llg.validate()?;
    let mut out = vec![sample(state, model)?];
    let mut next = state.t + every;
    while state.t < t_end * (1.0 - 1e-14) {
        if state.t + state.dt > t_end {
            state.dt = t_end - state.t;
        }
        step(state, model, llg, params)?;
        if state.t >= next * (1.0 - 1e-12) || state.t >= t_end * (1.0 - 1e-14) {
            out.push(sample(state, model)?);
            next = state.t + every;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelaxParams {
    /// Torque threshold for convergence.
    pub tau: f64,
    /// Damping used while relaxing.
    pub alpha: f64,
    pub max_steps: usize,
    /// Simulated-time budget, s.
    pub max_time: f64,
}

impl Default for RelaxParams {
    fn default() -> Self {
        RelaxParams {
            tau: 1e-4,
            alpha: 0.5,
            max_steps: 200_000,
            max_time: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelaxOutcome {
    pub converged: bool,
    pub steps: usize,
    pub torque: f64,
}

/// Integrates with elevated damping until the torque criterion holds or the
/// budget is spent.
pub fn relax<F: EffectiveField + ?Sized>(
    state: &mut StepperState,
    model: &F,
    llg: &LlgParams,
    params: &StepperParams,
    relax: &RelaxParams,
) -> Result<RelaxOutcome> {
    let damped = LlgParams {
        alpha_override: Some(relax.alpha),
        ..*llg
    };
    damped.validate()?;
    let t0 = state.t;
    let mut steps = 0;
    loop {
        let h = model.effective_field(&state.m, state.t)?;
        let torque = max_torque(&state.m, &h, model.ms());
        if torque < relax.tau {
            return Ok(RelaxOutcome {
                converged: true,
                steps,
                torque,
            });
        }
        if steps >= relax.max_steps || state.t - t0 >= relax.max_time {
            return Ok(RelaxOutcome {
                converged: false,
                steps,
                torque,
            });
        }
        step(state, model, &damped, params)?;
        steps += 1;
    }
}

/// Field sweep `H_max → H_min → H_max` along `axis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HysteresisSchedule {
    pub axis: Vec3,
    pub h_max: f64,
    pub h_min: f64,
    pub step: f64,
    /// Angle (rad) by which the field is tilted off `axis` to break the
    /// symmetry of perfectly aligned states.
    #[serde(default)]
    pub tilt: f64,
    /// Rotation (rad) applied to the magnetisation before each relaxation so
    /// that states stuck on an unstable equilibrium can leave it.
    #[serde(default)]
    pub kick: f64,
}

impl HysteresisSchedule {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.step > 0.0) || !(self.h_max > self.h_min) || norm(self.axis) == 0.0 {
            return Err(DynamicsError::Invalid(
                "hysteresis needs step > 0, h_max > h_min and a non-zero axis".into(),
            ));
        }
        Ok(())
    }

    /// Field values of the full loop.
    pub fn fields(&self) -> Vec<f64> {
        let n = ((self.h_max - self.h_min) / self.step).round() as usize;
        let down = (0..=n).map(|i| (self.h_max - i as f64 * self.step).max(self.h_min));
        let up = (1..=n).map(|i| (self.h_min + i as f64 * self.step).min(self.h_max));
        down.chain(up).collect()
    }

    fn perpendicular(&self) -> Vec3 {
        let a = normalize(self.axis);
        let helper = if a[0].abs() < 0.9 {
            [1.0, 0.0, 0.0]
        } else {
            [0.0, 1.0, 0.0]
        };
        normalize(cross(a, helper))
    }

    fn direction(&self) -> Vec3 {
        let a = normalize(self.axis);
        add(
            scale(a, self.tilt.cos()),
            scale(self.perpendicular(), self.tilt.sin()),
        )
    }
}

/// Rotates `v` by `angle` about the unit vector `k` (Rodrigues).
fn rotate(v: Vec3, k: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    add(
        add(scale(v, c), scale(cross(k, v), s)),
        scale(k, dot(k, v) * (1.0 - c)),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopPoint {
    pub h: f64,
    pub m_parallel: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HysteresisCurve {
    pub points: Vec<LoopPoint>,
    /// Magnitude of the descending-branch zero crossing.
    pub coercivity: Option<f64>,
}

/// Volume-weighted `⟨M·axis / Ms⟩`.
pub fn m_parallel<F: EffectiveField + ?Sized>(model: &F, m: &[Vec3], axis: Vec3) -> f64 {
    let a = normalize(axis);
    let v = model.volumes();
    let ms = model.ms();
    let total: f64 = v.iter().sum();
    (0..m.len())
        .map(|n| v[n] * dot(m[n], a) / ms[n])
        .sum::<f64>()
        / total
}

pub fn run_hysteresis<F: EffectiveField + ?Sized>(
    schedule: &HysteresisSchedule,
    state: &mut StepperState,
    model: &mut F,
    llg: &LlgParams,
    params: &StepperParams,
    relax_params: &RelaxParams,
) -> Result<HysteresisCurve> {
    let fields = schedule.fields();
    let points = run_branch(schedule, &fields, state, model, llg, params, relax_params)?;
    let descending = fields.len().div_ceil(2);
    let coercivity = coercivity(&points[..descending.min(points.len())]);
    Ok(HysteresisCurve { points, coercivity })
}

/// Relaxes at each of `fields` in turn, using the direction, tilt and kick
/// of `schedule`.
pub fn run_branch<F: EffectiveField + ?Sized>(
    schedule: &HysteresisSchedule,
    fields: &[f64],
    state: &mut StepperState,
    model: &mut F,
    llg: &LlgParams,
    params: &StepperParams,
    relax_params: &RelaxParams,
) -> Result<Vec<LoopPoint>> {
    schedule.validate()?;
    let dir = schedule.direction();
    let mut points = Vec::with_capacity(fields.len());
    for &h in fields {
        model.set_bias(scale(dir, h));
        if schedule.kick != 0.0 {
            let k = cross(normalize(schedule.axis), schedule.perpendicular());
            for v in state.m.iter_mut() {
                *v = rotate(*v, k, schedule.kick);
            }
        }
        state.reset_history();
        state.dt = params.dt_initial;
        let out = relax(state, &*model, llg, params, relax_params)?;
        points.push(LoopPoint {
            h,
            m_parallel: m_parallel(&*model, &state.m, schedule.axis),
            converged: out.converged,
        });
    }
    Ok(points)
}

/// `|H|` at the first downward zero crossing of `M_parallel`, interpolated
/// linearly between the bracketing points.
pub fn coercivity(branch: &[LoopPoint]) -> Option<f64> {
    zero_crossing(branch).map(f64::abs)
}

fn zero_crossing(branch: &[LoopPoint]) -> Option<f64> {
    branch.windows(2).find_map(|w| {
        let (a, b) = (&w[0], &w[1]);
        if a.m_parallel > 0.0 && b.m_parallel <= 0.0 {
            Some(a.h + (b.h - a.h) * a.m_parallel / (a.m_parallel - b.m_parallel))
        } else {
            None
        }
    })
}

/// Plain-data description of a [`Macrospin`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacrospinSpec {
    pub ms: f64,
    pub alpha: f64,
    #[serde(default)]
    pub anisotropy: Anisotropy,
    /// Diagonal demagnetising factors (sum 4π for a closed body, CGS).
    #[serde(default)]
    pub demag: Vec3,
    #[serde(default)]
    pub applied: Vec3,
}

/// A single uniformly magnetised particle with a diagonal demagnetising
/// tensor. Volume 1 cm³.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "MacrospinSpec", into = "MacrospinSpec")]
pub struct Macrospin {
    pub spec: MacrospinSpec,
    bias: Vec3,
    cache: [Vec<f64>; 3],
}

impl From<MacrospinSpec> for Macrospin {
    fn from(spec: MacrospinSpec) -> Self {
        Macrospin {
            spec,
            bias: [0.0; 3],
            cache: [vec![1.0], vec![spec.ms], vec![spec.alpha]],
        }
    }
}

impl From<Macrospin> for MacrospinSpec {
    fn from(m: Macrospin) -> Self {
        m.spec
    }
}

impl Macrospin {
    pub fn new(ms: f64, alpha: f64, anisotropy: Anisotropy, demag: Vec3, applied: Vec3) -> Self {
        MacrospinSpec {
            ms,
            alpha,
            anisotropy,
            demag,
            applied,
        }
        .into()
    }
}

impl EffectiveField for Macrospin {
    fn n_nodes(&self) -> usize {
        1
    }

    fn volumes(&self) -> &[f64] {
        &self.cache[0]
    }

    fn ms(&self) -> &[f64] {
        &self.cache[1]
    }

    fn alpha(&self) -> &[f64] {
        &self.cache[2]
    }

    fn effective_field(&self, m: &[Vec3], _t: f64) -> Result<Vec<Vec3>> {
        let (s, v) = (&self.spec, m[0]);
        let demag = [-s.demag[0] * v[0], -s.demag[1] * v[1], -s.demag[2] * v[2]];
        let h = add(
            add(s.applied, self.bias),
            add(demag, anisotropy_at(&s.anisotropy, s.ms, v)),
        );
        Ok(vec![h])
    }

    fn energies(&self, m: &[Vec3], _t: f64) -> Result<Energies> {
        let (s, v) = (&self.spec, m[0]);
        Ok(Energies {
            exchange: 0.0,
            magnetostatic: 0.5 * (0..3).map(|i| s.demag[i] * v[i] * v[i]).sum::<f64>(),
            anisotropy: anisotropy_energy_density(&s.anisotropy, s.ms, v),
            applied: -dot(v, add(s.applied, self.bias)),
        })
    }

    fn set_bias(&mut self, h: Vec3) {
        self.bias = h;
    }

    fn bias(&self) -> Vec3 {
        self.bias
    }
}

/// Thin-film spin-wave dispersion `ω²(k)` for propagation at angle `theta`
/// to the magnetisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilmDispersion {
    pub ms: f64,
    pub a_ex: f64,
    /// Film thickness, cm.
    pub thickness: f64,
    pub gamma: f64,
}

impl FilmDispersion {
    pub fn omega_m(&self) -> f64 {
        self.gamma * self.ms
    }

    /// Exchange constant `A/(2π Ms²)`, cm².
    pub fn gamma_ex(&self) -> f64 {
        self.a_ex / (2.0 * std::f64::consts::PI * self.ms * self.ms)
    }

    pub fn omega2(&self, k: f64, theta: f64) -> f64 {
        let wm = self.omega_m();
        let a = self.gamma_ex() * wm * k * k;
        let kd = k.abs() * self.thickness;
        let (s, c) = theta.sin_cos();
        a * (a + wm * (1.0 - kd * c * c / 2.0 + wm * kd * (2.0 - kd) * s * s / (4.0 * a)))
    }

    /// Smallest positive `k` (cm⁻¹) with `ω(k) = omega0`, searched on a
    /// logarithmic scan of `[k_lo, k_hi]` and refined by Brent's method.
    pub fn wavenumber(
        &self,
        theta: f64,
        omega0: f64,
        k_lo: f64,
        k_hi: f64,
    ) -> Result<f64, DynamicsError> {
        let f = |k: f64| self.omega2(k, theta) / (omega0 * omega0) - 1.0;
        let n = 2000;
        let ratio = (k_hi / k_lo).powf(1.0 / n as f64);
        let mut a = k_lo;
        let mut fa = f(a);
        for _ in 0..n {
            let b = a * ratio;
            let fb = f(b);
            if fa.signum() != fb.signum() {
                return brent(f, a, b, 1e-15 * b, 200)
                    .ok_or(DynamicsError::NoRoot { lo: a, hi: b });
            }
            a = b;
            fa = fb;
        }
        Err(DynamicsError::NoRoot { lo: k_lo, hi: k_hi })
    }
}

/// Spin-wave wavelength `2π/|k_sw|` (cm) at drive frequency `omega0` for
/// propagation angle `theta`.
pub fn kalinikos_dispersion(
    theta: f64,
    omega0: f64,
    ms: f64,
    a_ex: f64,
    thickness: f64,
    gamma: f64,
) -> Result<f64, DynamicsError> {
    let d = FilmDispersion {
        ms,
        a_ex,
        thickness,
        gamma,
    };
    let k = d.wavenumber(theta, omega0, 1.0, 1e10)?;
    Ok(2.0 * std::f64::consts::PI / k)
}
