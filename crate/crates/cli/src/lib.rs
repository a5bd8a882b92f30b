//! Run pipeline behind the `pmfem` binary: load, fold and pair the mesh,
//! assemble the field model, run the selected mode and write its artefacts.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pmfem::baim::{direct_psp_oracle, relative_rms_modulo_constant, Baim};
use pmfem::config::{InitialState, Mode, OperatorDump, SimulationConfig};
use pmfem::dynamics::{relax, run_dynamics, run_hysteresis, sample, StepperState};
use pmfem::field::{EffectiveField, FieldAssembly};
use pmfem::math::{norm, normalize, scale};
use pmfem::mesh::Mesh;
use pmfem::output::{self, Manifest};
use pmfem::pgf::{self, Pgf, PgfSpec};
use pmfem::sparse::{OperatorKind, SparseOperator};
use pmfem::{Exec, Vec3};

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mesh: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub dump_operator: Option<(String, PathBuf)>,
    pub dump_fields: Option<PathBuf>,
    pub points_per_box: Option<f64>,
    pub rer_scale: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut SimulationConfig) {
        if let Some(p) = &self.mesh {
            cfg.mesh.path = Some(p.clone());
            cfg.mesh.generate = None;
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some((kind, path)) = &self.dump_operator {
            cfg.output.dump_operator.push(OperatorDump {
                kind: kind.clone(),
                path: path.clone(),
            });
        }
        if let Some(p) = &self.dump_fields {
            cfg.output.dump_fields = Some(p.clone());
        }
        if let Some(v) = self.points_per_box {
            cfg.field.baim.points_per_box = v;
        }
        if let Some(v) = self.rer_scale {
            cfg.field.baim.rer_scale = v;
        }
    }
}

/// What a run printed and wrote.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub lines: Vec<String>,
    pub outputs: Vec<PathBuf>,
    /// Relative RMS of the oracle comparison, when one ran.
    pub oracle_error: Option<f64>,
    /// max|H_ms| / 4πMs from a field check.
    pub field_ratio: Option<f64>,
    pub coercivity: Option<f64>,
}

impl RunReport {
    fn say(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }
}

pub fn exec_for(threads: usize) -> Exec {
    if threads > 1 {
        pmfem::exec::set_threads(threads);
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

pub fn run(cfg: &SimulationConfig) -> Result<RunReport> {
    cfg.validate()?;
    let exec = exec_for(cfg.threads);
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let effective = cfg.to_toml()?;
    let mut manifest = Manifest::new(&effective);
    manifest.set("mode", format!("{:?}", cfg.mode));
    manifest.set("threads", cfg.threads);
    let mut report = RunReport::default();

    let raw = if cfg.mode == Mode::PgfSelftest {
        None
    } else if cfg.macrospin.is_some()
        && matches!(cfg.mode, Mode::Relax | Mode::Dynamics | Mode::Hysteresis)
    {
        None
    } else {
        cfg.build_mesh()?
    };
    if let Some(m) = &raw {
        manifest.set("mesh_sha256", m.fingerprint_hex());
    }

    match cfg.mode {
        Mode::PgfSelftest => pgf_selftest(&mut report)?,
        Mode::OracleCheck => oracle_check(cfg, raw.as_ref(), exec, &mut report)?,
        _ => match raw {
            Some(mesh) => mesh_mode(cfg, &mesh, exec, &mut report)?,
            None => macrospin_mode(cfg, &mut report)?,
        },
    }

    let cfg_path = dir.join("effective_config.toml");
    fs::write(&cfg_path, &effective)?;
    for o in &report.outputs {
        manifest.add_output(o);
    }
    manifest.add_output(&cfg_path);
    if let Some(e) = report.oracle_error {
        manifest.set("oracle_relative_rms", e);
    }
    let man_path = dir.join("manifest.txt");
    manifest.write(&man_path)?;
    report.outputs.push(cfg_path);
    report.outputs.push(man_path);
    Ok(report)
}

fn pgf_selftest(report: &mut RunReport) -> Result<()> {
    let checks = pgf::selftest()?;
    let mut failed = 0;
    for c in &checks {
        let verdict = if c.passed() { "ok" } else { "FAILED" };
        report.say(format!(
            "{:<36} error {:.3e} tol {:.1e}  {verdict}",
            c.name, c.error, c.tolerance
        ));
        failed += usize::from(!c.passed());
    }
    if failed > 0 {
        bail!(
            "{failed} of {} Green's function checks failed",
            checks.len()
        );
    }
    Ok(())
}

/// Zero-mean random charges.
fn neutral_charges(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mean = q.iter().sum::<f64>() / n as f64;
    q.iter_mut().for_each(|v| *v -= mean);
    q
}

fn oracle_check(
    cfg: &SimulationConfig,
    raw: Option<&Mesh>,
    exec: Exec,
    report: &mut RunReport,
) -> Result<()> {
    let spec = cfg.periodic.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let points: Vec<Vec3> = match raw {
        Some(m) => {
            let mesh = if spec.is_periodic() {
                m.prepare_periodic(&spec)?
            } else {
                m.clone()
            };
            mesh.potential_positions()
        }
        None => {
            let lmax = spec.periods.iter().cloned().fold(0.0, f64::max);
            (0..cfg.oracle.points)
                .map(|_| {
                    let mut p = [0.0; 3];
                    for (a, v) in p.iter_mut().enumerate() {
                        let l = if spec.periodic[a] {
                            spec.periods[a]
                        } else {
                            lmax
                        };
                        *v = rng.gen::<f64>() * l;
                    }
                    p
                })
                .collect()
        }
    };
    let q = neutral_charges(points.len(), &mut rng);
    let pgf_spec = PgfSpec::from_periodic(&spec).with_method(cfg.field.pgf_method);
    let t0 = std::time::Instant::now();
    let baim = Baim::new(&points, &spec, &pgf_spec, &cfg.field.baim, exec)?;
    let u = baim.compute_psp(&q)?;
    let fast = t0.elapsed();
    let t1 = std::time::Instant::now();
    let reference = direct_psp_oracle(&points, &q, &Pgf::new(&pgf_spec)?, exec)?;
    let slow = t1.elapsed();
    let err = relative_rms_modulo_constant(&u, &reference);
    report.say(format!("points: {}", points.len()));
    report.say(format!("grid dims: {:?}", baim.grid().dims));
    report.say(format!(
        "potential solver: {:.3} s, direct sum: {:.3} s",
        fast.as_secs_f64(),
        slow.as_secs_f64()
    ));
    report.say(format!("oracle relative RMS: {err:.3e}"));
    report.oracle_error = Some(err);
    Ok(())
}

fn initial_state(cfg: &SimulationConfig, ms: &[f64]) -> Vec<Vec3> {
    match cfg.initial {
        InitialState::Uniform { direction } => {
            let d = normalize(direction);
            ms.iter().map(|&s| scale(d, s)).collect()
        }
        InitialState::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            ms.iter()
                .map(|&s| loop {
                    let v: Vec3 = [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ];
                    let r = norm(v);
                    if r > 1e-3 && r <= 1.0 {
                        break scale(v, s / r);
                    }
                })
                .collect()
        }
    }
}

fn operator_by_kind<'a>(
    model: &'a FieldAssembly,
    kind: OperatorKind,
) -> Result<&'a SparseOperator> {
    let need_baim = || {
        model
            .baim()
            .context("projection and correction operators need the magnetostatic term enabled")
    };
    Ok(match kind {
        OperatorKind::Laplace => model.exchange_operator(),
        OperatorKind::Charge(a) => &model.charge_operators()[a],
        OperatorKind::Grad(a) => &model.gradient_operators()[a],
        OperatorKind::Projection => need_baim()?.interpolation(),
        OperatorKind::Correction => &need_baim()?.correction().matrix,
    })
}

fn mesh_mode(cfg: &SimulationConfig, raw: &Mesh, exec: Exec, report: &mut RunReport) -> Result<()> {
    let spec = cfg.periodic.spec();
    let mesh = if spec.is_periodic() {
        let prepared = raw.prepare_periodic(&spec)?;
        let mut class = raw.classify_cell(&spec);
        class.touching = !prepared.pbc_pairs().is_empty();
        report.say(format!("cell: {class}, extent {:?} cm", class.extent));
        prepared
    } else {
        report.say("cell: free space");
        raw.clone()
    };
    let mut model =
        FieldAssembly::new(&mesh, &cfg.materials, cfg.applied.clone(), &cfg.field, exec)?;
    report.say(format!(
        "nodes N: {}, parents N': {}, tets: {}",
        mesh.n_nodes(),
        mesh.n_parents(),
        mesh.tets.len()
    ));
    if let Some(b) = model.baim() {
        report.say(format!("grid dims: {:?}", b.grid().dims));
    }
    for d in &cfg.output.dump_operator {
        let kind: OperatorKind = d.kind.parse().map_err(anyhow::Error::msg)?;
        let f =
            fs::File::create(&d.path).with_context(|| format!("creating {}", d.path.display()))?;
        operator_by_kind(&model, kind)?.write_triplets(std::io::BufWriter::new(f))?;
        report.outputs.push(d.path.clone());
    }

    let m0 = initial_state(cfg, model.ms());
    let mut state = StepperState::new(m0, &cfg.stepper);
    let dir = &cfg.output.dir;
    match cfg.mode {
        Mode::Fieldcheck => {
            let h = model.magnetostatic_field(&state.m)?;
            let ms_max = model.ms().iter().cloned().fold(0.0, f64::max);
            let ratio = h.iter().map(|v| norm(*v)).fold(0.0, f64::max) / (4.0 * PI * ms_max);
            report.say(format!("max|H_ms|/4piMs: {ratio:.3e}"));
            report.field_ratio = Some(ratio);
        }
        Mode::Relax => {
            let out = relax(&mut state, &model, &cfg.llg, &cfg.stepper, &cfg.relax)?;
            report.say(format!(
                "relax: converged {} after {} steps, torque {:.3e}",
                out.converged, out.steps, out.torque
            ));
            let path = dir.join("relax.csv");
            output::write_time_series(&path, &[sample(&state, &model)?])?;
            report.outputs.push(path);
        }
        Mode::Dynamics => {
            let samples = run_dynamics(
                &mut state,
                &model,
                &cfg.llg,
                &cfg.stepper,
                cfg.dynamics.t_end,
                cfg.dynamics.sample_every,
            )?;
            report.say(format!(
                "dynamics: {} accepted, {} rejected steps, norm drift {:.3e}",
                state.accepted, state.rejected, state.norm_drift
            ));
            let path = dir.join("timeseries.csv");
            output::write_time_series(&path, &samples)?;
            report.outputs.push(path);
        }
        Mode::Hysteresis => {
            let schedule = cfg.hysteresis.as_ref().context("missing [hysteresis]")?;
            let curve = run_hysteresis(
                schedule,
                &mut state,
                &mut model,
                &cfg.llg,
                &cfg.stepper,
                &cfg.relax,
            )?;
            hysteresis_outputs(dir, &curve, report)?;
        }
        Mode::PgfSelftest | Mode::OracleCheck => unreachable!("handled before mesh preparation"),
    }

    if let Some(path) = &cfg.output.dump_fields {
        let t = state.t;
        let fields: [(&str, Vec<Vec3>); 6] = [
            ("M", state.m.clone()),
            ("H_eff", model.effective_field(&state.m, t)?),
            ("H_ex", model.exchange_field(&state.m)?),
            ("H_ms", model.magnetostatic_field(&state.m)?),
            ("H_an", model.anisotropy_field(&state.m)?),
            ("H_app", model.applied_field(t)),
        ];
        let refs: Vec<(&str, &[Vec3])> = fields.iter().map(|(n, f)| (*n, f.as_slice())).collect();
        output::write_vtk(path, &mesh, &refs)?;
        report.outputs.push(path.clone());
    }
    Ok(())
}

fn hysteresis_outputs(
    dir: &Path,
    curve: &pmfem::dynamics::HysteresisCurve,
    report: &mut RunReport,
) -> Result<()> {
    let path = dir.join("hysteresis.csv");
    output::write_hysteresis(&path, curve)?;
    report.outputs.push(path);
    let unconverged = curve.points.iter().filter(|p| !p.converged).count();
    match curve.coercivity {
        Some(h) => report.say(format!("coercivity: {h:.4} Oe")),
        None => report.say("coercivity: no zero crossing on the descending branch"),
    }
    if unconverged > 0 {
        report.say(format!(
            "warning: {unconverged} field steps did not reach the torque threshold"
        ));
    }
    report.coercivity = curve.coercivity;
    Ok(())
}

fn macrospin_mode(cfg: &SimulationConfig, report: &mut RunReport) -> Result<()> {
    let mut model = cfg
        .macrospin
        .clone()
        .context("no mesh and no [macrospin] section")?;
    if cfg.output.dump_fields.is_some() || !cfg.output.dump_operator.is_empty() {
        bail!("field and operator dumps need a mesh");
    }
    report.say("macrospin");
    let mut state = StepperState::new(initial_state(cfg, model.ms()), &cfg.stepper);
    let dir = &cfg.output.dir;
    match cfg.mode {
        Mode::Relax => {
            let out = relax(&mut state, &model, &cfg.llg, &cfg.stepper, &cfg.relax)?;
            report.say(format!(
                "relax: converged {} after {} steps, torque {:.3e}",
                out.converged, out.steps, out.torque
            ));
            let path = dir.join("relax.csv");
            output::write_time_series(&path, &[sample(&state, &model)?])?;
            report.outputs.push(path);
        }
        Mode::Dynamics => {
            let samples = run_dynamics(
                &mut state,
                &model,
                &cfg.llg,
                &cfg.stepper,
                cfg.dynamics.t_end,
                cfg.dynamics.sample_every,
            )?;
            let path = dir.join("timeseries.csv");
            output::write_time_series(&path, &samples)?;
            report.outputs.push(path);
        }
        Mode::Hysteresis => {
            let schedule = cfg.hysteresis.as_ref().context("missing [hysteresis]")?;
            let curve = run_hysteresis(
                schedule,
                &mut state,
                &mut model,
                &cfg.llg,
                &cfg.stepper,
                &cfg.relax,
            )?;
            hysteresis_outputs(dir, &curve, report)?;
        }
        _ => bail!("mode {:?} needs a mesh", cfg.mode),
    }
    Ok(())
}
