//! Oracles shared by the acceptance runner and the integration tests. Each
//! returns the measured quantity; callers decide the threshold.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;

use pmfem::femops::{assemble_exchange, assemble_gradient, Anisotropy, Material, MaterialTable};
use pmfem::math::{dot, norm, normalize, scale};
use pmfem::mesh::{Mesh, PeriodicSpec};
use pmfem::meshgen::{box_mesh, parallelogram_mesh};
use pmfem::sparse::SparseOperator;
use pmfem::{Exec, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MS: f64 = 800.0;
pub const A_EX: f64 = 1.3e-6;

pub fn permalloy() -> MaterialTable {
    MaterialTable::single(Material {
        ms: MS,
        a_ex: A_EX,
        anisotropy: Anisotropy::None,
        alpha: 0.02,
    })
}

pub fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()
}

pub fn neutral_charges(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mean = q.iter().sum::<f64>() / n as f64;
    q.iter_mut().for_each(|v| *v -= mean);
    q
}

/// Slanted (or straight, `offset = 0`) bar of `periods` periods along x.
fn bar(periods: usize, cells: [usize; 3], l: f64, offset: f64) -> Mesh {
    let c = [cells[0] * periods, cells[1], cells[2]];
    parallelogram_mesh(c, l * periods as f64, 1.0, 0.5, offset)
}

/// Lattice key of a node of a slanted bar, modulo one period along x.
fn key(p: Vec3, cells: [usize; 3], l: f64, offset: f64) -> [i64; 3] {
    let (hx, hy, hz) = (
        l / cells[0] as f64,
        1.0 / cells[1] as f64,
        0.5 / cells[2] as f64,
    );
    let u = p[0] - offset * p[1];
    let nx = cells[0] as i64;
    [
        ((u / hx).round() as i64).rem_euclid(nx),
        (p[1] / hy).round() as i64,
        (p[2] / hz).round() as i64,
    ]
}

/// Largest entrywise difference, relative to the operator's largest entry,
/// between operators assembled on a periodic one-period bar and on the
/// explicitly unrolled two-period bar, with the latter restricted to rows
/// of one interior period and its columns folded onto periodic classes.
pub fn fold_equivalence(offset: f64) -> f64 {
    let (cells, l) = ([6, 2, 2], 1.0);
    let spec = PeriodicSpec::new([true, false, false], [l, 0.0, 0.0]);
    let periodic = bar(1, cells, l, offset).prepare_periodic(&spec).unwrap();
    let unrolled = bar(2, cells, l, offset);
    let mat = permalloy();

    let mut class_of_key = BTreeMap::new();
    for (n, p) in periodic.nodes.iter().enumerate() {
        class_of_key.insert(key(*p, cells, l, offset), periodic.lca()[n]);
    }
    let class: Vec<usize> = unrolled
        .nodes
        .iter()
        .map(|p| class_of_key[&key(*p, cells, l, offset)])
        .collect();
    let rows: Vec<usize> = (0..unrolled.n_nodes())
        .filter(|&n| {
            let u = unrolled.nodes[n][0] - offset * unrolled.nodes[n][1];
            u >= 0.5 * l - 1e-9 && u < 1.5 * l - 1e-9
        })
        .collect();
    assert_eq!(rows.len(), periodic.n_parents());

    let compare = |a: &SparseOperator, b: &SparseOperator| -> f64 {
        let scale = a.norm_inf().max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for &r in &rows {
            let mut folded: BTreeMap<usize, f64> = BTreeMap::new();
            let (cols, vals) = b.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                *folded.entry(class[c]).or_default() += v;
            }
            let pr = class[r];
            let (pc, pv) = a.row(pr);
            for (&c, &v) in pc.iter().zip(pv) {
                folded.entry(c).or_default();
                worst = worst.max((folded[&c] - v).abs());
            }
            for (&c, &v) in &folded {
                if !pc.contains(&c) {
                    worst = worst.max(v.abs());
                }
            }
        }
        worst / scale
    };
    let ex_p = assemble_exchange(&periodic, &mat, Exec::Sequential).unwrap();
    let ex_u = assemble_exchange(&unrolled, &mat, Exec::Sequential).unwrap();
    let gr_p = assemble_gradient(&periodic, Exec::Sequential).unwrap();
    let gr_u = assemble_gradient(&unrolled, Exec::Sequential).unwrap();
    let mut worst = compare(&ex_p, &ex_u);
    for c in 0..3 {
        worst = worst.max(compare(&gr_p[c], &gr_u[c]));
    }
    worst
}

/// `max |H_ex| / (|K|_∞ Ms)` for a uniform magnetisation on a periodic film.
pub fn uniform_exchange_residual() -> f64 {
    let spec = PeriodicSpec::new([true, true, false], [1e-5, 0.8e-5, 0.0]);
    let mesh = box_mesh([5, 4, 3], [1e-5, 0.8e-5, 0.6e-5], [0.0; 3])
        .prepare_periodic(&spec)
        .unwrap();
    let op = assemble_exchange(&mesh, &permalloy(), Exec::Sequential).unwrap();
    let m = vec![scale(normalize([0.2, -0.6, 0.7]), MS); mesh.n_parents()];
    let h = op.apply_vec(&m, Exec::Sequential);
    h.iter().map(|v| norm(*v)).fold(0.0, f64::max) / (op.norm_inf() * MS)
}

/// Relative RMS error of `H_ex` for `M_y = Ms sin(2πx/L)` on a periodic bar
/// with `nx` cells per period, against `-(2A/Ms²)(2π/L)² M`.
pub fn exchange_sinusoid_error(nx: usize) -> f64 {
    let l = 1e-5;
    let spec = PeriodicSpec::new([true, false, false], [l, 0.0, 0.0]);
    let mesh = box_mesh([nx, 2, 2], [l, 0.2 * l, 0.2 * l], [0.0; 3])
        .prepare_periodic(&spec)
        .unwrap();
    let op = assemble_exchange(&mesh, &permalloy(), Exec::Sequential).unwrap();
    let k = 2.0 * PI / l;
    let np = mesh.n_parents();
    let m: Vec<Vec3> = (0..np)
        .map(|n| {
            let s = (k * mesh.nodes[n][0]).sin();
            [0.0, MS * s, MS * (1.0 - s * s).sqrt()]
        })
        .collect();
    let h = op.apply_vec(&m, Exec::Sequential);
    let lambda = -2.0 * A_EX / (MS * MS) * k * k;
    let (mut num, mut den) = (0.0, 0.0);
    for n in 0..np {
        let want = lambda * m[n][1];
        num += (h[n][1] - want).powi(2);
        den += want * want;
    }
    (num / den).sqrt()
}

/// Largest angle (degrees) between a node's magnetisation and the mean
/// after relaxing a uniform in-plane state on a 40×40×10 nm platelet, with
/// or without in-plane periodicity.
pub fn relaxed_nonuniformity(periodic: bool) -> (f64, bool) {
    use pmfem::dynamics::{relax, LlgParams, RelaxParams, StepperParams, StepperState};
    use pmfem::field::{EffectiveField, FieldAssembly, FieldOptions};
    let (l, t) = (4e-6, 1e-6);
    let raw = box_mesh([8, 8, 2], [l, l, t], [0.0; 3]);
    let mesh = if periodic {
        raw.prepare_periodic(&PeriodicSpec::new([true, true, false], [l, l, 0.0]))
            .unwrap()
    } else {
        raw
    };
    let fa = FieldAssembly::new(
        &mesh,
        &permalloy(),
        vec![],
        &FieldOptions::default(),
        Exec::Sequential,
    )
    .unwrap();
    let m0 = vec![scale(normalize([1.0, 0.3, 0.0]), MS); fa.n_nodes()];
    let params = StepperParams::default();
    let mut st = StepperState::new(m0, &params);
    let rp = RelaxParams {
        tau: 1e-3,
        max_steps: 20_000,
        ..Default::default()
    };
    let out = relax(&mut st, &fa, &LlgParams::default(), &params, &rp).unwrap();
    let avg = normalize(pmfem::field::volume_average(fa.volumes(), &st.m));
    let worst =
        st.m.iter()
            .map(|v| dot(normalize(*v), avg).clamp(-1.0, 1.0).acos())
            .fold(0.0, f64::max);
    (worst.to_degrees(), out.converged)
}
