//! Run artefacts: CSV tables, legacy-VTK field dumps and the run manifest.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::dynamics::{HysteresisCurve, Sample};
use crate::math::Vec3;
use crate::mesh::Mesh;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Shortest round-trip text for `v`, in scientific notation outside
/// `[1e-3, 1e6)`.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-3..1e6).contains(&a) || !a.is_finite() {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

/// Writes an RFC-4180 table (CRLF line ends, quoting where required).
pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> std::io::Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_path(path)
        .map_err(std::io::Error::other)?;
    w.write_record(header).map_err(std::io::Error::other)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>())
            .map_err(std::io::Error::other)?;
    }
    w.flush()
}

pub fn write_time_series(path: &Path, samples: &[Sample]) -> std::io::Result<()> {
    write_csv(
        path,
        &["t", "<Mx>", "<My>", "<Mz>", "E_total", "dt"],
        samples.iter().map(|s| {
            [s.t, s.m_avg[0], s.m_avg[1], s.m_avg[2], s.energy, s.dt]
                .map(format_f64)
                .to_vec()
        }),
    )
}

pub fn write_hysteresis(path: &Path, curve: &HysteresisCurve) -> std::io::Result<()> {
    write_csv(
        path,
        &["H", "M_parallel"],
        curve
            .points
            .iter()
            .map(|p| vec![format_f64(p.h), format_f64(p.m_parallel)]),
    )
}

/// Legacy-VTK unstructured grid with per-node vector data. Fields are given
/// on parent nodes and expanded to every mesh node through the LCA map.
pub fn write_vtk(path: &Path, mesh: &Mesh, fields: &[(&str, &[Vec3])]) -> std::io::Result<()> {
    let lca = mesh.lca();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# vtk DataFile Version 3.0\npmfem fields\nASCII\nDATASET UNSTRUCTURED_GRID"
    );
    let _ = writeln!(s, "POINTS {} double", mesh.nodes.len());
    for p in &mesh.nodes {
        let _ = writeln!(
            s,
            "{} {} {}",
            format_f64(p[0]),
            format_f64(p[1]),
            format_f64(p[2])
        );
    }
    let _ = writeln!(s, "CELLS {} {}", mesh.tets.len(), 5 * mesh.tets.len());
    for t in &mesh.tets {
        let _ = writeln!(s, "4 {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    let _ = writeln!(s, "CELL_TYPES {}", mesh.tets.len());
    for _ in &mesh.tets {
        s.push_str("10\n");
    }
    let _ = writeln!(s, "POINT_DATA {}", mesh.nodes.len());
    for (name, f) in fields {
        assert_eq!(
            f.len(),
            mesh.n_parents(),
            "field {name} is not on parent nodes"
        );
        let _ = writeln!(s, "VECTORS {name} double");
        for &p in lca {
            let v = f[p];
            let _ = writeln!(
                s,
                "{} {} {}",
                format_f64(v[0]),
                format_f64(v[1]),
                format_f64(v[2])
            );
        }
    }
    std::fs::write(path, s)
}

/// Plain-text `key: value` manifest listing inputs, outputs with their
/// hashes, and the resolved configuration.
#[derive(Debug, Default, Clone)]
pub struct Manifest {
    entries: Vec<(String, String)>,
    outputs: Vec<PathBuf>,
    config: String,
}

impl Manifest {
    pub fn new(config_text: &str) -> Self {
        let mut m = Manifest {
            config: config_text.to_string(),
            ..Default::default()
        };
        m.set("pmfem_version", env!("CARGO_PKG_VERSION"));
        m.set("config_sha256", sha256_hex(config_text.as_bytes()));
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let v = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = v,
            None => self.entries.push((key.to_string(), v)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn add_output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        for (k, v) in &self.entries {
            writeln!(f, "{k}: {v}")?;
        }
        for o in &self.outputs {
            let hash = sha256_hex(&std::fs::read(o)?);
            let name = o
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            writeln!(f, "output: {name} sha256={hash}")?;
        }
        writeln!(f, "\n# resolved configuration")?;
        f.write_all(self.config.as_bytes())
    }
}
