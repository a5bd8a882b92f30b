//! Tetrahedral meshes with periodic node identification.
//!
//! A [`Mesh`] starts out as read from disk. [`Mesh::detect_pbc_pairs`] finds
//! nodes that are exact periodic translates of each other, merges every such
//! class to one parent with a union-find, and relabels nodes so the parents
//! (the unknowns) occupy `0..n_parents()`. [`Mesh::fold_protruding`] records a
//! per-node integer period shift that packs geometry extending beyond one
//! period back into a compact cell; the folded coordinates are used only by
//! the long-range potential solver, the finite-element operators always see
//! the original geometry.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::math::{norm, sub, tet_signed_volume, Vec3};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("tetrahedron {tet} is degenerate (volume {volume:e}, mean {mean:e})")]
    DegenerateTet { tet: usize, volume: f64, mean: f64 },
    #[error("periodic spec: {0}")]
    BadSpec(String),
    #[error("ambiguous periodic match for node {node}: candidates {a} and {b}")]
    AmbiguousMatch { node: usize, a: usize, b: usize },
    #[error("periodic class of node {parent} contains node {member} which is not an integer-period translate")]
    InconsistentComponent { parent: usize, member: usize },
}

/// Which axes are periodic, their periods, and the position tolerance used to
/// decide that two nodes are translates of each other.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicSpec {
    pub periodic: [bool; 3],
    /// Periods in cm. Entries for non-periodic axes are ignored.
    pub periods: [f64; 3],
    /// Absolute tolerance in cm; `None` means 1e-6 of the shortest mesh edge.
    #[serde(default)]
    pub match_tolerance: Option<f64>,
}

impl PeriodicSpec {
    pub fn none() -> Self {
        PeriodicSpec {
            periodic: [false; 3],
            periods: [0.0; 3],
            match_tolerance: None,
        }
    }

    pub fn new(periodic: [bool; 3], periods: [f64; 3]) -> Self {
        PeriodicSpec {
            periodic,
            periods,
            match_tolerance: None,
        }
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.match_tolerance = Some(tol);
        self
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic.iter().any(|&p| p)
    }

    pub fn dims(&self) -> usize {
        self.periodic.iter().filter(|&&p| p).count()
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        for ax in 0..3 {
            if self.periodic[ax] && !(self.periods[ax] > 0.0 && self.periods[ax].is_finite()) {
                return Err(MeshError::BadSpec(format!(
                    "period along axis {ax} must be positive, got {}",
                    self.periods[ax]
                )));
            }
        }
        if let Some(t) = self.match_tolerance {
            if !(t > 0.0) {
                return Err(MeshError::BadSpec(format!(
                    "match tolerance must be positive, got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Touching / protruding classification of a periodic unit cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellClassification {
    pub touching: bool,
    pub protruding: bool,
    pub extent: Vec3,
}

impl std::fmt::Display for CellClassification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}-{}-PBC",
            if self.touching { "T" } else { "NT" },
            if self.protruding { "P" } else { "NP" }
        )
    }
}

/// Per-node integer period shifts packing a protruding cell into one period.
#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub shifts: Vec<[i32; 3]>,
    pub center: Vec3,
    folded: Vec<Vec3>,
}

impl Fold {
    pub fn folded_nodes(&self) -> &[Vec3] {
        &self.folded
    }

    pub fn is_identity(&self) -> bool {
        self.shifts.iter().all(|s| *s == [0, 0, 0])
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    /// Node positions as loaded (cm).
    pub nodes: Vec<Vec3>,
    /// Positively oriented tetrahedra.
    pub tets: Vec<[usize; 4]>,
    /// Material region per tetrahedron.
    pub region: Vec<u32>,
    lca: Vec<usize>,
    n_parents: usize,
    pbc_pairs: Vec<(usize, usize)>,
    fold: Option<Fold>,
    spec: Option<PeriodicSpec>,
    /// `original_index[n]` is the index node `n` had in the input.
    original_index: Vec<usize>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> MeshError {
    MeshError::Parse {
        line,
        msg: msg.into(),
    }
}

impl Mesh {
    /// Builds a mesh from raw arrays. Negatively oriented tetrahedra are
    /// reoriented; near-zero volumes are rejected.
    pub fn from_parts(
        nodes: Vec<Vec3>,
        mut tets: Vec<[usize; 4]>,
        region: Vec<u32>,
    ) -> Result<Mesh, MeshError> {
        assert_eq!(tets.len(), region.len());
        let n = nodes.len();
        for (t, tet) in tets.iter().enumerate() {
            if let Some(&bad) = tet.iter().find(|&&i| i >= n) {
                return Err(parse_err(
                    0,
                    format!("tetrahedron {t} references node {bad}, only {n} nodes"),
                ));
            }
        }
        let vols: Vec<f64> = tets
            .iter()
            .map(|t| tet_signed_volume(nodes[t[0]], nodes[t[1]], nodes[t[2]], nodes[t[3]]))
            .collect();
        let mean = vols.iter().map(|v| v.abs()).sum::<f64>() / vols.len().max(1) as f64;
        for (t, &v) in vols.iter().enumerate() {
            if !(v.abs() >= 1e-12 * mean) || v == 0.0 {
                return Err(MeshError::DegenerateTet {
                    tet: t,
                    volume: v,
                    mean,
                });
            }
            if v < 0.0 {
                tets[t].swap(2, 3);
            }
        }
        Ok(Mesh {
            lca: (0..n).collect(),
            n_parents: n,
            pbc_pairs: Vec::new(),
            fold: None,
            spec: None,
            original_index: (0..n).collect(),
            nodes,
            tets,
            region,
        })
    }

    /// Parses the text format `nodes <N> tets <T>` followed by N lines of
    /// `x y z` and T lines of `i j k l tag`. Blank lines and `#` comments are
    /// skipped.
    pub fn parse(text: &str) -> Result<Mesh, MeshError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hl, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty mesh file"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 || h[0] != "nodes" || h[2] != "tets" {
            return Err(parse_err(hl, "expected header `nodes <N> tets <T>`"));
        }
        let n: usize = h[1].parse().map_err(|_| parse_err(hl, "bad node count"))?;
        let t: usize = h[3].parse().map_err(|_| parse_err(hl, "bad tet count"))?;
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| parse_err(0, "unexpected end of file in node block"))?;
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| parse_err(ln, format!("bad coordinate: {e}")))?;
            if v.len() != 3 || v.iter().any(|x| !x.is_finite()) {
                return Err(parse_err(ln, "expected three finite coordinates"));
            }
            nodes.push([v[0], v[1], v[2]]);
        }
        let mut tets = Vec::with_capacity(t);
        let mut region = Vec::with_capacity(t);
        for _ in 0..t {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| parse_err(0, "unexpected end of file in tet block"))?;
            let v: Vec<usize> = l
                .split_whitespace()
                .map(|s| s.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| parse_err(ln, format!("bad index: {e}")))?;
            if v.len() != 5 {
                return Err(parse_err(ln, "expected `i j k l tag`"));
            }
            if let Some(&bad) = v[..4].iter().find(|&&i| i >= n) {
                return Err(parse_err(
                    ln,
                    format!("node index {bad} out of range (N = {n})"),
                ));
            }
            tets.push([v[0], v[1], v[2], v[3]]);
            region.push(v[4] as u32);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(parse_err(ln, "trailing content after tet block"));
        }
        Mesh::from_parts(nodes, tets, region)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Mesh, MeshError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| MeshError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Mesh::parse(&text)
    }

    /// Serialises to the text format read by [`Mesh::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "nodes {} tets {}", self.nodes.len(), self.tets.len());
        for p in &self.nodes {
            let _ = writeln!(s, "{:e} {:e} {:e}", p[0], p[1], p[2]);
        }
        for (t, r) in self.tets.iter().zip(&self.region) {
            let _ = writeln!(s, "{} {} {} {} {}", t[0], t[1], t[2], t[3], r);
        }
        s
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Number of independent (parent) nodes N′.
    pub fn n_parents(&self) -> usize {
        self.n_parents
    }

    pub fn lca(&self) -> &[usize] {
        &self.lca
    }

    pub fn pbc_pairs(&self) -> &[(usize, usize)] {
        &self.pbc_pairs
    }

    pub fn fold(&self) -> Option<&Fold> {
        self.fold.as_ref()
    }

    pub fn periodic_spec(&self) -> Option<&PeriodicSpec> {
        self.spec.as_ref()
    }

    pub fn original_index(&self) -> &[usize] {
        &self.original_index
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        let k = self.tets[t];
        tet_signed_volume(
            self.nodes[k[0]],
            self.nodes[k[1]],
            self.nodes[k[2]],
            self.nodes[k[3]],
        )
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.tets.len()).map(|t| self.tet_volume(t)).sum()
    }

    pub fn shortest_edge(&self) -> f64 {
        let mut best = f64::INFINITY;
        for t in &self.tets {
            for a in 0..4 {
                for b in a + 1..4 {
                    best = best.min(norm(sub(self.nodes[t[a]], self.nodes[t[b]])));
                }
            }
        }
        best
    }

    pub fn mean_edge(&self) -> f64 {
        let mut sum = 0.0;
        for t in &self.tets {
            for a in 0..4 {
                for b in a + 1..4 {
                    sum += norm(sub(self.nodes[t[a]], self.nodes[t[b]]));
                }
            }
        }
        sum / (6 * self.tets.len().max(1)) as f64
    }

    /// Axis-aligned bounding box of `pts`.
    pub fn bounds_of(pts: &[Vec3]) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in pts {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }

    /// Positions of the parent nodes as seen by the potential solver: folded
    /// coordinates when a fold is present, the original ones otherwise.
    pub fn potential_positions(&self) -> Vec<Vec3> {
        let src = self
            .fold
            .as_ref()
            .map(|f| f.folded.as_slice())
            .unwrap_or(&self.nodes);
        src[..self.n_parents].to_vec()
    }

    /// Node coordinates after undoing the fold. These are the stored input
    /// coordinates, so the round trip is exact.
    pub fn unfolded_nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    fn resolved_tolerance(&self, spec: &PeriodicSpec) -> f64 {
        spec.match_tolerance
            .unwrap_or_else(|| 1e-6 * self.shortest_edge())
    }

    /// Finds periodic node pairs, merges them to their lowest common ancestor
    /// and relabels nodes so that parents come first.
    ///
    /// Image offsets of -1, 0 and +1 period are searched on every periodic
    /// axis, in folded coordinates when a fold is present; two nodes are
    /// identified when their original coordinates differ by a non-zero
    /// integer combination of periods.
    pub fn detect_pbc_pairs(&self, spec: &PeriodicSpec) -> Result<Mesh, MeshError> {
        spec.validate()?;
        let n = self.nodes.len();
        let tol = self.resolved_tolerance(spec);
        let coords: &[Vec3] = self
            .fold
            .as_ref()
            .map(|f| f.folded.as_slice())
            .unwrap_or(&self.nodes);
        let no_shift = vec![[0i32; 3]; n];
        let shifts: &[[i32; 3]] = self
            .fold
            .as_ref()
            .map(|f| f.shifts.as_slice())
            .unwrap_or(&no_shift);

        let cell = 4.0 * tol;
        let key = |p: Vec3| -> [i64; 3] {
            [
                (p[0] / cell).floor() as i64,
                (p[1] / cell).floor() as i64,
                (p[2] / cell).floor() as i64,
            ]
        };
        let mut hash: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, &p) in coords.iter().enumerate() {
            hash.entry(key(p)).or_default().push(i);
        }

        let offsets: Vec<[i32; 3]> = {
            let range = |ax: usize| if spec.periodic[ax] { -1..=1 } else { 0..=0 };
            let mut v = Vec::new();
            for i in range(0) {
                for j in range(1) {
                    for k in range(2) {
                        v.push([i, j, k]);
                    }
                }
            }
            v
        };

        let mut uf = UnionFind::new(n);
        let mut found = Vec::with_capacity(4);
        for j in 0..n {
            for off in &offsets {
                let target = [
                    coords[j][0] + off[0] as f64 * spec.periods[0],
                    coords[j][1] + off[1] as f64 * spec.periods[1],
                    coords[j][2] + off[2] as f64 * spec.periods[2],
                ];
                found.clear();
                let k = key(target);
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        for dz in -1..=1 {
                            if let Some(list) = hash.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                                for &i in list {
                                    if i != j && norm(sub(coords[i], target)) <= tol {
                                        found.push(i);
                                    }
                                }
                            }
                        }
                    }
                }
                for &i in found.iter() {
                    // total period offset between the original coordinates
                    let total = [
                        off[0] + shifts[j][0] - shifts[i][0],
                        off[1] + shifts[j][1] - shifts[i][1],
                        off[2] + shifts[j][2] - shifts[i][2],
                    ];
                    if total == [0, 0, 0] {
                        continue;
                    }
                    // two candidates with the same original position are duplicates
                    if let Some(&other) = found.iter().find(|&&o| o != i && shifts[o] == shifts[i])
                    {
                        return Err(MeshError::AmbiguousMatch {
                            node: self.original_index[j],
                            a: self.original_index[i.min(other)],
                            b: self.original_index[i.max(other)],
                        });
                    }
                    uf.union(i, j);
                }
            }
        }

        // Parent of each class: its minimum current index.
        let mut root_min = vec![usize::MAX; n];
        for i in 0..n {
            let r = uf.find(i);
            root_min[r] = root_min[r].min(i);
        }
        let parent_of: Vec<usize> = (0..n).map(|i| root_min[uf.find(i)]).collect();

        for i in 0..n {
            let p = parent_of[i];
            if p == i {
                continue;
            }
            let d = sub(self.nodes[i], self.nodes[p]);
            for ax in 0..3 {
                let ok = if spec.periodic[ax] {
                    let s = d[ax] / spec.periods[ax];
                    (s - s.round()).abs() * spec.periods[ax] <= 2.0 * tol
                } else {
                    d[ax].abs() <= 2.0 * tol
                };
                if !ok {
                    return Err(MeshError::InconsistentComponent {
                        parent: self.original_index[p],
                        member: self.original_index[i],
                    });
                }
            }
        }

        // Parents first, children after, each group in current order.
        let mut order: Vec<usize> = (0..n).filter(|&i| parent_of[i] == i).collect();
        let n_parents = order.len();
        order.extend((0..n).filter(|&i| parent_of[i] != i));
        let mut new_of = vec![0usize; n];
        for (new, &old) in order.iter().enumerate() {
            new_of[old] = new;
        }

        let nodes: Vec<Vec3> = order.iter().map(|&o| self.nodes[o]).collect();
        let tets: Vec<[usize; 4]> = self
            .tets
            .iter()
            .map(|t| [new_of[t[0]], new_of[t[1]], new_of[t[2]], new_of[t[3]]])
            .collect();
        let lca: Vec<usize> = order.iter().map(|&o| new_of[parent_of[o]]).collect();
        let pbc_pairs: Vec<(usize, usize)> = (n_parents..n).map(|c| (lca[c], c)).collect();
        let fold = self.fold.as_ref().map(|f| Fold {
            shifts: order.iter().map(|&o| f.shifts[o]).collect(),
            center: f.center,
            folded: order.iter().map(|&o| f.folded[o]).collect(),
        });
        Ok(Mesh {
            nodes,
            tets,
            region: self.region.clone(),
            lca,
            n_parents,
            pbc_pairs,
            fold,
            spec: Some(*spec),
            original_index: order.iter().map(|&o| self.original_index[o]).collect(),
        })
    }

    /// Bounding extents and the touching / protruding flags.
    pub fn classify_cell(&self, spec: &PeriodicSpec) -> CellClassification {
        let (lo, hi) = Mesh::bounds_of(&self.nodes);
        let extent = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        let tol = self.resolved_tolerance(spec);
        let protruding = (0..3).any(|ax| spec.periodic[ax] && extent[ax] > spec.periods[ax] + tol);
        CellClassification {
            touching: !self.pbc_pairs.is_empty(),
            protruding,
            extent,
        }
    }

    /// Shifts every node by whole periods so the Manhattan distance to the
    /// center of the parent nodes is minimal. A non-protruding mesh gets an
    /// all-zero fold.
    pub fn fold_protruding(&self, spec: &PeriodicSpec) -> Result<Mesh, MeshError> {
        spec.validate()?;
        let n = self.nodes.len();
        let np = self.n_parents.max(1);
        let mut center = [0.0; 3];
        for p in &self.nodes[..self.n_parents] {
            for a in 0..3 {
                center[a] += p[a];
            }
        }
        for c in center.iter_mut() {
            *c /= np as f64;
        }
        let protruding = self.classify_cell(spec).protruding;
        let mut shifts = vec![[0i32; 3]; n];
        if protruding {
            for (s, p) in shifts.iter_mut().zip(&self.nodes) {
                for ax in 0..3 {
                    if spec.periodic[ax] {
                        s[ax] = best_shift(p[ax], center[ax], spec.periods[ax]);
                    }
                }
            }
        }
        let folded = self
            .nodes
            .iter()
            .zip(&shifts)
            .map(|(p, s)| {
                let mut q = *p;
                for ax in 0..3 {
                    if s[ax] != 0 {
                        q[ax] += s[ax] as f64 * spec.periods[ax];
                    }
                }
                q
            })
            .collect();
        let mut out = self.clone();
        out.fold = Some(Fold {
            shifts,
            center,
            folded,
        });
        out.spec.get_or_insert(*spec);
        Ok(out)
    }

    /// Runs fold (when protruding) and pair detection in the required order.
    pub fn prepare_periodic(&self, spec: &PeriodicSpec) -> Result<Mesh, MeshError> {
        if !spec.is_periodic() {
            return Ok(self.clone());
        }
        self.fold_protruding(spec)?.detect_pbc_pairs(spec)
    }

    /// SHA-256 over geometry, topology and periodic identification.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for p in &self.nodes {
            for c in p {
                h.update(c.to_le_bytes());
            }
        }
        for t in &self.tets {
            for i in t {
                h.update((*i as u64).to_le_bytes());
            }
        }
        for r in &self.region {
            h.update(r.to_le_bytes());
        }
        for l in &self.lca {
            h.update((*l as u64).to_le_bytes());
        }
        if let Some(f) = &self.fold {
            for s in &f.shifts {
                for c in s {
                    h.update(c.to_le_bytes());
                }
            }
        }
        h.finalize().into()
    }

    pub fn fingerprint_hex(&self) -> String {
        self.fingerprint()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// `argmin_δ |x - c + δ L|`, ties broken towards the smaller `|δ|`.
fn best_shift(x: f64, c: f64, l: f64) -> i32 {
    let t = (c - x) / l;
    let lo = t.floor();
    let hi = lo + 1.0;
    let dlo = (x - c + lo * l).abs();
    let dhi = (x - c + hi * l).abs();
    let pick = if dlo < dhi {
        lo
    } else if dhi < dlo {
        hi
    } else if lo.abs() <= hi.abs() {
        lo
    } else {
        hi
    };
    pick as i32
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}
