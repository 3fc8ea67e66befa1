//! Conforming Delaunay meshes of phase maps.
//!
//! Particle boundaries and the image frame form a planar straight-line
//! graph; [`conforming_delaunay`] triangulates it with Bowyer-Watson
//! insertion and Ruppert refinement (encroached subsegments split, skinny
//! triangles removed by circumcentre insertion). Orientation and in-circle
//! tests are exact; input coordinates are snapped to a 2⁻²⁰ grid.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use robust::{incircle, orient2d, Coord};
use serde::{Deserialize, Serialize};

use crate::annotation::{trace_unit_loops, ParticleInstance};
use crate::error::{Error, Result};
use crate::particles::extract_instances;
use crate::raster::{LabelMap, PhaseLabel};

const INF: u32 = u32::MAX;
const SNAP: f64 = 1_048_576.0;

/// Rounds a coordinate to the 2⁻²⁰ grid.
pub fn snap(v: f64) -> f64 {
    (v * SNAP).round() / SNAP
}

fn co(p: [f64; 2]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

fn orient(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    orient2d(co(a), co(b), co(p))
}

/// `p` lies on the open segment `ab`, given that the three are collinear.
fn strictly_between(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    let within = |u: f64, v: f64, w: f64| (u.min(v) < w && w < u.max(v)) || (u == v && w == u);
    p != a && p != b && within(a[0], b[0], p[0]) && within(a[1], b[1], p[1])
}

fn dot_at(c: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - c[0]) * (b[0] - c[0]) + (a[1] - c[1]) * (b[1] - c[1])
}

fn circumcenter(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> [f64; 2] {
    let (bx, by) = (b[0] - a[0], b[1] - a[1]);
    let (cx, cy) = (c[0] - a[0], c[1] - a[1]);
    let d = 2.0 * (bx * cy - by * cx);
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    [a[0] + (cy * b2 - by * c2) / d, a[1] + (bx * c2 - cx * b2) / d]
}

/// Smallest interior angle in degrees.
pub fn min_angle_deg(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let ang = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| {
        let (ux, uy) = (q[0] - p[0], q[1] - p[1]);
        let (vx, vy) = (r[0] - p[0], r[1] - p[1]);
        (ux * vy - uy * vx).abs().atan2(ux * vx + uy * vy).to_degrees()
    };
    ang(a, b, c).min(ang(b, c, a)).min(ang(c, a, b))
}

#[derive(Debug, Clone, Copy)]
struct Tri {
    v: [u32; 3],
    /// `n[i]` is across the edge opposite `v[i]`.
    n: [u32; 3],
    alive: bool,
}

impl Tri {
    fn is_ghost(&self) -> bool {
        self.v.contains(&INF)
    }
}

/// Delaunay triangulation closed over a vertex at infinity: every hull edge
/// carries a ghost triangle, so the topology is a sphere.
struct Dt {
    pts: Vec<[f64; 2]>,
    tris: Vec<Tri>,
    free: Vec<u32>,
    vert_tri: Vec<u32>,
    hint: u32,
    stamp: Vec<u32>,
    epoch: u32,
    created: Vec<u32>,
    removed: Vec<[u32; 3]>,
}

impl Dt {
    fn new(pts: Vec<[f64; 2]>, a: u32, b: u32, c: u32) -> Self {
        let (a, b) = if orient(pts[a as usize], pts[b as usize], pts[c as usize]) > 0.0 {
            (a, b)
        } else {
            (b, a)
        };
        let v = [[a, b, c], [b, a, INF], [c, b, INF], [a, c, INF]];
        let mut tris: Vec<Tri> = v
            .iter()
            .map(|&v| Tri {
                v,
                n: [INF; 3],
                alive: true,
            })
            .collect();
        let mut edges = HashMap::new();
        for (t, tri) in tris.iter().enumerate() {
            for i in 0..3 {
                edges.insert((tri.v[(i + 1) % 3], tri.v[(i + 2) % 3]), t as u32);
            }
        }
        for tri in tris.iter_mut() {
            for i in 0..3 {
                tri.n[i] = edges[&(tri.v[(i + 2) % 3], tri.v[(i + 1) % 3])];
            }
        }
        let mut vert_tri = vec![INF; pts.len()];
        for x in [a, b, c] {
            vert_tri[x as usize] = 0;
        }
        Self {
            pts,
            tris,
            free: Vec::new(),
            vert_tri,
            hint: 0,
            stamp: vec![0; 4],
            epoch: 0,
            created: Vec::new(),
            removed: Vec::new(),
        }
    }

    fn p(&self, v: u32) -> [f64; 2] {
        self.pts[v as usize]
    }

    fn conflicts(&self, t: u32, p: [f64; 2]) -> bool {
        let v = self.tris[t as usize].v;
        match v.iter().position(|&x| x == INF) {
            Some(k) => {
                let u = self.p(v[(k + 1) % 3]);
                let w = self.p(v[(k + 2) % 3]);
                let o = orient(u, w, p);
                o > 0.0 || (o == 0.0 && strictly_between(u, w, p))
            }
            None => incircle(co(self.p(v[0])), co(self.p(v[1])), co(self.p(v[2])), co(p)) > 0.0,
        }
    }

    /// Visibility walk. Returns a real triangle containing `p` or the ghost
    /// of a hull edge that sees it.
    fn locate(&self, p: [f64; 2]) -> u32 {
        let mut t = self.hint;
        if !self.tris[t as usize].alive {
            t = self.tris.iter().position(|t| t.alive).expect("live triangle") as u32;
        }
        let limit = 4 * self.tris.len() + 16;
        for step in 0..limit {
            let tri = self.tris[t as usize];
            if let Some(k) = tri.v.iter().position(|&x| x == INF) {
                if step > 0 {
                    return t;
                }
                t = tri.n[k];
                continue;
            }
            let mut next = None;
            for j in 0..3 {
                let i = (j + step) % 3;
                let a = self.p(tri.v[(i + 1) % 3]);
                let b = self.p(tri.v[(i + 2) % 3]);
                if orient(a, b, p) < 0.0 {
                    next = Some(tri.n[i]);
                    break;
                }
            }
            match next {
                Some(n) => t = n,
                None => return t,
            }
        }
        (0..self.tris.len() as u32)
            .find(|&t| self.tris[t as usize].alive && self.conflicts(t, p))
            .expect("some triangle conflicts with a new point")
    }

    fn alloc(&mut self, tri: Tri) -> u32 {
        if let Some(t) = self.free.pop() {
            self.tris[t as usize] = tri;
            t
        } else {
            self.tris.push(tri);
            self.stamp.push(0);
            (self.tris.len() - 1) as u32
        }
    }

    /// Inserts a point; `Err` carries the index of an identical vertex.
    fn insert(&mut self, p: [f64; 2]) -> std::result::Result<u32, u32> {
        let mut t0 = self.locate(p);
        for &v in &self.tris[t0 as usize].v {
            if v != INF && self.p(v) == p {
                return Err(v);
            }
        }
        if !self.conflicts(t0, p) {
            t0 = (0..self.tris.len() as u32)
                .find(|&t| self.tris[t as usize].alive && self.conflicts(t, p))
                .expect("some triangle conflicts with a new point");
        }
        let pi = self.pts.len() as u32;
        self.pts.push(p);
        self.vert_tri.push(INF);

        self.epoch += 1;
        let epoch = self.epoch;
        let mut cavity = vec![t0];
        self.stamp[t0 as usize] = epoch;
        let mut head = 0;
        while head < cavity.len() {
            let t = cavity[head];
            head += 1;
            for &nb in &self.tris[t as usize].n {
                if self.stamp[nb as usize] != epoch && self.conflicts(nb, p) {
                    self.stamp[nb as usize] = epoch;
                    cavity.push(nb);
                }
            }
        }

        let mut boundary = Vec::new();
        self.removed.clear();
        for &t in &cavity {
            let tri = self.tris[t as usize];
            self.removed.push(tri.v);
            for i in 0..3 {
                let o = tri.n[i];
                if self.stamp[o as usize] != epoch {
                    let slot = self.tris[o as usize].n.iter().position(|&x| x == t).unwrap();
                    boundary.push((tri.v[(i + 1) % 3], tri.v[(i + 2) % 3], o, slot));
                }
            }
        }
        for &t in &cavity {
            self.tris[t as usize].alive = false;
            self.free.push(t);
        }
        self.created.clear();
        let mut first = HashMap::with_capacity(boundary.len());
        let mut second = HashMap::with_capacity(boundary.len());
        for &(a, b, o, slot) in &boundary {
            let t = self.alloc(Tri {
                v: [a, b, pi],
                n: [INF, INF, o],
                alive: true,
            });
            self.tris[o as usize].n[slot] = t;
            first.insert(a, t);
            second.insert(b, t);
            self.created.push(t);
        }
        for i in 0..self.created.len() {
            let t = self.created[i];
            let [a, b, _] = self.tris[t as usize].v;
            self.tris[t as usize].n[0] = first[&b];
            self.tris[t as usize].n[1] = second[&a];
            for v in [a, b, pi] {
                if v != INF {
                    self.vert_tri[v as usize] = t;
                }
            }
            if !self.tris[t as usize].is_ghost() {
                self.hint = t;
            }
        }
        Ok(pi)
    }

    /// Triangle and slot whose opposite edge is `{a, b}`.
    fn find_edge(&self, a: u32, b: u32) -> Option<(u32, usize)> {
        let start = self.vert_tri[a as usize];
        if start == INF {
            return None;
        }
        let mut t = start;
        for _ in 0..self.tris.len() + 1 {
            let tri = &self.tris[t as usize];
            let k = tri.v.iter().position(|&x| x == a)?;
            let (x, y) = (tri.v[(k + 1) % 3], tri.v[(k + 2) % 3]);
            if x == b {
                return Some((t, (k + 2) % 3));
            }
            if y == b {
                return Some((t, (k + 1) % 3));
            }
            t = tri.n[(k + 2) % 3];
            if t == start {
                return None;
            }
        }
        None
    }

    fn real_triangles(&self) -> impl Iterator<Item = (u32, [u32; 3])> + '_ {
        self.tris
            .iter()
            .enumerate()
            .filter(|(_, t)| t.alive && !t.is_ghost())
            .map(|(i, t)| (i as u32, t.v))
    }

    fn hull_edges(&self) -> Vec<(u32, u32)> {
        self.tris
            .iter()
            .filter(|t| t.alive && t.is_ghost())
            .map(|t| {
                let k = t.v.iter().position(|&x| x == INF).unwrap();
                (t.v[(k + 1) % 3], t.v[(k + 2) % 3])
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshOptions {
    /// Quality bound in degrees; 0 disables refinement of triangles.
    pub min_angle: f64,
    /// Cap on Steiner point insertions.
    pub max_insertions: usize,
}

impl Default for MeshOptions {
    fn default() -> Self {
        Self {
            min_angle: 20.0,
            max_insertions: 1_000_000,
        }
    }
}

/// Triangle mesh with per-triangle phase labels.
///
/// Triangles are listed with positive signed area. `constraints` are the
/// input segments after merging duplicates and splitting at nodes lying on
/// them; each is covered by a chain of mesh edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub labels: Vec<PhaseLabel>,
    pub constraints: Vec<[usize; 2]>,
}

impl TriMesh {
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.nodes[i]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn min_angle(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.nodes[i]);
        min_angle_deg(a, b, c)
    }

    /// Area share per phase, indexed by [`PhaseLabel::index`].
    pub fn phase_area_fractions(&self) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for (t, l) in self.labels.iter().enumerate() {
            acc[l.index()] += self.triangle_area(t);
        }
        let total: f64 = acc.iter().sum();
        acc.map(|a| if total > 0.0 { a / total } else { 0.0 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.triangles.len() {
            return Err(Error::data(format!(
                "mesh has {} triangles but {} labels",
                self.triangles.len(),
                self.labels.len()
            )));
        }
        if let Some(p) = self.nodes.iter().find(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(Error::data(format!("non-finite mesh node {p:?}")));
        }
        let n = self.nodes.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= n) {
                return Err(Error::data(format!("triangle {t} references a missing node")));
            }
            if orient(self.nodes[tri[0]], self.nodes[tri[1]], self.nodes[tri[2]]) <= 0.0 {
                return Err(Error::data(format!("triangle {t} is degenerate or clockwise")));
            }
        }
        for (s, c) in self.constraints.iter().enumerate() {
            if c[0] >= n || c[1] >= n || c[0] == c[1] {
                return Err(Error::data(format!("constraint {s} is invalid")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let m: TriMesh = serde_json::from_str(json)?;
        m.validate()?;
        Ok(m)
    }

    /// `.node` and `.ele` text, 1-based, phase index as triangle attribute.
    pub fn to_node_ele(&self) -> (String, String) {
        let mut node = format!("{} 2 0 0\n", self.nodes.len());
        for (i, p) in self.nodes.iter().enumerate() {
            let _ = writeln!(node, "{} {} {}", i + 1, p[0], p[1]);
        }
        let mut ele = format!("{} 3 1\n", self.triangles.len());
        for (i, (t, l)) in self.triangles.iter().zip(&self.labels).enumerate() {
            let _ = writeln!(ele, "{} {} {} {} {}", i + 1, t[0] + 1, t[1] + 1, t[2] + 1, l.index());
        }
        (node, ele)
    }

    /// Reads the pair written by [`TriMesh::to_node_ele`]. Constraints are
    /// not part of that layout and come back empty.
    pub fn from_node_ele(node: &str, ele: &str) -> Result<Self> {
        fn rows(text: &str) -> impl Iterator<Item = Vec<&str>> {
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").split_whitespace().collect::<Vec<_>>())
                .filter(|r| !r.is_empty())
        }
        fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
            s.parse().map_err(|_| Error::data(format!("bad number {s:?} in mesh file")))
        }
        let mut nr = rows(node);
        let head = nr.next().ok_or_else(|| Error::data("empty .node file"))?;
        let count: usize = num(head[0])?;
        let mut nodes = Vec::with_capacity(count);
        for r in nr.take(count) {
            if r.len() < 3 {
                return Err(Error::data("short .node row"));
            }
            nodes.push([num(r[1])?, num(r[2])?]);
        }
        let mut er = rows(ele);
        let head = er.next().ok_or_else(|| Error::data("empty .ele file"))?;
        let count: usize = num(head[0])?;
        let mut triangles = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for r in er.take(count) {
            if r.len() < 5 {
                return Err(Error::data("short .ele row"));
            }
            let idx = |s: &str| -> Result<usize> {
                let v: usize = num(s)?;
                v.checked_sub(1).ok_or_else(|| Error::data("node index 0 in 1-based .ele"))
            };
            triangles.push([idx(r[1])?, idx(r[2])?, idx(r[3])?]);
            let l: usize = num(r[4])?;
            labels.push(PhaseLabel::from_index(l).ok_or_else(|| Error::data(format!("unknown phase {l}")))?);
        }
        let m = TriMesh {
            nodes,
            triangles,
            labels,
            constraints: Vec::new(),
        };
        m.validate()?;
        Ok(m)
    }

    /// Filled triangles coloured by phase, with the constraint segments on top.
    pub fn to_svg(&self, scale: f64) -> String {
        let (mut w, mut h) = (0.0f64, 0.0f64);
        for p in &self.nodes {
            w = w.max(p[0]);
            h = h.max(p[1]);
        }
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {w} {h}\">\n",
            w * scale,
            h * scale
        );
        for (t, l) in self.triangles.iter().zip(&self.labels) {
            let fill = match l {
                PhaseLabel::Other => "#6baed6",
                PhaseLabel::Alite => "#de2d26",
                PhaseLabel::Belite => "#fdae6b",
            };
            let pts: Vec<String> = t
                .iter()
                .map(|&i| format!("{},{}", self.nodes[i][0], self.nodes[i][1]))
                .collect();
            let _ = writeln!(
                svg,
                "<polygon points=\"{}\" fill=\"{fill}\" stroke=\"#333\" stroke-width=\"0.1\"/>",
                pts.join(" ")
            );
        }
        for c in &self.constraints {
            let (a, b) = (self.nodes[c[0]], self.nodes[c[1]]);
            let _ = writeln!(
                svg,
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\" stroke-width=\"0.3\"/>",
                a[0], a[1], b[0], b[1]
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshFormat {
    #[default]
    NodeEle,
    Json,
}

/// File contents for a mesh export, keyed by extension.
pub fn export_mesh(mesh: &TriMesh, format: MeshFormat) -> Result<Vec<(&'static str, String)>> {
    if mesh.triangles.is_empty() {
        return Err(Error::data("refusing to export an empty mesh"));
    }
    mesh.validate()?;
    Ok(match format {
        MeshFormat::NodeEle => {
            let (node, ele) = mesh.to_node_ele();
            vec![("node", node), ("ele", ele)]
        }
        MeshFormat::Json => vec![("json", mesh.to_json()?)],
    })
}

/// Snapped, deduplicated nodes and the constraints rewritten onto them.
struct Pslg {
    pts: Vec<[f64; 2]>,
    segs: Vec<[u32; 2]>,
}

fn prepare(nodes: &[[f64; 2]], constraints: &[[usize; 2]]) -> Result<Pslg> {
    let mut pts = Vec::new();
    let mut index: HashMap<(u64, u64), u32> = HashMap::new();
    let mut remap = Vec::with_capacity(nodes.len());
    for (i, p) in nodes.iter().enumerate() {
        if !(p[0].is_finite() && p[1].is_finite()) {
            return Err(Error::invalid(format!("node {i} is not finite")));
        }
        let q = [snap(p[0]) + 0.0, snap(p[1]) + 0.0];
        let id = *index.entry((q[0].to_bits(), q[1].to_bits())).or_insert_with(|| {
            pts.push(q);
            (pts.len() - 1) as u32
        });
        remap.push(id);
    }
    let mut segs = BTreeSet::new();
    for (s, c) in constraints.iter().enumerate() {
        if c[0] >= nodes.len() || c[1] >= nodes.len() {
            return Err(Error::invalid(format!("constraint {s} references a missing node")));
        }
        let (a, b) = (remap[c[0]], remap[c[1]]);
        if a == b {
            return Err(Error::invalid(format!("constraint {s} has coincident endpoints")));
        }
        segs.insert([a.min(b), a.max(b)]);
    }
    let segs = split_at_nodes(&pts, segs);
    check_crossings(&pts, &segs)?;
    Ok(Pslg { pts, segs })
}

/// Splits every segment at the nodes lying in its interior.
fn split_at_nodes(pts: &[[f64; 2]], segs: BTreeSet<[u32; 2]>) -> Vec<[u32; 2]> {
    let mut by_x: Vec<u32> = (0..pts.len() as u32).collect();
    by_x.sort_by(|&a, &b| pts[a as usize][0].total_cmp(&pts[b as usize][0]).then(a.cmp(&b)));
    let xs: Vec<f64> = by_x.iter().map(|&i| pts[i as usize][0]).collect();
    let mut out = BTreeSet::new();
    for [a, b] in segs {
        let (pa, pb) = (pts[a as usize], pts[b as usize]);
        let lo = xs.partition_point(|&x| x < pa[0].min(pb[0]));
        let hi = xs.partition_point(|&x| x <= pa[0].max(pb[0]));
        let mut inner: Vec<(f64, u32)> = by_x[lo..hi]
            .iter()
            .filter(|&&i| {
                let p = pts[i as usize];
                orient(pa, pb, p) == 0.0 && strictly_between(pa, pb, p)
            })
            .map(|&i| {
                let p = pts[i as usize];
                ((p[0] - pa[0]).abs() + (p[1] - pa[1]).abs(), i)
            })
            .collect();
        inner.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut prev = a;
        for (_, i) in inner.into_iter().chain(std::iter::once((0.0, b))) {
            out.insert([prev.min(i), prev.max(i)]);
            prev = i;
        }
    }
    out.into_iter().collect()
}

fn check_crossings(pts: &[[f64; 2]], segs: &[[u32; 2]]) -> Result<()> {
    let bounds = |s: &[u32; 2]| {
        let (a, b) = (pts[s[0] as usize], pts[s[1] as usize]);
        (a[0].min(b[0]), a[0].max(b[0]), a[1].min(b[1]), a[1].max(b[1]))
    };
    let mut order: Vec<usize> = (0..segs.len()).collect();
    order.sort_by(|&i, &j| bounds(&segs[i]).0.total_cmp(&bounds(&segs[j]).0));
    let mut active: Vec<usize> = Vec::new();
    for &i in &order {
        let (x0, _, y0, y1) = bounds(&segs[i]);
        active.retain(|&j| bounds(&segs[j]).1 >= x0);
        for &j in &active {
            let (_, _, v0, v1) = bounds(&segs[j]);
            if v1 < y0 || v0 > y1 {
                continue;
            }
            let [a, b] = segs[i];
            let [c, d] = segs[j];
            if a == c || a == d || b == c || b == d {
                continue;
            }
            let (pa, pb, pc, pd) = (pts[a as usize], pts[b as usize], pts[c as usize], pts[d as usize]);
            let o1 = orient(pa, pb, pc);
            let o2 = orient(pa, pb, pd);
            let o3 = orient(pc, pd, pa);
            let o4 = orient(pc, pd, pb);
            if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
                return Err(Error::data(format!(
                    "constraints cross: ({}, {})-({}, {}) and ({}, {})-({}, {})",
                    pa[0], pa[1], pb[0], pb[1], pc[0], pc[1], pd[0], pd[1]
                )));
            }
        }
        active.push(i);
    }
    Ok(())
}

struct Refiner {
    dt: Dt,
    subsegs: BTreeSet<(u32, u32)>,
    n_input: usize,
    /// Input vertices whose incident constraints meet below 60°.
    shell: Vec<bool>,
    /// Input vertices whose incident constraints meet below the quality bound.
    exempt: Vec<bool>,
    min_angle: f64,
    cap: usize,
    inserted: usize,
    seg_queue: VecDeque<(u32, u32)>,
    tri_queue: VecDeque<(u32, [u32; 3])>,
}

fn norm(a: u32, b: u32) -> (u32, u32) {
    (a.min(b), a.max(b))
}

impl Refiner {
    fn needs_split(&self, (a, b): (u32, u32)) -> bool {
        let Some((t, i)) = self.dt.find_edge(a, b) else {
            return true;
        };
        if self.min_angle <= 0.0 {
            return false;
        }
        let (pa, pb) = (self.dt.p(a), self.dt.p(b));
        let tri = self.dt.tris[t as usize];
        let other = self.dt.tris[tri.n[i] as usize];
        let apex2 = other.v.iter().copied().find(|&v| v != a && v != b).unwrap();
        [tri.v[i], apex2]
            .into_iter()
            .any(|c| c != INF && dot_at(self.dt.p(c), pa, pb) < 0.0)
    }

    fn is_bad(&self, v: [u32; 3]) -> bool {
        if self.min_angle <= 0.0 {
            return false;
        }
        if v.iter().any(|&x| (x as usize) < self.n_input && self.exempt[x as usize]) {
            return false;
        }
        min_angle_deg(self.dt.p(v[0]), self.dt.p(v[1]), self.dt.p(v[2])) < self.min_angle
    }

    fn after_insert(&mut self) {
        let removed = std::mem::take(&mut self.dt.removed);
        for v in &removed {
            for i in 0..3 {
                let e = norm(v[i], v[(i + 1) % 3]);
                if self.subsegs.contains(&e) {
                    self.seg_queue.push_back(e);
                }
            }
        }
        self.dt.removed = removed;
        for k in 0..self.dt.created.len() {
            let t = self.dt.created[k];
            let v = self.dt.tris[t as usize].v;
            if v.contains(&INF) {
                continue;
            }
            for i in 0..3 {
                let e = norm(v[i], v[(i + 1) % 3]);
                if self.subsegs.contains(&e) {
                    self.seg_queue.push_back(e);
                }
            }
            if self.is_bad(v) {
                self.tri_queue.push_back((t, v));
            }
        }
    }

    fn cap_error(&self, a: [f64; 2], b: [f64; 2]) -> Error {
        Error::IterationCap {
            cap: self.cap,
            x0: a[0].min(b[0]),
            y0: a[1].min(b[1]),
            x1: a[0].max(b[0]),
            y1: a[1].max(b[1]),
        }
    }

    fn split_segment(&mut self, (a, b): (u32, u32)) -> Result<()> {
        let (pa, pb) = (self.dt.p(a), self.dt.p(b));
        if self.inserted >= self.cap {
            return Err(self.cap_error(pa, pb));
        }
        let shell_a = (a as usize) < self.n_input && self.shell[a as usize];
        let shell_b = (b as usize) < self.n_input && self.shell[b as usize];
        let m = if shell_a != shell_b {
            let (from, to) = if shell_a { (pa, pb) } else { (pb, pa) };
            let len = ((to[0] - from[0]).powi(2) + (to[1] - from[1]).powi(2)).sqrt();
            let t = 2f64.powi((len / 2.0).log2().round() as i32) / len;
            [from[0] + t * (to[0] - from[0]), from[1] + t * (to[1] - from[1])]
        } else {
            [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0]
        };
        if m == pa || m == pb {
            return Err(self.cap_error(pa, pb));
        }
        let mi = match self.dt.insert(m) {
            Ok(i) => {
                self.inserted += 1;
                i
            }
            Err(i) => i,
        };
        self.subsegs.remove(&(a, b));
        for e in [norm(a, mi), norm(mi, b)] {
            self.subsegs.insert(e);
            self.seg_queue.push_back(e);
        }
        self.after_insert();
        Ok(())
    }

    fn drain_segments(&mut self) -> Result<()> {
        while let Some(s) = self.seg_queue.pop_front() {
            if self.subsegs.contains(&s) && self.needs_split(s) {
                self.split_segment(s)?;
            }
        }
        Ok(())
    }

    fn run(&mut self) -> Result<()> {
        self.seg_queue.extend(self.subsegs.iter().copied());
        let bad: Vec<_> = self
            .dt
            .real_triangles()
            .filter(|&(_, v)| self.is_bad(v))
            .collect();
        self.tri_queue.extend(bad);
        loop {
            self.drain_segments()?;
            let Some((t, v)) = self.tri_queue.pop_front() else {
                break;
            };
            let tri = self.dt.tris[t as usize];
            if !tri.alive || tri.v != v {
                continue;
            }
            let (a, b, c) = (self.dt.p(v[0]), self.dt.p(v[1]), self.dt.p(v[2]));
            let cc = circumcenter(a, b, c);
            let encroached: Vec<(u32, u32)> = self
                .subsegs
                .iter()
                .copied()
                .filter(|&(x, y)| dot_at(cc, self.dt.p(x), self.dt.p(y)) < 0.0)
                .collect();
            if !encroached.is_empty() {
                self.seg_queue.extend(encroached.iter().copied());
                for s in encroached {
                    if self.subsegs.contains(&s) {
                        self.split_segment(s)?;
                    }
                }
                self.tri_queue.push_back((t, v));
                continue;
            }
            if self.inserted >= self.cap {
                return Err(self.cap_error(a, b));
            }
            let host = self.dt.locate(cc);
            if self.dt.tris[host as usize].is_ghost() {
                // Only reachable through rounding; leave the triangle alone.
                continue;
            }
            if self.dt.insert(cc).is_ok() {
                self.inserted += 1;
                self.after_insert();
            }
        }
        Ok(())
    }
}

/// Smallest angle between constraints meeting at each node, in degrees.
fn input_angles(pts: &[[f64; 2]], segs: &[[u32; 2]]) -> Vec<f64> {
    let mut dirs: Vec<Vec<f64>> = vec![Vec::new(); pts.len()];
    for &[a, b] in segs {
        let (pa, pb) = (pts[a as usize], pts[b as usize]);
        dirs[a as usize].push((pb[1] - pa[1]).atan2(pb[0] - pa[0]));
        dirs[b as usize].push((pa[1] - pb[1]).atan2(pa[0] - pb[0]));
    }
    dirs.into_iter()
        .map(|mut d| {
            if d.len() < 2 {
                return 360.0;
            }
            d.sort_by(f64::total_cmp);
            let mut best = d[0] + std::f64::consts::TAU - d[d.len() - 1];
            for w in d.windows(2) {
                best = best.min(w[1] - w[0]);
            }
            best.to_degrees()
        })
        .collect()
}

/// Conforming Delaunay triangulation of nodes and non-crossing constraints,
/// refined until every triangle away from small input angles has all angles
/// at least `min_angle`.
///
/// Output nodes start with the distinct snapped input nodes in first-seen
/// order, followed by Steiner points. With a positive `min_angle` the
/// convex hull edges are treated as constraints as well.
pub fn conforming_delaunay(
    nodes: &[[f64; 2]],
    constraints: &[[usize; 2]],
    opts: &MeshOptions,
) -> Result<TriMesh> {
    if !(0.0..=34.0).contains(&opts.min_angle) {
        return Err(Error::invalid(format!(
            "min_angle must lie in [0, 34] degrees, got {}",
            opts.min_angle
        )));
    }
    let Pslg { pts, segs } = prepare(nodes, constraints)?;
    let n_input = pts.len();
    let a = 0u32;
    let b = (1..n_input).find(|&i| pts[i] != pts[0]);
    let c = b.and_then(|b| (b + 1..n_input).find(|&i| orient(pts[0], pts[b], pts[i]) != 0.0));
    let (Some(b), Some(c)) = (b, c) else {
        return Err(Error::data("need at least 3 non-collinear nodes"));
    };
    let (b, c) = (b as u32, c as u32);
    // Seed with three vertices, insert the rest in input order, then
    // renumber so input node i is vertex i.
    let mut dt = Dt::new(vec![pts[a as usize], pts[b as usize], pts[c as usize]], 0, 1, 2);
    let mut index_of = vec![INF; n_input];
    index_of[a as usize] = 0;
    index_of[b as usize] = 1;
    index_of[c as usize] = 2;
    for i in 0..n_input {
        if index_of[i] == INF {
            match dt.insert(pts[i]) {
                Ok(k) | Err(k) => index_of[i] = k,
            }
        }
    }
    // Renumber so output nodes follow input order.
    let mut refiner = {
        let dt = renumber(dt, &index_of);
        let angles = input_angles(&dt.pts[..n_input], &segs);
        let mut subsegs: BTreeSet<(u32, u32)> = segs.iter().map(|s| norm(s[0], s[1])).collect();
        if opts.min_angle > 0.0 {
            subsegs.extend(dt.hull_edges().into_iter().map(|(x, y)| norm(x, y)));
        }
        Refiner {
            shell: angles.iter().map(|&a| a < 60.0).collect(),
            exempt: angles.iter().map(|&a| a < opts.min_angle).collect(),
            dt,
            subsegs,
            n_input,
            min_angle: opts.min_angle,
            cap: opts.max_insertions,
            inserted: 0,
            seg_queue: VecDeque::new(),
            tri_queue: VecDeque::new(),
        }
    };
    refiner.run()?;
    let dt = refiner.dt;
    let triangles: Vec<[usize; 3]> = dt.real_triangles().map(|(_, v)| v.map(|x| x as usize)).collect();
    Ok(TriMesh {
        labels: vec![PhaseLabel::Other; triangles.len()],
        triangles,
        constraints: segs.iter().map(|s| [s[0] as usize, s[1] as usize]).collect(),
        nodes: dt.pts,
    })
}

/// Permutes vertex ids so that input node `i` becomes vertex `i`.
fn renumber(mut dt: Dt, index_of: &[u32]) -> Dt {
    let n = dt.pts.len();
    let mut perm = vec![INF; n];
    for (i, &k) in index_of.iter().enumerate() {
        perm[k as usize] = i as u32;
    }
    let mut next = index_of.len() as u32;
    for p in perm.iter_mut() {
        if *p == INF {
            *p = next;
            next += 1;
        }
    }
    let mut pts = vec![[0.0; 2]; n];
    let mut vert_tri = vec![INF; n];
    for k in 0..n {
        pts[perm[k] as usize] = dt.pts[k];
        vert_tri[perm[k] as usize] = dt.vert_tri[k];
    }
    for t in dt.tris.iter_mut() {
        for v in t.v.iter_mut() {
            if *v != INF {
                *v = perm[*v as usize];
            }
        }
    }
    dt.pts = pts;
    dt.vert_tri = vert_tri;
    dt
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelRule {
    /// Label of the pixel under the centroid.
    #[default]
    Centroid,
    /// Most frequent label among pixel centres inside the triangle, falling
    /// back to the centroid pixel when none is inside.
    Majority,
}

pub fn label_triangles(mesh: &TriMesh, labels: &LabelMap, rule: LabelRule) -> TriMesh {
    let (w, h) = labels.dims();
    let pixel_at = |x: f64, y: f64| {
        let px = (x.floor().max(0.0) as usize).min(w - 1);
        let py = (y.floor().max(0.0) as usize).min(h - 1);
        labels.get(px, py)
    };
    let out = mesh
        .triangles
        .iter()
        .map(|t| {
            let [a, b, c] = t.map(|i| mesh.nodes[i]);
            let centroid = pixel_at((a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0);
            match rule {
                LabelRule::Centroid => centroid,
                LabelRule::Majority => {
                    let mut tally = [0usize; 3];
                    let x0 = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
                    let x1 = (a[0].max(b[0]).max(c[0]).ceil() as usize).min(w);
                    let y0 = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
                    let y1 = (a[1].max(b[1]).max(c[1]).ceil() as usize).min(h);
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let p = [x as f64 + 0.5, y as f64 + 0.5];
                            if orient(a, b, p) >= 0.0 && orient(b, c, p) >= 0.0 && orient(c, a, p) >= 0.0 {
                                tally[labels.get(x, y).index()] += 1;
                            }
                        }
                    }
                    let best = (0..3).max_by_key(|&i| (tally[i], std::cmp::Reverse(i))).unwrap();
                    if tally[best] == 0 {
                        centroid
                    } else {
                        PhaseLabel::from_index(best).unwrap()
                    }
                }
            }
        })
        .collect();
    TriMesh {
        labels: out,
        ..mesh.clone()
    }
}

type Pt = (i32, i32);

/// Smallest angle allowed between resampled boundary chords at a node.
const MIN_CHORD_ANGLE_COS: f64 = 0.766_044_443_118_978; // cos 40°

/// Boundary nodes and the segments joining them.
pub type BoundaryGraph = (Vec<[f64; 2]>, Vec<[usize; 2]>);

/// Boundary nodes and segments for meshing.
///
/// The unit pixel edges of every particle boundary (holes included) and of
/// the image frame form a lattice graph. Chains between junctions (nodes of
/// degree other than 2 and the frame corners) are resampled every
/// `spacing` edges; closed loops keep at least 3 nodes. Chords that would
/// cross, touch away from their ends, or meet another chord at less than
/// 40° are subdivided back towards the lattice path.
pub fn boundary_nodes(
    instances: &[ParticleInstance],
    width: usize,
    height: usize,
    spacing: usize,
) -> Result<BoundaryGraph> {
    if spacing == 0 {
        return Err(Error::invalid("boundary spacing must be at least 1"));
    }
    if width == 0 || height == 0 {
        return Err(Error::invalid("image must be non-empty"));
    }
    let (w, h) = (width as i32, height as i32);
    let mut edges: BTreeSet<(Pt, Pt)> = BTreeSet::new();
    let mut add = |a: Pt, b: Pt| {
        edges.insert(if a <= b { (a, b) } else { (b, a) });
    };
    for x in 0..w {
        add((x, 0), (x + 1, 0));
        add((x, h), (x + 1, h));
    }
    for y in 0..h {
        add((0, y), (0, y + 1));
        add((w, y), (w, y + 1));
    }
    for inst in instances {
        if inst.region.dims() != (width, height) {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: inst.region.dims(),
            });
        }
        let pixels: Vec<usize> = inst.region.pixels().map(|(x, y)| y * width + x).collect();
        for lp in trace_unit_loops(width, &pixels) {
            for i in 0..lp.len() {
                add(lp[i], lp[(i + 1) % lp.len()]);
            }
        }
    }
    let mut adj: BTreeMap<Pt, Vec<Pt>> = BTreeMap::new();
    for &(a, b) in &edges {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let corners = [(0, 0), (w, 0), (0, h), (w, h)];
    let is_junction = |p: &Pt| adj[p].len() != 2 || corners.contains(p);
    let key = |e: (Pt, Pt)| if e.0 <= e.1 { e } else { (e.1, e.0) };

    let mut visited: BTreeSet<(Pt, Pt)> = BTreeSet::new();
    let mut chains: Vec<Vec<Pt>> = Vec::new();
    let mut starts: Vec<Pt> = adj.keys().copied().filter(|p| is_junction(p)).collect();
    starts.sort_by_key(|&(x, y)| (y, x));
    let walk = |start: Pt, first: Pt, visited: &mut BTreeSet<(Pt, Pt)>| {
        let mut path = vec![start, first];
        visited.insert(key((start, first)));
        let mut prev = start;
        let mut at = first;
        while at != start && !is_junction(&at) {
            let next = adj[&at].iter().copied().find(|&n| n != prev && !visited.contains(&key((at, n))));
            let Some(next) = next else { break };
            visited.insert(key((at, next)));
            path.push(next);
            prev = at;
            at = next;
        }
        path
    };
    for &s in &starts {
        for &n in &adj[&s] {
            if !visited.contains(&key((s, n))) {
                chains.push(walk(s, n, &mut visited));
            }
        }
    }
    let mut rest: Vec<Pt> = adj.keys().copied().collect();
    rest.sort_by_key(|&(x, y)| (y, x));
    for s in rest {
        for &n in &adj[&s] {
            if !visited.contains(&key((s, n))) {
                chains.push(walk(s, n, &mut visited));
            }
        }
    }

    // Sampled arc positions per chain.
    let mut samples: Vec<BTreeSet<usize>> = chains
        .iter()
        .map(|c| {
            let l = c.len() - 1;
            let closed = c[0] == c[l];
            let k = ((l + spacing / 2) / spacing).max(if closed { 3 } else { 1 }).min(l);
            (0..=k).map(|i| (2 * i * l + k) / (2 * k)).collect()
        })
        .collect();

    loop {
        let chords: Vec<(usize, usize, usize)> = samples
            .iter()
            .enumerate()
            .flat_map(|(ci, s)| {
                let v: Vec<usize> = s.iter().copied().collect();
                v.windows(2).map(move |w| (ci, w[0], w[1])).collect::<Vec<_>>()
            })
            .collect();
        let ends = |&(ci, s, e): &(usize, usize, usize)| (chains[ci][s], chains[ci][e]);
        let bad = conflicting_chords(&chords.iter().map(ends).collect::<Vec<_>>());
        let mut changed = false;
        for i in bad {
            let (ci, s, e) = chords[i];
            if e - s > 1 {
                samples[ci].insert((s + e) / 2);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut index: HashMap<Pt, usize> = HashMap::new();
    let mut nodes = Vec::new();
    let mut segs = BTreeSet::new();
    for (ci, s) in samples.iter().enumerate() {
        let mut prev: Option<usize> = None;
        for &pos in s {
            let p = chains[ci][pos];
            let id = *index.entry(p).or_insert_with(|| {
                nodes.push([p.0 as f64, p.1 as f64]);
                nodes.len() - 1
            });
            if let Some(q) = prev {
                segs.insert([q.min(id), q.max(id)]);
            }
            prev = Some(id);
        }
    }
    Ok((nodes, segs.into_iter().collect()))
}

/// Indices of chords that cross, touch away from shared ends, overlap, or
/// meet at a shared end below the minimum chord angle.
fn conflicting_chords(chords: &[(Pt, Pt)]) -> BTreeSet<usize> {
    let o = |a: Pt, b: Pt, c: Pt| -> i64 {
        (b.0 - a.0) as i64 * (c.1 - a.1) as i64 - (b.1 - a.1) as i64 * (c.0 - a.0) as i64
    };
    let on_seg = |a: Pt, b: Pt, p: Pt| {
        o(a, b, p) == 0 && p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
    };
    let mut order: Vec<usize> = (0..chords.len()).collect();
    let minx = |i: usize| chords[i].0 .0.min(chords[i].1 .0);
    let maxx = |i: usize| chords[i].0 .0.max(chords[i].1 .0);
    order.sort_by_key(|&i| (minx(i), i));
    let mut active: Vec<usize> = Vec::new();
    let mut bad = BTreeSet::new();
    for &i in &order {
        active.retain(|&j| maxx(j) >= minx(i));
        let (a, b) = chords[i];
        for &j in &active {
            let (c, d) = chords[j];
            if a.1.max(b.1) < c.1.min(d.1) || a.1.min(b.1) > c.1.max(d.1) {
                continue;
            }
            let shared: Vec<Pt> = [a, b].into_iter().filter(|p| *p == c || *p == d).collect();
            let conflict = match shared.len() {
                2 => true,
                1 => {
                    let s = shared[0];
                    let u = if a == s { b } else { a };
                    let v = if c == s { d } else { c };
                    let (ux, uy) = ((u.0 - s.0) as f64, (u.1 - s.1) as f64);
                    let (vx, vy) = ((v.0 - s.0) as f64, (v.1 - s.1) as f64);
                    let cos = (ux * vx + uy * vy) / ((ux * ux + uy * uy).sqrt() * (vx * vx + vy * vy).sqrt());
                    cos > MIN_CHORD_ANGLE_COS + 1e-12
                }
                _ => {
                    let (o1, o2, o3, o4) = (o(a, b, c), o(a, b, d), o(c, d, a), o(c, d, b));
                    (o1.signum() * o2.signum() < 0 && o3.signum() * o4.signum() < 0)
                        || on_seg(a, b, c)
                        || on_seg(a, b, d)
                        || on_seg(c, d, a)
                        || on_seg(c, d, b)
                }
            };
            if conflict {
                bad.insert(i);
                bad.insert(j);
            }
        }
        active.push(i);
    }
    bad
}

/// Extracts particles, builds their boundary graph, meshes it and labels
/// each triangle from the map.
pub fn mesh_label_map(
    labels: &LabelMap,
    spacing: usize,
    opts: &MeshOptions,
    rule: LabelRule,
) -> Result<TriMesh> {
    let (w, h) = labels.dims();
    let instances = extract_instances(labels, 1);
    let (nodes, segs) = boundary_nodes(&instances, w, h, spacing)?;
    let mesh = conforming_delaunay(&nodes, &segs, opts)?;
    Ok(label_triangles(&mesh, labels, rule))
}
