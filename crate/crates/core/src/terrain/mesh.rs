use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Indexed triangle soup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    /// Appends a planar quad `a b c d` as two triangles.
    pub fn push_quad(&mut self, q: [[f64; 3]; 4]) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&q);
        self.triangles.push([base, base + 1, base + 2]);
        self.triangles.push([base, base + 2, base + 3]);
    }

    pub fn append(&mut self, other: &TriMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
    }

    pub fn triangle(&self, t: &[u32; 3]) -> [[f64; 3]; 3] {
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    pub fn triangle_area(&self, t: &[u32; 3]) -> f64 {
        let [a, b, c] = self.triangle(t);
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let n = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
    }

    /// Axis-aligned bounds `(min, max)`; `None` for an empty mesh.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let mut it = self.vertices.iter();
        let first = *it.next()?;
        Some(it.fold((first, first), |(mut lo, mut hi), v| {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
            (lo, hi)
        }))
    }
}

/// Wavefront subset: `v x y z` and `f i j k` lines, 1-based indices.
pub fn write_obj(mesh: &TriMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 32 + mesh.triangles.len() * 20);
    for v in &mesh.vertices {
        writeln!(s, "v {} {} {}", v[0], v[1], v[2]).unwrap();
    }
    for t in &mesh.triangles {
        writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
    }
    s
}

pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut mesh = TriMesh::default();
    let mut offset = 0u64;
    for line in text.lines() {
        let at = offset;
        offset += line.len() as u64 + 1;
        let mut parts = line.split_whitespace();
        let bad = |what: &str| Error::format(at, format!("{what}: {line:?}"));
        match parts.next() {
            None => continue,
            Some(t) if t.starts_with('#') => continue,
            Some("v") => {
                let mut p = [0.0; 3];
                for c in &mut p {
                    *c = parts
                        .next()
                        .and_then(|x| x.parse().ok())
                        .ok_or_else(|| bad("bad vertex"))?;
                }
                mesh.vertices.push(p);
            }
            Some("f") => {
                let mut f = [0u32; 3];
                for c in &mut f {
                    // tolerate `i/t/n` references by keeping the vertex part
                    let idx: u32 = parts
                        .next()
                        .and_then(|x| x.split('/').next())
                        .and_then(|x| x.parse().ok())
                        .ok_or_else(|| bad("bad face"))?;
                    if idx == 0 || idx as usize > mesh.vertices.len() {
                        return Err(bad("face index out of range"));
                    }
                    *c = idx - 1;
                }
                if parts.next().is_some() {
                    return Err(bad("only triangular faces are supported"));
                }
                mesh.triangles.push(f);
            }
            Some(_) => return Err(bad("unsupported statement")),
        }
    }
    Ok(mesh)
}

pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}
