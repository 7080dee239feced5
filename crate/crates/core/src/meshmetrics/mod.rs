//! Triangle meshes, surface sampling and reconstruction metrics.
//!
//! Chamfer distance here is the symmetric mean of unsquared nearest-neighbour
//! distances, so it carries the length unit of its inputs.

mod hungarian;
mod mc;

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use hungarian::assignment;
pub use mc::{marching_cubes, marching_cubes_closed, marching_cubes_values};

use crate::kdtree::KdTree;
use crate::{Error, Result};

pub type Cloud = Vec<[f64; 3]>;

pub const DEFAULT_SURFACE_SAMPLES: usize = 10_000;
pub const DEFAULT_EMD_SUBSAMPLE: usize = 512;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        if self.triangles.iter().flatten().any(|&i| i >= n) {
            return Err(Error::Integrity("triangle index out of range".into()));
        }
        if self.vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Integrity("non-finite vertex".into()));
        }
        Ok(())
    }

    pub fn triangle_area(&self, t: &[u32; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i as usize]);
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let x = u[1] * v[2] - u[2] * v[1];
        let y = u[2] * v[0] - u[0] * v[2];
        let z = u[0] * v[1] - u[1] * v[0];
        0.5 * (x * x + y * y + z * z).sqrt()
    }

    pub fn area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(t)).sum()
    }

    /// Drops zero-area triangles and unreferenced vertices.
    pub fn cleanup(&mut self) {
        let tris: Vec<[u32; 3]> = self
            .triangles
            .iter()
            .copied()
            .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2] && self.triangle_area(t) > 0.0)
            .collect();
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut triangles = Vec::with_capacity(tris.len());
        for t in tris {
            let mut out = [0u32; 3];
            for (k, &i) in t.iter().enumerate() {
                if remap[i as usize] == u32::MAX {
                    remap[i as usize] = vertices.len() as u32;
                    vertices.push(self.vertices[i as usize]);
                }
                out[k] = remap[i as usize];
            }
            triangles.push(out);
        }
        self.vertices = vertices;
        self.triangles = triangles;
    }

    /// Merges vertices with bit-identical coordinates.
    pub fn weld(&mut self) {
        let mut seen: HashMap<[u64; 3], u32> = HashMap::new();
        let mut remap = Vec::with_capacity(self.vertices.len());
        let mut vertices = Vec::new();
        for v in &self.vertices {
            let key = v.map(|c| (c + 0.0).to_bits());
            let id = *seen.entry(key).or_insert_with(|| {
                vertices.push(*v);
                (vertices.len() - 1) as u32
            });
            remap.push(id);
        }
        for t in &mut self.triangles {
            *t = t.map(|i| remap[i as usize]);
        }
        self.vertices = vertices;
    }

    /// Every undirected edge is shared by exactly two triangles.
    pub fn is_edge_manifold(&self) -> bool {
        let mut count: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        !count.is_empty() && count.values().all(|&c| c == 2)
    }

    pub fn map_vertices(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn write_obj<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v[0], v[1], v[2])?;
        }
        for t in &self.triangles {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        Ok(())
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_obj(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads `v` and `f` records; polygons are fan-triangulated and texture or
    /// normal indices are ignored.
    pub fn read_obj<R: BufRead>(r: R) -> std::result::Result<Mesh, String> {
        let mut mesh = Mesh::default();
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let mut p = [0.0; 3];
                    for c in &mut p {
                        *c = it
                            .next()
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| format!("line {}: bad vertex", lineno + 1))?;
                    }
                    mesh.vertices.push(p);
                }
                Some("f") => {
                    let idx: Vec<u32> = it
                        .map(|s| {
                            s.split('/')
                                .next()
                                .and_then(|i| i.parse::<u32>().ok())
                                .filter(|&i| i >= 1)
                                .map(|i| i - 1)
                                .ok_or_else(|| format!("line {}: bad face index", lineno + 1))
                        })
                        .collect::<std::result::Result<_, _>>()?;
                    if idx.len() < 3 {
                        return Err(format!("line {}: face needs 3 indices", lineno + 1));
                    }
                    for k in 1..idx.len() - 1 {
                        mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        mesh.validate().map_err(|e| e.to_string())?;
        Ok(mesh)
    }

    pub fn load_obj(path: &Path) -> Result<Mesh> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Mesh::read_obj(std::io::BufReader::new(file)).map_err(|m| Error::format(path, m))
    }
}

/// `n` points drawn uniformly by area over the mesh surface.
pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<Cloud> {
    let mut cum = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in &mesh.triangles {
        total += mesh.triangle_area(t);
        cum.push(total);
    }
    if mesh.triangles.is_empty() || total <= 0.0 {
        return Err(Error::InvalidArgument("cannot sample an empty mesh".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.gen::<f64>() * total;
        let ti = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
        let [a, b, c] = mesh.triangles[ti].map(|i| mesh.vertices[i as usize]);
        let r1: f64 = rng.gen::<f64>().sqrt();
        let r2: f64 = rng.gen();
        let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
        out.push([
            wa * a[0] + wb * b[0] + wc * c[0],
            wa * a[1] + wb * b[1] + wc * c[1],
            wa * a[2] + wb * b[2] + wc * c[2],
        ]);
    }
    Ok(out)
}

fn mean_nearest(from: &[[f64; 3]], to: &KdTree) -> f64 {
    from.iter().map(|p| to.nearest_distance(p)).sum::<f64>() / from.len() as f64
}

/// `0.5 * (mean_a d(a, B) + mean_b d(b, A))`.
pub fn chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument(
            "chamfer distance needs non-empty clouds".into(),
        ));
    }
    let ta = KdTree::new(a);
    let tb = KdTree::new(b);
    Ok(0.5 * (mean_nearest(a, &tb) + mean_nearest(b, &ta)))
}

/// Fraction of `gt` points with a `rec` point within `tau`; 0 when `rec` is empty.
pub fn completion_ratio(gt: &[[f64; 3]], rec: &[[f64; 3]], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument("tau must be positive".into()));
    }
    if rec.is_empty() || gt.is_empty() {
        return Ok(0.0);
    }
    let tree = KdTree::new(rec);
    let hit = gt
        .iter()
        .filter(|p| tree.nearest_distance(p) <= tau)
        .count();
    Ok(hit as f64 / gt.len() as f64)
}

/// Mean matched distance of the optimal one-to-one assignment between seeded
/// subsamples of size `n_sub`.
pub fn emd(a: &[[f64; 3]], b: &[[f64; 3]], n_sub: usize, seed: u64) -> Result<f64> {
    if n_sub == 0 || n_sub > a.len().min(b.len()) {
        return Err(Error::InvalidArgument(format!(
            "emd subsample {n_sub} exceeds cloud sizes {} and {}",
            a.len(),
            b.len()
        )));
    }
    // one seed for both sides: equal clouds get equal subsamples
    let sa = subsample(a, n_sub, &mut ChaCha8Rng::seed_from_u64(seed));
    let sb = subsample(b, n_sub, &mut ChaCha8Rng::seed_from_u64(seed));
    let cost: Vec<f64> = sa
        .iter()
        .flat_map(|p| sb.iter().map(move |q| crate::kdtree::dist2(p, q).sqrt()))
        .collect();
    let (_, total) = assignment(&cost, n_sub);
    Ok(total / n_sub as f64)
}

fn subsample(c: &[[f64; 3]], n: usize, rng: &mut ChaCha8Rng) -> Cloud {
    if n == c.len() {
        return c.to_vec();
    }
    let mut idx = sample_indices(rng, c.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| c[i]).collect()
}
