//! Prior density grids over the unit cube and grid-guided ray sampling.
//!
//! Grid values sit on the vertices `(i, j, k) / (R - 1)` and are stored
//! x-fastest. A grid is immutable once built; refreshing produces a new one.

use std::io::{Read, Write};

use rand::Rng;

use crate::field::{FieldArch, FieldModel, ForwardCache, ParamVector};
use crate::meshmetrics::{marching_cubes_closed, Mesh};
use crate::render::{uniform_samples, ObjectRay, RaySampleSet};
use crate::{Error, Result};

pub const DEFAULT_RESOLUTION: usize = 64;
pub const DEFAULT_ESCAPE_EPS: f64 = 1e-4;
pub const DEFAULT_ISO_FLOOR: f64 = 5.0;
/// Roughly half opacity across one cell of a 64-vertex grid.
pub const DEFAULT_ISO_CEILING: f64 = 50.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    resolution: usize,
    values: Vec<f32>,
}

impl DensityGrid {
    pub fn new(resolution: usize, values: Vec<f32>) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidArgument(
                "grid resolution must be >= 2".into(),
            ));
        }
        let expected = resolution.pow(3);
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Integrity(
                "grid values must be finite and non-negative".into(),
            ));
        }
        Ok(Self { resolution, values })
    }

    pub fn constant(resolution: usize, value: f32) -> Result<Self> {
        Self::new(resolution, vec![value; resolution.pow(3)])
    }

    /// Samples `f` at every vertex.
    pub fn from_fn(resolution: usize, f: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        let step = 1.0 / (resolution.max(2) - 1) as f64;
        let mut values = Vec::with_capacity(resolution.pow(3));
        for k in 0..resolution {
            for j in 0..resolution {
                for i in 0..resolution {
                    values.push(f([i as f64 * step, j as f64 * step, k as f64 * step]) as f32);
                }
            }
        }
        Self::new(resolution, values)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }

    pub fn vertex(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let s = 1.0 / (self.resolution - 1) as f64;
        [i as f64 * s, j as f64 * s, k as f64 * s]
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }

    /// Trilinear interpolation; `p` is clamped into the unit cube.
    pub fn trilerp(&self, p: [f64; 3]) -> f64 {
        let r = self.resolution;
        let scale = (r - 1) as f64;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let x = p[a].clamp(0.0, 1.0) * scale;
            let i = (x.floor() as usize).min(r - 2);
            base[a] = i;
            frac[a] = x - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let bit = (corner >> a) & 1;
                idx[a] = base[a] + bit;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w != 0.0 {
                acc += w * self.values[self.index(idx[0], idx[1], idx[2])] as f64;
            }
        }
        acc
    }

    /// `R` as u32 followed by `R^3` f32, little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&(self.resolution as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 4];
        r.read_exact(&mut head)
            .map_err(|_| Error::Integrity("truncated grid header".into()))?;
        let res = u32::from_le_bytes(head) as usize;
        if !(2..=1024).contains(&res) {
            return Err(Error::Integrity(format!(
                "implausible grid resolution {res}"
            )));
        }
        let mut buf = vec![0u8; res.pow(3) * 4];
        r.read_exact(&mut buf)
            .map_err(|_| Error::Integrity("truncated grid values".into()))?;
        let values = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(res, values)
    }
}

pub fn trilerp(grid: &DensityGrid, p: [f64; 3]) -> f64 {
    grid.trilerp(p)
}

/// Termination probabilities of the grid along a sample set and their
/// normalized cumulative sum.
#[derive(Clone, Debug, PartialEq)]
pub struct RayCdf {
    pub term_probs: Vec<f64>,
    pub cdf: Vec<f64>,
    pub escaped: bool,
}

/// Uses the grid density at each sample as its opacity source. The ray is
/// escaped when the total termination probability is below `eps`.
pub fn build_ray_cdf(grid: &DensityGrid, samples: &RaySampleSet, eps: f64) -> RayCdf {
    let mut term_probs = Vec::with_capacity(samples.len());
    let mut t = 1.0f64;
    for (p, delta) in samples.positions.iter().zip(samples.optical_deltas()) {
        let sigma = grid.trilerp([p[0] as f64, p[1] as f64, p[2] as f64]);
        let alpha = 1.0 - (-sigma * delta).exp();
        term_probs.push(alpha * t);
        t *= 1.0 - alpha;
    }
    let total: f64 = term_probs.iter().sum();
    if samples.escaped || !(total >= eps) {
        return RayCdf {
            term_probs,
            cdf: Vec::new(),
            escaped: true,
        };
    }
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = term_probs
        .iter()
        .map(|w| {
            acc += w;
            acc / total
        })
        .collect();
    if let Some(last) = cdf.last_mut() {
        *last = 1.0;
    }
    RayCdf {
        term_probs,
        cdf,
        escaped: false,
    }
}

/// Draws `n` depths: bin `i = min{i : cdf(i) >= u}` for uniform `u`, then a
/// uniform position inside that bin. Output is sorted with recomputed spacing;
/// the final sample's spacing runs to the far end of the span.
pub fn inverse_transform_sample<R: Rng>(
    samples: &RaySampleSet,
    cdf: &[f64],
    n: usize,
    rng: &mut R,
) -> RaySampleSet {
    if samples.escaped || samples.is_empty() || cdf.len() != samples.len() || n == 0 {
        return RaySampleSet::escaped();
    }
    let m = samples.len();
    let mut depths: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            let i = cdf.partition_point(|&c| c < u).min(m - 1);
            let half = 0.5 * samples.deltas[i];
            let lo = (samples.depths[i] - half).max(samples.t_near);
            let hi = (samples.depths[i] + half).min(samples.t_far);
            lo + rng.gen::<f64>() * (hi - lo)
        })
        .collect();
    depths.sort_by(f64::total_cmp);
    let mut deltas = Vec::with_capacity(n);
    for i in 0..n {
        let next = if i + 1 < n {
            depths[i + 1]
        } else {
            samples.t_far
        };
        deltas.push((next - depths[i]).max(1e-12));
    }
    let positions = depths.iter().map(|&t| position_at(samples, t)).collect();
    RaySampleSet {
        positions,
        depths,
        deltas,
        length_scale: samples.length_scale,
        t_near: samples.t_near,
        t_far: samples.t_far,
        escaped: false,
    }
}

// Positions are affine in depth, so two samples fix the line.
fn position_at(samples: &RaySampleSet, t: f64) -> [f32; 3] {
    let n = samples.len();
    if n < 2 {
        return samples.positions[0];
    }
    let (ta, tb) = (samples.depths[0], samples.depths[n - 1]);
    let (pa, pb) = (samples.positions[0], samples.positions[n - 1]);
    let s = (t - ta) / (tb - ta);
    let mut p = [0f32; 3];
    for k in 0..3 {
        let v = pa[k] as f64 + s * (pb[k] as f64 - pa[k] as f64);
        p[k] = v.clamp(0.0, 1.0) as f32;
    }
    p
}

/// Prior-guided samples along `ray`, falling back to uniform samples when the
/// grid shows no mass along it.
pub fn sample_ray<R: Rng>(
    grid: &DensityGrid,
    ray: &ObjectRay,
    size: [f64; 3],
    n_coarse: usize,
    n_out: usize,
    eps: f64,
    rng: &mut R,
) -> RaySampleSet {
    let coarse = uniform_samples(ray, size, n_coarse);
    if coarse.escaped {
        return coarse;
    }
    let cdf = build_ray_cdf(grid, &coarse, eps);
    if cdf.escaped {
        return uniform_samples(ray, size, n_out);
    }
    inverse_transform_sample(&coarse, &cdf.cdf, n_out, rng)
}

/// Evaluates the field density at every grid vertex.
pub fn refresh_grid(
    params: &ParamVector,
    arch: &FieldArch,
    resolution: usize,
) -> Result<DensityGrid> {
    if resolution < 2 {
        return Err(Error::InvalidArgument(
            "grid resolution must be >= 2".into(),
        ));
    }
    params.check_finite()?;
    let model = FieldModel::new(arch)?;
    let step = 1.0 / (resolution - 1) as f64;
    let mut values = Vec::with_capacity(resolution.pow(3));
    let mut cache = ForwardCache::default();
    let mut row = Vec::with_capacity(resolution);
    for k in 0..resolution {
        for j in 0..resolution {
            row.clear();
            row.extend((0..resolution).map(|i| {
                [
                    (i as f64 * step) as f32,
                    (j as f64 * step) as f32,
                    (k as f64 * step) as f32,
                ]
            }));
            model.forward(&params.values, &row, &mut cache)?;
            values.extend(cache.outputs().iter().map(|o| o.sigma));
        }
    }
    DensityGrid::new(resolution, values)
}

/// Half the grid maximum, clamped to `[floor, ceiling]`. The ceiling keeps
/// isolated density spikes from lifting the level above the actual surface.
pub fn iso_level(grid: &DensityGrid, floor: f64, ceiling: f64) -> f64 {
    (0.5 * grid.max() as f64).min(ceiling).max(floor)
}

/// Grid of the field plus its closed iso-surface in unit-cube coordinates.
pub fn bake_prior(
    params: &ParamVector,
    arch: &FieldArch,
    resolution: usize,
    iso: f64,
) -> Result<(DensityGrid, Mesh)> {
    let grid = refresh_grid(params, arch, resolution)?;
    let mesh = marching_cubes_closed(&grid, iso);
    if mesh.is_empty() {
        log::warn!("baked prior has an empty iso-surface at level {iso}");
    }
    Ok((grid, mesh))
}
