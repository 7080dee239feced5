//! Object-frame ray generation, uniform ray sampling, differentiable
//! compositing and the three-term reconstruction loss.
//!
//! Rays live in the metric object frame; field queries happen in normalized
//! box coordinates `p / size + 1/2`. Depth values along a ray are metric
//! distances from the camera center, while the optical thickness of a sample
//! uses the interval length measured in normalized coordinates so that
//! densities are independent of object scale.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::field::FieldOutput;
use crate::geometry::{Rigid, Vec3};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera-to-world.
    pub pose: Rigid,
}

impl Camera {
    /// Square pixels, principal point at the image center, horizontal field of view `fov` radians.
    pub fn from_fov(width: usize, height: usize, fov: f64, pose: Rigid) -> Self {
        let f = width as f64 / (2.0 * (fov * 0.5).tan());
        Self {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) * 0.5,
            cy: (height as f64 - 1.0) * 0.5,
            width,
            height,
            pose,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument(
                "focal lengths must be positive".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("empty image".into()));
        }
        if !self.pose.is_orthonormal(1e-5) {
            return Err(Error::InvalidArgument(
                "camera rotation is not orthonormal".into(),
            ));
        }
        Ok(())
    }

    /// Unit direction in the camera frame through pixel coordinates `(u, v)`;
    /// integer coordinates address pixel centers.
    pub fn pixel_direction(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0).normalize()
    }

    pub fn center(&self) -> Vec3 {
        self.pose.translation
    }

    /// Pixel coordinates and camera-frame depth of a world point, `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let q = self.pose.inverse().apply(p);
        if q.z <= 1e-6 {
            return None;
        }
        Some((
            self.fx * q.x / q.z + self.cx,
            self.fy * q.y / q.z + self.cy,
            q.z,
        ))
    }

    /// World-space ray through pixel `(u, v)`: origin and unit direction.
    pub fn world_ray(&self, u: f64, v: f64) -> (Vec3, Vec3) {
        (
            self.center(),
            self.pose.apply_vector(&self.pixel_direction(u, v)),
        )
    }
}

/// An RGB-D frame: `rgb` holds 3 values per pixel, `depth` is metric distance
/// along the pixel ray with `0` meaning no reading.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f32>,
    pub depth: Vec<f32>,
}

impl RgbdImage {
    pub fn blank(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            rgb: vec![0.0; width * height * 3],
            depth: vec![0.0; width * height],
        }
    }

    pub fn color(&self, idx: usize) -> [f32; 3] {
        [
            self.rgb[3 * idx],
            self.rgb[3 * idx + 1],
            self.rgb[3 * idx + 2],
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn filled(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    /// Pixels within Euclidean distance `radius` of the mask, excluding the mask.
    pub fn band(&self, radius: usize) -> Vec<usize> {
        let (w, h) = (self.width as isize, self.height as isize);
        let r = radius as isize;
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if self.data[(y * w + x) as usize] {
                    continue;
                }
                let mut near = false;
                'search: for dy in -r..=r {
                    for dx in -r..=r {
                        if dx * dx + dy * dy > r * r {
                            continue;
                        }
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0
                            && ny >= 0
                            && nx < w
                            && ny < h
                            && self.data[(ny * w + nx) as usize]
                        {
                            near = true;
                            break 'search;
                        }
                    }
                }
                if near {
                    out.push((y * w + x) as usize);
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RayKind {
    Object,
    Background,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectRay {
    pub origin: [f64; 3],
    pub direction: [f64; 3],
    pub kind: RayKind,
    pub target_color: [f32; 3],
    pub target_depth: Option<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayConfig {
    pub bg_ray_fraction: f64,
    pub band_radius: usize,
}

impl Default for RayConfig {
    fn default() -> Self {
        Self {
            bg_ray_fraction: 0.25,
            band_radius: 8,
        }
    }
}

/// Candidate pixels of one view for one object.
#[derive(Clone, Debug)]
pub struct RaySource {
    object_pixels: Vec<usize>,
    band_pixels: Vec<usize>,
    world_to_object: Rigid,
}

impl RaySource {
    /// Band pixels whose rays miss the object box are dropped.
    pub fn new(
        camera: &Camera,
        mask: &Mask,
        obj_pose: &Rigid,
        obj_size: [f64; 3],
        cfg: &RayConfig,
    ) -> Result<Self> {
        if mask.width != camera.width || mask.height != camera.height {
            return Err(Error::InvalidArgument(
                "mask and camera dimensions differ".into(),
            ));
        }
        let object_pixels: Vec<usize> = (0..mask.data.len()).filter(|&i| mask.data[i]).collect();
        if object_pixels.is_empty() {
            return Err(Error::NoObjectPixels);
        }
        let world_to_object = obj_pose.inverse();
        let band_pixels = mask
            .band(cfg.band_radius)
            .into_iter()
            .filter(|&i| {
                let (o, d) = camera.world_ray((i % camera.width) as f64, (i / camera.width) as f64);
                let o = world_to_object.apply(&o);
                let d = world_to_object.apply_vector(&d);
                box_interval(&normalize_ray(&o, &d, obj_size)).is_some()
            })
            .collect();
        Ok(Self {
            object_pixels,
            band_pixels,
            world_to_object,
        })
    }

    pub fn object_pixel_count(&self) -> usize {
        self.object_pixels.len()
    }

    /// Draws `n` rays: `round(n * bg_fraction)` from the background band (when
    /// it has pixels), the rest from inside the mask.
    pub fn sample<R: Rng>(
        &self,
        camera: &Camera,
        image: &RgbdImage,
        n: usize,
        bg_fraction: f64,
        rng: &mut R,
    ) -> Vec<ObjectRay> {
        let n_bg = if self.band_pixels.is_empty() {
            0
        } else {
            ((n as f64) * bg_fraction).round() as usize
        };
        let mut rays = Vec::with_capacity(n);
        for k in 0..n {
            let (pix, kind) = if k < n - n_bg.min(n) {
                (
                    self.object_pixels[rng.gen_range(0..self.object_pixels.len())],
                    RayKind::Object,
                )
            } else {
                (
                    self.band_pixels[rng.gen_range(0..self.band_pixels.len())],
                    RayKind::Background,
                )
            };
            let (o, d) = camera.world_ray((pix % camera.width) as f64, (pix / camera.width) as f64);
            let o = self.world_to_object.apply(&o);
            let d = self.world_to_object.apply_vector(&d).normalize();
            let depth = image.depth[pix];
            rays.push(ObjectRay {
                origin: [o.x, o.y, o.z],
                direction: [d.x, d.y, d.z],
                kind,
                target_color: image.color(pix),
                target_depth: (kind == RayKind::Object && depth > 0.0 && depth.is_finite())
                    .then_some(depth),
            });
        }
        rays
    }
}

/// Draws `n` object-frame rays from one RGB-D view; see [`RaySource::sample`].
#[allow(clippy::too_many_arguments)]
pub fn generate_rays(
    camera: &Camera,
    image: &RgbdImage,
    mask: &Mask,
    obj_pose: &Rigid,
    obj_size: [f64; 3],
    n: usize,
    cfg: &RayConfig,
    seed: u64,
) -> Result<Vec<ObjectRay>> {
    if n == 0 {
        return Err(Error::InvalidArgument("ray count must be >= 1".into()));
    }
    let source = RaySource::new(camera, mask, obj_pose, obj_size, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(source.sample(camera, image, n, cfg.bg_ray_fraction, &mut rng))
}

/// Ray expressed in normalized box coordinates; the parameter `t` keeps its
/// metric meaning.
#[derive(Clone, Copy, Debug)]
pub struct NormalizedRay {
    pub origin: [f64; 3],
    pub direction: [f64; 3],
}

impl NormalizedRay {
    pub fn at(&self, t: f64) -> [f32; 3] {
        let mut p = [0f32; 3];
        for k in 0..3 {
            p[k] = (self.origin[k] + t * self.direction[k]).clamp(0.0, 1.0) as f32;
        }
        p
    }

    pub fn length_scale(&self) -> f64 {
        let d = self.direction;
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }
}

pub fn normalize_ray(origin: &Vec3, direction: &Vec3, size: [f64; 3]) -> NormalizedRay {
    let mut o = [0.0; 3];
    let mut d = [0.0; 3];
    for k in 0..3 {
        o[k] = origin[k] / size[k] + 0.5;
        d[k] = direction[k] / size[k];
    }
    NormalizedRay {
        origin: o,
        direction: d,
    }
}

/// Parameter interval `[t_near, t_far]` (with `t_near >= 0`) where the ray is
/// inside the unit cube.
pub fn box_interval(ray: &NormalizedRay) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        let (o, d) = (ray.origin[k], ray.direction[k]);
        if d.abs() < 1e-15 {
            if !(0.0..=1.0).contains(&o) {
                return None;
            }
            continue;
        }
        let a = (0.0 - o) / d;
        let b = (1.0 - o) / d;
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        t0 = t0.max(lo);
        t1 = t1.min(hi);
    }
    (t1 > t0).then_some((t0, t1))
}

/// Samples along one ray. `depths` are metric ray parameters, `deltas` the
/// metric spacing; `length_scale` converts metric spacing to normalized length.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySampleSet {
    pub positions: Vec<[f32; 3]>,
    pub depths: Vec<f64>,
    pub deltas: Vec<f64>,
    pub length_scale: f64,
    pub t_near: f64,
    pub t_far: f64,
    pub escaped: bool,
}

impl RaySampleSet {
    pub fn escaped() -> Self {
        Self {
            positions: Vec::new(),
            depths: Vec::new(),
            deltas: Vec::new(),
            length_scale: 1.0,
            t_near: 0.0,
            t_far: 0.0,
            escaped: true,
        }
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    /// Sample spacing in normalized-box length, the unit densities are expressed in.
    pub fn optical_deltas(&self) -> Vec<f64> {
        self.deltas.iter().map(|d| d * self.length_scale).collect()
    }
}

/// `n` samples at the midpoints of equal intervals across the ray's span inside
/// the object box; escaped when the ray misses the box.
pub fn uniform_samples(ray: &ObjectRay, size: [f64; 3], n: usize) -> RaySampleSet {
    let nray = normalize_ray(&Vec3::from(ray.origin), &Vec3::from(ray.direction), size);
    uniform_samples_normalized(&nray, n)
}

pub fn uniform_samples_normalized(nray: &NormalizedRay, n: usize) -> RaySampleSet {
    let Some((t_near, t_far)) = box_interval(nray) else {
        return RaySampleSet::escaped();
    };
    let n = n.max(1);
    let step = (t_far - t_near) / n as f64;
    let depths: Vec<f64> = (0..n).map(|i| t_near + (i as f64 + 0.5) * step).collect();
    RaySampleSet {
        positions: depths.iter().map(|&t| nray.at(t)).collect(),
        deltas: vec![step; n],
        depths,
        length_scale: nray.length_scale(),
        t_near,
        t_far,
        escaped: false,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub color: [f64; 3],
    pub depth: f64,
    pub term_probs: Vec<f64>,
    /// Probability the ray passes every sample.
    pub transmittance: f64,
}

/// Alpha compositing: `rho_occ = 1 - exp(-sigma * delta)`, termination
/// probabilities `rho_occ(i) * prod_{j<i} (1 - rho_occ(j))`, and their
/// weighted color and depth sums.
pub fn composite<S: Copy + Into<f64>>(sigmas: &[S], colors: &[[S; 3]], deltas: &[f64], depths: &[f64]) -> Composite {
    let mut t = 1.0f64;
    let mut color = [0.0f64; 3];
    let mut depth = 0.0f64;
    let mut term_probs = Vec::with_capacity(sigmas.len());
    for i in 0..sigmas.len() {
        let alpha = 1.0 - (-sigmas[i].into() * deltas[i]).exp();
        let w = alpha * t;
        for c in 0..3 {
            color[c] += w * colors[i][c].into();
        }
        depth += w * depths[i];
        term_probs.push(w);
        t *= 1.0 - alpha;
    }
    Composite {
        color,
        depth,
        term_probs,
        transmittance: t,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_d: f32,
    pub lambda_sigma: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_d: 0.5,
            lambda_sigma: 0.01,
        }
    }
}

/// Loss terms, each already averaged over the rays of the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub color: f64,
    pub depth: f64,
    pub density: f64,
}

/// Upstream gradients per field sample, in sample order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleGrads {
    pub d_sigma: Vec<f32>,
    pub d_rgb: Vec<[f32; 3]>,
}

/// Random supervision color of a background ray.
pub fn draw_background_color<R: Rng>(rng: &mut R) -> [f32; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

/// `L = L_c + lambda_d L_d + lambda_sigma L_sigma` over a batch.
///
/// `outputs` holds the field outputs of every non-escaped sample set,
/// concatenated in ray order. Object rays contribute a squared color error and
/// an absolute depth error (when a depth reading exists). Background rays are
/// composited over a fresh random color which they must reproduce, and add the
/// absolute densities of their samples. Every term is divided by the ray count.
pub fn batch_loss<R: Rng>(
    rays: &[ObjectRay],
    samples: &[RaySampleSet],
    outputs: &[FieldOutput],
    weights: LossWeights,
    rng: &mut R,
) -> Result<(LossBreakdown, SampleGrads)> {
    let wide: Vec<[f64; 4]> = outputs
        .iter()
        .map(|o| [o.sigma as f64, o.rgb[0] as f64, o.rgb[1] as f64, o.rgb[2] as f64])
        .collect();
    let (loss, d_sigma, d_rgb) = batch_loss_f64(rays, samples, &wide, weights, rng)?;
    Ok((
        loss,
        SampleGrads {
            d_sigma: d_sigma.iter().map(|&v| v as f32).collect(),
            d_rgb: d_rgb
                .iter()
                .map(|g| [g[0] as f32, g[1] as f32, g[2] as f32])
                .collect(),
        },
    ))
}

/// [`batch_loss`] on 64-bit outputs `[sigma, r, g, b]`, returning the
/// per-sample gradients with respect to sigma and color.
#[allow(clippy::type_complexity)]
pub fn batch_loss_f64<R: Rng>(
    rays: &[ObjectRay],
    samples: &[RaySampleSet],
    outputs: &[[f64; 4]],
    weights: LossWeights,
    rng: &mut R,
) -> Result<(LossBreakdown, Vec<f64>, Vec<[f64; 3]>)> {
    if rays.is_empty() {
        return Err(Error::InvalidArgument("batch has no rays".into()));
    }
    if rays.len() != samples.len() {
        return Err(Error::LengthMismatch {
            expected: rays.len(),
            actual: samples.len(),
        });
    }
    let total_samples: usize = samples.iter().map(|s| s.len()).sum();
    if total_samples != outputs.len() {
        return Err(Error::LengthMismatch {
            expected: total_samples,
            actual: outputs.len(),
        });
    }
    if weights.lambda_d < 0.0 || weights.lambda_sigma < 0.0 {
        return Err(Error::InvalidArgument(
            "loss weights must be non-negative".into(),
        ));
    }
    let inv_n = 1.0 / rays.len() as f64;
    let lambda_d = weights.lambda_d as f64;
    let lambda_s = weights.lambda_sigma as f64;
    let mut d_sigma = vec![0.0; total_samples];
    let mut d_rgb = vec![[0.0; 3]; total_samples];
    let mut loss = LossBreakdown::default();
    let mut offset = 0;
    let mut sigmas = Vec::new();
    let mut colors = Vec::new();
    for (ray, set) in rays.iter().zip(samples) {
        let bg = (ray.kind == RayKind::Background).then(|| draw_background_color(rng));
        let n = set.len();
        if n == 0 {
            continue;
        }
        let outs = &outputs[offset..offset + n];
        sigmas.clear();
        colors.clear();
        sigmas.extend(outs.iter().map(|o| o[0]));
        colors.extend(outs.iter().map(|o| [o[1], o[2], o[3]]));
        let deltas = set.optical_deltas();
        let comp = composite(&sigmas, &colors, &deltas, &set.depths);

        let mut pred = comp.color;
        let (target, bg_color) = match bg {
            Some(c) => {
                for k in 0..3 {
                    pred[k] += comp.transmittance * c[k] as f64;
                }
                (c, [c[0] as f64, c[1] as f64, c[2] as f64])
            }
            None => (ray.target_color, [0.0; 3]),
        };
        let mut g_color = [0.0f64; 3];
        for k in 0..3 {
            let e = pred[k] - target[k] as f64;
            loss.color += e * e * inv_n;
            g_color[k] = 2.0 * e * inv_n;
        }
        let mut g_depth = 0.0;
        if ray.kind == RayKind::Object {
            if let Some(d) = ray.target_depth {
                let e = comp.depth - d as f64;
                loss.depth += e.abs() * inv_n;
                g_depth = lambda_d * e.signum() * inv_n;
            }
        }
        // Reverse pass through the compositing weights.
        let q_bg = g_color[0] * bg_color[0] + g_color[1] * bg_color[1] + g_color[2] * bg_color[2];
        let mut suffix = comp.transmittance * q_bg;
        let mut t_after = comp.transmittance;
        for i in (0..n).rev() {
            let w = comp.term_probs[i];
            let c = colors[i];
            let q = g_color[0] * c[0] + g_color[1] * c[1] + g_color[2] * c[2] + g_depth * set.depths[i];
            let mut ds = deltas[i] * (t_after * q - suffix);
            if bg.is_some() {
                loss.density += sigmas[i].abs() * inv_n;
                ds += lambda_s * inv_n;
            }
            d_sigma[offset + i] = ds;
            d_rgb[offset + i] = [w * g_color[0], w * g_color[1], w * g_color[2]];
            suffix += w * q;
            t_after += w;
        }
        offset += n;
    }
    loss.total = loss.color + lambda_d * loss.depth + lambda_s * loss.density;
    Ok((loss, d_sigma, d_rgb))
}
