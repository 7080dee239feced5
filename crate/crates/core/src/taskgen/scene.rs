//! Multi-object tabletop scenes rendered along a camera orbit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    orbit_camera, render_scene, sample_shape, sdf_mesh, Category, ShapeSpec, TaskConfig,
    DEFAULT_LIGHT, GT_MESH_RESOLUTION,
};
use crate::geometry::{ObjectState, Vec3};
use crate::meshmetrics::Mesh;
use crate::render::{Camera, Mask, RgbdImage};
use crate::{Error, Result};

/// Minimum visible pixels for an instance to count as a detection.
pub const MIN_DETECTION_PIXELS: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub spec: ShapeSpec,
    pub state: ObjectState,
}

impl SceneObject {
    /// Ground-truth surface in world coordinates.
    pub fn world_mesh(&self) -> Mesh {
        let pose = self.state.pose();
        sdf_mesh(&self.spec, GT_MESH_RESOLUTION).map_vertices(|v| {
            let p = pose.apply(&Vec3::from(v));
            [p.x, p.y, p.z]
        })
    }

    /// File stem used for exported meshes: `<category>_<index>`.
    pub fn name(&self, index: usize) -> String {
        format!("{}_{}", self.spec.category, index)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub categories: Vec<Category>,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub fov: f64,
    /// Total azimuth swept by the camera, radians.
    pub sweep: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            categories: vec![Category::Mug, Category::Book, Category::Ball],
            frames: 24,
            width: 128,
            height: 96,
            fov: 60f64.to_radians(),
            sweep: 240f64.to_radians(),
        }
    }
}

/// Frame of a sequence: label `k + 1` marks pixels of object `k`, whose
/// category is `categories[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceFrame {
    pub camera: Camera,
    pub image: RgbdImage,
    pub labels: Vec<u16>,
    pub categories: Vec<Category>,
}

impl SequenceFrame {
    /// Instance masks large enough to be detections, with their category.
    pub fn detections(&self) -> Vec<(Mask, Category)> {
        let mut out = Vec::new();
        for (k, &cat) in self.categories.iter().enumerate() {
            let label = (k + 1) as u16;
            let data: Vec<bool> = self.labels.iter().map(|&l| l == label).collect();
            if data.iter().filter(|b| **b).count() >= MIN_DETECTION_PIXELS {
                out.push((
                    Mask {
                        width: self.camera.width,
                        height: self.camera.height,
                        data,
                    },
                    cat,
                ));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
}

/// Places one shape per category around the origin without overlap.
pub fn make_scene(categories: &[Category], seed: u64) -> Result<Scene> {
    if categories.is_empty() {
        return Err(Error::InvalidArgument(
            "scene needs at least one object".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE7E);
    let n = categories.len();
    let mut objects: Vec<SceneObject> = Vec::with_capacity(n);
    for (k, &cat) in categories.iter().enumerate() {
        let spec = sample_shape(cat, seed.wrapping_mul(31).wrapping_add(k as u64));
        let size = spec.extents();
        let footprint = 0.5 * (size[0] * size[0] + size[1] * size[1]).sqrt();
        let mut placed = None;
        for attempt in 0..200 {
            let ring = if n == 1 {
                0.0
            } else {
                0.13 + 0.002 * attempt as f64
            };
            let ang = std::f64::consts::TAU * k as f64 / n as f64 + rng.gen_range(-0.3..0.3);
            let pos = [ring * ang.cos(), ring * ang.sin(), 0.5 * size[2]];
            let clear = objects.iter().all(|o| {
                let other = 0.5 * (o.state.size[0].powi(2) + o.state.size[1].powi(2)).sqrt();
                let d = ((pos[0] - o.state.position[0]).powi(2)
                    + (pos[1] - o.state.position[1]).powi(2))
                .sqrt();
                d > footprint + other + 0.03
            });
            if clear {
                placed = Some(pos);
                break;
            }
        }
        let position =
            placed.ok_or_else(|| Error::InvalidArgument("could not place scene objects".into()))?;
        objects.push(SceneObject {
            spec,
            state: ObjectState {
                position,
                yaw: rng.gen_range(0.0..std::f64::consts::TAU),
                size,
            },
        });
    }
    Ok(Scene { objects })
}

/// Renders the scene from an elevated camera orbiting its center.
pub fn render_sequence(scene: &Scene, cfg: &SceneConfig, seed: u64) -> Result<Vec<SequenceFrame>> {
    if cfg.frames == 0 {
        return Err(Error::InvalidArgument(
            "sequence needs at least one frame".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0B1E);
    let mut center = Vec3::zeros();
    for o in &scene.objects {
        center += Vec3::from(o.state.position);
    }
    center /= scene.objects.len() as f64;
    let reach = scene
        .objects
        .iter()
        .map(|o| {
            (Vec3::from(o.state.position) - center).norm()
                + 0.5 * o.state.size.iter().fold(0.0f64, |a, b| a.max(*b))
        })
        .fold(0.0, f64::max);
    let dist = (reach / (0.5 * cfg.fov).tan()) * 1.25 + 0.15;
    let tcfg = TaskConfig {
        width: cfg.width,
        height: cfg.height,
        fov: cfg.fov,
        ..TaskConfig::default()
    };
    let az0 = rng.gen_range(0.0..std::f64::consts::TAU);
    let shapes: Vec<(&ShapeSpec, _)> = scene
        .objects
        .iter()
        .map(|o| (&o.spec, o.state.pose()))
        .collect();
    let categories: Vec<Category> = scene.objects.iter().map(|o| o.spec.category).collect();
    let mut frames = Vec::with_capacity(cfg.frames);
    for k in 0..cfg.frames {
        let s = if cfg.frames == 1 {
            0.0
        } else {
            k as f64 / (cfg.frames - 1) as f64
        };
        let az = az0 + s * cfg.sweep;
        let el = (40.0 + 8.0 * (3.0 * s * std::f64::consts::PI).sin()).to_radians();
        let cam = orbit_camera(&tcfg, center, az, el, dist * rng.gen_range(0.95..1.05));
        let view = render_scene(&shapes, &cam, DEFAULT_LIGHT);
        frames.push(SequenceFrame {
            camera: cam,
            image: view.image,
            labels: view.labels,
            categories: categories.clone(),
        });
    }
    Ok(frames)
}
