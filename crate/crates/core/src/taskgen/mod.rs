//! Procedural reconstruction tasks: parametric shapes, rendered RGB-D views
//! with masks and poses, and train/test splits.

mod raytrace;
pub mod scene;
mod shapes;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use raytrace::{
    render_frame, render_posed, render_scene, trace, RenderedView, DEFAULT_LIGHT, HIT_EPS,
    MAX_STEPS,
};
pub use shapes::{
    sample_shape, sd_box, sd_capsule, sd_cylinder, sd_torus_x, Category, ShapeParams, ShapeSpec,
};

use crate::geometry::{look_at, ObjectState, Vec3};
use crate::meshmetrics::{marching_cubes_values, Mesh};
use crate::render::{Camera, Mask, RgbdImage};
use crate::{Error, Result};

pub const GT_MESH_RESOLUTION: usize = 96;

#[derive(Clone, Debug, PartialEq)]
pub struct TaskConfig {
    pub min_frames: usize,
    pub max_frames: usize,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view, radians.
    pub fov: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            min_frames: 8,
            max_frames: 12,
            width: 96,
            height: 96,
            fov: 50f64.to_radians(),
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_frames < 4 || self.max_frames > 64 || self.min_frames > self.max_frames {
            return Err(Error::InvalidArgument(format!(
                "frame count range [{}, {}] must lie within [4, 64]",
                self.min_frames, self.max_frames
            )));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::InvalidArgument("image must be at least 8x8".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: RgbdImage,
    pub mask: Mask,
}

/// One single-object reconstruction problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub category: Category,
    pub seed: u64,
    pub spec: ShapeSpec,
    /// Ground-truth world placement; `size` is the shape's box extents.
    pub gt_state: ObjectState,
    pub cameras: Vec<Camera>,
    pub frames: Vec<Frame>,
    /// Surface in the metric object frame.
    pub gt_mesh: Mesh,
}

impl Task {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() || self.frames.len() != self.cameras.len() {
            return Err(Error::Integrity("task frames and cameras disagree".into()));
        }
        for (f, c) in self.frames.iter().zip(&self.cameras) {
            let n = c.width * c.height;
            if f.image.width != c.width
                || f.image.height != c.height
                || f.image.rgb.len() != 3 * n
                || f.image.depth.len() != n
                || f.mask.data.len() != n
            {
                return Err(Error::Integrity(
                    "frame dimensions disagree with camera".into(),
                ));
            }
            if f.mask.count() == 0 {
                return Err(Error::NoObjectPixels);
            }
        }
        Ok(())
    }

    /// Ground-truth mesh in normalized box coordinates.
    pub fn normalized_gt_mesh(&self) -> Mesh {
        let s = self.gt_state.size;
        self.gt_mesh
            .map_vertices(|v| [0, 1, 2].map(|k| v[k] / s[k] + 0.5))
    }
}

/// Marching cubes on the negated distance field over the padded shape box,
/// in the object frame.
pub fn sdf_mesh(spec: &ShapeSpec, resolution: usize) -> Mesh {
    let e = spec.extents();
    let lo = e.map(|x| -0.5 * x - 0.04 * x - 1e-3);
    let hi = lo.map(|x| -x);
    let r = resolution.max(2);
    let mut values = Vec::with_capacity(r * r * r);
    for k in 0..r {
        for j in 0..r {
            for i in 0..r {
                let t = [i, j, k].map(|c| c as f64 / (r - 1) as f64);
                let p = [0, 1, 2].map(|a| lo[a] + t[a] * (hi[a] - lo[a]));
                values.push(-spec.sdf(p) as f32);
            }
        }
    }
    marching_cubes_values(&values, r, lo, hi, 0.0)
}

fn task_rng(category: Category, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ (category as u64 + 17))
}

/// Camera looking at `target` from azimuth `az`, elevation `el`, distance `dist`.
pub fn orbit_camera(cfg: &TaskConfig, target: Vec3, az: f64, el: f64, dist: f64) -> Camera {
    let eye = target + dist * Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
    Camera::from_fov(cfg.width, cfg.height, cfg.fov, look_at(eye, target))
}

/// Renders one shape from a jittered hemisphere ring of cameras.
pub fn make_task(category: Category, seed: u64, cfg: &TaskConfig) -> Result<Task> {
    cfg.validate()?;
    let spec = sample_shape(category, seed);
    let mut rng = task_rng(category, seed);
    let size = spec.extents();
    let gt_state = ObjectState {
        position: [
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
            0.5 * size[2],
        ],
        yaw: rng.gen_range(0.0..std::f64::consts::TAU),
        size,
    };
    let pose = gt_state.pose();
    let rb = spec.bounding_radius();
    let n = rng.gen_range(cfg.min_frames..=cfg.max_frames);
    let az0 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut cameras = Vec::with_capacity(n);
    let mut frames = Vec::with_capacity(n);
    for k in 0..n {
        let mut attempt = 0;
        loop {
            let az =
                az0 + std::f64::consts::TAU * (k as f64 + rng.gen_range(-0.35..0.35)) / n as f64;
            let el = rng.gen_range(20f64..55.0).to_radians();
            let dist = rb * rng.gen_range(2.6..3.4);
            let jitter = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ) * 0.05
                * rb;
            let target = Vec3::from(gt_state.position) + jitter;
            let cam = orbit_camera(cfg, target, az, el, dist);
            let (image, mask) = render_posed(&spec, &pose, &cam, DEFAULT_LIGHT);
            attempt += 1;
            if mask.count() > 0 || attempt >= 16 {
                if mask.count() == 0 {
                    return Err(Error::NoObjectPixels);
                }
                cameras.push(cam);
                frames.push(Frame { image, mask });
                break;
            }
        }
    }
    let gt_mesh = sdf_mesh(&spec, GT_MESH_RESOLUTION);
    Ok(Task {
        category,
        seed,
        spec,
        gt_state,
        cameras,
        frames,
        gt_mesh,
    })
}

/// Train and test tasks on disjoint shape seeds.
pub fn build_splits(
    category: Category,
    n_train: usize,
    n_test: usize,
    seed: u64,
    cfg: &TaskConfig,
) -> Result<(Vec<Task>, Vec<Task>)> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::InvalidArgument(
            "splits need at least one task each".into(),
        ));
    }
    let (train_seeds, test_seeds) = split_seeds(n_train, n_test, seed);
    let train = train_seeds
        .iter()
        .map(|&s| make_task(category, s, cfg))
        .collect::<Result<_>>()?;
    let test = test_seeds
        .iter()
        .map(|&s| make_task(category, s, cfg))
        .collect::<Result<_>>()?;
    Ok((train, test))
}

pub fn split_seeds(n_train: usize, n_test: usize, seed: u64) -> (Vec<u64>, Vec<u64>) {
    let base = seed.wrapping_mul(1_000_003);
    let train = (0..n_train as u64).map(|i| base.wrapping_add(i)).collect();
    let test = (0..n_test as u64)
        .map(|i| base.wrapping_add(n_train as u64 + i))
        .collect();
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> TaskConfig {
        TaskConfig {
            min_frames: 8,
            max_frames: 8,
            width: 32,
            height: 32,
            ..Default::default()
        }
    }

    #[test]
    fn exact_frame_count_and_visible_masks() {
        let t = make_task(Category::Mug, 3, &small_cfg()).unwrap();
        assert_eq!(t.frames.len(), 8);
        t.validate().unwrap();
        for f in &t.frames {
            for i in 0..f.mask.data.len() {
                if f.mask.data[i] {
                    assert!(f.image.depth[i].is_finite() && f.image.depth[i] > 0.0);
                }
            }
        }
    }

    #[test]
    fn gt_mesh_on_surface() {
        for cat in Category::ALL {
            let spec = sample_shape(cat, 2);
            let m = sdf_mesh(&spec, GT_MESH_RESOLUTION);
            assert!(!m.is_empty());
            for v in &m.vertices {
                assert!(spec.sdf(*v).abs() < 2.0 / 96.0);
            }
        }
    }

    #[test]
    fn splits_are_disjoint_and_deterministic() {
        let (a, b) = split_seeds(5, 3, 42);
        assert!(a.iter().all(|s| !b.contains(s)));
        let cfg = small_cfg();
        let (tr, te) = build_splits(Category::Book, 2, 1, 7, &cfg).unwrap();
        assert_eq!((tr.len(), te.len()), (2, 1));
        let (tr2, _) = build_splits(Category::Book, 2, 1, 7, &cfg).unwrap();
        assert_eq!(tr, tr2);
    }

    #[test]
    fn rejects_bad_frame_range() {
        let cfg = TaskConfig {
            min_frames: 2,
            ..small_cfg()
        };
        assert!(make_task(Category::Ball, 0, &cfg).is_err());
    }
}
