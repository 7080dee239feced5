//! The per-object optimization loop shared by meta-learning, architecture
//! evaluation and the online mapper.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;

use crate::field::{AdamState, FieldArch, FieldModel, FieldOutput, ForwardCache, ParamVector};
use crate::geometry::ObjectState;
use crate::meshmetrics::{chamfer, marching_cubes_closed, sample_surface, Cloud, Mesh};
use crate::priorgrid::{iso_level, refresh_grid, sample_ray, DensityGrid};
use crate::render::{
    batch_loss, uniform_samples, Camera, LossBreakdown, LossWeights, Mask, RayConfig, RaySampleSet,
    RaySource, RgbdImage,
};
use crate::taskgen::Task;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingMode {
    Uniform,
    /// Inverse-transform sampling against the latest density grid.
    Prior,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iters: usize,
    pub lr: f32,
    pub rays_per_iter: usize,
    pub n_coarse: usize,
    pub n_samples: usize,
    pub loss: LossWeights,
    pub rays: RayConfig,
    pub sampling: SamplingMode,
    /// Grid refresh period in iterations (prior sampling only).
    pub refresh_every: usize,
    pub grid_resolution: usize,
    pub escape_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters: 200,
            lr: 1e-2,
            rays_per_iter: 128,
            n_coarse: 32,
            n_samples: 32,
            loss: LossWeights::default(),
            rays: RayConfig::default(),
            sampling: SamplingMode::Uniform,
            refresh_every: 50,
            grid_resolution: 64,
            escape_eps: 1e-4,
        }
    }
}

/// One training view with its precomputed ray source.
#[derive(Clone, Debug)]
pub struct TrainView {
    pub camera: Camera,
    pub image: RgbdImage,
    source: RaySource,
}

/// Views of one object plus the box they are expressed against.
#[derive(Clone, Debug)]
pub struct TrainSetup {
    pub views: Vec<TrainView>,
    pub state: ObjectState,
}

impl TrainSetup {
    pub fn new(
        views: Vec<(Camera, RgbdImage, Mask)>,
        state: ObjectState,
        rays: &RayConfig,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::InvalidArgument("no training views".into()));
        }
        let pose = state.pose();
        let views = views
            .into_iter()
            .map(|(camera, image, mask)| {
                let source = RaySource::new(&camera, &mask, &pose, state.size, rays)?;
                Ok(TrainView {
                    camera,
                    image,
                    source,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { views, state })
    }

    /// Uses the task's ground-truth box.
    pub fn from_task(task: &Task, rays: &RayConfig) -> Result<Self> {
        let views = task
            .cameras
            .iter()
            .zip(&task.frames)
            .map(|(c, f)| (c.clone(), f.image.clone(), f.mask.clone()))
            .collect();
        Self::new(views, task.gt_state, rays)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamVector,
    pub losses: Vec<LossBreakdown>,
    /// Wall time per iteration, seconds.
    pub iter_seconds: Vec<f64>,
    pub final_grid: Option<Arc<DensityGrid>>,
}

impl TrainOutcome {
    pub fn median_iter_seconds(&self) -> f64 {
        median(&self.iter_seconds)
    }
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs `cfg.iters` Adam steps on `params` from a fresh optimizer state.
///
/// With [`SamplingMode::Prior`] the rays are sampled against `grid` (uniformly
/// while no grid exists), and the grid is rebuilt from the live field every
/// `cfg.refresh_every` iterations.
pub fn train<R: Rng>(
    arch: &FieldArch,
    params: &ParamVector,
    setup: &TrainSetup,
    cfg: &TrainConfig,
    grid: Option<Arc<DensityGrid>>,
    rng: &mut R,
) -> Result<TrainOutcome> {
    let model = FieldModel::new(arch)?;
    params.check_arch(arch)?;
    if cfg.rays_per_iter == 0 || cfg.n_samples == 0 {
        return Err(Error::InvalidArgument(
            "rays and samples per iteration must be positive".into(),
        ));
    }
    let mut theta = params.clone();
    let mut adam = AdamState::new(theta.len(), cfg.lr);
    let mut grad = vec![0f32; theta.len()];
    let mut cache = ForwardCache::default();
    let mut grid = grid;
    let mut losses = Vec::with_capacity(cfg.iters);
    let mut times = Vec::with_capacity(cfg.iters);
    let mut sets: Vec<RaySampleSet> = Vec::with_capacity(cfg.rays_per_iter);
    let mut points: Vec<[f32; 3]> = Vec::new();
    let size = setup.state.size;
    for it in 0..cfg.iters {
        let start = Instant::now();
        if cfg.sampling == SamplingMode::Prior
            && cfg.refresh_every > 0
            && it > 0
            && it % cfg.refresh_every == 0
        {
            grid = Some(Arc::new(refresh_grid(&theta, arch, cfg.grid_resolution)?));
        }
        let view = &setup.views[rng.gen_range(0..setup.views.len())];
        let rays = view.source.sample(
            &view.camera,
            &view.image,
            cfg.rays_per_iter,
            cfg.rays.bg_ray_fraction,
            rng,
        );
        sets.clear();
        points.clear();
        for ray in &rays {
            let set = match (&grid, cfg.sampling) {
                (Some(g), SamplingMode::Prior) => sample_ray(
                    g,
                    ray,
                    size,
                    cfg.n_coarse,
                    cfg.n_samples,
                    cfg.escape_eps,
                    rng,
                ),
                _ => uniform_samples(ray, size, cfg.n_samples),
            };
            points.extend_from_slice(&set.positions);
            sets.push(set);
        }
        model.forward(&theta.values, &points, &mut cache)?;
        let outputs: &[FieldOutput] = cache.outputs();
        let (loss, up) = batch_loss(&rays, &sets, outputs, cfg.loss, rng)?;
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at iteration {it}")));
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        model.backward(&theta.values, &cache, &up.d_sigma, &up.d_rgb, &mut grad)?;
        adam.update(&mut theta.values, &grad)?;
        losses.push(loss);
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(TrainOutcome {
        params: theta,
        losses,
        iter_seconds: times,
        final_grid: grid,
    })
}

/// Resolution and iso floor used when meshing a trained field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshingConfig {
    pub resolution: usize,
    pub iso_floor: f64,
    pub iso_ceiling: f64,
    pub surface_samples: usize,
}

impl Default for MeshingConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            iso_floor: crate::priorgrid::DEFAULT_ISO_FLOOR,
            iso_ceiling: crate::priorgrid::DEFAULT_ISO_CEILING,
            surface_samples: crate::meshmetrics::DEFAULT_SURFACE_SAMPLES,
        }
    }
}

/// Grid and mesh of a field, with the mesh in unit-cube coordinates.
pub fn extract_mesh(
    arch: &FieldArch,
    params: &ParamVector,
    mcfg: &MeshingConfig,
) -> Result<(DensityGrid, Mesh)> {
    let grid = refresh_grid(params, arch, mcfg.resolution)?;
    let mesh = marching_cubes_closed(&grid, iso_level(&grid, mcfg.iso_floor, mcfg.iso_ceiling));
    Ok((grid, mesh))
}

/// Maps a unit-cube mesh into the metric object frame of a box of extents `size`.
pub fn to_object_frame(mesh: &Mesh, size: [f64; 3]) -> Mesh {
    mesh.map_vertices(|v| [0, 1, 2].map(|k| (v[k] - 0.5) * size[k]))
}

/// Chamfer distance between a reconstruction and the ground-truth surface,
/// both in the metric object frame. An empty reconstruction scores as if it
/// were a single point at the box center.
pub fn reconstruction_cd(rec: &Mesh, gt: &Mesh, samples: usize, seed: u64) -> Result<f64> {
    let gt_pts = sample_surface(gt, samples, seed)?;
    let rec_pts: Cloud = if rec.is_empty() {
        vec![[0.0; 3]]
    } else {
        sample_surface(rec, samples, seed ^ 0xC0FFEE)?
    };
    chamfer(&rec_pts, &gt_pts)
}

/// Meshes a trained field and scores it against a task's ground truth.
pub fn evaluate_on_task(
    arch: &FieldArch,
    params: &ParamVector,
    task: &Task,
    mcfg: &MeshingConfig,
    seed: u64,
) -> Result<f64> {
    let (_, mesh) = extract_mesh(arch, params, mcfg)?;
    let rec = to_object_frame(&mesh, task.gt_state.size);
    reconstruction_cd(&rec, &task.gt_mesh, mcfg.surface_samples, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::init_params;
    use crate::taskgen::{make_task, Category, TaskConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_arch() -> FieldArch {
        FieldArch {
            hash_levels: 4,
            log2_table_size: 10,
            base_resolution: 4,
            hidden_width: 16,
            hidden_layers: 1,
            ..FieldArch::desk_default()
        }
    }

    fn small_task() -> Task {
        let cfg = TaskConfig {
            min_frames: 6,
            max_frames: 6,
            width: 40,
            height: 40,
            ..Default::default()
        };
        make_task(Category::Ball, 11, &cfg).unwrap()
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let arch = tiny_arch();
        let task = small_task();
        let setup = TrainSetup::from_task(&task, &RayConfig::default()).unwrap();
        let p0 = init_params(&arch, 1).unwrap();
        let cfg = TrainConfig {
            iters: 60,
            rays_per_iter: 64,
            n_samples: 16,
            n_coarse: 16,
            ..Default::default()
        };
        let a = train(
            &arch,
            &p0,
            &setup,
            &cfg,
            None,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        let b = train(
            &arch,
            &p0,
            &setup,
            &cfg,
            None,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        assert_eq!(a.params, b.params);
        let head: f64 = a.losses[..5].iter().map(|l| l.total).sum();
        let tail: f64 = a.losses[55..].iter().map(|l| l.total).sum();
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn prior_mode_refreshes_grid() {
        let arch = tiny_arch();
        let task = small_task();
        let setup = TrainSetup::from_task(&task, &RayConfig::default()).unwrap();
        let p0 = init_params(&arch, 2).unwrap();
        let cfg = TrainConfig {
            iters: 12,
            rays_per_iter: 32,
            n_samples: 8,
            n_coarse: 8,
            sampling: SamplingMode::Prior,
            refresh_every: 5,
            grid_resolution: 8,
            ..Default::default()
        };
        let out = train(
            &arch,
            &p0,
            &setup,
            &cfg,
            None,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(out.final_grid.unwrap().resolution(), 8);
    }

    #[test]
    fn empty_reconstruction_scores_finite() {
        let task = small_task();
        let cd = reconstruction_cd(&Mesh::default(), &task.gt_mesh, 500, 0).unwrap();
        assert!(cd.is_finite() && cd > 0.0);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[]), 0.0);
    }
}
