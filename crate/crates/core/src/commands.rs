//! Subcommand bodies shared by the `noma` binary and the integration tests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::archsearch::{
    run_search, write_search_log, EvalBudget, SearchConfig, TaskEvaluator, TimeObjective,
};
use crate::bundle::{self, load_priors, prior_file_name, PriorBundle, FORMAT_VERSION};
use crate::config::Config;
use crate::dataset::{
    self, load_tasks, write_sequence, write_task, Manifest, Sequence, Split, SEQUENCE_DIR,
};
use crate::meshmetrics::{chamfer, completion_ratio, emd, sample_surface, Mesh};
use crate::metalearn::meta_train;
use crate::objmap::{format_report, run_mapper, GroundTruthObject, MappedObject, MapperConfig};
use crate::taskgen::scene::{make_scene, render_sequence, SceneConfig};
use crate::taskgen::{build_splits, Category, TaskConfig};
use crate::threads::worker_count;
use crate::train::{extract_mesh, MeshingConfig, SamplingMode, TrainConfig, TrainSetup};
use crate::{Error, Result};

pub const GEN_TASKS_KEYS: &[&str] = &[
    "categories",
    "train",
    "test",
    "seed",
    "task.*",
    "scene.*",
];

/// Writes the task splits of every listed category and, when
/// `scene.categories` is set, one multi-object sequence.
pub fn gen_tasks(cfg: &Config, out: &Path) -> Result<Manifest> {
    cfg.check_keys(GEN_TASKS_KEYS)?;
    let categories: Vec<Category> = cfg
        .get_list("categories")?
        .ok_or_else(|| Error::config("categories", "required key is missing"))?;
    if categories.is_empty() {
        return Err(Error::config("categories", "needs at least one category"));
    }
    let n_train: usize = cfg.get("train", 4)?;
    let n_test: usize = cfg.get("test", 2)?;
    let seed: u64 = cfg.get("seed", 0)?;
    let d = TaskConfig::default();
    let task = TaskConfig {
        min_frames: cfg.get("task.min_frames", d.min_frames)?,
        max_frames: cfg.get("task.max_frames", d.max_frames)?,
        width: cfg.get("task.width", d.width)?,
        height: cfg.get("task.height", d.height)?,
        fov: cfg.get("task.fov_deg", d.fov.to_degrees())?.to_radians(),
    };
    task.validate()
        .map_err(|e| Error::config("task.*", e.to_string()))?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut counts = BTreeMap::new();
    for (ci, &cat) in categories.iter().enumerate() {
        let (train, test) = build_splits(cat, n_train, n_test, seed ^ ((ci as u64) << 32), &task)?;
        for (split, tasks) in [(Split::Train, &train), (Split::Test, &test)] {
            for (i, t) in tasks.iter().enumerate() {
                write_task(&Manifest::task_dir(out, cat, split, i), t)?;
            }
        }
        log::info!("{cat}: {} train, {} test tasks", train.len(), test.len());
        counts.insert(cat, (n_train, n_test));
    }
    let scene_cats: Option<Vec<Category>> = cfg.get_list("scene.categories")?;
    if let Some(cats) = &scene_cats {
        let sd = SceneConfig::default();
        let scfg = SceneConfig {
            categories: cats.clone(),
            frames: cfg.get("scene.frames", sd.frames)?,
            width: cfg.get("scene.width", sd.width)?,
            height: cfg.get("scene.height", sd.height)?,
            fov: cfg.get("scene.fov_deg", sd.fov.to_degrees())?.to_radians(),
            sweep: cfg.get("scene.sweep_deg", sd.sweep.to_degrees())?.to_radians(),
        };
        let scene_seed: u64 = cfg.get("scene.seed", seed)?;
        let scene = make_scene(cats, scene_seed)?;
        let frames = render_sequence(&scene, &scfg, scene_seed)?;
        let ground_truth = scene
            .objects
            .iter()
            .enumerate()
            .map(|(k, o)| GroundTruthObject {
                name: o.name(k),
                category: o.spec.category,
                mesh: o.world_mesh(),
            })
            .collect();
        write_sequence(
            &out.join(SEQUENCE_DIR),
            &Sequence {
                frames,
                ground_truth,
            },
        )?;
    }
    let manifest = Manifest {
        seed,
        task,
        counts,
        has_sequence: scene_cats.is_some(),
    };
    manifest.save(out)?;
    Ok(manifest)
}

pub const TRAIN_PRIOR_KEYS: &[&str] = &["seed", "search.*", "budget.*", "meta.*", "prior.*"];

/// Search, meta-training of the knee genome and baking; returns the bundle path.
pub fn train_prior(dataset: &Path, category: Category, cfg: &Config, out: &Path) -> Result<PathBuf> {
    cfg.check_keys(TRAIN_PRIOR_KEYS)?;
    let seed: u64 = cfg.get("seed", 0)?;
    let (train_tasks, test_tasks) = load_tasks(dataset, category)?;
    if train_tasks.is_empty() || test_tasks.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "dataset has no {category} tasks in one of the splits"
        )));
    }
    let db = EvalBudget::default();
    let budget = EvalBudget {
        inner: TrainConfig {
            rays_per_iter: cfg.get("budget.rays", db.inner.rays_per_iter)?,
            n_coarse: cfg.get("budget.samples", db.inner.n_coarse)?,
            n_samples: cfg.get("budget.samples", db.inner.n_samples)?,
            ..db.inner.clone()
        },
        adapt_iters: cfg.get("budget.adapt_iters", db.adapt_iters)?,
        meshing: MeshingConfig {
            resolution: cfg.get("budget.mesh_resolution", db.meshing.resolution)?,
            surface_samples: cfg.get("budget.surface_samples", db.meshing.surface_samples)?,
            ..db.meshing.clone()
        },
        time: cfg.get::<TimeObjective>("budget.time", db.time)?,
        time_scale: db.time_scale,
    };
    let scfg = SearchConfig {
        population: cfg.get("search.population", 8)?,
        generations: cfg.get("search.generations", 5)?,
        seed: cfg.get("search.seed", seed)?,
        threads: cfg.get("search.threads", worker_count())?,
        ..SearchConfig::default()
    };
    let evaluator = TaskEvaluator::new(&train_tasks, &test_tasks, budget, seed)?;
    let result = run_search(&evaluator, &scfg)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join(format!("{category}.search.csv"));
    let mut log_buf = Vec::new();
    write_search_log(&mut log_buf, &result.records).map_err(|e| Error::io(&log_path, e))?;
    std::fs::write(&log_path, log_buf).map_err(|e| Error::io(&log_path, e))?;

    let knee = &result.knee;
    let arch = knee.arch();
    let ti = TrainConfig::default();
    let inner = TrainConfig {
        rays_per_iter: cfg.get("meta.rays", ti.rays_per_iter)?,
        n_coarse: cfg.get("meta.samples", ti.n_coarse)?,
        n_samples: cfg.get("meta.samples", ti.n_samples)?,
        ..ti
    };
    let mut meta = knee.meta_config(cfg.get("meta.seed", seed)?, &inner);
    meta.steps = cfg.get("meta.steps", meta.steps)?;
    meta.inner_iters = cfg.get("meta.inner_iters", meta.inner_iters)?;
    meta.beta = cfg.get("meta.beta", meta.beta)?;
    meta.eta = cfg.get("meta.eta", meta.eta)?;
    let setups = train_tasks
        .iter()
        .map(|t| TrainSetup::from_task(t, &meta.inner.rays))
        .collect::<Result<Vec<_>>>()?;
    log::info!(
        "{category}: meta-training knee genome ({} params, N={}, q={})",
        arch.param_count(),
        meta.steps,
        meta.inner_iters
    );
    let theta = meta_train(&setups, &arch, &meta)?;
    let md = MeshingConfig::default();
    let meshing = MeshingConfig {
        resolution: cfg.get("prior.grid_resolution", crate::priorgrid::DEFAULT_RESOLUTION)?,
        iso_floor: cfg.get("prior.iso_floor", md.iso_floor)?,
        iso_ceiling: cfg.get("prior.iso_ceiling", md.iso_ceiling)?,
        ..md
    };
    let (grid, mesh) = extract_mesh(&arch, &theta, &meshing)?;
    let mut provenance = BTreeMap::new();
    provenance.insert("search.seed".to_string(), scfg.seed.to_string());
    provenance.insert("search.population".to_string(), scfg.population.to_string());
    provenance.insert("search.generations".to_string(), scfg.generations.to_string());
    provenance.insert("knee.cd".to_string(), format!("{:?}", result.knee_eval.cd));
    provenance.insert("knee.time".to_string(), format!("{:?}", result.knee_eval.time_per_iter));
    provenance.insert("meta.steps".to_string(), meta.steps.to_string());
    provenance.insert("meta.inner_iters".to_string(), meta.inner_iters.to_string());
    provenance.insert("meta.beta".to_string(), format!("{:?}", meta.beta));
    provenance.extend(knee.to_kv());
    let bundle = PriorBundle {
        category,
        arch,
        theta,
        grid,
        mesh,
        provenance,
    };
    let path = out.join(prior_file_name(category));
    bundle.save(&path)?;
    Ok(path)
}

pub const MAP_KEYS: &[&str] = &[
    "seed",
    "threads",
    "iou_threshold",
    "piou_threshold",
    "alpha_w",
    "alpha_t",
    "voxel",
    "cluster_radius",
    "min_cluster_points",
    "fuse_iou",
    "visibility_tol",
    "stat_resolution",
    "yaw_samples",
    "ready_frames",
    "ready_span_deg",
    "icp_iters",
    "train.*",
    "mesh.*",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MapFlags {
    pub no_priors: bool,
    /// Forces uniform ray sampling.
    pub ablate_ps: bool,
}

pub fn mapper_config(cfg: &Config, flags: MapFlags) -> Result<MapperConfig> {
    cfg.check_keys(MAP_KEYS)?;
    let d = MapperConfig::default();
    let t = &d.train;
    let train = TrainConfig {
        iters: cfg.get("train.iters", t.iters)?,
        lr: cfg.get("train.lr", t.lr)?,
        rays_per_iter: cfg.get("train.rays", t.rays_per_iter)?,
        n_coarse: cfg.get("train.coarse", t.n_coarse)?,
        n_samples: cfg.get("train.samples", t.n_samples)?,
        refresh_every: cfg.get("train.refresh_every", t.refresh_every)?,
        sampling: if flags.ablate_ps { SamplingMode::Uniform } else { t.sampling },
        ..t.clone()
    };
    Ok(MapperConfig {
        iou_threshold: cfg.get("iou_threshold", d.iou_threshold)?,
        piou_threshold: cfg.get("piou_threshold", d.piou_threshold)?,
        alpha_w: cfg.get("alpha_w", d.alpha_w)?,
        alpha_t: cfg.get("alpha_t", d.alpha_t)?,
        voxel: cfg.get("voxel", d.voxel)?,
        cluster_radius: cfg.get("cluster_radius", d.cluster_radius)?,
        min_cluster_points: cfg.get("min_cluster_points", d.min_cluster_points)?,
        fuse_iou: cfg.get("fuse_iou", d.fuse_iou)?,
        visibility_tol: cfg.get("visibility_tol", d.visibility_tol)?,
        stat_resolution: cfg.get("stat_resolution", d.stat_resolution)?,
        yaw_samples: cfg.get("yaw_samples", d.yaw_samples)?,
        ready_frames: cfg.get("ready_frames", d.ready_frames)?,
        ready_span: cfg
            .get("ready_span_deg", d.ready_span.to_degrees())?
            .to_radians(),
        icp_iters: cfg.get("icp_iters", d.icp_iters)?,
        train,
        meshing: MeshingConfig {
            resolution: cfg.get("mesh.resolution", d.meshing.resolution)?,
            surface_samples: cfg.get("mesh.surface_samples", d.meshing.surface_samples)?,
            ..d.meshing.clone()
        },
        use_priors: !flags.no_priors,
        threads: cfg.get("threads", worker_count())?,
        seed: cfg.get("seed", 0)?,
        ..d
    })
}

#[derive(Clone, Debug)]
pub struct MapOutput {
    pub objects: Vec<MappedObject>,
    pub report: String,
    /// Written mesh files, one per mapped object.
    pub meshes: Vec<PathBuf>,
}

/// Maps a recorded sequence; writes `<name>.obj` per object and `report.txt`.
pub fn map(sequence: &Path, priors: Option<&Path>, cfg: &Config, flags: MapFlags, out: &Path) -> Result<MapOutput> {
    let mcfg = mapper_config(cfg, flags)?;
    let seq = dataset::read_sequence(sequence)?;
    let bundles: BTreeMap<Category, Arc<PriorBundle>> = match (priors, flags.no_priors) {
        (Some(dir), false) => load_priors(dir)?
            .into_iter()
            .map(|(c, b)| (c, Arc::new(b)))
            .collect(),
        _ => BTreeMap::new(),
    };
    let frames = seq.mapper_frames();
    let objects = run_mapper(&frames, &bundles, &seq.ground_truth, &mcfg)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut meshes = Vec::new();
    let mut taken = BTreeSet::new();
    for o in &objects {
        let Some(mesh) = &o.mesh else { continue };
        let mut name = o.name();
        if !taken.insert(name.clone()) {
            name = format!("{}_{}_{}", o.category, "track", o.id);
            taken.insert(name.clone());
        }
        let path = out.join(format!("{name}.obj"));
        mesh.save_obj(&path)?;
        meshes.push(path);
    }
    let report = format_report(&objects);
    let rpath = out.join("report.txt");
    std::fs::write(&rpath, &report).map_err(|e| Error::io(&rpath, e))?;
    Ok(MapOutput {
        objects,
        report,
        meshes,
    })
}

pub const DEFAULT_TAUS: [f64; 2] = [0.004, 0.01];

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub taus: Vec<f64>,
    pub samples: usize,
    pub emd_points: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            taus: DEFAULT_TAUS.to_vec(),
            samples: crate::meshmetrics::DEFAULT_SURFACE_SAMPLES,
            emd_points: crate::meshmetrics::DEFAULT_EMD_SUBSAMPLE,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub cd: f64,
    pub cr: Vec<f64>,
    pub emd: f64,
}

fn obj_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("obj") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Scores every `<name>.obj` in `meshes` against `gt/<name>.obj`.
pub fn eval(meshes: &Path, gt: &Path, cfg: &EvalConfig) -> Result<Vec<EvalRow>> {
    let rec = obj_stems(meshes)?;
    let truth = obj_stems(gt)?;
    let unmatched: Vec<&str> = rec
        .keys()
        .filter(|k| !truth.contains_key(*k))
        .chain(truth.keys().filter(|k| !rec.contains_key(*k)))
        .map(String::as_str)
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "unmatched mesh names: {}",
            unmatched.join(", ")
        )));
    }
    if rec.is_empty() {
        return Err(Error::InvalidArgument("no meshes to evaluate".into()));
    }
    rec.iter()
        .map(|(name, path)| {
            let a = Mesh::load_obj(path)?;
            let b = Mesh::load_obj(&truth[name])?;
            score_pair(name, &a, &b, cfg)
        })
        .collect()
}

pub fn score_pair(name: &str, rec: &Mesh, gt: &Mesh, cfg: &EvalConfig) -> Result<EvalRow> {
    let gt_pts = sample_surface(gt, cfg.samples, cfg.seed)?;
    if rec.is_empty() {
        return Err(Error::InvalidArgument(format!("mesh {name} is empty")));
    }
    // Same seed on both sides: identical meshes give identical samples.
    let rec_pts = sample_surface(rec, cfg.samples, cfg.seed)?;
    Ok(EvalRow {
        name: name.to_string(),
        cd: chamfer(&rec_pts, &gt_pts)?,
        cr: cfg
            .taus
            .iter()
            .map(|&t| completion_ratio(&gt_pts, &rec_pts, t))
            .collect::<Result<_>>()?,
        emd: emd(&rec_pts, &gt_pts, cfg.emd_points, cfg.seed)?,
    })
}

/// Comma-separated table ending in a `mean` row.
pub fn format_eval(rows: &[EvalRow], taus: &[f64]) -> String {
    let mut s = String::from("name,cd");
    for t in taus {
        let _ = write!(s, ",cr@{t}");
    }
    s.push_str(",emd\n");
    let n = rows.len().max(1) as f64;
    let mut mean_cr = vec![0.0; taus.len()];
    let (mut mean_cd, mut mean_emd) = (0.0, 0.0);
    for r in rows {
        let _ = write!(s, "{},{:.6}", r.name, r.cd);
        for (k, c) in r.cr.iter().enumerate() {
            let _ = write!(s, ",{c:.6}");
            mean_cr[k] += c / n;
        }
        let _ = writeln!(s, ",{:.6}", r.emd);
        mean_cd += r.cd / n;
        mean_emd += r.emd / n;
    }
    let _ = write!(s, "mean,{mean_cd:.6}");
    for c in mean_cr {
        let _ = write!(s, ",{c:.6}");
    }
    let _ = writeln!(s, ",{mean_emd:.6}");
    s
}

/// Header, counts and grid statistics of a prior file.
pub fn inspect(path: &Path) -> Result<String> {
    let bundle = PriorBundle::load(path)?;
    let mut s = String::new();
    let _ = writeln!(s, "file        {}", path.display());
    let _ = writeln!(s, "format      NOMA v{FORMAT_VERSION}");
    let _ = writeln!(s, "category    {}", bundle.category);
    for (k, v) in bundle.arch.to_kv() {
        let _ = writeln!(s, "{k:<28}{v}");
    }
    let _ = writeln!(s, "params      {}", bundle.theta.len());
    let _ = writeln!(s, "grid        {}^3 max {:.4} mean {:.4}", bundle.grid.resolution(), bundle.grid.max(), bundle.grid.mean());
    let _ = writeln!(s, "mesh        {} vertices, {} triangles", bundle.mesh.vertices.len(), bundle.mesh.triangles.len());
    let _ = writeln!(s, "bytes       {}", bundle.encoded_len());
    for (k, v) in &bundle.provenance {
        let _ = writeln!(s, "{k:<28}{v}");
    }
    Ok(s)
}

/// Header-only view used to list a directory of priors.
pub fn inspect_header(path: &Path) -> Result<BTreeMap<String, String>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(file);
    Ok(bundle::read_header(&mut r)?.0)
}
