//! Online object mapping: association of per-frame detections into tracks,
//! upright state estimation, canonicalization against category priors and
//! per-object field training.

mod geom;
mod stats;

pub use geom::{
    backproject, canonical_yaw, cluster_filter, coarse_state, convex_hull, extents_in_yaw_frame,
    icp_refine, iou_2d, kabsch, min_area_rect, project_box, state_corners, voxel_downsample,
    yaw_score, BBox2d, CanonicalYaw, Cluster, IcpResult, MIN_EXTENT,
};
pub use stats::{midranks, student_t_two_sided, t_test_one_sample, wilcoxon_rank_sum, EXACT_LIMIT};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bundle::PriorBundle;
use crate::field::{init_params, FieldArch};
use crate::geometry::{rot_z, to_vec3, ObjectState, Rigid};
use crate::kdtree::KdTree;
use crate::meshmetrics::{chamfer, completion_ratio, sample_surface, Cloud, Mesh};
use crate::render::{Camera, Mask, RgbdImage};
use crate::taskgen::Category;
use crate::threads::parallel_map;
use crate::train::{extract_mesh, train, MeshingConfig, SamplingMode, TrainConfig, TrainSetup};
use crate::Result;

/// One detection in one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub frame: usize,
    pub bbox: BBox2d,
    pub mask: Mask,
    /// World frame, meters.
    pub cloud: Cloud,
    pub category: Category,
}

impl Detection {
    /// `None` when the mask is empty or has no depth readings.
    pub fn new(
        frame: usize,
        cam: &Camera,
        image: &RgbdImage,
        mask: Mask,
        category: Category,
    ) -> Option<Self> {
        let bbox = BBox2d::from_mask(&mask)?;
        let cloud = backproject(cam, image, &mask);
        if cloud.is_empty() {
            return None;
        }
        Some(Self {
            frame,
            bbox,
            mask,
            cloud,
            category,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrackStatus {
    Accumulating,
    Ready,
    Training,
    Done,
}

#[derive(Clone, Debug)]
pub struct ObjectTrack {
    pub id: usize,
    pub category: Category,
    /// World frame, meters.
    pub cloud: Cloud,
    /// Frame index, image box and mask of every merged detection.
    pub observations: Vec<(usize, BBox2d, Mask)>,
    /// Camera bearing about the track centroid at each observation, radians.
    pub bearings: Vec<f64>,
    pub state: Option<ObjectState>,
    pub status: TrackStatus,
    /// Frame at which the readiness gate first passed.
    pub ready_at: Option<usize>,
    pub prior: Option<Arc<PriorBundle>>,
}

impl ObjectTrack {
    pub fn last_frame(&self) -> Option<usize> {
        self.observations.last().map(|o| o.0)
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.cloud.len().max(1) as f64;
        let mut c = [0.0; 3];
        for p in &self.cloud {
            for k in 0..3 {
                c[k] += p[k] / n;
            }
        }
        c
    }

    /// Box used for projection: the state box once estimated, else the cloud bounds.
    pub fn box_corners(&self) -> Vec<[f64; 3]> {
        if let Some(s) = &self.state {
            return state_corners(s);
        }
        match crate::geometry::bounds(&self.cloud) {
            Some((lo, hi)) => (0..8)
                .map(|k| {
                    [
                        if k & 1 == 0 { lo[0] } else { hi[0] },
                        if k & 2 == 0 { lo[1] } else { hi[1] },
                        if k & 4 == 0 { lo[2] } else { hi[2] },
                    ]
                })
                .collect(),
            None => Vec::new(),
        }
    }

    /// Smallest arc containing every bearing, radians.
    pub fn bearing_span(&self) -> f64 {
        let mut b: Vec<f64> = self
            .bearings
            .iter()
            .map(|a| a.rem_euclid(std::f64::consts::TAU))
            .collect();
        if b.len() < 2 {
            return 0.0;
        }
        b.sort_by(f64::total_cmp);
        let mut gap = b[0] + std::f64::consts::TAU - b[b.len() - 1];
        for w in b.windows(2) {
            gap = gap.max(w[1] - w[0]);
        }
        std::f64::consts::TAU - gap
    }
}

/// IoU between the projection of the track's box and the detection box; 0
/// when the box is entirely behind the camera.
pub fn projected_iou(track: &ObjectTrack, cam: &Camera, det: &Detection) -> f64 {
    match project_box(&track.box_corners(), cam) {
        Some(b) => iou_2d(&b, &det.bbox),
        None => 0.0,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapperConfig {
    pub iou_threshold: f64,
    pub piou_threshold: f64,
    pub alpha_w: f64,
    pub alpha_t: f64,
    pub voxel: f64,
    pub cluster_radius: f64,
    pub min_cluster_points: usize,
    /// Same-category tracks whose cloud bounds overlap by at least this 3D IoU
    /// are fused after ingestion; values above 1 disable fusion.
    pub fuse_iou: f64,
    /// Depth agreement for a track point to count as seen by the current view, meters.
    pub visibility_tol: f64,
    /// Coordinates are rounded to this step before the statistical tests, meters.
    pub stat_resolution: f64,
    pub yaw_samples: usize,
    pub ready_frames: usize,
    /// Radians.
    pub ready_span: f64,
    pub icp_iters: usize,
    pub icp_tol: f64,
    /// Per-object training; `iters` is the per-object budget.
    pub train: TrainConfig,
    pub meshing: MeshingConfig,
    pub use_priors: bool,
    pub threads: usize,
    pub seed: u64,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            piou_threshold: 0.3,
            alpha_w: 0.05,
            alpha_t: 0.05,
            voxel: 0.02,
            cluster_radius: 0.05,
            min_cluster_points: 20,
            fuse_iou: 0.5,
            visibility_tol: 0.02,
            stat_resolution: 1e-3,
            yaw_samples: 72,
            ready_frames: 6,
            ready_span: 60f64.to_radians(),
            icp_iters: 30,
            icp_tol: 1e-9,
            train: TrainConfig {
                sampling: SamplingMode::Prior,
                ..TrainConfig::default()
            },
            meshing: MeshingConfig::default(),
            use_priors: true,
            threads: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Association {
    /// Indices of the detection clusters to append.
    Merge(Vec<usize>),
    New,
}

/// Voxel centroids of the track cloud that the detection's camera would see:
/// those projecting onto a pixel covered by the detection whose depth agrees
/// within `tol`.
pub fn visible_reference(
    track: &ObjectTrack,
    det: &Detection,
    cam: &Camera,
    voxel: f64,
    tol: f64,
) -> Cloud {
    let pixel = |p: &[f64; 3]| {
        cam.project(&to_vec3(*p))
            .filter(|(u, v, _)| *u >= -0.5 && *v >= -0.5)
            .map(|(u, v, z)| (((u + 0.5) as usize, (v + 0.5) as usize), z))
    };
    let mut depth: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for p in &det.cloud {
        if let Some((px, z)) = pixel(p) {
            let e = depth.entry(px).or_insert(z);
            *e = e.min(z);
        }
    }
    voxel_downsample(&track.cloud, voxel)
        .into_iter()
        .map(|c| c.0)
        .filter(|c| {
            pixel(c).is_some_and(|(px, z)| depth.get(&px).is_some_and(|d| (z - d).abs() <= tol))
        })
        .collect()
}

/// Minimum per-axis rank-sum p and minimum per-axis t-test p of the cluster
/// centroids lying within `overlap` of the reference, against the reference
/// mean, with coordinates rounded to multiples of `resolution`. Fewer than two
/// points on either side fails.
pub fn cluster_p_values(
    reference: &[[f64; 3]],
    cluster: &Cluster,
    overlap: f64,
    resolution: f64,
) -> Result<(f64, f64)> {
    if reference.len() < 2 {
        return Ok((0.0, 0.0));
    }
    let tree = KdTree::new(reference);
    let sample: Cloud = cluster
        .centroids
        .iter()
        .filter(|c| tree.nearest_distance(c) <= overlap)
        .copied()
        .collect();
    if sample.len() < 2 {
        return Ok((0.0, 0.0));
    }
    let q = |v: f64| {
        if resolution > 0.0 {
            (v / resolution).round() * resolution
        } else {
            v
        }
    };
    let (mut pw, mut pt) = (1.0f64, 1.0f64);
    for k in 0..3 {
        let a: Vec<f64> = sample.iter().map(|p| q(p[k])).collect();
        let b: Vec<f64> = reference.iter().map(|p| q(p[k])).collect();
        pw = pw.min(wilcoxon_rank_sum(&a, &b)?);
        let mu0 = b.iter().sum::<f64>() / b.len() as f64;
        pt = pt.min(t_test_one_sample(&a, mu0)?);
    }
    Ok((pw, pt))
}

/// Two gates: box overlap (IoU for consecutive frames, projected IoU
/// otherwise) with matching category, then per-cluster statistical tests
/// against the visible part of the track.
pub fn associate(
    track: &ObjectTrack,
    det: &Detection,
    clusters: &[Cluster],
    cam: &Camera,
    consecutive: bool,
    cfg: &MapperConfig,
) -> Result<Association> {
    if track.category != det.category {
        return Ok(Association::New);
    }
    let iou_ok = consecutive
        && track
            .observations
            .last()
            .map_or(0.0, |o| iou_2d(&o.1, &det.bbox))
            >= cfg.iou_threshold;
    let overlap = iou_ok || projected_iou(track, cam, det) >= cfg.piou_threshold;
    if !overlap {
        return Ok(Association::New);
    }
    let reference = visible_reference(track, det, cam, cfg.voxel, cfg.visibility_tol);
    let mut keep = Vec::new();
    for (i, c) in clusters.iter().enumerate() {
        let (pw, pt) = cluster_p_values(&reference, c, 0.5 * cfg.voxel, cfg.stat_resolution)?;
        if pw >= cfg.alpha_w && pt >= cfg.alpha_t {
            keep.push(i);
        }
    }
    Ok(if keep.is_empty() {
        Association::New
    } else {
        Association::Merge(keep)
    })
}

/// A frame handed to the mapper.
#[derive(Clone, Debug)]
pub struct MapperFrame {
    pub camera: Camera,
    pub image: RgbdImage,
    pub detections: Vec<(Mask, Category)>,
}

/// Per-object result row.
#[derive(Clone, Debug)]
pub struct MappedObject {
    pub id: usize,
    pub category: Category,
    pub prior_used: bool,
    pub state: Option<ObjectState>,
    /// Canonical yaw in degrees, when canonicalized.
    pub gamma_deg: Option<f64>,
    /// World frame.
    pub mesh: Option<Mesh>,
    pub iterations: usize,
    pub wall_seconds: f64,
    pub frames: usize,
    pub cd: Option<f64>,
    pub cr: Vec<(f64, f64)>,
    /// Name of the matched ground-truth object.
    pub matched: Option<String>,
    pub skipped: Option<String>,
}

impl MappedObject {
    /// The matched ground-truth name, else `category_id`.
    pub fn name(&self) -> String {
        self.matched.clone().unwrap_or_else(|| format!("{}_{}", self.category, self.id))
    }
}

/// Named ground-truth object with its world-frame surface.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthObject {
    pub name: String,
    pub category: Category,
    pub mesh: Mesh,
}

pub type GroundTruth = [GroundTruthObject];

/// Frame ingestion: clustering, association, readiness.
pub fn ingest(
    frames: &[MapperFrame],
    priors: &BTreeMap<Category, Arc<PriorBundle>>,
    cfg: &MapperConfig,
) -> Result<Vec<ObjectTrack>> {
    let mut tracks: Vec<ObjectTrack> = Vec::new();
    for (fi, frame) in frames.iter().enumerate() {
        let mut used = vec![false; tracks.len()];
        for (mask, cat) in &frame.detections {
            let Some(det) = Detection::new(fi, &frame.camera, &frame.image, mask.clone(), *cat)
            else {
                continue;
            };
            let clusters = cluster_filter(
                &det.cloud,
                cfg.voxel,
                cfg.cluster_radius,
                cfg.min_cluster_points,
            )?;
            if clusters.is_empty() {
                continue;
            }
            let mut candidates: Vec<(f64, usize, bool)> = Vec::new();
            for (ti, t) in tracks.iter().enumerate() {
                if used[ti] || t.category != det.category {
                    continue;
                }
                let consecutive = t.last_frame() == fi.checked_sub(1);
                let score = if consecutive {
                    t.observations
                        .last()
                        .map_or(0.0, |o| iou_2d(&o.1, &det.bbox))
                } else {
                    projected_iou(t, &frame.camera, &det)
                };
                candidates.push((score, ti, consecutive));
            }
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut merged = false;
            for (_, ti, consecutive) in candidates {
                if let Association::Merge(keep) = associate(
                    &tracks[ti],
                    &det,
                    &clusters,
                    &frame.camera,
                    consecutive,
                    cfg,
                )? {
                    let t = &mut tracks[ti];
                    for &k in &keep {
                        t.cloud.extend_from_slice(&clusters[k].points);
                    }
                    record_observation(t, &det, &frame.camera);
                    used[ti] = true;
                    merged = true;
                    break;
                }
            }
            if !merged {
                let mut t = ObjectTrack {
                    id: tracks.len(),
                    category: det.category,
                    cloud: clusters
                        .iter()
                        .flat_map(|c| c.points.iter().copied())
                        .collect(),
                    observations: Vec::new(),
                    bearings: Vec::new(),
                    state: None,
                    status: TrackStatus::Accumulating,
                    ready_at: None,
                    prior: if cfg.use_priors {
                        priors.get(&det.category).cloned()
                    } else {
                        None
                    },
                };
                record_observation(&mut t, &det, &frame.camera);
                tracks.push(t);
                used.push(true);
            }
        }
        mark_ready(&mut tracks, fi, cfg);
    }
    let mut tracks = fuse_tracks(tracks, cfg);
    if let Some(last) = frames.len().checked_sub(1) {
        mark_ready(&mut tracks, last, cfg);
    }
    Ok(tracks)
}

fn mark_ready(tracks: &mut [ObjectTrack], fi: usize, cfg: &MapperConfig) {
    for t in tracks.iter_mut() {
        if t.status == TrackStatus::Accumulating
            && t.observations.len() >= cfg.ready_frames
            && t.bearing_span() >= cfg.ready_span
        {
            t.status = TrackStatus::Ready;
            t.ready_at = Some(fi);
            log::info!("track {} ({}) ready at frame {fi}", t.id, t.category);
        }
    }
}

fn aabb_iou(a: &Cloud, b: &Cloud) -> f64 {
    let (Some((alo, ahi)), Some((blo, bhi))) =
        (crate::geometry::bounds(a), crate::geometry::bounds(b))
    else {
        return 0.0;
    };
    let mut inter = 1.0;
    let mut va = 1.0;
    let mut vb = 1.0;
    for k in 0..3 {
        inter *= (ahi[k].min(bhi[k]) - alo[k].max(blo[k])).max(0.0);
        va *= ahi[k] - alo[k];
        vb *= bhi[k] - blo[k];
    }
    let union = va + vb - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Fuses same-category tracks whose cloud bounds overlap; ids are renumbered
/// in order of first observation.
pub fn fuse_tracks(mut tracks: Vec<ObjectTrack>, cfg: &MapperConfig) -> Vec<ObjectTrack> {
    let mut i = 0;
    while i < tracks.len() {
        let mut j = i + 1;
        while j < tracks.len() {
            if tracks[i].category == tracks[j].category
                && aabb_iou(&tracks[i].cloud, &tracks[j].cloud) >= cfg.fuse_iou
            {
                let other = tracks.remove(j);
                log::info!("fusing track {} into {}", other.id, tracks[i].id);
                let t = &mut tracks[i];
                t.cloud.extend(other.cloud);
                let mut obs: Vec<_> = t
                    .observations
                    .drain(..)
                    .zip(t.bearings.drain(..))
                    .chain(other.observations.into_iter().zip(other.bearings))
                    .collect();
                obs.sort_by_key(|(o, _)| o.0);
                (t.observations, t.bearings) = obs.into_iter().unzip();
                t.ready_at = match (t.ready_at, other.ready_at) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                };
                if t.ready_at.is_some() {
                    t.status = TrackStatus::Ready;
                }
                j = i + 1;
            } else {
                j += 1;
            }
        }
        i += 1;
    }
    for (k, t) in tracks.iter_mut().enumerate() {
        t.id = k;
    }
    tracks
}

fn record_observation(t: &mut ObjectTrack, det: &Detection, cam: &Camera) {
    let c = t.centroid();
    let eye = cam.center();
    t.bearings.push((eye.y - c[1]).atan2(eye.x - c[0]));
    t.observations.push((det.frame, det.bbox, det.mask.clone()));
}

/// Box of a ready track: coarse upright box, then with a prior the canonical
/// yaw search and an ICP refinement against the prior mesh.
pub fn estimate_state(
    track: &ObjectTrack,
    cfg: &MapperConfig,
) -> Result<(ObjectState, Option<f64>)> {
    let coarse = coarse_state(&track.cloud)?;
    let Some(prior) = &track.prior else {
        return Ok((coarse, None));
    };
    if track.category.is_yaw_symmetric() {
        return Ok((coarse, None));
    }
    let canon = canonical_yaw(&track.cloud, coarse.position, &prior.grid, cfg.yaw_samples)?;
    let mut state = canon.state();
    if !prior.mesh.is_empty() && cfg.icp_iters > 0 {
        let reference: Cloud = sample_surface(&prior.mesh, 4000, cfg.seed ^ track.id as u64)?
            .iter()
            .map(|u| state.denormalize(u))
            .collect();
        let cloud = subsample(&track.cloud, 6000);
        let icp = icp_refine(&reference, &cloud, cfg.icp_iters, cfg.icp_tol)?;
        let t = icp.transform;
        let rot = crate::geometry::rotation_angle(&t.rotation);
        let max_side = state.size.iter().copied().fold(0.0, f64::max);
        if rot <= 20f64.to_radians() && t.translation.norm() <= 0.25 * max_side {
            let pose = t.compose(&state.pose());
            let p = pose.translation;
            state.position = [p.x, p.y, p.z];
            state.yaw = pose.yaw().rem_euclid(std::f64::consts::TAU);
        } else {
            log::warn!("track {}: ICP correction rejected ({rot:.3} rad)", track.id);
        }
    }
    Ok((state, Some(canon.gamma)))
}

/// At most `max` points taken at an even index stride.
pub fn subsample(cloud: &[[f64; 3]], max: usize) -> Cloud {
    if cloud.len() <= max {
        return cloud.to_vec();
    }
    let step = cloud.len() as f64 / max as f64;
    (0..max)
        .map(|i| cloud[(i as f64 * step) as usize])
        .collect()
}

/// Trains one track's field and meshes it in the world frame.
pub fn map_track(
    track: &ObjectTrack,
    frames: &[MapperFrame],
    gt: &GroundTruth,
    cfg: &MapperConfig,
) -> MappedObject {
    let start = Instant::now();
    let mut out = MappedObject {
        id: track.id,
        category: track.category,
        prior_used: track.prior.is_some(),
        state: None,
        gamma_deg: None,
        mesh: None,
        iterations: 0,
        wall_seconds: 0.0,
        frames: track.observations.len(),
        cd: None,
        cr: Vec::new(),
        matched: None,
        skipped: None,
    };
    if let Err(e) = map_track_inner(track, frames, gt, cfg, &mut out) {
        log::warn!("track {} skipped: {e}", track.id);
        out.skipped = Some(e.to_string());
    }
    out.wall_seconds = start.elapsed().as_secs_f64();
    out
}

fn map_track_inner(
    track: &ObjectTrack,
    frames: &[MapperFrame],
    gt: &GroundTruth,
    cfg: &MapperConfig,
    out: &mut MappedObject,
) -> Result<()> {
    let (state, gamma) = estimate_state(track, cfg)?;
    out.state = Some(state);
    out.gamma_deg = gamma.map(f64::to_degrees);
    let views: Vec<(Camera, RgbdImage, Mask)> = track
        .observations
        .iter()
        .map(|(fi, _, m)| {
            (
                frames[*fi].camera.clone(),
                frames[*fi].image.clone(),
                m.clone(),
            )
        })
        .collect();
    let setup = TrainSetup::new(views, state, &cfg.train.rays)?;
    let seed = cfg.seed ^ (track.id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let (arch, theta, grid) = match &track.prior {
        Some(p) => (
            p.arch.clone(),
            p.theta.clone(),
            Some(Arc::new(p.grid.clone())),
        ),
        None => {
            let arch = FieldArch::desk_default();
            let theta = init_params(&arch, seed)?;
            (arch, theta, None)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trained = train(&arch, &theta, &setup, &cfg.train, grid, &mut rng)?;
    out.iterations = trained.losses.len();
    let (_, unit) = extract_mesh(&arch, &trained.params, &cfg.meshing)?;
    let mesh = unit.map_vertices(|u| state.denormalize(&u));
    if let Some(reference) = match_ground_truth(track, &state, gt) {
        out.matched = Some(reference.name.clone());
        let n = cfg.meshing.surface_samples;
        let gt_pts = sample_surface(&reference.mesh, n, cfg.seed)?;
        let rec_pts = if mesh.is_empty() {
            vec![state.position]
        } else {
            sample_surface(&mesh, n, cfg.seed ^ 0xC0FFEE)?
        };
        out.cd = Some(chamfer(&rec_pts, &gt_pts)?);
        for tau in [0.004, 0.01] {
            out.cr
                .push((tau, completion_ratio(&gt_pts, &rec_pts, tau)?));
        }
    }
    out.mesh = Some(mesh);
    Ok(())
}

/// Ground-truth mesh of the same category whose vertex centroid is closest
/// to the estimated box center.
fn match_ground_truth<'a>(
    track: &ObjectTrack,
    state: &ObjectState,
    gt: &'a GroundTruth,
) -> Option<&'a GroundTruthObject> {
    gt.iter()
        .filter(|g| g.category == track.category && !g.mesh.is_empty())
        .map(|g| {
            let n = g.mesh.vertices.len() as f64;
            let c = g.mesh.vertices.iter().fold([0.0; 3], |a, v| {
                [a[0] + v[0] / n, a[1] + v[1] / n, a[2] + v[2] / n]
            });
            let d = (0..3)
                .map(|k| (c[k] - state.position[k]).powi(2))
                .sum::<f64>();
            (d, g)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, g)| g)
}

/// Sequential ingestion, then one training context per ready track on up to
/// `cfg.threads` workers. Tracks that never became ready are reported as skipped.
pub fn run_mapper(
    frames: &[MapperFrame],
    priors: &BTreeMap<Category, Arc<PriorBundle>>,
    gt: &GroundTruth,
    cfg: &MapperConfig,
) -> Result<Vec<MappedObject>> {
    let mut tracks = ingest(frames, priors, cfg)?;
    for t in &mut tracks {
        if t.status == TrackStatus::Ready {
            t.status = TrackStatus::Training;
        }
    }
    let results = parallel_map(&tracks, cfg.threads, |_, t| {
        if t.status != TrackStatus::Training {
            let mut m = map_track_skeleton(t);
            m.skipped = Some(format!(
                "not ready ({} frames, {:.0} deg span)",
                t.observations.len(),
                t.bearing_span().to_degrees()
            ));
            return m;
        }
        map_track(t, frames, gt, cfg)
    });
    for t in &mut tracks {
        if t.status == TrackStatus::Training {
            t.status = TrackStatus::Done;
        }
    }
    Ok(results)
}

fn map_track_skeleton(t: &ObjectTrack) -> MappedObject {
    MappedObject {
        id: t.id,
        category: t.category,
        prior_used: t.prior.is_some(),
        state: None,
        gamma_deg: None,
        mesh: None,
        iterations: 0,
        wall_seconds: 0.0,
        frames: t.observations.len(),
        cd: None,
        cr: Vec::new(),
        matched: None,
        skipped: None,
    }
}

/// Fixed-width table, one row per object.
pub fn format_report(objects: &[MappedObject]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<4} {:<10} {:<8} {:<5} {:>8} {:>24} {:>10} {:>8} {:>8} {:>6} {:>6} {:>8}  status",
        "id",
        "name",
        "category",
        "prior",
        "yaw_deg",
        "size_m",
        "cd_m",
        "cr@4mm",
        "cr@10mm",
        "frames",
        "iters",
        "wall_s"
    );
    for o in objects {
        let size = o.state.map_or("-".to_string(), |st| {
            format!("{:.3}x{:.3}x{:.3}", st.size[0], st.size[1], st.size[2])
        });
        let opt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
        let cr = |tau: f64| o.cr.iter().find(|c| c.0 == tau).map(|c| c.1);
        let _ = writeln!(
            s,
            "{:<4} {:<10} {:<8} {:<5} {:>8} {:>24} {:>10} {:>8} {:>8} {:>6} {:>6} {:>8.2}  {}",
            o.id,
            o.name(),
            o.category,
            if o.prior_used { "yes" } else { "no" },
            opt(o.gamma_deg, 1),
            size,
            opt(o.cd, 6),
            opt(cr(0.004), 3),
            opt(cr(0.01), 3),
            o.frames,
            o.iterations,
            o.wall_seconds,
            o.skipped.as_deref().unwrap_or("ok"),
        );
    }
    s
}

/// Rotates world points about the vertical through `pivot`.
pub fn rotate_about(points: &[[f64; 3]], pivot: [f64; 3], yaw: f64) -> Cloud {
    let (r, c) = (rot_z(yaw), to_vec3(pivot));
    let t = Rigid::new(r, c - r * c);
    points
        .iter()
        .map(|p| {
            let q = t.apply(&to_vec3(*p));
            [q.x, q.y, q.z]
        })
        .collect()
}
