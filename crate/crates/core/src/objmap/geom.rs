//! Box overlap, point-cloud clustering, upright box fitting, yaw
//! canonicalization against a density grid, and point-to-point ICP.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::Matrix3;

use crate::geometry::{rot_z, to_vec3, ObjectState, Rigid, Vec3};
use crate::kdtree::KdTree;
use crate::meshmetrics::Cloud;
use crate::priorgrid::{iso_level, DensityGrid, DEFAULT_ISO_CEILING, DEFAULT_ISO_FLOOR};
use crate::render::{Camera, Mask, RgbdImage};
use crate::{Error, Result};

/// Axis-aligned image rectangle in continuous pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox2d {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl BBox2d {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self { min, max }
    }

    /// Covers every set pixel as a unit square.
    pub fn from_mask(mask: &Mask) -> Option<Self> {
        let mut b: Option<Self> = None;
        for (i, _) in mask.data.iter().enumerate().filter(|(_, m)| **m) {
            let (u, v) = ((i % mask.width) as f64, (i / mask.width) as f64);
            let e = b.get_or_insert(Self::new([u, v], [u + 1.0, v + 1.0]));
            e.min = [e.min[0].min(u), e.min[1].min(v)];
            e.max = [e.max[0].max(u + 1.0), e.max[1].max(v + 1.0)];
        }
        b
    }

    pub fn area(&self) -> f64 {
        (self.max[0] - self.min[0]).max(0.0) * (self.max[1] - self.min[1]).max(0.0)
    }

    pub fn intersect(&self, o: &Self) -> Self {
        Self::new(
            [self.min[0].max(o.min[0]), self.min[1].max(o.min[1])],
            [self.max[0].min(o.max[0]), self.max[1].min(o.max[1])],
        )
    }
}

pub fn iou_2d(a: &BBox2d, b: &BBox2d) -> f64 {
    let inter = a.intersect(b).area();
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Image box of the projected corners that lie in front of the camera,
/// clipped to the image; `None` when nothing projects.
pub fn project_box(corners: &[[f64; 3]], cam: &Camera) -> Option<BBox2d> {
    let mut b: Option<BBox2d> = None;
    for c in corners {
        if let Some((u, v, _)) = cam.project(&to_vec3(*c)) {
            let (u, v) = (u + 0.5, v + 0.5);
            let e = b.get_or_insert(BBox2d::new([u, v], [u, v]));
            e.min = [e.min[0].min(u), e.min[1].min(v)];
            e.max = [e.max[0].max(u), e.max[1].max(v)];
        }
    }
    let clipped = b?.intersect(&BBox2d::new(
        [0.0, 0.0],
        [cam.width as f64, cam.height as f64],
    ));
    (clipped.area() > 0.0).then_some(clipped)
}

/// Corners of an upright oriented box.
pub fn state_corners(s: &ObjectState) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(8);
    for k in 0..8 {
        let u = [(k & 1) as f64, ((k >> 1) & 1) as f64, ((k >> 2) & 1) as f64];
        out.push(s.denormalize(&u));
    }
    out
}

/// World points of the masked pixels with a depth reading.
pub fn backproject(cam: &Camera, image: &RgbdImage, mask: &Mask) -> Cloud {
    let mut out = Vec::new();
    for (i, _) in mask.data.iter().enumerate().filter(|(_, m)| **m) {
        let d = image.depth[i] as f64;
        if !(d.is_finite() && d > 0.0) {
            continue;
        }
        let (o, dir) = cam.world_ray((i % cam.width) as f64, (i / cam.width) as f64);
        let p = o + dir * d;
        out.push([p.x, p.y, p.z]);
    }
    out
}

fn voxel_key(p: &[f64; 3], voxel: f64) -> [i64; 3] {
    p.map(|c| (c / voxel).floor() as i64)
}

fn voxel_cells(cloud: &[[f64; 3]], voxel: f64) -> BTreeMap<[i64; 3], ([f64; 3], usize)> {
    let mut cells: BTreeMap<[i64; 3], ([f64; 3], usize)> = BTreeMap::new();
    for p in cloud {
        let key = voxel_key(p, voxel);
        let e = cells.entry(key).or_insert(([0.0; 3], 0));
        for k in 0..3 {
            e.0[k] += p[k];
        }
        e.1 += 1;
    }
    cells
}

/// Voxel centroids with the number of points each absorbs, in voxel-key order.
pub fn voxel_downsample(cloud: &[[f64; 3]], voxel: f64) -> Vec<([f64; 3], usize)> {
    voxel_cells(cloud, voxel)
        .into_values()
        .map(|(s, n)| (s.map(|c| c / n as f64), n))
        .collect()
}

/// One connected component: its voxel centroids and the raw points behind them.
#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub centroids: Cloud,
    pub points: Cloud,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Voxel downsampling, then single-linkage clustering of the centroids at
/// `radius`. Clusters backed by fewer than `min_count` raw points are dropped;
/// the rest are returned largest first.
pub fn cluster_filter(
    cloud: &[[f64; 3]],
    voxel: f64,
    radius: f64,
    min_count: usize,
) -> Result<Vec<Cluster>> {
    if !(voxel > 0.0 && radius > 0.0) {
        return Err(Error::InvalidArgument(
            "voxel size and radius must be positive".into(),
        ));
    }
    let cells = voxel_cells(cloud, voxel);
    let centroids: Vec<[f64; 3]> = cells
        .values()
        .map(|(s, n)| s.map(|c| c / *n as f64))
        .collect();
    let tree = KdTree::new(&centroids);
    let mut parent: Vec<usize> = (0..centroids.len()).collect();
    let mut near = Vec::new();
    for (i, c) in centroids.iter().enumerate() {
        tree.within(c, radius, &mut near);
        for &j in &near {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut comp_of_cell = vec![0usize; centroids.len()];
    let mut groups: BTreeMap<usize, usize> = BTreeMap::new();
    let mut clusters: Vec<Cluster> = Vec::new();
    for i in 0..centroids.len() {
        let root = find(&mut parent, i);
        let next = groups.len();
        let g = *groups.entry(root).or_insert(next);
        if g == clusters.len() {
            clusters.push(Cluster {
                centroids: Vec::new(),
                points: Vec::new(),
            });
        }
        clusters[g].centroids.push(centroids[i]);
        comp_of_cell[i] = g;
    }
    let keys: BTreeMap<[i64; 3], usize> = cells
        .keys()
        .zip(comp_of_cell)
        .map(|(k, g)| (*k, g))
        .collect();
    for p in cloud {
        if let Some(&g) = keys.get(&voxel_key(p, voxel)) {
            clusters[g].points.push(*p);
        }
    }
    clusters.retain(|c| c.points.len() >= min_count);
    clusters.sort_by(|a, b| b.points.len().cmp(&a.points.len()));
    Ok(clusters)
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise convex hull without collinear points.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Orientation in `[0, pi/2)` and area of the minimum-area enclosing
/// rectangle, by rotating calipers over the hull edges. `None` for fewer than
/// three non-collinear points.
pub fn min_area_rect(points: &[[f64; 2]]) -> Option<(f64, f64)> {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return None;
    }
    let mut best: Option<(f64, f64)> = None;
    for i in 0..hull.len() {
        let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
        let ang = (b[1] - a[1]).atan2(b[0] - a[0]).rem_euclid(FRAC_PI_2);
        let (c, s) = (ang.cos(), ang.sin());
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &hull {
            let q = [c * p[0] + s * p[1], -s * p[0] + c * p[1]];
            for k in 0..2 {
                lo[k] = lo[k].min(q[k]);
                hi[k] = hi[k].max(q[k]);
            }
        }
        let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
        let ang = if FRAC_PI_2 - ang < 1e-12 { 0.0 } else { ang };
        if best.is_none_or(|(ba, bb)| {
            area < bb * (1.0 - 1e-12) || (area <= bb * (1.0 + 1e-12) && ang < ba)
        }) {
            best = Some((ang, area));
        }
    }
    best.filter(|b| b.1 > 1e-12)
}

/// Extents of `points` about `center` after rotating them by `-yaw` about +z:
/// returns the box center in world coordinates and its size.
pub fn extents_in_yaw_frame(points: &[[f64; 3]], yaw: f64) -> ([f64; 3], [f64; 3]) {
    let r = rot_z(-yaw);
    let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
    for p in points {
        let q = r * to_vec3(*p);
        for k in 0..3 {
            lo[k] = lo[k].min(q[k]);
            hi[k] = hi[k].max(q[k]);
        }
    }
    let mid = Vec3::new(
        0.5 * (lo[0] + hi[0]),
        0.5 * (lo[1] + hi[1]),
        0.5 * (lo[2] + hi[2]),
    );
    let c = rot_z(yaw) * mid;
    ([c.x, c.y, c.z], [0, 1, 2].map(|k| hi[k] - lo[k]))
}

/// Smallest size accepted along any axis, meters.
pub const MIN_EXTENT: f64 = 1e-3;

/// Upright box of a cloud: yaw of the minimum-area ground rectangle (0 when
/// the footprint is degenerate), extents in that frame, center of the extents.
pub fn coarse_state(cloud: &[[f64; 3]]) -> Result<ObjectState> {
    if cloud.len() < 3 {
        return Err(Error::InvalidArgument(
            "coarse state needs at least three points".into(),
        ));
    }
    if cloud.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Numeric("non-finite cloud point".into()));
    }
    let flat: Vec<[f64; 2]> = cloud.iter().map(|p| [p[0], p[1]]).collect();
    let yaw = min_area_rect(&flat).map(|r| r.0).unwrap_or(0.0);
    let (position, size) = extents_in_yaw_frame(cloud, yaw);
    Ok(ObjectState {
        position,
        yaw,
        size: size.map(|s| s.max(MIN_EXTENT)),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CanonicalYaw {
    /// Rotation taking the world cloud into the prior's canonical frame.
    pub gamma: f64,
    pub size: [f64; 3],
    /// Extents center in world coordinates.
    pub center: [f64; 3],
    pub score: f64,
}

impl CanonicalYaw {
    /// Object state whose normalized frame is the prior's canonical frame.
    pub fn state(&self) -> ObjectState {
        ObjectState {
            position: self.center,
            yaw: (-self.gamma).rem_euclid(TAU),
            size: self.size.map(|s| s.max(MIN_EXTENT)),
        }
    }
}

/// Accumulated prior density of the cloud rotated by `gamma` about the
/// vertical through `pivot` and normalized to its own extents. Each point's
/// density is capped at `cap`.
pub fn yaw_score(
    cloud: &[[f64; 3]],
    pivot: [f64; 3],
    grid: &DensityGrid,
    gamma: f64,
    cap: f64,
) -> (f64, [f64; 3], [f64; 3]) {
    let r = rot_z(gamma);
    let pv = to_vec3(pivot);
    let rotated: Vec<Vec3> = cloud.iter().map(|p| r * (to_vec3(*p) - pv)).collect();
    let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
    for q in &rotated {
        for k in 0..3 {
            lo[k] = lo[k].min(q[k]);
            hi[k] = hi[k].max(q[k]);
        }
    }
    let size = [0, 1, 2].map(|k| (hi[k] - lo[k]).max(MIN_EXTENT));
    let mid = [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]));
    let score = rotated
        .iter()
        .map(|q| {
            grid.trilerp([0, 1, 2].map(|k| ((q[k] - mid[k]) / size[k] + 0.5).clamp(0.0, 1.0)))
                .min(cap)
        })
        .sum();
    let c = r.transpose() * Vec3::from(mid) + pv;
    (score, size, [c.x, c.y, c.z])
}

/// Best of `k` evenly spaced yaw rotations by accumulated density; ties keep
/// the smallest angle.
///
/// Densities are capped at the grid's baking iso level, so a surface point
/// scores the same anywhere inside the prior shape and the aligned rotation
/// is not outscored by ones that pull points toward the dense interior.
pub fn canonical_yaw(
    cloud: &[[f64; 3]],
    pivot: [f64; 3],
    grid: &DensityGrid,
    k: usize,
) -> Result<CanonicalYaw> {
    if cloud.is_empty() || k == 0 {
        return Err(Error::InvalidArgument(
            "canonical yaw needs points and at least one sample".into(),
        ));
    }
    if grid.max() <= 0.0 {
        log::warn!("prior grid is empty; canonical yaw falls back to 0");
    }
    let cap = iso_level(grid, DEFAULT_ISO_FLOOR, DEFAULT_ISO_CEILING);
    let mut best: Option<CanonicalYaw> = None;
    for i in 0..k {
        let gamma = TAU * i as f64 / k as f64;
        let (score, size, center) = yaw_score(cloud, pivot, grid, gamma, cap);
        if best.is_none_or(|b| score > b.score) {
            best = Some(CanonicalYaw {
                gamma,
                size,
                center,
                score,
            });
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("no yaw sampled".into()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpResult {
    /// Maps reference points onto the cloud.
    pub transform: Rigid,
    pub converged: bool,
    pub iterations: usize,
    /// Mean squared correspondence distance before each update, then after the last.
    pub errors: Vec<f64>,
}

/// Least-squares rigid map taking `src[i]` to `dst[i]`.
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Rigid {
    let n = src.len().max(1) as f64;
    let cs = src.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let cd = dst.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (Some(u), Some(vt)) = (svd.u, svd.v_t) else {
        return Rigid::from_translation(cd - cs);
    };
    let v = vt.transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = v * fix * u.transpose();
    Rigid::new(r, cd - r * cs)
}

/// Point-to-point ICP pairing every cloud point with its nearest reference
/// point, until the error improves by less than `tol` or `max_iters` updates.
pub fn icp_refine(
    reference: &[[f64; 3]],
    cloud: &[[f64; 3]],
    max_iters: usize,
    tol: f64,
) -> Result<IcpResult> {
    if reference.len() < 3 || cloud.len() < 3 {
        return Err(Error::InvalidArgument(
            "ICP needs at least three points per set".into(),
        ));
    }
    let tree = KdTree::new(reference);
    let targets: Vec<Vec3> = cloud.iter().map(|p| to_vec3(*p)).collect();
    let mut t = Rigid::identity();
    let mut errors = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut src = Vec::with_capacity(targets.len());
    let mut best = (f64::INFINITY, t);
    loop {
        let inv = t.inverse();
        src.clear();
        let mut err = 0.0;
        for c in &targets {
            let q = inv.apply(c);
            let (idx, d2) = tree.nearest(&[q.x, q.y, q.z]).unwrap_or((0, 0.0));
            src.push(to_vec3(reference[idx]));
            err += d2;
        }
        err /= targets.len() as f64;
        if err < best.0 {
            best = (err, t);
        }
        if let Some(&prev) = errors.last() {
            if prev - err < tol {
                converged = true;
                errors.push(err);
                break;
            }
        }
        errors.push(err);
        if iterations == max_iters {
            break;
        }
        t = kabsch(&src, &targets);
        iterations += 1;
    }
    Ok(IcpResult {
        transform: best.1,
        converged,
        iterations,
        errors,
    })
}
