//! Sphere-traced RGB-D rendering of posed distance-field shapes.

use super::shapes::ShapeSpec;
use crate::geometry::{from_vec3, to_vec3, Rigid};
use crate::render::{Camera, Mask, RgbdImage};

pub const MAX_STEPS: usize = 128;
pub const HIT_EPS: f64 = 1e-4;
const AMBIENT: f64 = 0.3;

pub const DEFAULT_LIGHT: [f64; 3] = [0.35, -0.45, 0.82];

/// First hit distance along a unit ray given in the object frame.
pub fn trace(shape: &ShapeSpec, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
    let r = shape.bounding_radius() * 1.01 + 1e-3;
    // ray / bounding sphere
    let b = origin[0] * dir[0] + origin[1] * dir[1] + origin[2] * dir[2];
    let c = origin[0] * origin[0] + origin[1] * origin[1] + origin[2] * origin[2] - r * r;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let (t_in, t_out) = (-b - s, -b + s);
    if t_out < 0.0 {
        return None;
    }
    let mut t = t_in.max(0.0);
    let at = |t: f64| {
        [
            origin[0] + t * dir[0],
            origin[1] + t * dir[1],
            origin[2] + t * dir[2],
        ]
    };
    for _ in 0..MAX_STEPS {
        let d = shape.sdf(at(t));
        if d.abs() < HIT_EPS {
            // a few extra steps tighten the depth well below the hit tolerance
            for _ in 0..4 {
                t += shape.sdf(at(t));
            }
            return Some(t);
        }
        t += d;
        if t > t_out {
            return None;
        }
    }
    None
}

/// One rendered view of several posed shapes.
#[derive(Clone, Debug)]
pub struct RenderedView {
    pub image: RgbdImage,
    /// `0` for background, `k + 1` where object `k` is the first hit.
    pub labels: Vec<u16>,
}

pub fn render_scene(
    objects: &[(&ShapeSpec, Rigid)],
    camera: &Camera,
    light: [f64; 3],
) -> RenderedView {
    let (w, h) = (camera.width, camera.height);
    let mut image = RgbdImage::blank(w, h);
    let mut labels = vec![0u16; w * h];
    let l = to_vec3(light).normalize();
    let inverses: Vec<Rigid> = objects.iter().map(|(_, pose)| pose.inverse()).collect();
    for y in 0..h {
        for x in 0..w {
            let (o, d) = camera.world_ray(x as f64, y as f64);
            let mut best: Option<(f64, usize)> = None;
            for (k, (shape, _)) in objects.iter().enumerate() {
                let oo = from_vec3(&inverses[k].apply(&o));
                let dd = from_vec3(&inverses[k].apply_vector(&d));
                if let Some(t) = trace(shape, oo, dd) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, k));
                    }
                }
            }
            let Some((t, k)) = best else { continue };
            let idx = y * w + x;
            let (shape, pose) = objects[k];
            let p_obj = inverses[k].apply(&(o + d * t));
            let n = pose.apply_vector(&to_vec3(shape.normal(from_vec3(&p_obj))));
            let shade = AMBIENT + (1.0 - AMBIENT) * n.dot(&l).max(0.0);
            for c in 0..3 {
                image.rgb[3 * idx + c] = (shape.albedo[c] * shade).clamp(0.0, 1.0) as f32;
            }
            image.depth[idx] = t as f32;
            labels[idx] = (k + 1) as u16;
        }
    }
    RenderedView { image, labels }
}

/// A single shape placed at `pose`; the mask is the set of hit pixels.
pub fn render_posed(
    shape: &ShapeSpec,
    pose: &Rigid,
    camera: &Camera,
    light: [f64; 3],
) -> (RgbdImage, Mask) {
    let view = render_scene(&[(shape, *pose)], camera, light);
    let mask = Mask {
        width: camera.width,
        height: camera.height,
        data: view.labels.iter().map(|&l| l != 0).collect(),
    };
    (view.image, mask)
}

/// A single shape at the world origin.
pub fn render_frame(shape: &ShapeSpec, camera: &Camera, light: [f64; 3]) -> (RgbdImage, Mask) {
    render_posed(shape, &Rigid::identity(), camera, light)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{look_at, Vec3};
    use crate::taskgen::shapes::{sample_shape, Category, ShapeParams};

    // bracketing root of the distance field along the ray, fine steps then bisection
    fn march_oracle(shape: &ShapeSpec, o: [f64; 3], d: [f64; 3], t_max: f64) -> Option<f64> {
        let at = |t: f64| shape.sdf([o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]]);
        let step = 2e-4;
        let mut t = 0.0;
        let mut prev = at(t);
        while t < t_max {
            let next = at(t + step);
            if prev > 0.0 && next <= 0.0 {
                let (mut a, mut b) = (t, t + step);
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    if at(m) > 0.0 {
                        a = m
                    } else {
                        b = m
                    }
                }
                return Some(0.5 * (a + b));
            }
            prev = next;
            t += step;
        }
        None
    }

    #[test]
    fn ball_center_depth() {
        let s = sample_shape(Category::Ball, 2);
        let ShapeParams::Ball { radius } = s.params else {
            panic!()
        };
        let dist = 0.4;
        let cam = Camera::from_fov(
            33,
            33,
            0.9,
            look_at(Vec3::new(0.0, 0.0, dist), Vec3::zeros()),
        );
        let (img, mask) = render_frame(&s, &cam, DEFAULT_LIGHT);
        let center = 16 * 33 + 16;
        assert!((img.depth[center] as f64 - (dist - radius)).abs() < 1e-3);
        for i in 0..mask.data.len() {
            assert_eq!(mask.data[i], img.depth[i] != 0.0);
            if !mask.data[i] {
                assert_eq!(img.depth[i], 0.0);
            }
        }
    }

    #[test]
    fn depths_match_fine_march() {
        for cat in [Category::Mug, Category::Laptop, Category::Book] {
            let s = sample_shape(cat, 1);
            let r = s.bounding_radius();
            let cam = Camera::from_fov(
                24,
                24,
                0.9,
                look_at(Vec3::new(2.5 * r, -1.5 * r, 1.8 * r), Vec3::zeros()),
            );
            let (img, mask) = render_frame(&s, &cam, DEFAULT_LIGHT);
            let mut checked = 0;
            for (i, &m) in mask.data.iter().enumerate().step_by(3) {
                if !m {
                    continue;
                }
                let (o, d) = cam.world_ray((i % 24) as f64, (i / 24) as f64);
                let want =
                    march_oracle(&s, from_vec3(&o), from_vec3(&d), 6.0 * r).expect("oracle hit");
                assert!(
                    (img.depth[i] as f64 - want).abs() < 1e-3,
                    "{cat}: {} vs {want}",
                    img.depth[i]
                );
                checked += 1;
            }
            assert!(checked > 5);
        }
    }
}
