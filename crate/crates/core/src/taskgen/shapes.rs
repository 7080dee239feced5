//! Parametric signed-distance shape families.
//!
//! Every shape is expressed in its own object frame: z up, centred on the
//! middle of its axis-aligned bounding box, lengths in meters.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Mug,
    Chair,
    Laptop,
    Book,
    Ball,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Mug,
        Category::Chair,
        Category::Laptop,
        Category::Book,
        Category::Ball,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Mug => "mug",
            Category::Chair => "chair",
            Category::Laptop => "laptop",
            Category::Book => "book",
            Category::Ball => "ball",
        }
    }

    /// Rotationally symmetric about the vertical axis.
    pub fn is_yaw_symmetric(&self) -> bool {
        matches!(self, Category::Ball)
    }

    fn index(&self) -> u64 {
        Category::ALL.iter().position(|c| c == self).unwrap_or(0) as u64
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown category `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ShapeParams {
    /// Open cylinder with a floor and a torus handle on the +y side.
    Mug {
        radius: f64,
        height: f64,
        wall: f64,
        handle_radius: f64,
        handle_thickness: f64,
    },
    Chair {
        seat_half: [f64; 3],
        seat_height: f64,
        back_height: f64,
        back_thickness: f64,
        leg_radius: f64,
    },
    /// Base plate plus a screen hinged at -x, display facing +x.
    Laptop {
        base_half: [f64; 3],
        screen_length: f64,
        screen_thickness: f64,
        tilt: f64,
    },
    Book {
        half: [f64; 3],
    },
    Ball {
        radius: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSpec {
    pub category: Category,
    pub seed: u64,
    pub params: ShapeParams,
    pub albedo: [f64; 3],
}

/// Deterministic shape draw per `(category, seed)`.
pub fn sample_shape(category: Category, seed: u64) -> ShapeSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ (category.index() + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let params = match category {
        Category::Mug => {
            let radius: f64 = rng.gen_range(0.035..0.048);
            let height: f64 = rng.gen_range(0.085..0.12);
            let wall = rng.gen_range(0.004..0.007);
            let handle_thickness: f64 = rng.gen_range(0.005..0.008);
            let max_handle: f64 = (0.5 * height - handle_thickness - 0.004).min(0.03);
            let handle_radius = rng.gen_range(0.018..max_handle.max(0.0181));
            ShapeParams::Mug {
                radius,
                height,
                wall,
                handle_radius,
                handle_thickness,
            }
        }
        Category::Chair => {
            let sx = rng.gen_range(0.2..0.25);
            let sy = rng.gen_range(0.2..0.25);
            ShapeParams::Chair {
                seat_half: [sx, sy, rng.gen_range(0.015..0.025)],
                seat_height: rng.gen_range(0.40..0.48),
                back_height: rng.gen_range(0.30..0.45),
                back_thickness: rng.gen_range(0.012..0.02),
                leg_radius: rng.gen_range(0.015..0.022),
            }
        }
        Category::Laptop => {
            let bx = rng.gen_range(0.10..0.15);
            ShapeParams::Laptop {
                base_half: [bx, rng.gen_range(0.13..0.18), rng.gen_range(0.006..0.01)],
                screen_length: 2.0 * bx * rng.gen_range(0.85..1.0),
                screen_thickness: rng.gen_range(0.004..0.007),
                tilt: rng.gen_range(8f64..25.0).to_radians(),
            }
        }
        Category::Book => ShapeParams::Book {
            half: [
                rng.gen_range(0.07..0.11),
                rng.gen_range(0.05..0.08),
                rng.gen_range(0.008..0.025),
            ],
        },
        Category::Ball => ShapeParams::Ball {
            radius: rng.gen_range(0.03..0.06),
        },
    };
    let albedo = [
        rng.gen_range(0.25..0.9),
        rng.gen_range(0.25..0.9),
        rng.gen_range(0.25..0.9),
    ];
    ShapeSpec {
        category,
        seed,
        params,
        albedo,
    }
}

fn len2(x: f64, y: f64) -> f64 {
    (x * x + y * y).sqrt()
}

fn len3(p: [f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

pub fn sd_box(p: [f64; 3], half: [f64; 3]) -> f64 {
    let q = [
        p[0].abs() - half[0],
        p[1].abs() - half[1],
        p[2].abs() - half[2],
    ];
    let outside = len3([q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)]);
    outside + q[0].max(q[1]).max(q[2]).min(0.0)
}

/// Solid cylinder around +z between heights `z0 < z1`.
pub fn sd_cylinder(p: [f64; 3], radius: f64, z0: f64, z1: f64) -> f64 {
    let dx = len2(p[0], p[1]) - radius;
    let dz = (p[2] - 0.5 * (z0 + z1)).abs() - 0.5 * (z1 - z0);
    dx.max(dz).min(0.0) + len2(dx.max(0.0), dz.max(0.0))
}

/// Torus whose ring lies in the y-z plane around `center`.
pub fn sd_torus_x(p: [f64; 3], center: [f64; 3], major: f64, minor: f64) -> f64 {
    let (x, y, z) = (p[0] - center[0], p[1] - center[1], p[2] - center[2]);
    len2(len2(y, z) - major, x) - minor
}

pub fn sd_capsule(p: [f64; 3], a: [f64; 3], b: [f64; 3], radius: f64) -> f64 {
    let pa = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let ba = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let h = ((pa[0] * ba[0] + pa[1] * ba[1] + pa[2] * ba[2])
        / (ba[0] * ba[0] + ba[1] * ba[1] + ba[2] * ba[2]))
        .clamp(0.0, 1.0);
    len3([pa[0] - ba[0] * h, pa[1] - ba[1] * h, pa[2] - ba[2] * h]) - radius
}

// Laptop screen frame: center, normal (+x facing), up.
fn laptop_screen(
    base_half: [f64; 3],
    length: f64,
    thickness: f64,
    tilt: f64,
) -> ([f64; 3], [f64; 3], [f64; 3]) {
    let hinge = [-base_half[0], 0.0, 2.0 * base_half[2]];
    let up = [-tilt.sin(), 0.0, tilt.cos()];
    let normal = [tilt.cos(), 0.0, tilt.sin()];
    let c = [0, 1, 2].map(|k| hinge[k] + 0.5 * length * up[k] + 0.5 * thickness * normal[k]);
    (c, normal, up)
}

impl ShapeSpec {
    /// Axis-aligned bounds of the shape before recentring.
    fn raw_bounds(&self) -> ([f64; 3], [f64; 3]) {
        match &self.params {
            ShapeParams::Mug {
                radius,
                height,
                handle_radius,
                handle_thickness,
                ..
            } => (
                [-radius, -radius, 0.0],
                [*radius, radius + handle_radius + handle_thickness, *height],
            ),
            ShapeParams::Chair {
                seat_half,
                seat_height,
                back_height,
                ..
            } => (
                [-seat_half[0], -seat_half[1], 0.0],
                [seat_half[0], seat_half[1], seat_height + back_height],
            ),
            ShapeParams::Laptop {
                base_half,
                screen_length,
                screen_thickness,
                tilt,
            } => {
                let mut lo = [-base_half[0], -base_half[1], 0.0];
                let mut hi = [base_half[0], base_half[1], 2.0 * base_half[2]];
                let (c, n, u) = laptop_screen(*base_half, *screen_length, *screen_thickness, *tilt);
                for sn in [-1.0, 1.0] {
                    for su in [-1.0, 1.0] {
                        for k in [0, 2] {
                            let v = c[k]
                                + sn * 0.5 * screen_thickness * n[k]
                                + su * 0.5 * screen_length * u[k];
                            lo[k] = lo[k].min(v);
                            hi[k] = hi[k].max(v);
                        }
                    }
                }
                (lo, hi)
            }
            ShapeParams::Book { half } => (half.map(|h| -h), *half),
            ShapeParams::Ball { radius } => ([-radius; 3], [*radius; 3]),
        }
    }

    /// Offset from the raw modelling frame to the object frame origin.
    pub fn center_offset(&self) -> [f64; 3] {
        let (lo, hi) = self.raw_bounds();
        [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]))
    }

    /// Full bounding-box extents.
    pub fn extents(&self) -> [f64; 3] {
        let (lo, hi) = self.raw_bounds();
        [0, 1, 2].map(|k| hi[k] - lo[k])
    }

    pub fn bounding_radius(&self) -> f64 {
        0.5 * len3(self.extents())
    }

    /// Signed distance in the object frame (negative inside). Exact for the
    /// primitives, a lower bound for their unions and differences.
    pub fn sdf(&self, p: [f64; 3]) -> f64 {
        let c = self.center_offset();
        self.raw_sdf([p[0] + c[0], p[1] + c[1], p[2] + c[2]])
    }

    fn raw_sdf(&self, p: [f64; 3]) -> f64 {
        match &self.params {
            ShapeParams::Mug {
                radius,
                height,
                wall,
                handle_radius,
                handle_thickness,
            } => {
                let body = sd_cylinder(p, *radius, 0.0, *height);
                let handle = sd_torus_x(
                    p,
                    [0.0, *radius, 0.5 * height],
                    *handle_radius,
                    *handle_thickness,
                );
                let cavity = sd_cylinder(p, radius - wall, *wall, height + 1.0);
                body.min(handle).max(-cavity)
            }
            ShapeParams::Chair {
                seat_half,
                seat_height,
                back_height,
                back_thickness,
                leg_radius,
            } => {
                let seat = sd_box(
                    [p[0], p[1], p[2] - (seat_height - seat_half[2])],
                    *seat_half,
                );
                let back = sd_box(
                    [
                        p[0] + seat_half[0] - 0.5 * back_thickness,
                        p[1],
                        p[2] - seat_height - 0.5 * back_height,
                    ],
                    [0.5 * back_thickness, seat_half[1], 0.5 * back_height],
                );
                let inset = leg_radius + 0.01;
                let top = seat_height - 2.0 * seat_half[2];
                let mut legs = f64::INFINITY;
                for sx in [-1.0, 1.0] {
                    for sy in [-1.0, 1.0] {
                        let x = sx * (seat_half[0] - inset);
                        let y = sy * (seat_half[1] - inset);
                        legs =
                            legs.min(sd_capsule(p, [x, y, *leg_radius], [x, y, top], *leg_radius));
                    }
                }
                seat.min(back).min(legs)
            }
            ShapeParams::Laptop {
                base_half,
                screen_length,
                screen_thickness,
                tilt,
            } => {
                let base = sd_box([p[0], p[1], p[2] - base_half[2]], *base_half);
                let (c, n, u) = laptop_screen(*base_half, *screen_length, *screen_thickness, *tilt);
                let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
                let local = [d[0] * n[0] + d[2] * n[2], d[1], d[0] * u[0] + d[2] * u[2]];
                let screen = sd_box(
                    local,
                    [0.5 * screen_thickness, base_half[1], 0.5 * screen_length],
                );
                base.min(screen)
            }
            ShapeParams::Book { half } => sd_box(p, *half),
            ShapeParams::Ball { radius } => len3(p) - radius,
        }
    }

    /// Outward unit normal from central differences of the distance field.
    pub fn normal(&self, p: [f64; 3]) -> [f64; 3] {
        let h = 1e-5;
        let mut g = [0.0; 3];
        for k in 0..3 {
            let mut a = p;
            let mut b = p;
            a[k] += h;
            b[k] -= h;
            g[k] = self.sdf(a) - self.sdf(b);
        }
        let n = len3(g);
        if n > 0.0 {
            g.map(|c| c / n)
        } else {
            [0.0, 0.0, 1.0]
        }
    }
}
