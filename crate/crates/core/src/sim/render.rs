//! Synthetic grayscale cameras.
//!
//! Images are rasterised from discs (objects, base) and line segments (arm
//! links). Pixel `(row, col)` samples the point at its centre; row 0 is the
//! far edge of the camera's forward axis and column 0 its left edge.

use super::kinematics::ArmGeometry;
use super::world::World;
use super::{RobotState, Side, SimConfig, ARM_DIMS, ARM_JOINTS};

pub const TOP_SIZE: usize = 64;
pub const TOP_WINDOW: f64 = 4.0;
pub const WRIST_SIZE: usize = 32;
pub const WRIST_WINDOW: f64 = 0.6;
pub const FRONT_SIZE: usize = 32;
pub const FRONT_WINDOW: f64 = 1.2;
/// Body-frame centre of the fixed front camera used by table-top scenes.
pub const FRONT_CENTER: [f64; 2] = [0.8, 0.0];

pub const BASE_SHADE: u8 = 120;
pub const LINK_SHADE: u8 = 255;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn blank(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn view(&self) -> RasterView<'_> {
        RasterView {
            width: self.width,
            height: self.height,
            data: &self.data,
        }
    }
}

/// Borrowed raster, e.g. straight out of an episode record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RasterView<'a> {
    pub width: usize,
    pub height: usize,
    pub data: &'a [u8],
}

impl RasterView<'_> {
    pub fn to_owned(&self) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Views {
    pub top: Raster,
    pub left_wrist: Raster,
    pub right_wrist: Raster,
}

/// What a policy sees: the three aligned views plus arm proprioception.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub top: Raster,
    pub left_wrist: Raster,
    pub right_wrist: Raster,
    pub proprio: [f64; ARM_DIMS],
}

impl Observation {
    pub fn new(views: Views, proprio: [f64; ARM_DIMS]) -> Self {
        Self {
            top: views.top,
            left_wrist: views.left_wrist,
            right_wrist: views.right_wrist,
            proprio,
        }
    }

    pub fn views(&self) -> [RasterView<'_>; 3] {
        [self.top.view(), self.left_wrist.view(), self.right_wrist.view()]
    }
}

#[derive(Clone, Copy, Debug)]
enum Prim {
    Disc { c: [f64; 2], r: f64, shade: u8 },
    Segment { a: [f64; 2], b: [f64; 2], shade: u8 },
}

/// A square camera: centre and forward heading in the body frame.
#[derive(Clone, Copy, Debug)]
struct Camera {
    center: [f64; 2],
    heading: f64,
    window: f64,
    size: usize,
}

impl Camera {
    /// Body point to (forward, left) camera coordinates.
    fn local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy]
    }

    fn pixel(&self) -> f64 {
        self.window / self.size as f64
    }

    fn pixel_center(&self, row: usize, col: usize) -> [f64; 2] {
        let s = self.pixel();
        let half = self.window / 2.0;
        [half - (row as f64 + 0.5) * s, half - (col as f64 + 0.5) * s]
    }

    /// Inclusive index range of pixel centres whose coordinate lies in `[lo, hi]`.
    fn index_range(&self, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let s = self.pixel();
        let half = self.window / 2.0;
        // centre(i) = half - (i + 0.5) s is decreasing in i.
        let first = ((half - hi) / s - 0.5).ceil().max(0.0);
        let last = ((half - lo) / s - 0.5).floor().min(self.size as f64 - 1.0);
        if first > last {
            None
        } else {
            Some((first as usize, last as usize))
        }
    }

    fn draw(&self, prims: &[Prim]) -> Raster {
        let mut img = Raster::blank(self.size, self.size);
        let s = self.pixel();
        for prim in prims {
            match *prim {
                Prim::Disc { c, r, shade } => {
                    let c = self.local(c);
                    let (Some(rows), Some(cols)) = (
                        self.index_range(c[0] - r - s, c[0] + r + s),
                        self.index_range(c[1] - r - s, c[1] + r + s),
                    ) else {
                        self.fill_containing(&mut img, c, shade);
                        continue;
                    };
                    let mut hit = false;
                    for row in rows.0..=rows.1 {
                        for col in cols.0..=cols.1 {
                            let cov = disc_coverage(self.pixel_center(row, col), s, c, r);
                            if cov > 0.0 {
                                hit = true;
                                let px = &mut img.data[row * self.size + col];
                                *px = (f64::from(*px) * (1.0 - cov) + f64::from(shade) * cov).round() as u8;
                            }
                        }
                    }
                    if !hit {
                        self.fill_containing(&mut img, c, shade);
                    }
                }
                Prim::Segment { a, b, shade } => {
                    let (a, b) = (self.local(a), self.local(b));
                    let hw = 0.6 * s;
                    let rows = self.index_range(a[0].min(b[0]) - hw, a[0].max(b[0]) + hw);
                    let cols = self.index_range(a[1].min(b[1]) - hw, a[1].max(b[1]) + hw);
                    let (Some(rows), Some(cols)) = (rows, cols) else {
                        continue;
                    };
                    for row in rows.0..=rows.1 {
                        for col in cols.0..=cols.1 {
                            let p = self.pixel_center(row, col);
                            if segment_distance(p, a, b) <= hw {
                                img.data[row * self.size + col] = shade;
                            }
                        }
                    }
                }
            }
        }
        img
    }

    /// Discs too small to cover any sub-sample still mark the pixel that
    /// contains their centre.
    fn fill_containing(&self, img: &mut Raster, c: [f64; 2], shade: u8) {
        let s = self.pixel();
        let half = self.window / 2.0;
        let row = ((half - c[0]) / s).floor();
        let col = ((half - c[1]) / s).floor();
        if row >= 0.0 && col >= 0.0 && row < self.size as f64 && col < self.size as f64 {
            img.data[row as usize * self.size + col as usize] = shade;
        }
    }
}

/// Fraction of the square pixel of side `s` centred at `p` inside the disc,
/// estimated on a 4×4 grid of sub-samples.
fn disc_coverage(p: [f64; 2], s: f64, c: [f64; 2], r: f64) -> f64 {
    const N: usize = 4;
    let mut inside = 0;
    for i in 0..N {
        for j in 0..N {
            let x = p[0] + ((i as f64 + 0.5) / N as f64 - 0.5) * s;
            let y = p[1] + ((j as f64 + 0.5) / N as f64 - 0.5) * s;
            if (x - c[0]).powi(2) + (y - c[1]).powi(2) <= r * r {
                inside += 1;
            }
        }
    }
    inside as f64 / (N * N) as f64
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
    d[0].hypot(d[1])
}

/// Scene primitives in the body frame, in draw order.
fn primitives(state: &RobotState, world: &World, cfg: &SimConfig) -> Vec<Prim> {
    let geom: ArmGeometry = cfg.geometry();
    let mut prims = Vec::with_capacity(world.objects.len() + 2 * ARM_JOINTS + 1);
    let disc = |o: &super::Object| Prim::Disc {
        c: state.base.to_body(o.pos),
        r: o.radius,
        shade: o.kind.shade(),
    };
    prims.extend(world.objects.iter().filter(|o| o.kind.is_flat()).map(disc));
    prims.push(Prim::Disc {
        c: [0.0, 0.0],
        r: cfg.base_radius,
        shade: BASE_SHADE,
    });
    for side in Side::BOTH {
        let chain = geom.chain_body(&state.arm(side).joints, side);
        for w in chain.windows(2) {
            prims.push(Prim::Segment {
                a: w[0],
                b: w[1],
                shade: LINK_SHADE,
            });
        }
    }
    prims.extend(world.objects.iter().filter(|o| !o.kind.is_flat()).map(disc));
    prims
}

fn wrist_camera(state: &RobotState, side: Side, cfg: &SimConfig) -> Camera {
    let arm = state.arm(side);
    Camera {
        center: cfg.geometry().ee_body(&arm.joints, side),
        heading: arm.joints.iter().sum(),
        window: WRIST_WINDOW,
        size: WRIST_SIZE,
    }
}

/// Renders the top view and both wrist views.
pub fn render(state: &RobotState, world: &World, cfg: &SimConfig) -> Views {
    let prims = primitives(state, world, cfg);
    let top = Camera {
        center: [0.0, 0.0],
        heading: 0.0,
        window: TOP_WINDOW,
        size: TOP_SIZE,
    };
    Views {
        top: top.draw(&prims),
        left_wrist: wrist_camera(state, Side::Left, cfg).draw(&prims),
        right_wrist: wrist_camera(state, Side::Right, cfg).draw(&prims),
    }
}

/// The fixed front-facing camera of table-top scenes.
pub fn render_front(state: &RobotState, world: &World, cfg: &SimConfig) -> Raster {
    let cam = Camera {
        center: FRONT_CENTER,
        heading: 0.0,
        window: FRONT_WINDOW,
        size: FRONT_SIZE,
    };
    cam.draw(&primitives(state, world, cfg))
}
